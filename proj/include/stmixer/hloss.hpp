#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "stmixer/labels.hpp"
#include "stmixer/tape.hpp"
#include "stmixer/tensor.hpp"

namespace stmixer {

struct HLossConfig {
  double alpha = 1.0;  // weight of the H1 term; 0 degenerates to plain 3-class WCE
  // Per-class weights indexed by EvolutionLabel code: stability is
  // downweighted to 0.1, dilatation and shrinkage keep 1.0.
  std::array<double, 3> h2_weights{0.1, 1.0, 1.0};
  std::array<double, 2> h1_weights{1.0, 1.0};

  void validate() const {
    if (alpha < 0) throw std::invalid_argument("hloss config: alpha must be non-negative");
    for (double w : h2_weights) {
      if (!(w > 0)) throw std::invalid_argument("hloss config: h2 weights must be positive");
    }
    for (double w : h1_weights) {
      if (!(w > 0)) throw std::invalid_argument("hloss config: h1 weights must be positive");
    }
  }
};

// Binary target of the first head: dilatation vs everything else.
inline int h1_target(EvolutionLabel y) { return y == EvolutionLabel::dilatation ? 1 : 0; }

// alpha * wce(h1 logits, dilatation-or-not) + wce(h2 logits, class).
template <class T>
typename Tape<T>::Value hloss(Tape<T>& t, typename Tape<T>::Value h1_logits,
                              typename Tape<T>::Value h2_logits, EvolutionLabel y,
                              const HLossConfig& cfg) {
  if (t.value(h1_logits).numel() != 2) {
    throw std::invalid_argument("hloss: h1 logits must have 2 entries, got " +
                                t.value(h1_logits).shape_str());
  }
  if (t.value(h2_logits).numel() != 3) {
    throw std::invalid_argument("hloss: h2 logits must have 3 entries, got " +
                                t.value(h2_logits).shape_str());
  }
  typename Tape<T>::Value l1 = t.wce(h1_logits, h1_target(y), cfg.h1_weights);
  typename Tape<T>::Value l2 = t.wce(h2_logits, static_cast<int>(y), cfg.h2_weights);
  return t.add(t.scale(l1, T(cfg.alpha)), l2);
}

template <class T>
std::vector<double> softmax_probs(const Tensor<T>& logits) {
  const size_t k = logits.numel();
  double mx = static_cast<double>(logits[0]);
  for (size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  std::vector<double> p(k);
  double sum = 0;
  for (size_t j = 0; j < k; ++j) {
    p[j] = std::exp(static_cast<double>(logits[j]) - mx);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

// Decision rule: H1 gates dilatation; otherwise H2 picks between stability
// and shrinkage with the dilatation logit masked out. Exact ties go to the
// lower class code.
template <class T>
EvolutionLabel predict(const Tensor<T>& h1_logits, const Tensor<T>& h2_logits) {
  if (h1_logits.numel() != 2 || h2_logits.numel() != 3) {
    throw std::invalid_argument("predict: expected 2 + 3 logits, got " + h1_logits.shape_str() +
                                " and " + h2_logits.shape_str());
  }
  if (h1_logits[1] > h1_logits[0]) return EvolutionLabel::dilatation;
  return h2_logits[2] > h2_logits[0] ? EvolutionLabel::shrinkage : EvolutionLabel::stability;
}

// Probability of dilatation from the H1 head.
template <class T>
double h1_score(const Tensor<T>& h1_logits) {
  if (h1_logits.numel() != 2) {
    throw std::invalid_argument("h1_score: expected 2 logits, got " + h1_logits.shape_str());
  }
  return softmax_probs(h1_logits)[1];
}

template <class T>
std::array<double, 3> h2_probabilities(const Tensor<T>& h2_logits) {
  if (h2_logits.numel() != 3) {
    throw std::invalid_argument("h2_probabilities: expected 3 logits, got " +
                                h2_logits.shape_str());
  }
  const std::vector<double> p = softmax_probs(h2_logits);
  return {p[0], p[1], p[2]};
}

}  // namespace stmixer
