#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stmixer/labels.hpp"

namespace stmixer {

// Mann-Whitney AUC: the probability that a random positive outscores a random
// negative, with ties worth half. Computed through midranks.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("roc_auc: labels must be 0 or 1");
    n_pos += static_cast<size_t>(y);
  }
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("roc_auc: both classes required (got " + std::to_string(n_pos) +
                                " positives of " + std::to_string(n) + ")");
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  const double u = rank_sum_pos - np * (np + 1) / 2.0;
  return u / (np * nn);
}

// Unweighted mean of the three one-vs-rest AUCs, scoring each class by its
// own probability.
inline double macro_ovr_auc(const std::vector<std::array<double, 3>>& probs,
                            const std::vector<int>& labels) {
  if (probs.size() != labels.size()) {
    throw std::invalid_argument("macro_ovr_auc: size mismatch");
  }
  std::array<size_t, 3> counts{0, 0, 0};
  for (int y : labels) {
    if (y < 0 || y > 2) throw std::invalid_argument("macro_ovr_auc: label out of range");
    ++counts[static_cast<size_t>(y)];
  }
  std::string absent;
  for (int c = 0; c < 3; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) {
      if (!absent.empty()) absent += ", ";
      absent += to_string(static_cast<EvolutionLabel>(c));
    }
  }
  if (!absent.empty()) {
    throw std::invalid_argument("macro_ovr_auc: absent classes: " + absent);
  }
  double sum = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> s(probs.size());
    std::vector<int> y(labels.size());
    for (size_t k = 0; k < probs.size(); ++k) {
      s[k] = probs[k][static_cast<size_t>(c)];
      y[k] = labels[k] == c ? 1 : 0;
    }
    sum += roc_auc(s, y);
  }
  return sum / 3.0;
}

// One-vs-rest AUC of a single class of a 3-way head.
inline double ovr_auc(const std::vector<std::array<double, 3>>& probs,
                      const std::vector<int>& labels, int cls) {
  if (probs.size() != labels.size()) throw std::invalid_argument("ovr_auc: size mismatch");
  std::vector<double> s(probs.size());
  std::vector<int> y(labels.size());
  for (size_t k = 0; k < probs.size(); ++k) {
    s[k] = probs[k][static_cast<size_t>(cls)];
    y[k] = labels[k] == cls ? 1 : 0;
  }
  return roc_auc(s, y);
}

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw std::invalid_argument("accuracy: need equal nonempty lists, got " +
                                std::to_string(preds.size()) + " vs " +
                                std::to_string(labels.size()));
  }
  size_t hits = 0;
  for (size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// (p_o - p_e) / (1 - p_e) with expected agreement from the marginal products;
// p_e == 1 (both sides constant) returns 0 by convention.
inline double cohen_kappa(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size() || preds.size() < 2) {
    throw std::invalid_argument("cohen_kappa: need two equal lists of length >= 2");
  }
  const double n = static_cast<double>(preds.size());
  int max_cat = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || labels[i] < 0) {
      throw std::invalid_argument("cohen_kappa: negative category");
    }
    max_cat = std::max({max_cat, preds[i], labels[i]});
  }
  std::vector<double> cp(static_cast<size_t>(max_cat) + 1, 0.0);
  std::vector<double> cl(static_cast<size_t>(max_cat) + 1, 0.0);
  double hits = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    cp[static_cast<size_t>(preds[i])] += 1;
    cl[static_cast<size_t>(labels[i])] += 1;
    if (preds[i] == labels[i]) hits += 1;
  }
  const double p_o = hits / n;
  double p_e = 0;
  for (size_t c = 0; c < cp.size(); ++c) p_e += (cp[c] / n) * (cl[c] / n);
  if (p_e == 1.0) return 0.0;
  return (p_o - p_e) / (1.0 - p_e);
}

struct TextureReport {
  int count = 0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double kappa = std::numeric_limits<double>::quiet_NaN();
};

struct EvalReport {
  double auc_h1 = std::numeric_limits<double>::quiet_NaN();
  double auc_h2 = std::numeric_limits<double>::quiet_NaN();
  double auc_h2_d = std::numeric_limits<double>::quiet_NaN();
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double kappa = std::numeric_limits<double>::quiet_NaN();
  std::array<TextureReport, 3> per_texture;  // indexed by Texture code

  static std::string csv_header() { return "auc_h1,auc_h2,auc_h2_d,acc,kappa"; }

  std::string csv_row() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g", auc_h1, auc_h2, auc_h2_d,
                  accuracy, kappa);
    return buf;
  }

  std::string pretty() const {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line),
                  "auc_h1=%.4f auc_h2=%.4f auc_h2_d=%.4f acc=%.4f kappa=%.4f", auc_h1, auc_h2,
                  auc_h2_d, accuracy, kappa);
    os << line;
    for (int t = 0; t < 3; ++t) {
      const TextureReport& r = per_texture[static_cast<size_t>(t)];
      if (r.count == 0) continue;
      std::snprintf(line, sizeof(line), "\n  %-10s n=%-4d acc=%.4f kappa=%.4f",
                    to_string(static_cast<Texture>(t)), r.count, r.accuracy, r.kappa);
      os << line;
    }
    return os.str();
  }
};

// Assembles the full report from per-case outputs. `h1_scores` are dilatation
// probabilities, `h2_probs` the 3-way probabilities, `preds`/`labels`/
// `textures` integer codes.
inline EvalReport evaluate_predictions(const std::vector<double>& h1_scores,
                                       const std::vector<std::array<double, 3>>& h2_probs,
                                       const std::vector<int>& preds,
                                       const std::vector<int>& labels,
                                       const std::vector<int>& textures) {
  const size_t n = labels.size();
  if (h1_scores.size() != n || h2_probs.size() != n || preds.size() != n ||
      textures.size() != n || n == 0) {
    throw std::invalid_argument("evaluate_predictions: inconsistent input sizes");
  }
  std::vector<int> h1_labels(n);
  for (size_t i = 0; i < n; ++i) {
    h1_labels[i] = labels[i] == static_cast<int>(EvolutionLabel::dilatation) ? 1 : 0;
  }
  EvalReport rep;
  rep.auc_h1 = roc_auc(h1_scores, h1_labels);
  rep.auc_h2 = macro_ovr_auc(h2_probs, labels);
  rep.auc_h2_d = ovr_auc(h2_probs, labels, static_cast<int>(EvolutionLabel::dilatation));
  rep.accuracy = accuracy(preds, labels);
  rep.kappa = cohen_kappa(preds, labels);
  for (int t = 0; t < 3; ++t) {
    std::vector<int> p, y;
    for (size_t i = 0; i < n; ++i) {
      if (textures[i] == t) {
        p.push_back(preds[i]);
        y.push_back(labels[i]);
      }
    }
    TextureReport& r = rep.per_texture[static_cast<size_t>(t)];
    r.count = static_cast<int>(p.size());
    if (!p.empty()) r.accuracy = accuracy(p, y);
    if (p.size() >= 2) r.kappa = cohen_kappa(p, y);
  }
  return rep;
}

}  // namespace stmixer
