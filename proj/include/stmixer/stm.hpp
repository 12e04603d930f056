#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stmixer/init.hpp"
#include "stmixer/tape.hpp"
#include "stmixer/tensor.hpp"

namespace stmixer {

struct StmConfig {
  int embed_dim = 64;
  int mlp_ratio = 4;
  double ln_eps = 1e-5;
  // One pre-block applied to all three embeddings with shared weights; set
  // false to give each embedding (L1, G1, L0) its own pre-block parameters.
  bool share_pre_block = true;

  void validate() const {
    if (embed_dim <= 0) throw std::invalid_argument("stm config: embed_dim must be positive");
    if (mlp_ratio < 1) throw std::invalid_argument("stm config: mlp_ratio < 1");
    if (!(ln_eps > 0)) throw std::invalid_argument("stm config: ln_eps must be positive");
  }
};

template <class T>
struct PreBlockParams {
  ParamSlot<T> ln_gamma, ln_beta;
  ParamSlot<T> w1, b1, w2, b2;

  PreBlockParams(const std::string& prefix, int d, int mlp_ratio)
      : ln_gamma(prefix + ".ln.gamma", Tensor<T>({d})),
        ln_beta(prefix + ".ln.beta", Tensor<T>({d})),
        w1(prefix + ".mlp.w1", Tensor<T>({d, d * mlp_ratio})),
        b1(prefix + ".mlp.b1", Tensor<T>({d * mlp_ratio})),
        w2(prefix + ".mlp.w2", Tensor<T>({d * mlp_ratio, d})),
        b2(prefix + ".mlp.b2", Tensor<T>({d})) {}

  void init(RngStream& rng) {
    ln_gamma.value.fill(T(1));
    ln_beta.value.zero();
    fill_gaussian(w1.value, rng, 0.02);
    b1.value.zero();
    fill_gaussian(w2.value, rng, 0.02);
    b2.value.zero();
  }

  template <class F>
  void visit(F&& f) {
    f(ln_gamma); f(ln_beta); f(w1); f(b1); f(w2); f(b2);
  }
};

template <class T>
struct PreBlockValues {
  typename Tape<T>::Value ln_gamma, ln_beta, w1, b1, w2, b2;
};

template <class T>
struct StmValues {
  std::vector<PreBlockValues<T>> pre;  // 1 entry when shared, else 3 (L1, G1, L0)
  typename Tape<T>::Value w_query, w_key, lp_weight, lp_bias;

  const PreBlockValues<T>& pre_for(int embedding_index) const {
    return pre.size() == 1 ? pre[0] : pre.at(static_cast<size_t>(embedding_index));
  }
};

template <class T>
struct StmParams {
  StmConfig cfg;
  std::vector<PreBlockParams<T>> pre;
  ParamSlot<T> w_query;   // [D, D], no bias
  ParamSlot<T> w_key;     // [D, D], shared by both key paths
  ParamSlot<T> lp_weight; // [D, D]
  ParamSlot<T> lp_bias;   // [D], kept zero at init

  explicit StmParams(const StmConfig& c)
      : cfg(c),
        w_query("stm.wq", Tensor<T>({c.embed_dim, c.embed_dim})),
        w_key("stm.wk", Tensor<T>({c.embed_dim, c.embed_dim})),
        lp_weight("stm.lp.w", Tensor<T>({c.embed_dim, c.embed_dim})),
        lp_bias("stm.lp.b", Tensor<T>({c.embed_dim})) {
    cfg.validate();
    if (c.share_pre_block) {
      pre.emplace_back("stm.pre", c.embed_dim, c.mlp_ratio);
    } else {
      pre.emplace_back("stm.pre_l1", c.embed_dim, c.mlp_ratio);
      pre.emplace_back("stm.pre_g1", c.embed_dim, c.mlp_ratio);
      pre.emplace_back("stm.pre_l0", c.embed_dim, c.mlp_ratio);
    }
  }

  void init(RngStream& rng) {
    for (auto& p : pre) p.init(rng);
    fill_gaussian(w_query.value, rng, 0.02);
    fill_gaussian(w_key.value, rng, 0.02);
    fill_gaussian(lp_weight.value, rng, 0.02);
    lp_bias.value.zero();
  }

  template <class F>
  void visit(F&& f) {
    for (auto& p : pre) p.visit(f);
    f(w_query); f(w_key); f(lp_weight); f(lp_bias);
  }

  StmValues<T> on(Tape<T>& t) {
    StmValues<T> sv;
    for (auto& p : pre) {
      sv.pre.push_back({t.param(p.ln_gamma), t.param(p.ln_beta), t.param(p.w1), t.param(p.b1),
                        t.param(p.w2), t.param(p.b2)});
    }
    sv.w_query = t.param(w_query);
    sv.w_key = t.param(w_key);
    sv.lp_weight = t.param(lp_weight);
    sv.lp_bias = t.param(lp_bias);
    return sv;
  }
};

// F + mlp(ln(F)): the normalization/MLP/residual stage applied to each
// embedding before mixing.
template <class T>
typename Tape<T>::Value pre_block(Tape<T>& t, const PreBlockValues<T>& p,
                                  typename Tape<T>::Value f, T ln_eps) {
  return t.add(f, mlp_block(t, t.layer_norm(f, p.ln_gamma, p.ln_beta, ln_eps), p.w1, p.b1, p.w2,
                            p.b2));
}

// With F'_x = pre_block(F_x):
//   Q = F'_L1 Wq, K_G = F'_G1 Wk, K_L = F'_L0 Wk
//   out = F'_L1 + LP(cos(Q,K_G) * F'_G1 + cos(Q,K_L) * F'_L0)
template <class T>
typename Tape<T>::Value stm_mix(Tape<T>& t, const StmConfig& cfg, const StmValues<T>& sv,
                                typename Tape<T>::Value f_l1, typename Tape<T>::Value f_g1,
                                typename Tape<T>::Value f_l0) {
  using Value = typename Tape<T>::Value;
  const T eps = T(cfg.ln_eps);
  Value pl1 = pre_block(t, sv.pre_for(0), f_l1, eps);
  Value pg1 = pre_block(t, sv.pre_for(1), f_g1, eps);
  Value pl0 = pre_block(t, sv.pre_for(2), f_l0, eps);
  Value q = t.matmul(pl1, sv.w_query);
  Value s_g = t.cosine_sim(q, t.matmul(pg1, sv.w_key));
  Value s_t = t.cosine_sim(q, t.matmul(pl0, sv.w_key));
  Value mixed = t.add(t.scale_by(pg1, s_g), t.scale_by(pl0, s_t));
  return t.add(pl1, t.linear(mixed, sv.lp_weight, sv.lp_bias));
}

template <class T>
struct ConcatParams {
  ParamSlot<T> weight;  // [3D, D]
  ParamSlot<T> bias;    // [D]

  explicit ConcatParams(int d)
      : weight("cat.w", Tensor<T>({3 * d, d})), bias("cat.b", Tensor<T>({d})) {
    if (d <= 0) throw std::invalid_argument("concat mixer: embed_dim must be positive");
  }

  void init(RngStream& rng) {
    fill_gaussian(weight.value, rng, 0.02);
    bias.value.zero();
  }

  template <class F>
  void visit(F&& f) {
    f(weight);
    f(bias);
  }
};

template <class T>
struct ConcatValues {
  typename Tape<T>::Value weight, bias;
};

template <class T>
ConcatValues<T> concat_values(ConcatParams<T>& p, Tape<T>& t) {
  return {t.param(p.weight), t.param(p.bias)};
}

// Baseline mixer: one linear layer over [F_L1 ; F_G1 ; F_L0].
template <class T>
typename Tape<T>::Value concat_mix(Tape<T>& t, const ConcatValues<T>& cv,
                                   typename Tape<T>::Value f_l1, typename Tape<T>::Value f_g1,
                                   typename Tape<T>::Value f_l0) {
  using Value = typename Tape<T>::Value;
  const std::array<Value, 3> parts{f_l1, f_g1, f_l0};
  return t.linear(t.concat_cols(std::span<const Value>(parts)), cv.weight, cv.bias);
}

}  // namespace stmixer
