#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stmixer/dataset.hpp"
#include "stmixer/encoder.hpp"
#include "stmixer/hloss.hpp"
#include "stmixer/stm.hpp"
#include "stmixer/tape.hpp"

namespace stmixer {

enum class MixerKind : int {
  stm = 0,
  concat = 1,
};

inline const char* to_string(MixerKind m) {
  return m == MixerKind::stm ? "stm" : "concat";
}

inline MixerKind mixer_from_string(const std::string& s) {
  if (s == "stm") return MixerKind::stm;
  if (s == "concat") return MixerKind::concat;
  throw std::invalid_argument("unknown mixer: " + s + " (expected stm or concat)");
}

struct ModelConfig {
  EncoderConfig encoder;
  MixerKind mixer = MixerKind::stm;
  bool share_pre_block = true;
  int stm_mlp_ratio = 4;
  HLossConfig loss;

  StmConfig stm_config() const {
    StmConfig c;
    c.embed_dim = encoder.embed_dim;
    c.mlp_ratio = stm_mlp_ratio;
    c.ln_eps = encoder.ln_eps;
    c.share_pre_block = share_pre_block;
    return c;
  }

  void validate() const {
    encoder.validate();
    stm_config().validate();
    loss.validate();
  }
};

template <class T>
struct HeadParams {
  ParamSlot<T> h1_w, h1_b, h2_w, h2_b;

  explicit HeadParams(int d)
      : h1_w("head.h1.w", Tensor<T>({d, 2})),
        h1_b("head.h1.b", Tensor<T>({2})),
        h2_w("head.h2.w", Tensor<T>({d, 3})),
        h2_b("head.h2.b", Tensor<T>({3})) {}

  void init(RngStream& rng) {
    fill_gaussian(h1_w.value, rng, 0.02);
    h1_b.value.zero();
    fill_gaussian(h2_w.value, rng, 0.02);
    h2_b.value.zero();
  }

  template <class F>
  void visit(F&& f) {
    f(h1_w); f(h1_b); f(h2_w); f(h2_b);
  }
};

template <class T>
struct ModelValues {
  EncoderValues<T> enc;
  std::optional<StmValues<T>> stm;
  std::optional<ConcatValues<T>> cat;
  typename Tape<T>::Value h1_w, h1_b, h2_w, h2_b;
};

template <class T>
struct HeadLogits {
  typename Tape<T>::Value h1;  // [1,2]
  typename Tape<T>::Value h2;  // [1,3]
};

// The full prediction model: siamese encoder, one mixer, two FC heads.
template <class T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg)
      : cfg_(cfg), enc_(cfg.encoder), heads_(cfg.encoder.embed_dim) {
    cfg_.validate();
    if (cfg_.mixer == MixerKind::stm) {
      stm_.emplace(cfg_.stm_config());
    } else {
      cat_.emplace(cfg_.encoder.embed_dim);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  EncoderParams<T>& encoder_params() { return enc_; }

  void init(uint64_t seed) {
    RngStream rng(seed, 0x1417ULL);
    enc_.init(rng);
    if (stm_) stm_->init(rng);
    if (cat_) cat_->init(rng);
    heads_.init(rng);
  }

  template <class F>
  void visit(F&& f) {
    enc_.visit(f);
    if (stm_) stm_->visit(f);
    if (cat_) cat_->visit(f);
    heads_.visit(f);
  }

  std::vector<ParamSlot<T>*> param_list() {
    std::vector<ParamSlot<T>*> out;
    visit([&](ParamSlot<T>& p) { out.push_back(&p); });
    return out;
  }

  size_t param_count() {
    size_t n = 0;
    visit([&](ParamSlot<T>& p) { n += p.value.numel(); });
    return n;
  }

  void reset_grads() {
    visit([](ParamSlot<T>& p) { p.reset_grad(); });
  }

  ModelValues<T> on(Tape<T>& t) {
    ModelValues<T> mv;
    mv.enc = enc_.on(t);
    if (stm_) mv.stm = stm_->on(t);
    if (cat_) mv.cat = concat_values(*cat_, t);
    mv.h1_w = t.param(heads_.h1_w);
    mv.h1_b = t.param(heads_.h1_b);
    mv.h2_w = t.param(heads_.h2_w);
    mv.h2_b = t.param(heads_.h2_b);
    return mv;
  }

  HeadLogits<T> forward(Tape<T>& t, const ModelValues<T>& mv, const LabeledCase& c) const {
    EmbeddingTriple<T> triple = encode_pair(t, cfg_.encoder, mv.enc, c.roi_t1,
                                            c.roi_t0 ? &*c.roi_t0 : nullptr);
    typename Tape<T>::Value mixed =
        mv.stm ? stm_mix(t, cfg_.stm_config(), *mv.stm, triple.f_l1, triple.f_g1, triple.f_l0)
               : concat_mix(t, *mv.cat, triple.f_l1, triple.f_g1, triple.f_l0);
    return {t.linear(mixed, mv.h1_w, mv.h1_b), t.linear(mixed, mv.h2_w, mv.h2_b)};
  }

  struct Inference {
    Tensor<T> h1_logits;
    Tensor<T> h2_logits;
  };

  // Forward-only convenience on a private tape.
  Inference infer(const LabeledCase& c) {
    Tape<T> t;
    ModelValues<T> mv = on(t);
    HeadLogits<T> out = forward(t, mv, c);
    return {t.value(out.h1), t.value(out.h2)};
  }

 private:
  ModelConfig cfg_;
  EncoderParams<T> enc_;
  std::optional<StmParams<T>> stm_;
  std::optional<ConcatParams<T>> cat_;
  HeadParams<T> heads_;
};

// Value-only copies of every parameter, in visit order.
template <class T>
std::vector<Tensor<T>> snapshot_params(Model<T>& m) {
  std::vector<Tensor<T>> out;
  m.visit([&](ParamSlot<T>& p) { out.push_back(p.value); });
  return out;
}

template <class T>
void restore_params(Model<T>& m, const std::vector<Tensor<T>>& snap) {
  size_t i = 0;
  m.visit([&](ParamSlot<T>& p) {
    if (i >= snap.size() || !snap[i].same_shape(p.value)) {
      throw std::invalid_argument("restore_params: snapshot does not match model layout");
    }
    p.value = snap[i++];
  });
  if (i != snap.size()) {
    throw std::invalid_argument("restore_params: snapshot has extra tensors");
  }
}

}  // namespace stmixer
