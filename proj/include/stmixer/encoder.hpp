#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stmixer/init.hpp"
#include "stmixer/tape.hpp"
#include "stmixer/tensor.hpp"
#include "stmixer/volume.hpp"

namespace stmixer {

struct EncoderConfig {
  int roi_size = 32;    // cubic ROI edge in voxels
  int patch_size = 8;   // cubic patch edge
  int embed_dim = 64;   // token width D
  int depth = 2;        // transformer blocks
  int heads = 1;
  int mlp_ratio = 4;    // hidden width of the block MLP, as a multiple of D
  double ln_eps = 1e-5;
  // Intensity window mapped linearly onto [-1,1]; values outside are clamped.
  double window_lo = 0.0;
  double window_hi = 1.0;

  void validate() const {
    if (roi_size <= 0 || patch_size <= 0 || roi_size % patch_size != 0) {
      throw std::invalid_argument("encoder config: roi_size " + std::to_string(roi_size) +
                                  " not divisible by patch_size " + std::to_string(patch_size));
    }
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
      throw std::invalid_argument("encoder config: embed_dim " + std::to_string(embed_dim) +
                                  " not divisible by heads " + std::to_string(heads));
    }
    if (depth < 0) throw std::invalid_argument("encoder config: negative depth");
    if (mlp_ratio < 1) throw std::invalid_argument("encoder config: mlp_ratio < 1");
    if (!(window_hi > window_lo)) {
      throw std::invalid_argument("encoder config: window_hi must exceed window_lo");
    }
    if (!(ln_eps > 0)) throw std::invalid_argument("encoder config: ln_eps must be positive");
  }

  int grid() const { return roi_size / patch_size; }
  int n_patches() const {
    const int g = grid();
    return g * g * g;
  }
  int patch_voxels() const { return patch_size * patch_size * patch_size; }
};

// Splits a volume into non-overlapping cubes, flattened row-major. Patch
// (pz,py,px) lands at row (pz*g + py)*g + px; within a patch the local x
// index varies fastest. Values are copied untouched.
template <class T>
Tensor<T> patchify(const Volume3D& v, int patch_size) {
  if (patch_size <= 0 || v.nz % patch_size != 0 || v.ny % patch_size != 0 ||
      v.nx % patch_size != 0) {
    throw std::invalid_argument("patchify: dims " + std::to_string(v.nz) + "x" +
                                std::to_string(v.ny) + "x" + std::to_string(v.nx) +
                                " not divisible by patch " + std::to_string(patch_size));
  }
  const int p = patch_size;
  const int gz = v.nz / p, gy = v.ny / p, gx = v.nx / p;
  Tensor<T> out({gz * gy * gx, p * p * p});
  for (int pz = 0; pz < gz; ++pz) {
    for (int py = 0; py < gy; ++py) {
      for (int px = 0; px < gx; ++px) {
        const int row = (pz * gy + py) * gx + px;
        int col = 0;
        for (int lz = 0; lz < p; ++lz) {
          for (int ly = 0; ly < p; ++ly) {
            for (int lx = 0; lx < p; ++lx) {
              out(row, col++) = static_cast<T>(v.at(pz * p + lz, py * p + ly, px * p + lx));
            }
          }
        }
      }
    }
  }
  return out;
}

template <class T>
struct AttentionParams {
  ParamSlot<T> wq, bq, wk, bk, wv, bv, wo, bo;

  AttentionParams(const std::string& prefix, int d)
      : wq(prefix + ".wq", Tensor<T>({d, d})),
        bq(prefix + ".bq", Tensor<T>({d})),
        wk(prefix + ".wk", Tensor<T>({d, d})),
        bk(prefix + ".bk", Tensor<T>({d})),
        wv(prefix + ".wv", Tensor<T>({d, d})),
        bv(prefix + ".bv", Tensor<T>({d})),
        wo(prefix + ".wo", Tensor<T>({d, d})),
        bo(prefix + ".bo", Tensor<T>({d})) {}

  void init(RngStream& rng) {
    fill_gaussian(wq.value, rng, 0.02);
    bq.value.zero();
    fill_gaussian(wk.value, rng, 0.02);
    bk.value.zero();
    fill_gaussian(wv.value, rng, 0.02);
    bv.value.zero();
    fill_gaussian(wo.value, rng, 0.02);
    bo.value.zero();
  }

  template <class F>
  void visit(F&& f) {
    f(wq); f(bq); f(wk); f(bk); f(wv); f(bv); f(wo); f(bo);
  }

  AttentionValues<T> on(Tape<T>& t) {
    return {t.param(wq), t.param(bq), t.param(wk), t.param(bk),
            t.param(wv), t.param(bv), t.param(wo), t.param(bo)};
  }
};

template <class T>
struct EncoderBlockParams {
  ParamSlot<T> ln1_gamma, ln1_beta;
  AttentionParams<T> attn;
  ParamSlot<T> ln2_gamma, ln2_beta;
  ParamSlot<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  EncoderBlockParams(const std::string& prefix, int d, int mlp_ratio)
      : ln1_gamma(prefix + ".ln1.gamma", Tensor<T>({d})),
        ln1_beta(prefix + ".ln1.beta", Tensor<T>({d})),
        attn(prefix + ".attn", d),
        ln2_gamma(prefix + ".ln2.gamma", Tensor<T>({d})),
        ln2_beta(prefix + ".ln2.beta", Tensor<T>({d})),
        mlp_w1(prefix + ".mlp.w1", Tensor<T>({d, d * mlp_ratio})),
        mlp_b1(prefix + ".mlp.b1", Tensor<T>({d * mlp_ratio})),
        mlp_w2(prefix + ".mlp.w2", Tensor<T>({d * mlp_ratio, d})),
        mlp_b2(prefix + ".mlp.b2", Tensor<T>({d})) {}

  void init(RngStream& rng) {
    ln1_gamma.value.fill(T(1));
    ln1_beta.value.zero();
    attn.init(rng);
    ln2_gamma.value.fill(T(1));
    ln2_beta.value.zero();
    fill_gaussian(mlp_w1.value, rng, 0.02);
    mlp_b1.value.zero();
    fill_gaussian(mlp_w2.value, rng, 0.02);
    mlp_b2.value.zero();
  }

  template <class F>
  void visit(F&& f) {
    f(ln1_gamma); f(ln1_beta);
    attn.visit(f);
    f(ln2_gamma); f(ln2_beta);
    f(mlp_w1); f(mlp_b1); f(mlp_w2); f(mlp_b2);
  }
};

template <class T>
struct EncoderBlockValues {
  typename Tape<T>::Value ln1_gamma, ln1_beta;
  AttentionValues<T> attn;
  typename Tape<T>::Value ln2_gamma, ln2_beta;
  typename Tape<T>::Value mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <class T>
struct EncoderValues {
  typename Tape<T>::Value patch_weight, patch_bias;
  typename Tape<T>::Value pos_embed;
  typename Tape<T>::Value global_token;
  typename Tape<T>::Value t0_placeholder;
  std::vector<EncoderBlockValues<T>> blocks;
};

template <class T>
struct EncoderParams {
  EncoderConfig cfg;
  ParamSlot<T> patch_weight;    // [patch_voxels, D]
  ParamSlot<T> patch_bias;      // [D]
  ParamSlot<T> pos_embed;       // [n_patches, D]; patch slots only, the global
                                // token carries its own learned value
  ParamSlot<T> global_token;    // [1, D]
  ParamSlot<T> t0_placeholder;  // [1, D]; stands in for F_L0 when T0 is absent
  std::vector<EncoderBlockParams<T>> blocks;

  explicit EncoderParams(const EncoderConfig& c)
      : cfg(c),
        patch_weight("enc.patch.w", Tensor<T>({c.patch_voxels(), c.embed_dim})),
        patch_bias("enc.patch.b", Tensor<T>({c.embed_dim})),
        pos_embed("enc.pos", Tensor<T>({c.n_patches(), c.embed_dim})),
        global_token("enc.global_token", Tensor<T>({1, c.embed_dim})),
        t0_placeholder("enc.t0_placeholder", Tensor<T>({1, c.embed_dim})) {
    cfg.validate();
    blocks.reserve(static_cast<size_t>(c.depth));
    for (int i = 0; i < c.depth; ++i) {
      blocks.emplace_back("enc.blk" + std::to_string(i), c.embed_dim, c.mlp_ratio);
    }
  }

  void init(RngStream& rng) {
    fill_gaussian(patch_weight.value, rng, 0.02);
    patch_bias.value.zero();
    fill_gaussian(pos_embed.value, rng, 0.02);
    fill_gaussian(global_token.value, rng, 0.02);
    fill_gaussian(t0_placeholder.value, rng, 0.02);
    for (auto& b : blocks) b.init(rng);
  }

  template <class F>
  void visit(F&& f) {
    f(patch_weight);
    f(patch_bias);
    f(pos_embed);
    f(global_token);
    f(t0_placeholder);
    for (auto& b : blocks) b.visit(f);
  }

  EncoderValues<T> on(Tape<T>& t) {
    EncoderValues<T> ev;
    ev.patch_weight = t.param(patch_weight);
    ev.patch_bias = t.param(patch_bias);
    ev.pos_embed = t.param(pos_embed);
    ev.global_token = t.param(global_token);
    ev.t0_placeholder = t.param(t0_placeholder);
    ev.blocks.reserve(blocks.size());
    for (auto& b : blocks) {
      ev.blocks.push_back({t.param(b.ln1_gamma), t.param(b.ln1_beta), b.attn.on(t),
                           t.param(b.ln2_gamma), t.param(b.ln2_beta), t.param(b.mlp_w1),
                           t.param(b.mlp_b1), t.param(b.mlp_w2), t.param(b.mlp_b2)});
    }
    return ev;
  }
};

// Patchified volume with intensities windowed onto [-1,1].
template <class T>
Tensor<T> normalized_patches(const EncoderConfig& cfg, const Volume3D& v) {
  if (v.nz != cfg.roi_size || v.ny != cfg.roi_size || v.nx != cfg.roi_size) {
    throw std::invalid_argument("encode: volume " + std::to_string(v.nz) + "x" +
                                std::to_string(v.ny) + "x" + std::to_string(v.nx) +
                                " does not match roi_size " + std::to_string(cfg.roi_size));
  }
  Tensor<T> patches = patchify<T>(v, cfg.patch_size);
  const T lo = T(cfg.window_lo), hi = T(cfg.window_hi);
  const T scale = T(2) / (hi - lo);
  for (T& x : patches.data) x = std::clamp(x, lo, hi) * scale - (lo * scale + T(1));
  return patches;
}

template <class T>
struct EncodeOut {
  typename Tape<T>::Value global;  // [1, D]
  typename Tape<T>::Value local;   // [1, D]
};

// Token sequence = [global token; patch embeddings + positional embeddings],
// passed through `depth` pre-norm blocks (x += attn(ln(x)); x += mlp(ln(x))).
// The global output is the first row; the local output is the mean of the
// patch rows. No final layer norm.
template <class T>
EncodeOut<T> encode(Tape<T>& t, const EncoderConfig& cfg, const EncoderValues<T>& ev,
                    const Volume3D& v) {
  using Value = typename Tape<T>::Value;
  Value x = t.input(normalized_patches<T>(cfg, v));
  Value tok = t.add(t.linear(x, ev.patch_weight, ev.patch_bias), ev.pos_embed);
  const std::array<Value, 2> parts{ev.global_token, tok};
  Value seq = t.concat_rows(std::span<const Value>(parts));
  const T eps = T(cfg.ln_eps);
  for (const auto& blk : ev.blocks) {
    Value a = self_attention(t, t.layer_norm(seq, blk.ln1_gamma, blk.ln1_beta, eps), blk.attn,
                             cfg.heads);
    seq = t.add(seq, a);
    Value m = mlp_block(t, t.layer_norm(seq, blk.ln2_gamma, blk.ln2_beta, eps), blk.mlp_w1,
                        blk.mlp_b1, blk.mlp_w2, blk.mlp_b2);
    seq = t.add(seq, m);
  }
  EncodeOut<T> out;
  out.global = t.slice_rows(seq, 0, 1);
  out.local = t.mean_rows(t.slice_rows(seq, 1, cfg.n_patches()));
  return out;
}

template <class T>
struct EmbeddingTriple {
  typename Tape<T>::Value f_g1;  // global, current scan
  typename Tape<T>::Value f_l1;  // local, current scan
  typename Tape<T>::Value f_l0;  // local, prior scan, or the learned placeholder
  bool t0_present = false;
};

// Runs the same encoder weights on both time points. Only the local vector is
// taken from the prior scan; global information comes from the current scan.
template <class T>
EmbeddingTriple<T> encode_pair(Tape<T>& t, const EncoderConfig& cfg, const EncoderValues<T>& ev,
                               const Volume3D& roi_t1, const Volume3D* roi_t0) {
  EmbeddingTriple<T> triple;
  EncodeOut<T> e1 = encode(t, cfg, ev, roi_t1);
  triple.f_g1 = e1.global;
  triple.f_l1 = e1.local;
  if (roi_t0 != nullptr) {
    triple.f_l0 = encode(t, cfg, ev, *roi_t0).local;
    triple.t0_present = true;
  } else {
    triple.f_l0 = ev.t0_placeholder;
    triple.t0_present = false;
  }
  return triple;
}

}  // namespace stmixer
