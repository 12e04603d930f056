#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stmixer/dataset.hpp"
#include "stmixer/errors.hpp"
#include "stmixer/hloss.hpp"
#include "stmixer/metrics.hpp"
#include "stmixer/model.hpp"
#include "stmixer/rng.hpp"

namespace stmixer {

struct TrainConfig {
  double base_lr = 5e-4;
  int batch_size = 16;
  int warmup_epochs = 5;
  int total_epochs = 60;
  double warmup_start = 1e-6;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double alpha = 1.0;  // H-loss H1 weight; overrides the model's loss config
  uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size < 1");
    if (warmup_epochs < 0 || total_epochs < 1 || warmup_epochs >= total_epochs) {
      throw std::invalid_argument("train config: need 0 <= warmup_epochs < total_epochs");
    }
    if (!(base_lr > 0) || !(warmup_start > 0)) {
      throw std::invalid_argument("train config: rates must be positive");
    }
    if (weight_decay < 0 || alpha < 0) {
      throw std::invalid_argument("train config: negative weight_decay or alpha");
    }
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || !(adam_eps > 0)) {
      throw std::invalid_argument("train config: bad Adam constants");
    }
  }
};

inline double peak_lr(const TrainConfig& cfg) {
  return cfg.base_lr * static_cast<double>(cfg.batch_size) / 64.0;
}

// Linear warmup from warmup_start to base_lr*B/64 over the warmup epochs,
// then cosine annealing to 0 at total_epochs. `t` is fractional epochs.
inline double lr_at(double t, const TrainConfig& cfg) {
  const double peak = peak_lr(cfg);
  const double w = static_cast<double>(cfg.warmup_epochs);
  const double total = static_cast<double>(cfg.total_epochs);
  t = std::clamp(t, 0.0, total);
  if (t < w) return cfg.warmup_start + (peak - cfg.warmup_start) * (t / w);
  const double pi = std::acos(-1.0);
  return peak * 0.5 * (1.0 + std::cos(pi * (t - w) / (total - w)));
}

template <class T>
struct OptState {
  std::vector<Tensor<T>> m, v;
  long step = 0;

  explicit OptState(std::span<ParamSlot<T>* const> params) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (ParamSlot<T>* p : params) {
      m.push_back(Tensor<T>::zeros(p->value.shape));
      v.push_back(Tensor<T>::zeros(p->value.shape));
    }
  }
};

// One AdamW update: decoupled decay p *= 1 - lr*wd, then the bias-corrected
// moment step. Reads ParamSlot.grad; does not clear it.
template <class T>
void adamw_step(std::span<ParamSlot<T>* const> params, OptState<T>& st, double lr,
                const TrainConfig& cfg) {
  if (params.size() != st.m.size()) {
    throw std::invalid_argument("adamw_step: optimizer state does not match parameter list");
  }
  st.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ParamSlot<T>& p = *params[pi];
    if (!p.trainable) continue;
    Tensor<T>& m = st.m[pi];
    Tensor<T>& v = st.v[pi];
    const T decay = static_cast<T>(1.0 - lr * cfg.weight_decay);
    for (size_t i = 0; i < p.value.numel(); ++i) {
      p.value[i] *= decay;
      const double g = static_cast<double>(p.grad[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
      p.value[i] -= static_cast<T>(update);
    }
  }
}

// Scores the given cases: H1 dilatation probability (or the H2-derived one
// when `h1_from_h2` is set, the documented fallback for alpha=0 runs where
// the H1 head is untrained), H2 probabilities, and rule-based predictions.
template <class T>
EvalReport evaluate(Model<T>& model, const Dataset& ds, std::span<const int> indices,
                    bool h1_from_h2 = false) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty case list");
  std::vector<double> h1_scores;
  std::vector<std::array<double, 3>> h2_probs;
  std::vector<int> preds, labels, textures;
  for (int idx : indices) {
    const LabeledCase& c = ds.cases.at(static_cast<size_t>(idx));
    typename Model<T>::Inference out = model.infer(c);
    const std::array<double, 3> p2 = h2_probabilities(out.h2_logits);
    h1_scores.push_back(h1_from_h2 ? p2[static_cast<size_t>(EvolutionLabel::dilatation)]
                                   : h1_score(out.h1_logits));
    h2_probs.push_back(p2);
    preds.push_back(static_cast<int>(predict(out.h1_logits, out.h2_logits)));
    labels.push_back(static_cast<int>(c.label));
    textures.push_back(static_cast<int>(c.texture));
  }
  return evaluate_predictions(h1_scores, h2_probs, preds, labels, textures);
}

struct EpochRecord {
  int epoch = 0;
  double loss = 0;  // mean training loss over the epoch's cases
  EvalReport val;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_auc_h1 = 0;
};

// Deterministic training loop: seeded shuffling, per-batch tapes, AdamW with
// the fractional-epoch schedule, validation after every epoch. The model is
// left holding the parameters of the best validation AUC@H1 epoch. Aborts
// with a diagnostic if the loss stops being finite.
template <class T>
TrainResult train(Model<T>& model, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  const std::vector<int> train_idx = ds.indices(Split::train);
  const std::vector<int> val_idx = ds.indices(Split::val);
  if (train_idx.empty()) throw std::invalid_argument("train: empty training split");
  if (val_idx.empty()) throw std::invalid_argument("train: empty validation split");

  HLossConfig loss_cfg = model.config().loss;
  loss_cfg.alpha = cfg.alpha;
  const bool h1_from_h2 = cfg.alpha == 0.0;

  std::vector<ParamSlot<T>*> params = model.param_list();
  OptState<T> opt(params);
  RngStream shuffle_rng(cfg.seed, 1);
  model.reset_grads();

  TrainResult res;
  std::vector<Tensor<T>> best_snapshot;
  std::vector<int> order = train_idx;
  const int n_train = static_cast<int>(train_idx.size());
  const int n_batches = (n_train + cfg.batch_size - 1) / cfg.batch_size;

  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    for (int b = 0; b < n_batches; ++b) {
      const int lo = b * cfg.batch_size;
      const int hi = std::min(lo + cfg.batch_size, n_train);
      Tape<T> tape;
      ModelValues<T> mv = model.on(tape);
      std::vector<typename Tape<T>::Value> case_losses;
      case_losses.reserve(static_cast<size_t>(hi - lo));
      for (int k = lo; k < hi; ++k) {
        const LabeledCase& c = ds.cases.at(static_cast<size_t>(order[static_cast<size_t>(k)]));
        HeadLogits<T> logits = model.forward(tape, mv, c);
        case_losses.push_back(hloss(tape, logits.h1, logits.h2, c.label, loss_cfg));
      }
      typename Tape<T>::Value batch_loss = tape.mean(case_losses);
      const double loss_val = static_cast<double>(tape.value(batch_loss)[0]);
      if (!std::isfinite(loss_val)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(b) + " (loss=" + std::to_string(loss_val) +
                           ")");
      }
      loss_sum += loss_val * (hi - lo);
      tape.backward(batch_loss);
      const double t = epoch + static_cast<double>(b) / n_batches;
      adamw_step<T>(params, opt, lr_at(t, cfg), cfg);
      model.reset_grads();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / n_train;
    rec.val = evaluate(model, ds, val_idx, h1_from_h2);
    res.history.push_back(rec);
    if (res.best_epoch < 0 || rec.val.auc_h1 > res.best_auc_h1) {
      res.best_epoch = epoch;
      res.best_auc_h1 = rec.val.auc_h1;
      best_snapshot = snapshot_params(model);
    }
  }
  if (!best_snapshot.empty()) restore_params(model, best_snapshot);
  return res;
}

// Epoch-by-epoch metrics table.
inline void write_metrics_csv(const std::string& path, const TrainResult& result) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write metrics CSV: " + path);
  os << "epoch,loss,auc_h1,auc_h2,auc_h2_d,acc,kappa\n";
  for (const EpochRecord& r : result.history) {
    char buf[224];
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.loss,
                  r.val.auc_h1, r.val.auc_h2, r.val.auc_h2_d, r.val.accuracy, r.val.kappa);
    os << buf;
  }
  if (!os) throw DataError("failed writing metrics CSV: " + path);
}

namespace detail {

constexpr char kCheckpointMagic[8] = {'S', 'T', 'M', 'X', 'C', 'K', 'P', '1'};

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace detail

// Layout: magic, format version, a config-echo JSON string, then one named
// little-endian float32 blob per parameter in model visit order.
template <class T>
void save_checkpoint(const std::string& path, Model<T>& model, const std::string& config_echo) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  os.write(detail::kCheckpointMagic, 8);
  detail::write_u32(os, 1);
  detail::write_u32(os, static_cast<uint32_t>(config_echo.size()));
  os.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
  uint32_t count = 0;
  model.visit([&](ParamSlot<T>&) { ++count; });
  detail::write_u32(os, count);
  model.visit([&](ParamSlot<T>& p) {
    detail::write_u32(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_u32(os, static_cast<uint32_t>(p.value.rank()));
    for (int d : p.value.shape) detail::write_u32(os, static_cast<uint32_t>(d));
    for (size_t i = 0; i < p.value.numel(); ++i) {
      const float f = static_cast<float>(p.value[i]);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  });
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

namespace detail {

// Validates the header and positions the stream after the config echo.
inline std::string read_checkpoint_header(std::istream& is, const std::string& path) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  const uint32_t version = read_u32(is);
  if (version != 1) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  const uint32_t echo_len = read_u32(is);
  std::string echo(echo_len, '\0');
  is.read(echo.data(), echo_len);
  if (!is) throw DataError("truncated checkpoint: " + path);
  return echo;
}

}  // namespace detail

// Reads only the stored config echo, without needing a model of matching shape.
inline std::string read_checkpoint_echo(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  return detail::read_checkpoint_header(is, path);
}

// Returns the stored config echo. The parameter inventory must match the
// model exactly (names, order, shapes).
template <class T>
std::string load_checkpoint(const std::string& path, Model<T>& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  const std::string echo = detail::read_checkpoint_header(is, path);
  const uint32_t count = detail::read_u32(is);
  uint32_t expected = 0;
  model.visit([&](ParamSlot<T>&) { ++expected; });
  if (count != expected) {
    throw DataError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(expected) + ": " + path);
  }
  model.visit([&](ParamSlot<T>& p) {
    const uint32_t name_len = detail::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (name != p.name) {
      throw DataError("checkpoint tensor '" + name + "' where '" + p.name + "' expected: " +
                      path);
    }
    const uint32_t rank = detail::read_u32(is);
    std::vector<int> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(detail::read_u32(is));
    if (shape != p.value.shape) {
      throw DataError("checkpoint tensor '" + name + "' has mismatched shape: " + path);
    }
    for (size_t i = 0; i < p.value.numel(); ++i) {
      float f;
      is.read(reinterpret_cast<char*>(&f), 4);
      p.value[i] = static_cast<T>(f);
    }
    if (!is) throw DataError("truncated checkpoint: " + path);
  });
  return echo;
}

}  // namespace stmixer
