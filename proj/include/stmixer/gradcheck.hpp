#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stmixer/rng.hpp"
#include "stmixer/tape.hpp"
#include "stmixer/tensor.hpp"

namespace stmixer {

template <class T>
struct GradCheckOptions {
  T eps = T(1e-3);
  // 0 checks every coordinate; otherwise each tensor contributes at most this
  // many coordinates, drawn deterministically from `seed`.
  int samples_per_tensor = 0;
  uint64_t seed = 0x5eedULL;
};

template <class T>
struct GradCheckResult {
  T max_rel_err = 0;
  std::string worst_param;
  size_t worst_index = 0;
  T worst_analytic = 0;
  T worst_numeric = 0;
  size_t coords_checked = 0;
};

// Central-difference verification of reverse-mode gradients. `build` must
// construct the full forward graph on the given tape (reading parameter
// values through tape.param) and return the scalar loss node. It is invoked
// on a fresh tape for every probe, so it must be deterministic.
template <class T>
GradCheckResult<T> grad_check(const std::function<typename Tape<T>::Value(Tape<T>&)>& build,
                              std::span<ParamSlot<T>* const> params,
                              const GradCheckOptions<T>& opt = {}) {
  auto eval = [&]() -> T {
    Tape<T> tape;
    typename Tape<T>::Value loss = build(tape);
    return tape.value(loss)[0];
  };

  for (ParamSlot<T>* p : params) p->reset_grad();
  {
    Tape<T> tape;
    typename Tape<T>::Value loss = build(tape);
    tape.backward(loss);
  }

  GradCheckResult<T> res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ParamSlot<T>& slot = *params[pi];
    if (!slot.trainable) continue;
    const size_t n = slot.value.numel();
    std::vector<size_t> coords(n);
    std::iota(coords.begin(), coords.end(), size_t{0});
    if (opt.samples_per_tensor > 0 && static_cast<size_t>(opt.samples_per_tensor) < n) {
      RngStream rng(opt.seed, pi);
      rng.shuffle(coords);
      coords.resize(static_cast<size_t>(opt.samples_per_tensor));
    }
    for (size_t idx : coords) {
      const T saved = slot.value[idx];
      slot.value[idx] = saved + opt.eps;
      const T lp = eval();
      slot.value[idx] = saved - opt.eps;
      const T lm = eval();
      slot.value[idx] = saved;
      const T numeric = (lp - lm) / (2 * opt.eps);
      const T analytic = slot.grad[idx];
      const T denom = std::max(T(1e-6), std::abs(analytic) + std::abs(numeric));
      const T rel = std::abs(analytic - numeric) / denom;
      ++res.coords_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = slot.name;
        res.worst_index = idx;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace stmixer
