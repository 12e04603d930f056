#pragma once

#include "stmixer/rng.hpp"
#include "stmixer/tensor.hpp"

namespace stmixer {

template <class T>
void fill_gaussian(Tensor<T>& t, RngStream& rng, double stddev) {
  for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.gaussian() * stddev);
}

}  // namespace stmixer
