#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stmixer/tensor.hpp"

namespace stmixer {

namespace detail {

// out[m,n] += a[m,k] * b[k,n]
template <class T>
void matmul_accum(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  const T* pa = a.data.data();
  const T* pb = b.data.data();
  T* po = out.data.data();
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const T ail = pa[i * k + l];
      const T* brow = pb + static_cast<size_t>(l) * n;
      T* orow = po + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += ail * brow[j];
    }
  }
}

// out[m,n] += a[m,k] * b[n,k]^T
template <class T>
void matmul_nt_accum(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  const int m = a.rows(), k = a.cols(), n = b.rows();
  for (int i = 0; i < m; ++i) {
    const T* arow = a.data.data() + static_cast<size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const T* brow = b.data.data() + static_cast<size_t>(j) * k;
      T acc = 0;
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      out.data[static_cast<size_t>(i) * n + j] += acc;
    }
  }
}

// out[k,n] += a[m,k]^T * b[m,n]
template <class T>
void matmul_tn_accum(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i) {
    const T* arow = a.data.data() + static_cast<size_t>(i) * k;
    const T* brow = b.data.data() + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const T ail = arow[l];
      T* orow = out.data.data() + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) orow[j] += ail * brow[j];
    }
  }
}

// GELU, tanh approximation (the ViT convention). Constants are the usual
// sqrt(2/pi) and cubic coefficient 0.044715.
template <class T>
inline T gelu_scalar(T x) {
  const T c0 = T(0.7978845608028654);  // sqrt(2/pi)
  const T c1 = T(0.044715);
  const T u = c0 * (x + c1 * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
inline T gelu_grad_scalar(T x) {
  const T c0 = T(0.7978845608028654);
  const T c1 = T(0.044715);
  const T u = c0 * (x + c1 * x * x * x);
  const T t = std::tanh(u);
  const T du = c0 * (T(1) + T(3) * c1 * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

}  // namespace detail

// Reverse-mode tape. Each primitive op appends one node holding its output
// value, a gradient buffer, and a pullback closure. backward() clears the
// node gradients, seeds the loss with 1, and replays the nodes in exact
// reverse execution order; gradients of parameter leaves are accumulated
// into their ParamSlot (never cleared here, so two backward passes double
// them and an explicit reset is required between steps).
//
// The tape is append-only and non-copyable; pullbacks capture `this`.
template <class T>
class Tape {
 public:
  struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Tensor<T>& value(Value v) const { return node(v).val; }
  const Tensor<T>& grad(Value v) const { return node(v).grad; }
  size_t size() const { return nodes_.size(); }

  // ---- leaves ----

  Value input(Tensor<T> t) { return push(std::move(t)); }

  Value param(ParamSlot<T>& slot) {
    Value v = push(slot.value);  // copies the current value
    Node& n = node(v);
    n.slot = &slot;
    n.back = [this, v]() {
      Node& me = node(v);
      if (!me.slot->trainable) return;
      Tensor<T>& g = me.slot->grad;
      for (size_t i = 0; i < g.numel(); ++i) g[i] += me.grad[i];
    };
    return v;
  }

  // ---- primitives ----

  // out[i,j] = sum_k x[i,k] W[k,j] + b[j]; b is rank-1 [d_out].
  Value linear(Value xv, Value wv, Value bv) {
    const Tensor<T>& x = value(xv);
    const Tensor<T>& w = value(wv);
    const Tensor<T>& b = value(bv);
    if (x.cols() != w.rows() || w.rank() != 2) {
      throw std::invalid_argument("linear: x" + x.shape_str() + " incompatible with W" +
                                  w.shape_str());
    }
    if (b.rank() != 1 || b.cols() != w.cols()) {
      throw std::invalid_argument("linear: bias " + b.shape_str() + " incompatible with W" +
                                  w.shape_str());
    }
    Tensor<T> out({x.rows(), w.cols()});
    for (int i = 0; i < x.rows(); ++i) {
      for (int j = 0; j < w.cols(); ++j) out(i, j) = b[static_cast<size_t>(j)];
    }
    detail::matmul_accum(x, w, out);
    Value v = push(std::move(out));
    node(v).back = [this, v, xv, wv, bv]() {
      const Tensor<T>& go = node(v).grad;
      detail::matmul_nt_accum(go, value(wv), node(xv).grad);    // dX += dY W^T
      detail::matmul_tn_accum(value(xv), go, node(wv).grad);    // dW += X^T dY
      Tensor<T>& db = node(bv).grad;
      for (int i = 0; i < go.rows(); ++i) {
        for (int j = 0; j < go.cols(); ++j) db[static_cast<size_t>(j)] += go(i, j);
      }
    };
    return v;
  }

  Value matmul(Value av, Value bv) {
    const Tensor<T>& a = value(av);
    const Tensor<T>& b = value(bv);
    if (a.cols() != b.rows()) {
      throw std::invalid_argument("matmul: " + a.shape_str() + " x " + b.shape_str());
    }
    Tensor<T> out({a.rows(), b.cols()});
    detail::matmul_accum(a, b, out);
    Value v = push(std::move(out));
    node(v).back = [this, v, av, bv]() {
      const Tensor<T>& go = node(v).grad;
      detail::matmul_nt_accum(go, value(bv), node(av).grad);
      detail::matmul_tn_accum(value(av), go, node(bv).grad);
    };
    return v;
  }

  // out = a * b^T; used for attention scores.
  Value matmul_nt(Value av, Value bv) {
    const Tensor<T>& a = value(av);
    const Tensor<T>& b = value(bv);
    if (a.cols() != b.cols()) {
      throw std::invalid_argument("matmul_nt: " + a.shape_str() + " x " + b.shape_str() + "^T");
    }
    Tensor<T> out({a.rows(), b.rows()});
    detail::matmul_nt_accum(a, b, out);
    Value v = push(std::move(out));
    node(v).back = [this, v, av, bv]() {
      const Tensor<T>& go = node(v).grad;       // [m,n]
      detail::matmul_accum(go, value(bv), node(av).grad);      // dA += dY B
      detail::matmul_tn_accum(go, value(av), node(bv).grad);   // dB += dY^T A
    };
    return v;
  }

  Value add(Value av, Value bv) {
    const Tensor<T>& a = value(av);
    const Tensor<T>& b = value(bv);
    if (!a.same_shape(b)) {
      throw std::invalid_argument("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor<T> out = a;
    for (size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    Value v = push(std::move(out));
    node(v).back = [this, v, av, bv]() {
      const Tensor<T>& go = node(v).grad;
      Tensor<T>& ga = node(av).grad;
      Tensor<T>& gb = node(bv).grad;
      for (size_t i = 0; i < go.numel(); ++i) {
        ga[i] += go[i];
        gb[i] += go[i];
      }
    };
    return v;
  }

  Value scale(Value xv, T c) {
    Tensor<T> out = value(xv);
    for (T& v : out.data) v *= c;
    Value v = push(std::move(out));
    node(v).back = [this, v, xv, c]() {
      const Tensor<T>& go = node(v).grad;
      Tensor<T>& gx = node(xv).grad;
      for (size_t i = 0; i < go.numel(); ++i) gx[i] += c * go[i];
    };
    return v;
  }

  // y = s * x with s a scalar node ([1,1] or single element).
  Value scale_by(Value xv, Value sv) {
    const Tensor<T>& x = value(xv);
    const Tensor<T>& s = value(sv);
    if (s.numel() != 1) {
      throw std::invalid_argument("scale_by: scalar expected, got " + s.shape_str());
    }
    Tensor<T> out = x;
    const T sc = s[0];
    for (T& v : out.data) v *= sc;
    Value v = push(std::move(out));
    node(v).back = [this, v, xv, sv]() {
      const Tensor<T>& go = node(v).grad;
      const Tensor<T>& x2 = value(xv);
      const T sc2 = value(sv)[0];
      Tensor<T>& gx = node(xv).grad;
      T ds = 0;
      for (size_t i = 0; i < go.numel(); ++i) {
        gx[i] += sc2 * go[i];
        ds += go[i] * x2[i];
      }
      node(sv).grad[0] += ds;
    };
    return v;
  }

  // Per-row layer norm with biased variance: (x - mean) / sqrt(var + eps) * gamma + beta.
  Value layer_norm(Value xv, Value gammav, Value betav, T eps) {
    const Tensor<T>& x = value(xv);
    const Tensor<T>& gamma = value(gammav);
    const Tensor<T>& beta = value(betav);
    const int n = x.rows(), d = x.cols();
    if (gamma.numel() != static_cast<size_t>(d) || beta.numel() != static_cast<size_t>(d)) {
      throw std::invalid_argument("layer_norm: gamma/beta " + gamma.shape_str() +
                                  " do not match x " + x.shape_str());
    }
    Tensor<T> out({n, d});
    std::vector<T> xhat(static_cast<size_t>(n) * d);
    std::vector<T> inv_std(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      T mean = 0;
      for (int j = 0; j < d; ++j) mean += x(i, j);
      mean /= T(d);
      T var = 0;
      for (int j = 0; j < d; ++j) {
        const T c = x(i, j) - mean;
        var += c * c;
      }
      var /= T(d);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[static_cast<size_t>(i)] = is;
      for (int j = 0; j < d; ++j) {
        const T xh = (x(i, j) - mean) * is;
        xhat[static_cast<size_t>(i) * d + j] = xh;
        out(i, j) = xh * gamma[static_cast<size_t>(j)] + beta[static_cast<size_t>(j)];
      }
    }
    Value v = push(std::move(out));
    node(v).back = [this, v, xv, gammav, betav, xhat = std::move(xhat),
                    inv_std = std::move(inv_std), n, d]() {
      const Tensor<T>& go = node(v).grad;
      const Tensor<T>& gamma = value(gammav);
      Tensor<T>& gx = node(xv).grad;
      Tensor<T>& gg = node(gammav).grad;
      Tensor<T>& gb = node(betav).grad;
      for (int i = 0; i < n; ++i) {
        const T* xh = xhat.data() + static_cast<size_t>(i) * d;
        T mean_g = 0, mean_gx = 0;
        for (int j = 0; j < d; ++j) {
          const T g = go(i, j) * gamma[static_cast<size_t>(j)];
          mean_g += g;
          mean_gx += g * xh[j];
          gg[static_cast<size_t>(j)] += go(i, j) * xh[j];
          gb[static_cast<size_t>(j)] += go(i, j);
        }
        mean_g /= T(d);
        mean_gx /= T(d);
        const T is = inv_std[static_cast<size_t>(i)];
        for (int j = 0; j < d; ++j) {
          const T g = go(i, j) * gamma[static_cast<size_t>(j)];
          gx(i, j) += is * (g - mean_g - xh[j] * mean_gx);
        }
      }
    };
    return v;
  }

  Value gelu(Value xv) {
    Tensor<T> out = value(xv);
    for (T& v : out.data) v = detail::gelu_scalar(v);
    Value v = push(std::move(out));
    node(v).back = [this, v, xv]() {
      const Tensor<T>& go = node(v).grad;
      const Tensor<T>& x = value(xv);
      Tensor<T>& gx = node(xv).grad;
      for (size_t i = 0; i < go.numel(); ++i) gx[i] += go[i] * detail::gelu_grad_scalar(x[i]);
    };
    return v;
  }

  // Row-wise stable softmax.
  Value softmax(Value zv) {
    const Tensor<T>& z = value(zv);
    const int n = z.rows(), k = z.cols();
    Tensor<T> out({n, k});
    for (int i = 0; i < n; ++i) {
      T mx = z(i, 0);
      for (int j = 1; j < k; ++j) mx = std::max(mx, z(i, j));
      T sum = 0;
      for (int j = 0; j < k; ++j) {
        const T e = std::exp(z(i, j) - mx);
        out(i, j) = e;
        sum += e;
      }
      for (int j = 0; j < k; ++j) out(i, j) /= sum;
    }
    Value v = push(std::move(out));
    node(v).back = [this, v, zv, n, k]() {
      const Tensor<T>& go = node(v).grad;
      const Tensor<T>& y = value(v);
      Tensor<T>& gz = node(zv).grad;
      for (int i = 0; i < n; ++i) {
        T dot = 0;
        for (int j = 0; j < k; ++j) dot += go(i, j) * y(i, j);
        for (int j = 0; j < k; ++j) gz(i, j) += y(i, j) * (go(i, j) - dot);
      }
    };
    return v;
  }

  // Cosine similarity of two row vectors, with an epsilon guard on each norm
  // so that zero vectors yield 0 instead of a division failure.
  Value cosine_sim(Value av, Value bv, T eps = T(1e-8)) {
    const Tensor<T>& a = value(av);
    const Tensor<T>& b = value(bv);
    if (a.numel() != b.numel()) {
      throw std::invalid_argument("cosine_sim: " + a.shape_str() + " vs " + b.shape_str());
    }
    const size_t d = a.numel();
    T dot = 0, na2 = 0, nb2 = 0;
    for (size_t i = 0; i < d; ++i) {
      dot += a[i] * b[i];
      na2 += a[i] * a[i];
      nb2 += b[i] * b[i];
    }
    const T na = std::max(std::sqrt(na2), eps);
    const T nb = std::max(std::sqrt(nb2), eps);
    const T sim = dot / (na * nb);
    Value v = push(Tensor<T>({1, 1}, {sim}));
    node(v).back = [this, v, av, bv, na, nb, sim, eps, d]() {
      const T go = node(v).grad[0];
      const Tensor<T>& a2 = value(av);
      const Tensor<T>& b2 = value(bv);
      Tensor<T>& ga = node(av).grad;
      Tensor<T>& gb = node(bv).grad;
      // d sim / da = b/(na nb) - sim a/na^2 when the norm is live; the norm
      // term drops out on the clamped (eps) branch.
      const T inv = T(1) / (na * nb);
      const T ca = (na > eps) ? sim / (na * na) : T(0);
      const T cb = (nb > eps) ? sim / (nb * nb) : T(0);
      for (size_t i = 0; i < d; ++i) {
        ga[i] += go * (b2[i] * inv - ca * a2[i]);
        gb[i] += go * (a2[i] * inv - cb * b2[i]);
      }
    };
    return v;
  }

  Value slice_rows(Value xv, int r0, int nrows) {
    const Tensor<T>& x = value(xv);
    const int n = x.rows(), d = x.cols();
    if (r0 < 0 || nrows <= 0 || r0 + nrows > n) {
      throw std::invalid_argument("slice_rows: [" + std::to_string(r0) + "," +
                                  std::to_string(r0 + nrows) + ") out of " + x.shape_str());
    }
    Tensor<T> out({nrows, d});
    std::copy_n(x.data.begin() + static_cast<size_t>(r0) * d, static_cast<size_t>(nrows) * d,
                out.data.begin());
    Value v = push(std::move(out));
    node(v).back = [this, v, xv, r0, nrows, d]() {
      const Tensor<T>& go = node(v).grad;
      Tensor<T>& gx = node(xv).grad;
      for (size_t i = 0; i < static_cast<size_t>(nrows) * d; ++i) {
        gx[static_cast<size_t>(r0) * d + i] += go[i];
      }
    };
    return v;
  }

  Value slice_cols(Value xv, int c0, int ncols) {
    const Tensor<T>& x = value(xv);
    const int n = x.rows(), d = x.cols();
    if (c0 < 0 || ncols <= 0 || c0 + ncols > d) {
      throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," +
                                  std::to_string(c0 + ncols) + ") out of " + x.shape_str());
    }
    Tensor<T> out({n, ncols});
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < ncols; ++j) out(i, j) = x(i, c0 + j);
    }
    Value v = push(std::move(out));
    node(v).back = [this, v, xv, c0, ncols, n]() {
      const Tensor<T>& go = node(v).grad;
      Tensor<T>& gx = node(xv).grad;
      const int d = gx.cols();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < ncols; ++j) gx.data[static_cast<size_t>(i) * d + c0 + j] += go(i, j);
      }
    };
    return v;
  }

  Value concat_rows(std::span<const Value> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const int d = value(parts[0]).cols();
    int total = 0;
    for (Value p : parts) {
      if (value(p).cols() != d) {
        throw std::invalid_argument("concat_rows: column mismatch " + value(p).shape_str());
      }
      total += value(p).rows();
    }
    Tensor<T> out({total, d});
    size_t off = 0;
    for (Value p : parts) {
      const Tensor<T>& t = value(p);
      std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
      off += t.numel();
    }
    Value v = push(std::move(out));
    std::vector<Value> ps(parts.begin(), parts.end());
    node(v).back = [this, v, ps = std::move(ps)]() {
      const Tensor<T>& go = node(v).grad;
      size_t off2 = 0;
      for (Value p : ps) {
        Tensor<T>& gp = node(p).grad;
        for (size_t i = 0; i < gp.numel(); ++i) gp[i] += go[off2 + i];
        off2 += gp.numel();
      }
    };
    return v;
  }

  Value concat_cols(std::span<const Value> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int n = value(parts[0]).rows();
    int total = 0;
    for (Value p : parts) {
      if (value(p).rows() != n) {
        throw std::invalid_argument("concat_cols: row mismatch " + value(p).shape_str());
      }
      total += value(p).cols();
    }
    Tensor<T> out({n, total});
    int c0 = 0;
    for (Value p : parts) {
      const Tensor<T>& t = value(p);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < t.cols(); ++j) out(i, c0 + j) = t(i, j);
      }
      c0 += t.cols();
    }
    Value v = push(std::move(out));
    std::vector<Value> ps(parts.begin(), parts.end());
    node(v).back = [this, v, ps = std::move(ps), n]() {
      const Tensor<T>& go = node(v).grad;
      int c0b = 0;
      for (Value p : ps) {
        Tensor<T>& gp = node(p).grad;
        const int pc = gp.cols();
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < pc; ++j) gp(i, j) += go(i, c0b + j);
        }
        c0b += pc;
      }
    };
    return v;
  }

  // Mean over rows: [n,d] -> [1,d].
  Value mean_rows(Value xv) {
    const Tensor<T>& x = value(xv);
    const int n = x.rows(), d = x.cols();
    Tensor<T> out({1, d});
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) out(0, j) += x(i, j);
    }
    for (int j = 0; j < d; ++j) out(0, j) /= T(n);
    Value v = push(std::move(out));
    node(v).back = [this, v, xv, n, d]() {
      const Tensor<T>& go = node(v).grad;
      Tensor<T>& gx = node(xv).grad;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) gx(i, j) += go(0, j) / T(n);
      }
    };
    return v;
  }

  // Weighted cross-entropy of a single row of logits against class y,
  // computed through log-sum-exp: -w[y] * log softmax(z)[y].
  Value wce(Value logitsv, int y, std::span<const double> weights) {
    const Tensor<T>& z = value(logitsv);
    const int k = static_cast<int>(z.numel());
    if (z.rows() != 1) throw std::invalid_argument("wce: expected a logit row, got " + z.shape_str());
    if (y < 0 || y >= k) {
      throw std::invalid_argument("wce: class " + std::to_string(y) + " out of range for " +
                                  std::to_string(k) + " logits");
    }
    if (static_cast<int>(weights.size()) != k) {
      throw std::invalid_argument("wce: weight count mismatch");
    }
    T mx = z[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, z[static_cast<size_t>(j)]);
    T sum = 0;
    for (int j = 0; j < k; ++j) sum += std::exp(z[static_cast<size_t>(j)] - mx);
    const T lse = mx + std::log(sum);
    const T w = T(weights[static_cast<size_t>(y)]);
    const T loss = w * (lse - z[static_cast<size_t>(y)]);
    Value v = push(Tensor<T>({1, 1}, {loss}));
    node(v).back = [this, v, logitsv, y, w, mx, sum, k]() {
      const T go = node(v).grad[0];
      const Tensor<T>& z2 = value(logitsv);
      Tensor<T>& gz = node(logitsv).grad;
      for (int j = 0; j < k; ++j) {
        const T p = std::exp(z2[static_cast<size_t>(j)] - mx) / sum;
        gz[static_cast<size_t>(j)] += go * w * (p - (j == y ? T(1) : T(0)));
      }
    };
    return v;
  }

  // Mean of scalar nodes; used for batch loss reduction.
  Value mean(std::span<const Value> scalars) {
    if (scalars.empty()) throw std::invalid_argument("mean: no inputs");
    T acc = 0;
    for (Value s : scalars) {
      if (value(s).numel() != 1) {
        throw std::invalid_argument("mean: non-scalar input " + value(s).shape_str());
      }
      acc += value(s)[0];
    }
    const T n = T(scalars.size());
    Value v = push(Tensor<T>({1, 1}, {acc / n}));
    std::vector<Value> ss(scalars.begin(), scalars.end());
    node(v).back = [this, v, ss = std::move(ss), n]() {
      const T go = node(v).grad[0];
      for (Value s : ss) node(s).grad[0] += go / n;
    };
    return v;
  }

  Value sum_elements(Value xv) {
    const Tensor<T>& x = value(xv);
    T acc = 0;
    for (T e : x.data) acc += e;
    Value v = push(Tensor<T>({1, 1}, {acc}));
    node(v).back = [this, v, xv]() {
      const T go = node(v).grad[0];
      Tensor<T>& gx = node(xv).grad;
      for (size_t i = 0; i < gx.numel(); ++i) gx[i] += go;
    };
    return v;
  }

  // ---- reverse sweep ----

  void backward(Value loss) {
    if (!loss.valid() || value(loss).numel() != 1) {
      throw std::invalid_argument("backward: loss must be a scalar node");
    }
    for (Node& n : nodes_) n.grad.zero();
    node(loss).grad[0] = T(1);
    last_backward_order_.clear();
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (nodes_[static_cast<size_t>(i)].back) {
        last_backward_order_.push_back(i);
        nodes_[static_cast<size_t>(i)].back();
      }
    }
  }

  // Node ids visited by the most recent backward(), in visit order.
  const std::vector<int>& last_backward_order() const { return last_backward_order_; }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    std::function<void()> back;
    ParamSlot<T>* slot = nullptr;
  };

  Value push(Tensor<T> t) {
    Node n;
    n.grad = Tensor<T>::zeros(t.shape);
    n.val = std::move(t);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(Value v) { return nodes_.at(static_cast<size_t>(v.id)); }
  const Node& node(Value v) const { return nodes_.at(static_cast<size_t>(v.id)); }

  std::vector<Node> nodes_;
  std::vector<int> last_backward_order_;
};

// Two-layer perceptron with GELU: linear -> gelu -> linear.
template <class T>
typename Tape<T>::Value mlp_block(Tape<T>& t, typename Tape<T>::Value x,
                                  typename Tape<T>::Value w1, typename Tape<T>::Value b1,
                                  typename Tape<T>::Value w2, typename Tape<T>::Value b2) {
  return t.linear(t.gelu(t.linear(x, w1, b1)), w2, b2);
}

// Parameter handles for one self-attention layer, as tape values.
template <class T>
struct AttentionValues {
  typename Tape<T>::Value wq, bq, wk, bk, wv, bv, wo, bo;
};

// Scaled dot-product self-attention over token rows, with learned Q/K/V/O
// projections. `heads` splits the feature dimension; scores are scaled by
// 1/sqrt(head_dim). If `attn_probe` is given it receives the softmaxed
// attention matrix of every head.
template <class T>
typename Tape<T>::Value self_attention(Tape<T>& t, typename Tape<T>::Value x,
                                       const AttentionValues<T>& p, int heads = 1,
                                       std::vector<typename Tape<T>::Value>* attn_probe = nullptr) {
  using Value = typename Tape<T>::Value;
  const int d = t.value(x).cols();
  if (heads <= 0 || d % heads != 0) {
    throw std::invalid_argument("self_attention: dim " + std::to_string(d) +
                                " not divisible by heads " + std::to_string(heads));
  }
  const int hd = d / heads;
  Value q = t.linear(x, p.wq, p.bq);
  Value k = t.linear(x, p.wk, p.bk);
  Value v = t.linear(x, p.wv, p.bv);
  std::vector<Value> ctx;
  ctx.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Value qh = heads == 1 ? q : t.slice_cols(q, h * hd, hd);
    Value kh = heads == 1 ? k : t.slice_cols(k, h * hd, hd);
    Value vh = heads == 1 ? v : t.slice_cols(v, h * hd, hd);
    Value scores = t.scale(t.matmul_nt(qh, kh), T(1) / std::sqrt(T(hd)));
    Value attn = t.softmax(scores);
    if (attn_probe) attn_probe->push_back(attn);
    ctx.push_back(t.matmul(attn, vh));
  }
  Value merged = heads == 1 ? ctx[0] : t.concat_cols(ctx);
  return t.linear(merged, p.wo, p.bo);
}

}  // namespace stmixer
