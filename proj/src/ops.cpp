// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dofen/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace dofen::ad {
namespace {

template <class T>
bool wants_grad(const Tape<T>& tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (!tape.recording()) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <class T>
void expect_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* arg) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": " + arg + " is undefined");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
  }
}

void expect_dim(std::size_t got, std::size_t want, const char* op, const std::string& what) {
  if (got != want) {
    throw ShapeError(std::string(op) + ": dimension " + what + " is " + std::to_string(got) +
                     ", expected " + std::to_string(want));
  }
}

template <class T>
std::vector<T>& grad_of(const std::shared_ptr<Node<T>>& n) {
  n->ensure_grad();
  return n->grad;
}

}  // namespace

template <class T>
void softmax_row(std::span<const T> in, std::span<T> out) {
  T peak = in[0];
  for (std::size_t k = 1; k < in.size(); ++k) peak = std::max(peak, in[k]);
  if (std::isnan(peak)) {
    for (auto& v : out) v = std::numeric_limits<T>::quiet_NaN();
    return;
  }
  T total = T(0);
  for (std::size_t k = 0; k < in.size(); ++k) {
    out[k] = std::exp(in[k] - peak);
    total += out[k];
  }
  for (auto& v : out) v /= total;
}

template <class T>
Tensor<T> grouped_linear(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                         const Tensor<T>& bias) {
  constexpr const char* op = "grouped_linear";
  expect_rank(input, 3, op, "input");
  expect_rank(weight, 3, op, "weight");
  expect_rank(bias, 2, op, "bias");
  const std::size_t B = input.dim(0), G = input.dim(1), I = input.dim(2);
  const std::size_t O = weight.dim(2);
  if (G == 0) throw ShapeError("grouped_linear: group count G must be >= 1");
  expect_dim(weight.dim(0), G, op, "weight[0] (groups G)");
  expect_dim(weight.dim(1), I, op, "weight[1] (input features I)");
  expect_dim(bias.dim(0), G, op, "bias[0] (groups G)");
  expect_dim(bias.dim(1), O, op, "bias[1] (output features O)");

  const auto x = input.data();
  const auto w = weight.data();
  const auto bv = bias.data();
  std::vector<T> out(B * G * O);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t g = 0; g < G; ++g) {
      T* row = &out[(b * G + g) * O];
      const T* xr = &x[(b * G + g) * I];
      const T* wg = &w[g * I * O];
      for (std::size_t o = 0; o < O; ++o) row[o] = bv[g * O + o];
      for (std::size_t i = 0; i < I; ++i) {
        const T xi = xr[i];
        const T* wr = wg + i * O;
        for (std::size_t o = 0; o < O; ++o) row[o] += xi * wr[o];
      }
    }
  }
  const bool req = wants_grad(tape, {&input, &weight, &bias});
  auto y = Tensor<T>::from({B, G, O}, std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), xn = input.shared(), wn = weight.shared(),
                             bn = bias.shared(), B, G, I, O] {
      const auto& dy = yn->grad;
      if (xn->requires_grad) {
        auto& dx = grad_of(xn);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t g = 0; g < G; ++g) {
            const T* dyr = &dy[(b * G + g) * O];
            const T* wg = &wn->value[g * I * O];
            T* dxr = &dx[(b * G + g) * I];
            for (std::size_t i = 0; i < I; ++i) {
              T acc = T(0);
              for (std::size_t o = 0; o < O; ++o) acc += dyr[o] * wg[i * O + o];
              dxr[i] += acc;
            }
          }
      }
      if (wn->requires_grad) {
        auto& dw = grad_of(wn);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t g = 0; g < G; ++g) {
            const T* dyr = &dy[(b * G + g) * O];
            const T* xr = &xn->value[(b * G + g) * I];
            T* dwg = &dw[g * I * O];
            for (std::size_t i = 0; i < I; ++i) {
              const T xi = xr[i];
              for (std::size_t o = 0; o < O; ++o) dwg[i * O + o] += xi * dyr[o];
            }
          }
      }
      if (bn->requires_grad) {
        auto& db = grad_of(bn);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t k = 0; k < G * O; ++k) db[k] += dy[b * G * O + k];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> group_layer_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gain,
                           const Tensor<T>& shift, double eps) {
  constexpr const char* op = "group_layer_norm";
  expect_rank(input, 3, op, "input");
  expect_rank(gain, 2, op, "gain");
  expect_rank(shift, 2, op, "shift");
  const std::size_t B = input.dim(0), G = input.dim(1), I = input.dim(2);
  if (I == 0) throw ShapeError("group_layer_norm: normalized axis I must be >= 1");
  if (!(eps > 0.0)) throw ShapeError("group_layer_norm: eps must be > 0");
  expect_dim(gain.dim(0), G, op, "gain[0] (groups G)");
  expect_dim(gain.dim(1), I, op, "gain[1] (features I)");
  expect_dim(shift.dim(0), G, op, "shift[0] (groups G)");
  expect_dim(shift.dim(1), I, op, "shift[1] (features I)");

  const auto x = input.data();
  const auto ga = gain.data();
  const auto sh = shift.data();
  std::vector<T> out(B * G * I);
  std::vector<T> xhat(B * G * I);
  std::vector<T> inv_std(B * G);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t g = 0; g < G; ++g) {
      const std::size_t base = (b * G + g) * I;
      T mean = T(0);
      for (std::size_t i = 0; i < I; ++i) mean += x[base + i];
      mean /= static_cast<T>(I);
      T var = T(0);
      for (std::size_t i = 0; i < I; ++i) {
        const T c = x[base + i] - mean;
        var += c * c;
      }
      var /= static_cast<T>(I);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
      inv_std[b * G + g] = inv;
      for (std::size_t i = 0; i < I; ++i) {
        const T h = (x[base + i] - mean) * inv;
        xhat[base + i] = h;
        out[base + i] = h * ga[g * I + i] + sh[g * I + i];
      }
    }
  }
  const bool req = wants_grad(tape, {&input, &gain, &shift});
  auto y = Tensor<T>::from({B, G, I}, std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), xn = input.shared(), gn = gain.shared(),
                             sn = shift.shared(), xhat = std::move(xhat),
                             inv_std = std::move(inv_std), B, G, I] {
      const auto& dy = yn->grad;
      if (xn->requires_grad) {
        auto& dx = grad_of(xn);
        std::vector<T> dh(I);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t g = 0; g < G; ++g) {
            const std::size_t base = (b * G + g) * I;
            T mean_dh = T(0), mean_dh_h = T(0);
            for (std::size_t i = 0; i < I; ++i) {
              dh[i] = dy[base + i] * gn->value[g * I + i];
              mean_dh += dh[i];
              mean_dh_h += dh[i] * xhat[base + i];
            }
            mean_dh /= static_cast<T>(I);
            mean_dh_h /= static_cast<T>(I);
            const T inv = inv_std[b * G + g];
            for (std::size_t i = 0; i < I; ++i)
              dx[base + i] += inv * (dh[i] - mean_dh - xhat[base + i] * mean_dh_h);
          }
      }
      if (gn->requires_grad) {
        auto& dg = grad_of(gn);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t k = 0; k < G * I; ++k) dg[k] += dy[b * G * I + k] * xhat[b * G * I + k];
      }
      if (sn->requires_grad) {
        auto& ds = grad_of(sn);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t k = 0; k < G * I; ++k) ds[k] += dy[b * G * I + k];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input) {
  const auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  const bool req = wants_grad(tape, {&input});
  auto y = Tensor<T>::from(input.shape(), std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), xn = input.shared()] {
      auto& dx = grad_of(xn);
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (xn->value[i] > T(0)) dx[i] += yn->grad[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& input) {
  if (input.rank() == 0 || input.shape().back() == 0) {
    throw ShapeError("softmax: trailing axis K must be >= 1, got shape " + shape_str(input.shape()));
  }
  const std::size_t K = input.shape().back();
  const std::size_t rows = input.size() / K;
  const auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_row<T>(x.subspan(r * K, K), std::span<T>(out).subspan(r * K, K));
  }
  const bool req = wants_grad(tape, {&input});
  auto y = Tensor<T>::from(input.shape(), std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), xn = input.shared(), K, rows] {
      auto& dx = grad_of(xn);
      const auto& p = yn->value;
      const auto& dy = yn->grad;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * K;
        T dot = T(0);
        for (std::size_t k = 0; k < K; ++k) dot += p[base + k] * dy[base + k];
        for (std::size_t k = 0; k < K; ++k) dx[base + k] += p[base + k] * (dy[base + k] - dot);
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> embedding_lookup(Tape<T>& tape, const Tensor<T>& table,
                           std::span<const std::int32_t> indices, const Shape& index_shape) {
  expect_rank(table, 2, "embedding_lookup", "table");
  if (numel(index_shape) != indices.size()) {
    throw ShapeError("embedding_lookup: index shape " + shape_str(index_shape) + " does not hold " +
                     std::to_string(indices.size()) + " indices");
  }
  const std::size_t V = table.dim(0), D = table.dim(1);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    if (indices[n] < 0 || static_cast<std::size_t>(indices[n]) >= V) {
      throw ShapeError("embedding_lookup: index " + std::to_string(indices[n]) + " at position " +
                       std::to_string(n) + " is out of range for a table with V=" +
                       std::to_string(V) + " rows");
    }
  }
  const auto tv = table.data();
  std::vector<T> out(indices.size() * D);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto row = static_cast<std::size_t>(indices[n]);
    std::copy_n(&tv[row * D], D, &out[n * D]);
  }
  Shape shape = index_shape;
  shape.push_back(D);
  const bool req = wants_grad(tape, {&table});
  auto y = Tensor<T>::from(std::move(shape), std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), tn = table.shared(),
                             idx = std::vector<std::int32_t>(indices.begin(), indices.end()), D] {
      auto& dt = grad_of(tn);
      for (std::size_t n = 0; n < idx.size(); ++n) {
        const auto row = static_cast<std::size_t>(idx[n]);
        for (std::size_t j = 0; j < D; ++j) dt[row * D + j] += yn->grad[n * D + j];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& input, double rate, bool training,
                  CounterRng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return input;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  const auto x = input.data();
  std::vector<T> mask(x.size());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] = x[i] * mask[i];
  }
  const bool req = wants_grad(tape, {&input});
  auto y = Tensor<T>::from(input.shape(), std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), xn = input.shared(), mask = std::move(mask)] {
      auto& dx = grad_of(xn);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += yn->grad[i] * mask[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                        std::span<const std::int32_t> labels) {
  expect_rank(logits, 2, "cross_entropy", "logits");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (B == 0) throw ShapeError("cross_entropy: batch must be non-empty");
  expect_dim(labels.size(), B, "cross_entropy", "labels (batch B)");
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= C) {
      throw DataError("cross_entropy: label " + std::to_string(labels[b]) + " at row " +
                      std::to_string(b) + " is outside [0, " + std::to_string(C) + ")");
    }
  }
  const auto z = logits.data();
  std::vector<T> probs(B * C);
  T total = T(0);
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = &z[b * C];
    T peak = row[0];
    for (std::size_t c = 1; c < C; ++c) peak = std::max(peak, row[c]);
    T s = T(0);
    for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - peak);
    const T lse = peak + std::log(s);
    total += lse - row[labels[b]];
    for (std::size_t c = 0; c < C; ++c) probs[b * C + c] = std::exp(row[c] - lse);
  }
  const bool req = wants_grad(tape, {&logits});
  auto y = Tensor<T>::scalar(total / static_cast<T>(B), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), zn = logits.shared(), probs = std::move(probs),
                             lab = std::vector<std::int32_t>(labels.begin(), labels.end()), B, C] {
      auto& dz = grad_of(zn);
      const T g = yn->grad[0] / static_cast<T>(B);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          const T onehot = static_cast<std::size_t>(lab[b]) == c ? T(1) : T(0);
          dz[b * C + c] += g * (probs[b * C + c] - onehot);
        }
    });
  }
  return y;
}

template <class T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.size() != target.size()) {
    throw ShapeError("mse: pred shape " + shape_str(pred.shape()) + " and target shape " +
                     shape_str(target.shape()) + " hold different element counts");
  }
  const std::size_t N = pred.size();
  if (N == 0) throw ShapeError("mse: batch must be non-empty");
  const auto p = pred.data();
  const auto t = target.data();
  T total = T(0);
  for (std::size_t i = 0; i < N; ++i) {
    const T r = p[i] - t[i];
    total += r * r;
  }
  const bool req = wants_grad(tape, {&pred, &target});
  auto y = Tensor<T>::scalar(total / static_cast<T>(N), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), pn = pred.shared(), tn = target.shared(), N] {
      const T g = T(2) * yn->grad[0] / static_cast<T>(N);
      if (pn->requires_grad) {
        auto& dp = grad_of(pn);
        for (std::size_t i = 0; i < N; ++i) dp[i] += g * (pn->value[i] - tn->value[i]);
      }
      if (tn->requires_grad) {
        auto& dt = grad_of(tn);
        for (std::size_t i = 0; i < N; ++i) dt[i] -= g * (pn->value[i] - tn->value[i]);
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> batch_gather(Tape<T>& tape, const Tensor<T>& input,
                       std::span<const std::uint32_t> index, const Shape& tail_shape) {
  if (input.rank() < 1) throw ShapeError("batch_gather: input needs a leading batch axis");
  if (numel(tail_shape) != index.size()) {
    throw ShapeError("batch_gather: tail shape " + shape_str(tail_shape) + " does not hold " +
                     std::to_string(index.size()) + " indices");
  }
  const std::size_t B = input.dim(0);
  const std::size_t inner = B == 0 ? 0 : input.size() / B;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= inner) {
      throw ShapeError("batch_gather: index " + std::to_string(index[i]) +
                       " out of range for per-sample size " + std::to_string(inner));
    }
  }
  const std::size_t L = index.size();
  const auto x = input.data();
  std::vector<T> out(B * L);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < L; ++i) out[b * L + i] = x[b * inner + index[i]];
  Shape shape{B};
  shape.insert(shape.end(), tail_shape.begin(), tail_shape.end());
  const bool req = wants_grad(tape, {&input});
  auto y = Tensor<T>::from(std::move(shape), std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), xn = input.shared(),
                             idx = std::vector<std::uint32_t>(index.begin(), index.end()), B,
                             inner, L] {
      auto& dx = grad_of(xn);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < L; ++i) dx[b * inner + idx[i]] += yn->grad[b * L + i];
    });
  }
  return y;
}

template <class T>
Tensor<T> concat_axis1(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_axis1: no inputs");
  const Shape& first = parts.front().shape();
  if (first.size() < 2) throw ShapeError("concat_axis1: inputs need rank >= 2");
  const std::size_t B = first[0];
  const Shape tail(first.begin() + 2, first.end());
  const std::size_t inner = numel(tail);
  std::size_t total = 0;
  bool req = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || s[0] != B || !std::equal(tail.begin(), tail.end(), s.begin() + 2)) {
      throw ShapeError("concat_axis1: shape " + shape_str(s) + " does not match " + shape_str(first) +
                       " outside axis 1");
    }
    total += s[1];
    req = req || wants_grad(tape, {&p});
  }
  std::vector<T> out(B * total * inner);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t a = p.dim(1);
    const auto v = p.data();
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(&v[b * a * inner], a * inner, &out[(b * total + offset) * inner]);
    offset += a;
  }
  Shape shape{B, total};
  shape.insert(shape.end(), tail.begin(), tail.end());
  auto y = Tensor<T>::from(std::move(shape), std::move(out), req);
  if (req) {
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.shared());
    tape.record(y.shared(), [yn = y.shared(), nodes = std::move(nodes), B, total, inner] {
      std::size_t off = 0;
      for (const auto& n : nodes) {
        const std::size_t a = n->shape[1];
        if (n->requires_grad) {
          auto& dx = grad_of(n);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t k = 0; k < a * inner; ++k)
              dx[b * a * inner + k] += yn->grad[(b * total + off) * inner + k];
        }
        off += a;
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& input, const Shape& shape) {
  if (numel(shape) != input.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(input.shape()) + " as " + shape_str(shape));
  }
  const bool req = wants_grad(tape, {&input});
  auto y = Tensor<T>::from(shape, std::vector<T>(input.data().begin(), input.data().end()), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), xn = input.shared()] {
      auto& dx = grad_of(xn);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += yn->grad[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor) {
  std::vector<T> out(input.data().begin(), input.data().end());
  for (auto& v : out) v *= factor;
  const bool req = wants_grad(tape, {&input});
  auto y = Tensor<T>::from(input.shape(), std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), xn = input.shared(), factor] {
      auto& dx = grad_of(xn);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * yn->grad[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  const bool req = wants_grad(tape, {&a, &b});
  auto y = Tensor<T>::from(a.shape(), std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), an = a.shared(), bn = b.shared()] {
      for (const auto& n : {an, bn}) {
        if (!n->requires_grad) continue;
        auto& dx = grad_of(n);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += yn->grad[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  const bool req = wants_grad(tape, {&a, &b});
  auto y = Tensor<T>::from(a.shape(), std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), an = a.shared(), bn = b.shared()] {
      if (an->requires_grad) {
        auto& da = grad_of(an);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += yn->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& db = grad_of(bn);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += yn->grad[i] * an->value[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input) {
  T total = T(0);
  for (T v : input.data()) total += v;
  const bool req = wants_grad(tape, {&input});
  auto y = Tensor<T>::scalar(total, req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), xn = input.shared()] {
      auto& dx = grad_of(xn);
      for (auto& v : dx) v += yn->grad[0];
    });
  }
  return y;
}

template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  expect_rank(a, 2, "matmul", "a");
  expect_rank(b, 2, "matmul", "b");
  const std::size_t B = a.dim(0), K = a.dim(1), D = b.dim(1);
  expect_dim(b.dim(0), K, "matmul", "b[0] (inner K)");
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(B * D, T(0));
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const T s = av[i * K + k];
      for (std::size_t j = 0; j < D; ++j) out[i * D + j] += s * bv[k * D + j];
    }
  const bool req = wants_grad(tape, {&a, &b});
  auto y = Tensor<T>::from({B, D}, std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), an = a.shared(), bn = b.shared(), B, K, D] {
      const auto& dy = yn->grad;
      if (an->requires_grad) {
        auto& da = grad_of(an);
        for (std::size_t i = 0; i < B; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            T acc = T(0);
            for (std::size_t j = 0; j < D; ++j) acc += dy[i * D + j] * bn->value[k * D + j];
            da[i * K + k] += acc;
          }
      }
      if (bn->requires_grad) {
        auto& db = grad_of(bn);
        for (std::size_t i = 0; i < B; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            const T s = an->value[i * K + k];
            for (std::size_t j = 0; j < D; ++j) db[k * D + j] += s * dy[i * D + j];
          }
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> mean_axis1(Tape<T>& tape, const Tensor<T>& input) {
  expect_rank(input, 3, "mean_axis1", "input");
  const std::size_t B = input.dim(0), R = input.dim(1), O = input.dim(2);
  if (R == 0) throw ShapeError("mean_axis1: axis 1 is empty");
  const auto x = input.data();
  std::vector<T> out(B * O, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t o = 0; o < O; ++o) out[b * O + o] += x[(b * R + r) * O + o];
    for (std::size_t o = 0; o < O; ++o) out[b * O + o] /= static_cast<T>(R);
  }
  const bool req = wants_grad(tape, {&input});
  auto y = Tensor<T>::from({B, O}, std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), xn = input.shared(), B, R, O] {
      auto& dx = grad_of(xn);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t o = 0; o < O; ++o)
            dx[(b * R + r) * O + o] += yn->grad[b * O + o] / static_cast<T>(R);
    });
  }
  return y;
}

template <class T>
Tensor<T> forest_pool(Tape<T>& tape, const Tensor<T>& weights, const Tensor<T>& table,
                      std::span<const std::uint32_t> members,
                      std::span<const std::uint32_t> offsets) {
  constexpr const char* op = "forest_pool";
  expect_rank(weights, 3, op, "weights");
  expect_rank(table, 2, op, "table");
  const std::size_t B = weights.dim(0), N = weights.dim(1), H = weights.dim(2);
  const std::size_t D = table.dim(1);
  expect_dim(table.dim(0), N, op, "table[0] (rows N)");
  if (H == 0 || D % H != 0) {
    throw ShapeError("forest_pool: table width " + std::to_string(D) +
                     " is not divisible by head count " + std::to_string(H));
  }
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != members.size()) {
    throw ShapeError("forest_pool: offsets must run from 0 to the member count");
  }
  const std::size_t R = offsets.size() - 1;
  for (std::size_t r = 0; r < R; ++r) {
    if (offsets[r + 1] <= offsets[r]) {
      throw ShapeError("forest_pool: forest " + std::to_string(r) + " has no members");
    }
  }
  for (auto m : members) {
    if (m >= N) throw ShapeError("forest_pool: member index " + std::to_string(m) + " >= " + std::to_string(N));
  }
  const std::size_t Dh = D / H;
  const std::size_t S = members.size();
  const auto w = weights.data();
  const auto E = table.data();

  std::vector<T> out(B * R * D, T(0));
  std::vector<T> probs(B * S * H);  // [b][slot][h]
  std::vector<T> logits, p;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t r = 0; r < R; ++r) {
      const std::size_t lo = offsets[r], K = offsets[r + 1] - offsets[r];
      logits.resize(K);
      p.resize(K);
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t k = 0; k < K; ++k) logits[k] = w[(b * N + members[lo + k]) * H + h];
        softmax_row<T>(logits, p);
        T* f = &out[(b * R + r) * D + h * Dh];
        for (std::size_t k = 0; k < K; ++k) {
          probs[(b * S + lo + k) * H + h] = p[k];
          const T* e = &E[members[lo + k] * D + h * Dh];
          const T pk = p[k];
          for (std::size_t j = 0; j < Dh; ++j) f[j] += pk * e[j];
        }
      }
    }
  }
  const bool req = wants_grad(tape, {&weights, &table});
  auto y = Tensor<T>::from({B, R, D}, std::move(out), req);
  if (req) {
    tape.record(y.shared(), [yn = y.shared(), wn = weights.shared(), en = table.shared(),
                             probs = std::move(probs),
                             mem = std::vector<std::uint32_t>(members.begin(), members.end()),
                             off = std::vector<std::uint32_t>(offsets.begin(), offsets.end()), B, N,
                             H, D, R, S, Dh] {
      const auto& df = yn->grad;
      const auto& Ev = en->value;
      std::vector<T>* dw = wn->requires_grad ? &grad_of(wn) : nullptr;
      std::vector<T>* dE = en->requires_grad ? &grad_of(en) : nullptr;
      std::vector<T> dp;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < R; ++r) {
          const std::size_t lo = off[r], K = off[r + 1] - off[r];
          dp.resize(K);
          for (std::size_t h = 0; h < H; ++h) {
            const T* g = &df[(b * R + r) * D + h * Dh];
            T dot = T(0);
            for (std::size_t k = 0; k < K; ++k) {
              const std::size_t row = mem[lo + k];
              const T pk = probs[(b * S + lo + k) * H + h];
              T acc = T(0);
              for (std::size_t j = 0; j < Dh; ++j) acc += g[j] * Ev[row * D + h * Dh + j];
              dp[k] = acc;
              dot += pk * acc;
              if (dE) {
                T* de = &(*dE)[row * D + h * Dh];
                for (std::size_t j = 0; j < Dh; ++j) de[j] += pk * g[j];
              }
            }
            if (dw) {
              for (std::size_t k = 0; k < K; ++k) {
                const T pk = probs[(b * S + lo + k) * H + h];
                (*dw)[(b * N + mem[lo + k]) * H + h] += pk * (dp[k] - dot);
              }
            }
          }
        }
    });
  }
  return y;
}

#define DOFEN_INSTANTIATE_OPS(T)                                                                   \
  template void softmax_row<T>(std::span<const T>, std::span<T>);                                  \
  template Tensor<T> grouped_linear<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                       const Tensor<T>&);                                          \
  template Tensor<T> group_layer_norm<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                         const Tensor<T>&, double);                                \
  template Tensor<T> relu<T>(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> softmax<T>(Tape<T>&, const Tensor<T>&);                                       \
  template Tensor<T> embedding_lookup<T>(Tape<T>&, const Tensor<T>&,                               \
                                         std::span<const std::int32_t>, const Shape&);             \
  template Tensor<T> dropout<T>(Tape<T>&, const Tensor<T>&, double, bool, CounterRng&);            \
  template Tensor<T> cross_entropy<T>(Tape<T>&, const Tensor<T>&, std::span<const std::int32_t>);  \
  template Tensor<T> mse<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> batch_gather<T>(Tape<T>&, const Tensor<T>&, std::span<const std::uint32_t>,   \
                                     const Shape&);                                                \
  template Tensor<T> concat_axis1<T>(Tape<T>&, const std::vector<Tensor<T>>&);                     \
  template Tensor<T> reshape<T>(Tape<T>&, const Tensor<T>&, const Shape&);                         \
  template Tensor<T> scale<T>(Tape<T>&, const Tensor<T>&, T);                                      \
  template Tensor<T> add<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sum<T>(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> matmul<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> mean_axis1<T>(Tape<T>&, const Tensor<T>&);                                    \
  template Tensor<T> forest_pool<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&,                  \
                                    std::span<const std::uint32_t>, std::span<const std::uint32_t>);

DOFEN_INSTANTIATE_OPS(float)
DOFEN_INSTANTIATE_OPS(double)

}  // namespace dofen::ad
