// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

// Straight-line loop implementation of the forward pass, written against raw
// parameter arrays only. Used as an oracle for the tape-based model. Supports
// the default layer counts (1, 2, 2).

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dofen/model.hpp"

namespace dofen::testing {

struct Reference {
  const DofenModel<double>& m;

  const double* p(const char* name) const { return m.param(name).data().data(); }
  const double* p(const std::string& name) const { return m.param(name).data().data(); }

  // cond[u * n_col + v] for one row.
  std::vector<double> conditions(const data::Batch& b, std::size_t row) const {
    const auto& s = m.schema();
    const std::size_t n_cond = m.shapes().n_cond, n_col = s.n_col();
    std::vector<double> out(n_cond * n_col);
    std::size_t num = 0, cat = 0;
    for (std::size_t v = 0; v < n_col; ++v) {
      if (!s.features[v].categorical) {
        const double x = b.numeric[row * b.num_numeric + num];
        const double* w = p("delta1.numeric.weight") + num * n_cond;
        const double* bias = p("delta1.numeric.bias") + num * n_cond;
        for (std::size_t u = 0; u < n_cond; ++u) out[u * n_col + v] = x * w[u] + bias[u];
        ++num;
      } else {
        const auto code = b.categorical[row * b.num_categorical + cat];
        const double* t = p("delta1.categorical." + std::to_string(cat)) + code * n_cond;
        for (std::size_t u = 0; u < n_cond; ++u) out[u * n_col + v] = t[u];
        ++cat;
      }
    }
    return out;
  }

  std::vector<double> rodts(const std::vector<double>& cond) const {
    std::vector<double> o(cond.size());
    const auto& pi = m.permutation().pi;
    for (std::size_t n = 0; n < cond.size(); ++n) o[pi[n]] = cond[n];
    return o;
  }

  static void layer_norm(double* x, std::size_t n, const double* gain, const double* shift) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t i = 0; i < n; ++i) x[i] = (x[i] - mean) * inv * gain[i] + shift[i];
  }

  // Dense x[in] * w[in, out] + b[out].
  static std::vector<double> dense(const std::vector<double>& x, const double* w, const double* b, std::size_t out) {
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w[i * out + o];
      y[o] = s;
    }
    return y;
  }

  // w[j * H + h] for one row.
  std::vector<double> weights(const std::vector<double>& o) const {
    const std::size_t d = m.config().depth, H = m.config().n_head, n = m.shapes().n_rodt;
    std::vector<double> w(n * H);
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<double> x(o.begin() + j * d, o.begin() + (j + 1) * d);
      layer_norm(x.data(), d, p("delta2.norm.gain") + j * d, p("delta2.norm.shift") + j * d);
      auto h = dense(x, p("delta2.linear.0.weight") + j * d * d, p("delta2.linear.0.bias") + j * d, d);
      for (auto& v : h) v = std::max(v, 0.0);
      auto y = dense(h, p("delta2.linear.1.weight") + j * d * H, p("delta2.linear.1.bias") + j * H, H);
      for (std::size_t k = 0; k < H; ++k) w[j * H + k] = y[k];
    }
    return w;
  }

  std::vector<double> forest_embedding(const std::vector<double>& w, std::size_t r) const {
    const std::size_t H = m.config().n_head, D = m.config().n_hidden, part = D / H;
    const double* e = p("embedding");
    const auto row = m.forest_plan().row(r);
    std::vector<double> f(D, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      double mx = -INFINITY;
      for (auto s : row) mx = std::max(mx, w[s * H + h]);
      double z = 0.0;
      for (auto s : row) z += std::exp(w[s * H + h] - mx);
      for (auto s : row) {
        const double prob = std::exp(w[s * H + h] - mx) / z;
        for (std::size_t t = 0; t < part; ++t) f[h * part + t] += prob * e[s * D + h * part + t];
      }
    }
    return f;
  }

  std::vector<double> head(std::vector<double> f) const {
    const std::size_t D = m.config().n_hidden, out = m.schema().out_dim;
    layer_norm(f.data(), D, p("delta3.norm.gain"), p("delta3.norm.shift"));
    auto h = dense(f, p("delta3.linear.0.weight"), p("delta3.linear.0.bias"), D);
    for (auto& v : h) v = std::max(v, 0.0);
    return dense(h, p("delta3.linear.1.weight"), p("delta3.linear.1.bias"), out);
  }

  // per_forest[(row * R + r) * out + k].
  std::vector<double> per_forest(const data::Batch& b) const {
    const std::size_t R = m.forest_plan().forests(), out = m.schema().out_dim;
    std::vector<double> y(b.rows * R * out);
    for (std::size_t i = 0; i < b.rows; ++i) {
      const auto w = weights(rodts(conditions(b, i)));
      for (std::size_t r = 0; r < R; ++r) {
        const auto yr = head(forest_embedding(w, r));
        std::copy(yr.begin(), yr.end(), y.begin() + (i * R + r) * out);
      }
    }
    return y;
  }

  // Sum over forests of the batch-mean loss.
  double loss(const data::Batch& b) const {
    const std::size_t R = m.forest_plan().forests(), out = m.schema().out_dim;
    const auto y = per_forest(b);
    double total = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      double lr = 0.0;
      for (std::size_t i = 0; i < b.rows; ++i) {
        const double* logits = y.data() + (i * R + r) * out;
        if (m.schema().task == data::TaskKind::classification) {
          double mx = -INFINITY;
          for (std::size_t k = 0; k < out; ++k) mx = std::max(mx, logits[k]);
          double z = 0.0;
          for (std::size_t k = 0; k < out; ++k) z += std::exp(logits[k] - mx);
          lr += -(logits[b.labels[i]] - mx - std::log(z));
        } else {
          lr += (logits[0] - b.targets[i]) * (logits[0] - b.targets[i]);
        }
      }
      total += lr / static_cast<double>(b.rows);
    }
    return total;
  }
};

}  // namespace dofen::testing
