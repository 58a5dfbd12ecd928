// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dofen/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dofen/error.hpp"
#include "dofen/ops.hpp"

namespace dofen {
namespace {

constexpr std::size_t kChunk = 256;

template <class Fn>
void for_each_chunk(const data::EncodedDataset& ds, Fn&& fn) {
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.rows; start += kChunk) {
    idx.resize(std::min(ds.rows, start + kChunk) - start);
    std::iota(idx.begin(), idx.end(), start);
    fn(data::gather_batch(ds, idx));
  }
}

}  // namespace

OccurrenceMatrix occurrence_matrix(const PermutationPlan& perm, std::size_t n_col, std::size_t depth) {
  OccurrenceMatrix f;
  f.n_col = n_col;
  f.n_rodt = perm.pi.size() / depth;
  f.counts.assign(f.n_rodt * n_col, 0);
  // Slot s of O holds entry source[s] of row-major M, whose column is source[s] % n_col.
  for (std::size_t s = 0; s < perm.source.size(); ++s) {
    ++f.counts[(s / depth) * n_col + perm.source[s] % n_col];
  }
  return f;
}

template <class T>
std::vector<double> rodt_softmax(const DofenModel<T>& model, const data::Batch& batch) {
  ad::Tape<T> tape = ad::Tape<T>::inference();
  auto m = model.generate_conditions(tape, batch);
  auto o = model.construct_rodts(tape, m);
  auto w = model.compute_rodt_weights(tape, o, false);

  const std::size_t n = model.shapes().n_rodt;
  const std::size_t h = model.config().n_head;
  const auto& pruned = model.pruned();
  std::vector<std::uint32_t> active;
  for (std::uint32_t j = 0; j < n; ++j) {
    if (!std::binary_search(pruned.begin(), pruned.end(), j)) active.push_back(j);
  }
  std::vector<double> out(batch.rows * n, 0.0);
  std::vector<double> raw(active.size()), p(active.size());
  const auto wv = w.data();
  for (std::size_t b = 0; b < batch.rows; ++b) {
    for (std::size_t a = 0; a < active.size(); ++a) {
      double s = 0.0;
      for (std::size_t k = 0; k < h; ++k) s += wv[(b * n + active[a]) * h + k];
      raw[a] = s / static_cast<double>(h);
    }
    ad::softmax_row<double>(raw, p);
    for (std::size_t a = 0; a < active.size(); ++a) out[b * n + active[a]] = p[a];
  }
  return out;
}

std::vector<double> importance_from_weights(const OccurrenceMatrix& f, std::span<const double> p,
                                            std::size_t depth) {
  if (p.size() != f.n_rodt) throw ShapeError("importance: weight row has the wrong length");
  std::vector<double> t(f.n_col, 0.0);
  for (std::size_t j = 0; j < f.n_rodt; ++j) {
    for (std::size_t c = 0; c < f.n_col; ++c) t[c] += f.at(j, c) * p[j];
  }
  for (auto& v : t) v /= static_cast<double>(depth);
  return t;
}

template <class T>
std::vector<double> sample_importance(const DofenModel<T>& model, const data::Batch& single_row) {
  if (single_row.rows != 1) throw ShapeError("sample_importance needs exactly one row");
  const auto f = occurrence_matrix(model);
  return importance_from_weights(f, rodt_softmax(model, single_row), model.config().depth);
}

template <class T>
std::vector<double> dataset_importance(const DofenModel<T>& model, const data::EncodedDataset& ds) {
  if (ds.rows == 0) throw DataError("importance needs a non-empty dataset");
  const auto f = occurrence_matrix(model);
  const std::size_t n = model.shapes().n_rodt;
  std::vector<double> total(f.n_col, 0.0);
  for_each_chunk(ds, [&](const data::Batch& batch) {
    const auto p = rodt_softmax(model, batch);
    for (std::size_t b = 0; b < batch.rows; ++b) {
      const auto t = importance_from_weights(f, std::span<const double>(p).subspan(b * n, n), model.config().depth);
      for (std::size_t c = 0; c < f.n_col; ++c) total[c] += t[c];
    }
  });
  for (auto& v : total) v /= static_cast<double>(ds.rows);
  return total;
}

template <class T>
WeightProfile weight_profile(const DofenModel<T>& model, const data::EncodedDataset& ds) {
  if (ds.rows == 0) throw DataError("weight profile needs a non-empty dataset");
  const std::size_t n = model.shapes().n_rodt;
  WeightProfile prof;
  prof.mean.assign(n, 0.0);
  prof.std.assign(n, 0.0);
  for_each_chunk(ds, [&](const data::Batch& batch) {
    const auto p = rodt_softmax(model, batch);
    for (std::size_t b = 0; b < batch.rows; ++b) {
      for (std::size_t j = 0; j < n; ++j) prof.mean[j] += p[b * n + j];
    }
  });
  for (auto& v : prof.mean) v /= static_cast<double>(ds.rows);
  for_each_chunk(ds, [&](const data::Batch& batch) {
    const auto p = rodt_softmax(model, batch);
    for (std::size_t b = 0; b < batch.rows; ++b) {
      for (std::size_t j = 0; j < n; ++j) {
        const double dlt = p[b * n + j] - prof.mean[j];
        prof.std[j] += dlt * dlt;
      }
    }
  });
  for (auto& v : prof.std) v = std::sqrt(v / static_cast<double>(ds.rows));
  return prof;
}

PruneEnd parse_prune_end(const std::string& text) {
  if (text == "low_std") return PruneEnd::low_std;
  if (text == "high_std") return PruneEnd::high_std;
  if (text == "low_mean") return PruneEnd::low_mean;
  if (text == "high_mean") return PruneEnd::high_mean;
  throw ConfigError("prune end must be one of low_std, high_std, low_mean, high_mean; got \"" + text + "\"");
}

const char* to_string(PruneEnd end) {
  switch (end) {
    case PruneEnd::low_std: return "low_std";
    case PruneEnd::high_std: return "high_std";
    case PruneEnd::low_mean: return "low_mean";
    case PruneEnd::high_mean: return "high_mean";
  }
  return "?";
}

std::vector<std::uint32_t> select_pruned(const WeightProfile& profile, const std::vector<std::uint32_t>& already,
                                         double ratio, PruneEnd end) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("prune ratio must be in [0, 1), got " + std::to_string(ratio));
  const std::size_t n = profile.mean.size();
  if (profile.std.size() != n) throw ShapeError("weight profile mean and std lengths differ");
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  std::vector<std::uint32_t> cand;
  for (std::uint32_t j = 0; j < n; ++j) {
    if (!std::binary_search(already.begin(), already.end(), j)) cand.push_back(j);
  }
  if (k > cand.size()) throw ConfigError("prune ratio removes more rODTs than remain active");
  const auto& key = (end == PruneEnd::low_std || end == PruneEnd::high_std) ? profile.std : profile.mean;
  const bool low = end == PruneEnd::low_std || end == PruneEnd::low_mean;
  std::stable_sort(cand.begin(), cand.end(), [&](std::uint32_t a, std::uint32_t b) {
    return low ? key[a] < key[b] : key[a] > key[b];
  });
  cand.resize(k);
  return cand;
}

template <class T>
DofenModel<T> prune(const DofenModel<T>& model, const WeightProfile& profile, double ratio, PruneEnd end) {
  if (profile.mean.size() != model.shapes().n_rodt) {
    throw ShapeError("weight profile covers " + std::to_string(profile.mean.size()) + " rODTs, model has " +
                     std::to_string(model.shapes().n_rodt));
  }
  auto removed = select_pruned(profile, model.pruned(), ratio, end);
  std::vector<bool> drop(model.shapes().n_rodt, false);
  for (auto j : removed) drop[j] = true;

  const auto& old = model.forest_plan();
  ForestPlan plan;
  std::vector<std::uint32_t> row;
  for (std::size_t r = 0; r < old.forests(); ++r) {
    row.clear();
    for (auto j : old.row(r)) {
      if (!drop[j]) row.push_back(j);
    }
    if (row.empty()) throw ConfigError("pruning would remove every member of forest " + std::to_string(r));
    plan.add_row(row);
  }
  auto pruned = model.pruned();
  pruned.insert(pruned.end(), removed.begin(), removed.end());
  DofenModel<T> out = model.clone();
  out.set_pruned_plan(std::move(plan), std::move(pruned));
  return out;
}

#define DOFEN_INSTANTIATE_INTERPRET(T)                                                                   \
  template std::vector<double> rodt_softmax<T>(const DofenModel<T>&, const data::Batch&);                \
  template std::vector<double> sample_importance<T>(const DofenModel<T>&, const data::Batch&);           \
  template std::vector<double> dataset_importance<T>(const DofenModel<T>&, const data::EncodedDataset&); \
  template WeightProfile weight_profile<T>(const DofenModel<T>&, const data::EncodedDataset&);           \
  template DofenModel<T> prune<T>(const DofenModel<T>&, const WeightProfile&, double, PruneEnd);

DOFEN_INSTANTIATE_INTERPRET(float)
DOFEN_INSTANTIATE_INTERPRET(double)

}  // namespace dofen
