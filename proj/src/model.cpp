// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dofen/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dofen/error.hpp"
#include "dofen/ops.hpp"

namespace dofen {
namespace {

enum class Init { uniform, normal, normal_scaled, ones, zeros };

struct ParamSpec {
  std::string name;
  ad::Shape shape;
  Init init = Init::uniform;
  double scale = 1.0;  // uniform bound or normal std
};

std::vector<ParamSpec> param_specs(const DofenConfig& c, const ModelSchema& s, const DerivedShapes& sh) {
  std::vector<ParamSpec> out;
  const std::size_t n_num = s.n_numeric();
  const std::size_t n_col = s.n_col();
  const std::size_t d = c.depth;
  const auto linear = [&](const std::string& prefix, std::size_t groups, std::size_t in, std::size_t outd) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    out.push_back({prefix + ".weight", {groups, in, outd}, Init::uniform, bound});
    out.push_back({prefix + ".bias", {groups, outd}, Init::uniform, bound});
  };

  if (n_num > 0) linear("delta1.numeric", n_num, 1, sh.n_cond);
  std::size_t cat = 0;
  for (const auto& f : s.features) {
    if (!f.categorical) continue;
    out.push_back({"delta1.categorical." + std::to_string(cat++), {f.cardinality, sh.n_cond}, Init::normal, 1.0});
  }
  for (std::size_t k = 1; k < c.delta1_layers; ++k) {
    linear("delta1.hidden." + std::to_string(k), n_col, sh.n_cond, sh.n_cond);
  }

  out.push_back({"delta2.norm.gain", {sh.n_rodt, d}, Init::ones, 1.0});
  out.push_back({"delta2.norm.shift", {sh.n_rodt, d}, Init::zeros, 0.0});
  for (std::size_t k = 0; k < c.delta2_layers; ++k) {
    const std::size_t outd = k + 1 == c.delta2_layers ? c.n_head : d;
    linear("delta2.linear." + std::to_string(k), sh.n_rodt, d, outd);
  }

  out.push_back({"embedding", {sh.n_rodt, c.n_hidden}, Init::normal_scaled,
                 1.0 / std::sqrt(static_cast<double>(c.n_hidden))});

  out.push_back({"delta3.norm.gain", {1, c.n_hidden}, Init::ones, 1.0});
  out.push_back({"delta3.norm.shift", {1, c.n_hidden}, Init::zeros, 0.0});
  for (std::size_t k = 0; k < c.delta3_layers; ++k) {
    const std::size_t outd = k + 1 == c.delta3_layers ? s.out_dim : c.n_hidden;
    linear("delta3.linear." + std::to_string(k), 1, c.n_hidden, outd);
  }
  return out;
}

template <class T>
ad::Tensor<T> init_param(const ParamSpec& spec, std::uint64_t seed) {
  CounterRng rng = CounterRng::stream(seed, "init").split(spec.name);
  std::vector<T> v(ad::numel(spec.shape));
  for (auto& x : v) {
    switch (spec.init) {
      case Init::uniform: x = static_cast<T>(rng.uniform(-spec.scale, spec.scale)); break;
      case Init::normal:
      case Init::normal_scaled: x = static_cast<T>(rng.normal() * spec.scale); break;
      case Init::ones: x = T(1); break;
      case Init::zeros: x = T(0); break;
    }
  }
  return ad::Tensor<T>::from(spec.shape, std::move(v), true);
}

}  // namespace

std::size_t ModelSchema::n_numeric() const {
  return static_cast<std::size_t>(
      std::count_if(features.begin(), features.end(), [](const FeatureSpec& f) { return !f.categorical; }));
}

std::size_t ModelSchema::n_categorical() const { return n_col() - n_numeric(); }

ModelSchema ModelSchema::from_preprocessor(const data::Preprocessor& prep) {
  ModelSchema s;
  const auto& schema = prep.schema();
  const auto cards = prep.categorical_cardinalities();
  std::size_t cat = 0;
  for (std::size_t idx : schema.feature_indices()) {
    const auto& col = schema.columns[idx];
    FeatureSpec f;
    f.name = col.name;
    f.categorical = col.kind == data::ColumnKind::categorical;
    if (f.categorical) f.cardinality = cards.at(cat++);
    s.features.push_back(std::move(f));
  }
  s.task = schema.task;
  if (s.task == data::TaskKind::classification) {
    s.out_dim = prep.num_classes();
    if (s.out_dim < 2) {
      throw DataError("classification needs at least 2 classes in the training split, found " +
                      std::to_string(s.out_dim));
    }
  } else {
    s.out_dim = 1;
  }
  return s;
}

nlohmann::json ModelSchema::to_json() const {
  nlohmann::json feats = nlohmann::json::array();
  for (const auto& f : features) {
    feats.push_back({{"name", f.name}, {"categorical", f.categorical}, {"cardinality", f.cardinality}});
  }
  return {{"features", feats}, {"task", data::to_string(task)}, {"out_dim", out_dim}};
}

ModelSchema ModelSchema::from_json(const nlohmann::json& j) {
  try {
    ModelSchema s;
    for (const auto& f : j.at("features")) {
      s.features.push_back({f.at("name").get<std::string>(), f.at("categorical").get<bool>(),
                            f.at("cardinality").get<std::size_t>()});
    }
    const auto task = j.at("task").get<std::string>();
    if (task == "classification") {
      s.task = data::TaskKind::classification;
    } else if (task == "regression") {
      s.task = data::TaskKind::regression;
    } else {
      throw FormatError("unknown task \"" + task + "\"");
    }
    s.out_dim = j.at("out_dim").get<std::size_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model schema: ") + e.what());
  }
}

PermutationPlan PermutationPlan::from_pi(std::vector<std::uint32_t> pi) {
  PermutationPlan p;
  p.pi = std::move(pi);
  p.source.assign(p.pi.size(), 0);
  std::vector<bool> seen(p.pi.size(), false);
  for (std::size_t n = 0; n < p.pi.size(); ++n) {
    const auto s = p.pi[n];
    if (s >= p.pi.size() || seen[s]) throw FormatError("condition permutation is not a bijection");
    seen[s] = true;
    p.source[s] = static_cast<std::uint32_t>(n);
  }
  return p;
}

bool PermutationPlan::is_bijection() const {
  if (source.size() != pi.size()) return false;
  std::vector<bool> seen(pi.size(), false);
  for (std::size_t n = 0; n < pi.size(); ++n) {
    if (pi[n] >= pi.size() || seen[pi[n]] || source[pi[n]] != n) return false;
    seen[pi[n]] = true;
  }
  return true;
}

void ForestPlan::add_row(std::span<const std::uint32_t> row) {
  members.insert(members.end(), row.begin(), row.end());
  offsets.push_back(static_cast<std::uint32_t>(members.size()));
}

PermutationPlan draw_permutation(const DofenConfig& config, std::size_t n_cond, std::size_t n_col) {
  const std::size_t n = n_cond * n_col;
  if (config.ablation_no_condition_shuffle) {
    std::vector<std::uint32_t> id(n);
    std::iota(id.begin(), id.end(), 0u);
    return PermutationPlan::from_pi(std::move(id));
  }
  CounterRng rng = CounterRng::stream(config.seed, "permutation");
  return PermutationPlan::from_pi(random_permutation(n, rng));
}

template <class T>
DofenModel<T> DofenModel<T>::build(const DofenConfig& config, const ModelSchema& schema) {
  DofenModel m;
  m.config_ = config;
  m.schema_ = schema;
  m.shapes_ = derive_shapes(config, schema.n_col());
  if (schema.out_dim == 0) throw ConfigError("out_dim must be >= 1");
  for (const auto& spec : param_specs(config, schema, m.shapes_)) {
    m.params_.emplace_back(spec.name, init_param<T>(spec, config.seed));
  }
  m.perm_ = draw_permutation(config, m.shapes_.n_cond, schema.n_col());
  m.plan_ = m.draw_plan(CounterRng::stream(config.seed, "forest_plan"));
  m.dropout_rng_ = CounterRng::stream(config.seed, "dropout");
  m.init_layout();
  return m;
}

template <class T>
DofenModel<T> DofenModel<T>::assemble(const DofenConfig& config, const ModelSchema& schema,
                                      std::vector<std::pair<std::string, Tensor>> params, PermutationPlan perm,
                                      ForestPlan plan, std::vector<std::uint32_t> pruned) {
  DofenModel m;
  m.config_ = config;
  m.schema_ = schema;
  m.shapes_ = derive_shapes(config, schema.n_col());
  const auto specs = param_specs(config, schema, m.shapes_);
  if (params.size() != specs.size()) {
    throw FormatError("expected " + std::to_string(specs.size()) + " parameter tensors, found " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (params[i].first != specs[i].name || params[i].second.shape() != specs[i].shape) {
      throw FormatError("parameter " + std::to_string(i) + ": expected " + specs[i].name + " " +
                        ad::shape_str(specs[i].shape) + ", found " + params[i].first + " " +
                        ad::shape_str(params[i].second.shape()));
    }
    params[i].second.set_requires_grad(true);
  }
  if (perm.pi.size() != m.shapes_.n_cond * schema.n_col() || !perm.is_bijection()) {
    throw FormatError("condition permutation does not match the model shape");
  }
  if (plan.offsets.empty() || plan.offsets.front() != 0 || plan.offsets.back() != plan.members.size()) {
    throw FormatError("forest plan offsets are malformed");
  }
  for (std::size_t r = 0; r + 1 < plan.offsets.size(); ++r) {
    if (plan.offsets[r + 1] <= plan.offsets[r]) throw FormatError("forest plan has an empty forest");
  }
  for (auto idx : plan.members) {
    if (idx >= m.shapes_.n_rodt) throw FormatError("forest plan member out of range");
  }
  for (auto idx : pruned) {
    if (idx >= m.shapes_.n_rodt) throw FormatError("pruned index out of range");
  }
  m.params_ = std::move(params);
  m.perm_ = std::move(perm);
  m.plan_ = std::move(plan);
  m.pruned_ = std::move(pruned);
  std::sort(m.pruned_.begin(), m.pruned_.end());
  m.dropout_rng_ = CounterRng::stream(config.seed, "dropout");
  m.init_layout();
  return m;
}

template <class T>
void DofenModel<T>::init_layout() {
  // Internal condition layout is [numeric..., categorical...] x N_cond; M is N_cond x schema order.
  const std::size_t n_col = schema_.n_col();
  const std::size_t n_cond = shapes_.n_cond;
  std::vector<std::size_t> pos(n_col);
  std::size_t num = 0, cat = schema_.n_numeric();
  for (std::size_t v = 0; v < n_col; ++v) pos[v] = schema_.features[v].categorical ? cat++ : num++;
  m_gather_.assign(n_cond * n_col, 0);
  for (std::size_t u = 0; u < n_cond; ++u) {
    for (std::size_t v = 0; v < n_col; ++v) {
      m_gather_[u * n_col + v] = static_cast<std::uint32_t>(pos[v] * n_cond + u);
    }
  }
}

template <class T>
ForestPlan DofenModel<T>::draw_plan(CounterRng rng) const {
  std::vector<std::uint32_t> active;
  for (std::uint32_t i = 0; i < shapes_.n_rodt; ++i) {
    if (!std::binary_search(pruned_.begin(), pruned_.end(), i)) active.push_back(i);
  }
  ForestPlan plan;
  if (config_.ablation_no_forest_ensemble) {
    plan.add_row(active);
    return plan;
  }
  const std::size_t k = std::min(shapes_.n_estimator, active.size());
  for (std::size_t r = 0; r < config_.n_forest; ++r) {
    CounterRng fr = rng.split(static_cast<std::uint64_t>(r));
    std::vector<std::uint32_t> pool = active;
    for (std::size_t i = 0; i < k; ++i) {
      const auto j = i + static_cast<std::size_t>(fr.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    plan.add_row(pool);
  }
  return plan;
}

template <class T>
void DofenModel<T>::resample_forests(std::uint64_t epoch) {
  plan_ = draw_plan(CounterRng::stream(config_.seed, "forest_plan").split("epoch").split(epoch));
}

template <class T>
void DofenModel<T>::set_pruned_plan(ForestPlan plan, std::vector<std::uint32_t> pruned) {
  std::sort(pruned.begin(), pruned.end());
  plan_ = std::move(plan);
  pruned_ = std::move(pruned);
}

template <class T>
typename DofenModel<T>::Tensor& DofenModel<T>::param(const std::string& name) {
  for (auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw Error("no parameter named " + name);
}

template <class T>
const typename DofenModel<T>::Tensor& DofenModel<T>::param(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw Error("no parameter named " + name);
}

template <class T>
std::size_t DofenModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.second.size();
  return n;
}

template <class T>
DofenModel<T> DofenModel<T>::clone() const {
  DofenModel m = *this;
  for (auto& p : m.params_) {
    auto d = p.second.data();
    p.second = Tensor::from(p.second.shape(), std::vector<T>(d.begin(), d.end()), true);
  }
  return m;
}

template <class T>
typename DofenModel<T>::Tensor DofenModel<T>::generate_conditions(Tape& tape, const data::Batch& batch) const {
  const std::size_t b = batch.rows;
  const std::size_t n_num = schema_.n_numeric();
  const std::size_t n_cat = schema_.n_categorical();
  if (batch.num_numeric != n_num || batch.num_categorical != n_cat) {
    throw ShapeError("batch has " + std::to_string(batch.num_numeric) + " numerical and " +
                     std::to_string(batch.num_categorical) + " categorical features, model expects " +
                     std::to_string(n_num) + " and " + std::to_string(n_cat));
  }
  if (b == 0) throw ShapeError("empty batch");

  std::vector<Tensor> parts;
  if (n_num > 0) {
    std::vector<T> xv(batch.numeric.begin(), batch.numeric.end());
    auto x = Tensor::from({b, n_num, 1}, std::move(xv));
    parts.push_back(ad::grouped_linear(tape, x, param("delta1.numeric.weight"), param("delta1.numeric.bias")));
  }
  std::size_t cat = 0;
  std::vector<std::int32_t> codes(b);
  for (const auto& f : schema_.features) {
    if (!f.categorical) continue;
    for (std::size_t i = 0; i < b; ++i) {
      const auto code = batch.categorical[i * n_cat + cat];
      if (code < 0 || static_cast<std::size_t>(code) >= f.cardinality) {
        throw DataError("categorical code " + std::to_string(code) + " out of range for column \"" + f.name +
                        "\" (cardinality " + std::to_string(f.cardinality) + ")");
      }
      codes[i] = code;
    }
    parts.push_back(
        ad::embedding_lookup(tape, param("delta1.categorical." + std::to_string(cat)), codes, {b, 1}));
    ++cat;
  }
  Tensor h = parts.size() == 1 ? parts.front() : ad::concat_axis1(tape, parts);
  for (std::size_t k = 1; k < config_.delta1_layers; ++k) {
    const std::string prefix = "delta1.hidden." + std::to_string(k);
    h = ad::relu(tape, h);
    h = ad::grouped_linear(tape, h, param(prefix + ".weight"), param(prefix + ".bias"));
  }
  return ad::batch_gather(tape, h, m_gather_, {shapes_.n_cond, schema_.n_col()});
}

template <class T>
typename DofenModel<T>::Tensor DofenModel<T>::construct_rodts(Tape& tape, const Tensor& conditions) const {
  const auto& s = conditions.shape();
  if (s.size() != 3 || s[1] != shapes_.n_cond || s[2] != schema_.n_col()) {
    throw ShapeError("conditions must be [B, " + std::to_string(shapes_.n_cond) + ", " +
                     std::to_string(schema_.n_col()) + "], got " + ad::shape_str(s));
  }
  return ad::batch_gather(tape, conditions, perm_.source, {shapes_.n_rodt, config_.depth});
}

template <class T>
typename DofenModel<T>::Tensor DofenModel<T>::compute_rodt_weights(Tape& tape, const Tensor& rodts,
                                                                  bool training) const {
  Tensor h = ad::group_layer_norm(tape, rodts, param("delta2.norm.gain"), param("delta2.norm.shift"));
  for (std::size_t k = 0; k < config_.delta2_layers; ++k) {
    const std::string prefix = "delta2.linear." + std::to_string(k);
    h = ad::grouped_linear(tape, h, param(prefix + ".weight"), param(prefix + ".bias"));
    if (k + 1 < config_.delta2_layers) {
      h = ad::relu(tape, h);
      h = ad::dropout(tape, h, config_.dropout_rate, training, dropout_rng_);
    }
  }
  return h;
}

template <class T>
typename DofenModel<T>::Tensor DofenModel<T>::predict_head(Tape& tape, const Tensor& f, bool training) const {
  const auto& s = f.shape();
  if (s.size() != 3 || s[2] != config_.n_hidden) {
    throw ShapeError("forest embeddings must be [B, R, " + std::to_string(config_.n_hidden) + "], got " +
                     ad::shape_str(s));
  }
  const std::size_t b = s[0], r = s[1];
  Tensor h = ad::reshape(tape, f, {b * r, 1, config_.n_hidden});
  h = ad::group_layer_norm(tape, h, param("delta3.norm.gain"), param("delta3.norm.shift"));
  for (std::size_t k = 0; k < config_.delta3_layers; ++k) {
    const std::string prefix = "delta3.linear." + std::to_string(k);
    h = ad::grouped_linear(tape, h, param(prefix + ".weight"), param(prefix + ".bias"));
    if (k + 1 < config_.delta3_layers) {
      h = ad::relu(tape, h);
      h = ad::dropout(tape, h, config_.dropout_rate, training, dropout_rng_);
    }
  }
  return ad::reshape(tape, h, {b, r, schema_.out_dim});
}

template <class T>
ForestOutput<T> DofenModel<T>::forest_forward(Tape& tape, const Tensor& weights, bool training,
                                              ForestPath path) const {
  const auto& s = weights.shape();
  if (s.size() != 3 || s[1] != shapes_.n_rodt || s[2] != config_.n_head) {
    throw ShapeError("rODT weights must be [B, " + std::to_string(shapes_.n_rodt) + ", " +
                     std::to_string(config_.n_head) + "], got " + ad::shape_str(s));
  }
  const Tensor& table = param("embedding");
  Tensor pooled;
  if (path == ForestPath::fused) {
    pooled = ad::forest_pool(tape, weights, table, plan_.members, plan_.offsets);
  } else {
    if (config_.n_head != 1) throw ConfigError("the single-head forest path requires N_head == 1");
    const std::size_t b = s[0];
    std::vector<Tensor> parts;
    parts.reserve(plan_.forests());
    for (std::size_t r = 0; r < plan_.forests(); ++r) {
      const auto row = plan_.row(r);
      auto w = ad::batch_gather(tape, weights, row, {row.size()});
      auto p = ad::softmax(tape, w);
      std::vector<std::int32_t> idx(row.begin(), row.end());
      auto e = ad::embedding_lookup(tape, table, idx, {row.size()});
      parts.push_back(ad::reshape(tape, ad::matmul(tape, p, e), {b, 1, config_.n_hidden}));
    }
    pooled = parts.size() == 1 ? parts.front() : ad::concat_axis1(tape, parts);
  }
  ForestOutput<T> out;
  out.per_forest = predict_head(tape, pooled, training);
  out.mean = ad::mean_axis1(tape, out.per_forest);
  return out;
}

template <class T>
LossOutput<T> DofenModel<T>::forward_loss(Tape& tape, const data::Batch& batch, bool training,
                                          ForestPath path) const {
  if (!batch.has_target) throw DataError("batch has no target column");
  auto m = generate_conditions(tape, batch);
  auto o = construct_rodts(tape, m);
  auto w = compute_rodt_weights(tape, o, training);
  auto fo = forest_forward(tape, w, training, path);

  const std::size_t b = batch.rows;
  const std::size_t r = plan_.forests();
  LossOutput<T> out{fo.mean, fo.per_forest, {}};
  Tensor mean_loss;
  if (schema_.task == data::TaskKind::classification) {
    std::vector<std::int32_t> labels(b * r);
    for (std::size_t i = 0; i < b; ++i) std::fill_n(labels.begin() + i * r, r, batch.labels.at(i));
    auto logits = ad::reshape(tape, fo.per_forest, {b * r, schema_.out_dim});
    mean_loss = ad::cross_entropy(tape, logits, labels);
  } else {
    std::vector<T> target(b * r);
    for (std::size_t i = 0; i < b; ++i) std::fill_n(target.begin() + i * r, r, static_cast<T>(batch.targets.at(i)));
    mean_loss = ad::mse(tape, ad::reshape(tape, fo.per_forest, {b * r}), Tensor::from({b * r}, std::move(target)));
  }
  // Sum over forests of each forest's batch-mean loss.
  out.loss = ad::scale(tape, mean_loss, static_cast<T>(r));
  return out;
}

template <class T>
Prediction DofenModel<T>::predict(const data::Batch& batch, ForestPath path) const {
  Tape tape = Tape::inference();
  auto m = generate_conditions(tape, batch);
  auto o = construct_rodts(tape, m);
  auto w = compute_rodt_weights(tape, o, false);
  auto fo = forest_forward(tape, w, false, path);

  Prediction p;
  p.task = schema_.task;
  p.rows = batch.rows;
  const std::size_t c = schema_.out_dim;
  if (schema_.task == data::TaskKind::regression) {
    auto v = fo.mean.data();
    p.scores.assign(v.begin(), v.end());
    return p;
  }
  p.num_classes = c;
  p.scores.assign(batch.rows * c, 0.0);
  std::vector<T> probs(c);
  if (config_.aggregation == ForestAggregation::logits) {
    auto v = fo.mean.data();
    for (std::size_t i = 0; i < batch.rows; ++i) {
      ad::softmax_row<T>(v.subspan(i * c, c), probs);
      for (std::size_t k = 0; k < c; ++k) p.scores[i * c + k] = probs[k];
    }
  } else {
    const std::size_t r = plan_.forests();
    auto v = fo.per_forest.data();
    for (std::size_t i = 0; i < batch.rows; ++i) {
      for (std::size_t f = 0; f < r; ++f) {
        ad::softmax_row<T>(v.subspan((i * r + f) * c, c), probs);
        for (std::size_t k = 0; k < c; ++k) p.scores[i * c + k] += probs[k];
      }
      for (std::size_t k = 0; k < c; ++k) p.scores[i * c + k] /= static_cast<double>(r);
    }
  }
  p.labels.resize(batch.rows);
  for (std::size_t i = 0; i < batch.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (p.scores[i * c + k] > p.scores[i * c + best]) best = k;
    }
    p.labels[i] = static_cast<std::int32_t>(best);
  }
  return p;
}

template class DofenModel<float>;
template class DofenModel<double>;

}  // namespace dofen
