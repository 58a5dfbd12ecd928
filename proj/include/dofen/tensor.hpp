// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dofen/error.hpp"

namespace dofen::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

// Shared handle to a node. Copies alias the same storage; values are treated
// as immutable once an op has consumed them, grads are the only mutable slot.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    return Tensor(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor({}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Only for leaves (parameters, inputs) that no live tape has consumed.
  std::span<T> mutable_data() { return node_->value; }
  T item() const { return node_->value.at(0); }
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  Tensor detach() const { return Tensor(node_->shape, node_->value, false); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  Tensor(Shape shape, std::vector<T> values, bool requires_grad)
      : node_(std::make_shared<Node<T>>()) {
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  std::shared_ptr<Node<T>> node_;
};

// Record of executed ops. Graphs are rebuilt per forward pass; backward() walks
// the records in exact reverse order, so an op's inputs are always finished
// before it runs.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // A tape that records nothing; ops run forward only.
  static Tape inference() {
    Tape t;
    t.recording_ = false;
    return t;
  }

  bool recording() const { return recording_; }
  std::size_t size() const { return records_.size(); }

  // Called by ops. The backward rule reads output->grad and accumulates into
  // its inputs' grads.
  void record(std::shared_ptr<Node<T>> output, std::function<void()> backward) {
    records_.push_back({std::move(output), std::move(backward)});
  }

  bool produced(const Tensor<T>& t) const {
    return std::any_of(records_.begin(), records_.end(),
                       [&](const Record& r) { return r.output.get() == t.node(); });
  }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!produced(loss)) {
      throw Error("backward(): loss was not produced on this tape");
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (!it->output->grad.empty()) it->backward();
    }
  }

  void clear() { records_.clear(); }

 private:
  struct Record {
    std::shared_ptr<Node<T>> output;
    std::function<void()> backward;
  };
  std::vector<Record> records_;
  bool recording_ = true;
};

}  // namespace dofen::ad
