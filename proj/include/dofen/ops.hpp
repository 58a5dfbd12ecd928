// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

// Differentiable operators. Each op computes its forward value eagerly and, if
// the tape is recording and any input requires a gradient, pushes a backward
// rule. Reductions run sequentially in index order.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dofen/rng.hpp"
#include "dofen/tensor.hpp"

namespace dofen::ad {

inline constexpr double kNormEps = 1e-5;

// Max-subtracted softmax of one row. Shared by softmax() and forest_pool().
template <class T>
void softmax_row(std::span<const T> in, std::span<T> out);

// out[b,g,:] = input[b,g,:] * weight[g] + bias[g].
// input [B,G,I], weight [G,I,O], bias [G,O] -> [B,G,O].
template <class T>
Tensor<T> grouped_linear(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                         const Tensor<T>& bias);

// Normalizes each input[b,g,:] over its I entries, then applies gain/shift [G,I].
template <class T>
Tensor<T> group_layer_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gain,
                           const Tensor<T>& shift, double eps = kNormEps);

template <class T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input);

// Softmax over the trailing axis. NaN inputs propagate to NaN outputs.
template <class T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& input);

// Gathers rows of table [V,D]; result shape is index_shape + [D]. Backward
// scatter-adds, so repeated indices accumulate.
template <class T>
Tensor<T> embedding_lookup(Tape<T>& tape, const Tensor<T>& table,
                           std::span<const std::int32_t> indices, const Shape& index_shape);

// Inverted dropout. Returns the input handle unchanged when !training or rate == 0.
template <class T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& input, double rate, bool training,
                  CounterRng& rng);

// Mean over the batch of -log softmax(logits)[label]; logits [B,C].
template <class T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                        std::span<const std::int32_t> labels);

// Mean squared error over all elements; shapes must hold the same count.
template <class T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target);

// Per-sample gather: out[b, i] = input[b, index[i]] with both sides flattened
// past the leading axis. Result shape is [B] + tail_shape.
template <class T>
Tensor<T> batch_gather(Tape<T>& tape, const Tensor<T>& input,
                       std::span<const std::uint32_t> index, const Shape& tail_shape);

// Concatenates [B, a_k, ...] tensors along axis 1.
template <class T>
Tensor<T> concat_axis1(Tape<T>& tape, const std::vector<Tensor<T>>& parts);

template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& input, const Shape& shape);

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor);

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input);

// a [B,K] x b [K,D] -> [B,D].
template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// Mean over axis 1 of [B,R,O] -> [B,O].
template <class T>
Tensor<T> mean_axis1(Tape<T>& tape, const Tensor<T>& input);

// Softmax-weighted pooling of embedding rows, one group per forest.
//
// weights [B,N,H], table [N,D] with D divisible by H. Forest r owns the member
// rows members[offsets[r] .. offsets[r+1]). For each (b, r, head h) the weights
// of the members are softmaxed and used to sum the h-th D/H slice of their
// table rows. Output [B,R,D] is the head slices concatenated.
template <class T>
Tensor<T> forest_pool(Tape<T>& tape, const Tensor<T>& weights, const Tensor<T>& table,
                      std::span<const std::uint32_t> members,
                      std::span<const std::uint32_t> offsets);

}  // namespace dofen::ad
