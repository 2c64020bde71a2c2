// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

#include "mixpert/tensor.hpp"

namespace mixpert::nn {

// y[n,out] = x[n,in] * weight[out,in]^T + bias[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);

// tokens[batch*T, d] + positions[T, d], broadcast over the batch.
Tensor add_positions(const Tensor& tokens, const Tensor& positions);

// Row-wise normalization over the last axis of a rank-2 tensor.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

// GELU, tanh form.
Tensor gelu(const Tensor& x);

// Multi-head scaled dot-product self-attention core.
// qkv is [batch*T, 3d] laid out as [q | k | v]; returns [batch*T, d].
Tensor attention(const Tensor& qkv, std::size_t batch, std::size_t heads);

// Softmax over the last axis of a rank-1 or rank-2 tensor.
Tensor softmax(const Tensor& logits);

// [groups*T, d] -> [groups, d], mean over each run of T rows.
Tensor mean_pool(const Tensor& x, std::size_t groups);

// Sum of per-row cross-entropy divided by `divisor` (0 means the row count).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, double divisor = 0.0);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

Tensor sum(const Tensor& x);
Tensor sum_squares(const Tensor& x);

}  // namespace mixpert::nn
