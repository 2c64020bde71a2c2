// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0
//
// FLOP conventions shared by the runtime counter in the kernels and the
// closed-form estimates in accounting. One multiply-accumulate is 2 FLOPs;
// elementwise nonlinearities are charged a fixed per-element cost.

#pragma once

#include <cstdint>

namespace mixpert::flops {

inline constexpr std::uint64_t kPerMac = 2;
// mean, center, square-accumulate (2), normalize, scale, shift
inline constexpr std::uint64_t kLayerNormPerElement = 7;
inline constexpr std::uint64_t kGeluPerElement = 8;
// shift by max (1), exp (1), accumulate (1), divide (1), max scan (1)
inline constexpr std::uint64_t kSoftmaxPerElement = 5;
inline constexpr std::uint64_t kAddPerElement = 1;
// 1/sqrt(head_dim) applied to every query element before the score matmul
inline constexpr std::uint64_t kScalePerElement = 1;

}  // namespace mixpert::flops
