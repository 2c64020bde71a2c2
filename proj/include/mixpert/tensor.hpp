// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float tensors with a per-thread reverse-mode tape.
//
// A Tensor is a cheap handle onto shared storage. Operations in ops.hpp that
// consume at least one tensor with requires_grad() append a backward closure
// to the calling thread's tape; backward() replays the tape in reverse and
// then clears it. Tensors with requires_grad() == false are frozen: they never
// receive gradient.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace mixpert {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Cache-line aligned storage. Vectorized kernels peel loops by alignment, so
// a fixed alignment keeps summation order, and thus results, reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

namespace detail {

struct TensorNode {
  Shape shape;
  FloatBuffer data;
  FloatBuffer grad;  // empty until first accumulation
  bool requires_grad = false;

  float* ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, float value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<float> data() { return node_->data; }
  std::span<const float> data() const { return node_->data; }
  float item() const;
  float at(std::size_t i) const { return node_->data.at(i); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<float> grad() { return node_->grad; }
  std::span<const float> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Detached deep copy that keeps the requires_grad flag.
  Tensor clone() const;
  // Same storage, viewed with a different shape of equal numel.
  Tensor reshaped(Shape shape) const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> node);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Throws NumericError naming `where` if any element is NaN or Inf.
void check_finite(const Tensor& t, const std::string& where);
bool all_finite(std::span<const float> values);

// Bitwise equality of shape and data.
bool bit_equal(const Tensor& a, const Tensor& b);

// --- tape --------------------------------------------------------------------

bool grad_enabled();

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Appends a backward closure for `output`. The closure runs only if
// `output` has received gradient by the time it is replayed.
void record(const Tensor& output, std::function<void()> backward_fn);
std::size_t tape_size();
void clear_tape();

// Replays the current thread's tape from a scalar loss and clears it.
void backward(const Tensor& loss);

// --- instrumentation ---------------------------------------------------------

// Per-thread count of floating point operations executed by the kernels in
// ops.cpp, using the conventions in accounting.hpp.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t count() const { return count_; }

  static void add(std::uint64_t flops);

 private:
  FlopCounter* previous_;
  std::uint64_t count_ = 0;
};

}  // namespace mixpert
