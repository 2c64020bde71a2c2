// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mixpert/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "mixpert/error.hpp"

namespace mixpert {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

float* detail::TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad.data();
}

Tensor::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<detail::TensorNode>()) {
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  node_->data.assign(shape_numel(shape), 0.0f);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad) : Tensor(shape, requires_grad) {
  if (values.size() != node_->data.size()) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  node_->data.assign(values.begin(), values.end());
}

Tensor Tensor::filled(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

float Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::clone() const {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->requires_grad = node_->requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(node_->shape) + " to " + shape_str(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = node_->data;
  node->requires_grad = node_->requires_grad;
  Tensor out = wrap(node);
  if (node_->requires_grad && grad_enabled()) {
    auto src = node_;
    record(out, [src, node] {
      float* g = src->ensure_grad();
      for (std::size_t i = 0; i < node->grad.size(); ++i) g[i] += node->grad[i];
    });
  }
  return out;
}

bool all_finite(std::span<const float> values) {
  for (float v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_finite(const Tensor& t, const std::string& where) {
  if (!all_finite(t.data())) throw NumericError("non-finite value in " + where);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

// --- tape --------------------------------------------------------------------

namespace {

struct TapeEntry {
  std::shared_ptr<detail::TensorNode> output;
  std::function<void()> backward_fn;
};

thread_local std::vector<TapeEntry> t_tape;
thread_local bool t_grad_enabled = true;
thread_local FlopCounter* t_flop_counter = nullptr;

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void record(const Tensor& output, std::function<void()> backward_fn) {
  t_tape.push_back({output.node(), std::move(backward_fn)});
}

std::size_t tape_size() { return t_tape.size(); }
void clear_tape() { t_tape.clear(); }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  if (!loss.requires_grad()) {
    clear_tape();
    throw ContractError("backward() on a loss with no recorded graph");
  }
  if (!std::isfinite(loss.item())) {
    clear_tape();
    throw NumericError("non-finite loss");
  }
  loss.node()->ensure_grad()[0] += 1.0f;
  // Move the tape out so closures that record (none should) cannot invalidate it.
  std::vector<TapeEntry> tape;
  tape.swap(t_tape);
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward_fn();
    if (!all_finite(it->output->grad)) throw NumericError("non-finite gradient during backward");
  }
}

FlopCounter::FlopCounter() : previous_(t_flop_counter) { t_flop_counter = this; }
FlopCounter::~FlopCounter() { t_flop_counter = previous_; }

void FlopCounter::add(std::uint64_t flops) {
  for (auto* c = t_flop_counter; c != nullptr; c = c->previous_) c->count_ += flops;
}

}  // namespace mixpert
