// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Independent double-precision reference implementations of every layer, and
// a central finite-difference gradient checker built on them. The library's
// float autograd gradients are compared against finite differences of the
// double references, so neither the forward kernels nor the backward closures
// are trusted.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mixpert/encoder.hpp"
#include "mixpert/layers.hpp"
#include "mixpert/ops.hpp"
#include "mixpert/rng.hpp"
#include "mixpert/router.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec to_vec(const mixpert::Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

inline mixpert::Tensor random_tensor(mixpert::Shape shape, mixpert::Rng& rng, double scale = 1.0,
                                     bool requires_grad = true) {
  mixpert::Tensor t(shape, requires_grad);
  for (auto& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

// y[n, out] = x[n, in] W^T + b
inline Vec linear(const Vec& x, const Vec& w, const Vec& b, std::size_t n, std::size_t in, std::size_t out) {
  Vec y(n * out);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t k = 0; k < in; ++k) s += x[i * in + k] * w[o * in + k];
      y[i * out + o] = s;
    }
  }
  return y;
}

inline Vec layer_norm(const Vec& x, const Vec& g, const Vec& b, std::size_t n, std::size_t d, double eps = 1e-5) {
  Vec y(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[i * d + j];
    mean /= double(d);
    for (std::size_t j = 0; j < d; ++j) var += (x[i * d + j] - mean) * (x[i * d + j] - mean);
    var /= double(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = (x[i * d + j] - mean) * inv * g[j] + b[j];
  }
  return y;
}

inline double gelu1(double x) {
  const double c = std::sqrt(2.0 / M_PI);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline Vec gelu(Vec x) {
  for (auto& v : x) v = gelu1(v);
  return x;
}

inline Vec add(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline Vec softmax_rows(const Vec& x, std::size_t n, std::size_t k) {
  Vec y(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = x[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, x[i * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(x[i * k + j] - mx);
    for (std::size_t j = 0; j < k; ++j) y[i * k + j] = std::exp(x[i * k + j] - mx) / z;
  }
  return y;
}

// Mean cross-entropy over rows.
inline double cross_entropy(const Vec& logits, const std::vector<int>& labels, std::size_t k) {
  const std::size_t n = labels.size();
  const Vec p = softmax_rows(logits, n, k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total -= std::log(p[i * k + std::size_t(labels[i])]);
  return total / double(n);
}

// qkv[B*T, 3d] with columns [q | k | v]; head h owns columns h*dh..(h+1)*dh
// inside each third.
inline Vec attention(const Vec& qkv, std::size_t batch, std::size_t t, std::size_t d, std::size_t heads) {
  const std::size_t dh = d / heads, w = 3 * d;
  const double scale = 1.0 / std::sqrt(double(dh));
  Vec y(batch * t * d, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < t; ++i) {
        Vec s(t);
        for (std::size_t j = 0; j < t; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) {
            dot += qkv[(b * t + i) * w + h * dh + c] * qkv[(b * t + j) * w + d + h * dh + c];
          }
          s[j] = dot * scale;
        }
        const Vec p = softmax_rows(s, 1, t);
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < t; ++j) acc += p[j] * qkv[(b * t + j) * w + 2 * d + h * dh + c];
          y[(b * t + i) * d + h * dh + c] = acc;
        }
      }
    }
  }
  return y;
}

// [groups * rows, d] -> [groups, d]
inline Vec mean_pool(const Vec& x, std::size_t groups, std::size_t d) {
  const std::size_t rows = x.size() / d / groups;
  Vec y(groups * d, 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) y[g * d + j] += x[(g * rows + r) * d + j];
    }
  }
  for (auto& v : y) v /= double(rows);
  return y;
}

// Parameter order: norm1 g, b; qkv W, b; out W, b; norm2 g, b; fc1 W, b; fc2 W, b.
inline Vec block(const Vec& x, const std::vector<Vec>& p, std::size_t batch, std::size_t t, std::size_t d,
                 std::size_t heads, std::size_t hidden) {
  const std::size_t n = batch * t;
  const Vec a = attention(linear(layer_norm(x, p[0], p[1], n, d), p[2], p[3], n, d, 3 * d), batch, t, d, heads);
  const Vec x1 = add(x, linear(a, p[4], p[5], n, d, d));
  const Vec m = linear(gelu(linear(layer_norm(x1, p[6], p[7], n, d), p[8], p[9], n, d, hidden)), p[10], p[11], n,
                       hidden, d);
  return add(x1, m);
}

inline std::vector<mixpert::Tensor> block_tensors(const mixpert::EncoderBlock& b) {
  return {b.norm1.gamma, b.norm1.beta, b.qkv.weight, b.qkv.bias, b.out.weight, b.out.bias,
          b.norm2.gamma, b.norm2.beta, b.fc1.weight, b.fc1.bias, b.fc2.weight, b.fc2.bias};
}

// --- gradient check ------------------------------------------------------------

struct GradCase {
  std::string name;
  // Every tensor whose gradient is checked: inputs and parameters.
  std::vector<mixpert::Tensor> leaves;
  // Library forward on the leaves (recorded on the tape).
  std::function<mixpert::Tensor()> forward;
  // Double reference on the leaves' values, same output layout.
  std::function<Vec(const std::vector<Vec>&)> reference;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_forward_error = 0.0;  // |library - reference| / (1 + |reference|)
  std::size_t elements = 0;
  std::string worst;  // "<leaf>[<index>]"
};

// Loss = sum(y * r) with a fixed random r. Relative error per element is
// |analytic - numeric| / max(|analytic|, |numeric|, floor), where the floor is
// 1e-3 of the largest numeric gradient magnitude of that leaf so that entries
// which are zero up to rounding do not divide by zero.
inline GradCheckResult gradcheck(const GradCase& c, mixpert::Rng& rng) {
  using mixpert::Tensor;
  mixpert::clear_tape();
  for (auto leaf : c.leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  const Tensor y = c.forward();
  Tensor weights(y.shape(), false);
  for (auto& v : weights.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  const Vec r = to_vec(weights);
  mixpert::backward(mixpert::nn::sum(mixpert::nn::mul(y, weights)));

  std::vector<Vec> values;
  for (const auto& leaf : c.leaves) values.push_back(to_vec(leaf));
  auto loss = [&](const std::vector<Vec>& v) {
    const Vec out = c.reference(v);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
    return s;
  };

  GradCheckResult res;
  const Vec ref = c.reference(values);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    res.max_forward_error = std::max(res.max_forward_error, std::abs(double(y.data()[i]) - ref[i]) / (1.0 + std::abs(ref[i])));
  }
  for (std::size_t l = 0; l < c.leaves.size(); ++l) {
    const auto& leaf = c.leaves[l];
    Vec numeric(values[l].size());
    for (std::size_t j = 0; j < values[l].size(); ++j) {
      const double x0 = values[l][j];
      const double h = 1e-6 * std::max(1.0, std::abs(x0));
      values[l][j] = x0 + h;
      const double lp = loss(values);
      values[l][j] = x0 - h;
      const double lm = loss(values);
      values[l][j] = x0;
      numeric[j] = (lp - lm) / (2.0 * h);
    }
    double scale = 0.0;
    for (double g : numeric) scale = std::max(scale, std::abs(g));
    const double floor = std::max(1e-3 * scale, 1e-12);
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      const double a = leaf.has_grad() ? double(leaf.grad()[j]) : 0.0;
      const double err = std::abs(a - numeric[j]) / std::max({std::abs(a), std::abs(numeric[j]), floor});
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = "leaf " + std::to_string(l) + "[" + std::to_string(j) + "]";
      }
      ++res.elements;
    }
  }
  mixpert::clear_tape();
  return res;
}

// One case per layer type, with small shapes so finite differences are cheap.
// `trial` varies shapes and values.
inline std::vector<GradCase> layer_cases(std::uint64_t seed, std::size_t trial) {
  using namespace mixpert;
  Rng rng(derive_seed({seed, 0x6AD, trial}));
  const std::size_t batch = 1 + trial % 2, t = 3 + trial % 3, d = 4 * (1 + trial % 2), heads = 1 + trial % 2;
  const std::size_t n = batch * t, hidden = 2 * d;
  std::vector<GradCase> cases;

  {
    LinearLayer lin = LinearLayer::create(d, hidden, rng, 0.5f);
    lin.bias = random_tensor({hidden}, rng, 0.5);
    Tensor x = random_tensor({n, d}, rng);
    cases.push_back({"linear", {x, lin.weight, lin.bias}, [=] { return lin.forward(x); },
                     [=](const std::vector<Vec>& v) { return linear(v[0], v[1], v[2], n, d, hidden); }});
  }
  {
    LayerNorm ln = LayerNorm::create(d);
    ln.gamma = random_tensor({d}, rng);
    ln.beta = random_tensor({d}, rng);
    Tensor x = random_tensor({n, d}, rng, 2.0);
    cases.push_back({"layer_norm", {x, ln.gamma, ln.beta}, [=] { return ln.forward(x); },
                     [=](const std::vector<Vec>& v) { return layer_norm(v[0], v[1], v[2], n, d); }});
  }
  {
    Tensor x = random_tensor({n, d}, rng, 2.0);
    cases.push_back({"gelu", {x}, [=] { return nn::gelu(x); }, [=](const std::vector<Vec>& v) { return gelu(v[0]); }});
  }
  {
    Tensor qkv = random_tensor({n, 3 * d}, rng);
    cases.push_back({"attention", {qkv}, [=] { return nn::attention(qkv, batch, heads); },
                     [=](const std::vector<Vec>& v) { return attention(v[0], batch, t, d, heads); }});
  }
  {
    Tensor x = random_tensor({n, d}, rng, 2.0);
    cases.push_back({"softmax", {x}, [=] { return nn::softmax(x); },
                     [=](const std::vector<Vec>& v) { return softmax_rows(v[0], n, d); }});
  }
  {
    Tensor x = random_tensor({n, d}, rng, 2.0);
    std::vector<int> labels(n);
    for (auto& l : labels) l = rng.uniform_int(0, int(d) - 1);
    cases.push_back({"cross_entropy", {x}, [=] { return nn::cross_entropy(x, labels); },
                     [=](const std::vector<Vec>& v) { return Vec{cross_entropy(v[0], labels, d)}; }});
  }
  {
    Tensor x = random_tensor({n, d}, rng);
    cases.push_back({"mean_pool", {x}, [=] { return nn::mean_pool(x, batch); },
                     [=](const std::vector<Vec>& v) { return mean_pool(v[0], batch, d); }});
  }
  {
    EncoderBlock b = EncoderBlock::create(d, heads, 2, rng);
    for (Tensor* p : {&b.norm1.gamma, &b.norm1.beta, &b.norm2.gamma, &b.norm2.beta, &b.qkv.bias, &b.out.bias,
                      &b.fc1.bias, &b.fc2.bias}) {
      *p = random_tensor(p->shape(), rng, 0.5);
    }
    for (Tensor* p : {&b.qkv.weight, &b.out.weight, &b.fc1.weight, &b.fc2.weight}) *p = random_tensor(p->shape(), rng, 0.4);
    Tensor x = random_tensor({n, d}, rng);
    auto leaves = block_tensors(b);
    leaves.insert(leaves.begin(), x);
    cases.push_back({"encoder_block", leaves, [=] { return block_forward(x, b, batch); },
                     [=](const std::vector<Vec>& v) {
                       return block(v[0], std::vector<Vec>(v.begin() + 1, v.end()), batch, t, d, heads, hidden);
                     }});
  }
  {
    EncoderConfig c;
    c.image_size = 4 * (1 + trial % 2);
    c.patch_size = 2;
    c.embed_dim = d;
    const std::size_t tokens = c.tokens(), pd = c.patch_dim();
    PatchEmbedding e = PatchEmbedding::create(c, rng);
    e.proj.weight = random_tensor(e.proj.weight.shape(), rng, 0.5);
    e.proj.bias = random_tensor(e.proj.bias.shape(), rng, 0.5);
    e.positions = random_tensor(e.positions.shape(), rng, 0.5);
    Tensor patches = random_tensor({batch * tokens, pd}, rng);
    cases.push_back({"patch_embedding", {patches, e.proj.weight, e.proj.bias, e.positions},
                     [=] { return embed_patches(patches, e, batch); },
                     [=](const std::vector<Vec>& v) {
                       Vec y = linear(v[0], v[1], v[2], batch * tokens, pd, d);
                       for (std::size_t i = 0; i < y.size(); ++i) y[i] += v[3][i % (tokens * d)];
                       return y;
                     }});
  }
  {
    EncoderConfig c;
    c.embed_dim = d;
    c.projector_hidden = hidden;
    c.projector_out = d + 1;
    Projector p = Projector::create(c, rng);
    for (Tensor* q : {&p.fc1.weight, &p.fc1.bias, &p.fc2.weight, &p.fc2.bias}) *q = random_tensor(q->shape(), rng, 0.5);
    Tensor x = random_tensor({n, d}, rng);
    cases.push_back({"projector", {x, p.fc1.weight, p.fc1.bias, p.fc2.weight, p.fc2.bias}, [=] { return p.forward(x); },
                     [=](const std::vector<Vec>& v) {
                       return linear(gelu(linear(v[0], v[1], v[2], n, d, hidden)), v[3], v[4], n, hidden, d + 1);
                     }});
  }
  {
    RouterNet r = RouterNet::create(d, hidden, rng);
    for (Tensor* q : {&r.fc1.weight, &r.fc1.bias, &r.fc2.weight, &r.fc2.bias}) *q = random_tensor(q->shape(), rng, 0.5);
    Tensor x = random_tensor({n, d}, rng);
    cases.push_back({"router", {x, r.fc1.weight, r.fc1.bias, r.fc2.weight, r.fc2.bias}, [=] { return r.logits(x); },
                     [=](const std::vector<Vec>& v) {
                       return linear(gelu(linear(v[0], v[1], v[2], n, d, hidden)), v[3], v[4], n, hidden, kNumDomains);
                     }});
  }
  return cases;
}

}  // namespace oracle
