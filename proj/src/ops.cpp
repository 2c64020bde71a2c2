// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mixpert/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "mixpert/error.hpp"
#include "mixpert/flops.hpp"

namespace mixpert::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using Node = std::shared_ptr<detail::TensorNode>;

constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2 / pi)
constexpr float kGeluA = 0.044715f;

bool tracks(const Tensor& t) { return t.requires_grad() && grad_enabled(); }

Tensor make_output(Shape shape, bool needs_grad) { return Tensor(std::move(shape), needs_grad); }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined() || t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                         (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

ConstMatMap as_matrix(const Tensor& t) { return {t.data().data(), Eigen::Index(t.dim(0)), Eigen::Index(t.dim(1))}; }

// Grad buffer of a node viewed as a matrix; allocates on first use.
MatMap grad_matrix(const Node& node, std::size_t rows, std::size_t cols) {
  return {node->ensure_grad(), Eigen::Index(rows), Eigen::Index(cols)};
}

ConstMatMap out_grad(const Node& node, std::size_t rows, std::size_t cols) {
  return {node->grad.data(), Eigen::Index(rows), Eigen::Index(cols)};
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  require_rank(bias, 1, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in || bias.dim(0) != out) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()) +
                         " / bias " + shape_str(bias.shape()));
  }
  const bool needs_grad = tracks(x) || tracks(weight) || tracks(bias);
  Tensor y = make_output({n, out}, needs_grad);
  MatMap ym(y.data().data(), Eigen::Index(n), Eigen::Index(out));
  ym.noalias() = as_matrix(x) * as_matrix(weight).transpose();
  const float* b = bias.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    float* row = y.data().data() + i * out;
    for (std::size_t j = 0; j < out; ++j) row[j] += b[j];
  }
  FlopCounter::add(flops::kPerMac * n * in * out + n * out);

  if (needs_grad) {
    Node xn = x.node(), wn = weight.node(), bn = bias.node(), yn = y.node();
    record(y, [xn, wn, bn, yn, n, in, out] {
      auto dy = out_grad(yn, n, out);
      if (xn->requires_grad) {
        grad_matrix(xn, n, in).noalias() += dy * ConstMatMap(wn->data.data(), Eigen::Index(out), Eigen::Index(in));
      }
      if (wn->requires_grad) {
        grad_matrix(wn, out, in).noalias() += dy.transpose() * ConstMatMap(xn->data.data(), Eigen::Index(n), Eigen::Index(in));
      }
      if (bn->requires_grad) {
        std::vector<double> acc(out, 0.0);
        const float* g = yn->grad.data();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < out; ++j) acc[j] += g[i * out + j];
        }
        float* db = bn->ensure_grad();
        for (std::size_t j = 0; j < out; ++j) db[j] += static_cast<float>(acc[j]);
      }
    });
  }
  return y;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + (a.defined() ? shape_str(a.shape()) : "?") +
                         " vs " + (b.defined() ? shape_str(b.shape()) : "?"));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool needs_grad = tracks(a) || tracks(b);
  Tensor y = make_output(a.shape(), needs_grad);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] + b.data()[i];
  FlopCounter::add(flops::kAddPerElement * n);
  if (needs_grad) {
    Node an = a.node(), bn = b.node(), yn = y.node();
    record(y, [an, bn, yn, n] {
      for (const Node& src : {an, bn}) {
        if (!src->requires_grad) continue;
        float* g = src->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += yn->grad[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool needs_grad = tracks(a) || tracks(b);
  Tensor y = make_output(a.shape(), needs_grad);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] * b.data()[i];
  if (needs_grad) {
    Node an = a.node(), bn = b.node(), yn = y.node();
    record(y, [an, bn, yn, n] {
      if (an->requires_grad) {
        float* g = an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += yn->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        float* g = bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += yn->grad[i] * an->data[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& x, float factor) {
  const bool needs_grad = tracks(x);
  Tensor y = make_output(x.shape(), needs_grad);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) y.data()[i] = x.data()[i] * factor;
  if (needs_grad) {
    Node xn = x.node(), yn = y.node();
    record(y, [xn, yn, n, factor] {
      float* g = xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += yn->grad[i] * factor;
    });
  }
  return y;
}

Tensor add_positions(const Tensor& tokens, const Tensor& positions) {
  require_rank(tokens, 2, "add_positions");
  require_rank(positions, 2, "add_positions");
  const std::size_t rows = tokens.dim(0), d = tokens.dim(1), t = positions.dim(0);
  if (positions.dim(1) != d || rows % t != 0) {
    throw DimensionError("add_positions: tokens " + shape_str(tokens.shape()) + " vs positions " +
                         shape_str(positions.shape()));
  }
  const bool needs_grad = tracks(tokens) || tracks(positions);
  Tensor y = make_output(tokens.shape(), needs_grad);
  const float* x = tokens.data().data();
  const float* p = positions.data().data();
  float* out = y.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* pr = p + (r % t) * d;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] + pr[j];
  }
  FlopCounter::add(flops::kAddPerElement * rows * d);
  if (needs_grad) {
    Node xn = tokens.node(), pn = positions.node(), yn = y.node();
    record(y, [xn, pn, yn, rows, d, t] {
      const float* dy = yn->grad.data();
      if (xn->requires_grad) {
        float* g = xn->ensure_grad();
        for (std::size_t i = 0; i < rows * d; ++i) g[i] += dy[i];
      }
      if (pn->requires_grad) {
        float* g = pn->ensure_grad();
        std::vector<double> acc(t * d, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t k = r % t;
          for (std::size_t j = 0; j < d; ++j) acc[k * d + j] += dy[r * d + j];
        }
        for (std::size_t i = 0; i < t * d; ++i) g[i] += static_cast<float>(acc[i]);
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: width " + std::to_string(d) + " vs gamma " + shape_str(gamma.shape()));
  }
  const bool needs_grad = tracks(x) || tracks(gamma) || tracks(beta);
  Tensor y = make_output(x.shape(), needs_grad);
  auto xhat = std::make_shared<FloatBuffer>(n * d);
  auto rstd = std::make_shared<FloatBuffer>(n);
  const float* xs = x.data().data();
  const float* gs = gamma.data().data();
  const float* bs = beta.data().data();
  float* ys = y.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = xs + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= double(d);
    const double r = 1.0 / std::sqrt(var + eps);
    (*rstd)[i] = static_cast<float>(r);
    for (std::size_t j = 0; j < d; ++j) {
      const float h = static_cast<float>((row[j] - mean) * r);
      (*xhat)[i * d + j] = h;
      ys[i * d + j] = h * gs[j] + bs[j];
    }
  }
  FlopCounter::add(flops::kLayerNormPerElement * n * d);
  if (needs_grad) {
    Node xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node();
    record(y, [xn, gn, bn, yn, xhat, rstd, n, d] {
      const float* dy = yn->grad.data();
      const float* g = gn->data.data();
      if (gn->requires_grad || bn->requires_grad) {
        float* dg = gn->requires_grad ? gn->ensure_grad() : nullptr;
        float* db = bn->requires_grad ? bn->ensure_grad() : nullptr;
        std::vector<double> ag(d, 0.0), ab(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            ag[j] += double(dy[i * d + j]) * (*xhat)[i * d + j];
            ab[j] += dy[i * d + j];
          }
        }
        for (std::size_t j = 0; j < d; ++j) {
          if (dg) dg[j] += static_cast<float>(ag[j]);
          if (db) db[j] += static_cast<float>(ab[j]);
        }
      }
      if (xn->requires_grad) {
        float* dx = xn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = double(dy[i * d + j]) * g[j];
            m1 += dh;
            m2 += dh * (*xhat)[i * d + j];
          }
          m1 /= double(d);
          m2 /= double(d);
          const double r = (*rstd)[i];
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = double(dy[i * d + j]) * g[j];
            dx[i * d + j] += static_cast<float>(r * (dh - m1 - (*xhat)[i * d + j] * m2));
          }
        }
      }
    });
  }
  return y;
}

// tanh-form GELU evaluated through s = exp(-2|u|) so that 1 + tanh(u) and
// 1 - tanh(u)^2 keep their relative accuracy in the tails, where a saturating
// float tanh would round them to zero.
Tensor gelu(const Tensor& x) {
  const bool needs_grad = tracks(x);
  Tensor y = make_output(x.shape(), needs_grad);
  const auto n = Eigen::Index(x.numel());
  Eigen::Map<const Eigen::ArrayXf> xs(x.data().data(), n);
  Eigen::Map<Eigen::ArrayXf> ys(y.data().data(), n);
  const Eigen::ArrayXf u = kGeluC * (xs + kGeluA * xs.cube());
  const Eigen::ArrayXf s = (-2.0f * u.abs()).exp();
  const Eigen::ArrayXf one_plus_tanh = (u >= 0.0f).select(2.0f / (1.0f + s), 2.0f * s / (1.0f + s));
  ys = 0.5f * xs * one_plus_tanh;
  FlopCounter::add(flops::kGeluPerElement * std::uint64_t(n));
  if (needs_grad) {
    Node xn = x.node(), yn = y.node();
    record(y, [xn, yn, n] {
      Eigen::Map<const Eigen::ArrayXf> xs(xn->data.data(), n);
      Eigen::Map<const Eigen::ArrayXf> dy(yn->grad.data(), n);
      Eigen::Map<Eigen::ArrayXf> dx(xn->ensure_grad(), n);
      const Eigen::ArrayXf u = kGeluC * (xs + kGeluA * xs.cube());
      const Eigen::ArrayXf s = (-2.0f * u.abs()).exp();
      const Eigen::ArrayXf one_plus_tanh = (u >= 0.0f).select(2.0f / (1.0f + s), 2.0f * s / (1.0f + s));
      const Eigen::ArrayXf sech2 = 4.0f * s / (1.0f + s).square();
      dx += dy * (0.5f * one_plus_tanh + 0.5f * xs * sech2 * kGeluC * (1.0f + 3.0f * kGeluA * xs.square()));
    });
  }
  return y;
}

Tensor attention(const Tensor& qkv, std::size_t batch, std::size_t heads) {
  require_rank(qkv, 2, "attention");
  const std::size_t rows = qkv.dim(0), width = qkv.dim(1);
  if (batch == 0 || heads == 0 || rows % batch != 0 || width % 3 != 0 || (width / 3) % heads != 0) {
    throw DimensionError("attention: qkv " + shape_str(qkv.shape()) + " with batch " + std::to_string(batch) +
                         ", heads " + std::to_string(heads));
  }
  const std::size_t t = rows / batch, d = width / 3, dh = d / heads;
  const float score_scale = static_cast<float>(1.0 / std::sqrt(double(dh)));
  const bool needs_grad = tracks(qkv);
  Tensor y = make_output({rows, d}, needs_grad);
  auto probs = std::make_shared<FloatBuffer>(batch * heads * t * t);
  const float* src = qkv.data().data();
  float* dst = y.data().data();
  RowMat scores(t, t), q(t, dh), k(t, dh), v(t, dh);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const float* base = src + b * t * width + h * dh;
      q = ConstStridedMap(base, t, dh, Eigen::OuterStride<>(width)) * score_scale;
      k = ConstStridedMap(base + d, t, dh, Eigen::OuterStride<>(width));
      v = ConstStridedMap(base + 2 * d, t, dh, Eigen::OuterStride<>(width));
      scores.noalias() = q * k.transpose();
      MatMap p(probs->data() + (b * heads + h) * t * t, t, t);
      for (std::size_t i = 0; i < t; ++i) {
        const float mx = scores.row(i).maxCoeff();
        p.row(i) = (scores.row(i).array() - mx).exp().matrix();
        double total = 0.0;
        for (std::size_t j = 0; j < t; ++j) total += p(i, j);
        p.row(i) *= static_cast<float>(1.0 / total);
      }
      StridedMap o(dst + b * t * d + h * dh, t, dh, Eigen::OuterStride<>(d));
      o.noalias() = p * v;
    }
  }
  FlopCounter::add(batch * heads *
                   (2 * flops::kPerMac * t * t * dh + flops::kScalePerElement * t * dh + flops::kSoftmaxPerElement * t * t));
  if (needs_grad) {
    Node xn = qkv.node(), yn = y.node();
    record(y, [xn, yn, probs, batch, heads, t, d, dh, width, score_scale] {
      float* dsrc = xn->ensure_grad();
      const float* src = xn->data.data();
      const float* dy = yn->grad.data();
      RowMat dp(t, t), q(t, dh), k(t, dh), v(t, dh), dout(t, dh);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = b * t * width + h * dh;
          q = ConstStridedMap(src + off, t, dh, Eigen::OuterStride<>(width));
          k = ConstStridedMap(src + off + d, t, dh, Eigen::OuterStride<>(width));
          v = ConstStridedMap(src + off + 2 * d, t, dh, Eigen::OuterStride<>(width));
          dout = ConstStridedMap(dy + b * t * d + h * dh, t, dh, Eigen::OuterStride<>(d));
          StridedMap dq(dsrc + off, t, dh, Eigen::OuterStride<>(width));
          StridedMap dk(dsrc + off + d, t, dh, Eigen::OuterStride<>(width));
          StridedMap dv(dsrc + off + 2 * d, t, dh, Eigen::OuterStride<>(width));
          ConstMatMap p(probs->data() + (b * heads + h) * t * t, t, t);
          dv.noalias() += p.transpose() * dout;
          dp.noalias() = dout * v.transpose();
          for (std::size_t i = 0; i < t; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < t; ++j) dot += double(p(i, j)) * dp(i, j);
            dp.row(i) = (p.row(i).array() * (dp.row(i).array() - static_cast<float>(dot)) * score_scale).matrix();
          }
          dq.noalias() += dp * k;
          dk.noalias() += dp.transpose() * q;
        }
      }
    });
  }
  return y;
}

Tensor softmax(const Tensor& logits) {
  if (!logits.defined() || logits.numel() == 0 || (logits.rank() != 1 && logits.rank() != 2)) {
    throw DimensionError("softmax: expected nonempty rank-1 or rank-2 input");
  }
  const std::size_t cols = logits.shape().back();
  const std::size_t rows = logits.numel() / cols;
  const bool needs_grad = tracks(logits);
  Tensor y = make_output(logits.shape(), needs_grad);
  const float* x = logits.data().data();
  float* out = y.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const float* row = x + i * cols;
    const float mx = *std::max_element(row, row + cols);
    double total = 0.0;
    std::vector<double> e(cols);
    for (std::size_t j = 0; j < cols; ++j) {
      e[j] = std::exp(double(row[j]) - double(mx));
      total += e[j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = static_cast<float>(e[j] / total);
  }
  FlopCounter::add(flops::kSoftmaxPerElement * rows * cols);
  if (needs_grad) {
    Node xn = logits.node(), yn = y.node();
    record(y, [xn, yn, rows, cols] {
      float* dx = xn->ensure_grad();
      const float* p = yn->data.data();
      const float* dy = yn->grad.data();
      for (std::size_t i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += double(p[i * cols + j]) * dy[i * cols + j];
        for (std::size_t j = 0; j < cols; ++j) {
          dx[i * cols + j] += static_cast<float>(p[i * cols + j] * (dy[i * cols + j] - dot));
        }
      }
    });
  }
  return y;
}

Tensor mean_pool(const Tensor& x, std::size_t groups) {
  require_rank(x, 2, "mean_pool");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (groups == 0 || rows % groups != 0) {
    throw DimensionError("mean_pool: " + std::to_string(rows) + " rows into " + std::to_string(groups) + " groups");
  }
  const std::size_t t = rows / groups;
  const bool needs_grad = tracks(x);
  Tensor y = make_output({groups, d}, needs_grad);
  const float* xs = x.data().data();
  std::vector<double> acc(d);
  for (std::size_t g = 0; g < groups; ++g) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t r = 0; r < t; ++r) {
      const float* row = xs + (g * t + r) * d;
      for (std::size_t j = 0; j < d; ++j) acc[j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) y.data()[g * d + j] = static_cast<float>(acc[j] / double(t));
  }
  FlopCounter::add(flops::kAddPerElement * rows * d + groups * d);
  if (needs_grad) {
    Node xn = x.node(), yn = y.node();
    record(y, [xn, yn, groups, t, d] {
      float* dx = xn->ensure_grad();
      const float inv = 1.0f / static_cast<float>(t);
      for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t r = 0; r < t; ++r) {
          for (std::size_t j = 0; j < d; ++j) dx[(g * t + r) * d + j] += yn->grad[g * d + j] * inv;
        }
      }
    });
  }
  return y;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, double divisor) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(n) + " rows but " + std::to_string(labels.size()) +
                         " labels");
  }
  for (int label : labels) {
    if (label < 0 || std::size_t(label) >= k) throw ContractError("cross_entropy: label out of range");
  }
  if (divisor <= 0.0) divisor = double(n);
  const bool needs_grad = tracks(logits);
  Tensor loss = make_output({1}, needs_grad);
  auto probs = std::make_shared<FloatBuffer>(n * k);
  const float* x = logits.data().data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = x + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    total += log_z - row[labels[i]];
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = static_cast<float>(std::exp(row[j] - log_z));
  }
  loss.data()[0] = static_cast<float>(total / divisor);
  if (needs_grad) {
    Node xn = logits.node(), ln = loss.node();
    std::vector<int> lbl(labels.begin(), labels.end());
    record(loss, [xn, ln, probs, lbl = std::move(lbl), n, k, divisor] {
      const double g = ln->grad[0] / divisor;
      float* dx = xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double target = (int(j) == lbl[i]) ? 1.0 : 0.0;
          dx[i * k + j] += static_cast<float>(((*probs)[i * k + j] - target) * g);
        }
      }
    });
  }
  return loss;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (rows.empty()) throw DimensionError("gather_rows: empty selection");
  for (auto r : rows) {
    if (r >= n) throw DimensionError("gather_rows: row " + std::to_string(r) + " out of " + std::to_string(n));
  }
  const bool needs_grad = tracks(x);
  Tensor y = make_output({rows.size(), d}, needs_grad);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.data().data() + rows[i] * d, d, y.data().data() + i * d);
  }
  if (needs_grad) {
    Node xn = x.node(), yn = y.node();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    record(y, [xn, yn, idx = std::move(idx), d] {
      float* dx = xn->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) dx[idx[i] * d + j] += yn->grad[i * d + j];
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  const bool needs_grad = tracks(x);
  Tensor y = make_output({1}, needs_grad);
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  y.data()[0] = static_cast<float>(acc);
  if (needs_grad) {
    Node xn = x.node(), yn = y.node();
    record(y, [xn, yn] {
      float* dx = xn->ensure_grad();
      for (std::size_t i = 0; i < xn->data.size(); ++i) dx[i] += yn->grad[0];
    });
  }
  return y;
}

Tensor sum_squares(const Tensor& x) {
  const bool needs_grad = tracks(x);
  Tensor y = make_output({1}, needs_grad);
  double acc = 0.0;
  for (float v : x.data()) acc += double(v) * v;
  y.data()[0] = static_cast<float>(acc);
  if (needs_grad) {
    Node xn = x.node(), yn = y.node();
    record(y, [xn, yn] {
      float* dx = xn->ensure_grad();
      for (std::size_t i = 0; i < xn->data.size(); ++i) dx[i] += 2.0f * xn->data[i] * yn->grad[0];
    });
  }
  return y;
}

}  // namespace mixpert::nn
