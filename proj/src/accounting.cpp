// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mixpert/accounting.hpp"

#include <algorithm>
#include <sstream>

#include "mixpert/error.hpp"
#include "mixpert/flops.hpp"

namespace mixpert {

namespace {

std::vector<std::size_t> default_heads() {
  std::vector<std::size_t> k;
  for (auto d : kAllDomains) k.push_back(task_classes(d));
  return k;
}

std::size_t check_head(const ModelLayout& layout, std::size_t head_index) {
  if (head_index >= layout.head_classes.size()) {
    throw ContractError("head index " + std::to_string(head_index) + " out of range");
  }
  return layout.head_classes[head_index];
}

std::uint64_t all_heads_params(const ModelLayout& layout) {
  std::uint64_t total = 0;
  for (auto k : layout.head_classes) total += head_params(layout.encoder, k);
  return total;
}

}  // namespace

ModelLayout ModelLayout::monolithic(const EncoderConfig& encoder) {
  encoder.validate();
  ModelLayout l;
  l.name = "monolithic";
  l.encoder = encoder;
  l.head_classes = default_heads();
  return l;
}

ModelLayout ModelLayout::mixpert(const MixpertConfig& config) {
  config.validate();
  ModelLayout l;
  l.name = "mixpert";
  l.encoder = config.encoder;
  l.stored_branches = kNumExperts;
  l.has_router = true;
  l.router_hidden = config.router_hidden;
  l.head_classes = default_heads();
  return l;
}

// --- parameters --------------------------------------------------------------

std::uint64_t linear_params(std::size_t in, std::size_t out) { return std::uint64_t(in) * out + out; }

std::uint64_t block_params(const EncoderConfig& c) {
  const std::size_t d = c.embed_dim, hidden = c.mlp_ratio * d;
  return 2 * (2 * std::uint64_t(d)) + linear_params(d, 3 * d) + linear_params(d, d) + linear_params(d, hidden) +
         linear_params(hidden, d);
}

std::uint64_t embedding_params(const EncoderConfig& c) {
  return linear_params(c.patch_dim(), c.embed_dim) + std::uint64_t(c.tokens()) * c.embed_dim;
}

std::uint64_t projector_params(const EncoderConfig& c) {
  return linear_params(c.embed_dim, c.projector_hidden) + linear_params(c.projector_hidden, c.projector_out);
}

std::uint64_t branch_params(const EncoderConfig& c, std::size_t layers) {
  return layers * block_params(c) + projector_params(c);
}

std::uint64_t trunk_params(const EncoderConfig& c) { return embedding_params(c) + c.shared_layers * block_params(c); }

std::uint64_t router_params(std::size_t in, std::size_t hidden) {
  return linear_params(in, hidden) + linear_params(hidden, kNumDomains);
}

std::uint64_t head_params(const EncoderConfig& c, std::size_t classes) { return linear_params(c.projector_out, classes); }

std::uint64_t total_params(const ModelLayout& l) {
  return trunk_params(l.encoder) + l.stored_branches * branch_params(l.encoder, l.encoder.expert_layers()) +
         (l.has_router ? router_params(l.encoder.embed_dim, l.router_hidden) : 0) + all_heads_params(l);
}

std::uint64_t activated_params(const ModelLayout& l, std::size_t head_index) {
  return trunk_params(l.encoder) + branch_params(l.encoder, l.encoder.expert_layers()) +
         (l.has_router ? router_params(l.encoder.embed_dim, l.router_hidden) : 0) +
         head_params(l.encoder, check_head(l, head_index));
}

std::uint64_t count_activated(const ModelLayout& layout, const RoutingDecision& decision) {
  return activated_params(layout, domain_index(decision.top_domain));
}

std::uint64_t count_params(const MonolithicModel& model) { return count_elements(model.parameters()); }
std::uint64_t count_params(const MixpertModel& model) { return count_elements(model.parameters()); }

// --- FLOPs -------------------------------------------------------------------

std::uint64_t linear_flops(std::size_t rows, std::size_t in, std::size_t out) {
  return flops::kPerMac * std::uint64_t(rows) * in * out + std::uint64_t(rows) * out;
}

BlockFlops block_flops(const EncoderConfig& c) {
  const std::uint64_t t = c.tokens(), d = c.embed_dim, hidden = c.mlp_ratio * c.embed_dim;
  const std::uint64_t dh = d / c.heads;
  BlockFlops f;
  f.matmul = flops::kPerMac * t * (d * 3 * d + d * d + d * hidden + hidden * d);
  f.bias = t * (3 * d + d + hidden + d);
  f.attention = c.heads * (2 * flops::kPerMac * t * t * dh + flops::kScalePerElement * t * dh +
                           flops::kSoftmaxPerElement * t * t);
  f.norm = 2 * flops::kLayerNormPerElement * t * d;
  f.activation = flops::kGeluPerElement * t * hidden;
  f.residual = 2 * flops::kAddPerElement * t * d;
  return f;
}

std::uint64_t embedding_flops(const EncoderConfig& c) {
  return linear_flops(c.tokens(), c.patch_dim(), c.embed_dim) + flops::kAddPerElement * c.tokens() * c.embed_dim;
}

std::uint64_t projector_flops(const EncoderConfig& c) {
  return linear_flops(c.tokens(), c.embed_dim, c.projector_hidden) +
         flops::kGeluPerElement * c.tokens() * c.projector_hidden +
         linear_flops(c.tokens(), c.projector_hidden, c.projector_out);
}

std::uint64_t branch_flops(const EncoderConfig& c, std::size_t layers) {
  return layers * block_flops(c).total() + projector_flops(c);
}

std::uint64_t trunk_flops(const EncoderConfig& c) { return embedding_flops(c) + c.shared_layers * block_flops(c).total(); }

std::uint64_t router_flops(const EncoderConfig& c, std::size_t hidden) {
  const std::uint64_t pool = flops::kAddPerElement * c.tokens() * c.embed_dim + c.embed_dim;
  return pool + linear_flops(1, c.embed_dim, hidden) + flops::kGeluPerElement * hidden +
         linear_flops(1, hidden, kNumDomains) + flops::kSoftmaxPerElement * kNumDomains;
}

std::uint64_t head_flops(const EncoderConfig& c, std::size_t classes) {
  const std::uint64_t pool = flops::kAddPerElement * c.tokens() * c.projector_out + c.projector_out;
  return pool + linear_flops(1, c.projector_out, classes);
}

std::uint64_t count_flops(const ModelLayout& l, std::size_t head_index) {
  return trunk_flops(l.encoder) + branch_flops(l.encoder, l.encoder.expert_layers()) +
         (l.has_router ? router_flops(l.encoder, l.router_hidden) : 0) + head_flops(l.encoder, check_head(l, head_index));
}

// --- reports -----------------------------------------------------------------

CostReport cost_report(const ModelLayout& l, std::size_t head_index) {
  const EncoderConfig& c = l.encoder;
  CostReport r;
  r.model = l.name;
  r.total_params = total_params(l);
  r.activated_params = activated_params(l, head_index);
  r.flops_per_image = count_flops(l, head_index);
  r.breakdown.push_back({"embedding", embedding_params(c), embedding_flops(c)});
  r.breakdown.push_back({"shared blocks", c.shared_layers * block_params(c), c.shared_layers * block_flops(c).total()});
  const std::string branches = l.stored_branches == 1 ? "deep blocks + projector"
                                                      : "expert branches x" + std::to_string(l.stored_branches);
  r.breakdown.push_back({branches, l.stored_branches * branch_params(c, c.expert_layers()),
                         branch_flops(c, c.expert_layers())});
  if (l.has_router) r.breakdown.push_back({"router", router_params(c.embed_dim, l.router_hidden), router_flops(c, l.router_hidden)});
  r.breakdown.push_back({"task heads", all_heads_params(l), head_flops(c, check_head(l, head_index))});
  return r;
}

namespace {

std::string pad(const std::string& s, std::size_t width, bool right) {
  if (s.size() >= width) return s;
  return right ? std::string(width - s.size(), ' ') + s : s + std::string(width - s.size(), ' ');
}

std::string render_rows(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    width.resize(std::max(width.size(), row.size()));
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream os;
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) line += "  ";
      line += pad(row[i], width[i], i > 0);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << "\n";
  }
  return os.str();
}

}  // namespace

std::string render_cost_table(std::span<const CostReport> reports) {
  std::vector<std::vector<std::string>> rows{{"model", "component", "params", "flops/image"}};
  for (const auto& r : reports) {
    for (const auto& c : r.breakdown) rows.push_back({r.model, c.component, std::to_string(c.params), std::to_string(c.flops)});
    rows.push_back({r.model, "total", std::to_string(r.total_params), std::to_string(r.flops_per_image)});
    rows.push_back({r.model, "activated", std::to_string(r.activated_params), ""});
  }
  if (reports.size() == 2) {
    const auto& a = reports[0];
    const auto& b = reports[1];
    rows.push_back({"delta", "activated", std::to_string(std::int64_t(b.activated_params - a.activated_params)),
                    std::to_string(std::int64_t(b.flops_per_image - a.flops_per_image))});
  }
  return render_rows(rows);
}

std::string render_cost_csv(std::span<const CostReport> reports) {
  std::ostringstream os;
  os << kCostCsvHeader << "\nmodel,component,params,flops_per_image\n";
  for (const auto& r : reports) {
    for (const auto& c : r.breakdown) os << r.model << "," << c.component << "," << c.params << "," << c.flops << "\n";
    os << r.model << ",total," << r.total_params << "," << r.flops_per_image << "\n";
    os << r.model << ",activated," << r.activated_params << ",\n";
  }
  return os.str();
}

std::vector<ScanRow> scan_layers(const EncoderConfig& c, std::span<const std::size_t> expert_layers,
                                 std::size_t router_hidden) {
  std::vector<ScanRow> rows;
  for (auto le : expert_layers) {
    if (le > c.total_layers) {
      throw ConfigError("expert layers " + std::to_string(le) + " exceed total_layers " + std::to_string(c.total_layers));
    }
    EncoderConfig split = c;
    split.shared_layers = c.total_layers - le;
    ScanRow row;
    row.expert_layers = le;
    row.additional_params = (kNumExperts - 1) * branch_params(split, le);
    row.additional_params_with_router = row.additional_params + router_params(c.embed_dim, router_hidden);
    rows.push_back(row);
  }
  return rows;
}

std::string render_scan_table(std::span<const ScanRow> rows) {
  std::vector<std::vector<std::string>> out{{"expert_layers", "additional_params", "with_router"}};
  for (const auto& r : rows) {
    out.push_back({std::to_string(r.expert_layers) + " + projector", std::to_string(r.additional_params),
                   std::to_string(r.additional_params_with_router)});
  }
  return render_rows(out);
}

std::string render_scan_csv(std::span<const ScanRow> rows) {
  std::ostringstream os;
  os << "# mixpert-scan v1\nexpert_layers,additional_params,additional_params_with_router\n";
  for (const auto& r : rows) os << r.expert_layers << "," << r.additional_params << "," << r.additional_params_with_router << "\n";
  return os.str();
}

}  // namespace mixpert
