// SPDX-License-Identifier: Apache-2.0
#include "vsr/arch/cost.hpp"

#include <cstdio>

namespace vsr::arch {

std::int64_t layer_params(const LayerSpec& s) {
  auto kprod = [&]() {
    std::int64_t p = 1;
    for (auto k : s.kernel) p *= k;
    return p;
  };
  switch (s.kind) {
    case LayerKind::conv1d:
    case LayerKind::conv2d:
    case LayerKind::conv3d:
    case LayerKind::depthwise_conv:
    case LayerKind::pointwise_conv:
      return s.c_out * (s.c_in / s.groups) * kprod() + (s.has_bias ? s.c_out : 0);
    case LayerKind::batchnorm:
      return 2 * s.c_in;
    case LayerKind::activation:
      return s.act_params;
    case LayerKind::linear:
      return s.c_out * s.c_in + (s.has_bias ? s.c_out : 0);
    default:
      return 0;
  }
}

std::int64_t layer_macs(const LayerSpec& s, const Shape& out_shape) {
  auto kprod = [&]() {
    std::int64_t p = 1;
    for (auto k : s.kernel) p *= k;
    return p;
  };
  switch (s.kind) {
    case LayerKind::conv1d:
    case LayerKind::conv2d:
    case LayerKind::conv3d:
    case LayerKind::depthwise_conv:
    case LayerKind::pointwise_conv:
      return numel(out_shape) * (s.c_in / s.groups) * kprod();
    case LayerKind::linear:
      return s.c_out * s.c_in;
    default:
      return 0;
  }
}

CostReport count_costs(const ModelSpec& spec) {
  const auto shapes = infer_shapes(spec);
  CostReport report;
  report.by_node.reserve(spec.graph.nodes.size());
  for (std::size_t i = 0; i < spec.graph.nodes.size(); ++i) {
    const Node& n = spec.graph.nodes[i];
    NodeCost c;
    c.name = n.name;
    c.kind = n.spec.kind;
    c.params = layer_params(n.spec);
    c.macs = layer_macs(n.spec, shapes[i]);
    report.total_params += c.params;
    report.total_macs += c.macs;
    report.by_node.push_back(std::move(c));
  }
  return report;
}

std::int64_t count_params(const ModelSpec& spec) {
  return count_costs(spec).total_params;
}

std::int64_t count_macs(const ModelSpec& spec) { return count_costs(spec).total_macs; }

std::vector<AuditRow> audit_table(const std::vector<ModelSpec>& models) {
  require(!models.empty(), "audit_table needs at least one model");
  std::vector<AuditRow> rows;
  rows.reserve(models.size());
  for (const auto& m : models) {
    const auto cost = count_costs(m);
    rows.push_back({m.name, cost.total_params, cost.total_macs, 1.0, 1.0});
  }
  for (auto& r : rows) {
    r.ratio_params = static_cast<double>(rows[0].params) / static_cast<double>(r.params);
    r.ratio_macs = static_cast<double>(rows[0].macs) / static_cast<double>(r.macs);
  }
  return rows;
}

std::string render_audit_table(const std::vector<AuditRow>& rows) {
  std::size_t name_w = 5;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-*s  %12s  %14s  %8s  %8s\n",
                static_cast<int>(name_w), "model", "params", "macs",
                "x-params", "x-macs");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %12lld  %14lld  %8.2f  %8.2f\n",
                  static_cast<int>(name_w), r.name.c_str(),
                  static_cast<long long>(r.params), static_cast<long long>(r.macs),
                  r.ratio_params, r.ratio_macs);
    out += buf;
  }
  return out;
}

}  // namespace vsr::arch
