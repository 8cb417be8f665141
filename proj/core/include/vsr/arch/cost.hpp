// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vsr/arch/shapes.hpp"

namespace vsr::arch {

// Exact integer cost accounting.
//
// Parameters: convs count c_out*(c_in/groups)*prod(kernel) plus c_out bias
// when present; batchnorm counts its 2C affine parameters (running stats are
// buffers, not parameters); activation counts its learnable slopes; linear
// counts F_out*F_in plus bias. Everything else is parameter-free.
//
// MACs use the dominant-term convention: one multiply-accumulate per kernel
// tap per output element for convs, F_out*F_in for linear, and zero for
// normalization, activations, pooling, shuffles and adds.
struct NodeCost {
  std::string name;
  LayerKind kind;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct CostReport {
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
  std::vector<NodeCost> by_node;
};

std::int64_t layer_params(const LayerSpec& spec);
std::int64_t layer_macs(const LayerSpec& spec, const Shape& out_shape);

CostReport count_costs(const ModelSpec& spec);
std::int64_t count_params(const ModelSpec& spec);
std::int64_t count_macs(const ModelSpec& spec);

// One audited model set: ratios are taken against the first row.
struct AuditRow {
  std::string name;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  double ratio_params = 1.0;
  double ratio_macs = 1.0;
};

std::vector<AuditRow> audit_table(const std::vector<ModelSpec>& models);

// Fixed-width text rendering of an audit table.
std::string render_audit_table(const std::vector<AuditRow>& rows);

}  // namespace vsr::arch
