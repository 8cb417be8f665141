// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vsr/arch/ir.hpp"

namespace vsr::arch {

// Per-node output sample shapes in node order. Throws ConfigError on any
// incompatibility, naming the node and the axis that failed.
std::vector<Shape> infer_shapes(const ModelSpec& spec);

}  // namespace vsr::arch
