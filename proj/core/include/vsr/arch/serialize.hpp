// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vsr/arch/ir.hpp"

namespace vsr::arch {

// JSON round trip for model specs. Serialization is stable: a spec survives
// to_json -> from_json with an identical graph.
std::string to_json(const ModelSpec& spec);
ModelSpec from_json_string(const std::string& text);
ModelSpec load_model_spec(const std::string& path);
void save_model_spec(const ModelSpec& spec, const std::string& path);

}  // namespace vsr::arch
