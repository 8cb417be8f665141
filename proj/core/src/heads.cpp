// SPDX-License-Identifier: Apache-2.0
#include "vsr/heads.hpp"

#include <fstream>

#include <json.hpp>

#include "vsr/arch/cost.hpp"

namespace vsr {

void validate_head_config(const HeadConfig& cfg) {
  require(!cfg.kernel_sizes.empty(), "head needs at least one kernel size");
  for (auto k : cfg.kernel_sizes)
    require(k >= 1 && k % 2 == 1,
            "head kernel sizes must be odd, got " + std::to_string(k));
  if (!cfg.multi_branch)
    require(cfg.kernel_sizes.size() == 1,
            "single-branch head takes exactly one kernel size");
  require(cfg.num_blocks >= 1, "head needs at least one block");
  require(cfg.base_width >= 1 && cfg.width_multiplier > 0.0,
          "head width must be positive");
  require(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0,
          "head dropout must be in [0,1)");
  require(cfg.input_channels >= 1, "head input channels must be positive");
  require(cfg.num_classes >= 2, "head needs at least two classes");
  arch::head_total_width(head_arch_spec(cfg));  // divisibility check
}

arch::TemporalHeadSpec head_arch_spec(const HeadConfig& cfg) {
  arch::TemporalHeadSpec s;
  s.multi_branch = cfg.multi_branch;
  s.depthwise_separable = cfg.depthwise_separable;
  s.kernel_sizes = cfg.kernel_sizes;
  s.num_blocks = cfg.num_blocks;
  s.base_width = cfg.base_width;
  s.width_multiplier = cfg.width_multiplier;
  s.input_channels = cfg.input_channels;
  s.num_classes = cfg.num_classes;
  return s;
}

arch::ModelSpec head_model_spec(const HeadConfig& cfg, std::int64_t t_frames) {
  validate_head_config(cfg);
  require(t_frames >= 1, "head model spec needs a positive frame count");
  arch::ModelSpec spec;
  spec.name = std::string(cfg.multi_branch ? "mstcn" : "tcn") +
              (cfg.depthwise_separable ? "_ds" : "") + "_head";
  spec.input_shape = {cfg.input_channels, t_frames};
  spec.num_classes = cfg.num_classes;
  arch::append_head(spec.graph, -1, head_arch_spec(cfg));
  arch::validate(spec);
  return spec;
}

std::int64_t head_param_count(const HeadConfig& cfg) {
  return arch::count_params(head_model_spec(cfg));
}

std::string head_config_to_json(const HeadConfig& cfg) {
  nlohmann::json j;
  j["kind"] = cfg.multi_branch ? "mstcn" : "tcn";
  j["depthwise_separable"] = cfg.depthwise_separable;
  j["kernel_sizes"] = cfg.kernel_sizes;
  j["num_blocks"] = cfg.num_blocks;
  j["base_width"] = cfg.base_width;
  j["width_multiplier"] = cfg.width_multiplier;
  j["dropout"] = cfg.dropout_p;
  j["input_channels"] = cfg.input_channels;
  j["num_classes"] = cfg.num_classes;
  return j.dump(2);
}

HeadConfig head_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("head config is not valid JSON: ") + e.what());
  }
  HeadConfig cfg;
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "mstcn") cfg.multi_branch = true;
    else if (kind == "tcn") cfg.multi_branch = false;
    else throw ConfigError("unknown head kind '" + kind + "'");
    cfg.depthwise_separable = j.value("depthwise_separable", false);
    cfg.kernel_sizes = j.value("kernel_sizes", std::vector<std::int64_t>{3});
    cfg.num_blocks = j.value("num_blocks", std::int64_t{4});
    cfg.base_width = j.value("base_width", std::int64_t{256});
    cfg.width_multiplier = j.value("width_multiplier", 1.0);
    cfg.dropout_p = j.value("dropout", 0.2);
    cfg.input_channels = j.at("input_channels").get<std::int64_t>();
    cfg.num_classes = j.at("num_classes").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed head config: ") + e.what());
  }
  validate_head_config(cfg);
  return cfg;
}

void save_head_config(const HeadConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write head config '" + path + "'");
  out << head_config_to_json(cfg) << '\n';
  if (!out) throw IoError("failed writing head config '" + path + "'");
}

HeadConfig load_head_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open head config '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return head_config_from_json(text);
}

}  // namespace vsr
