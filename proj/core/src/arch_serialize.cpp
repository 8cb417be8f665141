// SPDX-License-Identifier: Apache-2.0
#include "vsr/arch/serialize.hpp"

#include <fstream>

#include <json.hpp>

namespace vsr::arch {

namespace {

using nlohmann::json;

json spec_to_json(const LayerSpec& s) {
  json j;
  j["kind"] = kind_name(s.kind);
  if (s.c_in) j["c_in"] = s.c_in;
  if (s.c_out) j["c_out"] = s.c_out;
  if (!s.kernel.empty()) j["kernel"] = s.kernel;
  if (!s.stride.empty()) j["stride"] = s.stride;
  if (!s.padding.empty()) j["padding"] = s.padding;
  if (!s.dilation.empty()) j["dilation"] = s.dilation;
  if (s.groups != 1) j["groups"] = s.groups;
  if (s.has_bias) j["bias"] = true;
  if (s.kind == LayerKind::activation)
    j["act"] = s.act == ActKind::prelu ? "prelu" : "relu";
  if (s.act_params) j["act_params"] = s.act_params;
  if (s.kind == LayerKind::channel_shuffle) j["shuffle_groups"] = s.shuffle_groups;
  if (s.kind == LayerKind::avgpool_global)
    j["pool_axes"] = s.pool_axes == PoolAxes::time ? "time" : "spatial";
  return j;
}

LayerSpec spec_from_json(const json& j, const std::string& node_name) {
  LayerSpec s;
  if (!j.contains("kind") || !j["kind"].is_string())
    throw ConfigError("node '" + node_name + "': missing layer kind");
  s.kind = kind_from_name(j["kind"].get<std::string>());
  s.c_in = j.value("c_in", std::int64_t{0});
  s.c_out = j.value("c_out", std::int64_t{0});
  s.kernel = j.value("kernel", std::vector<std::int64_t>{});
  s.stride = j.value("stride", std::vector<std::int64_t>{});
  s.padding = j.value("padding", std::vector<std::int64_t>{});
  s.dilation = j.value("dilation", std::vector<std::int64_t>{});
  s.groups = j.value("groups", std::int64_t{1});
  s.has_bias = j.value("bias", false);
  if (j.contains("act")) {
    const auto a = j["act"].get<std::string>();
    if (a == "relu") s.act = ActKind::relu;
    else if (a == "prelu") s.act = ActKind::prelu;
    else throw ConfigError("node '" + node_name + "': unknown activation '" + a + "'");
  }
  s.act_params = j.value("act_params", std::int64_t{0});
  s.shuffle_groups = j.value("shuffle_groups", std::int64_t{2});
  if (j.contains("pool_axes")) {
    const auto p = j["pool_axes"].get<std::string>();
    if (p == "spatial") s.pool_axes = PoolAxes::spatial;
    else if (p == "time") s.pool_axes = PoolAxes::time;
    else throw ConfigError("node '" + node_name + "': unknown pool axes '" + p + "'");
  }
  return s;
}

}  // namespace

std::string to_json(const ModelSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["input_shape"] = spec.input_shape;
  j["num_classes"] = spec.num_classes;
  json nodes = json::array();
  for (const auto& n : spec.graph.nodes) {
    json jn = spec_to_json(n.spec);
    jn["name"] = n.name;
    if (!n.inputs.empty()) jn["inputs"] = n.inputs;
    nodes.push_back(std::move(jn));
  }
  j["nodes"] = std::move(nodes);
  return j.dump(2);
}

ModelSpec from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model spec is not valid JSON: ") + e.what());
  }
  ModelSpec spec;
  try {
    spec.name = j.value("name", std::string{});
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.num_classes = j.at("num_classes").get<std::int64_t>();
    for (const auto& jn : j.at("nodes")) {
      Node n;
      n.name = jn.value("name", std::string{});
      n.spec = spec_from_json(jn, n.name);
      n.inputs = jn.value("inputs", std::vector<std::int64_t>{});
      spec.graph.nodes.push_back(std::move(n));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model spec: ") + e.what());
  }
  validate(spec);
  return spec;
}

ModelSpec load_model_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model spec '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json_string(text);
}

void save_model_spec(const ModelSpec& spec, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model spec '" + path + "'");
  out << to_json(spec) << '\n';
  if (!out) throw IoError("failed writing model spec '" + path + "'");
}

}  // namespace vsr::arch
