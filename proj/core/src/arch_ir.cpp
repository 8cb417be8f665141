// SPDX-License-Identifier: Apache-2.0
#include "vsr/arch/ir.hpp"

#include <array>

namespace vsr::arch {

namespace {

struct KindName {
  LayerKind kind;
  const char* name;
};

constexpr std::array<KindName, 14> kKindNames{{
    {LayerKind::conv1d, "conv1d"},
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::conv3d, "conv3d"},
    {LayerKind::depthwise_conv, "depthwise_conv"},
    {LayerKind::pointwise_conv, "pointwise_conv"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::activation, "activation"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::avgpool_global, "avgpool_global"},
    {LayerKind::linear, "linear"},
    {LayerKind::channel_shuffle, "channel_shuffle"},
    {LayerKind::residual_add, "residual_add"},
    {LayerKind::concat_branches, "concat_branches"},
    {LayerKind::reshape_fold_time, "reshape_fold_time"},
}};

std::int64_t conv_rank(LayerKind k) {
  switch (k) {
    case LayerKind::conv1d:
    case LayerKind::depthwise_conv:
    case LayerKind::pointwise_conv:
      return 1;
    case LayerKind::conv2d:
      return 2;
    case LayerKind::conv3d:
      return 3;
    default:
      return 0;
  }
}

}  // namespace

const char* kind_name(LayerKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

LayerKind kind_from_name(const std::string& s) {
  for (const auto& kn : kKindNames)
    if (s == kn.name) return kn.kind;
  throw ConfigError("unknown layer kind '" + s + "'");
}

void validate(const ModelSpec& spec) {
  require(!spec.graph.nodes.empty(), "model '" + spec.name + "' has no layers");
  require(!spec.input_shape.empty(), "model '" + spec.name + "' has no input shape");
  for (auto d : spec.input_shape)
    require(d >= 1, "model '" + spec.name + "' input axis must be positive");

  for (std::size_t i = 0; i < spec.graph.nodes.size(); ++i) {
    const Node& n = spec.graph.nodes[i];
    const std::string where = "node '" + n.name + "' (#" + std::to_string(i) + ")";
    for (auto in : n.inputs)
      require(in >= 0 && in < static_cast<std::int64_t>(i),
              where + " references input " + std::to_string(in) +
                  " that is not an earlier node");
    const LayerSpec& s = n.spec;
    const std::int64_t rank = conv_rank(s.kind);
    if (rank > 0) {
      require(static_cast<std::int64_t>(s.kernel.size()) == rank,
              where + " kernel rank must be " + std::to_string(rank));
      require(s.stride.size() == s.kernel.size() &&
                  s.padding.size() == s.kernel.size() &&
                  s.dilation.size() == s.kernel.size(),
              where + " stride/padding/dilation rank mismatch");
      for (std::size_t a = 0; a < s.kernel.size(); ++a) {
        require(s.kernel[a] >= 1 && s.stride[a] >= 1 && s.dilation[a] >= 1 &&
                    s.padding[a] >= 0,
                where + " geometry out of range on axis " + std::to_string(a));
      }
      require(s.c_in >= 1 && s.c_out >= 1, where + " channels must be positive");
      require(s.groups >= 1 && s.c_in % s.groups == 0 && s.c_out % s.groups == 0,
              where + " channels must divide by groups");
      if (s.kind == LayerKind::depthwise_conv)
        require(s.groups == s.c_in && s.c_out == s.c_in,
                where + " depthwise conv requires groups == c_in == c_out");
      if (s.kind == LayerKind::pointwise_conv)
        require(s.kernel[0] == 1, where + " pointwise conv kernel must be 1");
    }
    if (s.kind == LayerKind::maxpool) {
      require(s.kernel.size() == 2 || s.kernel.size() == 3,
              where + " maxpool kernel rank must be 2 or 3");
      require(s.stride.size() == s.kernel.size() &&
                  s.padding.size() == s.kernel.size(),
              where + " maxpool stride/padding rank mismatch");
    }
    if (s.kind == LayerKind::residual_add)
      require(n.inputs.size() == 2, where + " residual_add takes two inputs");
    else if (s.kind == LayerKind::concat_branches)
      require(n.inputs.size() >= 2, where + " concat_branches takes >= 2 inputs");
    else
      require(n.inputs.size() <= 1, where + " takes at most one input");
    if (s.kind == LayerKind::batchnorm)
      require(s.c_in == s.c_out && s.c_in >= 1, where + " batchnorm channels");
    if (s.kind == LayerKind::linear)
      require(s.c_in >= 1 && s.c_out >= 1, where + " linear features");
    if (s.kind == LayerKind::activation)
      require(s.act_params >= 0, where + " activation params");
    if (s.kind == LayerKind::channel_shuffle)
      require(s.shuffle_groups >= 1, where + " shuffle groups");
  }
}

}  // namespace vsr::arch
