// SPDX-License-Identifier: Apache-2.0
#include "vsr/arch/builders.hpp"

#include <cmath>

namespace vsr::arch {

namespace {

// Append-only cursor over a graph; every helper returns the new node index.
class Builder {
 public:
  explicit Builder(ModelGraph& g) : g_(g) {}

  std::int64_t add(std::string name, LayerSpec spec,
                   std::vector<std::int64_t> inputs) {
    g_.nodes.push_back({std::move(name), std::move(spec), std::move(inputs)});
    return static_cast<std::int64_t>(g_.nodes.size()) - 1;
  }

  std::int64_t conv3d(const std::string& name, std::int64_t from,
                      std::int64_t c_in, std::int64_t c_out, Shape k, Shape s,
                      Shape p) {
    LayerSpec spec;
    spec.kind = LayerKind::conv3d;
    spec.c_in = c_in;
    spec.c_out = c_out;
    spec.kernel = std::move(k);
    spec.stride = std::move(s);
    spec.padding = std::move(p);
    spec.dilation = {1, 1, 1};
    return add(name, spec, from < 0 ? std::vector<std::int64_t>{}
                                    : std::vector<std::int64_t>{from});
  }

  std::int64_t conv2d(const std::string& name, std::int64_t from,
                      std::int64_t c_in, std::int64_t c_out, std::int64_t k,
                      std::int64_t stride, std::int64_t pad,
                      std::int64_t groups = 1) {
    LayerSpec spec;
    spec.kind = LayerKind::conv2d;
    spec.c_in = c_in;
    spec.c_out = c_out;
    spec.kernel = {k, k};
    spec.stride = {stride, stride};
    spec.padding = {pad, pad};
    spec.dilation = {1, 1};
    spec.groups = groups;
    return add(name, spec, {from});
  }

  std::int64_t bn(const std::string& name, std::int64_t from, std::int64_t c) {
    LayerSpec spec;
    spec.kind = LayerKind::batchnorm;
    spec.c_in = spec.c_out = c;
    return add(name, spec, {from});
  }

  std::int64_t relu(const std::string& name, std::int64_t from, std::int64_t c) {
    LayerSpec spec;
    spec.kind = LayerKind::activation;
    spec.c_in = spec.c_out = c;
    spec.act = ActKind::relu;
    spec.act_params = 0;
    return add(name, spec, {from});
  }

  std::int64_t prelu(const std::string& name, std::int64_t from, std::int64_t c) {
    LayerSpec spec;
    spec.kind = LayerKind::activation;
    spec.c_in = spec.c_out = c;
    spec.act = ActKind::prelu;
    spec.act_params = c;
    return add(name, spec, {from});
  }

  std::int64_t maxpool3d(const std::string& name, std::int64_t from, Shape k,
                         Shape s, Shape p) {
    LayerSpec spec;
    spec.kind = LayerKind::maxpool;
    spec.kernel = std::move(k);
    spec.stride = std::move(s);
    spec.padding = std::move(p);
    return add(name, spec, {from});
  }

  std::int64_t residual(const std::string& name, std::int64_t a, std::int64_t b) {
    LayerSpec spec;
    spec.kind = LayerKind::residual_add;
    return add(name, spec, {a, b});
  }

  std::int64_t concat(const std::string& name, std::vector<std::int64_t> in) {
    LayerSpec spec;
    spec.kind = LayerKind::concat_branches;
    return add(name, spec, std::move(in));
  }

  std::int64_t shuffle(const std::string& name, std::int64_t from,
                       std::int64_t groups) {
    LayerSpec spec;
    spec.kind = LayerKind::channel_shuffle;
    spec.shuffle_groups = groups;
    return add(name, spec, {from});
  }

  std::int64_t spatial_pool(const std::string& name, std::int64_t from) {
    LayerSpec spec;
    spec.kind = LayerKind::avgpool_global;
    spec.pool_axes = PoolAxes::spatial;
    return add(name, spec, {from});
  }

  std::int64_t fold_time(const std::string& name, std::int64_t from) {
    LayerSpec spec;
    spec.kind = LayerKind::reshape_fold_time;
    return add(name, spec, {from});
  }

 private:
  ModelGraph& g_;
};

// Basic residual block of the per-frame 2D trunk.
std::int64_t resnet_block(Builder& b, const std::string& prefix, std::int64_t from,
                          std::int64_t c_in, std::int64_t c_out,
                          std::int64_t stride) {
  auto x = b.conv2d(prefix + ".conv1", from, c_in, c_out, 3, stride, 1);
  x = b.bn(prefix + ".bn1", x, c_out);
  x = b.relu(prefix + ".relu1", x, c_out);
  x = b.conv2d(prefix + ".conv2", x, c_out, c_out, 3, 1, 1);
  x = b.bn(prefix + ".bn2", x, c_out);
  std::int64_t shortcut = from;
  if (stride != 1 || c_in != c_out) {
    shortcut = b.conv2d(prefix + ".down.conv", from, c_in, c_out, 1, stride, 0);
    shortcut = b.bn(prefix + ".down.bn", shortcut, c_out);
  }
  x = b.residual(prefix + ".add", x, shortcut);
  return b.relu(prefix + ".relu2", x, c_out);
}

std::int64_t stem3d(Builder& b, std::int64_t c_out) {
  auto x = b.conv3d("stem.conv", -1, 1, c_out, {5, 7, 7}, {1, 2, 2}, {2, 3, 3});
  x = b.bn("stem.bn", x, c_out);
  x = b.prelu("stem.act", x, c_out);
  return b.maxpool3d("stem.pool", x, {1, 3, 3}, {1, 2, 2}, {0, 1, 1});
}

std::int64_t append_resnet18(Builder& b) {
  auto x = stem3d(b, 64);
  const std::int64_t widths[4] = {64, 128, 256, 512};
  std::int64_t c_in = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t c = widths[stage];
    const std::int64_t s0 = stage == 0 ? 1 : 2;
    x = resnet_block(b, "layer" + std::to_string(stage + 1) + ".0", x, c_in, c, s0);
    x = resnet_block(b, "layer" + std::to_string(stage + 1) + ".1", x, c, c, 1);
    c_in = c;
  }
  x = b.spatial_pool("pool", x);
  return b.fold_time("fold", x);
}

// One half-width body chain of a shufflenet unit: pw -> dw -> pw.
std::int64_t shuffle_body(Builder& b, const std::string& prefix, std::int64_t from,
                          std::int64_t c_in, std::int64_t c, std::int64_t stride,
                          std::int64_t pw1_groups) {
  auto x = b.conv2d(prefix + ".pw1", from, c_in, c, 1, 1, 0, pw1_groups);
  x = b.bn(prefix + ".pw1.bn", x, c);
  x = b.relu(prefix + ".pw1.relu", x, c);
  x = b.conv2d(prefix + ".dw", x, c, c, 3, stride, 1, c);
  x = b.bn(prefix + ".dw.bn", x, c);
  x = b.conv2d(prefix + ".pw2", x, c, c, 1, 1, 0);
  x = b.bn(prefix + ".pw2.bn", x, c);
  return b.relu(prefix + ".pw2.relu", x, c);
}

// One stage: a stride-2 dual-branch unit, then `extra` half-width body units.
// The two half streams stay separate between units (the interleaving shuffle
// is a zero-cost reindex) and merge in one concat + shuffle at stage end.
std::int64_t shuffle_stage(Builder& b, const std::string& prefix, std::int64_t from,
                           std::int64_t c_in, std::int64_t c_out,
                           std::int64_t extra_units) {
  const std::int64_t half = c_out / 2;
  auto left = b.conv2d(prefix + ".down.left.dw", from, c_in, c_in, 3, 2, 1, c_in);
  left = b.bn(prefix + ".down.left.dw.bn", left, c_in);
  left = b.conv2d(prefix + ".down.left.pw", left, c_in, half, 1, 1, 0);
  left = b.bn(prefix + ".down.left.pw.bn", left, half);
  left = b.relu(prefix + ".down.left.relu", left, half);

  auto right = b.conv2d(prefix + ".down.right.pw1", from, c_in, half, 1, 1, 0);
  right = b.bn(prefix + ".down.right.pw1.bn", right, half);
  right = b.relu(prefix + ".down.right.pw1.relu", right, half);
  right = b.conv2d(prefix + ".down.right.dw", right, half, half, 3, 2, 1, half);
  right = b.bn(prefix + ".down.right.dw.bn", right, half);
  right = b.conv2d(prefix + ".down.right.pw2", right, half, half, 1, 1, 0);
  right = b.bn(prefix + ".down.right.pw2.bn", right, half);
  right = b.relu(prefix + ".down.right.pw2.relu", right, half);

  for (std::int64_t u = 0; u < extra_units; ++u) {
    right = shuffle_body(b, prefix + ".unit" + std::to_string(u + 1), right, half,
                         half, 1, 1);
  }
  auto x = b.concat(prefix + ".concat", {left, right});
  return b.shuffle(prefix + ".shuffle", x, 2);
}

std::int64_t append_shufflenet(Builder& b, double width_mult) {
  std::int64_t s2, s3, s4;
  if (width_mult == 0.5) {
    s2 = 48; s3 = 96; s4 = 192;
  } else {
    s2 = 116; s3 = 232; s4 = 464;
  }
  auto x = stem3d(b, 24);
  x = shuffle_stage(b, "stage2", x, 24, s2, 3);
  x = shuffle_stage(b, "stage3", x, s2, s3, 7);
  x = shuffle_stage(b, "stage4", x, s3, s4, 3);
  x = b.conv2d("conv5", x, s4, 1024, 1, 1, 0);
  x = b.bn("conv5.bn", x, 1024);
  x = b.relu("conv5.relu", x, 1024);
  x = b.spatial_pool("pool", x);
  return b.fold_time("fold", x);
}

LayerSpec conv1d_spec(std::int64_t c_in, std::int64_t c_out, std::int64_t k,
                      bool bias) {
  LayerSpec s;
  s.kind = LayerKind::conv1d;
  s.c_in = c_in;
  s.c_out = c_out;
  s.kernel = {k};
  s.stride = {1};
  s.padding = {(k - 1) / 2};
  s.dilation = {1};
  s.has_bias = bias;
  return s;
}

LayerSpec dw_spec(std::int64_t c, std::int64_t k, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::depthwise_conv;
  s.c_in = s.c_out = c;
  s.groups = c;
  s.kernel = {k};
  s.stride = {1};
  s.padding = {(k - 1) / 2};
  s.dilation = {1};
  s.has_bias = bias;
  return s;
}

LayerSpec pw_spec(std::int64_t c_in, std::int64_t c_out, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::pointwise_conv;
  s.c_in = c_in;
  s.c_out = c_out;
  s.kernel = {1};
  s.stride = {1};
  s.padding = {0};
  s.dilation = {1};
  s.has_bias = bias;
  return s;
}

// A negative producer index denotes the model input.
std::vector<std::int64_t> feed(std::int64_t from) {
  return from < 0 ? std::vector<std::int64_t>{} : std::vector<std::int64_t>{from};
}

// One multi-branch conv layer: each branch maps c_in -> width/branches with
// its own kernel size, then branches concatenate.
std::int64_t head_conv_layer(Builder& b, const std::string& prefix,
                             std::int64_t from, const TemporalHeadSpec& h,
                             std::int64_t c_in, std::int64_t branch_out) {
  std::vector<std::int64_t> branch_nodes;
  for (std::size_t j = 0; j < h.kernel_sizes.size(); ++j) {
    const std::int64_t k = h.kernel_sizes[j];
    const std::string bp = prefix + ".b" + std::to_string(k);
    std::int64_t x;
    if (h.depthwise_separable) {
      x = b.add(bp + ".dw", dw_spec(c_in, k, true), feed(from));
      x = b.bn(bp + ".dw.bn", x, c_in);
      x = b.prelu(bp + ".dw.act", x, c_in);
      x = b.add(bp + ".pw", pw_spec(c_in, branch_out, true), {x});
      x = b.bn(bp + ".pw.bn", x, branch_out);
      x = b.prelu(bp + ".pw.act", x, branch_out);
    } else {
      x = b.add(bp + ".conv", conv1d_spec(c_in, branch_out, k, true), feed(from));
      x = b.bn(bp + ".bn", x, branch_out);
      x = b.prelu(bp + ".act", x, branch_out);
    }
    branch_nodes.push_back(x);
  }
  if (branch_nodes.size() == 1) return branch_nodes[0];
  return b.concat(prefix + ".concat", branch_nodes);
}

}  // namespace

std::int64_t head_total_width(const TemporalHeadSpec& spec) {
  require(!spec.kernel_sizes.empty(), "head needs at least one kernel size");
  const auto width = static_cast<std::int64_t>(
      std::llround(static_cast<double>(spec.base_width) * spec.width_multiplier));
  require(width >= 1, "head width must be positive");
  require(width % static_cast<std::int64_t>(spec.kernel_sizes.size()) == 0,
          "head width " + std::to_string(width) +
              " must divide evenly across " +
              std::to_string(spec.kernel_sizes.size()) + " branches");
  return width;
}

std::int64_t append_head(ModelGraph& graph, std::int64_t from,
                         const TemporalHeadSpec& spec, const std::string& prefix) {
  require(spec.num_blocks >= 1, "head needs at least one block");
  require(spec.input_channels >= 1 && spec.num_classes >= 1,
          "head input channels and classes must be positive");
  for (auto k : spec.kernel_sizes)
    require(k >= 1 && k % 2 == 1, "head kernel sizes must be odd for same padding");
  if (!spec.multi_branch)
    require(spec.kernel_sizes.size() == 1, "single-branch head takes one kernel size");

  Builder b(graph);
  const std::int64_t W = head_total_width(spec);
  const std::int64_t w = W / static_cast<std::int64_t>(spec.kernel_sizes.size());

  std::int64_t x = from;
  for (std::int64_t blk = 0; blk < spec.num_blocks; ++blk) {
    const std::int64_t c_in = blk == 0 ? spec.input_channels : W;
    const std::string bp = prefix + ".block" + std::to_string(blk);
    const std::int64_t block_in = x;
    x = head_conv_layer(b, bp + ".layerA", x, spec, c_in, w);
    x = head_conv_layer(b, bp + ".layerB", x, spec, W, w);
    std::int64_t shortcut = block_in;
    if (spec.multi_branch || c_in != W) {
      shortcut = b.add(bp + ".proj", pw_spec(c_in, W, true), feed(block_in));
    } else {
      // Identity shortcuts need a producer node; the model input cannot feed
      // a residual join directly. Never reached by the shipped presets.
      require(block_in >= 0,
              "single-branch head with input width equal to block width must "
              "follow a producer node");
    }
    x = b.residual(bp + ".add", x, shortcut);
    x = b.prelu(bp + ".act", x, W);
  }
  LayerSpec pool;
  pool.kind = LayerKind::avgpool_global;
  pool.pool_axes = PoolAxes::time;
  x = b.add(prefix + ".pool", pool, {x});
  LayerSpec fc;
  fc.kind = LayerKind::linear;
  fc.c_in = W;
  fc.c_out = spec.num_classes;
  fc.has_bias = false;
  return b.add(prefix + ".fc", fc, {x});
}

Backbone backbone_from_name(const std::string& s) {
  if (s == "resnet18") return Backbone::resnet18;
  if (s == "shufflenet_v2_1.0x") return Backbone::shufflenet_v2_1x;
  if (s == "shufflenet_v2_0.5x") return Backbone::shufflenet_v2_05x;
  throw ConfigError("unknown backbone '" + s + "'");
}

HeadKind head_from_name(const std::string& s) {
  if (s == "mstcn_3x") return HeadKind::mstcn_3x;
  if (s == "ds_mstcn_3x") return HeadKind::dsmstcn_3x;
  if (s == "tcn_1x") return HeadKind::tcn_1x;
  if (s == "ds_tcn_1x") return HeadKind::dstcn_1x;
  throw ConfigError("unknown head '" + s + "'");
}

const char* backbone_name(Backbone b) {
  switch (b) {
    case Backbone::resnet18: return "resnet18";
    case Backbone::shufflenet_v2_1x: return "shufflenet_v2_1.0x";
    case Backbone::shufflenet_v2_05x: return "shufflenet_v2_0.5x";
  }
  return "?";
}

const char* head_name(HeadKind h) {
  switch (h) {
    case HeadKind::mstcn_3x: return "mstcn_3x";
    case HeadKind::dsmstcn_3x: return "ds_mstcn_3x";
    case HeadKind::tcn_1x: return "tcn_1x";
    case HeadKind::dstcn_1x: return "ds_tcn_1x";
  }
  return "?";
}

std::int64_t append_backbone(ModelGraph& graph, Backbone kind) {
  Builder b(graph);
  switch (kind) {
    case Backbone::resnet18:
      return append_resnet18(b);
    case Backbone::shufflenet_v2_1x:
      return append_shufflenet(b, 1.0);
    case Backbone::shufflenet_v2_05x:
      return append_shufflenet(b, 0.5);
  }
  throw ConfigError("unknown backbone enum value");
}

TemporalHeadSpec head_spec_for(HeadKind kind, std::int64_t input_channels,
                               std::int64_t num_classes) {
  TemporalHeadSpec h;
  h.input_channels = input_channels;
  h.num_classes = num_classes;
  h.num_blocks = 4;
  h.base_width = 256;
  switch (kind) {
    case HeadKind::mstcn_3x:
    case HeadKind::dsmstcn_3x:
      h.multi_branch = true;
      h.kernel_sizes = {3, 5, 7};
      h.width_multiplier = 3.0;
      h.depthwise_separable = kind == HeadKind::dsmstcn_3x;
      break;
    case HeadKind::tcn_1x:
    case HeadKind::dstcn_1x:
      h.multi_branch = false;
      h.kernel_sizes = {3};
      h.width_multiplier = 1.0;
      h.depthwise_separable = kind == HeadKind::dstcn_1x;
      break;
  }
  return h;
}

ModelSpec build_model(Backbone backbone, HeadKind head, std::int64_t num_classes,
                      const Shape& input_shape) {
  require(input_shape.size() == 4 && input_shape[0] == 1,
          "video input shape must be [1,T,H,W], got " + shape_str(input_shape));
  ModelSpec spec;
  spec.name = std::string(backbone_name(backbone)) + "+" + head_name(head);
  spec.input_shape = input_shape;
  spec.num_classes = num_classes;
  const std::int64_t feat = append_backbone(spec.graph, backbone);
  const std::int64_t feat_ch = backbone == Backbone::resnet18 ? 512 : 1024;
  append_head(spec.graph, feat, head_spec_for(head, feat_ch, num_classes));
  validate(spec);
  return spec;
}

std::vector<ModelSpec> preset_models(const std::string& preset) {
  if (preset == "lrw-table3") {
    const Shape in{1, 29, 88, 88};
    return {
        build_model(Backbone::resnet18, HeadKind::mstcn_3x, 500, in),
        build_model(Backbone::shufflenet_v2_1x, HeadKind::mstcn_3x, 500, in),
        build_model(Backbone::shufflenet_v2_1x, HeadKind::dsmstcn_3x, 500, in),
        build_model(Backbone::shufflenet_v2_1x, HeadKind::tcn_1x, 500, in),
        build_model(Backbone::shufflenet_v2_05x, HeadKind::tcn_1x, 500, in),
    };
  }
  if (preset == "lrw1000-table4") {
    const Shape in{1, 29, 112, 112};
    return {
        build_model(Backbone::resnet18, HeadKind::mstcn_3x, 1000, in),
        build_model(Backbone::shufflenet_v2_1x, HeadKind::tcn_1x, 1000, in),
        build_model(Backbone::shufflenet_v2_1x, HeadKind::dstcn_1x, 1000, in),
        build_model(Backbone::shufflenet_v2_05x, HeadKind::tcn_1x, 1000, in),
        build_model(Backbone::shufflenet_v2_05x, HeadKind::dstcn_1x, 1000, in),
    };
  }
  throw ConfigError("unknown preset '" + preset + "'; available: lrw-table3, lrw1000-table4");
}

std::vector<std::string> preset_names() { return {"lrw-table3", "lrw1000-table4"}; }

}  // namespace vsr::arch
