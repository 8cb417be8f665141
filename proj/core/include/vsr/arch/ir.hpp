// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vsr/common.hpp"

namespace vsr::arch {

// Cost-model intermediate representation. A model is an ordered DAG of layer
// nodes over batchless sample shapes:
//   [C,T,H,W] video features -> [C,T] temporal features -> [C] pooled -> [K].
// conv2d acts per frame of [C,T,H,W]; conv1d/depthwise/pointwise act on [C,T].
enum class LayerKind {
  conv1d,
  conv2d,
  conv3d,
  depthwise_conv,
  pointwise_conv,
  batchnorm,
  activation,
  maxpool,
  avgpool_global,
  linear,
  channel_shuffle,
  residual_add,
  concat_branches,
  reshape_fold_time,
};

enum class ActKind { relu, prelu };

// Axes collapsed by avgpool_global.
enum class PoolAxes { spatial, time };

struct LayerSpec {
  LayerKind kind = LayerKind::activation;
  std::int64_t c_in = 0;
  std::int64_t c_out = 0;
  // Per-axis geometry; rank depends on kind: conv3d/maxpool-3d use 3 entries
  // (t,h,w), conv2d/maxpool-2d use 2 (h,w), temporal convs use 1.
  std::vector<std::int64_t> kernel;
  std::vector<std::int64_t> stride;
  std::vector<std::int64_t> padding;
  std::vector<std::int64_t> dilation;
  std::int64_t groups = 1;
  bool has_bias = false;
  ActKind act = ActKind::relu;
  std::int64_t act_params = 0;   // learnable slopes for prelu, 0 for relu
  std::int64_t shuffle_groups = 2;
  PoolAxes pool_axes = PoolAxes::spatial;
  // linear reuses c_in/c_out as F_in/F_out.
};

struct Node {
  std::string name;
  LayerSpec spec;
  // Indices of producer nodes; must all be < this node's index. An empty
  // list means the node consumes the model input.
  std::vector<std::int64_t> inputs;
};

struct ModelGraph {
  std::vector<Node> nodes;
};

struct ModelSpec {
  std::string name;
  Shape input_shape;           // sample shape, e.g. [1,29,88,88]
  std::int64_t num_classes = 0;
  ModelGraph graph;
};

const char* kind_name(LayerKind k);
LayerKind kind_from_name(const std::string& s);

// Structural validation: topological input ordering, geometry ranks, channel
// divisibility. Throws ConfigError naming the offending node.
void validate(const ModelSpec& spec);

}  // namespace vsr::arch
