// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vsr/arch/ir.hpp"

namespace vsr::arch {

// Temporal classification head family: stacks of residual temporal conv
// blocks over [C,T] features, mean-pooled over valid frames, then a bias-free
// classifier. Multi-branch heads run one conv per kernel size in parallel and
// concatenate; depthwise-separable variants factor each branch conv into a
// depthwise k-tap conv followed by a pointwise projection.
//
// Residual projections: multi-branch blocks always carry a 1x1 projection on
// the shortcut; single-branch blocks project only when widths differ.
struct TemporalHeadSpec {
  bool multi_branch = false;               // false: single k=3 branch
  bool depthwise_separable = false;
  std::vector<std::int64_t> kernel_sizes;  // one entry per branch
  std::int64_t num_blocks = 4;
  std::int64_t base_width = 256;           // total width at multiplier 1x
  double width_multiplier = 1.0;
  std::int64_t input_channels = 0;
  std::int64_t num_classes = 0;
};

// Total block width (base_width * multiplier); must divide evenly by branch
// count. Throws ConfigError otherwise.
std::int64_t head_total_width(const TemporalHeadSpec& spec);

// Appends the head to `graph` starting from producer node `from` (shape
// [C,T]) and returns the index of the logits node.
std::int64_t append_head(ModelGraph& graph, std::int64_t from,
                         const TemporalHeadSpec& spec,
                         const std::string& prefix = "head");

enum class Backbone {
  resnet18,
  shufflenet_v2_1x,
  shufflenet_v2_05x,
};

enum class HeadKind {
  mstcn_3x,     // 3 branches {3,5,7}, width multiplier 3
  dsmstcn_3x,   // depthwise-separable variant of mstcn_3x
  tcn_1x,       // single branch k=3, width multiplier 1
  dstcn_1x,     // depthwise-separable variant of tcn_1x
};

Backbone backbone_from_name(const std::string& s);
HeadKind head_from_name(const std::string& s);
const char* backbone_name(Backbone b);
const char* head_name(HeadKind h);

// Video backbone over [1,T,H,W]: a 5x7x7 three-dimensional stem (stride
// 1,2,2), per-frame 2D trunk, global spatial pooling, and a fold to [C,T].
// The returned index is the [C,T] feature node.
std::int64_t append_backbone(ModelGraph& graph, Backbone kind);

// Head hyperparameters matching the published model family (base width 256).
TemporalHeadSpec head_spec_for(HeadKind kind, std::int64_t input_channels,
                               std::int64_t num_classes);

ModelSpec build_model(Backbone backbone, HeadKind head, std::int64_t num_classes,
                      const Shape& input_shape);

// Named presets: "lrw-table3" audits the five-model family at 1x29x88x88
// with 500 classes; "lrw1000-table4" audits its companion set at 1x29x112x112
// with 1000 classes.
std::vector<ModelSpec> preset_models(const std::string& preset);
std::vector<std::string> preset_names();

}  // namespace vsr::arch
