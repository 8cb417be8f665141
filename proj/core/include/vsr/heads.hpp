// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vsr/arch/builders.hpp"
#include "vsr/checkpoint.hpp"
#include "vsr/ops.hpp"
#include "vsr/rng.hpp"

namespace vsr {

// Trainable temporal-head description. Structure must stay in lockstep with
// the cost-model graph produced by arch::append_head: head_param_count() and
// the sum of trainable tensor sizes are asserted equal in the test suite.
struct HeadConfig {
  bool multi_branch = false;        // parallel kernel branches vs single
  bool depthwise_separable = false; // factorize convs into depthwise+pointwise
  std::vector<std::int64_t> kernel_sizes{3};
  std::int64_t num_blocks = 4;
  std::int64_t base_width = 256;
  double width_multiplier = 1.0;
  double dropout_p = 0.2;
  std::int64_t input_channels = 0;
  std::int64_t num_classes = 0;
};

void validate_head_config(const HeadConfig& cfg);
arch::TemporalHeadSpec head_arch_spec(const HeadConfig& cfg);
// Cost-model twin of this head as a standalone [C,T] -> logits model.
arch::ModelSpec head_model_spec(const HeadConfig& cfg, std::int64_t t_frames = 29);
// Trainable parameter count, computed on the cost-model twin.
std::int64_t head_param_count(const HeadConfig& cfg);
std::string head_config_to_json(const HeadConfig& cfg);
HeadConfig head_config_from_json(const std::string& text);
void save_head_config(const HeadConfig& cfg, const std::string& path);
HeadConfig load_head_config(const std::string& path);

// Named parameter collection. Tensors with requires_grad are trainable;
// batchnorm running statistics ride along untrained but are checkpointed.
template <typename S>
struct HeadParams {
  std::vector<std::pair<std::string, TensorPtr<S>>> tensors;

  const TensorPtr<S>& at(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw ConfigError("head parameter '" + name + "' not found");
  }
  std::vector<TensorPtr<S>> trainable() const {
    std::vector<TensorPtr<S>> out;
    for (const auto& [n, t] : tensors)
      if (t->requires_grad) out.push_back(t);
    return out;
  }
  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : tensors)
      if (t->requires_grad) n += t->numel();
    return n;
  }
};

namespace detail {

inline std::int64_t head_width(const HeadConfig& cfg) {
  return arch::head_total_width(head_arch_spec(cfg));
}

template <typename S>
void add_param(HeadParams<S>& p, const std::string& name, Shape shape,
               bool trainable) {
  auto t = make_tensor<S>(std::move(shape));
  t->requires_grad = trainable;
  p.tensors.emplace_back(name, std::move(t));
}

// He-style normal init, variance 2/fan_in.
template <typename S>
void fill_he(Tensor<S>& t, std::int64_t fan_in, RngStream& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  const std::int64_t n = t.numel();
  for (std::int64_t i = 0; i < n; ++i)
    t.at(i) = static_cast<S>(rng.gaussian() * stddev);
}

template <typename S>
void fill_const(Tensor<S>& t, double v) {
  const std::int64_t n = t.numel();
  for (std::int64_t i = 0; i < n; ++i) t.at(i) = static_cast<S>(v);
}

// Declares (and optionally initializes) one conv+bn+act unit's tensors.
template <typename S>
void conv_bn_act_params(HeadParams<S>& p, const std::string& prefix,
                        std::int64_t c_in, std::int64_t c_out, std::int64_t k,
                        std::int64_t groups, RngStream* rng) {
  add_param(p, prefix + ".w", {c_out, c_in / groups, k}, true);
  add_param(p, prefix + ".b", {c_out}, true);
  add_param(p, prefix + ".bn.gamma", {c_out}, true);
  add_param(p, prefix + ".bn.beta", {c_out}, true);
  add_param(p, prefix + ".bn.running_mean", {c_out}, false);
  add_param(p, prefix + ".bn.running_var", {c_out}, false);
  add_param(p, prefix + ".act.slope", {c_out}, true);
  if (rng) {
    fill_he(*p.at(prefix + ".w"), (c_in / groups) * k, *rng);
    fill_const(*p.at(prefix + ".b"), 0.0);
    fill_const(*p.at(prefix + ".bn.gamma"), 1.0);
    fill_const(*p.at(prefix + ".bn.beta"), 0.0);
    fill_const(*p.at(prefix + ".bn.running_mean"), 0.0);
    fill_const(*p.at(prefix + ".bn.running_var"), 1.0);
    fill_const(*p.at(prefix + ".act.slope"), 0.25);
  }
}

template <typename S>
void branch_params(HeadParams<S>& p, const HeadConfig& cfg,
                   const std::string& prefix, std::int64_t c_in,
                   std::int64_t c_out, std::int64_t k, RngStream* rng) {
  if (cfg.depthwise_separable) {
    conv_bn_act_params(p, prefix + ".dw", c_in, c_in, k, c_in, rng);
    conv_bn_act_params(p, prefix + ".pw", c_in, c_out, 1, 1, rng);
  } else {
    conv_bn_act_params(p, prefix + ".conv", c_in, c_out, k, 1, rng);
  }
}

// Single source of truth for the parameter set; rng == nullptr declares
// zeroed tensors (used when loading), otherwise initializes them.
template <typename S>
HeadParams<S> make_params(const HeadConfig& cfg, RngStream* rng) {
  validate_head_config(cfg);
  HeadParams<S> p;
  const std::int64_t W = head_width(cfg);
  const auto branches = static_cast<std::int64_t>(cfg.kernel_sizes.size());
  const std::int64_t w = W / branches;
  for (std::int64_t blk = 0; blk < cfg.num_blocks; ++blk) {
    const std::int64_t c_in = blk == 0 ? cfg.input_channels : W;
    const std::string bp = "block" + std::to_string(blk);
    for (const char* layer : {".layerA", ".layerB"}) {
      const std::int64_t lc_in = layer[6] == 'A' ? c_in : W;
      for (auto k : cfg.kernel_sizes)
        branch_params(p, cfg, bp + layer + ".b" + std::to_string(k), lc_in, w, k,
                      rng);
    }
    if (cfg.multi_branch || c_in != W) {
      add_param(p, bp + ".proj.w", {W, c_in, std::int64_t{1}}, true);
      add_param(p, bp + ".proj.b", {W}, true);
      if (rng) {
        fill_he(*p.at(bp + ".proj.w"), c_in, *rng);
        fill_const(*p.at(bp + ".proj.b"), 0.0);
      }
    }
    add_param(p, bp + ".act.slope", {W}, true);
    if (rng) fill_const(*p.at(bp + ".act.slope"), 0.25);
  }
  add_param(p, "fc.w", {cfg.num_classes, W}, true);
  if (rng) fill_he(*p.at("fc.w"), W, *rng);
  return p;
}

template <typename S>
TensorPtr<S> conv_bn_act(Tape<S>* tape, const HeadParams<S>& p,
                         const std::string& prefix, const TensorPtr<S>& x,
                         std::int64_t k, std::int64_t groups, bool training) {
  Conv1dGeom geom;
  geom.padding = (k - 1) / 2;
  geom.groups = groups;
  auto y = conv1d(tape, x, p.at(prefix + ".w"), p.at(prefix + ".b"), geom);
  y = batchnorm1d(tape, y, p.at(prefix + ".bn.gamma"), p.at(prefix + ".bn.beta"),
                  p.at(prefix + ".bn.running_mean"),
                  p.at(prefix + ".bn.running_var"), training);
  return prelu(tape, y, p.at(prefix + ".act.slope"));
}

template <typename S>
TensorPtr<S> head_branch(Tape<S>* tape, const HeadConfig& cfg,
                         const HeadParams<S>& p, const std::string& prefix,
                         const TensorPtr<S>& x, std::int64_t k, bool training,
                         RngStream* rng) {
  TensorPtr<S> y;
  if (cfg.depthwise_separable) {
    y = conv_bn_act(tape, p, prefix + ".dw", x, k, x->shape[1], training);
    y = conv_bn_act(tape, p, prefix + ".pw", y, 1, 1, training);
  } else {
    y = conv_bn_act(tape, p, prefix + ".conv", x, k, 1, training);
  }
  if (training && cfg.dropout_p > 0.0) {
    require(rng != nullptr, "head_forward in training mode needs an rng for dropout");
    y = dropout(tape, y, cfg.dropout_p, *rng, training);
  }
  return y;
}

template <typename S>
TensorPtr<S> head_conv_layer(Tape<S>* tape, const HeadConfig& cfg,
                             const HeadParams<S>& p, const std::string& prefix,
                             const TensorPtr<S>& x, bool training, RngStream* rng) {
  std::vector<TensorPtr<S>> outs;
  outs.reserve(cfg.kernel_sizes.size());
  for (auto k : cfg.kernel_sizes)
    outs.push_back(head_branch(tape, cfg, p, prefix + ".b" + std::to_string(k), x,
                               k, training, rng));
  if (outs.size() == 1) return outs[0];
  return concat_channels(tape, outs);
}

}  // namespace detail

template <typename S>
HeadParams<S> init_params(const HeadConfig& cfg, std::uint64_t seed) {
  RngStream rng(derive_seed(seed, "head_init"));
  return detail::make_params<S>(cfg, &rng);
}

// features [B,C,T] + per-sample valid lengths -> logits [B,num_classes].
// Padding frames are zeroed on entry, so logits are exactly invariant to
// their content; the final pooling averages valid frames only.
template <typename S>
TensorPtr<S> head_forward(Tape<S>* tape, const HeadConfig& cfg,
                          const HeadParams<S>& p, const TensorPtr<S>& features,
                          const std::vector<std::int64_t>& lengths, bool training,
                          RngStream* rng = nullptr) {
  require(features->shape.size() == 3, "head_forward input must be [B,C,T]");
  require(features->shape[1] == cfg.input_channels,
          "head_forward channel mismatch: input has " +
              std::to_string(features->shape[1]) + ", config expects " +
              std::to_string(cfg.input_channels));
  const std::int64_t W = detail::head_width(cfg);
  auto x = mask_time(tape, features, lengths);
  for (std::int64_t blk = 0; blk < cfg.num_blocks; ++blk) {
    const std::int64_t c_in = blk == 0 ? cfg.input_channels : W;
    const std::string bp = "block" + std::to_string(blk);
    auto block_in = x;
    x = detail::head_conv_layer(tape, cfg, p, bp + ".layerA", x, training, rng);
    x = detail::head_conv_layer(tape, cfg, p, bp + ".layerB", x, training, rng);
    TensorPtr<S> shortcut = block_in;
    if (cfg.multi_branch || c_in != W) {
      Conv1dGeom geom;
      shortcut = conv1d(tape, block_in, p.at(bp + ".proj.w"), p.at(bp + ".proj.b"),
                        geom);
    }
    x = add(tape, x, shortcut);
    x = prelu(tape, x, p.at(bp + ".act.slope"));
  }
  auto pooled = masked_mean_time(tape, x, lengths);
  return linear(tape, pooled, p.at("fc.w"), TensorPtr<S>{});
}

template <typename S>
void save_head_params(const HeadParams<S>& p, const std::string& path) {
  NamedTensors<S> named;
  named.reserve(p.tensors.size());
  for (const auto& [n, t] : p.tensors) named.emplace_back(n, t);
  save_checkpoint(path, named);
}

// Loads a checkpoint into the parameter layout declared by cfg; tensor set
// and shapes must match the config exactly, in both directions.
template <typename S>
HeadParams<S> load_head_params(const HeadConfig& cfg, const std::string& path) {
  HeadParams<S> p = detail::make_params<S>(cfg, nullptr);
  auto loaded = load_checkpoint<S>(path);
  require(loaded.size() == p.tensors.size(),
          "checkpoint '" + path + "' holds " + std::to_string(loaded.size()) +
              " tensors, config expects " + std::to_string(p.tensors.size()));
  for (auto& [name, t] : loaded) {
    const auto& dst = p.at(name);
    require(dst->shape == t->shape, "checkpoint tensor '" + name +
                                        "' has shape " + shape_str(t->shape) +
                                        ", config expects " + shape_str(dst->shape));
    dst->data = std::move(t->data);
  }
  return p;
}

}  // namespace vsr
