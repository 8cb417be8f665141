// SPDX-License-Identifier: Apache-2.0
#include "vsr/train.hpp"

namespace vsr {

void validate_train_config(const TrainConfig& cfg) {
  require(cfg.epochs >= 0, "train config: epochs must be nonnegative");
  require(cfg.initial_lr > 0.0, "train config: initial_lr must be positive");
  require(cfg.batch_size >= 1, "train config: batch_size must be >= 1");
  require(cfg.weight_decay >= 0.0, "train config: weight_decay must be nonnegative");
  require(cfg.beta1 > 0.0 && cfg.beta1 < 1.0 && cfg.beta2 > 0.0 && cfg.beta2 < 1.0,
          "train config: adam betas must lie in (0,1)");
  require(cfg.adam_eps > 0.0, "train config: adam epsilon must be positive");
  require(cfg.mixup_alpha >= 0.0, "train config: mixup alpha must be nonnegative");
  require(cfg.crop_min >= 1, "train config: crop_min must be >= 1");
}

double cosine_lr(std::int64_t epoch, std::int64_t total_epochs, double lr0) {
  require(total_epochs >= 1, "cosine_lr: total epochs must be >= 1");
  require(epoch >= 0 && epoch < total_epochs,
          "cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
              std::to_string(total_epochs) + ")");
  require(lr0 > 0.0, "cosine_lr: base rate must be positive");
  const double phase = M_PI * static_cast<double>(epoch) /
                       static_cast<double>(total_epochs);
  return lr0 * 0.5 * (1.0 + std::cos(phase));
}

CropResult variable_length_crop(const std::vector<double>& features,
                                std::int64_t channels, std::int64_t length,
                                std::int64_t t_min, RngStream& rng) {
  require(channels >= 1 && length >= 1, "crop: invalid sample geometry");
  require(t_min >= 1 && t_min <= length,
          "crop: minimum length " + std::to_string(t_min) +
              " exceeds clip length " + std::to_string(length));
  require(static_cast<std::int64_t>(features.size()) == channels * length,
          "crop: feature buffer does not match [C,len]");
  CropResult out;
  out.length = rng.uniform_int(t_min, length);
  const std::int64_t offset = rng.uniform_int(0, length - out.length);
  out.features.resize(static_cast<std::size_t>(channels * out.length));
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t t = 0; t < out.length; ++t)
      out.features[static_cast<std::size_t>(c * out.length + t)] =
          features[static_cast<std::size_t>(c * length + offset + t)];
  return out;
}

void validate_synth_spec(const SynthDatasetSpec& spec) {
  require(spec.num_classes >= 2, "synth spec: need at least two classes");
  require(spec.channels >= 1, "synth spec: channels must be positive");
  require(spec.template_len >= 1, "synth spec: template length must be positive");
  require(spec.t_min >= spec.template_len,
          "synth spec: t_min must fit the class template");
  require(spec.t_max >= spec.t_min, "synth spec: t_max must be >= t_min");
  require(spec.train_per_class >= 1, "synth spec: train_per_class must be >= 1");
  require(spec.val_per_class >= 0 && spec.test_per_class >= 0,
          "synth spec: split sizes must be nonnegative");
  require(spec.noise_sigma >= 0.0, "synth spec: noise sigma must be nonnegative");
  require(spec.confusable_fraction >= 0.0 && spec.confusable_fraction <= 1.0,
          "synth spec: confusable fraction must lie in [0,1]");
  require(spec.suffix_len >= 1 && spec.suffix_len <= spec.template_len,
          "synth spec: suffix length must lie in [1, template_len]");
  require(spec.suffix_scale >= 0.0, "synth spec: suffix scale must be nonnegative");
}

namespace {

// Two passes of a 3-tap box filter along time, reflecting at the borders;
// turns white noise into a low-frequency pattern convs can latch onto.
void smooth_time(std::vector<double>& buf, std::int64_t C, std::int64_t T) {
  std::vector<double> tmp(buf.size());
  for (int pass = 0; pass < 2; ++pass) {
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t tl = t == 0 ? 0 : t - 1;
        const std::int64_t tr = t == T - 1 ? T - 1 : t + 1;
        tmp[static_cast<std::size_t>(c * T + t)] =
            (buf[static_cast<std::size_t>(c * T + tl)] +
             buf[static_cast<std::size_t>(c * T + t)] +
             buf[static_cast<std::size_t>(c * T + tr)]) /
            3.0;
      }
    buf.swap(tmp);
  }
}

void normalize_rms(std::vector<double>& buf) {
  double ss = 0;
  for (double v : buf) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(buf.size()));
  if (rms > 0)
    for (double& v : buf) v /= rms;
}

std::vector<double> smooth_unit_pattern(std::int64_t C, std::int64_t T,
                                        RngStream& rng) {
  std::vector<double> buf(static_cast<std::size_t>(C * T));
  for (double& v : buf) v = rng.gaussian();
  smooth_time(buf, C, T);
  normalize_rms(buf);
  return buf;
}

std::vector<Sample> make_split(const SynthDatasetSpec& spec,
                               const std::vector<std::vector<double>>& templates,
                               std::int64_t per_class, RngStream& rng) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(spec.num_classes * per_class));
  for (std::int64_t c = 0; c < spec.num_classes; ++c) {
    const auto& tpl = templates[static_cast<std::size_t>(c)];
    for (std::int64_t s = 0; s < per_class; ++s) {
      Sample smp;
      smp.label = c;
      smp.length = rng.uniform_int(spec.t_min, spec.t_max);
      const std::int64_t offset =
          rng.uniform_int(0, smp.length - spec.template_len);
      smp.features.assign(
          static_cast<std::size_t>(spec.channels * smp.length), 0.0);
      for (std::int64_t ch = 0; ch < spec.channels; ++ch)
        for (std::int64_t t = 0; t < spec.template_len; ++t)
          smp.features[static_cast<std::size_t>(ch * smp.length + offset + t)] =
              tpl[static_cast<std::size_t>(ch * spec.template_len + t)];
      if (spec.noise_sigma > 0.0)
        for (double& v : smp.features) v += spec.noise_sigma * rng.gaussian();
      out.push_back(std::move(smp));
    }
  }
  return out;
}

}  // namespace

SynthDataset make_synth_dataset(const SynthDatasetSpec& spec) {
  validate_synth_spec(spec);
  SynthDataset ds;
  ds.spec = spec;

  // Paired classes come first: (0,1), (2,3), ... The twin copies its
  // partner's template and perturbs only the trailing suffix frames, so the
  // pair is separable only by late-sequence evidence.
  const auto num_pairs = static_cast<std::int64_t>(
      spec.confusable_fraction * static_cast<double>(spec.num_classes) / 2.0);
  RngStream tpl_rng(derive_seed(spec.seed, "templates"));
  ds.templates.resize(static_cast<std::size_t>(spec.num_classes));
  for (std::int64_t c = 0; c < spec.num_classes; ++c) {
    const bool is_twin = c < 2 * num_pairs && (c % 2 == 1);
    if (!is_twin) {
      ds.templates[static_cast<std::size_t>(c)] =
          smooth_unit_pattern(spec.channels, spec.template_len, tpl_rng);
      continue;
    }
    auto tpl = ds.templates[static_cast<std::size_t>(c - 1)];
    auto delta = smooth_unit_pattern(spec.channels, spec.suffix_len, tpl_rng);
    for (std::int64_t ch = 0; ch < spec.channels; ++ch)
      for (std::int64_t t = 0; t < spec.suffix_len; ++t)
        tpl[static_cast<std::size_t>(ch * spec.template_len + spec.template_len -
                                     spec.suffix_len + t)] +=
            spec.suffix_scale *
            delta[static_cast<std::size_t>(ch * spec.suffix_len + t)];
    ds.templates[static_cast<std::size_t>(c)] = std::move(tpl);
  }

  RngStream train_rng(derive_seed(spec.seed, "split_train"));
  RngStream val_rng(derive_seed(spec.seed, "split_val"));
  RngStream test_rng(derive_seed(spec.seed, "split_test"));
  ds.train = make_split(spec, ds.templates, spec.train_per_class, train_rng);
  ds.val = make_split(spec, ds.templates, spec.val_per_class, val_rng);
  ds.test = make_split(spec, ds.templates, spec.test_per_class, test_rng);
  return ds;
}

}  // namespace vsr
