// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vsr/heads.hpp"
#include "vsr/ops.hpp"
#include "vsr/rng.hpp"

namespace vsr {

struct TrainConfig {
  std::int64_t epochs = 20;
  double initial_lr = 3e-4;
  std::int64_t batch_size = 32;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double mixup_alpha = 0.4;     // 0 disables mixup
  bool variable_length = true;  // random contiguous temporal crops at train time
  std::int64_t crop_min = 14;   // shortest crop the augmentation may produce
  std::uint64_t seed = 1;
  bool deterministic = true;    // single-threaded fixed-order execution
};

void validate_train_config(const TrainConfig& cfg);

// Synthetic sequence-classification task. Each class is a fixed smooth
// template inserted at a random offset into a variable-length clip plus iid
// gaussian noise; confusable pairs share a template and differ only in a
// perturbed suffix, so telling them apart needs the clip tail.
struct SynthDatasetSpec {
  std::int64_t num_classes = 20;
  std::int64_t channels = 32;
  std::int64_t t_min = 18;
  std::int64_t t_max = 29;
  std::int64_t train_per_class = 250;
  std::int64_t val_per_class = 50;
  std::int64_t test_per_class = 50;
  double noise_sigma = 1.0;
  double confusable_fraction = 0.5;  // fraction of classes living in pairs
  std::int64_t template_len = 12;
  std::int64_t suffix_len = 4;
  double suffix_scale = 0.4;  // perturbation size of the pair twin's suffix
  std::uint64_t seed = 1;
};

struct Sample {
  std::vector<double> features;  // row-major [channels, length]
  std::int64_t length = 0;
  std::int64_t label = 0;
};

struct SynthDataset {
  SynthDatasetSpec spec;
  std::vector<Sample> train, val, test;
  // Class templates, row-major [channels, template_len]; exposed so tests can
  // run the nearest-template oracle against the generator.
  std::vector<std::vector<double>> templates;
};

void validate_synth_spec(const SynthDatasetSpec& spec);
SynthDataset make_synth_dataset(const SynthDatasetSpec& spec);

// Uniform contiguous crop: length' ~ U[t_min, length], offset uniform over
// the valid range. Identity when t_min == length.
struct CropResult {
  std::vector<double> features;  // [channels, length']
  std::int64_t length = 0;
};
CropResult variable_length_crop(const std::vector<double>& features,
                                std::int64_t channels, std::int64_t length,
                                std::int64_t t_min, RngStream& rng);

double cosine_lr(std::int64_t epoch, std::int64_t total_epochs, double lr0);

template <typename S>
struct AdamWState {
  std::vector<std::vector<S>> m, v;
  std::int64_t step = 0;
};

template <typename S>
AdamWState<S> make_adamw_state(const std::vector<TensorPtr<S>>& params) {
  AdamWState<S> st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const auto& p : params) {
    st.m.emplace_back(static_cast<std::size_t>(p->numel()), S(0));
    st.v.emplace_back(static_cast<std::size_t>(p->numel()), S(0));
  }
  return st;
}

// One decoupled-weight-decay Adam update. Decay multiplies the parameter
// directly and never enters the moment estimates.
template <typename S>
void adamw_step(const std::vector<TensorPtr<S>>& params, AdamWState<S>& st,
                double lr, const TrainConfig& cfg) {
  require(params.size() == st.m.size(), "adamw_step: state/parameter count mismatch");
  st.step += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    require(static_cast<std::int64_t>(st.m[i].size()) == p.numel(),
            "adamw_step: moment shape mismatch at parameter " + std::to_string(i));
    require(!p.grad.empty(), "adamw_step: parameter " + std::to_string(i) +
                                 " has no gradient buffer");
    const std::int64_t n = p.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      const double g = static_cast<double>(p.grad[jj]);
      const double m = b1 * static_cast<double>(st.m[i][jj]) + (1.0 - b1) * g;
      const double v = b2 * static_cast<double>(st.v[i][jj]) + (1.0 - b2) * g * g;
      st.m[i][jj] = static_cast<S>(m);
      st.v[i][jj] = static_cast<S>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      const double theta = static_cast<double>(p.at(j));
      p.at(j) = static_cast<S>(theta - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps) -
                               lr * cfg.weight_decay * theta);
    }
  }
}

// Zero-padded dense batch from per-sample [C, len] buffers.
template <typename S>
TensorPtr<S> pack_batch(const std::vector<const std::vector<double>*>& feats,
                        const std::vector<std::int64_t>& lengths, std::int64_t C) {
  require(!feats.empty() && feats.size() == lengths.size(), "pack_batch size mismatch");
  const auto B = static_cast<std::int64_t>(feats.size());
  std::int64_t T = 1;
  for (auto l : lengths) T = std::max(T, l);
  auto x = make_tensor<S>({B, C, T});
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& f = *feats[static_cast<std::size_t>(b)];
    const std::int64_t L = lengths[static_cast<std::size_t>(b)];
    require(static_cast<std::int64_t>(f.size()) == C * L,
            "pack_batch: feature buffer does not match [C,len] at item " +
                std::to_string(b));
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t t = 0; t < L; ++t)
        x->at((b * C + c) * T + t) = static_cast<S>(f[static_cast<std::size_t>(c * L + t)]);
  }
  return x;
}

template <typename S>
struct MixedBatch {
  TensorPtr<S> x;
  std::vector<std::int64_t> y_i, y_j, lengths;
  double lambda = 1.0;
};

// One lambda ~ Beta(alpha, alpha) per batch, partners drawn by a seeded
// permutation: x' = lambda*x + (1-lambda)*x[perm]. The mixed clip's valid
// window is the longer of the two (the shorter partner contributes zeros
// past its end, matching its padding). alpha == 0 disables mixing.
template <typename S>
MixedBatch<S> mixup_batch(const TensorPtr<S>& x, const std::vector<std::int64_t>& y,
                          const std::vector<std::int64_t>& lengths, double alpha,
                          RngStream& rng) {
  require(x->shape.size() == 3, "mixup_batch input must be [B,C,T]");
  const std::int64_t B = x->shape[0], C = x->shape[1], T = x->shape[2];
  require(static_cast<std::int64_t>(y.size()) == B &&
              static_cast<std::int64_t>(lengths.size()) == B,
          "mixup_batch label/length size mismatch");
  require(alpha >= 0.0, "mixup alpha must be nonnegative");
  MixedBatch<S> out;
  if (alpha == 0.0) {
    out.x = x;
    out.y_i = y;
    out.y_j = y;
    out.lengths = lengths;
    out.lambda = 1.0;
    return out;
  }
  out.lambda = rng.beta(alpha, alpha);
  std::vector<std::int64_t> perm(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) perm[static_cast<std::size_t>(b)] = b;
  rng.shuffle(perm);
  out.x = make_tensor<S>(x->shape);
  const S lam = static_cast<S>(out.lambda);
  for (std::int64_t b = 0; b < B; ++b) {
    const std::int64_t pb = perm[static_cast<std::size_t>(b)];
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t t = 0; t < T; ++t)
        out.x->at((b * C + c) * T + t) =
            lam * x->at((b * C + c) * T + t) +
            (S(1) - lam) * x->at((pb * C + c) * T + t);
  }
  out.y_i = y;
  out.y_j.resize(static_cast<std::size_t>(B));
  out.lengths.resize(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) {
    const std::int64_t pb = perm[static_cast<std::size_t>(b)];
    out.y_j[static_cast<std::size_t>(b)] = y[static_cast<std::size_t>(pb)];
    out.lengths[static_cast<std::size_t>(b)] =
        std::max(lengths[static_cast<std::size_t>(b)],
                 lengths[static_cast<std::size_t>(pb)]);
  }
  return out;
}

struct EpochLogEntry {
  std::int64_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double ce_term = 0;
  double kd_term = 0;
  double val_top1 = 0;
};

template <typename S>
struct BatchLossParts {
  TensorPtr<S> loss;
  double ce = 0;
  double kd = 0;
};

// Per-batch loss hook. Receives the (possibly mixed) input so distillation
// losses can run the teacher on exactly what the student saw.
template <typename S>
using BatchLossFn = std::function<BatchLossParts<S>(
    Tape<S>* tape, const TensorPtr<S>& x, const std::vector<std::int64_t>& lengths,
    const TensorPtr<S>& student_logits, const std::vector<std::int64_t>& y_i,
    const std::vector<std::int64_t>& y_j, double lambda)>;

// Mixup-weighted cross entropy: lambda*CE(y_i) + (1-lambda)*CE(y_j).
template <typename S>
BatchLossParts<S> mixed_ce_loss(Tape<S>* tape, const TensorPtr<S>& logits,
                                const std::vector<std::int64_t>& y_i,
                                const std::vector<std::int64_t>& y_j,
                                double lambda) {
  auto logp = log_softmax(tape, logits);
  auto ce_i = nll_mean(tape, logp, y_i);
  auto ce_j = nll_mean(tape, logp, y_j);
  BatchLossParts<S> parts;
  parts.loss = add_scaled(tape, ce_i, lambda, ce_j, 1.0 - lambda);
  parts.ce = static_cast<double>(parts.loss->at(0));
  return parts;
}

template <typename S>
BatchLossFn<S> plain_ce_loss_fn() {
  return [](Tape<S>* tape, const TensorPtr<S>&, const std::vector<std::int64_t>&,
            const TensorPtr<S>& logits, const std::vector<std::int64_t>& y_i,
            const std::vector<std::int64_t>& y_j, double lambda) {
    return mixed_ce_loss<S>(tape, logits, y_i, y_j, lambda);
  };
}

template <typename S>
std::vector<S> predict_logits(const HeadConfig& cfg, const HeadParams<S>& params,
                              const TensorPtr<S>& x,
                              const std::vector<std::int64_t>& lengths) {
  auto z = head_forward<S>(nullptr, cfg, params, x, lengths, false);
  return z->data;
}

inline std::int64_t argmax_row(const double* row, std::int64_t K) {
  std::int64_t best = 0;
  for (std::int64_t k = 1; k < K; ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

// Top-1 accuracy over a split; eval mode, full-length clips, no augmentation.
// Per-sample logits are independent of batch composition, so the result is
// invariant to the order of the split.
template <typename S>
double evaluate(const HeadConfig& cfg, const HeadParams<S>& params,
                const std::vector<Sample>& split, std::int64_t batch_size = 32) {
  require(!split.empty(), "evaluate needs a non-empty split");
  require(batch_size >= 1, "evaluate batch size must be positive");
  const std::int64_t N = static_cast<std::int64_t>(split.size());
  const std::int64_t K = cfg.num_classes;
  std::int64_t hits = 0;
  for (std::int64_t start = 0; start < N; start += batch_size) {
    const std::int64_t B = std::min(batch_size, N - start);
    std::vector<const std::vector<double>*> feats;
    std::vector<std::int64_t> lens, labels;
    for (std::int64_t i = 0; i < B; ++i) {
      const auto& s = split[static_cast<std::size_t>(start + i)];
      feats.push_back(&s.features);
      lens.push_back(s.length);
      labels.push_back(s.label);
    }
    auto x = pack_batch<S>(feats, lens, cfg.input_channels);
    auto z = head_forward<S>(nullptr, cfg, params, x, lens, false);
    std::vector<double> row(static_cast<std::size_t>(K));
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t k = 0; k < K; ++k)
        row[static_cast<std::size_t>(k)] = static_cast<double>(z->at(b * K + k));
      if (argmax_row(row.data(), K) == labels[static_cast<std::size_t>(b)]) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(N);
}

// The §-recipe loop. Per epoch: seeded shuffle, then per batch: variable
// length crop -> mixup -> forward -> loss -> backward -> adamw. Metrics are
// sample-weighted epoch means; validation accuracy is appended per epoch.
template <typename S>
std::vector<EpochLogEntry> train(const HeadConfig& cfg, HeadParams<S>& params,
                                 const SynthDataset& data, const TrainConfig& tc,
                                 const BatchLossFn<S>& loss_fn) {
  validate_head_config(cfg);
  validate_train_config(tc);
  require(cfg.input_channels == data.spec.channels,
          "head input channels do not match dataset channels");
  require(!data.train.empty(), "training split is empty");
  require(tc.crop_min <= data.spec.t_min,
          "crop_min exceeds the shortest clip in the dataset");

  auto trainable = params.trainable();
  auto opt = make_adamw_state<S>(trainable);
  const std::int64_t N = static_cast<std::int64_t>(data.train.size());
  std::vector<std::int64_t> order(static_cast<std::size_t>(N));
  for (std::int64_t i = 0; i < N; ++i) order[static_cast<std::size_t>(i)] = i;

  std::vector<EpochLogEntry> log;
  Tape<S> tape;
  for (std::int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, tc.epochs, tc.initial_lr);
    RngStream shuffle_rng(derive_seed(derive_seed(tc.seed, "shuffle"),
                                      static_cast<std::uint64_t>(epoch)));
    RngStream crop_rng(derive_seed(derive_seed(tc.seed, "crop"),
                                   static_cast<std::uint64_t>(epoch)));
    RngStream mixup_rng(derive_seed(derive_seed(tc.seed, "mixup"),
                                    static_cast<std::uint64_t>(epoch)));
    RngStream dropout_rng(derive_seed(derive_seed(tc.seed, "dropout"),
                                      static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0, ce_sum = 0, kd_sum = 0;
    for (std::int64_t start = 0; start < N; start += tc.batch_size) {
      const std::int64_t B = std::min(tc.batch_size, N - start);
      std::vector<std::vector<double>> cropped(static_cast<std::size_t>(B));
      std::vector<const std::vector<double>*> feats(static_cast<std::size_t>(B));
      std::vector<std::int64_t> lens(static_cast<std::size_t>(B));
      std::vector<std::int64_t> labels(static_cast<std::size_t>(B));
      for (std::int64_t i = 0; i < B; ++i) {
        const auto& s = data.train[static_cast<std::size_t>(
            order[static_cast<std::size_t>(start + i)])];
        const auto ii = static_cast<std::size_t>(i);
        labels[ii] = s.label;
        if (tc.variable_length) {
          auto crop = variable_length_crop(s.features, data.spec.channels, s.length,
                                           tc.crop_min, crop_rng);
          cropped[ii] = std::move(crop.features);
          lens[ii] = crop.length;
          feats[ii] = &cropped[ii];
        } else {
          lens[ii] = s.length;
          feats[ii] = &s.features;
        }
      }
      auto x = pack_batch<S>(feats, lens, data.spec.channels);
      auto mixed = mixup_batch<S>(x, labels, lens, tc.mixup_alpha, mixup_rng);

      try {
        auto z = head_forward<S>(&tape, cfg, params, mixed.x, mixed.lengths, true,
                                 &dropout_rng);
        auto parts = loss_fn(&tape, mixed.x, mixed.lengths, z, mixed.y_i, mixed.y_j,
                             mixed.lambda);
        check_finite(*parts.loss, "train loss");
        for (auto& t : trainable) t->zero_grad();
        tape.backward(parts.loss);
        adamw_step(trainable, opt, lr, tc);
        loss_sum += static_cast<double>(parts.loss->at(0)) * static_cast<double>(B);
        ce_sum += parts.ce * static_cast<double>(B);
        kd_sum += parts.kd * static_cast<double>(B);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " +
                           std::to_string(epoch) + ", batch at sample " +
                           std::to_string(start) + ")");
      }
      tape.reset();
    }

    EpochLogEntry entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.train_loss = loss_sum / static_cast<double>(N);
    entry.ce_term = ce_sum / static_cast<double>(N);
    entry.kd_term = kd_sum / static_cast<double>(N);
    entry.val_top1 = data.val.empty()
                         ? 0.0
                         : evaluate<S>(cfg, params, data.val, tc.batch_size);
    log.push_back(entry);
  }
  return log;
}

}  // namespace vsr
