// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vsr/train.hpp"

namespace vsr {

// Combined-loss knobs: total = CE(student, labels) + alpha * KL(teacher, student)
// at the configured softmax temperature. The divergence defaults to the
// teacher-as-target direction KL(p_t || p_s); `reverse` swaps the roles.
struct KDConfig {
  double alpha = 1.0;
  double temperature = 1.0;
  bool reverse = false;
};

inline void validate_kd_config(const KDConfig& cfg) {
  require(cfg.alpha >= 0.0, "kd config: alpha must be nonnegative");
  require(cfg.temperature > 0.0, "kd config: temperature must be positive");
}

// Same shape the train loop logs: total, label term, divergence term.
template <typename S>
using KdParts = BatchLossParts<S>;

// KL term of the combined loss against constant teacher logits. Gradients
// reach the student logits only; the teacher side is plain data.
template <typename S>
TensorPtr<S> kd_kl_term(Tape<S>* tape, const TensorPtr<S>& z_s,
                        const std::vector<S>& teacher_logits, const KDConfig& cfg) {
  validate_kd_config(cfg);
  require(z_s->shape.size() == 2, "kd_kl_term student logits must be [B,K]");
  const std::int64_t B = z_s->shape[0], K = z_s->shape[1];
  require(static_cast<std::int64_t>(teacher_logits.size()) == B * K,
          "kd_kl_term teacher logits size mismatch");
  auto zs = cfg.temperature == 1.0 ? z_s : scale(tape, z_s, 1.0 / cfg.temperature);
  auto lps = log_softmax(tape, zs);
  std::vector<S> zt = teacher_logits;
  if (cfg.temperature != 1.0)
    for (auto& v : zt) v = static_cast<S>(static_cast<double>(v) / cfg.temperature);
  auto lpt = log_softmax_rows(zt, B, K);
  if (cfg.reverse) return kl_student_mean(tape, lps, lpt);
  return kl_teacher_logp_mean(tape, lps, lpt);
}

// Mixup-aware combined loss; y_j/lambda default to the unmixed case. The
// label term is lambda*CE(y_i) + (1-lambda)*CE(y_j); the KL term is applied
// once, unweighted, since both mixup partners share the same teacher output.
template <typename S>
KdParts<S> kd_loss_mixed(Tape<S>* tape, const TensorPtr<S>& z_s,
                         const std::vector<S>* teacher_logits,
                         const std::vector<std::int64_t>& y_i,
                         const std::vector<std::int64_t>& y_j, double lambda,
                         const KDConfig& cfg) {
  validate_kd_config(cfg);
  KdParts<S> parts = mixed_ce_loss<S>(tape, z_s, y_i, y_j, lambda);
  if (teacher_logits == nullptr) return parts;
  auto kl = kd_kl_term(tape, z_s, *teacher_logits, cfg);
  parts.kd = static_cast<double>(kl->at(0));
  parts.loss = add_scaled(tape, parts.loss, 1.0, kl, cfg.alpha);
  return parts;
}

// The combined loss on plain labels. Null teacher logits mean pure CE.
template <typename S>
KdParts<S> kd_loss(Tape<S>* tape, const TensorPtr<S>& z_s, const TensorPtr<S>& z_t,
                   const std::vector<std::int64_t>& y, const KDConfig& cfg) {
  if (z_t) {
    require(z_t->shape == z_s->shape,
            "kd_loss teacher logits shape " + shape_str(z_t->shape) +
                " does not match student " + shape_str(z_s->shape));
    return kd_loss_mixed<S>(tape, z_s, &z_t->data, y, y, 1.0, cfg);
  }
  return kd_loss_mixed<S>(tape, z_s, nullptr, y, y, 1.0, cfg);
}

template <typename S>
struct TrainedModel {
  HeadConfig cfg;
  HeadParams<S> params;
  double val_top1 = 0.0;
};

// One teacher -> student iteration, as recorded in run logs and manifests.
struct GenerationRecord {
  std::int64_t index = 0;
  std::string student_config_json;
  std::string checkpoint_path;          // filled in by callers that persist
  std::string teacher_checkpoint_path;  // empty for generation 0
  double val_top1 = 0.0;
  std::uint64_t seed = 0;
  std::int64_t epochs = 0;
};

struct StopRule {
  std::int64_t max_generations = 5;  // total generations, generation 0 included
  std::int64_t patience = 1;         // consecutive non-improving generations allowed
};

inline void validate_stop_rule(const StopRule& rule) {
  require(rule.max_generations >= 1, "stop rule: max_generations must be >= 1");
  require(rule.patience >= 1, "stop rule: patience must be >= 1");
}

// Trains one student, distilling from `teacher` when present (pure CE
// otherwise, which is bit-identical to train() with the same seed). The
// teacher runs tape-free on the same mixed batch inputs the student sees.
template <typename S>
TrainedModel<S> train_generation(const TrainedModel<S>* teacher,
                                 const HeadConfig& student_cfg,
                                 const SynthDataset& data, const TrainConfig& tc,
                                 const KDConfig& kd, std::uint64_t seed,
                                 std::vector<EpochLogEntry>* log_out = nullptr) {
  validate_kd_config(kd);
  if (teacher) {
    require(teacher->cfg.num_classes == student_cfg.num_classes,
            "teacher and student class counts differ");
    require(teacher->cfg.input_channels == student_cfg.input_channels,
            "teacher and student input widths differ");
  }
  TrainedModel<S> out;
  out.cfg = student_cfg;
  out.params = init_params<S>(student_cfg, seed);
  TrainConfig tcc = tc;
  tcc.seed = seed;

  BatchLossFn<S> loss_fn;
  if (teacher) {
    const TrainedModel<S>* t = teacher;
    KDConfig kdc = kd;
    loss_fn = [t, kdc](Tape<S>* tape, const TensorPtr<S>& x,
                       const std::vector<std::int64_t>& lengths,
                       const TensorPtr<S>& z_s, const std::vector<std::int64_t>& y_i,
                       const std::vector<std::int64_t>& y_j, double lambda) {
      auto z_t = predict_logits<S>(t->cfg, t->params, x, lengths);
      return kd_loss_mixed<S>(tape, z_s, &z_t, y_i, y_j, lambda, kdc);
    };
  } else {
    loss_fn = plain_ce_loss_fn<S>();
  }

  auto log = train<S>(student_cfg, out.params, data, tcc, loss_fn);
  out.val_top1 = data.val.empty()
                     ? 0.0
                     : evaluate<S>(student_cfg, out.params, data.val, tc.batch_size);
  if (log_out) *log_out = std::move(log);
  return out;
}

template <typename S>
using GenerationTrainer =
    std::function<TrainedModel<S>(const TrainedModel<S>* teacher, std::int64_t gen)>;

// Generation 0 uses the base seed untouched so a one-generation chain is
// bit-identical to plain training under the same seed.
inline std::uint64_t born_again_generation_seed(std::uint64_t base_seed,
                                                std::int64_t gen) {
  if (gen == 0) return base_seed;
  return derive_seed(derive_seed(base_seed, "generation"),
                     static_cast<std::uint64_t>(gen));
}

inline std::uint64_t sequential_step_seed(std::uint64_t base_seed,
                                          std::size_t step) {
  if (step == 0) return base_seed;
  return derive_seed(derive_seed(base_seed, "seq_step"),
                     static_cast<std::uint64_t>(step));
}

// Self-distillation chain driver: generation 0 trains teacher-free, then each
// generation distills from its predecessor until validation top-1 stops
// strictly improving (the non-improving generation is kept) or the cap hits.
// Injectable trainer so the stop rule is testable without real training.
template <typename S>
std::vector<TrainedModel<S>> born_again_run(const GenerationTrainer<S>& trainer,
                                            const StopRule& rule) {
  validate_stop_rule(rule);
  std::vector<TrainedModel<S>> chain;
  chain.push_back(trainer(nullptr, 0));
  double best = chain.back().val_top1;
  std::int64_t stale = 0;
  for (std::int64_t g = 1; g < rule.max_generations; ++g) {
    auto next = trainer(&chain.back(), g);
    chain.push_back(std::move(next));
    const double v = chain.back().val_top1;
    if (v > best) {
      best = v;
      stale = 0;
    } else {
      ++stale;
      if (stale >= rule.patience) break;
    }
  }
  return chain;
}

template <typename S>
std::vector<TrainedModel<S>> born_again(const HeadConfig& cfg,
                                        const SynthDataset& data,
                                        const TrainConfig& tc, const KDConfig& kd,
                                        const StopRule& rule, std::uint64_t base_seed,
                                        std::vector<std::vector<EpochLogEntry>>* logs = nullptr) {
  GenerationTrainer<S> trainer = [&](const TrainedModel<S>* teacher, std::int64_t g) {
    const std::uint64_t seed = born_again_generation_seed(base_seed, g);
    std::vector<EpochLogEntry> log;
    auto m = train_generation<S>(teacher, cfg, data, tc, kd, seed, &log);
    if (logs) logs->push_back(std::move(log));
    return m;
  };
  return born_again_run<S>(trainer, rule);
}

// Teacher -> ... -> target chain across different head configs. Step 0
// distills from `initial_teacher` (pure CE when null); step i distills from
// step i-1's student. Returns every step's model, final student last.
template <typename S>
std::vector<TrainedModel<S>> sequential_distill(
    const TrainedModel<S>* initial_teacher, const std::vector<HeadConfig>& steps,
    const SynthDataset& data, const TrainConfig& tc, const KDConfig& kd,
    std::uint64_t base_seed, std::vector<std::vector<EpochLogEntry>>* logs = nullptr) {
  require(!steps.empty(), "sequential distillation needs at least one step");
  std::vector<TrainedModel<S>> chain;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const TrainedModel<S>* teacher = i == 0 ? initial_teacher : &chain.back();
    const std::uint64_t seed = sequential_step_seed(base_seed, i);
    std::vector<EpochLogEntry> log;
    chain.push_back(
        train_generation<S>(teacher, steps[i], data, tc, kd, seed, &log));
    if (logs) logs->push_back(std::move(log));
  }
  return chain;
}

// Mean of per-model softmax outputs (or softmax of mean logits behind the
// flag). Rows sum to 1 by construction.
template <typename S>
std::vector<S> ensemble_predict(const std::vector<const TrainedModel<S>*>& models,
                                const TensorPtr<S>& x,
                                const std::vector<std::int64_t>& lengths,
                                bool average_logits = false) {
  require(!models.empty(), "ensemble needs at least one model");
  const std::int64_t K = models[0]->cfg.num_classes;
  for (const auto* m : models) {
    require(m != nullptr, "ensemble got a null model");
    require(m->cfg.num_classes == K, "ensemble class counts differ");
  }
  require(x->shape.size() == 3, "ensemble input must be [B,C,T]");
  const std::int64_t B = x->shape[0];
  std::vector<S> acc(static_cast<std::size_t>(B * K), S(0));
  for (const auto* m : models) {
    auto z = predict_logits<S>(m->cfg, m->params, x, lengths);
    if (!average_logits) z = softmax_rows(z, B, K);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += z[i];
  }
  const S inv = S(1) / static_cast<S>(models.size());
  for (auto& v : acc) v *= inv;
  if (average_logits) acc = softmax_rows(acc, B, K);
  return acc;
}

// Split accuracy of the (probability-averaged) ensemble.
template <typename S>
double ensemble_top1(const std::vector<const TrainedModel<S>*>& models,
                     const std::vector<Sample>& split, std::int64_t batch_size = 32,
                     bool average_logits = false) {
  require(!models.empty(), "ensemble needs at least one model");
  require(!split.empty(), "ensemble_top1 needs a non-empty split");
  const std::int64_t C = models[0]->cfg.input_channels;
  const std::int64_t K = models[0]->cfg.num_classes;
  const std::int64_t N = static_cast<std::int64_t>(split.size());
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
    auto x = pack_batch<S>(feats, lens, C);
    auto probs = ensemble_predict<S>(models, x, lens, average_logits);
    std::vector<double> row(static_cast<std::size_t>(K));
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t k = 0; k < K; ++k)
        row[static_cast<std::size_t>(k)] =
            static_cast<double>(probs[static_cast<std::size_t>(b * K + k)]);
      if (argmax_row(row.data(), K) == labels[static_cast<std::size_t>(b)]) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(N);
}

}  // namespace vsr
