// SPDX-License-Identifier: Apache-2.0
//
// vsr: one binary for the whole experiment surface. `audit` prices model
// graphs, `train`/`distill` fit one student, `born-again` and `seq-distill`
// run distillation chains, `eval` scores saved checkpoints and ensembles.
// All write-mode commands emit the same artifact set (checkpoints, epoch
// log, metrics, manifest) so any run can be traced and reproduced.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "vsr/arch/builders.hpp"
#include "vsr/arch/cost.hpp"
#include "vsr/arch/serialize.hpp"
#include "vsr/runio.hpp"
#include "vsr/sha256.hpp"

namespace {

using Scalar = double;
using vsr::ConfigError;
using vsr::IoError;
using vsr::NumericError;

std::filesystem::path join(const std::string& dir, const std::string& name) {
  return std::filesystem::path(dir) / name;
}

vsr::Shape parse_input_shape(const std::string& text) {
  vsr::Shape shape;
  std::string cur;
  for (char c : text + "x") {
    if (c == 'x' || c == 'X') {
      if (cur.empty()) throw ConfigError("bad --input '" + text + "', want CxTxHxW");
      try {
        shape.push_back(std::stoll(cur));
      } catch (const std::exception&) {
        throw ConfigError("bad --input dimension '" + cur + "'");
      }
      cur.clear();
    } else {
      cur += c;
    }
  }
  vsr::require(shape.size() >= 2 && shape.size() <= 4,
               "--input wants 2 to 4 dimensions, got " + std::to_string(shape.size()));
  for (auto d : shape)
    vsr::require(d >= 1, "--input dimensions must be positive");
  return shape;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// audit

struct AuditOptions {
  std::vector<std::string> models;
  std::string input;
  std::string format = "table";
  std::string out;
};

std::string audit_json(const std::vector<vsr::arch::AuditRow>& rows) {
  nlohmann::json j;
  j["schema_version"] = 1;
  auto& arr = j["models"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row;
    row["name"] = r.name;
    row["params"] = r.params;
    row["macs"] = r.macs;
    row["ratio_params"] = r.ratio_params;
    row["ratio_macs"] = r.ratio_macs;
    arr.push_back(row);
  }
  return j.dump(2);
}

int cmd_audit(const AuditOptions& opt) {
  vsr::require(!opt.models.empty(), "audit needs --models");
  std::vector<vsr::arch::ModelSpec> specs;
  const auto presets = vsr::arch::preset_names();
  if (opt.models.size() == 1 &&
      std::find(presets.begin(), presets.end(), opt.models[0]) != presets.end()) {
    specs = vsr::arch::preset_models(opt.models[0]);
  } else {
    for (const auto& path : opt.models)
      specs.push_back(vsr::arch::load_model_spec(path));
  }
  if (!opt.input.empty()) {
    const auto shape = parse_input_shape(opt.input);
    for (auto& s : specs) s.input_shape = shape;
  }
  const auto rows = vsr::arch::audit_table(specs);
  const std::string text =
      opt.format == "json" ? audit_json(rows) + "\n" : vsr::arch::render_audit_table(rows);
  if (opt.out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    vsr::write_text_file(opt.out, text);
    std::printf("wrote %s\n", opt.out.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// shared run scaffolding

struct RunOptions {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

struct RunContext {
  vsr::RunConfig cfg;
  std::string config_sha256;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;  // file names relative to out_dir
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
};

RunContext open_run(const RunOptions& opt, const std::string& fallback_dir) {
  RunContext ctx;
  const std::string text = vsr::read_text_file(opt.config_path);
  ctx.cfg = vsr::run_config_from_json(text);
  ctx.config_sha256 = vsr::sha256_hex(text);
  ctx.seed = opt.seed_given ? opt.seed : ctx.cfg.train.seed;
  ctx.cfg.train.seed = ctx.seed;
  ctx.out_dir = vsr::resolve_out_dir(opt.out, fallback_dir);
  vsr::ensure_dir(ctx.out_dir);
  return ctx;
}

void require_student(const vsr::RunConfig& cfg) {
  vsr::require(cfg.has_student, "run config needs a 'student' section");
  vsr::require(cfg.student.input_channels == cfg.dataset.channels,
               "student input_channels must match dataset channels");
}

void close_run(RunContext& ctx, const std::string& command,
               const RunOptions& opt, const vsr::RunMetrics& metrics) {
  vsr::RunMetrics m = metrics;
  m.config_sha256 = ctx.config_sha256;
  m.seed = ctx.seed;
  m.wall_time_seconds = elapsed_since(ctx.t0);
  vsr::write_metrics(join(ctx.out_dir, "metrics.json").string(), m);
  ctx.artifacts.push_back("metrics.json");

  vsr::RunManifest man;
  man.command = command;
  man.config_path = opt.config_path;
  man.config_sha256 = ctx.config_sha256;
  man.seed = ctx.seed;
  man.artifacts = ctx.artifacts;
  man.elapsed_seconds = m.wall_time_seconds;
  vsr::write_manifest(join(ctx.out_dir, "manifest.json").string(), man);
  std::printf("run artifacts in %s\n", ctx.out_dir.c_str());
}

void print_epochs(std::int64_t generation, const std::vector<vsr::EpochLogEntry>& log) {
  for (const auto& e : log)
    std::printf("gen %lld epoch %lld  lr %.3e  loss %.4f  ce %.4f  kd %.4f  val %.4f\n",
                static_cast<long long>(generation), static_cast<long long>(e.epoch),
                e.lr, e.train_loss, e.ce_term, e.kd_term, e.val_top1);
}

void save_generation(RunContext& ctx, const std::string& base,
                     const vsr::TrainedModel<Scalar>& m) {
  vsr::save_model_bundle(join(ctx.out_dir, base).string(), m.cfg, m.params);
  ctx.artifacts.push_back(base + ".json");
  ctx.artifacts.push_back(base + ".ckpt");
}

void write_records(RunContext& ctx, const std::vector<vsr::GenerationRecord>& recs) {
  vsr::write_text_file(join(ctx.out_dir, "records.json").string(),
                       vsr::generation_records_to_json(recs) + "\n");
  ctx.artifacts.push_back("records.json");
}

// ---------------------------------------------------------------------------
// train / distill

int cmd_train(const RunOptions& opt, bool teacher_required) {
  RunContext ctx = open_run(opt, teacher_required ? "distill-run" : "train-run");
  require_student(ctx.cfg);
  if (teacher_required)
    vsr::require(!ctx.cfg.teacher_model.empty(),
                 "distill needs a 'teacher' section naming a model bundle");

  const auto data = vsr::make_synth_dataset(ctx.cfg.dataset);
  vsr::TrainedModel<Scalar> teacher;
  const bool has_teacher = !ctx.cfg.teacher_model.empty();
  if (has_teacher) teacher = vsr::load_model_bundle<Scalar>(ctx.cfg.teacher_model);

  std::vector<vsr::EpochLogEntry> log;
  auto model = vsr::train_generation<Scalar>(has_teacher ? &teacher : nullptr,
                                             ctx.cfg.student, data, ctx.cfg.train,
                                             ctx.cfg.kd, ctx.seed, &log);
  print_epochs(0, log);
  save_generation(ctx, "model", model);
  vsr::append_epoch_log(join(ctx.out_dir, "epochs.jsonl").string(), 0, log);
  ctx.artifacts.push_back("epochs.jsonl");

  vsr::RunMetrics metrics;
  metrics.top1_val = model.val_top1;
  metrics.top1_test =
      data.test.empty() ? 0.0
                        : vsr::evaluate<Scalar>(model.cfg, model.params, data.test,
                                                ctx.cfg.train.batch_size);
  std::printf("val top-1 %.4f  test top-1 %.4f\n", metrics.top1_val, metrics.top1_test);
  close_run(ctx, teacher_required ? "distill" : "train", opt, metrics);
  return 0;
}

// ---------------------------------------------------------------------------
// born-again

int cmd_born_again(const RunOptions& opt) {
  RunContext ctx = open_run(opt, "born-again-run");
  require_student(ctx.cfg);
  vsr::require(ctx.cfg.teacher_model.empty(),
               "born-again starts from labels; remove the 'teacher' section");
  vsr::require(ctx.cfg.sequential.empty(),
               "born-again does not take a 'sequential' section");
  const vsr::StopRule rule = ctx.cfg.has_born_again ? ctx.cfg.born_again : vsr::StopRule{};

  const auto data = vsr::make_synth_dataset(ctx.cfg.dataset);
  std::vector<std::vector<vsr::EpochLogEntry>> logs;
  const auto chain = vsr::born_again<Scalar>(ctx.cfg.student, data, ctx.cfg.train,
                                             ctx.cfg.kd, rule, ctx.seed, &logs);

  std::vector<vsr::GenerationRecord> recs;
  const std::string epochs_path = join(ctx.out_dir, "epochs.jsonl").string();
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const std::string base = "gen" + std::to_string(i);
    print_epochs(static_cast<std::int64_t>(i), logs[i]);
    save_generation(ctx, base, chain[i]);
    vsr::append_epoch_log(epochs_path, static_cast<std::int64_t>(i), logs[i]);
    vsr::GenerationRecord r;
    r.index = static_cast<std::int64_t>(i);
    r.student_config_json = vsr::head_config_to_json(chain[i].cfg);
    r.checkpoint_path = base + ".ckpt";
    r.teacher_checkpoint_path = i == 0 ? "" : "gen" + std::to_string(i - 1) + ".ckpt";
    r.val_top1 = chain[i].val_top1;
    r.seed = vsr::born_again_generation_seed(ctx.seed, static_cast<std::int64_t>(i));
    r.epochs = ctx.cfg.train.epochs;
    recs.push_back(std::move(r));
  }
  ctx.artifacts.push_back("epochs.jsonl");
  write_records(ctx, recs);

  // Model selection across the chain: best validation top-1, earliest wins ties.
  std::size_t best = 0;
  for (std::size_t i = 1; i < chain.size(); ++i)
    if (chain[i].val_top1 > chain[best].val_top1) best = i;

  vsr::RunMetrics metrics;
  metrics.top1_val = chain[best].val_top1;
  metrics.top1_test =
      data.test.empty() ? 0.0
                        : vsr::evaluate<Scalar>(chain[best].cfg, chain[best].params,
                                                data.test, ctx.cfg.train.batch_size);
  for (std::size_t i = 0; i < chain.size(); ++i)
    std::printf("generation %zu val top-1 %.4f%s\n", i, chain[i].val_top1,
                i == best ? "  (selected)" : "");
  std::printf("selected test top-1 %.4f\n", metrics.top1_test);
  close_run(ctx, "born-again", opt, metrics);
  return 0;
}

// ---------------------------------------------------------------------------
// seq-distill

int cmd_seq_distill(const RunOptions& opt) {
  RunContext ctx = open_run(opt, "seq-distill-run");
  vsr::require(!ctx.cfg.sequential.empty(),
               "seq-distill needs a 'sequential' section listing head configs");
  for (const auto& step : ctx.cfg.sequential)
    vsr::require(step.input_channels == ctx.cfg.dataset.channels,
                 "sequential step input_channels must match dataset channels");

  const auto data = vsr::make_synth_dataset(ctx.cfg.dataset);
  vsr::TrainedModel<Scalar> teacher;
  const bool has_teacher = !ctx.cfg.teacher_model.empty();
  if (has_teacher) teacher = vsr::load_model_bundle<Scalar>(ctx.cfg.teacher_model);

  std::vector<std::vector<vsr::EpochLogEntry>> logs;
  const auto chain =
      vsr::sequential_distill<Scalar>(has_teacher ? &teacher : nullptr,
                                      ctx.cfg.sequential, data, ctx.cfg.train,
                                      ctx.cfg.kd, ctx.seed, &logs);

  std::vector<vsr::GenerationRecord> recs;
  const std::string epochs_path = join(ctx.out_dir, "epochs.jsonl").string();
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const std::string base = "step" + std::to_string(i);
    print_epochs(static_cast<std::int64_t>(i), logs[i]);
    save_generation(ctx, base, chain[i]);
    vsr::append_epoch_log(epochs_path, static_cast<std::int64_t>(i), logs[i]);
    vsr::GenerationRecord r;
    r.index = static_cast<std::int64_t>(i);
    r.student_config_json = vsr::head_config_to_json(chain[i].cfg);
    r.checkpoint_path = base + ".ckpt";
    r.teacher_checkpoint_path =
        i == 0 ? (has_teacher ? vsr::bundle_ckpt_path(ctx.cfg.teacher_model) : "")
               : "step" + std::to_string(i - 1) + ".ckpt";
    r.val_top1 = chain[i].val_top1;
    r.seed = vsr::sequential_step_seed(ctx.seed, i);
    r.epochs = ctx.cfg.train.epochs;
    recs.push_back(std::move(r));
  }
  ctx.artifacts.push_back("epochs.jsonl");
  write_records(ctx, recs);

  // The chain exists to produce its last (smallest) model; report that one.
  vsr::RunMetrics metrics;
  metrics.top1_val = chain.back().val_top1;
  metrics.top1_test =
      data.test.empty() ? 0.0
                        : vsr::evaluate<Scalar>(chain.back().cfg, chain.back().params,
                                                data.test, ctx.cfg.train.batch_size);
  for (std::size_t i = 0; i < chain.size(); ++i)
    std::printf("step %zu val top-1 %.4f\n", i, chain[i].val_top1);
  std::printf("final test top-1 %.4f\n", metrics.top1_test);
  close_run(ctx, "seq-distill", opt, metrics);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string config_path;
  std::vector<std::string> checkpoints;
  bool ensemble = false;
  bool average_logits = false;
  std::string split = "test";
  std::string format = "table";
};

int cmd_eval(const EvalOptions& opt) {
  vsr::require(!opt.checkpoints.empty(), "eval needs --checkpoints");
  const auto cfg = vsr::load_run_config(opt.config_path);
  const auto data = vsr::make_synth_dataset(cfg.dataset);
  const auto& split = opt.split == "val" ? data.val : data.test;
  vsr::require(opt.split == "val" || opt.split == "test",
               "--split must be 'val' or 'test'");
  vsr::require(!split.empty(), "requested split is empty");

  std::vector<vsr::TrainedModel<Scalar>> models;
  for (const auto& base : opt.checkpoints) {
    auto m = vsr::load_model_bundle<Scalar>(base);
    vsr::require(m.cfg.num_classes == cfg.dataset.num_classes,
                 "checkpoint '" + base + "' class count does not match dataset");
    vsr::require(m.cfg.input_channels == cfg.dataset.channels,
                 "checkpoint '" + base + "' input width does not match dataset");
    models.push_back(std::move(m));
  }

  nlohmann::json j;
  j["schema_version"] = 1;
  j["split"] = opt.split;
  auto& arr = j["models"] = nlohmann::json::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const double top1 = vsr::evaluate<Scalar>(models[i].cfg, models[i].params, split,
                                              cfg.train.batch_size);
    nlohmann::json row;
    row["checkpoint"] = opt.checkpoints[i];
    row["top1"] = top1;
    arr.push_back(row);
  }
  if (opt.ensemble) {
    std::vector<const vsr::TrainedModel<Scalar>*> ptrs;
    for (const auto& m : models) ptrs.push_back(&m);
    j["ensemble"] = {{"top1", vsr::ensemble_top1<Scalar>(ptrs, split,
                                                         cfg.train.batch_size,
                                                         opt.average_logits)},
                     {"average_logits", opt.average_logits}};
  }

  if (opt.format == "json") {
    std::printf("%s\n", j.dump(2).c_str());
  } else {
    for (const auto& row : arr)
      std::printf("%-40s top-1 %.4f\n", row["checkpoint"].get<std::string>().c_str(),
                  row["top1"].get<double>());
    if (opt.ensemble)
      std::printf("%-40s top-1 %.4f\n",
                  opt.average_logits ? "ensemble (mean logits)" : "ensemble (mean probs)",
                  j["ensemble"]["top1"].get<double>());
  }
  return 0;
}

void add_run_flags(CLI::App* sub, RunOptions& opt) {
  sub->add_option("--config", opt.config_path, "run config JSON file")->required();
  sub->add_option("--out", opt.out, "output directory (relative paths land under $" +
                                        std::string(vsr::kOutRootEnv) + ")");
  sub->add_option("--seed", opt.seed, "override the config's training seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"model cost audits, distillation training runs, and ensemble evaluation"};
  app.set_version_flag("--version", vsr::kToolVersion);
  app.require_subcommand(1);

  AuditOptions audit;
  auto* audit_cmd = app.add_subcommand("audit", "price model graphs: params, MACs, ratios");
  audit_cmd->add_option("--models", audit.models,
                        "preset name or model spec JSON files")->required();
  audit_cmd->add_option("--input", audit.input, "input shape override, e.g. 1x29x88x88");
  audit_cmd->add_option("--format", audit.format, "table or json")
      ->check(CLI::IsMember({"table", "json"}));
  audit_cmd->add_option("--out", audit.out, "write output to a file instead of stdout");

  RunOptions train_opt;
  auto* train_cmd = app.add_subcommand("train", "train one model from a run config");
  add_run_flags(train_cmd, train_opt);

  RunOptions distill_opt;
  auto* distill_cmd =
      app.add_subcommand("distill", "train one student against a saved teacher");
  add_run_flags(distill_cmd, distill_opt);

  RunOptions ba_opt;
  auto* ba_cmd = app.add_subcommand(
      "born-again", "self-distillation chain: each generation teaches the next");
  add_run_flags(ba_cmd, ba_opt);

  RunOptions seq_opt;
  auto* seq_cmd = app.add_subcommand(
      "seq-distill", "distill through a schedule of shrinking head configs");
  add_run_flags(seq_cmd, seq_opt);

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "score checkpoints and ensembles");
  eval_cmd->add_option("--config", eval.config_path, "run config JSON (dataset section)")
      ->required();
  eval_cmd->add_option("--checkpoints", eval.checkpoints,
                       "model bundle base paths (expects <base>.json + <base>.ckpt)")
      ->required();
  eval_cmd->add_flag("--ensemble", eval.ensemble, "also score the ensemble");
  eval_cmd->add_flag("--average-logits", eval.average_logits,
                     "ensemble by mean logits instead of mean probabilities");
  eval_cmd->add_option("--split", eval.split, "val or test")
      ->check(CLI::IsMember({"val", "test"}));
  eval_cmd->add_option("--format", eval.format, "table or json")
      ->check(CLI::IsMember({"table", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  train_opt.seed_given = train_cmd->count("--seed") > 0;
  distill_opt.seed_given = distill_cmd->count("--seed") > 0;
  ba_opt.seed_given = ba_cmd->count("--seed") > 0;
  seq_opt.seed_given = seq_cmd->count("--seed") > 0;

  try {
    if (audit_cmd->parsed()) return cmd_audit(audit);
    if (train_cmd->parsed()) return cmd_train(train_opt, false);
    if (distill_cmd->parsed()) return cmd_train(distill_opt, true);
    if (ba_cmd->parsed()) return cmd_born_again(ba_opt);
    if (seq_cmd->parsed()) return cmd_seq_distill(seq_opt);
    if (eval_cmd->parsed()) return cmd_eval(eval);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  }
  return 2;
}
