// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run artifact plumbing: config files, manifests, epoch logs, metrics
// summaries, and on-disk model bundles. Every experiment command writes the
// same artifact set so runs stay comparable and reproducible.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vsr/distill.hpp"

namespace vsr {

inline constexpr const char* kToolVersion = "0.1.0";

// Environment variable naming the directory all relative output paths are
// resolved against. Unset means the current directory.
inline constexpr const char* kOutRootEnv = "VSRKIT_OUT_ROOT";

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
void ensure_dir(const std::string& path);

// Absolute paths pass through; relative ones land under the output root.
// An empty request resolves to <root>/<fallback>.
std::string resolve_out_dir(const std::string& requested,
                            const std::string& fallback);

// One experiment description: what data, which student, how to train, and
// (optionally) whom to distill from or which chain to run. Sections beyond
// dataset/student/train are optional and default to "absent".
struct RunConfig {
  SynthDatasetSpec dataset;
  bool has_student = false;  // training commands need it; eval does not
  HeadConfig student;
  TrainConfig train;
  KDConfig kd;
  std::string teacher_model;  // bundle base path; empty = train from labels
  bool has_born_again = false;
  StopRule born_again;
  std::vector<HeadConfig> sequential;  // non-empty = sequential schedule
};

RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

// invariant: one manifest per run; config_sha256 matches the config file's
// bytes so a run can always be traced back to the exact inputs.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::string config_sha256;
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  std::string tool_version = kToolVersion;
  double elapsed_seconds = 0.0;
};

std::string manifest_to_json(const RunManifest& m);
void write_manifest(const std::string& path, const RunManifest& m);

// Final summary for a run. Wall time is a property of the machine, not the
// model; determinism comparisons ignore it (everything else is byte-stable).
struct RunMetrics {
  std::string config_sha256;
  std::uint64_t seed = 0;
  double top1_val = 0.0;
  double top1_test = 0.0;
  double wall_time_seconds = 0.0;
};

std::string metrics_to_json(const RunMetrics& m);
RunMetrics metrics_from_json(const std::string& text);
void write_metrics(const std::string& path, const RunMetrics& m);

// One JSONL record per epoch, generations interleaved in training order.
std::string epoch_log_line(std::int64_t generation, const EpochLogEntry& e);
void append_epoch_log(const std::string& path, std::int64_t generation,
                      const std::vector<EpochLogEntry>& log);

// Generation records for chain runs, one JSON array per run.
std::string generation_records_to_json(const std::vector<GenerationRecord>& recs);
std::vector<GenerationRecord> generation_records_from_json(const std::string& text);

// A model bundle is <base>.json (head config) + <base>.ckpt (tensors).
inline std::string bundle_config_path(const std::string& base) { return base + ".json"; }
inline std::string bundle_ckpt_path(const std::string& base) { return base + ".ckpt"; }

template <typename S>
void save_model_bundle(const std::string& base, const HeadConfig& cfg,
                       const HeadParams<S>& params) {
  save_head_config(cfg, bundle_config_path(base));
  save_head_params(params, bundle_ckpt_path(base));
}

template <typename S>
TrainedModel<S> load_model_bundle(const std::string& base) {
  TrainedModel<S> m;
  m.cfg = load_head_config(bundle_config_path(base));
  m.params = load_head_params<S>(m.cfg, bundle_ckpt_path(base));
  return m;
}

}  // namespace vsr
