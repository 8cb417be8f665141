// SPDX-License-Identifier: Apache-2.0
#include "vsr/runio.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace vsr {

namespace {

using nlohmann::json;

json parse_or_throw(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(what) + " is not valid JSON: " + e.what());
  }
}

void reject_unknown_keys(const json& j, const char* section,
                         std::initializer_list<const char*> known) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok)
      throw ConfigError(std::string("unknown key '") + key + "' in " + section);
  }
}

json dataset_to_json(const SynthDatasetSpec& d) {
  json j;
  j["num_classes"] = d.num_classes;
  j["channels"] = d.channels;
  j["t_min"] = d.t_min;
  j["t_max"] = d.t_max;
  j["train_per_class"] = d.train_per_class;
  j["val_per_class"] = d.val_per_class;
  j["test_per_class"] = d.test_per_class;
  j["noise_sigma"] = d.noise_sigma;
  j["confusable_fraction"] = d.confusable_fraction;
  j["template_len"] = d.template_len;
  j["suffix_len"] = d.suffix_len;
  j["suffix_scale"] = d.suffix_scale;
  j["seed"] = d.seed;
  return j;
}

SynthDatasetSpec dataset_from_json(const json& j) {
  reject_unknown_keys(j, "dataset",
                      {"num_classes", "channels", "t_min", "t_max",
                       "train_per_class", "val_per_class", "test_per_class",
                       "noise_sigma", "confusable_fraction", "template_len",
                       "suffix_len", "suffix_scale", "seed"});
  SynthDatasetSpec d;
  d.num_classes = j.value("num_classes", d.num_classes);
  d.channels = j.value("channels", d.channels);
  d.t_min = j.value("t_min", d.t_min);
  d.t_max = j.value("t_max", d.t_max);
  d.train_per_class = j.value("train_per_class", d.train_per_class);
  d.val_per_class = j.value("val_per_class", d.val_per_class);
  d.test_per_class = j.value("test_per_class", d.test_per_class);
  d.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  d.confusable_fraction = j.value("confusable_fraction", d.confusable_fraction);
  d.template_len = j.value("template_len", d.template_len);
  d.suffix_len = j.value("suffix_len", d.suffix_len);
  d.suffix_scale = j.value("suffix_scale", d.suffix_scale);
  d.seed = j.value("seed", d.seed);
  return d;
}

json train_to_json(const TrainConfig& t) {
  json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["initial_lr"] = t.initial_lr;
  j["weight_decay"] = t.weight_decay;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["adam_eps"] = t.adam_eps;
  j["mixup_alpha"] = t.mixup_alpha;
  j["variable_length"] = t.variable_length;
  j["crop_min"] = t.crop_min;
  j["seed"] = t.seed;
  j["deterministic"] = t.deterministic;
  return j;
}

TrainConfig train_from_json(const json& j) {
  reject_unknown_keys(j, "train",
                      {"epochs", "batch_size", "initial_lr", "weight_decay",
                       "beta1", "beta2", "adam_eps", "mixup_alpha",
                       "variable_length", "crop_min", "seed", "deterministic"});
  TrainConfig t;
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.initial_lr = j.value("initial_lr", t.initial_lr);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.adam_eps = j.value("adam_eps", t.adam_eps);
  t.mixup_alpha = j.value("mixup_alpha", t.mixup_alpha);
  t.variable_length = j.value("variable_length", t.variable_length);
  t.crop_min = j.value("crop_min", t.crop_min);
  t.seed = j.value("seed", t.seed);
  t.deterministic = j.value("deterministic", t.deterministic);
  return t;
}

json kd_to_json(const KDConfig& k) {
  json j;
  j["alpha"] = k.alpha;
  j["temperature"] = k.temperature;
  j["reverse"] = k.reverse;
  return j;
}

KDConfig kd_from_json(const json& j) {
  reject_unknown_keys(j, "kd", {"alpha", "temperature", "reverse"});
  KDConfig k;
  k.alpha = j.value("alpha", k.alpha);
  k.temperature = j.value("temperature", k.temperature);
  k.reverse = j.value("reverse", k.reverse);
  return k;
}

HeadConfig head_from_json_node(const json& j, const char* section) {
  if (!j.is_object())
    throw ConfigError(std::string(section) + " must be a JSON object");
  return head_config_from_json(j.dump());
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  return text;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory '" + path + "': " + ec.message());
}

std::string resolve_out_dir(const std::string& requested,
                            const std::string& fallback) {
  namespace fs = std::filesystem;
  fs::path p = requested.empty() ? fs::path(fallback) : fs::path(requested);
  if (p.is_absolute()) return p.string();
  const char* root = std::getenv(kOutRootEnv);
  fs::path base = (root && *root) ? fs::path(root) : fs::path(".");
  return (base / p).string();
}

RunConfig run_config_from_json(const std::string& text) {
  json j = parse_or_throw(text, "run config");
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  reject_unknown_keys(j, "run config",
                      {"dataset", "student", "train", "kd", "teacher",
                       "born_again", "sequential"});
  RunConfig cfg;
  try {
    cfg.dataset = dataset_from_json(j.value("dataset", json::object()));
    if (j.contains("student")) {
      cfg.has_student = true;
      cfg.student = head_from_json_node(j.at("student"), "student");
    }
    cfg.train = train_from_json(j.value("train", json::object()));
    cfg.kd = kd_from_json(j.value("kd", json::object()));
    if (j.contains("teacher")) {
      const auto& t = j.at("teacher");
      reject_unknown_keys(t, "teacher", {"model"});
      cfg.teacher_model = t.at("model").get<std::string>();
      if (cfg.teacher_model.empty())
        throw ConfigError("teacher.model must be a non-empty bundle path");
    }
    if (j.contains("born_again")) {
      const auto& b = j.at("born_again");
      reject_unknown_keys(b, "born_again", {"max_generations", "patience"});
      cfg.has_born_again = true;
      cfg.born_again.max_generations =
          b.value("max_generations", cfg.born_again.max_generations);
      cfg.born_again.patience = b.value("patience", cfg.born_again.patience);
      validate_stop_rule(cfg.born_again);
    }
    if (j.contains("sequential")) {
      const auto& s = j.at("sequential");
      if (!s.is_array()) throw ConfigError("'sequential' must be an array");
      for (const auto& step : s)
        cfg.sequential.push_back(head_from_json_node(step, "sequential step"));
      if (cfg.sequential.empty())
        throw ConfigError("'sequential' must list at least one step");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  validate_synth_spec(cfg.dataset);
  validate_train_config(cfg.train);
  validate_kd_config(cfg.kd);
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["dataset"] = dataset_to_json(cfg.dataset);
  if (cfg.has_student) j["student"] = json::parse(head_config_to_json(cfg.student));
  j["train"] = train_to_json(cfg.train);
  j["kd"] = kd_to_json(cfg.kd);
  if (!cfg.teacher_model.empty()) j["teacher"] = {{"model", cfg.teacher_model}};
  if (cfg.has_born_again)
    j["born_again"] = {{"max_generations", cfg.born_again.max_generations},
                       {"patience", cfg.born_again.patience}};
  if (!cfg.sequential.empty()) {
    json steps = json::array();
    for (const auto& s : cfg.sequential)
      steps.push_back(json::parse(head_config_to_json(s)));
    j["sequential"] = steps;
  }
  return j.dump(2);
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(read_text_file(path));
}

std::string manifest_to_json(const RunManifest& m) {
  json j;
  j["schema_version"] = 1;
  j["command"] = m.command;
  j["config_path"] = m.config_path;
  j["config_sha256"] = m.config_sha256;
  j["seed"] = m.seed;
  j["artifacts"] = m.artifacts;
  j["tool_version"] = m.tool_version;
  j["elapsed_seconds"] = m.elapsed_seconds;
  return j.dump(2);
}

void write_manifest(const std::string& path, const RunManifest& m) {
  write_text_file(path, manifest_to_json(m) + "\n");
}

std::string metrics_to_json(const RunMetrics& m) {
  json j;
  j["schema_version"] = 1;
  j["config_sha256"] = m.config_sha256;
  j["seed"] = m.seed;
  j["top1_val"] = m.top1_val;
  j["top1_test"] = m.top1_test;
  j["wall_time_seconds"] = m.wall_time_seconds;
  return j.dump(2);
}

RunMetrics metrics_from_json(const std::string& text) {
  json j = parse_or_throw(text, "metrics file");
  RunMetrics m;
  try {
    m.config_sha256 = j.at("config_sha256").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.top1_val = j.at("top1_val").get<double>();
    m.top1_test = j.at("top1_test").get<double>();
    m.wall_time_seconds = j.value("wall_time_seconds", 0.0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed metrics file: ") + e.what());
  }
  return m;
}

void write_metrics(const std::string& path, const RunMetrics& m) {
  write_text_file(path, metrics_to_json(m) + "\n");
}

std::string epoch_log_line(std::int64_t generation, const EpochLogEntry& e) {
  json j;
  j["generation"] = generation;
  j["epoch"] = e.epoch;
  j["lr"] = e.lr;
  j["train_loss"] = e.train_loss;
  j["ce_term"] = e.ce_term;
  j["kd_term"] = e.kd_term;
  j["val_top1"] = e.val_top1;
  return j.dump();
}

void append_epoch_log(const std::string& path, std::int64_t generation,
                      const std::vector<EpochLogEntry>& log) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot open epoch log '" + path + "'");
  for (const auto& e : log) out << epoch_log_line(generation, e) << '\n';
  out.flush();
  if (!out) throw IoError("failed writing epoch log '" + path + "'");
}

std::string generation_records_to_json(const std::vector<GenerationRecord>& recs) {
  json arr = json::array();
  for (const auto& r : recs) {
    json j;
    j["index"] = r.index;
    j["student_config"] = json::parse(r.student_config_json);
    j["checkpoint"] = r.checkpoint_path;
    j["teacher_checkpoint"] = r.teacher_checkpoint_path;
    j["val_top1"] = r.val_top1;
    j["seed"] = r.seed;
    j["epochs"] = r.epochs;
    arr.push_back(j);
  }
  return arr.dump(2);
}

std::vector<GenerationRecord> generation_records_from_json(const std::string& text) {
  json arr = parse_or_throw(text, "generation records");
  if (!arr.is_array()) throw ConfigError("generation records must be a JSON array");
  std::vector<GenerationRecord> out;
  try {
    for (const auto& j : arr) {
      GenerationRecord r;
      r.index = j.at("index").get<std::int64_t>();
      r.student_config_json = j.at("student_config").dump();
      r.checkpoint_path = j.at("checkpoint").get<std::string>();
      r.teacher_checkpoint_path = j.value("teacher_checkpoint", std::string());
      r.val_top1 = j.at("val_top1").get<double>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.epochs = j.at("epochs").get<std::int64_t>();
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed generation records: ") + e.what());
  }
  return out;
}

}  // namespace vsr
