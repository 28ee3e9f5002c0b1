#pragma once

// JSON run configuration with dotted `key=value` overrides.

#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spue/data_model.hpp"
#include "spue/trainer.hpp"

namespace spue {

using json = nlohmann::json;

struct RunConfig {
  TrainConfig train;
  SynthSpec synth;
  std::string dataset_path;  // CSV features; overrides synth when set
  std::string eval_path;     // optional held-out CSV for dataset_path mode
  std::string checkpoint;    // eval command input
  int max_rank = 20;
  bool same_camera_excluded = false;

  bool uses_synthetic() const { return dataset_path.empty(); }
};

inline json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& s = c.synth;
  return json{
      {"train",
       {{"er", t.er},
        {"alpha", t.alpha},
        {"gamma", t.gamma},
        {"lambda", t.lambda},
        {"epochs_per_iter", t.epochs_per_iter},
        {"batch_size", t.batch_size},
        {"lr_initial", t.lr_initial},
        {"lr_drop_epoch", t.lr_drop_epoch},
        {"lr_after_drop", t.lr_after_drop},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"body_lr_mult", t.body_lr_mult},
        {"kl_form", to_string(t.kl_form)},
        {"warm_start", t.warm_start},
        {"seed", t.seed},
        {"hidden", t.hidden},
        {"embed", t.embed},
        {"activation", to_string(t.activation)}}},
      {"synth",
       {{"n_identities", s.n_identities},
        {"samples_per_identity", s.samples_per_identity},
        {"d_in", s.d_in},
        {"cluster_spread", s.cluster_spread},
        {"noise_heterogeneity", s.noise_heterogeneity},
        {"overlap", s.overlap},
        {"seed", s.seed},
        {"eval_samples_per_identity", s.eval_samples_per_identity}}},
      {"ablation", to_string(t.ablation)},
      {"dataset_path", c.dataset_path},
      {"eval_path", c.eval_path},
      {"checkpoint", c.checkpoint},
      {"max_rank", c.max_rank},
      {"same_camera_excluded", c.same_camera_excluded},
  };
}

namespace detail {

// Every key in `given` must exist in `schema` with a compatible kind.
inline void check_keys(const json& given, const json& schema, const std::string& path) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    const json& ref = schema.at(it.key());
    if (ref.is_object()) {
      if (!it->is_object()) throw ConfigError("config key '" + key + "' must be an object");
      check_keys(*it, ref, key);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + section + key + "': " + e.what());
  }
}

}  // namespace detail

inline RunConfig from_json(const json& given) {
  if (!given.is_object()) throw ConfigError("config must be a JSON object");
  const json schema = to_json(RunConfig{});
  detail::check_keys(given, schema, "");
  if (given.contains("synth") && given.value("dataset_path", std::string()) != "")
    throw ConfigError("provide either 'synth' or 'dataset_path', not both");

  json j = schema;
  j.merge_patch(given);
  RunConfig c;
  auto& t = c.train;
  const json& jt = j.at("train");
  std::string s;
  detail::read(jt, "er", t.er, "train.");
  detail::read(jt, "alpha", t.alpha, "train.");
  detail::read(jt, "gamma", t.gamma, "train.");
  detail::read(jt, "lambda", t.lambda, "train.");
  detail::read(jt, "epochs_per_iter", t.epochs_per_iter, "train.");
  detail::read(jt, "batch_size", t.batch_size, "train.");
  detail::read(jt, "lr_initial", t.lr_initial, "train.");
  detail::read(jt, "lr_drop_epoch", t.lr_drop_epoch, "train.");
  detail::read(jt, "lr_after_drop", t.lr_after_drop, "train.");
  detail::read(jt, "momentum", t.momentum, "train.");
  detail::read(jt, "weight_decay", t.weight_decay, "train.");
  detail::read(jt, "body_lr_mult", t.body_lr_mult, "train.");
  detail::read(jt, "kl_form", s, "train.");
  t.kl_form = kl_form_from_string(s);
  detail::read(jt, "warm_start", t.warm_start, "train.");
  detail::read(jt, "seed", t.seed, "train.");
  detail::read(jt, "hidden", t.hidden, "train.");
  detail::read(jt, "embed", t.embed, "train.");
  detail::read(jt, "activation", s, "train.");
  t.activation = activation_from_string(s);

  auto& sp = c.synth;
  const json& js = j.at("synth");
  detail::read(js, "n_identities", sp.n_identities, "synth.");
  detail::read(js, "samples_per_identity", sp.samples_per_identity, "synth.");
  detail::read(js, "d_in", sp.d_in, "synth.");
  detail::read(js, "cluster_spread", sp.cluster_spread, "synth.");
  detail::read(js, "noise_heterogeneity", sp.noise_heterogeneity, "synth.");
  detail::read(js, "overlap", sp.overlap, "synth.");
  detail::read(js, "seed", sp.seed, "synth.");
  detail::read(js, "eval_samples_per_identity", sp.eval_samples_per_identity, "synth.");

  detail::read(j, "ablation", s, "");
  t.ablation = ablation_from_string(s);
  detail::read(j, "dataset_path", c.dataset_path, "");
  detail::read(j, "eval_path", c.eval_path, "");
  detail::read(j, "checkpoint", c.checkpoint, "");
  detail::read(j, "max_rank", c.max_rank, "");
  detail::read(j, "same_camera_excluded", c.same_camera_excluded, "");

  validate(c.train);
  if (c.uses_synthetic()) validate(c.synth);
  if (c.max_rank < 1) throw ConfigError("max_rank must be >= 1");
  return c;
}

// Applies one `a.b.c=value` override to a JSON document. The value is parsed
// as JSON when possible, otherwise taken as a string.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("bad override key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
  return j;
}

// File (optional) + overrides + SPUE_SEED environment override.
inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = path.empty() ? json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  if (const char* env = std::getenv("SPUE_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long seed = std::strtoull(env, &end, 10);
    if (*end != '\0') throw ConfigError("SPUE_SEED must be a non-negative integer");
    doc["train"]["seed"] = seed;
    if (!doc.contains("dataset_path") || doc["dataset_path"] == "") doc["synth"]["seed"] = seed;
  }
  return from_json(doc);
}

}  // namespace spue
