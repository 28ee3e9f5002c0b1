#pragma once

// Samples, datasets, the one-shot labeling protocol, a synthetic
// identity-cluster generator and the plain-text feature file format.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "spue/errors.hpp"

namespace spue {

using Rng = std::mt19937_64;

struct Labeled {
  int identity = 0;
  bool operator==(const Labeled&) const = default;
};
struct PseudoA {
  int identity = 0;
  double conf = 0.0;
  bool operator==(const PseudoA&) const = default;
};
struct PseudoB {
  int identity = 0;
  double conf = 0.0;
  bool operator==(const PseudoB&) const = default;
};
struct Index {
  int index = 0;
  bool operator==(const Index&) const = default;
};

using LabelState = std::variant<Labeled, PseudoA, PseudoB, Index>;

struct Sample {
  int sample_id = 0;
  std::vector<double> features;
  int identity = 0;  // ground truth; read by evaluation only
  int camera = 0;
  LabelState state = Index{};

  bool operator==(const Sample&) const = default;
};

inline bool is_labeled(const Sample& s) { return std::holds_alternative<Labeled>(s.state); }

struct Dataset {
  std::vector<Sample> samples;  // sorted by sample_id
  int n = 0;                    // identities
  int m = 0;                    // non-labeled samples
  int d_in = 0;

  bool operator==(const Dataset&) const = default;

  std::size_t size() const { return samples.size(); }
};

struct SynthSpec {
  int n_identities = 50;
  int samples_per_identity = 20;
  int d_in = 64;
  double cluster_spread = 0.1;
  double noise_heterogeneity = 0.0;
  double overlap = 1.0;
  std::uint64_t seed = 1;
  // Held-out samples per identity for retrieval evaluation (one query, rest gallery).
  int eval_samples_per_identity = 5;
};

inline void validate(const SynthSpec& spec) {
  if (spec.n_identities < 2)
    throw ConfigError("n_identities must be >= 2 (got " + std::to_string(spec.n_identities) + ")");
  if (spec.samples_per_identity < 2)
    throw ConfigError("samples_per_identity must be >= 2 for a one-shot split");
  if (spec.d_in < 1) throw ConfigError("d_in must be >= 1");
  if (!(spec.cluster_spread > 0.0)) throw ConfigError("cluster_spread must be > 0");
  if (!(spec.overlap > 0.0)) throw ConfigError("overlap must be > 0");
  if (!(spec.noise_heterogeneity >= 0.0 && spec.noise_heterogeneity <= 1.0))
    throw ConfigError("noise_heterogeneity must lie in [0, 1]");
  if (spec.eval_samples_per_identity < 0) throw ConfigError("eval_samples_per_identity must be >= 0");
}

// Labels the lowest-camera sample of every identity (ties by sample_id);
// every other sample becomes index-labeled, densely in sample_id order.
inline Dataset one_shot_split(Dataset dataset) {
  std::sort(dataset.samples.begin(), dataset.samples.end(),
            [](const Sample& a, const Sample& b) { return a.sample_id < b.sample_id; });
  std::vector<int> chosen(static_cast<std::size_t>(dataset.n), -1);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    if (s.identity < 0 || s.identity >= dataset.n)
      throw ConfigError("sample " + std::to_string(s.sample_id) + " has identity outside [0, n)");
    int& c = chosen[static_cast<std::size_t>(s.identity)];
    if (c < 0 || s.camera < dataset.samples[static_cast<std::size_t>(c)].camera)
      c = static_cast<int>(i);
  }
  for (int id = 0; id < dataset.n; ++id)
    if (chosen[static_cast<std::size_t>(id)] < 0)
      throw ConfigError("identity " + std::to_string(id) + " has no samples");

  std::vector<bool> labeled(dataset.samples.size(), false);
  for (int c : chosen) labeled[static_cast<std::size_t>(c)] = true;
  int next_index = 0;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    Sample& s = dataset.samples[i];
    if (labeled[i])
      s.state = Labeled{s.identity};
    else
      s.state = Index{next_index++};
  }
  dataset.m = next_index;
  return dataset;
}

namespace detail {

struct SynthDraw {
  std::vector<std::vector<double>> centers;
  Rng train_rng;
  Rng heldout_rng;
};

inline SynthDraw draw_centers(const SynthSpec& spec) {
  std::seed_seq centers_seq{spec.seed, std::uint64_t{0}};
  std::seed_seq train_seq{spec.seed, std::uint64_t{1}};
  std::seed_seq heldout_seq{spec.seed, std::uint64_t{2}};
  SynthDraw draw{{}, Rng(train_seq), Rng(heldout_seq)};
  Rng rng(centers_seq);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  draw.centers.assign(static_cast<std::size_t>(spec.n_identities),
                      std::vector<double>(static_cast<std::size_t>(spec.d_in)));
  for (auto& c : draw.centers)
    for (double& v : c) v = spec.overlap * unit(rng);
  return draw;
}

inline std::vector<Sample> draw_samples(const SynthSpec& spec,
                                        const std::vector<std::vector<double>>& centers,
                                        int per_identity, int first_id, Rng& rng) {
  const int total = spec.n_identities * per_identity;
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto noisy_count =
      static_cast<std::size_t>(std::llround(spec.noise_heterogeneity * total));
  std::vector<bool> noisy(static_cast<std::size_t>(total), false);
  for (std::size_t i = 0; i < noisy_count; ++i) noisy[static_cast<std::size_t>(order[i])] = true;

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(total));
  for (int id = 0; id < spec.n_identities; ++id) {
    for (int j = 0; j < per_identity; ++j) {
      const int local = id * per_identity + j;
      Sample s;
      s.sample_id = first_id + local;
      s.identity = id;
      s.camera = s.sample_id % 4;
      const double spread = spec.cluster_spread * (noisy[static_cast<std::size_t>(local)] ? 3.0 : 1.0);
      s.features = centers[static_cast<std::size_t>(id)];
      for (double& v : s.features) v += spread * gauss(rng);
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace detail

// Training pool: samples_per_identity samples per identity, already one-shot split.
inline Dataset generate_synthetic(const SynthSpec& spec) {
  validate(spec);
  auto draw = detail::draw_centers(spec);
  Dataset ds;
  ds.n = spec.n_identities;
  ds.d_in = spec.d_in;
  ds.samples = detail::draw_samples(spec, draw.centers, spec.samples_per_identity, 0, draw.train_rng);
  return one_shot_split(std::move(ds));
}

// Held-out samples drawn around the same identity centers, ids continuing
// after the training pool. Independent of the training draw.
inline Dataset generate_heldout(const SynthSpec& spec) {
  validate(spec);
  if (spec.eval_samples_per_identity < 2)
    throw ConfigError("eval_samples_per_identity must be >= 2 to form query and gallery");
  auto draw = detail::draw_centers(spec);
  Dataset ds;
  ds.n = spec.n_identities;
  ds.d_in = spec.d_in;
  ds.samples = detail::draw_samples(spec, draw.centers, spec.eval_samples_per_identity,
                                    spec.n_identities * spec.samples_per_identity, draw.heldout_rng);
  return one_shot_split(std::move(ds));
}

// ---- feature file format -------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_features(std::ostream& os, const Dataset& dataset) {
  os << "# spue-features v1 D_in=" << dataset.d_in << '\n';
  for (const Sample& s : dataset.samples) {
    os << s.sample_id << ',' << s.identity << ',' << s.camera;
    for (double v : s.features) os << ',' << format_double(v);
    os << '\n';
  }
}

inline void save_features(const Dataset& dataset, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  write_features(os, dataset);
  if (!os) throw ConfigError("write failed: " + path);
}

namespace detail {

template <typename T>
T parse_field(std::string_view text, std::size_t line, const char* what) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw ParseError(std::string("bad ") + what + " '" + std::string(text) + "'", line);
  return value;
}

}  // namespace detail

inline Dataset read_features(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  Dataset ds;
  const std::string prefix = "# spue-features v1 D_in=";
  if (!std::getline(is, line)) throw ParseError("empty file", 1);
  ++lineno;
  if (line.rfind(prefix, 0) != 0) throw ParseError("missing '# spue-features v1' header", lineno);
  ds.d_in = detail::parse_field<int>(std::string_view(line).substr(prefix.size()), lineno, "D_in");
  if (ds.d_in < 1) throw ParseError("D_in must be positive", lineno);

  std::set<int> seen;
  int max_identity = -1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != static_cast<std::size_t>(ds.d_in) + 3)
      throw ParseError("expected " + std::to_string(ds.d_in + 3) + " fields, got " +
                           std::to_string(fields.size()),
                       lineno);
    Sample s;
    s.sample_id = detail::parse_field<int>(fields[0], lineno, "sample_id");
    s.identity = detail::parse_field<int>(fields[1], lineno, "identity");
    s.camera = detail::parse_field<int>(fields[2], lineno, "camera");
    if (s.identity < 0) throw ParseError("negative identity", lineno);
    if (s.camera < 0) throw ParseError("negative camera", lineno);
    if (!seen.insert(s.sample_id).second)
      throw ParseError("duplicate sample_id " + std::to_string(s.sample_id), lineno);
    s.features.reserve(static_cast<std::size_t>(ds.d_in));
    for (std::size_t k = 3; k < fields.size(); ++k) {
      double v = detail::parse_field<double>(fields[k], lineno, "feature");
      if (!std::isfinite(v)) throw ParseError("non-finite feature", lineno);
      s.features.push_back(v);
    }
    max_identity = std::max(max_identity, s.identity);
    ds.samples.push_back(std::move(s));
  }
  ds.n = max_identity + 1;
  if (ds.n < 2) throw ParseError("dataset needs at least 2 identities");
  try {
    ds = one_shot_split(std::move(ds));
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
  if (ds.m < 1) throw ParseError("dataset has no unlabeled samples");
  return ds;
}

inline Dataset load_features(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open: " + path);
  return read_features(is);
}

}  // namespace spue
