#pragma once

// Nearest-labeled-neighbor pseudo-labeling and the expansion-rate driven
// division of unlabeled samples into Subset-A, Subset-B and index-labeled.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "spue/data_model.hpp"
#include "spue/encoder.hpp"

namespace spue {

struct PseudoLabel {
  int sample_id = 0;
  int identity = 0;
  double conf = 0.0;  // distance to the nearest labeled embedding; smaller is more confident

  bool operator==(const PseudoLabel&) const = default;
};

struct IndexAssignment {
  int sample_id = 0;
  int index = 0;

  bool operator==(const IndexAssignment&) const = default;
};

struct SelectionState {
  int t = 0;
  std::vector<int> labeled_ids;
  std::vector<PseudoLabel> subset_a;  // ascending confidence distance
  std::vector<PseudoLabel> subset_b;
  std::vector<IndexAssignment> index;  // sample_id order, dense labels
  double er = 1.0;
  double alpha = 0.0;

  int selected() const { return static_cast<int>(subset_a.size() + subset_b.size()); }
  int active_index() const { return static_cast<int>(index.size()); }

  bool operator==(const SelectionState&) const = default;
};

inline int selection_size(int t, double er, int m) {
  const auto k = std::llround(er * t * m);
  return static_cast<int>(std::min<long long>(k, m));
}

inline int subset_a_size(double alpha, int k) { return static_cast<int>(std::floor(alpha * k)); }

// Embeds every sample with the mean head and labels each non-labeled sample
// with the identity of its nearest labeled sample. Ties go to the lower identity.
inline std::vector<PseudoLabel> estimate_pseudo_labels(const EncoderModel& model, const Dataset& dataset) {
  std::vector<Vector> anchors(static_cast<std::size_t>(dataset.n));
  for (const Sample& s : dataset.samples)
    if (const auto* l = std::get_if<Labeled>(&s.state))
      anchors[static_cast<std::size_t>(l->identity)] = forward_deterministic(model, s.features);

  std::vector<PseudoLabel> out;
  out.reserve(static_cast<std::size_t>(dataset.m));
  for (const Sample& s : dataset.samples) {
    if (is_labeled(s)) continue;
    const Vector e = forward_deterministic(model, s.features);
    PseudoLabel best{s.sample_id, -1, std::numeric_limits<double>::infinity()};
    for (int id = 0; id < dataset.n; ++id) {
      const double dist = (e - anchors[static_cast<std::size_t>(id)]).norm();
      if (dist < best.conf) best = {s.sample_id, id, dist};
    }
    if (best.identity < 0) throw NumericalError("non-finite embedding distance for sample " + std::to_string(s.sample_id));
    out.push_back(best);
  }
  return out;
}

// Selects the k = min(round(er*t*m), m) most confident estimates; the first
// floor(alpha*k) form Subset-A, the rest Subset-B. Unselected samples get
// dense index labels in sample_id order.
inline SelectionState select_and_divide(std::vector<PseudoLabel> estimates, int t, double er, double alpha, int m,
                                        std::vector<int> labeled_ids = {}) {
  if (!(er > 0.0 && er <= 1.0)) throw ConfigError("expansion rate must lie in (0, 1]");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (t < 0) throw ConfigError("step must be non-negative");
  if (static_cast<int>(estimates.size()) != m)
    throw ConfigError("estimates cover " + std::to_string(estimates.size()) + " samples, expected m=" +
                      std::to_string(m));

  std::sort(estimates.begin(), estimates.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
    return a.conf != b.conf ? a.conf < b.conf : a.sample_id < b.sample_id;
  });
  const int k = selection_size(t, er, m);
  const int a = subset_a_size(alpha, k);

  SelectionState st;
  st.t = t;
  st.er = er;
  st.alpha = alpha;
  st.labeled_ids = std::move(labeled_ids);
  st.subset_a.assign(estimates.begin(), estimates.begin() + a);
  st.subset_b.assign(estimates.begin() + a, estimates.begin() + k);

  std::vector<int> rest;
  rest.reserve(static_cast<std::size_t>(m - k));
  for (auto it = estimates.begin() + k; it != estimates.end(); ++it) rest.push_back(it->sample_id);
  std::sort(rest.begin(), rest.end());
  for (std::size_t i = 0; i < rest.size(); ++i) st.index.push_back({rest[i], static_cast<int>(i)});
  return st;
}

// Step-0 state: nothing selected, every non-labeled sample index-labeled.
inline SelectionState initial_selection(const Dataset& dataset, double er, double alpha) {
  SelectionState st;
  st.er = er;
  st.alpha = alpha;
  for (const Sample& s : dataset.samples) {
    if (is_labeled(s))
      st.labeled_ids.push_back(s.sample_id);
    else
      st.index.push_back({s.sample_id, static_cast<int>(st.index.size())});
  }
  return st;
}

inline std::vector<int> labeled_ids(const Dataset& dataset) {
  std::vector<int> ids;
  for (const Sample& s : dataset.samples)
    if (is_labeled(s)) ids.push_back(s.sample_id);
  return ids;
}

// Copy of the dataset with every non-labeled sample tagged per the selection.
inline Dataset apply_selection(Dataset dataset, const SelectionState& state) {
  std::vector<int> pos_of_id;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const int id = dataset.samples[i].sample_id;
    if (id < 0) throw ConfigError("negative sample_id");
    if (static_cast<std::size_t>(id) >= pos_of_id.size()) pos_of_id.resize(static_cast<std::size_t>(id) + 1, -1);
    pos_of_id[static_cast<std::size_t>(id)] = static_cast<int>(i);
  }
  auto at = [&](int id) -> Sample& {
    if (id < 0 || static_cast<std::size_t>(id) >= pos_of_id.size() || pos_of_id[static_cast<std::size_t>(id)] < 0)
      throw ConfigError("selection refers to unknown sample_id " + std::to_string(id));
    Sample& s = dataset.samples[static_cast<std::size_t>(pos_of_id[static_cast<std::size_t>(id)])];
    if (is_labeled(s)) throw ConfigError("selection relabels labeled sample " + std::to_string(id));
    return s;
  };
  for (const auto& p : state.subset_a) at(p.sample_id).state = PseudoA{p.identity, p.conf};
  for (const auto& p : state.subset_b) at(p.sample_id).state = PseudoB{p.identity, p.conf};
  for (const auto& ix : state.index) at(ix.sample_id).state = Index{ix.index};
  const std::size_t covered = state.subset_a.size() + state.subset_b.size() + state.index.size();
  if (covered != static_cast<std::size_t>(dataset.m))
    throw ConfigError("selection covers " + std::to_string(covered) + " samples, expected m=" +
                      std::to_string(dataset.m));
  return dataset;
}

}  // namespace spue
