#pragma once

// Retrieval evaluation (mAP, CMC) over mean-head embeddings, and precision
// of pseudo-labels against the hidden ground truth.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include "spue/data_model.hpp"
#include "spue/encoder.hpp"
#include "spue/selection.hpp"

namespace spue {

struct RetrievalProtocol {
  std::vector<int> query_ids;
  std::vector<int> gallery_ids;
  bool same_camera_excluded = false;
};

struct EvalResult {
  double map = 0.0;
  std::vector<double> cmc;  // cmc[r]: first relevant hit at rank <= r + 1
  int num_queries_used = 0;
  int num_queries_skipped = 0;

  // 1-based rank lookup, saturating at the last computed rank.
  double rank(int k) const {
    if (cmc.empty()) return 0.0;
    return cmc[static_cast<std::size_t>(std::min<int>(k, static_cast<int>(cmc.size())) - 1)];
  }
};

// First sample (by sample_id) of each identity is its query; the rest form the gallery.
inline RetrievalProtocol make_protocol(const Dataset& dataset, bool same_camera_excluded = false) {
  RetrievalProtocol p;
  p.same_camera_excluded = same_camera_excluded;
  std::set<int> seen;
  for (const Sample& s : dataset.samples) {
    if (seen.insert(s.identity).second)
      p.query_ids.push_back(s.sample_id);
    else
      p.gallery_ids.push_back(s.sample_id);
  }
  return p;
}

// Gallery ids ordered by ascending embedding distance to the query, ties by sample_id.
inline std::vector<int> rank_by_distance(const Vector& query, std::span<const Vector> gallery,
                                         std::span<const int> gallery_ids) {
  std::vector<std::pair<double, int>> scored;
  scored.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i)
    scored.emplace_back((gallery[i] - query).squaredNorm(), gallery_ids[i]);
  std::sort(scored.begin(), scored.end());
  std::vector<int> out;
  out.reserve(scored.size());
  for (const auto& [d, id] : scored) out.push_back(id);
  return out;
}

inline std::vector<int> rank_gallery(const EncoderModel& model, const Sample& query,
                                     std::span<const Sample> gallery) {
  std::vector<Vector> emb;
  std::vector<int> ids;
  for (const Sample& g : gallery) {
    emb.push_back(forward_deterministic(model, g.features));
    ids.push_back(g.sample_id);
  }
  return rank_by_distance(forward_deterministic(model, query.features), emb, ids);
}

struct MetricSummary {
  double value = 0.0;
  int used = 0;
  int skipped = 0;
};

// Mean over queries of average precision. Queries without any relevant
// item are excluded and counted in `skipped`.
inline MetricSummary mean_average_precision(std::span<const std::vector<int>> rankings,
                                            std::span<const std::set<int>> relevant) {
  MetricSummary out;
  double sum = 0.0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    int hits = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < rankings[q].size(); ++r) {
      if (relevant[q].count(rankings[q][r])) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    if (hits == 0) {
      ++out.skipped;
      continue;
    }
    sum += ap / hits;
    ++out.used;
  }
  out.value = out.used ? sum / out.used : 0.0;
  return out;
}

inline std::vector<double> cmc_curve(std::span<const std::vector<int>> rankings,
                                     std::span<const std::set<int>> relevant, int max_rank,
                                     int* skipped = nullptr) {
  std::vector<double> cmc(static_cast<std::size_t>(std::max(max_rank, 0)), 0.0);
  int used = 0, skip = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    std::size_t first = rankings[q].size();
    for (std::size_t r = 0; r < rankings[q].size(); ++r)
      if (relevant[q].count(rankings[q][r])) {
        first = r;
        break;
      }
    if (first == rankings[q].size()) {
      ++skip;
      continue;
    }
    ++used;
    for (std::size_t r = first; r < cmc.size(); ++r) cmc[r] += 1.0;
  }
  if (used)
    for (double& c : cmc) c /= used;
  if (skipped) *skipped = skip;
  return cmc;
}

inline EvalResult evaluate(const EncoderModel& model, const Dataset& eval_set, const RetrievalProtocol& protocol,
                           int max_rank = 20) {
  std::map<int, const Sample*> by_id;
  for (const Sample& s : eval_set.samples) by_id[s.sample_id] = &s;
  auto lookup = [&](int id) -> const Sample& {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ConfigError("protocol refers to unknown sample_id " + std::to_string(id));
    return *it->second;
  };
  std::vector<Vector> gallery_emb;
  for (int id : protocol.gallery_ids) gallery_emb.push_back(forward_deterministic(model, lookup(id).features));

  std::vector<std::vector<int>> rankings;
  std::vector<std::set<int>> relevant;
  for (int qid : protocol.query_ids) {
    const Sample& q = lookup(qid);
    std::vector<Vector> emb;
    std::vector<int> ids;
    std::set<int> rel;
    for (std::size_t i = 0; i < protocol.gallery_ids.size(); ++i) {
      const Sample& g = lookup(protocol.gallery_ids[i]);
      if (protocol.same_camera_excluded && g.identity == q.identity && g.camera == q.camera) continue;
      emb.push_back(gallery_emb[i]);
      ids.push_back(g.sample_id);
      if (g.identity == q.identity) rel.insert(g.sample_id);
    }
    rankings.push_back(rank_by_distance(forward_deterministic(model, q.features), emb, ids));
    relevant.push_back(std::move(rel));
  }
  EvalResult res;
  const MetricSummary m = mean_average_precision(rankings, relevant);
  res.map = m.value;
  res.num_queries_used = m.used;
  res.num_queries_skipped = m.skipped;
  res.cmc = cmc_curve(rankings, relevant, max_rank);
  return res;
}

struct PrecisionReport {
  double precision_p = 1.0;
  double precision_a = 1.0;
  double precision_b = 1.0;
  bool empty_p = true;
  bool empty_a = true;
  bool empty_b = true;
};

// Fraction of pseudo-labels matching ground truth; an empty set reports 1.0 and sets its flag.
inline PrecisionReport pseudo_label_precision(const SelectionState& state, const Dataset& dataset) {
  std::map<int, int> truth;
  for (const Sample& s : dataset.samples) truth[s.sample_id] = s.identity;
  auto correct = [&](const std::vector<PseudoLabel>& set) {
    int c = 0;
    for (const auto& p : set) {
      auto it = truth.find(p.sample_id);
      if (it == truth.end()) throw ConfigError("unknown sample_id " + std::to_string(p.sample_id));
      c += it->second == p.identity;
    }
    return c;
  };
  PrecisionReport r;
  const int ca = correct(state.subset_a), cb = correct(state.subset_b);
  const auto na = state.subset_a.size(), nb = state.subset_b.size();
  r.empty_a = na == 0;
  r.empty_b = nb == 0;
  r.empty_p = na + nb == 0;
  if (na) r.precision_a = static_cast<double>(ca) / static_cast<double>(na);
  if (nb) r.precision_b = static_cast<double>(cb) / static_cast<double>(nb);
  if (na + nb) r.precision_p = static_cast<double>(ca + cb) / static_cast<double>(na + nb);
  return r;
}

}  // namespace spue
