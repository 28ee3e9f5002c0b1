#pragma once

// Outer self-paced loop: train on the current division, re-estimate
// pseudo-labels with the updated encoder, grow the selection, repeat until
// every unlabeled sample has been selected and trained on.

#include <functional>
#include <optional>
#include <vector>

#include "spue/eval.hpp"
#include "spue/selection.hpp"
#include "spue/trainer.hpp"

namespace spue {

struct IterationRecord {
  int t = 0;
  int k = 0;
  int size_a = 0;
  int size_b = 0;
  int size_i = 0;
  PrecisionReport precision;
  std::optional<EvalResult> eval;
};

struct EvalSetup {
  const Dataset* eval_set = nullptr;  // no retrieval metrics when null
  RetrievalProtocol protocol;
  int max_rank = 20;
};

struct RunCallbacks {
  TrainCallbacks train;
  // Called with the division trained on at step t, before training starts.
  std::function<void(const SelectionState&)> on_selection;
  std::function<void(const IterationRecord&)> on_iteration;
};

struct TrainingReport {
  std::vector<IterationRecord> iterations;
  std::vector<EpochLog> epochs;
  EncoderModel model;
};

inline EncoderDims encoder_dims_for(const Dataset& dataset, const TrainConfig& config) {
  return {dataset.d_in, config.hidden, config.embed, dataset.n, std::max(dataset.m, 1)};
}

inline TrainingReport run_self_paced(const Dataset& dataset, const TrainConfig& config, const EvalSetup& eval = {},
                                     const RunCallbacks& cb = {}) {
  validate(config);
  if (dataset.m < 1 || dataset.n < 2) throw ConfigError("dataset needs n >= 2 identities and m >= 1 unlabeled samples");
  const double alpha = config.effective_alpha();
  const EncoderDims dims = encoder_dims_for(dataset, config);
  const auto labeled = labeled_ids(dataset);

  TrainingReport report;
  report.model = init_encoder(dims, config.activation, config.seed);
  SelectionState state = initial_selection(dataset, config.er, alpha);
  long step = 0;

  for (int t = 0;; ++t) {
    if (t > 0 && !config.warm_start) report.model = init_encoder(dims, config.activation, config.seed);
    {
      std::seed_seq seq{config.seed, static_cast<std::uint64_t>(t), std::uint64_t{1}};
      Rng index_rng(seq);
      reinit_index_classifier(report.model, index_rng);
    }
    if (cb.on_selection) cb.on_selection(state);

    const Dataset tagged = apply_selection(dataset, state);
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(t), std::uint64_t{2}};
    Rng train_rng(seq);
    auto logs = train_iteration(report.model, tagged, config, state.active_index(), t, train_rng, cb.train, &step);
    report.epochs.insert(report.epochs.end(), logs.begin(), logs.end());

    IterationRecord rec;
    rec.t = t;
    rec.k = state.selected();
    rec.size_a = static_cast<int>(state.subset_a.size());
    rec.size_b = static_cast<int>(state.subset_b.size());
    rec.size_i = state.active_index();
    rec.precision = pseudo_label_precision(state, dataset);
    if (eval.eval_set) rec.eval = evaluate(report.model, *eval.eval_set, eval.protocol, eval.max_rank);
    if (cb.on_iteration) cb.on_iteration(rec);
    report.iterations.push_back(std::move(rec));

    if (state.selected() == dataset.m) break;
    state = select_and_divide(estimate_pseudo_labels(report.model, dataset), t + 1, config.er, alpha, dataset.m,
                              labeled);
  }
  return report;
}

}  // namespace spue
