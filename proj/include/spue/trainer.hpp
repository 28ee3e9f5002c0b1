#pragma once

// Mini-batch SGD with momentum and coupled weight decay, run over one
// self-paced step's labeled / Subset-A / Subset-B / index mixture.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "spue/data_model.hpp"
#include "spue/encoder.hpp"
#include "spue/losses.hpp"

namespace spue {

enum class Ablation { Full, NoCoop, NoCoopNoUnc };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::NoCoop: return "no_coop";
    case Ablation::NoCoopNoUnc: return "no_coop_no_unc";
  }
  return "full";
}

inline Ablation ablation_from_string(std::string_view s) {
  if (s == "full") return Ablation::Full;
  if (s == "no_coop") return Ablation::NoCoop;
  if (s == "no_coop_no_unc") return Ablation::NoCoopNoUnc;
  throw ConfigError("unknown ablation '" + std::string(s) + "'");
}

struct TrainConfig {
  double er = 0.2;
  double alpha = 0.3;
  double gamma = 0.8;
  double lambda = 0.01;
  int epochs_per_iter = 70;
  int batch_size = 16;
  double lr_initial = 0.1;
  int lr_drop_epoch = 55;
  double lr_after_drop = 0.01;
  double momentum = 0.5;
  double weight_decay = 0.0005;
  // Learning-rate multiplier for the trunk; heads and classifiers use the full rate.
  double body_lr_mult = 0.1;
  KlForm kl_form = KlForm::Standard;
  bool warm_start = true;
  std::uint64_t seed = 1;

  // Encoder shape.
  int hidden = 128;
  int embed = 32;
  Activation activation = Activation::Tanh;

  Ablation ablation = Ablation::Full;

  // alpha after the ablation override.
  double effective_alpha() const {
    switch (ablation) {
      case Ablation::NoCoop: return 1.0;
      case Ablation::NoCoopNoUnc: return 0.0;
      default: return alpha;
    }
  }

  double lr_at(int epoch) const { return epoch <= lr_drop_epoch ? lr_initial : lr_after_drop; }
};

inline void validate(const TrainConfig& c) {
  if (!(c.er > 0.0 && c.er <= 1.0)) throw ConfigError("er must lie in (0, 1]");
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(c.lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (c.epochs_per_iter < 1) throw ConfigError("epochs_per_iter must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(c.lr_initial > 0.0) || !(c.lr_after_drop > 0.0)) throw ConfigError("learning rates must be > 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(c.body_lr_mult > 0.0)) throw ConfigError("body_lr_mult must be > 0");
  if (c.hidden < 1 || c.embed < 1) throw ConfigError("hidden and embed must be >= 1");
}

struct OptimizerState {
  EncoderParams velocity;

  static OptimizerState for_model(const EncoderModel& m) { return {EncoderParams::zeros(m.dims)}; }
};

// v <- momentum * v + g + weight_decay * p;  p <- p - lr * v, with lr scaled
// by body_lr_mult on the trunk tensors. Nothing is committed if any updated
// value would be non-finite.
inline void sgd_step(EncoderModel& model, const Gradients& grads, OptimizerState& opt, double lr, double momentum,
                     double weight_decay, double body_lr_mult = 1.0) {
  EncoderParams new_params = model.params;
  EncoderParams new_velocity = opt.velocity;
  bool finite = true;
  auto apply = [&](auto& p, auto& v, const auto& g, double mult = 1.0) {
    v = momentum * v + g + weight_decay * p;
    p -= (mult * lr) * v;
    finite = finite && p.allFinite() && v.allFinite();
  };
  apply(new_params.trunk_w1, new_velocity.trunk_w1, grads.trunk_w1, body_lr_mult);
  apply(new_params.trunk_b1, new_velocity.trunk_b1, grads.trunk_b1, body_lr_mult);
  apply(new_params.trunk_w2, new_velocity.trunk_w2, grads.trunk_w2, body_lr_mult);
  apply(new_params.trunk_b2, new_velocity.trunk_b2, grads.trunk_b2, body_lr_mult);
  apply(new_params.mu_w, new_velocity.mu_w, grads.mu_w);
  apply(new_params.mu_b, new_velocity.mu_b, grads.mu_b);
  apply(new_params.logvar_w, new_velocity.logvar_w, grads.logvar_w);
  apply(new_params.logvar_b, new_velocity.logvar_b, grads.logvar_b);
  apply(new_params.id_w, new_velocity.id_w, grads.id_w);
  apply(new_params.id_b, new_velocity.id_b, grads.id_b);
  apply(new_params.index_w, new_velocity.index_w, grads.index_w);
  if (!finite) throw NumericalError("sgd_step: update would produce non-finite parameters");
  model.params = std::move(new_params);
  opt.velocity = std::move(new_velocity);
}

struct EpochLog {
  int t = 0;
  int epoch = 0;
  double lr = 0.0;
  double mean_total_loss = 0.0;
  double mean_kl = 0.0;
  double mean_labeled_loss = 0.0;  // mean of the labeled-split term over batches containing labeled samples
};

struct StepLog {
  long step = 0;
  int epoch = 0;
  LossBreakdown loss;
};

struct TrainCallbacks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const StepLog&)> on_step;
};

// Trains `model` for config.epochs_per_iter epochs over every sample of the
// already-tagged dataset. The shuffle and the latent draws both come from `rng`.
inline std::vector<EpochLog> train_iteration(EncoderModel& model, const Dataset& tagged, const TrainConfig& config,
                                             int active_index, int t, Rng& rng, const TrainCallbacks& cb = {},
                                             long* step_counter = nullptr) {
  validate(config);
  ObjectiveConfig obj;
  obj.gamma = config.gamma;
  obj.lambda = config.lambda;
  obj.kl_form = config.kl_form;
  obj.active_index = active_index;
  obj.labeled_uncertainty = config.ablation != Ablation::NoCoopNoUnc;

  std::vector<const Sample*> order;
  order.reserve(tagged.samples.size());
  for (const Sample& s : tagged.samples) order.push_back(&s);

  OptimizerState opt = OptimizerState::for_model(model);
  Gradients grads = EncoderParams::zeros(model.dims);
  std::vector<EpochLog> logs;
  long local_step = 0;
  long& step = step_counter ? *step_counter : local_step;

  for (int epoch = 1; epoch <= config.epochs_per_iter; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = config.lr_at(epoch);
    EpochLog log{t, epoch, lr, 0.0, 0.0, 0.0};
    int batches = 0, labeled_batches = 0, kl_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::span<const Sample* const> batch(order.data() + start, end - start);
      EncoderParams::visit(grads, [](std::string_view, auto& g) { g.setZero(); });
      LossBreakdown lb;
      try {
        lb = loss_spue(model, batch, obj, rng, &grads);
        if (!grads.all_finite()) throw NumericalError("non-finite gradient");
        sgd_step(model, grads, opt, lr, config.momentum, config.weight_decay, config.body_lr_mult);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (t=" + std::to_string(t) + ", epoch=" +
                             std::to_string(epoch) + ", batch=" + std::to_string(batches) + ")");
      }
      ++step;
      if (cb.on_step) cb.on_step({step, epoch, lb});
      log.mean_total_loss += lb.total;
      if (lb.n_labeled) {
        log.mean_labeled_loss += lb.l_ue_labeled;
        ++labeled_batches;
      }
      if (lb.n_labeled + lb.n_a > 0 && obj.labeled_uncertainty) {
        log.mean_kl += lb.l_kl;
        ++kl_batches;
      }
      ++batches;
    }
    if (batches) log.mean_total_loss /= batches;
    if (labeled_batches) log.mean_labeled_loss /= labeled_batches;
    if (kl_batches) log.mean_kl /= kl_batches;
    if (cb.on_epoch) cb.on_epoch(log);
    logs.push_back(log);
  }
  return logs;
}

}  // namespace spue
