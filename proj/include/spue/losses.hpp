#pragma once

// Loss terms of the co-operative objective: reparameterized classification
// plus KL on labeled and Subset-A samples, point-embedding classification on
// Subset-B samples, and the exclusive loss on index-labeled samples.

#include <cmath>
#include <span>
#include <string>
#include <variant>

#include "spue/encoder.hpp"

namespace spue {

enum class KlForm { Standard, PaperLiteral };

inline std::string to_string(KlForm f) { return f == KlForm::Standard ? "standard" : "paper_literal"; }

inline KlForm kl_form_from_string(std::string_view s) {
  if (s == "standard") return KlForm::Standard;
  if (s == "paper_literal") return KlForm::PaperLiteral;
  throw ConfigError("unknown kl_form '" + std::string(s) + "'");
}

// Where a loss term sends its gradient: accumulated into `grads` scaled by
// `weight`. A null `grads` means value only.
struct GradSink {
  Gradients* grads = nullptr;
  double weight = 1.0;
};

// -log softmax(logits)[target], stabilized by max-subtraction. When
// d_logits is given it receives softmax - onehot.
inline double cross_entropy(const Vector& logits, int target, Vector* d_logits = nullptr) {
  if (logits.size() < 1) throw ConfigError("cross_entropy needs at least one class");
  if (target < 0 || target >= logits.size())
    throw ConfigError("cross_entropy target " + std::to_string(target) + " outside [0, " +
                      std::to_string(logits.size()) + ")");
  if (!logits.allFinite()) throw NumericalError("cross_entropy: non-finite logits");
  Eigen::Index arg = 0;
  const double mx = logits.maxCoeff(&arg);
  Vector e = (logits.array() - mx).exp();
  // Sum of the non-max terms, so log1p keeps precision when the max dominates.
  const double rest = e.head(arg).sum() + e.tail(e.size() - arg - 1).sum();
  const double sum = 1.0 + rest;
  const double loss = std::log1p(rest) - (logits(target) - mx);
  if (d_logits) {
    *d_logits = e / sum;
    (*d_logits)(target) -= 1.0;
  }
  return loss;
}

// KL term on (mu, log sigma^2). The literal form uses mu instead of mu^2.
inline double kl_from_logvar(const Vector& mu, const Vector& logvar, KlForm form, Vector* d_mu = nullptr,
                             Vector* d_logvar = nullptr) {
  const Eigen::ArrayXd var = logvar.array().exp();
  const Eigen::ArrayXd mean_term = form == KlForm::Standard ? Eigen::ArrayXd(mu.array().square()) : mu.array();
  const double kl = 0.5 * (mean_term + var - logvar.array() - 1.0).sum();
  if (d_mu) *d_mu = form == KlForm::Standard ? Vector(mu) : Vector(Vector::Constant(mu.size(), 0.5));
  if (d_logvar) *d_logvar = 0.5 * (var - 1.0).matrix();
  return kl;
}

inline double kl_to_standard_normal(const GaussianEmbedding& emb, KlForm form = KlForm::Standard) {
  const Eigen::ArrayXd s2 = emb.sigma.array().square();
  const Eigen::ArrayXd mean_term =
      form == KlForm::Standard ? Eigen::ArrayXd(emb.mu.array().square()) : emb.mu.array();
  return 0.5 * (mean_term + s2 - s2.log() - 1.0).sum();
}

namespace detail {

inline double uncertainty_term(const EncoderModel& model, const Sample& sample, int label, Rng& rng,
                               double lambda, KlForm form, GradSink sink, double* kl_out) {
  const ForwardTrace t = trace_forward(model, sample.features);
  const LatentSample z = reparameterize({t.mu, t.sigma}, rng);
  Vector logits = logits_identity(model, z.r);
  Vector d_logits;
  const double ce = cross_entropy(logits, label, sink.grads ? &d_logits : nullptr);
  Vector d_mu_kl, d_lv_kl;
  const double kl = kl_from_logvar(t.mu, t.logvar, form, &d_mu_kl, &d_lv_kl);
  if (kl_out) *kl_out = kl;
  if (sink.grads) {
    Gradients& g = *sink.grads;
    const double w = sink.weight;
    g.id_w.noalias() += w * d_logits * z.r.transpose();
    g.id_b += w * d_logits;
    const Vector d_r = model.params.id_w.transpose() * d_logits;
    // r = mu + eps * exp(logvar / 2)
    const Vector d_mu = w * (d_r + lambda * d_mu_kl);
    const Vector d_lv =
        w * (0.5 * d_r.cwiseProduct(z.eps).cwiseProduct(t.sigma) + lambda * d_lv_kl);
    backward(model, t, d_mu, d_lv, g);
  }
  return ce + lambda * kl;
}

inline double determinacy_term(const EncoderModel& model, const Sample& sample, int label, GradSink sink) {
  const ForwardTrace t = trace_forward(model, sample.features);
  Vector d_logits;
  const double ce = cross_entropy(logits_identity(model, t.mu), label, sink.grads ? &d_logits : nullptr);
  if (sink.grads) {
    Gradients& g = *sink.grads;
    const double w = sink.weight;
    g.id_w.noalias() += w * d_logits * t.mu.transpose();
    g.id_b += w * d_logits;
    const Vector d_mu = w * (model.params.id_w.transpose() * d_logits);
    backward(model, t, d_mu, Vector::Zero(t.mu.size()), g);
  }
  return ce;
}

}  // namespace detail

// Classification of one reparameterized draw plus lambda-weighted KL.
// Valid for labeled and Subset-A samples.
inline double loss_uncertainty(const EncoderModel& model, const Sample& sample, int label, Rng& rng,
                               double lambda, KlForm form = KlForm::Standard, GradSink sink = {},
                               double* kl_out = nullptr) {
  if (!std::holds_alternative<Labeled>(sample.state) && !std::holds_alternative<PseudoA>(sample.state))
    throw ConfigError("loss_uncertainty requires a labeled or Subset-A sample");
  return detail::uncertainty_term(model, sample, label, rng, lambda, form, sink, kl_out);
}

// Classification of the deterministic embedding. Valid for Subset-B samples.
inline double loss_determinacy(const EncoderModel& model, const Sample& sample, int pseudo_label,
                               GradSink sink = {}) {
  if (!std::holds_alternative<PseudoB>(sample.state))
    throw ConfigError("loss_determinacy requires a Subset-B sample");
  return detail::determinacy_term(model, sample, pseudo_label, sink);
}

// Softmax over the first active_m index-classifier rows, every logit taken
// against this sample's own embedding.
inline double loss_exclusive(const EncoderModel& model, const Sample& sample, int index_label, int active_m,
                             GradSink sink = {}) {
  if (!std::holds_alternative<Index>(sample.state))
    throw ConfigError("loss_exclusive requires an index-labeled sample");
  if (index_label < 0 || index_label >= active_m)
    throw ConfigError("index label " + std::to_string(index_label) + " outside [0, " +
                      std::to_string(active_m) + ")");
  const ForwardTrace t = trace_forward(model, sample.features);
  Vector d_logits;
  const double loss =
      cross_entropy(logits_index(model, t.mu, active_m), index_label, sink.grads ? &d_logits : nullptr);
  if (sink.grads) {
    Gradients& g = *sink.grads;
    const double w = sink.weight;
    g.index_w.topRows(active_m).noalias() += w * d_logits * t.mu.transpose();
    const Vector d_mu = w * (model.params.index_w.topRows(active_m).transpose() * d_logits);
    backward(model, t, d_mu, Vector::Zero(t.mu.size()), g);
  }
  return loss;
}

struct ObjectiveConfig {
  double gamma = 0.8;
  double lambda = 0.01;
  KlForm kl_form = KlForm::Standard;
  int active_index = 0;  // number of index classes at this step
  // False for the pure point-embedding baseline: labeled samples then use
  // the determinacy loss as well.
  bool labeled_uncertainty = true;
};

struct LossBreakdown {
  double l_ue_labeled = 0.0;
  double l_ue_subsetA = 0.0;
  double l_de_subsetB = 0.0;
  double l_ex_index = 0.0;
  double l_kl = 0.0;  // mean raw KL over samples trained with the uncertainty loss
  double total = 0.0;
  int n_labeled = 0;
  int n_a = 0;
  int n_b = 0;
  int n_index = 0;

  // Weighted combination of the per-split means.
  double combine(double gamma) const {
    double t = gamma * l_ue_labeled;
    if (n_a + n_b > 0) t += gamma * (n_a * l_ue_subsetA + n_b * l_de_subsetB) / (n_a + n_b);
    t += (1.0 - gamma) * l_ex_index;
    return t;
  }
};

// Co-operative objective over a mixed batch. Each split is averaged
// separately; empty splits contribute zero. One latent draw per uncertainty
// sample, in batch order.
inline LossBreakdown loss_spue(const EncoderModel& model, std::span<const Sample* const> batch,
                               const ObjectiveConfig& cfg, Rng& rng, Gradients* grads = nullptr) {
  LossBreakdown b;
  for (const Sample* s : batch) {
    std::visit(
        [&](const auto& st) {
          using T = std::decay_t<decltype(st)>;
          if constexpr (std::is_same_v<T, Labeled>) ++b.n_labeled;
          else if constexpr (std::is_same_v<T, PseudoA>) ++b.n_a;
          else if constexpr (std::is_same_v<T, PseudoB>) ++b.n_b;
          else ++b.n_index;
        },
        s->state);
  }
  const int n_selected = b.n_a + b.n_b;
  const double w_labeled = b.n_labeled ? cfg.gamma / b.n_labeled : 0.0;
  const double w_selected = n_selected ? cfg.gamma / n_selected : 0.0;
  const double w_index = b.n_index ? (1.0 - cfg.gamma) / b.n_index : 0.0;
  int n_kl = 0;

  for (const Sample* s : batch) {
    double kl = 0.0;
    if (const auto* st = std::get_if<Labeled>(&s->state)) {
      if (cfg.labeled_uncertainty) {
        b.l_ue_labeled += detail::uncertainty_term(model, *s, st->identity, rng, cfg.lambda, cfg.kl_form,
                                                   {grads, w_labeled}, &kl);
        b.l_kl += kl;
        ++n_kl;
      } else {
        b.l_ue_labeled += detail::determinacy_term(model, *s, st->identity, {grads, w_labeled});
      }
    } else if (const auto* st = std::get_if<PseudoA>(&s->state)) {
      b.l_ue_subsetA += detail::uncertainty_term(model, *s, st->identity, rng, cfg.lambda, cfg.kl_form,
                                                 {grads, w_selected}, &kl);
      b.l_kl += kl;
      ++n_kl;
    } else if (const auto* st = std::get_if<PseudoB>(&s->state)) {
      b.l_de_subsetB += detail::determinacy_term(model, *s, st->identity, {grads, w_selected});
    } else {
      const auto& idx = std::get<Index>(s->state);
      b.l_ex_index += loss_exclusive(model, *s, idx.index, cfg.active_index, {grads, w_index});
    }
  }
  if (b.n_labeled) b.l_ue_labeled /= b.n_labeled;
  if (b.n_a) b.l_ue_subsetA /= b.n_a;
  if (b.n_b) b.l_de_subsetB /= b.n_b;
  if (b.n_index) b.l_ex_index /= b.n_index;
  if (n_kl) b.l_kl /= n_kl;
  b.total = b.combine(cfg.gamma);
  if (!std::isfinite(b.total)) throw NumericalError("loss_spue: non-finite total loss");
  return b;
}

}  // namespace spue
