#pragma once

// Small differentiable encoder: a one-hidden-layer trunk feeding a mean head
// and a log-variance head, plus an identity classifier and an index
// classifier. Gradients are computed by hand from a recorded forward trace.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>

#include "spue/data_model.hpp"
#include "spue/errors.hpp"

namespace spue {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

enum class Activation { Tanh, Identity };

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

inline Activation activation_from_string(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

struct EncoderDims {
  int d_in = 64;
  int hidden = 128;
  int embed = 32;
  int n_classes = 2;
  int index_capacity = 1;

  bool operator==(const EncoderDims&) const = default;
};

// One tensor per parameter group. The same layout holds gradients and
// optimizer velocities.
struct EncoderParams {
  Matrix trunk_w1;  // hidden x d_in
  Vector trunk_b1;
  Matrix trunk_w2;  // embed x hidden
  Vector trunk_b2;
  Matrix mu_w;      // embed x embed
  Vector mu_b;
  Matrix logvar_w;  // embed x embed
  Vector logvar_b;
  Matrix id_w;      // n_classes x embed
  Vector id_b;
  Matrix index_w;   // index_capacity x embed

  static EncoderParams zeros(const EncoderDims& d) {
    EncoderParams p;
    p.trunk_w1 = Matrix::Zero(d.hidden, d.d_in);
    p.trunk_b1 = Vector::Zero(d.hidden);
    p.trunk_w2 = Matrix::Zero(d.embed, d.hidden);
    p.trunk_b2 = Vector::Zero(d.embed);
    p.mu_w = Matrix::Zero(d.embed, d.embed);
    p.mu_b = Vector::Zero(d.embed);
    p.logvar_w = Matrix::Zero(d.embed, d.embed);
    p.logvar_b = Vector::Zero(d.embed);
    p.id_w = Matrix::Zero(d.n_classes, d.embed);
    p.id_b = Vector::Zero(d.n_classes);
    p.index_w = Matrix::Zero(d.index_capacity, d.embed);
    return p;
  }

  bool operator==(const EncoderParams& o) const {
    bool eq = true;
    visit_pair(*this, o, [&](std::string_view, const auto& a, const auto& b) {
      eq = eq && a.rows() == b.rows() && a.cols() == b.cols() && a == b;
    });
    return eq;
  }

  // f(name, tensor) for every parameter tensor, in a fixed order.
  template <typename Self, typename F>
  static void visit(Self& p, F&& f) {
    f("trunk.w1", p.trunk_w1);
    f("trunk.b1", p.trunk_b1);
    f("trunk.w2", p.trunk_w2);
    f("trunk.b2", p.trunk_b2);
    f("mu.w", p.mu_w);
    f("mu.b", p.mu_b);
    f("logvar.w", p.logvar_w);
    f("logvar.b", p.logvar_b);
    f("id.w", p.id_w);
    f("id.b", p.id_b);
    f("index.w", p.index_w);
  }

  template <typename A, typename B, typename F>
  static void visit_pair(A& a, B& b, F&& f) {
    f("trunk.w1", a.trunk_w1, b.trunk_w1);
    f("trunk.b1", a.trunk_b1, b.trunk_b1);
    f("trunk.w2", a.trunk_w2, b.trunk_w2);
    f("trunk.b2", a.trunk_b2, b.trunk_b2);
    f("mu.w", a.mu_w, b.mu_w);
    f("mu.b", a.mu_b, b.mu_b);
    f("logvar.w", a.logvar_w, b.logvar_w);
    f("logvar.b", a.logvar_b, b.logvar_b);
    f("id.w", a.id_w, b.id_w);
    f("id.b", a.id_b, b.id_b);
    f("index.w", a.index_w, b.index_w);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit(*this, [&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    visit(*this, [&](std::string_view, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
  }
};

using Gradients = EncoderParams;

struct EncoderModel {
  EncoderDims dims;
  Activation activation = Activation::Tanh;
  EncoderParams params;

  bool operator==(const EncoderModel&) const = default;
};

struct GaussianEmbedding {
  Vector mu;
  Vector sigma;
};

struct LatentSample {
  Vector r;
  Vector eps;  // the standard-normal draw that produced r
};

// Draws fresh index-classifier rows. Called whenever the index set changes.
inline void reinit_index_classifier(EncoderModel& model, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 0.01);
  for (Eigen::Index i = 0; i < model.params.index_w.size(); ++i) model.params.index_w(i) = gauss(rng);
}

inline EncoderModel init_encoder(const EncoderDims& dims, Activation activation, std::uint64_t seed) {
  if (dims.d_in < 1 || dims.hidden < 1 || dims.embed < 1 || dims.n_classes < 1 || dims.index_capacity < 1)
    throw ConfigError("encoder dimensions must be positive");
  EncoderModel model{dims, activation, EncoderParams::zeros(dims)};
  std::seed_seq seq{seed, std::uint64_t{0x656e63}};
  Rng rng(seq);
  auto fan_in_uniform = [&](Matrix& w) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = u(rng);
  };
  fan_in_uniform(model.params.trunk_w1);
  fan_in_uniform(model.params.trunk_w2);
  fan_in_uniform(model.params.mu_w);
  fan_in_uniform(model.params.logvar_w);
  std::normal_distribution<double> small(0.0, 0.01);
  for (Eigen::Index i = 0; i < model.params.id_w.size(); ++i) model.params.id_w(i) = small(rng);
  reinit_index_classifier(model, rng);
  return model;
}

// Intermediate values of one forward pass, consumed by backward().
struct ForwardTrace {
  bool recorded = false;
  Vector x;
  Vector hidden_pre;
  Vector hidden;
  Vector trunk;
  Vector mu;
  Vector logvar_raw;
  Vector logvar;  // clamped
  Vector sigma;
};

inline Vector to_vector(std::span<const double> x) {
  return Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
}

inline ForwardTrace trace_forward(const EncoderModel& model, std::span<const double> features) {
  if (static_cast<int>(features.size()) != model.dims.d_in)
    throw ConfigError("feature length " + std::to_string(features.size()) + " does not match D_in=" +
                      std::to_string(model.dims.d_in));
  const auto& p = model.params;
  ForwardTrace t;
  t.x = to_vector(features);
  t.hidden_pre = p.trunk_w1 * t.x + p.trunk_b1;
  t.hidden = model.activation == Activation::Tanh ? Vector(t.hidden_pre.array().tanh()) : t.hidden_pre;
  t.trunk = p.trunk_w2 * t.hidden + p.trunk_b2;
  t.mu = p.mu_w * t.trunk + p.mu_b;
  t.logvar_raw = p.logvar_w * t.trunk + p.logvar_b;
  t.logvar = t.logvar_raw.cwiseMax(kLogvarMin).cwiseMin(kLogvarMax);
  t.sigma = (0.5 * t.logvar.array()).exp();
  t.recorded = true;
  return t;
}

// The deterministic embedding used for selection and retrieval: the mean head output.
inline Vector forward_deterministic(const EncoderModel& model, std::span<const double> features) {
  return trace_forward(model, features).mu;
}

inline GaussianEmbedding forward_gaussian(const EncoderModel& model, std::span<const double> features) {
  auto t = trace_forward(model, features);
  return {std::move(t.mu), std::move(t.sigma)};
}

inline LatentSample reparameterize(const GaussianEmbedding& emb, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  LatentSample s;
  s.eps.resize(emb.mu.size());
  for (Eigen::Index i = 0; i < s.eps.size(); ++i) s.eps(i) = gauss(rng);
  s.r = emb.mu + s.eps.cwiseProduct(emb.sigma);
  return s;
}

inline Vector logits_identity(const EncoderModel& model, const Vector& r) {
  if (r.size() != model.dims.embed) throw ConfigError("latent length does not match embedding size");
  return model.params.id_w * r + model.params.id_b;
}

inline Vector logits_index(const EncoderModel& model, const Vector& embedding, int active_m) {
  if (active_m < 1 || active_m > model.dims.index_capacity)
    throw ConfigError("active index count " + std::to_string(active_m) + " outside [1, " +
                      std::to_string(model.dims.index_capacity) + "]");
  if (embedding.size() != model.dims.embed) throw ConfigError("embedding length does not match embedding size");
  return model.params.index_w.topRows(active_m) * embedding;
}

// Accumulates d(loss)/d(params) of the encoder body given upstream gradients
// with respect to the mean and the (clamped) log-variance outputs.
inline void backward(const EncoderModel& model, const ForwardTrace& trace, const Vector& d_mu,
                     const Vector& d_logvar, Gradients& grads) {
  if (!trace.recorded) throw std::logic_error("backward called without a recorded forward pass");
  const auto& p = model.params;
  // The clamp passes gradient only inside its range.
  Vector d_lv_raw = d_logvar;
  for (Eigen::Index i = 0; i < d_lv_raw.size(); ++i)
    if (trace.logvar_raw(i) < kLogvarMin || trace.logvar_raw(i) > kLogvarMax) d_lv_raw(i) = 0.0;

  grads.mu_w.noalias() += d_mu * trace.trunk.transpose();
  grads.mu_b += d_mu;
  grads.logvar_w.noalias() += d_lv_raw * trace.trunk.transpose();
  grads.logvar_b += d_lv_raw;

  Vector d_trunk = p.mu_w.transpose() * d_mu + p.logvar_w.transpose() * d_lv_raw;
  grads.trunk_w2.noalias() += d_trunk * trace.hidden.transpose();
  grads.trunk_b2 += d_trunk;

  Vector d_hidden = p.trunk_w2.transpose() * d_trunk;
  if (model.activation == Activation::Tanh)
    d_hidden.array() *= (1.0 - trace.hidden.array().square());
  grads.trunk_w1.noalias() += d_hidden * trace.x.transpose();
  grads.trunk_b1 += d_hidden;
}

// ---- checkpoint --------------------------------------------------------------

inline void write_checkpoint(std::ostream& os, const EncoderModel& model) {
  const auto& d = model.dims;
  os << "# spue-checkpoint v1\n";
  os << "dims " << d.d_in << ' ' << d.hidden << ' ' << d.embed << ' ' << d.n_classes << ' '
     << d.index_capacity << '\n';
  os << "activation " << to_string(model.activation) << '\n';
  EncoderParams::visit(model.params, [&](std::string_view name, const auto& t) {
    os << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        if (c) os << ' ';
        os << format_double(t(r, c));
      }
      os << '\n';
    }
  });
}

inline EncoderModel read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "# spue-checkpoint v1")
    throw ParseError("missing '# spue-checkpoint v1' header", 1);
  std::string word;
  EncoderModel model;
  auto& d = model.dims;
  if (!(is >> word >> d.d_in >> d.hidden >> d.embed >> d.n_classes >> d.index_capacity) || word != "dims")
    throw ParseError("bad dims record", 2);
  std::string act;
  if (!(is >> word >> act) || word != "activation") throw ParseError("bad activation record", 3);
  try {
    model.activation = activation_from_string(act);
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), 3);
  }
  if (d.d_in < 1 || d.hidden < 1 || d.embed < 1 || d.n_classes < 1 || d.index_capacity < 1)
    throw ParseError("non-positive dimension in checkpoint");
  model.params = EncoderParams::zeros(d);
  EncoderParams::visit(model.params, [&](std::string_view name, auto& t) {
    std::string tname;
    Eigen::Index rows = 0, cols = 0;
    if (!(is >> word >> tname >> rows >> cols) || word != "tensor")
      throw ParseError("bad tensor record for " + std::string(name));
    if (tname != name || rows != t.rows() || cols != t.cols())
      throw ParseError("tensor " + tname + " does not match expected " + std::string(name));
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        std::string tok;
        if (!(is >> tok)) throw ParseError("truncated tensor " + tname);
        t(r, c) = detail::parse_field<double>(tok, 0, "tensor value");
      }
  });
  if (!model.params.all_finite()) throw ParseError("checkpoint contains non-finite values");
  return model;
}

inline void save_checkpoint(const EncoderModel& model, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  write_checkpoint(os, model);
  if (!os) throw ConfigError("write failed: " + path);
}

inline EncoderModel load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open: " + path);
  return read_checkpoint(is);
}

}  // namespace spue
