// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "spue/run.hpp"

using namespace spue;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] %d %s: %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Sample make_sample(std::vector<double> x, LabelState st, int id) {
  Sample s;
  s.sample_id = id;
  s.features = std::move(x);
  s.state = st;
  return s;
}

// ---- 1 --------------------------------------------------------------------

void gradient_soundness() {
  const auto start = Clock::now();
  EncoderModel model = init_encoder({10, 16, 6, 7, 9}, Activation::Tanh, 2024);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 0.5);
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  };
  fill(model.params.id_w);
  fill(model.params.index_w);
  fill(model.params.logvar_b);

  std::vector<Sample> batch;
  int id = 0;
  for (LabelState st : std::vector<LabelState>{Labeled{0}, Labeled{5}, PseudoA{2, 0.1}, PseudoA{6, 0.2},
                                               PseudoB{1, 0.3}, PseudoB{3, 0.4}, PseudoB{3, 0.5}, Index{0},
                                               Index{4}, Index{8}}) {
    std::vector<double> x(10);
    for (double& v : x) v = g(rng) * 2;
    batch.push_back(make_sample(x, st, id++));
  }
  std::vector<const Sample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);

  std::vector<std::pair<std::string, oracle::LossFn>> terms;
  terms.emplace_back("CE", [&](const EncoderModel& m, Gradients* gr) {
    Rng r(1);
    return loss_uncertainty(m, batch[0], 0, r, 0.0, KlForm::Standard, {gr, 1.0});
  });
  for (KlForm form : {KlForm::Standard, KlForm::PaperLiteral})
    terms.emplace_back("KL/" + to_string(form), [&, form](const EncoderModel& m, Gradients* gr) {
      const auto t = trace_forward(m, batch[2].features);
      Vector dmu, dlv;
      const double v = kl_from_logvar(t.mu, t.logvar, form, &dmu, &dlv);
      if (gr) backward(m, t, dmu, dlv, *gr);
      return v;
    });
  terms.emplace_back("DE", [&](const EncoderModel& m, Gradients* gr) {
    return loss_determinacy(m, batch[4], 1, {gr, 1.0});
  });
  terms.emplace_back("EX", [&](const EncoderModel& m, Gradients* gr) {
    return loss_exclusive(m, batch[8], 4, 9, {gr, 1.0});
  });
  terms.emplace_back("combined", [&](const EncoderModel& m, Gradients* gr) {
    ObjectiveConfig cfg;
    cfg.active_index = 9;
    cfg.lambda = 0.05;
    Rng r(3);
    return loss_spue(m, ptrs, cfg, r, gr).total;
  });

  bool ok = true;
  std::string detail;
  std::uint64_t seed = 100;
  for (const auto& [name, fn] : terms) {
    const auto res = oracle::gradient_check(model, fn, 50, seed++, 1e-4);
    ok = ok && res.max_rel_error <= 1e-4;
    detail += fmt("%s %.1e, ", name.c_str(), res.max_rel_error);
  }
  const double secs = seconds_since(start);
  ok = ok && secs < 10.0;
  report(1, "gradient soundness", ok, detail + fmt("%.2f s", secs));
}

// ---- 2 --------------------------------------------------------------------

void oracle_equivalence() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  int metric_mismatch = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int gallery_size = 1 + static_cast<int>(rng() % 20);
    const int queries = 1 + static_cast<int>(rng() % 8);
    const int identities = 1 + static_cast<int>(rng() % 5);
    std::vector<Vector> gallery;
    std::vector<int> ids, gallery_identity;
    for (int i = 0; i < gallery_size; ++i) {
      gallery.push_back(Vector::NullaryExpr(3, [&] { return g(rng); }));
      ids.push_back(i);
      gallery_identity.push_back(static_cast<int>(rng() % identities));
    }
    std::vector<std::vector<int>> rankings;
    std::vector<std::set<int>> relevant;
    for (int q = 0; q < queries; ++q) {
      const Vector query = Vector::NullaryExpr(3, [&] { return g(rng); });
      const int qid = static_cast<int>(rng() % identities);
      rankings.push_back(rank_by_distance(query, gallery, ids));
      std::set<int> rel;
      for (int i = 0; i < gallery_size; ++i)
        if (gallery_identity[static_cast<std::size_t>(i)] == qid) rel.insert(i);
      relevant.push_back(rel);
    }
    const double map = mean_average_precision(rankings, relevant).value;
    const auto cmc = cmc_curve(rankings, relevant, 20);
    if (map != oracle::mean_ap(rankings, relevant) || cmc != oracle::cmc(rankings, relevant, 20)) ++metric_mismatch;
  }

  // Pseudo-labeling: n = 50 identities, m = 200 unlabeled, m * n = 10^4.
  SynthSpec spec;
  spec.n_identities = 50;
  spec.samples_per_identity = 5;
  spec.d_in = 16;
  spec.cluster_spread = 0.5;
  spec.overlap = 0.3;
  spec.seed = 5;
  const Dataset ds = generate_synthetic(spec);
  const auto model = init_encoder({ds.d_in, 24, 8, ds.n, ds.m}, Activation::Tanh, 9);
  std::vector<std::vector<double>> anchors;
  std::vector<int> anchor_identity;
  for (const Sample& s : ds.samples)
    if (is_labeled(s)) {
      const Vector e = forward_deterministic(model, s.features);
      anchors.emplace_back(e.data(), e.data() + e.size());
      anchor_identity.push_back(std::get<Labeled>(s.state).identity);
    }
  int nn_mismatch = 0;
  std::size_t j = 0;
  const auto est = estimate_pseudo_labels(model, ds);
  for (const Sample& s : ds.samples) {
    if (is_labeled(s)) continue;
    const Vector e = forward_deterministic(model, s.features);
    const auto nn = oracle::nearest_labeled({e.data(), e.data() + e.size()}, anchors, anchor_identity);
    if (est[j].sample_id != s.sample_id || est[j].identity != nn.identity) ++nn_mismatch;
    ++j;
  }
  report(2, "oracle equivalence", metric_mismatch == 0 && nn_mismatch == 0 && ds.m * ds.n == 10000,
         fmt("%d/200 gallery mismatches, %d/%d pseudo-label mismatches (m*n=%d)", metric_mismatch, nn_mismatch,
             ds.m, ds.m * ds.n));
}

// ---- 3 --------------------------------------------------------------------

void partition_invariants() {
  std::mt19937_64 rng(31);
  int violations = 0;
  for (int call = 0; call < 1000; ++call) {
    const int m = 1 + static_cast<int>(rng() % 200);
    const double er = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const int t = static_cast<int>(rng() % 12);
    std::vector<PseudoLabel> est;
    for (int i = 0; i < m; ++i)
      est.push_back({i, static_cast<int>(rng() % 10), static_cast<double>(rng() % 50) / 7.0});
    std::shuffle(est.begin(), est.end(), rng);
    const auto st = select_and_divide(est, t, er, alpha, m);

    bool ok = true;
    const long long k = std::min<long long>(std::llround(er * t * m), m);
    ok = ok && st.selected() == k && static_cast<long long>(st.subset_a.size()) == static_cast<long long>(std::floor(alpha * static_cast<double>(k)));
    std::vector<int> seen(static_cast<std::size_t>(m), 0);
    for (const auto& p : st.subset_a) ++seen[static_cast<std::size_t>(p.sample_id)];
    for (const auto& p : st.subset_b) ++seen[static_cast<std::size_t>(p.sample_id)];
    for (const auto& ix : st.index) ++seen[static_cast<std::size_t>(ix.sample_id)];
    for (int c : seen) ok = ok && c == 1;

    std::vector<double> conf(static_cast<std::size_t>(m));
    for (const auto& e : est) conf[static_cast<std::size_t>(e.sample_id)] = e.conf;
    double max_a = -1, min_b = 1e300, max_b = -1, min_i = 1e300;
    for (const auto& p : st.subset_a) max_a = std::max(max_a, p.conf);
    for (const auto& p : st.subset_b) {
      min_b = std::min(min_b, p.conf);
      max_b = std::max(max_b, p.conf);
    }
    for (const auto& ix : st.index) min_i = std::min(min_i, conf[static_cast<std::size_t>(ix.sample_id)]);
    ok = ok && max_a <= min_b && max_a <= min_i && max_b <= min_i;
    violations += !ok;
  }
  report(3, "partition invariants", violations == 0, fmt("%d/1000 calls violated", violations));
}

// ---- 4 --------------------------------------------------------------------

void kl_properties() {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_real_distribution<double> s(1e-3, 5.0);
  double min_kl = 1e300;
  for (int i = 0; i < 100000; ++i) {
    const int d = 1 + i % 8;
    GaussianEmbedding e{Vector::NullaryExpr(d, [&] { return g(rng); }), Vector::NullaryExpr(d, [&] { return s(rng); })};
    min_kl = std::min(min_kl, kl_to_standard_normal(e, KlForm::Standard));
  }
  const double at_prior = kl_to_standard_normal({Vector::Zero(6), Vector::Ones(6)}, KlForm::Standard);
  const double literal = kl_to_standard_normal({(Vector(2) << -1, 0).finished(), Vector::Ones(2)}, KlForm::PaperLiteral);
  report(4, "KL properties", min_kl >= 0.0 && std::abs(at_prior) <= 1e-12 && std::abs(literal + 0.5) <= 1e-12,
         fmt("min standard KL %.3g over 1e5 draws, KL(0,1)=%.1e, literal(mu=[-1,0])=%.6f", min_kl, at_prior,
             literal));
}

// ---- 5 --------------------------------------------------------------------

void reparameterization_statistics() {
  const Vector mu = (Vector(4) << 0.5, -1.0, 2.0, 0.0).finished();
  const Vector sigma = (Vector(4) << 0.5, 1.0, 1.5, 0.1).finished();
  Rng rng(51);
  const int draws = 100000;
  Vector sum = Vector::Zero(4), sq = Vector::Zero(4);
  for (int i = 0; i < draws; ++i) {
    const Vector r = reparameterize({mu, sigma}, rng).r;
    sum += r;
    sq += r.cwiseProduct(r);
  }
  const Vector mean = sum / draws;
  const Vector var = (sq / draws - mean.cwiseProduct(mean)) * draws / (draws - 1.0);
  const double mean_err = (mean - mu).cwiseAbs().maxCoeff();
  const double var_err = (var - sigma.cwiseProduct(sigma)).cwiseAbs().maxCoeff();
  report(5, "reparameterization statistics", mean_err <= 0.02 && var_err <= 0.05,
         fmt("max |mean-mu| %.4f, max |var-sigma^2| %.4f", mean_err, var_err));
}

// ---- 6 and 9, sharing the first run ---------------------------------------------------------------

RunConfig clean_config() {
  RunConfig c;
  c.synth = SynthSpec{};
  c.synth.n_identities = 50;
  c.synth.samples_per_identity = 20;
  c.synth.d_in = 64;
  c.synth.cluster_spread = 0.1;
  c.synth.overlap = 1.0;
  c.synth.seed = 1;
  c.train.er = 0.2;
  c.train.alpha = 0.3;
  c.train.gamma = 0.8;
  c.train.lambda = 0.01;
  c.train.epochs_per_iter = 30;
  return c;
}

// Fraction of samples closer to their own identity's empirical mean than to any other.
double nearest_center_accuracy(const Dataset& ds) {
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(ds.n), std::vector<double>(ds.d_in, 0.0));
  std::vector<int> count(static_cast<std::size_t>(ds.n), 0);
  for (const Sample& s : ds.samples) {
    for (int k = 0; k < ds.d_in; ++k) centers[static_cast<std::size_t>(s.identity)][k] += s.features[k];
    ++count[static_cast<std::size_t>(s.identity)];
  }
  std::vector<int> ids(static_cast<std::size_t>(ds.n));
  for (int i = 0; i < ds.n; ++i) {
    for (double& v : centers[static_cast<std::size_t>(i)]) v /= count[static_cast<std::size_t>(i)];
    ids[static_cast<std::size_t>(i)] = i;
  }
  int correct = 0;
  for (const Sample& s : ds.samples) correct += oracle::nearest_labeled(s.features, centers, ids).identity == s.identity;
  return static_cast<double>(correct) / static_cast<double>(ds.samples.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void clean_run(const fs::path& work) {
  const RunConfig c = clean_config();
  const double separability = nearest_center_accuracy(generate_synthetic(c.synth));

  const auto start = Clock::now();
  const auto first = cmd_train(c, work / "clean_a");
  const double secs = seconds_since(start);
  const auto& its = first.report.iterations;
  const double p1 = its.size() > 1 ? its[1].precision.precision_p : 0.0;
  const double rank1 = its.back().eval ? its.back().eval->rank(1) : 0.0;
  report(6, "clean end-to-end run", p1 >= 0.95 && rank1 >= 0.95 && secs <= 600.0,
         fmt("t=1 precision %.4f, final rank-1 %.4f, %.1f s (nearest-center separability %.4f)", p1, rank1, secs,
             separability));
}

void determinism(const fs::path& work) {
  cmd_train(clean_config(), work / "clean_b");
  const std::string a = slurp(work / "clean_a" / "iterations.csv");
  const std::string b = slurp(work / "clean_b" / "iterations.csv");
  report(9, "determinism", !a.empty() && a == b,
         fmt("iterations.csv %zu bytes, %s", a.size(), a == b ? "byte-identical" : "differs"));
}

// ---- 7 and 8 ---------------------------------------------------------------

void overlapping_runs() {
  std::string ranking_detail, precision_detail;
  int full_wins = 0;
  bool monotone = true;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    RunConfig c = clean_config();
    c.synth.overlap = 0.4;
    c.synth.noise_heterogeneity = 0.3;
    c.synth.seed = seed;
    c.train.seed = seed;
    const Dataset train = generate_synthetic(c.synth);
    const Dataset heldout = generate_heldout(c.synth);
    const EvalSetup eval{&heldout, make_protocol(heldout), c.max_rank};

    const auto full = run_self_paced(train, c.train, eval);
    c.train.ablation = Ablation::NoCoop;
    const auto no_coop = run_self_paced(train, c.train, eval);

    const double rf = full.iterations.back().eval->rank(1);
    const double rn = no_coop.iterations.back().eval->rank(1);
    full_wins += rf >= rn;
    ranking_detail += fmt("seed %llu full %.3f vs no_coop %.3f; ", static_cast<unsigned long long>(seed), rf, rn);

    precision_detail += fmt("seed %llu:", static_cast<unsigned long long>(seed));
    for (std::size_t t = 1; t < full.iterations.size(); ++t) {
      const double p = full.iterations[t].precision.precision_p;
      precision_detail += fmt(" %.3f", p);
      if (t > 1 && p > full.iterations[t - 1].precision.precision_p + 0.02) monotone = false;
    }
    precision_detail += "; ";
  }
  report(7, "full vs no_coop ranking", full_wins >= 2, ranking_detail + fmt("full >= no_coop in %d/3", full_wins));
  report(8, "pseudo-label precision trend", monotone, precision_detail);
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / ("spue_acceptance_" + std::to_string(std::random_device{}()));
  fs::create_directories(work);
  try {
    gradient_soundness();
    oracle_equivalence();
    partition_invariants();
    kl_properties();
    reparameterization_statistics();
    clean_run(work);
    overlapping_runs();
    determinism(work);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    ++failures;
  }
  std::error_code ec;
  fs::remove_all(work, ec);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
