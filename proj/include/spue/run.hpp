#pragma once

// The generate / train / eval / ablate commands as library calls. Every
// output goes under the given run directory.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "spue/run_config.hpp"
#include "spue/selfpaced.hpp"

namespace spue {

namespace fs = std::filesystem;

inline constexpr const char* kIterationHeader =
    "t,k,size_A,size_B,size_I,precision_P,precision_A,precision_B,mAP,rank1,rank5,rank10,rank20";
inline constexpr const char* kEpochHeader = "t,epoch,lr,mean_total_loss,mean_kl";
inline constexpr const char* kLossHeader = "step,epoch,l_ue_L,l_ue_A,l_de_B,l_ex_I,l_kl,total";
inline constexpr const char* kEvalHeader = "t,mAP,rank1,rank5,rank10,rank20,num_queries";
inline constexpr const char* kSelectionHeader = "sample_id,split,label,conf";
inline constexpr const char* kAblationHeader =
    "variant,t,k,size_A,size_B,size_I,precision_P,precision_A,precision_B,mAP,rank1";

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string iteration_row(const IterationRecord& r) {
  std::ostringstream os;
  os << r.t << ',' << r.k << ',' << r.size_a << ',' << r.size_b << ',' << r.size_i << ','
     << fmt_num(r.precision.precision_p) << ',' << fmt_num(r.precision.precision_a) << ','
     << fmt_num(r.precision.precision_b);
  if (r.eval)
    os << ',' << fmt_num(r.eval->map) << ',' << fmt_num(r.eval->rank(1)) << ',' << fmt_num(r.eval->rank(5)) << ','
       << fmt_num(r.eval->rank(10)) << ',' << fmt_num(r.eval->rank(20));
  else
    os << ",,,,,";
  return os.str();
}

inline std::string eval_row(int t, const EvalResult& e) {
  std::ostringstream os;
  os << t << ',' << fmt_num(e.map) << ',' << fmt_num(e.rank(1)) << ',' << fmt_num(e.rank(5)) << ','
     << fmt_num(e.rank(10)) << ',' << fmt_num(e.rank(20)) << ',' << e.num_queries_used;
  return os.str();
}

inline std::string epoch_row(const EpochLog& e) {
  std::ostringstream os;
  os << e.t << ',' << e.epoch << ',' << fmt_num(e.lr) << ',' << fmt_num(e.mean_total_loss) << ','
     << fmt_num(e.mean_kl);
  return os.str();
}

inline std::string loss_row(const StepLog& s) {
  std::ostringstream os;
  const auto& l = s.loss;
  os << s.step << ',' << s.epoch << ',' << fmt_num(l.l_ue_labeled) << ',' << fmt_num(l.l_ue_subsetA) << ','
     << fmt_num(l.l_de_subsetB) << ',' << fmt_num(l.l_ex_index) << ',' << fmt_num(l.l_kl) << ','
     << fmt_num(l.total);
  return os.str();
}

inline void write_selection(std::ostream& os, const SelectionState& st) {
  os << kSelectionHeader << '\n';
  for (int id : st.labeled_ids) os << id << ",L,,\n";
  for (const auto& p : st.subset_a) os << p.sample_id << ",A," << p.identity << ',' << format_double(p.conf) << '\n';
  for (const auto& p : st.subset_b) os << p.sample_id << ",B," << p.identity << ',' << format_double(p.conf) << '\n';
  for (const auto& ix : st.index) os << ix.sample_id << ",I," << ix.index << ",\n";
}

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw ConfigError("cannot write " + p.string());
  return os;
}

inline void prepare_out_dir(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw ConfigError("cannot create output directory " + out.string());
}

// Resolved config as written next to the outputs; reloading it reproduces the run.
inline json saved_config(const RunConfig& c) {
  json j = to_json(c);
  if (!c.uses_synthetic()) j.erase("synth");
  return j;
}

struct RunData {
  Dataset train;
  Dataset eval;
};

inline RunData load_run_data(const RunConfig& c) {
  if (c.uses_synthetic()) return {generate_synthetic(c.synth), generate_heldout(c.synth)};
  Dataset train = load_features(c.dataset_path);
  Dataset eval = c.eval_path.empty() ? train : load_features(c.eval_path);
  if (eval.d_in != train.d_in) throw ConfigError("eval set D_in does not match training set");
  return {std::move(train), std::move(eval)};
}

struct GenerateResult {
  int n = 0;
  int m = 0;
  int d_in = 0;
};

inline GenerateResult cmd_generate(const RunConfig& c, const fs::path& out) {
  if (!c.uses_synthetic()) throw ConfigError("generate needs a synth spec, not dataset_path");
  prepare_out_dir(out);
  const Dataset train = generate_synthetic(c.synth);
  save_features(train, (out / "dataset.csv").string());
  save_features(generate_heldout(c.synth), (out / "heldout.csv").string());
  open_out(out / "config.json") << saved_config(c).dump(2) << '\n';
  return {train.n, train.m, train.d_in};
}

struct TrainOutcome {
  TrainingReport report;
  json summary;
};

inline json summary_json(const RunConfig& c, const TrainingReport& report) {
  json iters = json::array();
  for (const auto& r : report.iterations) {
    json it{{"t", r.t},
            {"k", r.k},
            {"size_A", r.size_a},
            {"size_B", r.size_b},
            {"size_I", r.size_i},
            {"precision_P", r.precision.precision_p},
            {"precision_A", r.precision.precision_a},
            {"precision_B", r.precision.precision_b}};
    if (r.eval) {
      it["mAP"] = r.eval->map;
      it["rank1"] = r.eval->rank(1);
    }
    iters.push_back(std::move(it));
  }
  json s{{"ablation", to_string(c.train.ablation)}, {"iterations", iters}};
  const auto& last = report.iterations.back();
  json fin{{"t", last.t}, {"k", last.k}, {"precision_P", last.precision.precision_p}};
  if (last.eval) {
    fin["mAP"] = last.eval->map;
    fin["rank1"] = last.eval->rank(1);
    fin["rank5"] = last.eval->rank(5);
    fin["rank10"] = last.eval->rank(10);
    fin["rank20"] = last.eval->rank(20);
    fin["num_queries"] = last.eval->num_queries_used;
  }
  s["final"] = fin;
  return s;
}

// Logs are streamed as training proceeds, so a failed run keeps everything
// written up to the failure.
inline TrainOutcome cmd_train(const RunConfig& c, const fs::path& out, std::ostream* progress = nullptr) {
  prepare_out_dir(out);
  open_out(out / "config.json") << saved_config(c).dump(2) << '\n';
  const RunData data = load_run_data(c);

  auto iter_csv = open_out(out / "iterations.csv");
  auto epoch_csv = open_out(out / "epochs.csv");
  auto loss_csv = open_out(out / "losses.csv");
  auto eval_csv = open_out(out / "eval.csv");
  iter_csv << kIterationHeader << '\n';
  epoch_csv << kEpochHeader << '\n';
  loss_csv << kLossHeader << '\n';
  eval_csv << kEvalHeader << '\n';

  EvalSetup eval{&data.eval, make_protocol(data.eval, c.same_camera_excluded), c.max_rank};
  RunCallbacks cb;
  cb.train.on_epoch = [&](const EpochLog& e) { epoch_csv << epoch_row(e) << '\n'; };
  cb.train.on_step = [&](const StepLog& s) { loss_csv << loss_row(s) << '\n'; };
  cb.on_selection = [&](const SelectionState& st) {
    auto os = open_out(out / ("selection_t" + std::to_string(st.t) + ".csv"));
    write_selection(os, st);
  };
  cb.on_iteration = [&](const IterationRecord& r) {
    iter_csv << iteration_row(r) << '\n' << std::flush;
    if (r.eval) eval_csv << eval_row(r.t, *r.eval) << '\n' << std::flush;
    epoch_csv.flush();
    loss_csv.flush();
    if (progress) {
      *progress << "t=" << r.t << " k=" << r.k << " |A|=" << r.size_a << " |B|=" << r.size_b
                << " precision_P=" << fmt_num(r.precision.precision_p);
      if (r.eval) *progress << " mAP=" << fmt_num(r.eval->map) << " rank1=" << fmt_num(r.eval->rank(1));
      *progress << '\n';
    }
  };

  TrainOutcome result{run_self_paced(data.train, c.train, eval, cb), {}};
  save_checkpoint(result.report.model, (out / "model.ckpt").string());
  result.summary = summary_json(c, result.report);
  open_out(out / "summary.json") << result.summary.dump(2) << '\n';
  return result;
}

inline EvalResult cmd_eval(const RunConfig& c, const fs::path& out) {
  if (c.checkpoint.empty()) throw ConfigError("eval needs a checkpoint");
  prepare_out_dir(out);
  const EncoderModel model = load_checkpoint(c.checkpoint);
  Dataset eval_set;
  if (!c.eval_path.empty())
    eval_set = load_features(c.eval_path);
  else if (!c.dataset_path.empty())
    eval_set = load_features(c.dataset_path);
  else
    eval_set = generate_heldout(c.synth);
  if (eval_set.d_in != model.dims.d_in)
    throw ConfigError("dataset D_in=" + std::to_string(eval_set.d_in) + " does not match checkpoint D_in=" +
                      std::to_string(model.dims.d_in));
  const EvalResult r = evaluate(model, eval_set, make_protocol(eval_set, c.same_camera_excluded), c.max_rank);
  auto os = open_out(out / "eval.csv");
  os << kEvalHeader << '\n' << eval_row(0, r) << '\n';
  return r;
}

inline std::string ablation_row(Ablation a, const IterationRecord& r) {
  std::ostringstream os;
  os << to_string(a) << ',' << r.t << ',' << r.k << ',' << r.size_a << ',' << r.size_b << ',' << r.size_i << ','
     << fmt_num(r.precision.precision_p) << ',' << fmt_num(r.precision.precision_a) << ','
     << fmt_num(r.precision.precision_b) << ',';
  if (r.eval) os << fmt_num(r.eval->map) << ',' << fmt_num(r.eval->rank(1));
  else os << ',';
  return os.str();
}

// Runs the three variants sequentially with shared data and seed.
inline std::map<Ablation, TrainOutcome> cmd_ablate(const RunConfig& c, const fs::path& out,
                                                   std::ostream* progress = nullptr) {
  prepare_out_dir(out);
  std::map<Ablation, TrainOutcome> results;
  auto merged = open_out(out / "ablation.csv");
  merged << kAblationHeader << '\n';
  for (Ablation a : {Ablation::Full, Ablation::NoCoop, Ablation::NoCoopNoUnc}) {
    RunConfig variant = c;
    variant.train.ablation = a;
    if (progress) *progress << "== " << to_string(a) << '\n';
    auto outcome = cmd_train(variant, out / to_string(a), progress);
    for (const auto& r : outcome.report.iterations) merged << ablation_row(a, r) << '\n';
    merged.flush();
    results.emplace(a, std::move(outcome));
  }
  return results;
}

}  // namespace spue
