// spue generate|train|eval|ablate --config <file> [--set k=v ...] --out <dir>

#include <chrono>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spue/run.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Self-paced uncertainty estimation for one-shot re-identification"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string checkpoint;
  std::string dataset;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--set", overrides, "Override a config key, e.g. --set train.er=0.1")->take_all();
    sub->add_option("--out", out_dir, "Run directory")->required();
  };
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  auto* train = app.add_subcommand("train", "Run self-paced training");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* ablate = app.add_subcommand("ablate", "Run full / no_coop / no_coop_no_unc variants");
  for (auto* sub : {gen, train, eval, ablate}) add_common(sub);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file (overrides config)");
  eval->add_option("--dataset", dataset, "Feature CSV to evaluate on (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (!checkpoint.empty()) overrides.push_back("checkpoint=\"" + checkpoint + "\"");
  if (!dataset.empty()) overrides.push_back("dataset_path=\"" + dataset + "\"");
  const spue::RunConfig config = spue::load_run_config(config_path, overrides);
  const auto start = std::chrono::steady_clock::now();

  if (*gen) {
    const auto r = spue::cmd_generate(config, out_dir);
    std::cout << "n=" << r.n << " m=" << r.m << " D_in=" << r.d_in << '\n';
  } else if (*train) {
    const auto r = spue::cmd_train(config, out_dir, &std::cout);
    std::cout << "final: " << r.summary["final"].dump() << '\n';
  } else if (*eval) {
    const auto r = spue::cmd_eval(config, out_dir);
    std::cout << "mAP=" << spue::fmt_num(r.map) << " rank1=" << spue::fmt_num(r.rank(1))
              << " rank5=" << spue::fmt_num(r.rank(5)) << " rank10=" << spue::fmt_num(r.rank(10))
              << " rank20=" << spue::fmt_num(r.rank(20)) << " queries=" << r.num_queries_used << '\n';
    if (r.num_queries_skipped > 0)
      std::cerr << "warning: " << r.num_queries_skipped << " queries had no valid gallery match and were skipped\n";
  } else if (*ablate) {
    spue::cmd_ablate(config, out_dir, &std::cout);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "elapsed " << spue::fmt_num(secs) << " s\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const spue::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const spue::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const spue::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
