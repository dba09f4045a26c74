// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "app.hpp"
#include "reduxpll/errors.hpp"
#include "reduxpll/format.hpp"

namespace {

using namespace reduxpll;
using namespace reduxpll::app;

// Training flags shared by train and sweep-alpha. Flags that were given
// override the config file, which overrides the defaults.
struct TrainFlags {
  std::string config_file;
  std::string data;
  std::string out;
  std::string method;
  double alpha = 0, beta1 = 0, beta2 = 0, beta3 = 0, momentum = 0;
  std::size_t batch_size = 0, epochs = 0, patience = 0;
  std::vector<std::size_t> hidden, meta_hidden;
  std::size_t seeds = 5;
  std::uint64_t seed_base = 0;
  std::uint64_t split_seed = 0;
  std::size_t checkpoint_every = 10;
  bool resume = false;
  unsigned threads = 0;
  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "JSON training config (flags take precedence)")
        ->check(CLI::ExistingFile);
    app->add_option("--data", data, "dataset CSV or directory holding data.csv")->required();
    app->add_option("--out", out, "output directory")->required();
    opts["method"] = app->add_option("--method", method, "reduxpll | reduxpll-uniform-w | proden");
    opts["alpha"] = app->add_option("--alpha", alpha, "mixing weight of mu in q (default 0.3)");
    opts["beta1"] = app->add_option("--beta1", beta1, "auxiliary branch step size");
    opts["beta2"] = app->add_option("--beta2", beta2, "predictor step size");
    opts["beta3"] = app->add_option("--beta3", beta3, "meta-learner step size");
    opts["momentum"] = app->add_option("--momentum", momentum);
    opts["batch_size"] = app->add_option("--batch-size,-m", batch_size);
    opts["epochs"] = app->add_option("--epochs", epochs);
    opts["patience"] = app->add_option("--patience", patience);
    opts["hidden"] = app->add_option("--hidden", hidden, "predictor hidden widths");
    opts["meta_hidden"] = app->add_option("--meta-hidden", meta_hidden, "meta-learner hidden widths");
    app->add_option("--seeds", seeds, "number of seeds (seed-base, seed-base+1, ...)")
        ->capture_default_str();
    app->add_option("--seed-base", seed_base)->capture_default_str();
    app->add_option("--split-seed", split_seed, "seed of the 80/10/10 split")->capture_default_str();
    app->add_option("--checkpoint-every", checkpoint_every, "epochs between checkpoints (0 = end only)")
        ->capture_default_str();
    app->add_flag("--resume", resume, "continue from existing checkpoints in --out");
    app->add_option("--threads", threads, "parallel seeds (default: REDUXPLL_THREADS or all cores)");
  }

  bool given(const char* name) const { return opts.at(name)->count() > 0; }

  TrainOptions resolve() const {
    TrainOptions o;
    if (!config_file.empty()) {
      o.config = config_from_json(read_file(config_file), o.config, config_file);
    }
    auto& c = o.config;
    if (given("method")) c.method = method_from_string(method);
    if (given("alpha")) c.alpha = alpha;
    if (given("beta1")) c.beta1 = beta1;
    if (given("beta2")) c.beta2 = beta2;
    if (given("beta3")) c.beta3 = beta3;
    if (given("momentum")) c.momentum = momentum;
    if (given("batch_size")) c.batch_size = batch_size;
    if (given("epochs")) c.epochs = epochs;
    if (given("patience")) c.patience = patience;
    if (given("hidden")) c.predictor_hidden = hidden;
    if (given("meta_hidden")) c.meta_hidden = meta_hidden;
    o.dataset = data;
    o.out = out;
    o.seeds = seeds;
    o.seed_base = seed_base;
    o.split.seed = split_seed;
    o.checkpoint_every = checkpoint_every;
    o.resume = resume;
    o.threads = threads;
    return o;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"reduxpll: reduction-based pseudo-labels for instance-dependent partial-label learning"};
  app.require_subcommand(1);

  GenerateOptions gen;
  std::string gen_out;
  auto* g = app.add_subcommand("generate", "synthetic Gaussian-mixture PLL dataset");
  g->add_option("--classes,-c", gen.num_classes)->capture_default_str();
  g->add_option("--dim,-q", gen.dim)->capture_default_str();
  g->add_option("--n,-n", gen.n)->capture_default_str();
  g->add_option("--separation", gen.separation, "radius of the circle of component means")
      ->capture_default_str();
  g->add_option("--ambiguity", gen.ambiguity)->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--out", gen_out, "output directory")->required();

  TrainFlags train_flags;
  auto* t = app.add_subcommand("train", "train over several seeds and summarize");
  train_flags.attach(t);

  TrainFlags sweep_flags;
  std::vector<double> alphas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  auto* s = app.add_subcommand("sweep-alpha", "alpha sensitivity sweep");
  sweep_flags.attach(s);
  s->add_option("--alphas", alphas, "alpha grid")->capture_default_str();

  VerifyOptions verify;
  std::string scenario, verify_out;
  auto* v = app.add_subcommand("verify-theory", "Monte-Carlo check of the consistency theorems");
  v->add_option("--scenario", scenario, "scenario JSON")->required();
  v->add_option("--trials", verify.run.trials)->capture_default_str();
  v->add_option("--seed", verify.run.seed)->capture_default_str();
  v->add_option("--threads", verify.run.threads, "worker threads (results do not depend on it)");
  v->add_option("--out", verify_out, "also write the report here");

  std::vector<std::string> run_dirs;
  std::string report_out;
  auto* r = app.add_subcommand("report", "consolidated report over run directories");
  r->add_option("runs", run_dirs, "run directories written by train")->required();
  r->add_option("--out", report_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (*g) {
    gen.out = gen_out;
    const auto m = cmd_generate(gen);
    std::cout << manifest_to_json(m) << '\n';
  } else if (*t) {
    const auto summary = cmd_train(train_flags.resolve());
    std::cout << summary.method << ": test accuracy " << format_double(summary.mean_test_accuracy)
              << " +- " << format_double(summary.std_test_accuracy) << " over "
              << summary.runs.size() << " seeds\n";
  } else if (*s) {
    SweepOptions so;
    so.base = sweep_flags.resolve();
    so.alphas = alphas;
    const auto res = cmd_sweep_alpha(so);
    for (std::size_t k = 0; k < res.rows.size(); ++k) {
      std::cout << "alpha " << format_double(res.rows[k].alpha) << ": "
                << format_double(res.rows[k].mean_test_accuracy)
                << (k == res.best_row ? "  <- best" : "") << '\n';
    }
  } else if (*v) {
    verify.scenario = scenario;
    if (!verify_out.empty()) verify.out = verify_out;
    std::cout << cmd_verify_theory(verify).json;
  } else if (*r) {
    ReportOptions ro;
    for (const auto& d : run_dirs) ro.runs.emplace_back(d);
    ro.out = report_out;
    for (const auto& p : cmd_report(ro)) std::cout << p.string() << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}
