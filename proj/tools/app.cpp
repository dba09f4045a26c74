// SPDX-License-Identifier: Apache-2.0
#include "app.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "reduxpll/errors.hpp"
#include "reduxpll/format.hpp"

namespace reduxpll::app {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

fs::path dataset_file(const fs::path& p) {
  if (fs::is_directory(p)) return p / "data.csv";
  return p;
}

struct Stats {
  double mean = 0.0;
  double sd = 0.0;
  double min = 0.0;
  double max = 0.0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  return s;
}

std::string metrics_jsonl(const std::vector<EpochMetrics>& log) {
  std::string out;
  for (const auto& m : log) out += to_json_line(m) + "\n";
  return out;
}

RunResult run_seed(const DataSplits& data, const TrainConfig& config, const fs::path& dir,
                   std::size_t checkpoint_every, bool resume) {
  ensure_dir(dir);
  const fs::path ckpt = dir / "checkpoint.json";
  std::optional<Trainer> t;
  if (resume && fs::exists(ckpt)) {
    t.emplace(Trainer::resume(ckpt, data));
    if (config_hash(t->config()) != config_hash(config)) {
      throw ConfigError(ckpt.string() + ": checkpoint was written with a different config");
    }
  } else {
    t.emplace(data, config);
  }
  while (!t->finished()) {
    t->train_epoch();
    if (checkpoint_every != 0 && t->epoch() % checkpoint_every == 0) t->save_checkpoint(ckpt);
  }
  t->save_checkpoint(ckpt);
  write_file(dir / "metrics.jsonl", metrics_jsonl(t->log()));
  return t->fit();
}

std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

std::string alpha_dir_name(double alpha) { return "alpha_" + format_double(alpha); }

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace

int exit_code_for(const std::exception& e) noexcept {
  if (dynamic_cast<const NumericError*>(&e)) return kNumericError;
  if (dynamic_cast<const ConfigError*>(&e)) return kUsage;
  return kDataError;
}

unsigned thread_cap() {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("REDUXPLL_THREADS");
  if (env == nullptr || *env == '\0') return hw;
  const auto v = parse_int(env);
  if (!v || *v < 1) throw ConfigError("REDUXPLL_THREADS must be a positive integer");
  return static_cast<unsigned>(*v);
}

// ---------------------------------------------------------------------------

DatasetManifest cmd_generate(const GenerateOptions& o) {
  if (o.out.empty()) throw ConfigError("generate: --out is required");
  PllDataset clean = gen_gaussian_mixture(o.num_classes, o.dim, o.n, o.separation, o.seed);
  PllDataset ds = corrupt_instance_dependent(clean, o.ambiguity, o.seed);
  validate(ds);
  ensure_dir(o.out);
  const fs::path csv = o.out / "data.csv";
  save_csv(ds, csv);
  DatasetManifest m;
  m.n = ds.size();
  m.num_classes = ds.num_classes;
  m.dim = ds.dim();
  m.ambiguity = o.ambiguity;
  m.separation = o.separation;
  m.seed = o.seed;
  m.checksum = file_checksum(csv);
  write_file(o.out / "manifest.json", manifest_to_json(m));
  return m;
}

// ---------------------------------------------------------------------------

std::string summary_to_json(const TrainSummary& s) {
  ordered_json j;
  j["method"] = s.method;
  j["alpha"] = s.alpha;
  j["config_hash"] = s.config_hash;
  j["dataset_checksum"] = s.dataset_checksum;
  ordered_json runs = ordered_json::array();
  std::vector<std::uint64_t> seeds;
  for (const auto& r : s.runs) {
    seeds.push_back(r.seed);
    const auto& res = r.result;
    ordered_json rj;
    rj["seed"] = r.seed;
    rj["test_accuracy"] = res.test_accuracy;
    rj["best_val_accuracy"] = res.best_val_accuracy;
    rj["best_epoch"] = res.best_epoch;
    rj["epochs_run"] = res.log.size();
    rj["early_stopped"] = res.early_stopped;
    rj["rollback_checks"] = res.rollback_checks;
    rj["trajectory_hash"] = trajectory_hash(res.log);
    if (!res.log.empty() && res.log.back().bayes_consistency) {
      rj["final_bayes_consistency"] = *res.log.back().bayes_consistency;
    } else {
      rj["final_bayes_consistency"] = nullptr;
    }
    runs.push_back(std::move(rj));
  }
  j["seeds"] = seeds;
  j["runs"] = std::move(runs);
  j["mean_test_accuracy"] = s.mean_test_accuracy;
  j["std_test_accuracy"] = s.std_test_accuracy;
  j["min_test_accuracy"] = s.min_test_accuracy;
  j["max_test_accuracy"] = s.max_test_accuracy;
  return j.dump(2) + "\n";
}

TrainSummary cmd_train(const TrainOptions& o) {
  if (o.out.empty()) throw ConfigError("train: --out is required");
  if (o.seeds == 0) throw ConfigError("train: --seeds must be positive");
  const std::string started = utc_now();
  const fs::path csv = dataset_file(o.dataset);
  const PllDataset ds = load_csv(csv);
  const DataSplits data = split(ds, o.split);
  o.config.validate(data.train.size());
  ensure_dir(o.out);

  std::vector<std::uint64_t> seeds(o.seeds);
  std::iota(seeds.begin(), seeds.end(), o.seed_base);

  std::vector<std::optional<RunResult>> results(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < seeds.size();) {
      try {
        TrainConfig cfg = o.config;
        cfg.seed = seeds[k];
        results[k] = run_seed(data, cfg, o.out / seed_dir_name(seeds[k]), o.checkpoint_every,
                              o.resume);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const unsigned cap = o.threads ? o.threads : thread_cap();
  const auto n_threads = static_cast<unsigned>(std::min<std::size_t>(cap, seeds.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  TrainSummary s;
  s.method = std::string(to_string(o.config.method));
  s.alpha = o.config.alpha;
  TrainConfig unseeded = o.config;
  unseeded.seed = 0;
  s.config_hash = config_hash(unseeded);
  s.dataset_checksum = file_checksum(csv);
  std::vector<double> accs;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    accs.push_back(results[k]->test_accuracy);
    s.runs.push_back({seeds[k], std::move(*results[k])});
  }
  const Stats st = stats(accs);
  s.mean_test_accuracy = st.mean;
  s.std_test_accuracy = st.sd;
  s.min_test_accuracy = st.min;
  s.max_test_accuracy = st.max;
  write_file(o.out / "summary.json", summary_to_json(s));

  ordered_json man;
  man["config_hash"] = s.config_hash;
  man["config"] = json::parse(config_to_json(unseeded));
  man["dataset"] = csv.string();
  man["dataset_checksum"] = s.dataset_checksum;
  man["split"] = {{"train", o.split.train}, {"val", o.split.val}, {"test", o.split.test},
                  {"seed", o.split.seed}};
  man["seeds"] = seeds;
  man["method"] = s.method;
  man["output_dir"] = fs::absolute(o.out).string();
  man["started_at"] = started;
  man["finished_at"] = utc_now();
  json artifacts = json::array();
  auto add = [&](const fs::path& rel) {
    artifacts.push_back({{"path", rel.generic_string()}, {"checksum", file_checksum(o.out / rel)}});
  };
  add("summary.json");
  for (auto seed : seeds) {
    add(fs::path(seed_dir_name(seed)) / "metrics.jsonl");
    add(fs::path(seed_dir_name(seed)) / "checkpoint.json");
  }
  man["artifacts"] = std::move(artifacts);
  write_file(o.out / "manifest.json", man.dump(2) + "\n");
  return s;
}

std::vector<std::string> verify_manifest(const fs::path& run_dir) {
  std::vector<std::string> problems;
  const json man = read_json(run_dir / "manifest.json");
  for (const auto& a : man.at("artifacts")) {
    const fs::path p = run_dir / a.at("path").get<std::string>();
    if (!fs::exists(p)) {
      problems.push_back("missing artifact " + p.string());
    } else if (file_checksum(p) != a.at("checksum").get<std::string>()) {
      problems.push_back("checksum mismatch for " + p.string());
    }
  }
  return problems;
}

// ---------------------------------------------------------------------------

SweepResult cmd_sweep_alpha(const SweepOptions& o) {
  if (o.alphas.empty()) throw ConfigError("sweep-alpha: no alpha values given");
  if (o.base.out.empty()) throw ConfigError("sweep-alpha: --out is required");
  ensure_dir(o.base.out);
  SweepResult r;
  for (double a : o.alphas) {
    TrainOptions t = o.base;
    t.config.alpha = a;
    t.out = o.base.out / alpha_dir_name(a);
    const TrainSummary s = cmd_train(t);
    if (!std::isfinite(s.mean_test_accuracy)) {
      throw NumericError("sweep-alpha: non-finite accuracy at alpha " + format_double(a));
    }
    r.rows.push_back({a, s.mean_test_accuracy, s.std_test_accuracy, s.runs.size()});
  }
  for (std::size_t k = 1; k < r.rows.size(); ++k) {
    if (r.rows[k].mean_test_accuracy > r.rows[r.best_row].mean_test_accuracy) r.best_row = k;
  }

  std::ostringstream csv;
  csv << "alpha,mean_test_accuracy,std_test_accuracy,seeds,best\n";
  std::ostringstream md;
  md << "# alpha sweep\n\n| alpha | mean test acc | std | seeds |\n|---|---|---|---|\n";
  for (std::size_t k = 0; k < r.rows.size(); ++k) {
    const auto& row = r.rows[k];
    const bool best = k == r.best_row;
    csv << format_double(row.alpha) << ',' << format_double(row.mean_test_accuracy) << ','
        << format_double(row.std_test_accuracy) << ',' << row.seeds << ',' << (best ? 1 : 0)
        << '\n';
    md << "| " << format_double(row.alpha) << (best ? " **(best)**" : "") << " | "
       << format_double(row.mean_test_accuracy) << " | " << format_double(row.std_test_accuracy)
       << " | " << row.seeds << " |\n";
  }
  md << "\nbest alpha: " << format_double(r.rows[r.best_row].alpha) << '\n';
  write_file(o.base.out / "sweep.csv", csv.str());
  write_file(o.base.out / "sweep.md", md.str());
  return r;
}

// ---------------------------------------------------------------------------

VerifyResult cmd_verify_theory(const VerifyOptions& o) {
  if (o.run.trials == 0) throw ConfigError("verify-theory: --trials must be positive");
  const TheoryScenario s = load_scenario(o.scenario);
  VerifyResult r;
  r.theorem1 = verify_theorem1(s, o.run);
  if (s.tsybakov) r.theorem2 = verify_theorem2(s, o.run);
  r.all_hold = r.theorem1.holds && (!r.theorem2 || r.theorem2->holds);

  ordered_json j;
  j["scenario"] = o.scenario.string();
  j["trials"] = o.run.trials;
  j["seed"] = o.run.seed;
  j["theorem1"] = ordered_json::parse(to_json(r.theorem1));
  j["theorem2"] = r.theorem2 ? ordered_json::parse(to_json(*r.theorem2)) : ordered_json(nullptr);
  j["all_hold"] = r.all_hold;
  r.json = j.dump(2) + "\n";
  if (o.out) {
    if (o.out->has_parent_path()) ensure_dir(o.out->parent_path());
    write_file(*o.out, r.json);
  }
  return r;
}

// ---------------------------------------------------------------------------

std::vector<EpochMetrics> read_metrics(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing metrics file: " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics file: " + path.string());
  std::vector<EpochMetrics> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    out.push_back(metrics_from_json(line, path.string() + ":" + std::to_string(lineno)));
  }
  return out;
}

std::vector<fs::path> cmd_report(const ReportOptions& o) {
  if (o.runs.empty()) throw ConfigError("report: no run directories given");
  if (o.out.empty()) throw ConfigError("report: --out is required");

  struct RunData {
    std::string name;
    json summary;
    std::vector<std::vector<EpochMetrics>> logs;
  };
  std::vector<RunData> runs;
  std::map<std::string, int> used;
  for (const auto& dir : o.runs) {
    RunData r;
    const fs::path summary = dir / "summary.json";
    if (!fs::exists(summary)) throw IoError("missing run summary: " + summary.string());
    r.summary = read_json(summary);
    std::string base = fs::absolute(dir).lexically_normal().filename().string();
    if (base.empty()) base = fs::absolute(dir).lexically_normal().parent_path().filename().string();
    if (base.empty()) base = "run";
    const int k = used[base]++;
    r.name = k == 0 ? base : base + "_" + std::to_string(k + 1);
    for (const auto& seed : r.summary.at("seeds")) {
      r.logs.push_back(
          read_metrics(dir / seed_dir_name(seed.get<std::uint64_t>()) / "metrics.jsonl"));
    }
    runs.push_back(std::move(r));
  }

  ensure_dir(o.out / "series");
  std::vector<fs::path> written;
  std::ostringstream csv;
  csv << "run,method,alpha,seeds,mean_test_accuracy,std_test_accuracy,series_bayes_consistency,"
         "series_pseudo_label_drift\n";
  std::ostringstream md;
  md << "# reduxpll report\n\n"
     << "| run | method | alpha | seeds | mean test acc | std |\n|---|---|---|---|---|---|\n";

  std::vector<bool> has_bc;
  for (const auto& r : runs) {
    std::size_t epochs = 0;
    for (const auto& log : r.logs) epochs = std::max(epochs, log.size());
    std::ostringstream bc, dr;
    bc << "epoch,value\n";
    dr << "epoch,value\n";
    bool any_bc = false;
    for (std::size_t e = 0; e < epochs; ++e) {
      double bc_sum = 0.0, dr_sum = 0.0;
      std::size_t bc_n = 0, dr_n = 0;
      for (const auto& log : r.logs) {
        if (e >= log.size()) continue;
        dr_sum += log[e].pseudo_label_drift;
        ++dr_n;
        if (log[e].bayes_consistency) {
          bc_sum += *log[e].bayes_consistency;
          ++bc_n;
        }
      }
      if (bc_n) {
        any_bc = true;
        bc << e + 1 << ',' << format_double(bc_sum / static_cast<double>(bc_n)) << '\n';
      }
      dr << e + 1 << ',' << format_double(dr_sum / static_cast<double>(dr_n)) << '\n';
    }
    const fs::path bc_path = fs::path("series") / (r.name + "_bayes_consistency.csv");
    const fs::path dr_path = fs::path("series") / (r.name + "_pseudo_label_drift.csv");
    write_file(o.out / dr_path, dr.str());
    written.push_back(o.out / dr_path);
    has_bc.push_back(any_bc);
    if (any_bc) {
      write_file(o.out / bc_path, bc.str());
      written.push_back(o.out / bc_path);
    }

    const auto& s = r.summary;
    const std::string method = s.at("method").get<std::string>();
    const std::string alpha = format_double(s.at("alpha").get<double>());
    const std::string mean = format_double(s.at("mean_test_accuracy").get<double>());
    const std::string sd = format_double(s.at("std_test_accuracy").get<double>());
    csv << r.name << ',' << method << ',' << alpha << ',' << r.logs.size() << ',' << mean << ','
        << sd << ',' << (any_bc ? bc_path.generic_string() : "") << ','
        << dr_path.generic_string() << '\n';
    md << "| " << r.name << " | " << method << " | " << alpha << " | " << r.logs.size() << " | "
       << mean << " | " << sd << " |\n";
  }

  md << "\n## Series\n\nMean over seeds per epoch, as `epoch,value` CSV:\n\n";
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto& r = runs[k];
    md << "- " << r.name << ": `series/" << r.name << "_pseudo_label_drift.csv`";
    if (has_bc[k]) {
      md << ", `series/" << r.name << "_bayes_consistency.csv`";
    }
    md << '\n';
  }
  write_file(o.out / "report.csv", csv.str());
  write_file(o.out / "report.md", md.str());
  written.push_back(o.out / "report.csv");
  written.push_back(o.out / "report.md");
  return written;
}

}  // namespace reduxpll::app
