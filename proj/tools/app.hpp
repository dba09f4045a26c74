// SPDX-License-Identifier: Apache-2.0
// Command implementations behind the reduxpll executable.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "reduxpll/dataset.hpp"
#include "reduxpll/theory.hpp"
#include "reduxpll/train.hpp"

namespace reduxpll::app {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

/// Maps an exception from the library to the CLI exit code.
int exit_code_for(const std::exception& e) noexcept;

/// Parallel seed cap: REDUXPLL_THREADS when set, otherwise hardware
/// concurrency. ConfigError for a malformed value.
unsigned thread_cap();

struct GenerateOptions {
  int num_classes = 5;
  int dim = 2;
  std::size_t n = 2000;
  double separation = 2.5;
  double ambiguity = 0.5;
  std::uint64_t seed = 0;
  fs::path out;
};

/// Writes <out>/data.csv and <out>/manifest.json.
DatasetManifest cmd_generate(const GenerateOptions& opts);

struct TrainOptions {
  fs::path dataset;  ///< CSV file, or a directory holding data.csv
  TrainConfig config;
  std::size_t seeds = 5;
  std::uint64_t seed_base = 0;
  SplitSpec split;
  fs::path out;
  std::size_t checkpoint_every = 10;
  bool resume = false;
  unsigned threads = 0;  ///< 0 = thread_cap()
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  RunResult result;
};

struct TrainSummary {
  std::string method;
  double alpha = 0.0;
  std::string config_hash;
  std::string dataset_checksum;
  std::vector<SeedOutcome> runs;
  double mean_test_accuracy = 0.0;
  double std_test_accuracy = 0.0;  ///< sample standard deviation
  double min_test_accuracy = 0.0;
  double max_test_accuracy = 0.0;
};

/// Runs fit once per seed (seed_base + k) on a fixed split and writes
///   <out>/seed_<s>/metrics.jsonl, <out>/seed_<s>/checkpoint.json,
///   <out>/summary.json, <out>/manifest.json.
TrainSummary cmd_train(const TrainOptions& opts);

std::string summary_to_json(const TrainSummary& s);

struct SweepOptions {
  TrainOptions base;  ///< `out` is the sweep directory; each alpha gets a subdirectory
  std::vector<double> alphas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
};

struct SweepRow {
  double alpha = 0.0;
  double mean_test_accuracy = 0.0;
  double std_test_accuracy = 0.0;
  std::size_t seeds = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::size_t best_row = 0;  ///< argmax of mean test accuracy, first on ties
};

/// Writes <out>/sweep.csv (one row per alpha, best flagged) and <out>/sweep.md.
SweepResult cmd_sweep_alpha(const SweepOptions& opts);

struct VerifyOptions {
  fs::path scenario;
  Theorem1Options run;
  std::optional<fs::path> out;
};

struct VerifyResult {
  Theorem1Report theorem1;
  std::optional<Theorem2Report> theorem2;  ///< absent without Tsybakov constants
  bool all_hold = false;
  std::string json;
};

VerifyResult cmd_verify_theory(const VerifyOptions& opts);

struct ReportOptions {
  std::vector<fs::path> runs;
  fs::path out;
};

/// Writes <out>/report.md, <out>/report.csv and per-run CSV series under
/// <out>/series/ (epoch, value) for bayes_consistency and pseudo_label_drift,
/// averaged over the run's seeds. IoError naming the path when a metrics file
/// is missing.
std::vector<fs::path> cmd_report(const ReportOptions& opts);

/// Problems with a run manifest: missing artifacts or checksum mismatches.
std::vector<std::string> verify_manifest(const fs::path& run_dir);

/// Reads a metrics JSONL file.
std::vector<EpochMetrics> read_metrics(const fs::path& path);

}  // namespace reduxpll::app
