// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "reduxpll/dataset.hpp"
#include "reduxpll/mlp.hpp"
#include "reduxpll/pseudo_label.hpp"

namespace reduxpll {

enum class Method {
  kReduxPll,          ///< meta-learned branch weights
  kReduxPllUniformW,  ///< ablation: w fixed uniform, no meta update
  kProden,            ///< self-training on mu only
};

std::string_view to_string(Method m) noexcept;
/// Accepts "reduxpll", "reduxpll-uniform-w", "proden"; ConfigError otherwise.
Method method_from_string(std::string_view name);

struct TrainConfig {
  Method method = Method::kReduxPll;
  double alpha = kDefaultAlpha;
  double beta1 = 0.05;  ///< auxiliary branches
  double beta2 = 0.05;  ///< predictor (trial and committed steps)
  double beta3 = 0.01;  ///< meta-learner
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  std::size_t patience = 50;
  std::uint64_t seed = 0;
  std::vector<std::size_t> predictor_hidden{32, 32};
  std::vector<std::size_t> meta_hidden{32, 32};
  /// Assert bit-exact rollback of the predictor after every meta step.
  bool verify_rollback = true;
  /// Assert pseudo-label support/normalization on every target batch.
  bool check_targets = true;

  /// Throws ConfigError. Step sizes may be zero (frozen), never negative.
  void validate(std::size_t train_size) const;
};

std::string config_to_json(const TrainConfig& config);
/// Fields missing from `text` keep their value from `base`.
TrainConfig config_from_json(const std::string& text, TrainConfig base = {},
                             const std::string& source_name = "<config>");
/// fnv1a64 of the canonical JSON form.
std::string config_hash(const TrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  /// Fraction of training instances whose pseudo-label argmax equals the
  /// Bayes label; present only when the training set carries posteriors.
  std::optional<double> bayes_consistency;
  /// Mean L1 change of q between consecutive epochs.
  double pseudo_label_drift = 0.0;
};

std::string to_json_line(const EpochMetrics& m);
EpochMetrics metrics_from_json(const std::string& line, const std::string& source_name);

struct ModelBundle {
  MlpParams theta;               ///< predictor f
  std::vector<MlpParams> omega;  ///< one auxiliary branch per label
  MlpParams gamma;               ///< meta-learner g

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

struct RunResult {
  ModelBundle best;  ///< parameters from the best-validation epoch
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  double test_accuracy = 0.0;  ///< at the best-validation epoch
  std::vector<EpochMetrics> log;
  bool early_stopped = false;
  std::size_t rollback_checks = 0;
};

/// Classification accuracy of `theta` on a labelled dataset.
double accuracy(const MlpParams& theta, const PllDataset& ds);

/// Drives one training run. Each mini-batch of the reduction method runs:
///  1. read the stored reduction rows U_i (targets for the branches);
///  2. one momentum step per branch on L_aux;
///  3. recompute U_i from the updated branches, w = g(x), v = w U;
///  4. snapshot theta and form the trial step theta - beta2 * grad L(theta, v);
///  5. update gamma with the exact hypergradient on a validation mini-batch;
///  6. recompute w, v and q = alpha mu + (1 - alpha) v;
///  7. restore theta and take the committed momentum step on q, then refresh mu.
class Trainer {
 public:
  Trainer(DataSplits data, TrainConfig config);

  /// Restores a run saved by save_checkpoint. Throws ConfigError when the data
  /// does not match the checkpoint.
  static Trainer resume(const std::filesystem::path& checkpoint, DataSplits data);

  EpochMetrics train_epoch();

  /// Runs epochs until the budget is spent or validation accuracy has not
  /// improved for `patience` epochs.
  RunResult fit();

  bool finished() const noexcept;
  std::size_t epoch() const noexcept { return epoch_; }
  const TrainConfig& config() const noexcept { return config_; }
  const ModelBundle& model() const noexcept { return model_; }
  const PseudoLabelState& state() const noexcept { return state_; }
  const std::vector<EpochMetrics>& log() const noexcept { return log_; }
  std::size_t rollback_checks() const noexcept { return rollback_checks_; }

  void save_checkpoint(const std::filesystem::path& path) const;

 private:
  Trainer() = default;
  void init_models();
  void run_batch(std::span<const std::size_t> batch, std::size_t batch_no, double& loss_sum);
  void run_proden_batch(std::span<const std::size_t> batch, const Matrix& x,
                        const std::string& context, double& loss_sum);
  void check_target_rows(std::span<const std::size_t> batch, const Matrix& targets,
                         const std::string& context) const;
  void record_epoch(const EpochMetrics& m);

  DataSplits data_;
  TrainConfig config_;
  ModelBundle model_;
  MomentumSgd theta_opt_;
  std::vector<MomentumSgd> omega_opt_;
  PseudoLabelState state_;
  Matrix prev_q_;
  Matrix val_targets_;
  std::mt19937_64 shuffle_rng_;
  std::mt19937_64 val_rng_;
  std::size_t epoch_ = 0;
  std::size_t rollback_checks_ = 0;
  std::vector<EpochMetrics> log_;
  ModelBundle best_;
  std::size_t best_epoch_ = 0;
  double best_val_ = -1.0;
  double best_test_ = 0.0;
  std::size_t stagnant_ = 0;
};

/// Full run from scratch.
RunResult fit(const DataSplits& data, const TrainConfig& config);

/// Self-training baseline: targets are the stored basic pseudo-labels only.
RunResult train_proden(const DataSplits& data, TrainConfig config);

/// Order-sensitive digest of a metric log, for comparing trajectories.
std::string trajectory_hash(const std::vector<EpochMetrics>& log);

}  // namespace reduxpll
