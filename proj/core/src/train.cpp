// SPDX-License-Identifier: Apache-2.0
#include "reduxpll/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "reduxpll/errors.hpp"
#include "reduxpll/format.hpp"
#include "reduxpll/hypergradient.hpp"
#include "reduxpll/random.hpp"

namespace reduxpll {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Sub-streams of the run seed. Keeping them apart makes the frozen-meta and
// alpha = 1 runs replay the baselines exactly.
constexpr std::uint64_t kStreamTheta = 1;
constexpr std::uint64_t kStreamOmega = 2;
constexpr std::uint64_t kStreamGamma = 3;
constexpr std::uint64_t kStreamShuffle = 4;
constexpr std::uint64_t kStreamVal = 5;

constexpr int kCheckpointVersion = 1;

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

std::string param_summary(const MlpParams& p) {
  const Vector flat = p.flatten();
  std::size_t bad = 0;
  double max_abs = 0.0;
  for (double x : flat) {
    if (!std::isfinite(x)) {
      ++bad;
    } else {
      max_abs = std::max(max_abs, std::abs(x));
    }
  }
  return std::to_string(flat.size()) + " params, " + std::to_string(bad) +
         " non-finite, max |finite| " + format_double(max_abs);
}

Matrix one_hot(std::span<const int> labels, int num_classes) {
  Matrix out(labels.size(), static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

std::vector<std::size_t> with_io(std::size_t in, const std::vector<std::size_t>& hidden,
                                 std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

// ---- serialization helpers ----

json params_to_json(const MlpParams& p) {
  return json{{"widths", p.widths()},
              {"activation", std::string(to_string(p.hidden_activation()))},
              {"values", p.flatten()}};
}

MlpParams params_from_json(const json& j) {
  const auto widths = j.at("widths").get<std::vector<std::size_t>>();
  const auto act = activation_from_string(j.at("activation").get<std::string>());
  const auto values = j.at("values").get<Vector>();
  const MlpParams shape = MlpParams::zeros(widths, act);
  if (values.size() != shape.num_params()) {
    throw ConfigError("checkpoint: parameter count does not match widths");
  }
  return shape.with_flat(values);
}

json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()},
              {"values", Vector(m.flat().begin(), m.flat().end())}};
}

Matrix matrix_from_json(const json& j) {
  return Matrix::from_flat(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                           j.at("values").get<Vector>());
}

json bundle_to_json(const ModelBundle& b) {
  json omega = json::array();
  for (const auto& o : b.omega) omega.push_back(params_to_json(o));
  return json{{"theta", params_to_json(b.theta)},
              {"omega", std::move(omega)},
              {"gamma", params_to_json(b.gamma)}};
}

ModelBundle bundle_from_json(const json& j) {
  ModelBundle b;
  b.theta = params_from_json(j.at("theta"));
  for (const auto& o : j.at("omega")) b.omega.push_back(params_from_json(o));
  b.gamma = params_from_json(j.at("gamma"));
  return b;
}

template <class Rng>
std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

template <class Rng>
void set_rng_state(Rng& rng, const std::string& text) {
  std::istringstream is(text);
  is >> rng;
  if (!is) throw ConfigError("checkpoint: corrupt RNG state");
}

std::string data_fingerprint(const DataSplits& d) {
  const std::string text = to_csv(d.train) + "\n" + to_csv(d.val) + "\n" + to_csv(d.test);
  return fnv1a64_hex(text);
}

void require_labelled(const PllDataset& ds, const char* name) {
  if (ds.size() == 0) throw ConfigError(std::string(name) + " split is empty");
  if (!ds.has_labels()) throw DataError(std::string(name) + " split has no true labels");
}

}  // namespace

// ---------------------------------------------------------------------------
// Method / config

std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::kReduxPll: return "reduxpll";
    case Method::kReduxPllUniformW: return "reduxpll-uniform-w";
    case Method::kProden: return "proden";
  }
  return "?";
}

Method method_from_string(std::string_view name) {
  if (name == "reduxpll") return Method::kReduxPll;
  if (name == "reduxpll-uniform-w") return Method::kReduxPllUniformW;
  if (name == "proden") return Method::kProden;
  throw ConfigError("unknown method '" + std::string(name) +
                    "' (expected reduxpll, reduxpll-uniform-w or proden)");
}

void TrainConfig::validate(std::size_t train_size) const {
  auto step = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError(std::string(name) + " must be a finite non-negative step size");
    }
  };
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  step(beta1, "beta1");
  step(beta2, "beta2");
  step(beta3, "beta3");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
  for (auto w : predictor_hidden) {
    if (w == 0) throw ConfigError("predictor hidden widths must be positive");
  }
  for (auto w : meta_hidden) {
    if (w == 0) throw ConfigError("meta-learner hidden widths must be positive");
  }
  if (train_size == 0) throw ConfigError("training split is empty");
  if (batch_size > train_size) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds the " +
                      std::to_string(train_size) + " training instances");
  }
}

std::string config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["method"] = std::string(to_string(c.method));
  j["alpha"] = c.alpha;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["beta3"] = c.beta3;
  j["momentum"] = c.momentum;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["predictor_hidden"] = c.predictor_hidden;
  j["meta_hidden"] = c.meta_hidden;
  j["verify_rollback"] = c.verify_rollback;
  j["check_targets"] = c.check_targets;
  return j.dump();
}

TrainConfig config_from_json(const std::string& text, TrainConfig base,
                             const std::string& source_name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source_name + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(source_name + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    try {
      if (key == "method") base.method = method_from_string(v.get<std::string>());
      else if (key == "alpha") base.alpha = v.get<double>();
      else if (key == "beta1") base.beta1 = v.get<double>();
      else if (key == "beta2") base.beta2 = v.get<double>();
      else if (key == "beta3") base.beta3 = v.get<double>();
      else if (key == "momentum") base.momentum = v.get<double>();
      else if (key == "batch_size") base.batch_size = v.get<std::size_t>();
      else if (key == "epochs") base.epochs = v.get<std::size_t>();
      else if (key == "patience") base.patience = v.get<std::size_t>();
      else if (key == "seed") base.seed = v.get<std::uint64_t>();
      else if (key == "predictor_hidden") base.predictor_hidden = v.get<std::vector<std::size_t>>();
      else if (key == "meta_hidden") base.meta_hidden = v.get<std::vector<std::size_t>>();
      else if (key == "verify_rollback") base.verify_rollback = v.get<bool>();
      else if (key == "check_targets") base.check_targets = v.get<bool>();
      else throw ConfigError(source_name + ": unknown key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError(source_name + ": bad value for '" + key + "': " + e.what());
    }
  }
  return base;
}

std::string config_hash(const TrainConfig& config) { return fnv1a64_hex(config_to_json(config)); }

// ---------------------------------------------------------------------------
// Metrics

std::string to_json_line(const EpochMetrics& m) {
  ordered_json j;
  j["epoch"] = m.epoch;
  j["train_loss"] = m.train_loss;
  j["val_accuracy"] = m.val_accuracy;
  j["test_accuracy"] = m.test_accuracy;
  j["bayes_consistency"] = m.bayes_consistency ? json(*m.bayes_consistency) : json(nullptr);
  j["pseudo_label_drift"] = m.pseudo_label_drift;
  return j.dump();
}

EpochMetrics metrics_from_json(const std::string& line, const std::string& source_name) {
  try {
    const json j = json::parse(line);
    EpochMetrics m;
    m.epoch = j.at("epoch").get<std::size_t>();
    m.train_loss = j.at("train_loss").get<double>();
    m.val_accuracy = j.at("val_accuracy").get<double>();
    m.test_accuracy = j.at("test_accuracy").get<double>();
    if (!j.at("bayes_consistency").is_null()) {
      m.bayes_consistency = j.at("bayes_consistency").get<double>();
    }
    m.pseudo_label_drift = j.at("pseudo_label_drift").get<double>();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(source_name + ": " + e.what());
  }
}

std::string trajectory_hash(const std::vector<EpochMetrics>& log) {
  std::string all;
  for (const auto& m : log) all += to_json_line(m) + "\n";
  return fnv1a64_hex(all);
}

double accuracy(const MlpParams& theta, const PllDataset& ds) {
  if (!ds.has_labels()) throw DataError("accuracy: dataset has no true labels");
  if (ds.size() == 0) return 0.0;
  const Matrix p = predict(theta, ds.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (argmax(p.row(i)) == (*ds.true_labels)[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(DataSplits data, TrainConfig config)
    : data_(std::move(data)), config_(std::move(config)) {
  config_.validate(data_.train.size());
  // Singleton candidate sets leave no label to reduce to; only self-training accepts them.
  validate(data_.train, {.allow_supervised = config_.method == Method::kProden});
  require_labelled(data_.val, "validation");
  require_labelled(data_.test, "test");
  validate(data_.val, {.allow_supervised = true, .require_labels = true});
  validate(data_.test, {.allow_supervised = true, .require_labels = true});
  const int c = data_.train.num_classes;
  if (data_.val.num_classes != c || data_.test.num_classes != c ||
      data_.val.dim() != data_.train.dim() || data_.test.dim() != data_.train.dim()) {
    throw DataError("train/validation/test splits disagree on dimension or label count");
  }
  init_models();
}

void Trainer::init_models() {
  const std::size_t d = data_.train.dim();
  const auto c = static_cast<std::size_t>(data_.train.num_classes);

  auto theta_rng = stream_rng(config_.seed, kStreamTheta);
  model_.theta = MlpParams::glorot(with_io(d, config_.predictor_hidden, c), theta_rng);

  const std::size_t pen = config_.predictor_hidden.empty() ? d : config_.predictor_hidden.back();
  auto omega_rng = stream_rng(config_.seed, kStreamOmega);
  model_.omega.clear();
  for (std::size_t j = 0; j < c; ++j) {
    const std::vector<std::size_t> widths{pen, c};
    model_.omega.push_back(MlpParams::glorot(widths, omega_rng));
  }

  // Zero output layer: w starts exactly uniform. The uniform-w ablation keeps it there.
  auto gamma_rng = stream_rng(config_.seed, kStreamGamma);
  model_.gamma = MlpParams::glorot(with_io(d, config_.meta_hidden, c), gamma_rng);
  auto& out = model_.gamma.layers().back();
  std::fill(out.weight.flat().begin(), out.weight.flat().end(), 0.0);
  std::fill(out.bias.begin(), out.bias.end(), 0.0);

  theta_opt_ = MomentumSgd(model_.theta, config_.momentum);
  omega_opt_.clear();
  for (const auto& o : model_.omega) omega_opt_.emplace_back(o, config_.momentum);

  const double alpha = config_.method == Method::kProden ? 1.0 : config_.alpha;
  state_ = PseudoLabelState(data_.train.candidates, data_.train.num_classes, alpha);
  prev_q_ = state_.q;
  val_targets_ = one_hot(*data_.val.true_labels, data_.val.num_classes);
  shuffle_rng_ = stream_rng(config_.seed, kStreamShuffle);
  val_rng_ = stream_rng(config_.seed, kStreamVal);
}

void Trainer::check_target_rows(std::span<const std::size_t> batch, const Matrix& targets,
                                const std::string& context) const {
  if (!config_.check_targets) return;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const LabelSet s = data_.train.candidates[batch[r]];
    const auto row = targets.row(r);
    double sum = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      const bool in = s.contains(static_cast<int>(j));
      if (!(row[j] >= -kSimplexTolerance) || (!in && std::abs(row[j]) > kSimplexTolerance)) {
        throw ContractViolation(context + ": target for instance " + std::to_string(batch[r]) +
                                " leaves its candidate set {" + s.to_string() + "}");
      }
      sum += row[j];
    }
    if (!(std::abs(sum - 1.0) <= kSimplexTolerance)) {
      throw ContractViolation(context + ": target for instance " + std::to_string(batch[r]) +
                              " sums to " + format_double(sum));
    }
  }
}

void Trainer::run_proden_batch(std::span<const std::size_t> batch, const Matrix& x,
                               const std::string& context, double& loss_sum) {
  auto fwd = forward(model_.theta, x);
  const Matrix targets = select_rows(state_.mu, batch);
  check_target_rows(batch, targets, context);
  auto ce = backward_ce(std::move(fwd.tape), fwd.probs, targets);
  if (!std::isfinite(ce.loss)) {
    throw NumericError(context + ": non-finite loss; theta: " + param_summary(model_.theta));
  }
  model_.theta = theta_opt_.step(model_.theta, ce.grad, config_.beta2);
  require_finite(model_.theta.flatten(), context + ": theta after step");
  const Matrix p = predict(model_.theta, x);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const std::size_t i = batch[r];
    const Vector mu = basic_pseudo(p.row(r), data_.train.candidates[i]);
    std::copy(mu.begin(), mu.end(), state_.mu.row(i).begin());
    state_.refresh_q(i);
  }
  loss_sum += ce.loss;
}

void Trainer::run_batch(std::span<const std::size_t> batch, std::size_t batch_no,
                        double& loss_sum) {
  const std::string context =
      "epoch " + std::to_string(epoch_ + 1) + " batch " + std::to_string(batch_no);
  const PllDataset& train = data_.train;
  const Matrix x = select_rows(train.features, batch);
  if (config_.method == Method::kProden) {
    run_proden_batch(batch, x, context, loss_sum);
    return;
  }

  const std::size_t m = batch.size();
  const auto c = static_cast<std::size_t>(train.num_classes);
  auto fwd = forward(model_.theta, x);
  const Matrix z = fwd.tape.penultimate();

  // Branches: fit phi_j(z) to the stored reduction rows, then rebuild U.
  for (std::size_t j = 0; j < c; ++j) {
    Matrix t(m, c);
    for (std::size_t r = 0; r < m; ++r) {
      const auto src = state_.reduction[batch[r]].row(j);
      std::copy(src.begin(), src.end(), t.row(r).begin());
    }
    auto bf = forward(model_.omega[j], z);
    auto ce = backward_ce(std::move(bf.tape), bf.probs, t);
    if (!std::isfinite(ce.loss)) {
      throw NumericError(context + ": non-finite auxiliary loss for branch " +
                         std::to_string(j) + "; " + param_summary(model_.omega[j]));
    }
    model_.omega[j] = omega_opt_[j].step(model_.omega[j], ce.grad, config_.beta1);
  }
  for (std::size_t j = 0; j < c; ++j) {
    const Matrix phi = predict(model_.omega[j], z);
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t i = batch[r];
      const Vector row = reduction_row(phi.row(r), train.candidates[i], static_cast<int>(j));
      std::copy(row.begin(), row.end(), state_.reduction[i].row(j).begin());
    }
  }
  std::vector<Matrix> u_batch;
  u_batch.reserve(m);
  for (std::size_t i : batch) u_batch.push_back(state_.reduction[i]);

  if (config_.method == Method::kReduxPll) {
    const Vector snapshot = model_.theta.flatten();
    std::vector<std::size_t> vidx(m);
    std::uniform_int_distribution<std::size_t> pick(0, data_.val.size() - 1);
    for (auto& k : vidx) k = pick(val_rng_);
    const Matrix xv = select_rows(data_.val.features, vidx);
    const Matrix yv = select_rows(val_targets_, vidx);

    auto hg = hypergradient(model_.theta, model_.gamma, x, xv, yv, config_.beta2,
                            make_reduction_label_map(x, u_batch), context);
    MlpParams saved = std::move(model_.theta);
    model_.theta = std::move(hg.trial_theta);
    model_.gamma = sgd_step(model_.gamma, hg.grad, config_.beta3);
    require_finite(model_.gamma.flatten(), context + ": gamma after meta step");
    model_.theta = std::move(saved);
    if (config_.verify_rollback) {
      if (!bit_equal(model_.theta.flatten(), snapshot)) {
        throw ContractViolation(context + ": predictor was not restored after the trial step");
      }
      ++rollback_checks_;
    }
  }

  const Matrix w = predict(model_.gamma, x);
  const Matrix v = reduction_pseudo_batch(w, u_batch);
  Matrix q(m, c);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t i = batch[r];
    std::copy(w.row(r).begin(), w.row(r).end(), state_.w.row(i).begin());
    std::copy(v.row(r).begin(), v.row(r).end(), state_.v.row(i).begin());
    const Vector qi = combine(state_.mu.row(i), v.row(r), state_.alpha());
    std::copy(qi.begin(), qi.end(), q.row(r).begin());
  }
  check_target_rows(batch, q, context);

  // theta is unchanged since the batch began, so the first tape is still valid.
  auto ce = backward_ce(std::move(fwd.tape), fwd.probs, q);
  if (!std::isfinite(ce.loss)) {
    throw NumericError(context + ": non-finite loss; theta: " + param_summary(model_.theta));
  }
  model_.theta = theta_opt_.step(model_.theta, ce.grad, config_.beta2);
  require_finite(model_.theta.flatten(), context + ": theta after step");

  const Matrix p = predict(model_.theta, x);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t i = batch[r];
    const Vector mu = basic_pseudo(p.row(r), train.candidates[i]);
    std::copy(mu.begin(), mu.end(), state_.mu.row(i).begin());
    state_.refresh_q(i);
  }
  loss_sum += ce.loss;
}

EpochMetrics Trainer::train_epoch() {
  const std::size_t n = data_.train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), shuffle_rng_);

  const std::size_t m = config_.batch_size;
  double loss_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < n; start += m, ++batches) {
    const std::span<const std::size_t> batch(order.data() + start, std::min(m, n - start));
    run_batch(batch, batches + 1, loss_sum);
  }
  ++epoch_;

  if (config_.check_targets) state_.check_invariants(data_.train.candidates);

  EpochMetrics out;
  out.epoch = epoch_;
  out.train_loss = loss_sum / static_cast<double>(batches);
  out.val_accuracy = accuracy(model_.theta, data_.val);
  out.test_accuracy = accuracy(model_.theta, data_.test);
  if (data_.train.posterior) {
    std::size_t agree = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (argmax(state_.q.row(i)) == argmax(data_.train.posterior->row(i))) ++agree;
    }
    out.bayes_consistency = static_cast<double>(agree) / static_cast<double>(n);
  }
  double drift = 0.0;
  for (std::size_t k = 0; k < state_.q.size(); ++k) {
    drift += std::abs(state_.q.flat()[k] - prev_q_.flat()[k]);
  }
  out.pseudo_label_drift = drift / static_cast<double>(n);
  prev_q_ = state_.q;

  record_epoch(out);
  return out;
}

void Trainer::record_epoch(const EpochMetrics& m) {
  log_.push_back(m);
  if (m.val_accuracy > best_val_) {
    best_val_ = m.val_accuracy;
    best_test_ = m.test_accuracy;
    best_epoch_ = m.epoch;
    best_ = model_;
    stagnant_ = 0;
  } else {
    ++stagnant_;
  }
}

bool Trainer::finished() const noexcept {
  return epoch_ >= config_.epochs || stagnant_ >= config_.patience;
}

RunResult Trainer::fit() {
  while (!finished()) train_epoch();
  RunResult r;
  r.best = best_;
  r.best_epoch = best_epoch_;
  r.best_val_accuracy = best_val_;
  r.test_accuracy = best_test_;
  r.log = log_;
  r.early_stopped = epoch_ < config_.epochs;
  r.rollback_checks = rollback_checks_;
  return r;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  ordered_json j;
  j["version"] = kCheckpointVersion;
  j["config"] = json::parse(config_to_json(config_));
  j["config_hash"] = config_hash(config_);
  j["data_fingerprint"] = data_fingerprint(data_);
  j["epoch"] = epoch_;
  j["rollback_checks"] = rollback_checks_;
  j["model"] = bundle_to_json(model_);
  j["theta_velocity"] = theta_opt_.velocity().flatten();
  json ov = json::array();
  for (const auto& o : omega_opt_) ov.push_back(o.velocity().flatten());
  j["omega_velocity"] = std::move(ov);
  j["mu"] = matrix_to_json(state_.mu);
  j["w"] = matrix_to_json(state_.w);
  j["v"] = matrix_to_json(state_.v);
  j["q"] = matrix_to_json(state_.q);
  json u = json::array();
  for (const auto& m : state_.reduction) u.push_back(matrix_to_json(m));
  j["reduction"] = std::move(u);
  j["prev_q"] = matrix_to_json(prev_q_);
  j["rng_shuffle"] = rng_state(shuffle_rng_);
  j["rng_val"] = rng_state(val_rng_);
  json log = json::array();
  for (const auto& m : log_) log.push_back(json::parse(to_json_line(m)));
  j["log"] = std::move(log);
  j["best"] = bundle_to_json(best_);
  j["best_epoch"] = best_epoch_;
  j["best_val"] = best_val_;
  j["best_test"] = best_test_;
  j["stagnant"] = stagnant_;
  write_file(path, j.dump());
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, DataSplits data) {
  const std::string text = read_file(checkpoint);
  const std::string where = checkpoint.string();
  try {
    const json j = json::parse(text);
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ConfigError(where + ": unsupported checkpoint version");
    }
    const TrainConfig config = config_from_json(j.at("config").dump(), {}, where);
    if (config_hash(config) != j.at("config_hash").get<std::string>()) {
      throw ConfigError(where + ": config hash mismatch");
    }
    if (data_fingerprint(data) != j.at("data_fingerprint").get<std::string>()) {
      throw ConfigError(where + ": checkpoint was written for different data");
    }
    Trainer t(std::move(data), config);
    t.epoch_ = j.at("epoch").get<std::size_t>();
    t.rollback_checks_ = j.at("rollback_checks").get<std::size_t>();
    t.model_ = bundle_from_json(j.at("model"));
    if (t.model_.omega.size() != t.omega_opt_.size()) {
      throw ConfigError(where + ": branch count mismatch");
    }
    t.theta_opt_.set_velocity(t.model_.theta.with_flat(j.at("theta_velocity").get<Vector>()));
    const auto& ov = j.at("omega_velocity");
    for (std::size_t k = 0; k < t.omega_opt_.size(); ++k) {
      t.omega_opt_[k].set_velocity(t.model_.omega[k].with_flat(ov.at(k).get<Vector>()));
    }
    t.state_.mu = matrix_from_json(j.at("mu"));
    t.state_.w = matrix_from_json(j.at("w"));
    t.state_.v = matrix_from_json(j.at("v"));
    t.state_.q = matrix_from_json(j.at("q"));
    const auto& u = j.at("reduction");
    if (u.size() != t.state_.reduction.size()) throw ConfigError(where + ": reduction count");
    for (std::size_t i = 0; i < u.size(); ++i) t.state_.reduction[i] = matrix_from_json(u[i]);
    t.prev_q_ = matrix_from_json(j.at("prev_q"));
    set_rng_state(t.shuffle_rng_, j.at("rng_shuffle").get<std::string>());
    set_rng_state(t.val_rng_, j.at("rng_val").get<std::string>());
    t.log_.clear();
    for (const auto& m : j.at("log")) t.log_.push_back(metrics_from_json(m.dump(), where));
    t.best_ = bundle_from_json(j.at("best"));
    t.best_epoch_ = j.at("best_epoch").get<std::size_t>();
    t.best_val_ = j.at("best_val").get<double>();
    t.best_test_ = j.at("best_test").get<double>();
    t.stagnant_ = j.at("stagnant").get<std::size_t>();
    t.state_.check_invariants(t.data_.train.candidates);
    return t;
  } catch (const json::exception& e) {
    throw ConfigError(where + ": malformed checkpoint: " + e.what());
  }
}

RunResult fit(const DataSplits& data, const TrainConfig& config) {
  Trainer t(data, config);
  return t.fit();
}

RunResult train_proden(const DataSplits& data, TrainConfig config) {
  config.method = Method::kProden;
  return fit(data, config);
}

}  // namespace reduxpll
