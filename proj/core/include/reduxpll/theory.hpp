// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "reduxpll/label_set.hpp"
#include "reduxpll/matrix.hpp"

namespace reduxpll {

struct TsybakovConstants {
  double C = 1.0;
  double lambda = 1.0;
  double t0 = 1.0;
};

struct ScenarioPoint {
  Vector x;  ///< informational only
  Vector eta;
  double weight = 0.0;
  /// Candidate set used to restrict argmax f; the full label space when absent.
  std::optional<LabelSet> candidates;
};

/// Finite instance space with exact posteriors and the budgets of the
/// disturbing-label analysis.
struct TheoryScenario {
  std::vector<ScenarioPoint> points;
  LabelSet excluded;  ///< labels the auxiliary model is trained without
  double tau = 0.0;
  double epsilon = 0.0;
  double epsilon_prime = 0.0;
  std::optional<TsybakovConstants> tsybakov;

  int num_classes() const;
};

/// Throws ScenarioError (or ContractViolation for out-of-range budgets) on the
/// first broken invariant: weights on the simplex, eta rows on the simplex,
/// excluded set nonempty and proper, epsilon in (0,1), tau in (0, min(1, 2 eps)],
/// epsilon' inside the hypothesis bound whenever J is nonempty.
void validate(const TheoryScenario& s);

TheoryScenario scenario_from_json(const std::string& text, const std::string& source_name);
TheoryScenario load_scenario(const std::filesystem::path& path);
std::string scenario_to_json(const TheoryScenario& s);

/// eta renormalized off the excluded labels; zero on them. ScenarioError when
/// the excluded mass is 1.
Vector reduced_posterior(std::span<const double> eta, LabelSet excluded);

/// Whether j is a (tau, f, eps)-disturbing incorrect label at this point: f is
/// within eps of eta on every coordinate and eta's Bayes label beats j by at
/// most tau. ContractViolation when tau or eps is out of range or j is the
/// Bayes label.
bool is_disturbing(std::span<const double> eta, std::span<const double> f_out, int j,
                   double tau, double epsilon);

/// Membership of point i in J(x, Ybar), with the predictor's outputs `f_out`
/// (defaults to eta itself, which is always inside the eps-ball).
bool membership_J(const TheoryScenario& s, std::size_t i);
bool membership_J(const TheoryScenario& s, std::size_t i, std::span<const double> f_out);

/// Labels named in the analysis of one point. b is absent when every label is
/// the Bayes label or excluded.
struct PointLabels {
  int bayes = 0;  ///< eta*
  int second = 0;  ///< s: runner-up over all labels
  int a = 0;  ///< most probable excluded label
  std::optional<int> b;  ///< most probable label outside {eta*} and Ybar
};
PointLabels point_labels(std::span<const double> eta, LabelSet excluded);

/// min over J of (eta* - eta^b)(eta* - eta^a) / (4 eps (1 - sum_Ybar eta)),
/// with eta^b = 0 when b does not exist. ScenarioError when J is empty.
double epsilon_prime_bound(const TheoryScenario& s);

/// Uniform draw from the coordinate box of `radius` around `center` on the
/// active labels (zero elsewhere), projected to the simplex by clamping to
/// [0, 1] and renormalizing; redrawn until the projection stays in the box.
/// `rejected` counts redraws. radius 0 returns the center restricted to
/// `active`.
Vector sample_in_ball(std::span<const double> center, double radius, LabelSet active,
                      std::mt19937_64& rng, std::size_t* rejected = nullptr);

struct Theorem1Options {
  std::size_t trials = 100000;
  std::uint64_t seed = 0;
  /// Sampling radius for f; the scenario's epsilon when absent. 0 pins f = eta.
  std::optional<double> f_radius;
  /// Sampling radius for phi; the scenario's epsilon' when absent. 0 pins phi = eta'.
  std::optional<double> phi_radius;
  /// 0 = hardware concurrency. Results do not depend on it.
  unsigned threads = 0;
};

struct Theorem1Report {
  double lhs = 0.0;  ///< P(argmax_S f = eta* | x in J)
  double rhs = 0.0;  ///< P(argmax phi = eta* | x in J)
  double lhs_se = 0.0;
  double rhs_se = 0.0;
  double combined_se = 0.0;
  /// (rhs - lhs) / combined_se; infinite when the SE is zero and rhs > lhs.
  double gap_in_se = 0.0;
  bool holds = false;  ///< lhs <= rhs + 2 combined_se
  std::size_t trials = 0;
  std::size_t rejected_f = 0;  ///< resampled draws that left the eps-ball
  std::size_t rejected_phi = 0;
  std::size_t j_size = 0;
  double j_mass = 0.0;
  double epsilon_prime_bound = 0.0;
};

/// Monte-Carlo comparison of the two conditional consistency probabilities.
/// Each trial draws x from J (by weight), f uniformly from the eps-ball around
/// eta and phi from the eps'-ball around eta' (zero on the excluded labels);
/// both are clamped to [0,1], renormalized, and redrawn if they left their ball.
/// Trial t uses its own generator, so the report depends only on the seed.
Theorem1Report verify_theorem1(const TheoryScenario& s, const Theorem1Options& opts = {});

struct Theorem2Report {
  double empirical_consistency = 0.0;  ///< P(argmax phi = eta* | x in J)
  double standard_error = 0.0;
  double bound = 0.0;  ///< worst case over J of 1 - C (4 eps eps' (1-eta^s)/(eta*-eta^b))^lambda
  std::size_t worst_point = 0;
  bool holds = false;  ///< empirical_consistency >= bound
  std::size_t trials = 0;
  TsybakovConstants constants;
};

/// Checks the Tsybakov condition on the J points (weights renormalized over J)
/// first and throws AssumptionViolation if it fails. `constants` overrides the
/// scenario's own; one of them must be present.
Theorem2Report verify_theorem2(const TheoryScenario& s, const Theorem1Options& opts = {},
                               std::optional<TsybakovConstants> constants = std::nullopt);

/// Margin CDF P(eta* - eta^s <= t) against C t^lambda on the grid
/// t = k t0 / 100, k = 1..100. Weights are used as given.
bool check_tsybakov(std::span<const Vector> etas, std::span<const double> weights, double C,
                    double lambda, double t0);
bool check_tsybakov(const TheoryScenario& s, double C, double lambda, double t0);

std::string to_json(const Theorem1Report& r);
std::string to_json(const Theorem2Report& r);

}  // namespace reduxpll
