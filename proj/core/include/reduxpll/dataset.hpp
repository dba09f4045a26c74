// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reduxpll/label_set.hpp"
#include "reduxpll/matrix.hpp"

namespace reduxpll {

/// Partial-label dataset. Row i of `features` is instance x_i; `candidates[i]`
/// is its candidate set S_i. True labels are hidden from training but required
/// on validation/test splits; `posterior` holds the exact class posterior when
/// the data is synthetic.
struct PllDataset {
  Matrix features;
  std::vector<LabelSet> candidates;
  std::optional<std::vector<int>> true_labels;
  std::optional<Matrix> posterior;
  int num_classes = 0;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
  bool has_labels() const noexcept { return true_labels.has_value(); }
};

struct ValidationOptions {
  /// Permit S_i = {y_i}; used for fully supervised sanity runs and for the
  /// generator's output before corruption.
  bool allow_supervised = false;
  bool require_labels = false;
};

/// Human-readable descriptions of every invariant violation, capped at
/// `max_messages` entries (a final entry reports how many were omitted).
std::vector<std::string> validation_errors(const PllDataset& ds, ValidationOptions opts = {},
                                           std::size_t max_messages = 20);

/// Throws DataError listing the offending rows when the dataset is invalid.
void validate(const PllDataset& ds, ValidationOptions opts = {});

/// Rows `indices` of `ds`, in order.
PllDataset subset(const PllDataset& ds, std::span<const std::size_t> indices);

/// Average candidate-set size |S_i|.
double mean_candidate_size(const PllDataset& ds);

// ---------------------------------------------------------------------------
// Synthetic data

/// c equal-weight isotropic unit-variance Gaussians in R^q. Component means sit
/// on a circle of radius `separation` in the first two coordinates (on a line
/// with spacing `separation` when q == 1).
class GaussianMixture {
 public:
  GaussianMixture(int num_classes, int dim, double separation);

  int num_classes() const noexcept { return num_classes_; }
  int dim() const noexcept { return dim_; }
  double separation() const noexcept { return separation_; }
  const Matrix& means() const noexcept { return means_; }

  /// Exact Bayes posterior of the generating mixture at x.
  Vector posterior(std::span<const double> x) const;

 private:
  int num_classes_;
  int dim_;
  double separation_;
  Matrix means_;
};

/// Draws n instances from the mixture with their exact posteriors; each true
/// label is sampled from the posterior at its instance. Candidate sets are the
/// singletons {y_i} until corrupt_instance_dependent is applied.
PllDataset gen_gaussian_mixture(int num_classes, int dim, std::size_t n, double separation,
                                std::uint64_t seed);

/// Instance-dependent candidate generation from the exact posterior. Each
/// incorrect label j joins S_i with probability
///   ambiguity * eta_j(x_i) / max_{k != y_i} eta_k(x_i),
/// then S_i = {y_i} is repaired by adding the most probable incorrect label and
/// S_i = Y by removing the least probable one. Instance i draws from its own
/// stream seeded by (seed, i).
PllDataset corrupt_instance_dependent(const PllDataset& ds, double ambiguity,
                                      std::uint64_t seed);

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;
};

struct DataSplits {
  PllDataset train;
  PllDataset val;
  PllDataset test;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Disjoint split, stratified by true label when labels are present. Val and
/// test sizes are round(n * fraction); train takes the rest.
SplitIndices split_indices(const PllDataset& ds, const SplitSpec& spec);
DataSplits split(const PllDataset& ds, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// CSV

/// Header-driven CSV layout. Feature columns are `<feature_prefix><k>`,
/// posterior columns `<posterior_prefix><j>`; the candidate column holds
/// comma-joined label indices (quoted).
struct CsvSchema {
  std::string feature_prefix = "x";
  std::string candidates_column = "candidates";
  std::string label_column = "label";
  std::string posterior_prefix = "eta";
  /// Inferred from posterior columns or the largest label when absent.
  std::optional<int> num_classes;
  ValidationOptions validation;
};

/// Writes features and posteriors with shortest round-trip formatting, so a
/// reload is bit-exact.
void save_csv(const PllDataset& ds, const std::filesystem::path& path,
              const CsvSchema& schema = {});
std::string to_csv(const PllDataset& ds, const CsvSchema& schema = {});

/// Throws ParseError with the line number for malformed rows and DataError
/// listing offending rows for invariant violations.
PllDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
PllDataset parse_csv(const std::string& text, const CsvSchema& schema = {},
                     const std::string& source_name = "<memory>");

// ---------------------------------------------------------------------------
// Manifest

struct DatasetManifest {
  std::size_t n = 0;
  int num_classes = 0;
  std::size_t dim = 0;
  double ambiguity = 0.0;
  double separation = 0.0;
  std::uint64_t seed = 0;
  std::string checksum;  ///< fnv1a64 of the CSV bytes, hex
};

/// FNV-1a 64-bit digest as 16 lowercase hex characters.
std::string fnv1a64_hex(std::span<const char> bytes);
std::string file_checksum(const std::filesystem::path& path);

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text, const std::string& source_name);

}  // namespace reduxpll
