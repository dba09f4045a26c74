// SPDX-License-Identifier: Apache-2.0
#include "reduxpll/dataset.hpp"

#include <cmath>

#include "reduxpll/errors.hpp"

namespace reduxpll {

std::vector<std::string> validation_errors(const PllDataset& ds, ValidationOptions opts,
                                           std::size_t max_messages) {
  std::vector<std::string> errors;
  std::size_t omitted = 0;
  auto report = [&](std::string msg) {
    if (errors.size() < max_messages) {
      errors.push_back(std::move(msg));
    } else {
      ++omitted;
    }
  };

  const std::size_t n = ds.size();
  const int c = ds.num_classes;
  if (c < 2 || c > kMaxLabels) {
    report("label count " + std::to_string(c) + " outside [2, " + std::to_string(kMaxLabels) + "]");
    return errors;
  }
  if (ds.candidates.size() != n) {
    report("candidate sets: " + std::to_string(ds.candidates.size()) + " for " +
           std::to_string(n) + " instances");
    return errors;
  }
  if (ds.true_labels && ds.true_labels->size() != n) {
    report("true labels: " + std::to_string(ds.true_labels->size()) + " for " +
           std::to_string(n) + " instances");
    return errors;
  }
  if (opts.require_labels && !ds.true_labels) report("true labels are required but missing");
  if (ds.posterior && (ds.posterior->rows() != n ||
                       ds.posterior->cols() != static_cast<std::size_t>(c))) {
    report("posterior matrix has the wrong shape");
    return errors;
  }

  const LabelSet all = LabelSet::full(c);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string row = "row " + std::to_string(i) + ": ";
    if (!all_finite(ds.features.row(i))) report(row + "non-finite feature");
    const LabelSet s = ds.candidates[i];
    if ((s.bits() & ~all.bits()) != 0) report(row + "candidate label >= " + std::to_string(c));
    if (s.empty()) {
      report(row + "empty candidate set");
      continue;
    }
    if (s == all) report(row + "candidate set is the whole label space");
    if (ds.true_labels) {
      const int y = (*ds.true_labels)[i];
      if (y < 0 || y >= c) {
        report(row + "true label " + std::to_string(y) + " out of range");
      } else if (!s.contains(y)) {
        report(row + "true label " + std::to_string(y) + " not in candidates {" + s.to_string() + "}");
      }
    }
    if (!opts.allow_supervised && s.size() == 1) {
      report(row + "candidate set is a singleton {" + s.to_string() + "}");
    }
    if (ds.posterior) {
      double sum = 0.0;
      bool ok = true;
      for (double p : ds.posterior->row(i)) {
        ok = ok && p >= -1e-9 && std::isfinite(p);
        sum += p;
      }
      if (!ok || std::abs(sum - 1.0) > 1e-9) report(row + "posterior is not on the simplex");
    }
  }
  if (omitted > 0) errors.push_back("... and " + std::to_string(omitted) + " more");
  return errors;
}

void validate(const PllDataset& ds, ValidationOptions opts) {
  const auto errors = validation_errors(ds, opts);
  if (errors.empty()) return;
  std::string msg = "dataset violates invariants:";
  for (const auto& e : errors) msg += "\n  " + e;
  throw DataError(msg);
}

PllDataset subset(const PllDataset& ds, std::span<const std::size_t> indices) {
  PllDataset out;
  out.num_classes = ds.num_classes;
  out.features = select_rows(ds.features, indices);
  out.candidates.reserve(indices.size());
  for (std::size_t i : indices) out.candidates.push_back(ds.candidates.at(i));
  if (ds.true_labels) {
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (std::size_t i : indices) labels.push_back(ds.true_labels->at(i));
    out.true_labels = std::move(labels);
  }
  if (ds.posterior) out.posterior = select_rows(*ds.posterior, indices);
  return out;
}

double mean_candidate_size(const PllDataset& ds) {
  if (ds.candidates.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : ds.candidates) total += s.size();
  return total / static_cast<double>(ds.candidates.size());
}

}  // namespace reduxpll
