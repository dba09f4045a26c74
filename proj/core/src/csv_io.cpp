// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdio>
#include <map>

#include "json.hpp"

#include "reduxpll/dataset.hpp"
#include "reduxpll/errors.hpp"
#include "reduxpll/format.hpp"

namespace reduxpll {

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no,
                                        const std::string& source) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char ch = line[k];
    if (quoted) {
      if (ch == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          cur += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  if (quoted) {
    throw ParseError(source + ":" + std::to_string(line_no) + ": unterminated quoted field");
  }
  fields.push_back(std::move(cur));
  return fields;
}

// Index suffix of `name` when it is `prefix` followed by digits.
std::optional<int> indexed_column(const std::string& name, const std::string& prefix) {
  if (name.size() <= prefix.size() || name.compare(0, prefix.size(), prefix) != 0) {
    return std::nullopt;
  }
  const auto v = parse_int(std::string_view(name).substr(prefix.size()));
  if (!v || *v < 0) return std::nullopt;
  return static_cast<int>(*v);
}

}  // namespace

std::string to_csv(const PllDataset& ds, const CsvSchema& schema) {
  std::string out;
  const std::size_t q = ds.dim();
  const auto c = static_cast<std::size_t>(ds.num_classes);
  for (std::size_t d = 0; d < q; ++d) out += schema.feature_prefix + std::to_string(d) + ",";
  out += schema.candidates_column;
  if (ds.true_labels) out += "," + schema.label_column;
  if (ds.posterior) {
    for (std::size_t j = 0; j < c; ++j) out += "," + schema.posterior_prefix + std::to_string(j);
  }
  out += '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features.row(i)) out += format_double(v) + ",";
    out += '"' + ds.candidates[i].to_string() + '"';
    if (ds.true_labels) out += "," + std::to_string((*ds.true_labels)[i]);
    if (ds.posterior) {
      for (double v : ds.posterior->row(i)) out += "," + format_double(v);
    }
    out += '\n';
  }
  return out;
}

void save_csv(const PllDataset& ds, const std::filesystem::path& path, const CsvSchema& schema) {
  write_file(path, to_csv(ds, schema));
}

PllDataset parse_csv(const std::string& text, const CsvSchema& schema,
                     const std::string& source_name) {
  std::vector<std::string> lines;
  {
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      lines.push_back(text.substr(pos, end - pos));
      pos = end + 1;
    }
  }
  if (lines.empty()) throw ParseError(source_name + ": empty file");

  const auto header = split_csv_line(lines[0], 1, source_name);
  std::map<int, std::size_t> feature_cols;
  std::map<int, std::size_t> posterior_cols;
  std::optional<std::size_t> cand_col;
  std::optional<std::size_t> label_col;
  for (std::size_t k = 0; k < header.size(); ++k) {
    const std::string& h = header[k];
    if (h == schema.candidates_column) {
      cand_col = k;
    } else if (h == schema.label_column) {
      label_col = k;
    } else if (auto f = indexed_column(h, schema.feature_prefix)) {
      feature_cols[*f] = k;
    } else if (auto p = indexed_column(h, schema.posterior_prefix)) {
      posterior_cols[*p] = k;
    } else {
      throw ParseError(source_name + ":1: unknown column '" + h + "'");
    }
  }
  if (!cand_col) {
    throw ParseError(source_name + ":1: missing '" + schema.candidates_column + "' column");
  }
  if (feature_cols.empty()) throw ParseError(source_name + ":1: no feature columns");
  auto check_dense = [&](const std::map<int, std::size_t>& cols, const char* what) {
    int expect = 0;
    for (const auto& [idx, col] : cols) {
      if (idx != expect++) {
        throw ParseError(source_name + ":1: " + what + " columns are not numbered 0..k-1");
      }
    }
  };
  check_dense(feature_cols, "feature");
  check_dense(posterior_cols, "posterior");

  const std::size_t q = feature_cols.size();
  std::vector<double> features;
  std::vector<double> posterior;
  std::vector<LabelSet> candidates;
  std::vector<int> labels;
  int max_label = -1;

  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::size_t line_no = ln + 1;
    if (lines[ln].empty() || lines[ln] == "\r") continue;
    const auto fields = split_csv_line(lines[ln], line_no, source_name);
    const std::string where = source_name + ":" + std::to_string(line_no) + ": ";
    if (fields.size() != header.size()) {
      throw ParseError(where + "expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    for (const auto& [idx, col] : feature_cols) {
      const auto v = parse_double(fields[col]);
      if (!v) throw ParseError(where + "bad feature value '" + fields[col] + "'");
      features.push_back(*v);
    }
    for (const auto& [idx, col] : posterior_cols) {
      const auto v = parse_double(fields[col]);
      if (!v) throw ParseError(where + "bad posterior value '" + fields[col] + "'");
      posterior.push_back(*v);
    }
    LabelSet s;
    try {
      s = LabelSet::parse(fields[*cand_col]);
    } catch (const ParseError& e) {
      throw ParseError(where + e.what());
    }
    candidates.push_back(s);
    for (int l : s.labels()) max_label = std::max(max_label, l);
    if (label_col) {
      const auto y = parse_int(fields[*label_col]);
      if (!y || *y < 0 || *y >= kMaxLabels) {
        throw ParseError(where + "bad label '" + fields[*label_col] + "'");
      }
      labels.push_back(static_cast<int>(*y));
      max_label = std::max(max_label, static_cast<int>(*y));
    }
  }

  PllDataset ds;
  const std::size_t n = candidates.size();
  if (schema.num_classes) {
    ds.num_classes = *schema.num_classes;
  } else if (!posterior_cols.empty()) {
    ds.num_classes = static_cast<int>(posterior_cols.size());
  } else {
    ds.num_classes = max_label + 1;
  }
  if (!posterior_cols.empty() && posterior_cols.size() != static_cast<std::size_t>(ds.num_classes)) {
    throw ParseError(source_name + ":1: " + std::to_string(posterior_cols.size()) +
                     " posterior columns for " + std::to_string(ds.num_classes) + " classes");
  }
  ds.features = Matrix::from_flat(n, q, std::move(features));
  ds.candidates = std::move(candidates);
  if (label_col) ds.true_labels = std::move(labels);
  if (!posterior_cols.empty()) {
    ds.posterior = Matrix::from_flat(n, posterior_cols.size(), std::move(posterior));
  }
  validate(ds, schema.validation);
  return ds;
}

PllDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  return parse_csv(read_file(path), schema, path.string());
}

std::string fnv1a64_hex(std::span<const char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : bytes) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_checksum(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return fnv1a64_hex(bytes);
}

std::string manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["n"] = m.n;
  j["c"] = m.num_classes;
  j["q"] = m.dim;
  j["ambiguity"] = m.ambiguity;
  j["separation"] = m.separation;
  j["seed"] = m.seed;
  j["checksum"] = m.checksum;
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text, const std::string& source_name) {
  try {
    const auto j = nlohmann::json::parse(text);
    DatasetManifest m;
    m.n = j.at("n").get<std::size_t>();
    m.num_classes = j.at("c").get<int>();
    m.dim = j.at("q").get<std::size_t>();
    m.ambiguity = j.at("ambiguity").get<double>();
    m.separation = j.value("separation", 0.0);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.checksum = j.at("checksum").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source_name + ": " + e.what());
  }
}

}  // namespace reduxpll
