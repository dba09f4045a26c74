// SPDX-License-Identifier: Apache-2.0
#include "reduxpll/label_set.hpp"

#include <algorithm>
#include <charconv>

#include "reduxpll/errors.hpp"

namespace reduxpll {

LabelSet LabelSet::of(std::initializer_list<int> labels) {
  LabelSet s;
  for (int l : labels) {
    if (l < 0 || l >= kMaxLabels) throw ContractViolation("label index out of range");
    s.insert(l);
  }
  return s;
}

LabelSet LabelSet::full(int num_labels) {
  if (num_labels < 0 || num_labels > kMaxLabels) throw ConfigError("label count out of range");
  return LabelSet(num_labels == kMaxLabels ? ~std::uint64_t{0}
                                           : (std::uint64_t{1} << num_labels) - 1);
}

std::vector<int> LabelSet::labels() const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(size()));
  for (std::uint64_t b = bits_; b != 0; b &= b - 1) out.push_back(std::countr_zero(b));
  return out;
}

std::string LabelSet::to_string() const {
  std::string out;
  for (int l : labels()) {
    if (!out.empty()) out += ',';
    out += std::to_string(l);
  }
  return out;
}

LabelSet LabelSet::parse(const std::string& text) {
  LabelSet s;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    std::size_t b = pos;
    std::size_t e = end;
    while (b < e && text[b] == ' ') ++b;
    while (e > b && text[e - 1] == ' ') --e;
    int label = -1;
    const auto [ptr, ec] = std::from_chars(text.data() + b, text.data() + e, label);
    if (b == e || ec != std::errc() || ptr != text.data() + e || label < 0 || label >= kMaxLabels) {
      throw ParseError("bad candidate label token '" + text.substr(b, e - b) + "'");
    }
    s.insert(label);
    pos = end + 1;
  }
  return s;
}

}  // namespace reduxpll
