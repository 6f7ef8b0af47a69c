#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nef/core.hpp"

namespace nef {

/// Malformed LIBSVM input. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// One sparse feature: 1-based index and value.
struct Feature {
  std::uint32_t index = 0;
  double value = 0.0;
  friend bool operator==(const Feature&, const Feature&) = default;
};

using SparseRow = std::vector<Feature>;

/// Binary-labelled sparse dataset (labels in {-1, +1}).
struct Dataset {
  std::size_t dim = 0;
  std::vector<SparseRow> rows;
  std::vector<int> labels;

  [[nodiscard]] std::size_t size() const noexcept { return rows.size(); }

  /// Row i as a dense vector of length dim.
  [[nodiscard]] DenseVector dense_row(std::size_t i) const {
    DenseVector out(dim);
    for (const Feature& f : rows.at(i)) out[f.index - 1] = f.value;
    return out;
  }
};

/// Maps raw label values to {-1, +1}. The default accepts only -1 and +1.
class LabelMap {
 public:
  LabelMap() : map_{{-1.0, -1}, {1.0, 1}} {}
  explicit LabelMap(std::map<double, int> map) : map_(std::move(map)) {
    for (const auto& [raw, mapped] : map_)
      if (mapped != -1 && mapped != 1) throw ParameterError("label map targets must be -1 or +1");
  }

  /// Parses "2:-1,4:1".
  static LabelMap parse(std::string_view spec) {
    std::map<double, int> m;
    std::size_t pos = 0;
    while (pos < spec.size()) {
      std::size_t end = spec.find(',', pos);
      if (end == std::string_view::npos) end = spec.size();
      const std::string item(spec.substr(pos, end - pos));
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ParameterError("label map entry '" + item + "' lacks ':'");
      try {
        m[std::stod(item.substr(0, colon))] = std::stoi(item.substr(colon + 1));
      } catch (const std::logic_error&) {
        throw ParameterError("label map entry '" + item + "' is not numeric");
      }
      pos = end + 1;
    }
    return LabelMap(std::move(m));
  }

  [[nodiscard]] std::optional<int> lookup(double raw) const {
    auto it = map_.find(raw);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] std::string to_string() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& [raw, mapped] : map_) {
      if (!first) os << ',';
      os << raw << ':' << mapped;
      first = false;
    }
    return os.str();
  }

 private:
  std::map<double, int> map_;
};

namespace detail {

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

}  // namespace detail

/// Reads LIBSVM text: "<label> <idx>:<val> ..." per line, 1-based strictly
/// increasing indices. Blank lines are skipped. `dim_override`, when given,
/// must cover every index seen.
inline Dataset parse_libsvm(std::istream& in, const LabelMap& labels = {},
                            std::optional<std::size_t> dim_override = std::nullopt) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_index = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tokens = detail::split_ws(line);
    if (tokens.empty()) continue;

    double raw_label = 0.0;
    if (!detail::parse_double(tokens[0], raw_label))
      throw ParseError(lineno, "label '" + std::string(tokens[0]) + "' is not numeric");
    const auto label = labels.lookup(raw_label);
    if (!label) throw ParseError(lineno, "label '" + std::string(tokens[0]) + "' has no mapping");

    SparseRow row;
    row.reserve(tokens.size() - 1);
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const std::string_view tok = tokens[t];
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos || colon == 0 || colon + 1 == tok.size())
        throw ParseError(lineno, "malformed token '" + std::string(tok) + "'");
      std::uint32_t index = 0;
      const auto idx_str = tok.substr(0, colon);
      const auto [ptr, ec] = std::from_chars(idx_str.data(), idx_str.data() + idx_str.size(), index);
      if (ec != std::errc{} || ptr != idx_str.data() + idx_str.size() || index == 0)
        throw ParseError(lineno, "bad feature index in '" + std::string(tok) + "'");
      double value = 0.0;
      if (!detail::parse_double(tok.substr(colon + 1), value))
        throw ParseError(lineno, "nonnumeric value in '" + std::string(tok) + "'");
      if (!row.empty()) {
        if (index == row.back().index)
          throw ParseError(lineno, "duplicate index " + std::to_string(index));
        if (index < row.back().index)
          throw ParseError(lineno, "indices not increasing at " + std::to_string(index));
      }
      row.push_back({index, value});
      max_index = std::max<std::size_t>(max_index, index);
    }
    ds.rows.push_back(std::move(row));
    ds.labels.push_back(*label);
  }
  ds.dim = max_index;
  if (dim_override) {
    if (*dim_override < max_index)
      throw ParameterError("dimension override " + std::to_string(*dim_override) +
                           " is below the largest index " + std::to_string(max_index));
    ds.dim = *dim_override;
  }
  return ds;
}

inline Dataset parse_libsvm(std::string_view text, const LabelMap& labels = {},
                            std::optional<std::size_t> dim_override = std::nullopt) {
  std::istringstream in{std::string(text)};
  return parse_libsvm(in, labels, dim_override);
}

/// Writes LIBSVM text with 17 significant digits; labels as -1 / +1.
inline void write_libsvm(std::ostream& out, const Dataset& ds) {
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << (ds.labels[i] > 0 ? "+1" : "-1");
    for (const Feature& f : ds.rows[i]) {
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, f.value, std::chars_format::general, 17);
      out << ' ' << f.index << ':' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
}

/// Per-column affine map of [min_j, max_j] onto [-1, 1]. Absent entries
/// count as zeros. Constant columns map to 0.
inline Dataset scale_features(const Dataset& ds) {
  if (ds.size() == 0 || ds.dim == 0) throw ParameterError("scale_features: empty dataset");
  std::vector<double> lo(ds.dim, 0.0);
  std::vector<double> hi(ds.dim, 0.0);
  std::vector<std::size_t> present(ds.dim, 0);
  for (const SparseRow& row : ds.rows) {
    for (const Feature& f : row) {
      const std::size_t j = f.index - 1;
      if (present[j] == 0) {
        lo[j] = hi[j] = f.value;
      } else {
        lo[j] = std::min(lo[j], f.value);
        hi[j] = std::max(hi[j], f.value);
      }
      ++present[j];
    }
  }
  for (std::size_t j = 0; j < ds.dim; ++j) {
    if (present[j] < ds.size()) {  // implicit zeros
      lo[j] = std::min(lo[j], 0.0);
      hi[j] = std::max(hi[j], 0.0);
    }
  }

  Dataset out;
  out.dim = ds.dim;
  out.labels = ds.labels;
  out.rows.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const DenseVector dense = ds.dense_row(i);
    SparseRow row;
    for (std::size_t j = 0; j < ds.dim; ++j) {
      const double range = hi[j] - lo[j];
      double v = range > 0.0 ? -1.0 + 2.0 * (dense[j] - lo[j]) / range : 0.0;
      v = std::clamp(v, -1.0, 1.0);
      if (v != 0.0) row.push_back({static_cast<std::uint32_t>(j + 1), v});
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

/// n rows with i.i.d. N(0,1) features and labels uniform on {-1, +1}.
inline Dataset generate_synthetic(std::size_t n, std::size_t d, RngStream& rng) {
  if (n == 0 || d == 0) throw DimensionError("generate_synthetic: n and d must be positive");
  Dataset ds;
  ds.dim = d;
  ds.rows.reserve(n);
  ds.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SparseRow row(d);
    for (std::size_t j = 0; j < d; ++j) row[j] = {static_cast<std::uint32_t>(j + 1), rng.gaussian(0.0, 1.0)};
    ds.rows.push_back(std::move(row));
    ds.labels.push_back(rng.uniform() < 0.5 ? -1 : 1);
  }
  return ds;
}

}  // namespace nef
