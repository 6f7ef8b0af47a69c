#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nef/algorithms.hpp"

namespace nef {

enum class ProblemKind { Polynomial, Logistic };

struct ProblemSpec {
  ProblemKind kind = ProblemKind::Polynomial;
  std::size_t d = 4;
  std::size_t n_clients = 0;  // 0: polynomial -> 1 client, logistic -> one row per client
  // polynomial
  double L0 = 4.0;
  double L1 = 1.0;
  double noise_sigma = 0.0;
  // logistic
  std::string source = "synthetic";  // "synthetic" or a LIBSVM file path
  std::size_t n_rows = 20;
  double lambda = 0.1;
  bool scale = false;
  std::string label_map = "-1:-1,1:1";
  // initial point x0 ~ N(mean, std^2); unset means 20/1 (polynomial) or 0/1 (logistic)
  std::optional<double> x0_mean;
  std::optional<double> x0_std;

  [[nodiscard]] double x0_mean_or_default() const {
    return x0_mean.value_or(kind == ProblemKind::Polynomial ? 20.0 : 0.0);
  }
  [[nodiscard]] double x0_std_or_default() const { return x0_std.value_or(1.0); }

  friend bool operator==(const ProblemSpec&, const ProblemSpec&) = default;
};

struct AlgorithmSpec {
  Variant variant = Variant::NormEF21;
  std::string compressor = "top_k";  // top_k | rand_k | identity
  std::size_t k = 1;
  int value_bits = 32;
  std::string rule = "sqrtk";  // sqrtk | single_node | ef21_classical | sgdm | fixed
  double gamma0 = 1.0;
  double beta = 2.0;
  double gamma = 0.0;
  double eta = 1.0;
  bool clamp_gamma0 = false;
  InitMode init = InitMode::Auto;
  std::size_t batch = 1;

  friend bool operator==(const AlgorithmSpec&, const AlgorithmSpec&) = default;
};

struct RunSpec {
  std::int64_t K = 100;
  std::uint64_t seed = 0;
  double epsilon = 1e-4;
  std::string out;
  bool parallel_clients = false;

  friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

struct ExperimentConfig {
  ProblemSpec problem;
  AlgorithmSpec algorithm;
  RunSpec run;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  [[nodiscard]] CompressorKind compressor_kind() const {
    if (algorithm.compressor == "top_k") return CompressorKind::top_k(algorithm.k, algorithm.value_bits);
    if (algorithm.compressor == "rand_k") return CompressorKind::rand_k(algorithm.k, algorithm.value_bits);
    if (algorithm.compressor == "identity") return CompressorKind::identity(algorithm.value_bits);
    throw ConfigError("algorithm.compressor: unknown compressor '" + algorithm.compressor + "'");
  }

  [[nodiscard]] StepsizeRule stepsize_rule() const {
    const auto& a = algorithm;
    if (a.rule == "sqrtk") return NormalizedSqrtK{a.gamma0};
    if (a.rule == "single_node") return SingleNodeConstant{a.beta};
    if (a.rule == "ef21_classical") return EF21Classical{};
    if (a.rule == "sgdm") return SgdmRule{a.gamma0, a.clamp_gamma0};
    if (a.rule == "fixed") return FixedStep{a.gamma, a.eta};
    throw ConfigError("algorithm.rule: unknown rule '" + a.rule + "'");
  }

  [[nodiscard]] AlgoConfig algo_config() const {
    AlgoConfig c;
    c.variant = algorithm.variant;
    c.compressor = compressor_kind();
    c.rule = stepsize_rule();
    c.init_mode = algorithm.init;
    c.sample = {algorithm.batch, problem.noise_sigma};
    c.parallel_clients = run.parallel_clients;
    return c;
  }

  /// Field-level checks that do not need the data.
  void validate() const {
    if (problem.d == 0) throw ConfigError("problem.d: must be positive");
    if (problem.kind == ProblemKind::Polynomial) {
      if (!(problem.L0 > 0.0)) throw ConfigError("problem.L0: must be positive");
      if (!(problem.L1 > 0.0)) throw ConfigError("problem.L1: must be positive");
      if (!(problem.noise_sigma >= 0.0)) throw ConfigError("problem.noise_sigma: must be >= 0");
    } else {
      if (!(problem.lambda >= 0.0)) throw ConfigError("problem.lambda: must be >= 0");
      if (problem.source == "synthetic" && problem.n_rows == 0) throw ConfigError("problem.n: must be positive");
    }
    if (!(problem.x0_std_or_default() >= 0.0)) throw ConfigError("problem.x0_std: must be >= 0");
    if (run.K < 0) throw ConfigError("run.K: must be >= 0");
    if (!(run.epsilon > 0.0)) throw ConfigError("run.epsilon: must be positive");
    if (algorithm.rule == "sqrtk" && !(algorithm.gamma0 > 0.0)) throw ConfigError("algorithm.gamma0: must be positive");
    if (algorithm.rule == "single_node" && !(algorithm.beta >= 2.0)) throw ConfigError("algorithm.beta: must be >= 2");
    if (algorithm.rule == "fixed" && !(algorithm.gamma > 0.0)) throw ConfigError("algorithm.gamma: must be positive");
    if (algorithm.rule == "fixed" && !(algorithm.eta > 0.0 && algorithm.eta <= 1.0))
      throw ConfigError("algorithm.eta: must lie in (0, 1]");
    (void)compressor_kind();
    algo_config().validate();
  }
};

// ---------------------------------------------------------------------------
// Text format: "[section]" headers, "key = value" lines, '#' comments.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

class FieldReader {
 public:
  FieldReader(std::string section, std::map<std::string, std::string> values)
      : section_(std::move(section)), values_(std::move(values)) {}

  template <class T>
  void read(const std::string& key, T& out) {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    out = convert<T>(key, it->second);
    values_.erase(it);
  }

  template <class T>
  void read(const std::string& key, std::optional<T>& out) {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    out = convert<T>(key, it->second);
    values_.erase(it);
  }

  void finish() const {
    if (!values_.empty())
      throw ConfigError("[" + section_ + "]: unknown key '" + values_.begin()->first + "'");
  }

 private:
  template <class T>
  T convert(const std::string& key, const std::string& raw) const {
    const std::string where = section_ + "." + key;
    if constexpr (std::is_same_v<T, std::string>) {
      if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') return raw.substr(1, raw.size() - 2);
      return raw;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (raw == "true" || raw == "1") return true;
      if (raw == "false" || raw == "0") return false;
      throw ConfigError(where + ": expected true/false, got '" + raw + "'");
    } else if constexpr (std::is_same_v<T, double>) {
      if (raw == "inf") return std::numeric_limits<double>::infinity();
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (ec != std::errc{} || ptr != raw.data() + raw.size()) throw ConfigError(where + ": expected a number, got '" + raw + "'");
      return v;
    } else if constexpr (std::is_integral_v<T>) {
      T v{};
      const auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (ec != std::errc{} || ptr != raw.data() + raw.size()) throw ConfigError(where + ": expected an integer, got '" + raw + "'");
      return v;
    } else if constexpr (std::is_same_v<T, ProblemKind>) {
      if (raw == "polynomial") return ProblemKind::Polynomial;
      if (raw == "logistic") return ProblemKind::Logistic;
      throw ConfigError(where + ": expected polynomial|logistic, got '" + raw + "'");
    } else if constexpr (std::is_same_v<T, Variant>) {
      for (Variant v : {Variant::EF21, Variant::NormEF21, Variant::EF21SGDM, Variant::NormEF21SGDM})
        if (raw == variant_name(v)) return v;
      throw ConfigError(where + ": expected ef21|norm_ef21|ef21_sgdm|norm_ef21_sgdm, got '" + raw + "'");
    } else if constexpr (std::is_same_v<T, InitMode>) {
      if (raw == "auto") return InitMode::Auto;
      if (raw == "zero") return InitMode::ZeroMemory;
      if (raw == "gradient") return InitMode::GradientAtX0;
      throw ConfigError(where + ": expected auto|zero|gradient, got '" + raw + "'");
    }
  }

  std::string section_;
  std::map<std::string, std::string> values_;
};

inline std::string init_name(InitMode m) {
  switch (m) {
    case InitMode::Auto: return "auto";
    case InitMode::ZeroMemory: return "zero";
    case InitMode::GradientAtX0: return "gradient";
  }
  return "auto";
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::string line;
  std::string current;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section header");
      current = detail::trim(std::string_view(body).substr(1, body.size() - 2));
      if (current != "problem" && current != "algorithm" && current != "run")
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown section [" + current + "]");
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    if (current.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": key outside of a section");
    sections[current][detail::trim(body.substr(0, eq))] = detail::trim(body.substr(eq + 1));
  }

  ExperimentConfig cfg;
  {
    detail::FieldReader r("problem", sections["problem"]);
    auto& p = cfg.problem;
    r.read("type", p.kind);
    r.read("d", p.d);
    r.read("n_clients", p.n_clients);
    r.read("L0", p.L0);
    r.read("L1", p.L1);
    r.read("noise_sigma", p.noise_sigma);
    r.read("source", p.source);
    r.read("n", p.n_rows);
    r.read("lambda", p.lambda);
    r.read("scale", p.scale);
    r.read("label_map", p.label_map);
    r.read("x0_mean", p.x0_mean);
    r.read("x0_std", p.x0_std);
    r.finish();
  }
  {
    detail::FieldReader r("algorithm", sections["algorithm"]);
    auto& a = cfg.algorithm;
    r.read("variant", a.variant);
    r.read("compressor", a.compressor);
    r.read("k", a.k);
    r.read("value_bits", a.value_bits);
    r.read("rule", a.rule);
    r.read("gamma0", a.gamma0);
    r.read("beta", a.beta);
    r.read("gamma", a.gamma);
    r.read("eta", a.eta);
    r.read("clamp_gamma0", a.clamp_gamma0);
    r.read("init", a.init);
    r.read("batch", a.batch);
    r.finish();
  }
  {
    detail::FieldReader r("run", sections["run"]);
    auto& s = cfg.run;
    r.read("K", s.K);
    r.read("seed", s.seed);
    r.read("epsilon", s.epsilon);
    r.read("out", s.out);
    r.read("parallel_clients", s.parallel_clients);
    r.finish();
  }
  return cfg;
}

inline ExperimentConfig parse_config(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in);
}

/// Serializes every field; parse_config(to_text(c)) == c.
inline std::string to_text(const ExperimentConfig& cfg) {
  using detail::format_double;
  std::ostringstream os;
  const auto& p = cfg.problem;
  os << "[problem]\n";
  os << "type = " << (p.kind == ProblemKind::Polynomial ? "polynomial" : "logistic") << '\n';
  os << "d = " << p.d << '\n';
  os << "n_clients = " << p.n_clients << '\n';
  os << "L0 = " << format_double(p.L0) << '\n';
  os << "L1 = " << format_double(p.L1) << '\n';
  os << "noise_sigma = " << format_double(p.noise_sigma) << '\n';
  os << "source = \"" << p.source << "\"\n";
  os << "n = " << p.n_rows << '\n';
  os << "lambda = " << format_double(p.lambda) << '\n';
  os << "scale = " << (p.scale ? "true" : "false") << '\n';
  os << "label_map = \"" << p.label_map << "\"\n";
  if (p.x0_mean) os << "x0_mean = " << format_double(*p.x0_mean) << '\n';
  if (p.x0_std) os << "x0_std = " << format_double(*p.x0_std) << '\n';

  const auto& a = cfg.algorithm;
  os << "\n[algorithm]\n";
  os << "variant = " << variant_name(a.variant) << '\n';
  os << "compressor = " << a.compressor << '\n';
  os << "k = " << a.k << '\n';
  os << "value_bits = " << a.value_bits << '\n';
  os << "rule = " << a.rule << '\n';
  os << "gamma0 = " << format_double(a.gamma0) << '\n';
  os << "beta = " << format_double(a.beta) << '\n';
  os << "gamma = " << format_double(a.gamma) << '\n';
  os << "eta = " << format_double(a.eta) << '\n';
  os << "clamp_gamma0 = " << (a.clamp_gamma0 ? "true" : "false") << '\n';
  os << "init = " << detail::init_name(a.init) << '\n';
  os << "batch = " << a.batch << '\n';

  const auto& r = cfg.run;
  os << "\n[run]\n";
  os << "K = " << r.K << '\n';
  os << "seed = " << r.seed << '\n';
  os << "epsilon = " << format_double(r.epsilon) << '\n';
  os << "out = \"" << r.out << "\"\n";
  os << "parallel_clients = " << (r.parallel_clients ? "true" : "false") << '\n';
  return os.str();
}

}  // namespace nef
