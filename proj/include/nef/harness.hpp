#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nef/algorithms.hpp"
#include "nef/compressors.hpp"
#include "nef/config.hpp"
#include "nef/core.hpp"
#include "nef/dataset.hpp"
#include "nef/diagnostics.hpp"
#include "nef/problems.hpp"
#include "nef/schedules.hpp"

namespace nef {

// Children of the master stream. Data and x0 are shared by every algorithm
// run from the same seed; each algorithm gets its own child of kAlgorithm.
struct MasterStreams {
  static constexpr std::uint64_t kData = 1;
  static constexpr std::uint64_t kInit = 2;
  static constexpr std::uint64_t kAlgorithm = 3;
  static constexpr std::uint64_t kChecks = 4;
};

struct BuiltProblem {
  std::unique_ptr<Problem> problem;
  DenseVector x0;
};

inline Dataset load_dataset(const ProblemSpec& p, const RngStream& master) {
  Dataset ds;
  if (p.source == "synthetic") {
    RngStream data = master.child(MasterStreams::kData);
    ds = generate_synthetic(p.n_rows, p.d, data);
  } else {
    std::ifstream in(p.source);
    if (!in) throw ConfigError("problem.source: cannot open '" + p.source + "'");
    ds = parse_libsvm(in, LabelMap::parse(p.label_map));
  }
  return p.scale ? scale_features(ds) : ds;
}

/// Builds the problem and x0 for a config. For the polynomial, the box radius
/// D = max_j |x0_j| fixes the classical constant L.
inline BuiltProblem build_problem(const ExperimentConfig& cfg, const RngStream& master) {
  const ProblemSpec& p = cfg.problem;
  BuiltProblem out;
  RngStream init = master.child(MasterStreams::kInit);
  if (p.kind == ProblemKind::Polynomial) {
    auto poly = std::make_unique<PolynomialProblem>(make_polynomial(p.d, p.L1, p.L0, p.n_clients == 0 ? 1 : p.n_clients));
    out.x0 = sample_gaussian(init, p.d, p.x0_mean_or_default(), p.x0_std_or_default());
    double D = 0.0;
    for (double v : out.x0.values()) D = std::max(D, std::abs(v));
    if (D > 0.0) poly->set_box_radius(D);
    out.problem = std::move(poly);
  } else {
    const Dataset ds = load_dataset(p, master);
    out.problem = std::make_unique<LogisticProblem>(ds, p.lambda, p.n_clients);
    out.x0 = sample_gaussian(init, ds.dim, p.x0_mean_or_default(), p.x0_std_or_default());
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCsvHeader = "k,f,grad_norm_sq,min_grad_norm,bits";

/// Writes `comment` line by line as "# ..." followed by the header and rows.
inline void write_csv(const RunRecord& record, std::ostream& out, std::string_view comment = {}) {
  std::istringstream lines{std::string(comment)};
  for (std::string line; std::getline(lines, line);) out << "# " << line << '\n';
  out << kCsvHeader << '\n';
  for (const MetricRow& r : record.rows) {
    out << r.k << ',' << detail::format_double(r.f_value) << ',' << detail::format_double(r.grad_norm_sq) << ','
        << detail::format_double(r.min_grad_norm) << ',' << r.bits_cumulative << '\n';
  }
}

inline void write_csv(const RunRecord& record, const std::string& path, std::string_view comment = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_csv: cannot open '" + path + "' for writing");
  write_csv(record, out, comment);
  out.flush();
  if (!out) throw Error("write_csv: write to '" + path + "' failed");
}

inline RunRecord read_csv(std::istream& in) {
  RunRecord rec;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != kCsvHeader) throw ParseError(lineno, "unexpected CSV header '" + line + "'");
      header = true;
      continue;
    }
    std::vector<std::string_view> cells;
    std::string_view rest = line;
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos;) {
      cells.push_back(rest.substr(0, pos));
      rest.remove_prefix(pos + 1);
    }
    cells.push_back(rest);
    if (cells.size() != 5) throw ParseError(lineno, "expected 5 columns");
    MetricRow r;
    auto num = [&](std::string_view s, auto& out) {
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError(lineno, "bad number '" + std::string(s) + "'");
    };
    num(cells[0], r.k);
    num(cells[1], r.f_value);
    num(cells[2], r.grad_norm_sq);
    num(cells[3], r.min_grad_norm);
    num(cells[4], r.bits_cumulative);
    rec.rows.push_back(r);
  }
  if (!header) throw ParseError(lineno, "missing CSV header");
  return rec;
}

inline RunRecord read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_csv: cannot open '" + path + "'");
  return read_csv(in);
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Runs one experiment. `algo_stream` selects the child stream for the
/// algorithm's own randomness.
inline RunRecord run_experiment(const ExperimentConfig& cfg, std::uint64_t algo_stream = 0,
                                const RoundObserver& observer = {}) {
  cfg.validate();
  const RngStream master = seeded_rng(cfg.run.seed);
  const BuiltProblem built = build_problem(cfg, master);
  const RngStream algo = master.child(MasterStreams::kAlgorithm).child(algo_stream);
  RunRecord rec = run(*built.problem, cfg.algo_config(), built.x0, cfg.run.K, algo, observer);
  rec.seed = cfg.run.seed;
  if (!cfg.run.out.empty()) write_csv(rec, cfg.run.out, to_text(cfg));
  return rec;
}

class GridSearchError : public Error {
 public:
  GridSearchError(double best_value, std::int64_t best_K, double epsilon)
      : Error(message(best_value, best_K, epsilon)), best_value_(best_value), best_K_(best_K) {}
  [[nodiscard]] double best_value() const noexcept { return best_value_; }
  [[nodiscard]] std::int64_t best_K() const noexcept { return best_K_; }

 private:
  static std::string message(double v, std::int64_t K, double eps) {
    std::ostringstream os;
    os.precision(6);
    os << "grid search: no K reached min ||grad f||^2 < " << eps << "; best " << v << " at K = " << K;
    return os.str();
  }
  double best_value_;
  std::int64_t best_K_;
};

/// Smallest K in {step, 2 step, ..., K_max} whose run reaches min_k ||grad f(x^k)||^2 < epsilon.
/// The stepsize rule is re-resolved for every candidate.
inline std::int64_t grid_search_K(ExperimentConfig cfg, double epsilon, std::int64_t step, std::int64_t K_max) {
  if (step < 1) throw ParameterError("grid_search_K: step must be >= 1");
  if (K_max < step) throw ParameterError("grid_search_K: K_max must be >= step");
  cfg.run.out.clear();
  double best = std::numeric_limits<double>::infinity();
  std::int64_t best_K = -1;
  for (std::int64_t K = step; K <= K_max; K += step) {
    cfg.run.K = K;
    const double v = run_experiment(cfg).min_grad_norm_sq();
    if (v < epsilon) return K;
    if (v < best || best_K < 0) {
      best = v;
      best_K = K;
    }
  }
  throw GridSearchError(best, best_K, epsilon);
}

/// Runs A and B on the data and x0 of one master seed (A's) with independent
/// algorithm streams, and writes a joint CSV.
struct Comparison {
  RunRecord a;
  RunRecord b;
};

inline Comparison compare(const ExperimentConfig& cfg_a, ExperimentConfig cfg_b) {
  cfg_b.run.seed = cfg_a.run.seed;
  ExperimentConfig a = cfg_a;
  a.run.out.clear();
  cfg_b.run.out.clear();
  return {run_experiment(a, 0), run_experiment(cfg_b, 1)};
}

inline void write_comparison_csv(const Comparison& c, std::ostream& out, std::string_view comment = {}) {
  std::istringstream lines{std::string(comment)};
  for (std::string line; std::getline(lines, line);) out << "# " << line << '\n';
  out << "k,f_a,grad_norm_sq_a,min_grad_norm_a,bits_a,f_b,grad_norm_sq_b,min_grad_norm_b,bits_b\n";
  const std::size_t rows = std::max(c.a.rows.size(), c.b.rows.size());
  auto cells = [&](const RunRecord& r, std::size_t k) {
    if (k >= r.rows.size()) return std::string(",,,");
    const MetricRow& m = r.rows[k];
    return detail::format_double(m.f_value) + ',' + detail::format_double(m.grad_norm_sq) + ',' +
           detail::format_double(m.min_grad_norm) + ',' + std::to_string(m.bits_cumulative);
  };
  for (std::size_t k = 0; k < rows; ++k) out << k << ',' << cells(c.a, k) << ',' << cells(c.b, k) << '\n';
}

/// Central differences (f_i(x + h e_j) - f_i(x - h e_j)) / (2h).
inline DenseVector finite_diff_grad(const Problem& problem, std::size_t i, const DenseVector& x, double h) {
  if (!(h > 0.0)) throw ParameterError("finite_diff_grad: h must be positive");
  DenseVector g(x.dim());
  DenseVector probe = x;
  for (std::size_t j = 0; j < x.dim(); ++j) {
    const double xj = x[j];
    probe[j] = xj + h;
    const double up = problem.client_value(i, probe);
    probe[j] = xj - h;
    const double down = problem.client_value(i, probe);
    probe[j] = xj;
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Verification suite
// ---------------------------------------------------------------------------

struct CheckEntry {
  InequalityCheck check;
  double tolerance = 0.0;
  bool skipped = false;
  std::string note;
  [[nodiscard]] bool passed() const { return skipped || check.passed(tolerance); }
};

struct CheckReport {
  std::vector<CheckEntry> entries;
  [[nodiscard]] bool all_passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const CheckEntry& e) { return e.passed(); });
  }
  [[nodiscard]] const CheckEntry* find(std::string_view name) const {
    for (const CheckEntry& e : entries)
      if (e.check.name == name) return &e;
    return nullptr;
  }
};

inline std::ostream& operator<<(std::ostream& os, const CheckReport& r) {
  for (const CheckEntry& e : r.entries) {
    os << (e.skipped ? "SKIP" : (e.passed() ? "PASS" : "FAIL")) << "  " << e.check.name;
    if (!e.skipped) {
      os << "  worst_margin=" << detail::format_double(e.check.worst_margin) << "  at=" << e.check.worst_at
         << "  n=" << e.check.evaluations;
    }
    if (!e.note.empty()) os << "  (" << e.note << ')';
    os << '\n';
  }
  return os;
}

struct CheckOptions {
  std::size_t pairs = 1000;
  std::size_t theta_grid = 50;
  std::size_t contraction_vectors = 1000;
  std::size_t randk_vectors = 20;
  std::size_t randk_draws = 10000;
  double diagnostic_tol = 1e-9;
  // Multipliers on (L0, L1) as fed to the pointwise bounds, for negative tests.
  double L0_scale = 1.0;
  double L1_scale = 1.0;
};

/// max over a theta grid on [0,1] of ||grad f_i(theta x + (1-theta) y)||.
inline double max_grad_on_segment(const Problem& p, std::size_t i, const DenseVector& x, const DenseVector& y,
                                  std::size_t grid) {
  double best = 0.0;
  for (std::size_t t = 0; t < grid; ++t) {
    const double theta = grid == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(grid - 1);
    DenseVector u = y;
    for (std::size_t j = 0; j < u.dim(); ++j) u[j] = theta * x[j] + (1.0 - theta) * y[j];
    best = std::max(best, norm2(p.client_grad(i, u)));
  }
  return best;
}

/// Empirical symmetric generalized smoothness on random pairs with ||x - y|| <= 1.
/// Points are drawn around x0 at the scale of `spread`.
inline InequalityCheck check_generalized_smoothness(const Problem& p, const DenseVector& center, double spread,
                                                    double L0, double L1, RngStream& rng,
                                                    std::size_t pairs, std::size_t grid) {
  InequalityCheck c;
  c.name = "generalized_smoothness";
  const std::size_t d = p.dim();
  for (std::size_t s = 0; s < pairs; ++s) {
    const std::size_t i = static_cast<std::size_t>(rng.uniform_below(p.num_clients()));
    DenseVector x = center;
    for (std::size_t j = 0; j < d; ++j) x[j] += spread * (2.0 * rng.uniform() - 1.0);
    DenseVector dir = sample_gaussian(rng, d, 0.0, 1.0);
    const double dn = norm2(dir);
    if (dn == 0.0) continue;
    const double r = rng.uniform();
    DenseVector y = x;
    y.axpy(r / dn, dir);
    const double lhs = norm2(p.client_grad(i, x) - p.client_grad(i, y));
    const double rhs = (L0 + L1 * max_grad_on_segment(p, i, x, y, grid)) * norm2(x - y) * (1.0 + 1e-6);
    c.record(lhs, rhs, static_cast<std::int64_t>(s));
  }
  return c;
}

/// ||C(v) - v||^2 <= (1 - alpha) ||v||^2, recorded relative to ||v||^2.
/// Deterministic compressors are checked per vector. For rand-k the mean over
/// `draws` samples must stay within (1 + 3/sqrt(draws)) of the bound.
inline InequalityCheck check_contractivity(const CompressorKind& kind, std::size_t d, RngStream& rng,
                                           std::size_t vectors, std::size_t randk_vectors, std::size_t draws) {
  InequalityCheck c;
  c.name = "contractivity";
  const double alpha = alpha_of(kind, d);
  const bool randomized = std::holds_alternative<RandK>(kind.variant);
  const std::size_t count = randomized ? randk_vectors : vectors;
  for (std::size_t s = 0; s < count; ++s) {
    const DenseVector v = sample_gaussian(rng, d, 0.0, 1.0);
    const double vn = squared_norm(v);
    if (vn == 0.0) continue;
    if (!randomized) {
      c.record(squared_norm(compress(kind, v, rng) - v) / vn, 1.0 - alpha, static_cast<std::int64_t>(s));
      continue;
    }
    double mean = 0.0;
    for (std::size_t t = 0; t < draws; ++t) mean += squared_norm(compress(kind, v, rng) - v);
    mean /= static_cast<double>(draws);
    c.record(mean / vn, (1.0 - alpha) * (1.0 + 3.0 / std::sqrt(static_cast<double>(draws))),
             static_cast<std::int64_t>(s));
  }
  return c;
}

/// Runs every applicable check for the config's problem and compressor.
/// The descent diagnostics need a known f_inf and a deterministic normalized
/// run; they are skipped otherwise.
inline CheckReport check_suite(const ExperimentConfig& cfg, const CheckOptions& opt = {}) {
  cfg.validate();
  const RngStream master = seeded_rng(cfg.run.seed);
  const BuiltProblem built = build_problem(cfg, master);
  const Problem& p = *built.problem;
  const SmoothnessConstants sc = p.constants();
  const double L0 = sc.L0 * opt.L0_scale;
  const double L1 = sc.L1 * opt.L1_scale;
  RngStream checks = master.child(MasterStreams::kChecks);

  CheckReport report;
  auto add = [&](InequalityCheck c, double tol, std::string note = {}) {
    report.entries.push_back({std::move(c), tol, false, std::move(note)});
  };
  auto skip = [&](std::string name, std::string note) {
    CheckEntry e;
    e.check.name = std::move(name);
    e.skipped = true;
    e.note = std::move(note);
    report.entries.push_back(std::move(e));
  };

  double spread = 1.0;
  for (double v : built.x0.values()) spread = std::max(spread, std::abs(v));
  RngStream pair_rng = checks.child(1);
  add(check_generalized_smoothness(p, DenseVector(p.dim()), spread + 1.0, L0, L1, pair_rng, opt.pairs,
                                   opt.theta_grid),
      0.0);

  // Pointwise bounds along a deterministic normalized run from x0.
  InequalityCheck norm_bound;
  norm_bound.name = "grad_norm_bound";
  InequalityCheck gap;
  gap.name = "gap_lower_bound";
  const auto f_inf = p.f_inf();
  std::optional<double> delta_inf;
  if (f_inf) {
    double s = 0.0;
    bool known = true;
    for (std::size_t i = 0; i < p.num_clients(); ++i) {
      const auto fi = p.client_f_inf(i);
      if (!fi) {
        known = false;
        break;
      }
      s += *f_inf - *fi;
    }
    if (known) delta_inf = s / static_cast<double>(p.num_clients());
  }

  AlgoConfig det = cfg.algo_config();
  det.variant = Variant::NormEF21;
  if (uses_momentum(cfg.algorithm.variant) || carries_momentum(det.rule)) det.rule = NormalizedSqrtK{1.0};
  det.init_mode = InitMode::Auto;
  const double alpha = alpha_of(det.compressor, p.dim());
  InequalityMonitor monitor(p, alpha);
  const RoundObserver observer = [&](const RoundView& v) {
    if (delta_inf) check_grad_norm_bound(norm_bound, p, v.x, v.client_grads, L0, L1, *f_inf, *delta_inf, v.k);
    check_gap_lower_bound(gap, p, v.x, v.client_grads, L0, L1, v.k);
    monitor(v);
  };
  run(p, det, built.x0, cfg.run.K, master.child(MasterStreams::kAlgorithm), observer);

  if (delta_inf) add(norm_bound, opt.diagnostic_tol);
  else skip("grad_norm_bound", "f_inf unknown");
  if (gap.evaluations > 0) add(gap, opt.diagnostic_tol);
  else skip("gap_lower_bound", "client f_inf unknown");

  RngStream comp_rng = checks.child(2);
  add(check_contractivity(det.compressor, p.dim(), comp_rng, opt.contraction_vectors, opt.randk_vectors,
                          opt.randk_draws),
      1e-12);

  if (f_inf) {
    for (const InequalityCheck& c : monitor.results())
      if (c.name == "normalized_descent" || c.name == "lyapunov_descent") add(c, opt.diagnostic_tol);
  } else {
    skip("normalized_descent", "f_inf unknown");
    skip("lyapunov_descent", "f_inf unknown");
  }
  return report;
}

}  // namespace nef
