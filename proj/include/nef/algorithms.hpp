#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "nef/compressors.hpp"
#include "nef/core.hpp"
#include "nef/problems.hpp"
#include "nef/schedules.hpp"

namespace nef {

enum class Variant { EF21, NormEF21, EF21SGDM, NormEF21SGDM };

[[nodiscard]] constexpr bool is_normalized(Variant v) noexcept {
  return v == Variant::NormEF21 || v == Variant::NormEF21SGDM;
}
[[nodiscard]] constexpr bool uses_momentum(Variant v) noexcept {
  return v == Variant::EF21SGDM || v == Variant::NormEF21SGDM;
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::EF21: return "ef21";
    case Variant::NormEF21: return "norm_ef21";
    case Variant::EF21SGDM: return "ef21_sgdm";
    case Variant::NormEF21SGDM: return "norm_ef21_sgdm";
  }
  return "?";
}

/// Starting value of the error-feedback memories g_i^{-1}.
/// Auto: gradient at x0 for deterministic variants, zero for momentum ones.
enum class InitMode { Auto, ZeroMemory, GradientAtX0 };

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct AlgoConfig {
  Variant variant = Variant::NormEF21;
  CompressorKind compressor = CompressorKind::top_k(1);
  StepsizeRule rule = NormalizedSqrtK{1.0};
  InitMode init_mode = InitMode::Auto;
  SampleSpec sample{};  // momentum variants only
  bool parallel_clients = false;

  [[nodiscard]] InitMode effective_init() const noexcept {
    if (init_mode != InitMode::Auto) return init_mode;
    return uses_momentum(variant) ? InitMode::ZeroMemory : InitMode::GradientAtX0;
  }

  void validate() const {
    if (uses_momentum(variant)) {
      if (!carries_momentum(rule))
        throw ConfigError("algorithm: " + variant_name(variant) + " needs the sgdm or fixed rule, got " +
                          rule_name(rule));
      if (init_mode == InitMode::GradientAtX0)
        throw ConfigError("algorithm: gradient-at-x0 memory init requires a deterministic variant");
      if (sample.batch == 0) throw ConfigError("algorithm: batch must be >= 1");
      if (!(sample.sigma >= 0.0)) throw ConfigError("algorithm: noise sigma must be >= 0");
    } else if (std::holds_alternative<SgdmRule>(rule)) {
      throw ConfigError("algorithm: the sgdm rule applies to momentum variants only");
    }
  }
};

/// Per-client memories: g (error feedback) and v (momentum, when used).
struct ClientState {
  DenseVector g;
  std::optional<DenseVector> v;
};

/// Server iterate, aggregate g = mean_i g_i, and its mirror of every g_i
/// rebuilt from the received messages.
struct ServerState {
  DenseVector x;
  DenseVector g;
  std::vector<DenseVector> mirrors;
  std::int64_t k = 0;
};

struct RunState {
  ServerState server;
  std::vector<ClientState> clients;
};

/// Independent RNG streams per (purpose, round, client).
struct StreamTags {
  static constexpr std::uint64_t kCompress = 1;
  static constexpr std::uint64_t kSample = 2;
};

/// What a client puts on the wire: the retained coordinates and the updated
/// memory value at each. The receiver overwrites its mirror there.
struct Message {
  std::vector<std::size_t> index;
  std::vector<double> value;
};

inline void apply_message(DenseVector& mirror, const Message& m) {
  for (std::size_t t = 0; t < m.index.size(); ++t) mirror[m.index[t]] = m.value[t];
}

/// Round 0 is initialization; round k of the main loop uses index k + 1.
inline RngStream client_stream(const RngStream& master, std::uint64_t tag, std::uint64_t round,
                               std::size_t client) {
  return master.child(tag).child(round).child(client);
}

namespace detail {

// Retained coordinates j of Delta = C(target - memory) are overwritten with
// target[j]. Every compressor here keeps retained residual entries unscaled,
// so this is memory + Delta without the rounding of the addition.
inline DenseVector error_feedback_update(DenseVector& memory, const DenseVector& target,
                                         const CompressorKind& compressor, RngStream& rng, Message& message) {
  DenseVector delta = compress(compressor, target - memory, rng);
  message.index.clear();
  message.value.clear();
  for (std::size_t j = 0; j < delta.dim(); ++j) {
    if (delta[j] == 0.0) continue;
    memory[j] = target[j];
    message.index.push_back(j);
    message.value.push_back(target[j]);
  }
  return delta;
}

inline void absorb(DenseVector& memory, const DenseVector& delta) {
  for (std::size_t j = 0; j < memory.dim(); ++j) memory[j] += delta[j];
}

inline void momentum_update(DenseVector& v, const DenseVector& sample, double eta) {
  for (std::size_t j = 0; j < v.dim(); ++j) v[j] = (1.0 - eta) * v[j] + eta * sample[j];
}

template <class Fn>
void for_each_client(std::size_t n, bool parallel, Fn&& fn) {
  const std::size_t workers = parallel ? std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency())) : 1;
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
}

}  // namespace detail

struct ClientStep {
  DenseVector delta;
  ClientState state;
  Message message;
};

/// Deterministic client round: Delta = C(grad f_i(x) - g_prev), g_new = g_prev + Delta.
inline ClientStep client_step_deterministic(const ClientState& state, const DenseVector& x, const Problem& problem,
                                            std::size_t i, const CompressorKind& compressor, RngStream& rng) {
  const DenseVector grad = problem.client_grad(i, x);
  state.g.check_same_dim(grad, "client_step_deterministic");
  ClientStep out{DenseVector{}, state, {}};
  out.delta = detail::error_feedback_update(out.state.g, grad, compressor, rng, out.message);
  return out;
}

/// Momentum client round: v = (1-eta) v_prev + eta * stochastic gradient,
/// Delta = C(v - g_prev), g_new = g_prev + Delta.
inline ClientStep client_step_momentum(const ClientState& state, const DenseVector& x, const Problem& problem,
                                       std::size_t i, double eta, const CompressorKind& compressor,
                                       RngStream& compress_rng, RngStream& sample_rng, const SampleSpec& sample) {
  if (!(eta > 0.0 && eta <= 1.0)) throw ParameterError("client_step_momentum: eta must lie in (0, 1]");
  if (!state.v) throw ConfigError("client_step_momentum: client has no momentum state");
  const DenseVector sg = problem.stochastic_grad(i, x, sample, sample_rng);
  ClientStep out{DenseVector{}, state, {}};
  out.state.v->check_same_dim(sg, "client_step_momentum");
  detail::momentum_update(*out.state.v, sg, eta);
  out.delta = detail::error_feedback_update(out.state.g, *out.state.v, compressor, compress_rng, out.message);
  return out;
}

namespace detail {

inline ServerState finish_server_step(ServerState server, double gamma, bool normalized) {
  server.g = mean_of(server.mirrors);
  if (normalized) {
    const double nrm = norm2(server.g);
    if (nrm > 0.0)
      for (std::size_t j = 0; j < server.x.dim(); ++j) server.x[j] -= gamma * (server.g[j] / nrm);
  } else {
    for (std::size_t j = 0; j < server.x.dim(); ++j) server.x[j] -= gamma * server.g[j];
  }
  ++server.k;
  return server;
}

inline void check_server_inputs(const ServerState& server, std::size_t messages, double gamma) {
  if (messages != server.mirrors.size())
    throw ParameterError("server_step: got " + std::to_string(messages) + " messages for " +
                         std::to_string(server.mirrors.size()) + " clients");
  if (!(gamma > 0.0)) throw ParameterError("server_step: gamma must be positive");
}

}  // namespace detail

/// Adds one increment per client to its mirror, averages the mirrors, then moves x.
/// Normalized: x -= gamma g/||g|| (no move when g = 0). Otherwise x -= gamma g.
inline ServerState server_step(ServerState server, std::span<const DenseVector> deltas, double gamma,
                               bool normalized) {
  detail::check_server_inputs(server, deltas.size(), gamma);
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    server.mirrors[i].check_same_dim(deltas[i], "server_step");
    detail::absorb(server.mirrors[i], deltas[i]);
  }
  return detail::finish_server_step(std::move(server), gamma, normalized);
}

/// Same round driven by wire messages; mirrors then match client memories bitwise.
inline ServerState server_step(ServerState server, std::span<const Message> messages, double gamma,
                               bool normalized) {
  detail::check_server_inputs(server, messages.size(), gamma);
  for (std::size_t i = 0; i < messages.size(); ++i) {
    for (std::size_t j : messages[i].index)
      if (j >= server.mirrors[i].dim()) throw DimensionError("server_step: message index out of range");
    apply_message(server.mirrors[i], messages[i]);
  }
  return detail::finish_server_step(std::move(server), gamma, normalized);
}

inline RunState init_run(const Problem& problem, const AlgoConfig& config, const DenseVector& x0,
                         const RngStream& rng) {
  config.validate();
  if (x0.dim() != problem.dim())
    throw DimensionError("init_run: x0 has dimension " + std::to_string(x0.dim()) + ", problem has " +
                         std::to_string(problem.dim()));
  const std::size_t n = problem.num_clients();
  const std::size_t d = problem.dim();
  RunState st;
  st.clients.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ClientState& c = st.clients[i];
    c.g = config.effective_init() == InitMode::GradientAtX0 ? problem.client_grad(i, x0) : DenseVector(d);
    if (uses_momentum(config.variant)) {
      RngStream s = client_stream(rng, StreamTags::kSample, 0, i);
      c.v = problem.stochastic_grad(i, x0, config.sample, s);
    }
  }
  st.server.x = x0;
  st.server.mirrors.reserve(n);
  for (const ClientState& c : st.clients) st.server.mirrors.push_back(c.g);
  st.server.g = mean_of(st.server.mirrors);
  st.server.k = 0;
  return st;
}

/// Metrics at x^k. bits counts what each client has sent through round k.
struct MetricRow {
  std::int64_t k = 0;
  double f_value = 0.0;
  double grad_norm_sq = 0.0;
  double min_grad_norm = 0.0;
  std::int64_t bits_cumulative = 0;
  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct RunRecord {
  std::vector<MetricRow> rows;  // rows[k] describes x^k, k = 0..K
  DenseVector final_x;          // x^{K+1}
  double gamma = 0.0;
  double eta = 1.0;
  std::uint64_t seed = 0;

  [[nodiscard]] double min_grad_norm_sq() const {
    if (rows.empty()) return std::numeric_limits<double>::infinity();
    return rows.back().min_grad_norm * rows.back().min_grad_norm;
  }
};

/// Read-only view handed to observers after each round k.
struct RoundView {
  std::int64_t k;
  const DenseVector& x;                          // x^k
  const DenseVector& x_next;                     // x^{k+1}
  const DenseVector& g;                          // server aggregate g^k
  std::span<const DenseVector> client_grads;     // grad f_i(x^k)
  std::span<const ClientState> clients;          // memories after round k
  double gamma;
};

using RoundObserver = std::function<void(const RoundView&)>;

/// Executes rounds k = 0..K. The stepsize rule is resolved once for horizon K.
inline RunRecord run(const Problem& problem, const AlgoConfig& config, const DenseVector& x0, std::int64_t K,
                     const RngStream& rng, const RoundObserver& observer = {}) {
  if (K < 0) throw ParameterError("run: K must be >= 0");
  config.validate();
  const std::size_t n = problem.num_clients();
  const std::size_t d = problem.dim();
  const SmoothnessConstants sc = problem.constants();
  const double alpha = alpha_of(config.compressor, d);
  const ResolvedSteps steps = resolve(config.rule, {K, alpha, sc.L, sc.L_tilde(), sc.L1});
  const std::int64_t bits_per_round = payload_bits(config.compressor, d);
  const bool normalized = is_normalized(config.variant);
  const bool momentum = uses_momentum(config.variant);

  RunState st = init_run(problem, config, x0, rng);
  RunRecord rec;
  rec.gamma = steps.gamma;
  rec.eta = momentum ? steps.eta : 1.0;
  rec.seed = rng.seed();
  rec.rows.reserve(static_cast<std::size_t>(K) + 1);

  std::vector<DenseVector> grads(n);
  std::vector<Message> messages(n);
  double running_min = std::numeric_limits<double>::infinity();

  for (std::int64_t k = 0; k <= K; ++k) {
    const DenseVector& x = st.server.x;
    const auto round = static_cast<std::uint64_t>(k) + 1;
    detail::for_each_client(n, config.parallel_clients, [&](std::size_t i) {
      grads[i] = problem.client_grad(i, x);
      RngStream crng = client_stream(rng, StreamTags::kCompress, round, i);
      ClientState& c = st.clients[i];
      if (momentum) {
        RngStream srng = client_stream(rng, StreamTags::kSample, round, i);
        const DenseVector sg = problem.stochastic_grad(i, x, config.sample, srng);
        detail::momentum_update(*c.v, sg, steps.eta);
        detail::error_feedback_update(c.g, *c.v, config.compressor, crng, messages[i]);
      } else {
        detail::error_feedback_update(c.g, grads[i], config.compressor, crng, messages[i]);
      }
    });

    MetricRow row;
    row.k = k;
    row.f_value = problem.value(x);
    const DenseVector full = mean_of(grads);
    row.grad_norm_sq = squared_norm(full);
    running_min = std::min(running_min, std::sqrt(row.grad_norm_sq));
    row.min_grad_norm = running_min;
    row.bits_cumulative = (k + 1) * bits_per_round;
    rec.rows.push_back(row);

    ServerState next = server_step(st.server, std::span<const Message>(messages), steps.gamma, normalized);
    if (!next.x.all_finite())
      throw NumericalError("run: iterate became non-finite at round " + std::to_string(k));
    if (observer) observer(RoundView{k, st.server.x, next.x, next.g, grads, st.clients, steps.gamma});
    st.server = std::move(next);
  }
  rec.final_x = st.server.x;
  return rec;
}

/// V = f(x) - f_inf + (2 gamma / (1 - sqrt(1 - alpha))) (1/n) sum ||grad f_i(x) - g_i||.
/// Pair x^k with the memories produced in round k.
inline double lyapunov_value(const DenseVector& x, std::span<const ClientState> clients, const Problem& problem,
                             double gamma, double alpha, double f_inf) {
  detail::check_alpha(alpha, "lyapunov_value");
  if (clients.size() != problem.num_clients()) throw ParameterError("lyapunov_value: client count mismatch");
  double gap = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) gap += norm2(problem.client_grad(i, x) - clients[i].g);
  gap /= static_cast<double>(clients.size());
  const double weight = 2.0 * gamma / (1.0 - std::sqrt(1.0 - alpha));
  return problem.value(x) - f_inf + weight * gap;
}

}  // namespace nef
