#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "nef/algorithms.hpp"
#include "nef/dataset.hpp"

using namespace nef;

namespace {

// f_i(x) = c_i . x, so grad f_i = c_i everywhere.
class LinearProblem final : public Problem {
 public:
  explicit LinearProblem(std::vector<DenseVector> c) : c_(std::move(c)) {}
  [[nodiscard]] std::size_t dim() const noexcept override { return c_[0].dim(); }
  [[nodiscard]] std::size_t num_clients() const noexcept override { return c_.size(); }
  [[nodiscard]] double client_value(std::size_t i, const DenseVector& x) const override { return dot(c_[i], x); }
  [[nodiscard]] DenseVector client_grad(std::size_t i, const DenseVector&) const override { return c_[i]; }
  [[nodiscard]] DenseVector stochastic_grad(std::size_t i, const DenseVector& x, const SampleSpec&,
                                            RngStream&) const override {
    return client_grad(i, x);
  }
  [[nodiscard]] SmoothnessConstants constants() const override {
    SmoothnessConstants s;
    s.L = 1.0;
    s.L_hat.assign(c_.size(), 1.0);
    s.L0 = 1.0;
    s.L1 = 1.0;
    return s;
  }

 private:
  std::vector<DenseVector> c_;
};

LogisticProblem synthetic_logistic(std::size_t n, std::size_t d, std::size_t clients, std::uint64_t seed) {
  RngStream rng = seeded_rng(seed);
  return LogisticProblem(generate_synthetic(n, d, rng), 0.1, clients);
}

// Collects x^{k+1} after each round.
std::vector<DenseVector> trajectory(const Problem& p, const AlgoConfig& cfg, const DenseVector& x0, std::int64_t K,
                                    const RngStream& rng) {
  std::vector<DenseVector> xs;
  run(p, cfg, x0, K, rng, [&](const RoundView& v) { xs.push_back(v.x_next); });
  return xs;
}

void normalized_move(DenseVector& x, const DenseVector& g, double gamma) {
  const double nrm = norm2(g);
  if (nrm > 0.0)
    for (std::size_t j = 0; j < x.dim(); ++j) x[j] -= gamma * (g[j] / nrm);
}

}  // namespace

// --- init_run --------------------------------------------------------------

TEST(InitRunTest, ZeroMemory) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0, 3);
  AlgoConfig cfg;
  cfg.init_mode = InitMode::ZeroMemory;
  const RunState st = init_run(p, cfg, DenseVector{1.0, 2.0, 3.0, 4.0}, seeded_rng(0));
  ASSERT_EQ(st.clients.size(), 3u);
  for (const ClientState& c : st.clients) EXPECT_EQ(c.g, DenseVector(4));
  EXPECT_EQ(st.server.g, DenseVector(4));
}

TEST(InitRunTest, GradientAtX0WithIdentityGivesExactFirstAggregate) {
  const LogisticProblem p = synthetic_logistic(12, 5, 3, 1);
  AlgoConfig cfg;
  cfg.compressor = CompressorKind::identity();
  cfg.init_mode = InitMode::GradientAtX0;
  const DenseVector x0{0.1, -0.4, 0.3, 2.0, -1.0};
  std::optional<DenseVector> g0;
  run(p, cfg, x0, 0, seeded_rng(0), [&](const RoundView& v) { g0 = v.g; });
  ASSERT_TRUE(g0.has_value());
  EXPECT_EQ(*g0, p.grad(x0));
}

TEST(InitRunTest, MomentumInitialEstimatorIsGradientWithoutNoise) {
  const LogisticProblem p = synthetic_logistic(12, 4, 3, 2);
  AlgoConfig cfg;
  cfg.variant = Variant::NormEF21SGDM;
  cfg.rule = FixedStep{0.01, 0.5};
  cfg.sample = {4, 0.0};
  const DenseVector x0{1.0, 0.0, -1.0, 0.5};
  const RunState st = init_run(p, cfg, x0, seeded_rng(3));
  for (std::size_t i = 0; i < 3; ++i) {
    ASSERT_TRUE(st.clients[i].v.has_value());
    EXPECT_EQ(*st.clients[i].v, p.client_grad(i, x0));
    EXPECT_EQ(st.clients[i].g, DenseVector(4));
  }
}

TEST(InitRunTest, GradientInitRejectedForStochasticVariants) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  AlgoConfig cfg;
  cfg.variant = Variant::EF21SGDM;
  cfg.rule = SgdmRule{};
  cfg.init_mode = InitMode::GradientAtX0;
  EXPECT_THROW(init_run(p, cfg, DenseVector(4), seeded_rng(0)), ConfigError);
}

TEST(AlgoConfigTest, RuleVariantCompatibility) {
  AlgoConfig cfg;
  cfg.variant = Variant::NormEF21SGDM;
  cfg.rule = NormalizedSqrtK{1.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.variant = Variant::NormEF21;
  cfg.rule = SgdmRule{};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.rule = FixedStep{0.1, 1.0};
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.effective_init(), InitMode::GradientAtX0);
  cfg.variant = Variant::EF21SGDM;
  EXPECT_EQ(cfg.effective_init(), InitMode::ZeroMemory);
}

// --- client steps ----------------------------------------------------------

TEST(ClientStepTest, IdentityRecoversGradient) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  RngStream rng = seeded_rng(0);
  const DenseVector x{1.3, -2.2, 0.7, 5.0};
  const ClientState s{DenseVector{0.3, 0.1, -7.0, 1e-3}, std::nullopt};
  const ClientStep out = client_step_deterministic(s, x, p, 0, CompressorKind::identity(), rng);
  EXPECT_EQ(out.state.g, p.client_grad(0, x));
}

TEST(ClientStepTest, ZeroResidualSendsNothing) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  RngStream rng = seeded_rng(0);
  const DenseVector x{1.3, -2.2, 0.7, 5.0};
  const ClientState s{p.client_grad(0, x), std::nullopt};
  const ClientStep out = client_step_deterministic(s, x, p, 0, CompressorKind::top_k(2), rng);
  EXPECT_EQ(out.delta, DenseVector(4));
  EXPECT_EQ(out.state.g, s.g);
}

TEST(ClientStepTest, TopOneResidual) {
  const LinearProblem p({DenseVector{4.0, -3.0, 2.5}});
  RngStream rng = seeded_rng(0);
  const ClientState s{DenseVector{1.0, 2.0, 0.5}, std::nullopt};  // residual [3, -5, 2]
  const ClientStep out = client_step_deterministic(s, DenseVector(3), p, 0, CompressorKind::top_k(1), rng);
  EXPECT_EQ(out.delta, (DenseVector{0.0, -5.0, 0.0}));
  EXPECT_EQ(out.state.g, (DenseVector{1.0, -3.0, 0.5}));
}

TEST(ClientStepTest, MomentumWithEtaOneUsesFreshSample) {
  PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  const DenseVector x{1.0, 2.0, -1.0, 0.0};
  const SampleSpec spec{1, 0.5};
  const ClientState s{DenseVector(4), DenseVector{9.0, 9.0, 9.0, 9.0}};
  RngStream c1 = seeded_rng(1), s1 = seeded_rng(2), s2 = seeded_rng(2);
  const ClientStep out = client_step_momentum(s, x, p, 0, 1.0, CompressorKind::identity(), c1, s1, spec);
  EXPECT_EQ(*out.state.v, p.stochastic_grad(0, x, spec, s2));
}

TEST(ClientStepTest, MomentumReducesToDeterministic) {
  const LogisticProblem p = synthetic_logistic(10, 4, 2, 3);
  const DenseVector x{0.2, -0.1, 0.4, 1.0};
  const ClientState s{DenseVector{0.5, 0.5, -0.5, 0.0}, DenseVector{1.0, 2.0, 3.0, 4.0}};
  RngStream c1 = seeded_rng(4), c2 = seeded_rng(4), sr = seeded_rng(5);
  const ClientStep a = client_step_momentum(s, x, p, 1, 1.0, CompressorKind::identity(), c1, sr, {5, 0.0});
  const ClientStep b = client_step_deterministic(s, x, p, 1, CompressorKind::identity(), c2);
  EXPECT_EQ(a.delta, b.delta);
  EXPECT_EQ(a.state.g, b.state.g);
}

TEST(ClientStepTest, MomentumFixedPoint) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  const DenseVector x{1.0, 2.0, -1.0, 0.5};
  const DenseVector grad = p.client_grad(0, x);
  for (double eta : {0.1, 0.5, 0.9, 1.0}) {
    const ClientState s{DenseVector(4), grad};
    RngStream c = seeded_rng(1), r = seeded_rng(2);
    const ClientStep out = client_step_momentum(s, x, p, 0, eta, CompressorKind::top_k(1), c, r, {1, 0.0});
    EXPECT_LE(norm2(*out.state.v - grad), 1e-15 * norm2(grad));
  }
}

TEST(ClientStepTest, MomentumRejectsBadEta) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  const ClientState s{DenseVector(4), DenseVector(4)};
  RngStream c = seeded_rng(1), r = seeded_rng(2);
  EXPECT_THROW(client_step_momentum(s, DenseVector(4), p, 0, 0.0, CompressorKind::top_k(1), c, r, {}), ParameterError);
  EXPECT_THROW(client_step_momentum(s, DenseVector(4), p, 0, 1.5, CompressorKind::top_k(1), c, r, {}), ParameterError);
}

// --- server step -----------------------------------------------------------

TEST(ServerStepTest, NormalizedUnitStep) {
  ServerState s{DenseVector{1.0, 1.0}, DenseVector(2), {DenseVector{3.0, 4.0}}, 0};
  const std::vector<DenseVector> deltas{DenseVector(2)};
  const ServerState next = server_step(s, deltas, 0.5, true);
  EXPECT_NEAR(next.x[0], 1.0 - 0.3, 1e-16);
  EXPECT_NEAR(next.x[1], 1.0 - 0.4, 1e-16);
  EXPECT_NEAR(norm2(next.x - s.x), 0.5, 1e-15);
  EXPECT_EQ(next.k, 1);
}

TEST(ServerStepTest, NormalizedZeroAggregateDoesNotMove) {
  ServerState s{DenseVector{1.0, -2.0}, DenseVector(2), {DenseVector(2), DenseVector(2)}, 0};
  const std::vector<DenseVector> deltas{DenseVector(2), DenseVector(2)};
  EXPECT_EQ(server_step(s, deltas, 0.5, true).x, s.x);
}

TEST(ServerStepTest, PlainStepIsGradientDescent) {
  const PolynomialProblem p = make_polynomial(3, 1.0, 4.0);
  const DenseVector x{1.0, -2.0, 3.0};
  ServerState s{x, DenseVector(3), {DenseVector(3)}, 0};
  const std::vector<DenseVector> deltas{p.grad(x)};
  const ServerState next = server_step(s, deltas, 0.1, false);
  DenseVector expected = x;
  const DenseVector g = p.grad(x);
  for (std::size_t j = 0; j < 3; ++j) expected[j] -= 0.1 * g[j];
  EXPECT_EQ(next.x, expected);
}

TEST(ServerStepTest, ClientCountMismatch) {
  ServerState s{DenseVector(2), DenseVector(2), {DenseVector(2), DenseVector(2)}, 0};
  const std::vector<DenseVector> deltas{DenseVector(2)};
  EXPECT_THROW(server_step(s, deltas, 0.1, true), ParameterError);
}

TEST(ServerStepTest, MessagesKeepMirrorsEqualToClientMemory) {
  // A large previous memory next to a tiny target: g_prev + (target - g_prev) rounds away from target.
  const PolynomialProblem p = make_polynomial(3, 1.0, 4.0);
  const DenseVector x{1e-3, -2.0, 0.3};
  const ClientState c{DenseVector{7.0, -1e5, 3.0}, std::nullopt};
  RngStream rng = seeded_rng(0);
  for (const CompressorKind& comp : {CompressorKind::identity(), CompressorKind::top_k(2)}) {
    const ClientStep step = client_step_deterministic(c, x, p, 0, comp, rng);
    ServerState s{x, DenseVector(3), {c.g}, 0};
    const std::vector<Message> msgs{step.message};
    const ServerState next = server_step(s, msgs, 0.1, true);
    EXPECT_EQ(next.mirrors[0], step.state.g) << comp.name();
    EXPECT_EQ(step.message.index.size(), comp.retained(3)) << comp.name();
  }
  const std::vector<Message> bad{Message{{5}, {1.0}}};
  ServerState s{x, DenseVector(3), {c.g}, 0};
  EXPECT_THROW(server_step(s, bad, 0.1, true), DimensionError);
}

// --- run -------------------------------------------------------------------

TEST(RunTest, RowCountAndMetrics) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  const AlgoConfig cfg;
  const DenseVector x0{20.0, 19.0, 21.0, 20.5};
  const RunRecord zero = run(p, cfg, x0, 0, seeded_rng(0));
  ASSERT_EQ(zero.rows.size(), 1u);
  EXPECT_EQ(zero.rows[0].f_value, p.value(x0));
  EXPECT_EQ(zero.rows[0].grad_norm_sq, squared_norm(p.grad(x0)));

  const RunRecord rec = run(p, cfg, x0, 100, seeded_rng(0));
  ASSERT_EQ(rec.rows.size(), 101u);
  const std::int64_t payload = payload_bits(cfg.compressor, 4);
  for (std::size_t k = 0; k < rec.rows.size(); ++k) {
    EXPECT_EQ(rec.rows[k].k, static_cast<std::int64_t>(k));
    EXPECT_EQ(rec.rows[k].bits_cumulative, static_cast<std::int64_t>(k + 1) * payload);
    if (k > 0) {
      EXPECT_LE(rec.rows[k].min_grad_norm, rec.rows[k - 1].min_grad_norm);
    }
  }
  EXPECT_EQ(rec.gamma, 1.0 / std::sqrt(101.0));
}

TEST(RunTest, Deterministic) {
  const LogisticProblem p = synthetic_logistic(20, 6, 4, 9);
  AlgoConfig cfg;
  cfg.variant = Variant::NormEF21SGDM;
  cfg.compressor = CompressorKind::rand_k(2);
  cfg.rule = SgdmRule{};
  const DenseVector x0(6, 0.5);
  const RunRecord a = run(p, cfg, x0, 200, seeded_rng(17));
  const RunRecord b = run(p, cfg, x0, 200, seeded_rng(17));
  EXPECT_EQ(a.rows, b.rows);
  EXPECT_EQ(a.final_x, b.final_x);
  const RunRecord c = run(p, cfg, x0, 200, seeded_rng(18));
  EXPECT_NE(a.final_x, c.final_x);
}

TEST(RunTest, ParallelClientsMatchSerial) {
  const LogisticProblem p = synthetic_logistic(40, 8, 8, 10);
  AlgoConfig cfg;
  cfg.variant = Variant::NormEF21SGDM;
  cfg.compressor = CompressorKind::rand_k(3);
  cfg.rule = SgdmRule{};
  const DenseVector x0(8, -0.25);
  const RunRecord serial = run(p, cfg, x0, 150, seeded_rng(3));
  cfg.parallel_clients = true;
  const RunRecord parallel = run(p, cfg, x0, 150, seeded_rng(3));
  EXPECT_EQ(serial.rows, parallel.rows);
  EXPECT_EQ(serial.final_x, parallel.final_x);
}

TEST(RunTest, StepLengthLawAndMemoryConsistency) {
  const LogisticProblem p = synthetic_logistic(20, 6, 5, 11);
  for (Variant v : {Variant::NormEF21, Variant::EF21}) {
    AlgoConfig cfg;
    cfg.variant = v;
    cfg.compressor = CompressorKind::top_k(2);
    cfg.rule = FixedStep{0.05, 1.0};
    run(p, cfg, DenseVector(6, 1.0), 60, seeded_rng(0), [&](const RoundView& view) {
      const double step = norm2(view.x_next - view.x);
      if (is_normalized(v)) {
        if (norm2(view.g) > 0.0) {
          EXPECT_NEAR(step, view.gamma, 1e-12);
        }
      } else {
        EXPECT_NEAR(step, view.gamma * norm2(view.g), 1e-12);
      }
      std::vector<DenseVector> gs;
      for (const ClientState& c : view.clients) gs.push_back(c.g);
      EXPECT_EQ(mean_of(gs), view.g);
    });
  }
}

TEST(RunTest, NonFiniteIterateReported) {
  const PolynomialProblem p = make_polynomial(2, 1.0, 4.0);
  AlgoConfig cfg;
  cfg.variant = Variant::EF21;
  cfg.compressor = CompressorKind::identity();
  cfg.rule = FixedStep{10.0, 1.0};
  EXPECT_THROW(run(p, cfg, DenseVector{50.0, 50.0}, 50, seeded_rng(0)), NumericalError);
}

// --- reduction identities (bitwise) ------------------------------------------

TEST(ReductionTest, EF21IdentitySingleClientIsGradientDescent) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  AlgoConfig cfg;
  cfg.variant = Variant::EF21;
  cfg.compressor = CompressorKind::identity();
  cfg.rule = FixedStep{0.01, 1.0};
  const DenseVector x0{2.0, -1.5, 0.7, 3.1};
  const auto xs = trajectory(p, cfg, x0, 49, seeded_rng(5));

  DenseVector x = x0;
  for (std::size_t k = 0; k < 50; ++k) {
    const DenseVector g = p.grad(x);
    for (std::size_t j = 0; j < x.dim(); ++j) x[j] -= 0.01 * g[j];
    ASSERT_EQ(xs[k], x) << "round " << k;
  }
}

TEST(ReductionTest, NormEF21IdentityIsNormalizedGradientDescent) {
  const PolynomialProblem poly = make_polynomial(4, 1.0, 4.0);
  const LogisticProblem logi = synthetic_logistic(20, 5, 4, 12);
  const std::pair<const Problem*, DenseVector> cases[] = {{&poly, DenseVector{20.0, 19.5, 21.0, 18.0}},
                                                          {&logi, DenseVector{0.5, -1.0, 0.0, 2.0, 1.0}}};
  for (const auto& [p, x0] : cases) {
    AlgoConfig cfg;
    cfg.compressor = CompressorKind::identity();
    cfg.rule = NormalizedSqrtK{1.0};
    const double gamma = 1.0 / std::sqrt(50.0);
    const auto xs = trajectory(*p, cfg, x0, 49, seeded_rng(6));

    DenseVector x = x0;
    for (std::size_t k = 0; k < 50; ++k) {
      normalized_move(x, p->grad(x), gamma);
      ASSERT_EQ(xs[k], x) << "round " << k;
    }
  }
}

TEST(ReductionTest, MomentumWithEtaOneNoNoiseFullBatchIsNormEF21) {
  const LogisticProblem p = synthetic_logistic(20, 6, 4, 13);  // shards of 5
  const DenseVector x0{0.3, -0.7, 1.1, 0.0, -0.2, 0.9};
  for (const CompressorKind& comp : {CompressorKind::top_k(2), CompressorKind::rand_k(2)}) {
    AlgoConfig sgdm;
    sgdm.variant = Variant::NormEF21SGDM;
    sgdm.compressor = comp;
    sgdm.rule = FixedStep{0.05, 1.0};
    sgdm.sample = {5, 0.0};
    AlgoConfig det = sgdm;
    det.variant = Variant::NormEF21;
    det.init_mode = InitMode::ZeroMemory;
    const auto a = trajectory(p, sgdm, x0, 49, seeded_rng(7));
    const auto b = trajectory(p, det, x0, 49, seeded_rng(7));
    ASSERT_EQ(a.size(), 50u);
    for (std::size_t k = 0; k < 50; ++k) ASSERT_EQ(a[k], b[k]) << comp.name() << " round " << k;
  }
}

TEST(ReductionTest, MomentumIdentityIsNormalizedSgdm) {
  const LogisticProblem p = synthetic_logistic(20, 6, 4, 14);
  const DenseVector x0{0.3, -0.7, 1.1, 0.0, -0.2, 0.9};
  const double gamma = 0.02;
  const double eta = 0.3;
  const SampleSpec spec{2, 0.0};
  AlgoConfig cfg;
  cfg.variant = Variant::NormEF21SGDM;
  cfg.compressor = CompressorKind::identity();
  cfg.rule = FixedStep{gamma, eta};
  cfg.sample = spec;
  const RngStream master = seeded_rng(8);
  const auto xs = trajectory(p, cfg, x0, 49, master);

  // ||SGDM||: v_i <- (1 - eta) v_i + eta * sample, x <- x - gamma v/||v||, v = mean v_i.
  const std::size_t n = p.num_clients();
  std::vector<DenseVector> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream s = master.child(StreamTags::kSample).child(0).child(i);
    v[i] = p.stochastic_grad(i, x0, spec, s);
  }
  DenseVector x = x0;
  for (std::size_t k = 0; k < 50; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      RngStream s = master.child(StreamTags::kSample).child(k + 1).child(i);
      const DenseVector sample = p.stochastic_grad(i, x, spec, s);
      for (std::size_t j = 0; j < x.dim(); ++j) v[i][j] = (1.0 - eta) * v[i][j] + eta * sample[j];
    }
    normalized_move(x, mean_of(v), gamma);
    ASSERT_EQ(xs[k], x) << "round " << k;
  }
}

// --- Lyapunov value --------------------------------------------------------

TEST(LyapunovTest, VanishesAtStationaryPoint) {
  const PolynomialProblem p = make_polynomial(3, 1.0, 4.0, 2);
  const std::vector<ClientState> clients{{DenseVector(3), std::nullopt}, {DenseVector(3), std::nullopt}};
  EXPECT_EQ(lyapunov_value(DenseVector(3), clients, p, 0.1, 0.5, 0.0), 0.0);
}

TEST(LyapunovTest, IdentityCompressorLeavesOnlyGap) {
  const PolynomialProblem p = make_polynomial(4, 1.0, 4.0);
  AlgoConfig cfg;
  cfg.compressor = CompressorKind::identity();
  cfg.rule = NormalizedSqrtK{1.0};
  run(p, cfg, DenseVector{3.0, -2.0, 1.0, 4.0}, 20, seeded_rng(0), [&](const RoundView& v) {
    EXPECT_EQ(lyapunov_value(v.x, v.clients, p, v.gamma, 1.0, 0.0), p.value(v.x));
  });
}

TEST(LyapunovTest, BoundedBelowByGap) {
  const PolynomialProblem p = make_polynomial(4, 4.0, 4.0, 1);
  AlgoConfig cfg;
  run(p, cfg, DenseVector{20.0, 21.0, 19.0, 20.0}, 200, seeded_rng(0), [&](const RoundView& v) {
    EXPECT_GE(lyapunov_value(v.x, v.clients, p, v.gamma, 0.25, 0.0), p.value(v.x));
  });
}
