#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "frfkit/state_space.hpp"
#include "oracles.hpp"

using namespace frfkit;

namespace {

constexpr double kTs = 1e-3;

/// exp(A ts) and the ZOH input matrix by truncated power series.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> zoh_by_series(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double ts) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Identity(n, n) * ts;
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n);
  double fact = 1.0;
  for (int k = 1; k < 40; ++k) {
    term = term * a;
    fact *= k;
    phi += term * std::pow(ts, k) / fact;
    gamma += term * std::pow(ts, k + 1) / (fact * (k + 1));
  }
  return {phi, gamma * b};
}

std::vector<std::vector<double>> rows(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)].push_back(m(i, j));
  return out;
}

TimeSeries random_input(Eigen::Index channels, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd d(channels, n);
  for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = rng.normal();
  return TimeSeries(d, kTs);
}

}  // namespace

TEST(PaperPlant, MatchesStatedMatrices) {
  const auto m = paper_plant();
  EXPECT_EQ(m.n_x(), 4);
  EXPECT_EQ(m.n_u(), 2);
  EXPECT_EQ(m.n_y(), 2);
  EXPECT_DOUBLE_EQ(m.a(1, 0), -173.0);
  EXPECT_DOUBLE_EQ(m.a(1, 3), 1.33);
  EXPECT_DOUBLE_EQ(m.a(3, 0), 166.0);
  EXPECT_DOUBLE_EQ(m.b(3, 1), 53.0);
  EXPECT_FALSE(m.is_discrete());
  EXPECT_TRUE(m.is_stable());
}

TEST(Discretize, MatchesPowerSeries) {
  const auto m = paper_plant();
  const auto d = discretize_zoh(m, kTs);
  const auto [phi, gamma] = zoh_by_series(m.a, m.b, kTs);
  EXPECT_LT((d.a - phi).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LT((d.b - gamma).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(d.c, m.c);
  EXPECT_TRUE(d.is_discrete());
  EXPECT_DOUBLE_EQ(*d.ts, kTs);
  EXPECT_TRUE(d.is_stable());
}

TEST(Discretize, FirstOrderClosedForm) {
  StateSpaceModel m{Eigen::MatrixXd::Constant(1, 1, -2.0), Eigen::MatrixXd::Constant(1, 1, 3.0),
                    Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::MatrixXd::Zero(1, 1), std::nullopt};
  const auto d = discretize_zoh(m, 0.1);
  EXPECT_NEAR(d.a(0, 0), std::exp(-0.2), 1e-15);
  EXPECT_NEAR(d.b(0, 0), 1.5 * (1.0 - std::exp(-0.2)), 1e-15);
}

TEST(Discretize, RejectsBadInput) {
  EXPECT_THROW(discretize_zoh(paper_plant(), 0.0), ValidationError);
  EXPECT_THROW(discretize_zoh(discretize_zoh(paper_plant(), kTs), kTs), ValidationError);
}

TEST(Lsim, MatchesScalarLoopSimulation) {
  const auto m = discretize_zoh(paper_plant(), kTs);
  const auto u = random_input(2, 500, 11);
  Eigen::VectorXd x0(4);
  x0 << 0.1, -0.2, 0.3, 0.05;
  const auto rec = lsim(m, u, x0);
  const auto ref = oracle::plain_simulate(m.a, m.b, m.c, m.d, rows(u.data()), {0.1, -0.2, 0.3, 0.05});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < 500; ++t)
      EXPECT_NEAR(rec.y.data()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)), ref.y[i][t], 1e-12);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(rec.x_n[static_cast<Eigen::Index>(i)], ref.x_final[i], 1e-12);
  EXPECT_EQ(rec.d.data(), u.data());
  EXPECT_TRUE(rec.v.data().isZero());
}

TEST(Lsim, RejectsMismatchedInputs) {
  const auto m = discretize_zoh(paper_plant(), kTs);
  EXPECT_THROW(lsim(m, random_input(1, 10, 1), Eigen::VectorXd::Zero(4)), ValidationError);
  EXPECT_THROW(lsim(m, random_input(2, 10, 1), Eigen::VectorXd::Zero(3)), ValidationError);
  EXPECT_THROW(lsim(paper_plant(), random_input(2, 10, 1), Eigen::VectorXd::Zero(4)), ValidationError);
}

TEST(FrequencyResponse, FirstOrderClosedForms) {
  StateSpaceModel c{Eigen::MatrixXd::Constant(1, 1, -2.0), Eigen::MatrixXd::Constant(1, 1, 3.0),
                    Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::MatrixXd::Constant(1, 1, 0.5), std::nullopt};
  const double w = 1.7;
  EXPECT_NEAR(std::abs(frequency_response(c, w)(0, 0) - (3.0 / (cplx(0, w) + 2.0) + 0.5)), 0.0, 1e-15);
  StateSpaceModel d{Eigen::MatrixXd::Constant(1, 1, 0.8), Eigen::MatrixXd::Constant(1, 1, 1.0),
                    Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::MatrixXd::Zero(1, 1), 0.01};
  const auto z = std::polar(1.0, w * 0.01);
  EXPECT_NEAR(std::abs(frequency_response(d, w)(0, 0) - 2.0 / (z - 0.8)), 0.0, 1e-14);
}

TEST(FrequencyResponse, TrueFrfMatchesPeriodicSteadyState) {
  // Steady-state output DFT over input DFT at excited bins is the FRF.
  const auto m = discretize_zoh(paper_plant(), kTs);
  const std::size_t p = 1000;
  const auto spec = flat_multisine(p, bin_range(1, 499), 1.0, 5, 1);
  const auto d = generate_multisine(spec, kTs);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(2, static_cast<Eigen::Index>(p));
  u.row(1) = d.data().row(0);
  const TimeSeries in(u, kTs);
  const auto rec = lsim(m, in, periodic_steady_state(m, in));
  const auto g = true_frf(m, bin_frequencies(p, kTs));
  std::vector<double> uu(p), y0(p), y1(p);
  for (std::size_t t = 0; t < p; ++t) {
    uu[t] = u(1, static_cast<Eigen::Index>(t));
    y0[t] = rec.y.data()(0, static_cast<Eigen::Index>(t));
    y1[t] = rec.y.data()(1, static_cast<Eigen::Index>(t));
  }
  const auto U = oracle::naive_dft_half(uu), Y0 = oracle::naive_dft_half(y0), Y1 = oracle::naive_dft_half(y1);
  // Near Nyquist |G| is small and the time-domain rounding dominates.
  for (std::size_t k : {1u, 2u, 10u, 100u, 250u, 499u}) {
    const double tol = k < 400 ? 1e-9 : 1e-7;
    EXPECT_LT(oracle::max_rel_diff(Y0[k] / U[k], g.g[k](0, 1)), tol) << k;
    EXPECT_LT(oracle::max_rel_diff(Y1[k] / U[k], g.g[k](1, 1)), tol) << k;
  }
  EXPECT_TRUE(g.is_oracle);
  EXPECT_TRUE(g.has_variance());
}

TEST(FrequencyResponse, RejectsFrequenciesAboveNyquist) {
  const auto m = discretize_zoh(paper_plant(), kTs);
  Eigen::VectorXd w(1);
  w << 1.01 * std::numbers::pi / kTs;
  EXPECT_THROW(true_frf(m, w), ValidationError);
}

TEST(PeriodicSteadyState, ReturnsToInitialStateAfterOnePeriod) {
  const auto m = discretize_zoh(paper_plant(), kTs);
  const auto u = random_input(2, 777, 4);
  const Eigen::VectorXd x0 = periodic_steady_state(m, u);
  const auto rec = lsim(m, u, x0);
  EXPECT_LT((rec.x_n - x0).norm(), 1e-10 * std::max(1.0, x0.norm()));
}

TEST(TransientOracle, MatchesZeroStateMinusSteadyState) {
  const auto m = discretize_zoh(paper_plant(), kTs);
  const std::size_t p = 2000;
  const auto d = generate_multisine(flat_multisine(p, bin_range(1, 999), 1.0, 12, 1), kTs);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(2, static_cast<Eigen::Index>(p));
  u.row(0) = d.data().row(0);
  const TimeSeries in(u, kTs);
  const auto zero = lsim(m, in, Eigen::VectorXd::Zero(4));
  const Eigen::VectorXd xs = periodic_steady_state(m, in);
  const auto steady = lsim(m, in, xs);
  const auto t = transient_oracle(m, Eigen::VectorXd::Zero(4), zero.x_n, p);
  for (Eigen::Index out = 0; out < 2; ++out) {
    std::vector<double> diff(p);
    for (std::size_t i = 0; i < p; ++i)
      diff[i] = zero.y.data()(out, static_cast<Eigen::Index>(i)) - steady.y.data()(out, static_cast<Eigen::Index>(i));
    const auto ref = oracle::naive_dft_half(diff);
    double err = 0.0, energy = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      err += std::norm(t[k][out] - ref[k]);
      energy += std::norm(ref[k]);
    }
    EXPECT_LT(err / energy, 1e-16);
  }
}

TEST(DiscreteTf, EvaluatesAndRealizes) {
  const DiscreteTf k{{0.5, -0.45}, {1.0, -0.5}};
  const auto z = std::polar(1.0, 0.3);
  EXPECT_NEAR(std::abs(k(z) - 0.5 * (z - 0.9) / (z - 0.5)), 0.0, 1e-15);
  const auto ss = k.to_state_space(kTs);
  EXPECT_NEAR(std::abs(frequency_response(ss, 0.3 / kTs)(0, 0) - k(z)), 0.0, 1e-14);
  const DiscreteTf strictly{{1.0, 0.2}, {1.0, -1.1, 0.3}};
  EXPECT_NEAR(std::abs(frequency_response(strictly.to_state_space(kTs), 0.3 / kTs)(0, 0) - strictly(z)), 0.0, 1e-13);
  EXPECT_THROW((DiscreteTf{{1.0, 2.0, 3.0}, {1.0, 0.5}}.validate()), ValidationError);
  EXPECT_THROW((DiscreteTf{{1.0}, {0.0, 1.0}}.validate()), ValidationError);
}

TEST(ClosedLoop, SimulationMatchesDifferenceEquationLoop) {
  const auto plant = discretize_zoh(paper_plant(), kTs);
  const auto k = default_controller(kTs);
  const Eigen::Index n = 3000;
  const auto d = random_input(2, n, 8);
  const auto rec = simulate_closed_loop(plant, k, d, {0.01, 0.02}, 77);
  // Independent loop: plant by scalar recursion, controller as a difference equation.
  std::vector<double> x(4, 0.0), next(4);
  std::vector<std::vector<double>> e(2, std::vector<double>(n, 0.0)), c(2, std::vector<double>(n, 0.0));
  const auto& num = k.loops[0].num;
  const auto& den = k.loops[0].den;
  for (Eigen::Index t = 0; t < n; ++t) {
    double u[2];
    for (int i = 0; i < 2; ++i) {
      double y = 0.0;
      for (int j = 0; j < 4; ++j) y += plant.c(i, j) * x[static_cast<std::size_t>(j)];
      const double ym = y + rec.v.data()(i, t);
      e[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] = -ym;
      double acc = num[0] * e[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
      if (t > 0)
        acc += num[1] * e[static_cast<std::size_t>(i)][static_cast<std::size_t>(t - 1)] -
               den[1] * c[static_cast<std::size_t>(i)][static_cast<std::size_t>(t - 1)];
      c[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] = acc;
      u[i] = d.data()(i, t) + acc;
      EXPECT_NEAR(rec.u.data()(i, t), u[i], 1e-10);
      EXPECT_NEAR(rec.y.data()(i, t), ym, 1e-10);
    }
    for (int r = 0; r < 4; ++r) {
      double acc = 0.0;
      for (int j = 0; j < 4; ++j) acc += plant.a(r, j) * x[static_cast<std::size_t>(j)];
      for (int j = 0; j < 2; ++j) acc += plant.b(r, j) * u[j];
      next[static_cast<std::size_t>(r)] = acc;
    }
    x = next;
  }
}

TEST(ClosedLoop, ZeroControllerPassesExcitationThrough) {
  const auto plant = discretize_zoh(paper_plant(), kTs);
  const auto d = random_input(2, 400, 3);
  const auto rec = simulate_closed_loop(plant, zero_controller(kTs, 2), d, {0.0, 0.0}, 1);
  EXPECT_LT((rec.u.data() - d.data()).cwiseAbs().maxCoeff(), 1e-15);
  const auto open = lsim(plant, d, Eigen::VectorXd::Zero(4));
  EXPECT_LT((rec.y.data() - open.y.data()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ClosedLoop, NoiseIsSeededPerOutput) {
  const auto plant = discretize_zoh(paper_plant(), kTs);
  const auto d = random_input(2, 20000, 3);
  const auto a = simulate_closed_loop(plant, default_controller(kTs), d, {0.5, 2.0}, 9);
  const auto b = simulate_closed_loop(plant, default_controller(kTs), d, {0.5, 2.0}, 9);
  const auto c = simulate_closed_loop(plant, default_controller(kTs), d, {0.5, 2.0}, 10);
  EXPECT_EQ(a.v.data(), b.v.data());
  EXPECT_NE(a.v.data(), c.v.data());
  const double s0 = std::sqrt(a.v.data().row(0).squaredNorm() / 20000.0);
  const double s1 = std::sqrt(a.v.data().row(1).squaredNorm() / 20000.0);
  EXPECT_NEAR(s0, 0.5, 0.02);
  EXPECT_NEAR(s1, 2.0, 0.08);
}

TEST(ClosedLoop, UnstableLoopIsARuntimeDefect) {
  const auto plant = discretize_zoh(paper_plant(), kTs);
  const ControllerConfig hot{std::vector<DiscreteTf>(2, DiscreteTf{{-50.0}, {1.0}}), kTs};
  EXPECT_THROW(simulate_closed_loop(plant, hot, random_input(2, 10, 1), {0.0, 0.0}, 1), RuntimeDefect);
}

TEST(ClosedLoop, OracleSatisfiesLoopIdentities) {
  const auto plant = discretize_zoh(paper_plant(), kTs);
  const auto k = default_controller(kTs);
  const Eigen::VectorXd w = bin_frequencies(200, kTs).segment(1, 99);
  const auto o = closed_loop_oracle(plant, k, w);
  const auto g = true_frf(plant, w);
  for (Eigen::Index b = 0; b < w.size(); ++b) {
    const auto sb = static_cast<std::size_t>(b);
    const Eigen::MatrixXcd loop = Eigen::MatrixXcd::Identity(2, 2) + k.frequency_response(w[b]) * g.g[sb];
    EXPECT_LT((o.s.g[sb] * loop - Eigen::MatrixXcd::Identity(2, 2)).norm(), 1e-12);
    EXPECT_LT((o.gs.g[sb] * o.s.g[sb].inverse() - g.g[sb]).norm(), 1e-12 * g.g[sb].norm());
  }
  const auto o0 = closed_loop_oracle(plant, zero_controller(kTs, 2), w);
  EXPECT_LT((o0.s.g[3] - Eigen::MatrixXcd::Identity(2, 2)).norm(), 1e-15);
}

TEST(ModelJson, RoundTripsAndIsStrict) {
  const auto m = discretize_zoh(paper_plant(), kTs);
  const auto back = model_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.a, m.a);
  EXPECT_EQ(back.b, m.b);
  EXPECT_DOUBLE_EQ(*back.ts, kTs);
  auto j = to_json(m);
  j["E"] = 1;
  EXPECT_THROW(model_from_json(j), ValidationError);
  auto bad = to_json(m);
  bad["B"] = nlohmann::json::array({nlohmann::json::array({1.0})});
  EXPECT_THROW(model_from_json(bad), ValidationError);
}

TEST(Subsystem, PicksRowsAndColumns) {
  const auto m = paper_plant().subsystem({1}, {0});
  EXPECT_EQ(m.n_u(), 1);
  EXPECT_EQ(m.n_y(), 1);
  EXPECT_DOUBLE_EQ(m.b(1, 0), 53.0);
  EXPECT_DOUBLE_EQ(m.c(0, 2), 1.0);
}
