#include <cmath>
#include <complex>
#include <vector>

#include <gtest/gtest.h>

#include "frfkit/estimators.hpp"
#include "frfkit/state_space.hpp"
#include "lpm_synthetic.hpp"

using namespace frfkit;

namespace {

constexpr double kTs = 1e-3;
using synthetic::synthesize;

}  // namespace

TEST(LpmConfig, DefaultsAreNarrowestSolvableWindow) {
  const auto c = LpmConfig::defaults(1);
  EXPECT_EQ(c.order, 2);
  EXPECT_EQ(c.dof_margin, 3);
  EXPECT_EQ(c.parameter_count(1), 6);
  EXPECT_EQ(c.half_width, 4);
  EXPECT_EQ(LpmConfig::defaults(2).half_width, 6);
  EXPECT_EQ(LpmConfig::defaults(1, 1).half_width, 3);
  EXPECT_THROW((LpmConfig{2, 2, 3}.validate(1)), ValidationError);
  EXPECT_THROW((LpmConfig{-1, 4, 3}.validate(1)), ValidationError);
  EXPECT_NO_THROW((LpmConfig{2, 3, 1}.validate(1)));
}

TEST(LpmEdgePolicy, ShiftsWindowInward) {
  const LpmConfig c{2, 4, 3};
  EXPECT_EQ(lpm_edge_policy(0, 100, c), std::make_pair(Eigen::Index{0}, Eigen::Index{8}));
  EXPECT_EQ(lpm_edge_policy(3, 100, c), std::make_pair(Eigen::Index{0}, Eigen::Index{8}));
  EXPECT_EQ(lpm_edge_policy(50, 100, c), std::make_pair(Eigen::Index{46}, Eigen::Index{54}));
  EXPECT_EQ(lpm_edge_policy(99, 100, c), std::make_pair(Eigen::Index{91}, Eigen::Index{99}));
  EXPECT_THROW(lpm_edge_policy(0, 8, c), ValidationError);
}

class LpmExactRecovery : public ::testing::TestWithParam<std::tuple<int, int>> {};

TEST_P(LpmExactRecovery, RecoversLocalPolynomialCoefficients) {
  const auto [order, nu] = GetParam();
  const Eigen::Index ny = 2, n_bins = 120;
  const auto data = synthesize(order, ny, nu, n_bins, 1000 + static_cast<std::uint64_t>(order * 10 + nu));
  const auto cfg = LpmConfig::defaults(nu, order);
  const auto res = lpm_local_models(data.u, data.y, cfg);
  double worst = 0.0;
  for (Eigen::Index k = cfg.half_width; k < n_bins - cfg.half_width; ++k) {
    const auto& th = res.theta[static_cast<std::size_t>(k)];
    ASSERT_TRUE(th.has_value()) << k;
    for (int s = 0; s <= order; ++s) {
      const auto gs = data.sys.local_g(static_cast<double>(k), s);
      const auto ts = data.sys.local_t(static_cast<double>(k), s);
      worst = std::max(worst, (th->theta_g[static_cast<std::size_t>(s)] - gs).norm() / std::max(gs.norm(), 1e-300));
      worst = std::max(worst, (th->theta_t[static_cast<std::size_t>(s)] - ts).norm() / std::max(ts.norm(), 1e-300));
    }
    EXPECT_LT((res.frf.g[static_cast<std::size_t>(k)] - data.sys.g_at(static_cast<double>(k))).norm(), 1e-10);
  }
  EXPECT_LT(worst, 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Orders, LpmExactRecovery,
                         ::testing::Combine(::testing::Values(1, 2, 3), ::testing::Values(1, 2)));

TEST(Lpm, ExactDataLeavesNoResidualVariance) {
  const auto data = synthesize(2, 1, 1, 60, 5);
  const auto e = lpm_fit(data.u, data.y);
  ASSERT_TRUE(e.has_variance());
  ASSERT_TRUE(e.has_transient());
  for (const auto& v : e.variance) EXPECT_LT(v(0, 0), 1e-20);
  EXPECT_TRUE(e.defects.empty());
}

TEST(Lpm, RankDeficientWindowIsADefect) {
  auto data = synthesize(2, 1, 1, 60, 6);
  // Zero input over a stretch wider than the window: the G columns vanish.
  for (Eigen::Index k = 20; k < 40; ++k) data.u.windows[0](0, k) = 0.0;
  const auto e = lpm_fit(data.u, data.y);
  EXPECT_TRUE(e.is_defect(30));
  EXPECT_FALSE(e.is_defect(5));
  bool found = false;
  for (const auto& d : e.defects) found |= d.reason.find("rank-deficient") != std::string::npos;
  EXPECT_TRUE(found);
}

TEST(Lpm, RejectsMultipleWindowsAndTooFewBins) {
  auto data = synthesize(1, 1, 1, 30, 7);
  auto two = data.u;
  two.windows.push_back(two.windows.front());
  auto y2 = data.y;
  y2.windows.push_back(y2.windows.front());
  EXPECT_THROW(lpm_fit(two, y2), ValidationError);
  const auto tiny = synthesize(1, 1, 1, 6, 8);
  EXPECT_THROW(lpm_fit(tiny.u, tiny.y), ValidationError);
}

TEST(Lpm, RemovesTransientOfZeroStateExperiment) {
  // One period of a zero-state response: ETFE carries the transient as
  // leakage, LPM models it and matches the transient oracle.
  const auto m = discretize_zoh(paper_plant(), kTs).subsystem({0}, {0});
  const std::size_t n = 20000;
  const auto u = generate_multisine(flat_multisine(n, bin_range(1, n / 2 - 1), 1.0, 3, 1), kTs);
  const auto rec = lsim(m, u, Eigen::VectorXd::Zero(m.n_x()));
  const auto us = spectra({u}), ys = spectra({rec.y});
  const auto e = lpm_fit(us, ys);
  const auto tfe = etfe(us, ys);
  const auto g = true_frf(m, us.bin_frequencies);
  const auto t = transient_oracle(m, Eigen::VectorXd::Zero(m.n_x()), rec.x_n, n);
  double lpm_err = 0.0, etfe_err = 0.0, t_err = 0.0, t_ref = 0.0;
  for (Eigen::Index k = 200; k < 2000; ++k) {
    const auto sk = static_cast<std::size_t>(k);
    lpm_err = std::max(lpm_err, std::abs(e.g[sk](0, 0) - g.g[sk](0, 0)));
    etfe_err = std::max(etfe_err, std::abs(tfe.g[sk](0, 0) - g.g[sk](0, 0)));
    t_err += std::norm(e.transient[sk][0] - t[sk][0]);
    t_ref += std::norm(t[sk][0]);
  }
  EXPECT_LT(lpm_err, etfe_err / 100.0);
  EXPECT_LT(t_err / t_ref, 1e-6);
}

TEST(Lpm, VarianceMatchesMonteCarloSpread) {
  const auto m = discretize_zoh(paper_plant(), kTs).subsystem({1}, {1});
  const std::size_t n = 2000, runs = 300, bin = 300;
  const auto u = generate_multisine(flat_multisine(n, bin_range(1, n / 2 - 1), 1.0, 4, 1), kTs);
  const auto rec = lsim(m, u, Eigen::VectorXd::Zero(m.n_x()));
  const auto us = spectra({u});
  std::vector<cplx> est;
  double predicted = 0.0;
  for (std::size_t r = 0; r < runs; ++r) {
    Rng rng(7000 + r);
    Eigen::MatrixXd y = rec.y.data();
    for (Eigen::Index i = 0; i < y.cols(); ++i) y(0, i) += 0.01 * rng.normal();
    const auto e = lpm_fit(us, spectra({TimeSeries(y, kTs)}));
    est.push_back(e.g[bin](0, 0));
    predicted += e.variance[bin](0, 0);
  }
  predicted /= runs;
  cplx mean = 0.0;
  for (auto v : est) mean += v;
  mean /= static_cast<double>(runs);
  double var = 0.0;
  for (auto v : est) var += std::norm(v - mean);
  var /= static_cast<double>(runs - 1);
  EXPECT_NEAR(predicted / var, 1.0, 0.25);
}
