#pragma once

// Frequency-domain data that follows a global polynomial model exactly, with
// the local coefficients of every bin derived by the binomial theorem.

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "frfkit/random.hpp"
#include "frfkit/signals.hpp"

namespace synthetic {

using frfkit::cplx;
using frfkit::Rng;
using frfkit::SpectrumSet;
using frfkit::bin_frequencies;

inline constexpr double kTs = 1e-3;

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

inline cplx random_complex(Rng& rng) { return {rng.normal(), rng.normal()}; }

/// Global polynomials G(x) = sum_t c_t x^t (matrix coefficients) and
/// T(x) = sum_t d_t x^t; Y(k) = G(k) U(k) + T(k) on every bin.
struct PolynomialSystem {
  std::vector<Eigen::MatrixXcd> c;
  std::vector<Eigen::VectorXcd> d;
  double scale;  // x = k / scale keeps the coefficients well conditioned

  Eigen::MatrixXcd g_at(double k) const {
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(c[0].rows(), c[0].cols());
    for (std::size_t t = 0; t < c.size(); ++t) acc += c[t] * std::pow(k / scale, static_cast<int>(t));
    return acc;
  }
  Eigen::VectorXcd t_at(double k) const {
    Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(d[0].size());
    for (std::size_t t = 0; t < d.size(); ++t) acc += d[t] * std::pow(k / scale, static_cast<int>(t));
    return acc;
  }
  /// Coefficient of r^s in G(k + r), by the binomial theorem.
  Eigen::MatrixXcd local_g(double k, int s) const {
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(c[0].rows(), c[0].cols());
    for (int t = s; t < static_cast<int>(c.size()); ++t)
      acc += c[static_cast<std::size_t>(t)] * binomial(t, s) * std::pow(k, t - s) / std::pow(scale, t);
    return acc;
  }
  Eigen::VectorXcd local_t(double k, int s) const {
    Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(d[0].size());
    for (int t = s; t < static_cast<int>(d.size()); ++t)
      acc += d[static_cast<std::size_t>(t)] * binomial(t, s) * std::pow(k, t - s) / std::pow(scale, t);
    return acc;
  }
};

struct Synthetic {
  SpectrumSet u, y;
  PolynomialSystem sys;
};

inline Synthetic synthesize(int order, Eigen::Index ny, Eigen::Index nu, Eigen::Index n_bins, std::uint64_t seed) {
  Rng rng(seed);
  PolynomialSystem sys{{}, {}, static_cast<double>(n_bins)};
  for (int t = 0; t <= order; ++t) {
    Eigen::MatrixXcd ct(ny, nu);
    for (Eigen::Index i = 0; i < ct.size(); ++i) ct.data()[i] = random_complex(rng);
    sys.c.push_back(ct);
    Eigen::VectorXcd dt(ny);
    for (Eigen::Index i = 0; i < ny; ++i) dt[i] = random_complex(rng);
    sys.d.push_back(dt);
  }
  Eigen::MatrixXcd u(nu, n_bins), y(ny, n_bins);
  for (Eigen::Index k = 0; k < n_bins; ++k) {
    for (Eigen::Index j = 0; j < nu; ++j) u(j, k) = random_complex(rng);
    y.col(k) = sys.g_at(static_cast<double>(k)) * u.col(k) + sys.t_at(static_cast<double>(k));
  }
  const auto n = static_cast<std::size_t>(2 * (n_bins - 1));
  const Eigen::VectorXd w = bin_frequencies(n, kTs);
  return {SpectrumSet{{u}, w, n}, SpectrumSet{{y}, w, n}, sys};
}

}  // namespace synthetic
