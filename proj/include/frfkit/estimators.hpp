#pragma once

// Open-loop FRF estimators.
//
//   etfe / average_then_divide  per-bin output/input ratios
//   spectral_analysis           averaged cross/auto spectra, with noise and FRF variance
//   lpm_fit                     local polynomial method: per-bin least-squares fit of
//                               smooth FRF and transient models over 2 n_w + 1 bins
//
// All estimators take the input and output spectra as two SpectrumSets with
// identical window layout.

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "frfkit/error.hpp"
#include "frfkit/frf.hpp"
#include "frfkit/parallel.hpp"
#include "frfkit/signals.hpp"

namespace frfkit {

/// Default relative floor for divisions: |U| < floor * max|U| is a defect.
inline constexpr double kDivisionFloor = 1e-12;

namespace detail {

inline void require_matching(const SpectrumSet& u, const SpectrumSet& y) {
  u.validate();
  y.validate();
  require(u.n_windows() == y.n_windows(), "input and output spectra have different window counts");
  require(u.n_bins() == y.n_bins() && u.window_length == y.window_length,
          "input and output spectra have different bin layouts");
}

inline void require_siso(const SpectrumSet& u, const SpectrumSet& y) {
  require(u.n_channels() == 1 && y.n_channels() == 1, "estimator expects one input and one output channel");
}

/// Largest |U_m(k)| over all windows and bins.
inline double peak_magnitude(const SpectrumSet& s) {
  double peak = 0.0;
  for (const auto& w : s.windows) peak = std::max(peak, w.cwiseAbs().maxCoeff());
  return peak;
}

}  // namespace detail

/// Segments `x`, applies the window and DFTs each segment. Windows are scaled
/// by 1/sqrt(mean(w^2)) so noise power is comparable across window kinds.
inline SpectrumSet windowed_spectra(const TimeSeries& x, std::size_t window_length, WindowKind kind,
                                    double overlap_fraction = 0.0) {
  const WindowFunction w{kind, window_length};
  return spectra(segment(x, window_length, overlap_fraction), w, 1.0 / std::sqrt(w.mean_square()));
}

// ---------------------------------------------------------------------------
// ETFE
// ---------------------------------------------------------------------------

/// G(k) = 1/M sum_m Y_m(k) / U_m(k). A bin where any window has
/// |U_m(k)| < floor * max|U| is a defect.
inline FrfEstimate etfe(const SpectrumSet& u, const SpectrumSet& y, double floor = kDivisionFloor) {
  detail::require_matching(u, y);
  detail::require_siso(u, y);
  const double threshold = floor * detail::peak_magnitude(u);
  FrfEstimate e = FrfEstimate::zeros(u.bin_frequencies, 1, 1, "etfe");
  e.metadata["m_windows"] = std::to_string(u.n_windows());
  const double m = static_cast<double>(u.n_windows());
  for (Eigen::Index k = 0; k < u.n_bins(); ++k) {
    cplx acc = 0.0;
    std::size_t floored = 0;
    for (std::size_t w = 0; w < u.n_windows(); ++w) {
      const cplx uk = u.windows[w](0, k);
      if (!(std::abs(uk) > threshold)) {
        ++floored;
        continue;
      }
      acc += y.windows[w](0, k) / uk;
    }
    if (floored > 0) {
      e.mark_defect(k, "|U| below division floor in " + std::to_string(floored) + " of " +
                           std::to_string(u.n_windows()) + " windows");
      continue;
    }
    e.g[static_cast<std::size_t>(k)](0, 0) = acc / m;
  }
  return e;
}

/// Averages U_m and Y_m over windows before dividing. With random phases per
/// window U_avg shrinks like 1/sqrt(M); kept to demonstrate that failure mode.
inline FrfEstimate average_then_divide(const SpectrumSet& u, const SpectrumSet& y, double floor = kDivisionFloor) {
  detail::require_matching(u, y);
  detail::require_siso(u, y);
  const double threshold = floor * detail::peak_magnitude(u);
  FrfEstimate e = FrfEstimate::zeros(u.bin_frequencies, 1, 1, "average_then_divide");
  e.metadata["m_windows"] = std::to_string(u.n_windows());
  for (Eigen::Index k = 0; k < u.n_bins(); ++k) {
    cplx u_avg = 0.0, y_avg = 0.0;
    for (std::size_t w = 0; w < u.n_windows(); ++w) {
      u_avg += u.windows[w](0, k);
      y_avg += y.windows[w](0, k);
    }
    u_avg /= static_cast<double>(u.n_windows());
    y_avg /= static_cast<double>(u.n_windows());
    if (!(std::abs(u_avg) > threshold)) {
      e.mark_defect(k, "|U_avg| below division floor");
      continue;
    }
    e.g[static_cast<std::size_t>(k)](0, 0) = y_avg / u_avg;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Spectral analysis
// ---------------------------------------------------------------------------

struct PowerSpectra {
  Eigen::VectorXd bin_frequencies;
  std::vector<Eigen::MatrixXcd> phi_yu;  // n_y x n_u
  std::vector<Eigen::MatrixXcd> phi_uu;  // n_u x n_u
  std::vector<Eigen::MatrixXcd> phi_yy;  // n_y x n_y
  std::size_t m_windows = 0;
  std::string window = "unspecified";
};

/// Phi_ab(k) = 1/M sum_m A_m(k) B_m(k)^H. Windowing happens when the spectra
/// are built (see windowed_spectra).
inline PowerSpectra power_spectra(const SpectrumSet& u, const SpectrumSet& y) {
  detail::require_matching(u, y);
  PowerSpectra ps;
  ps.bin_frequencies = u.bin_frequencies;
  ps.m_windows = u.n_windows();
  const auto n_bins = static_cast<std::size_t>(u.n_bins());
  const Eigen::Index nu = u.n_channels(), ny = y.n_channels();
  ps.phi_yu.assign(n_bins, Eigen::MatrixXcd::Zero(ny, nu));
  ps.phi_uu.assign(n_bins, Eigen::MatrixXcd::Zero(nu, nu));
  ps.phi_yy.assign(n_bins, Eigen::MatrixXcd::Zero(ny, ny));
  const double inv_m = 1.0 / static_cast<double>(ps.m_windows);
  for (std::size_t k = 0; k < n_bins; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    for (std::size_t w = 0; w < ps.m_windows; ++w) {
      const Eigen::VectorXcd uk = u.windows[w].col(kk);
      const Eigen::VectorXcd yk = y.windows[w].col(kk);
      ps.phi_yu[k].noalias() += yk * uk.adjoint();
      ps.phi_uu[k].noalias() += uk * uk.adjoint();
      ps.phi_yy[k].noalias() += yk * yk.adjoint();
    }
    ps.phi_yu[k] *= inv_m;
    ps.phi_uu[k] *= inv_m;
    ps.phi_yy[k] *= inv_m;
  }
  return ps;
}

/// Phi_uu(k) is treated as singular when its condition number exceeds
/// 1/floor or its largest singular value is below floor^2 times the largest
/// over all bins.
inline bool power_spectrum_singular(const Eigen::MatrixXcd& phi_uu, double reference_peak, double floor) {
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXcd>(phi_uu).singularValues();
  const double smax = sv[0], smin = sv[sv.size() - 1];
  if (!(smax > floor * floor * reference_peak)) return true;
  return !(smin > floor * smax);
}

/// Noise covariance per bin: M/(M - n_u) (Phi_yy - Phi_yu Phi_uu^{-1} Phi_yu^H).
/// Empty optional at bins where Phi_uu is singular or M <= n_u.
inline std::vector<std::optional<Eigen::MatrixXcd>> noise_covariance(const PowerSpectra& ps,
                                                                     double floor = kDivisionFloor) {
  std::vector<std::optional<Eigen::MatrixXcd>> out(ps.phi_uu.size());
  if (ps.phi_uu.empty()) return out;
  const auto nu = static_cast<std::size_t>(ps.phi_uu.front().rows());
  if (ps.m_windows <= nu) return out;
  double ref = 0.0;
  for (const auto& p : ps.phi_uu) ref = std::max(ref, p.cwiseAbs().maxCoeff());
  const double dof_scale = static_cast<double>(ps.m_windows) / static_cast<double>(ps.m_windows - nu);
  for (std::size_t k = 0; k < ps.phi_uu.size(); ++k) {
    if (power_spectrum_singular(ps.phi_uu[k], ref, floor)) continue;
    const Eigen::MatrixXcd explained = ps.phi_yu[k] * ps.phi_uu[k].ldlt().solve(ps.phi_yu[k].adjoint());
    Eigen::MatrixXcd cv = dof_scale * (ps.phi_yy[k] - explained);
    cv = 0.5 * (cv + cv.adjoint()).eval();
    out[k] = std::move(cv);
  }
  return out;
}

/// G(k) = Phi_yu Phi_uu^{-1}. When M > n_u the per-entry variance is
/// (1/M) [Phi_uu^{-1}]_jj [C_v]_ii with C_v from noise_covariance.
inline FrfEstimate spectral_analysis(const PowerSpectra& ps, double floor = kDivisionFloor) {
  detail::require(ps.m_windows >= 1 && !ps.phi_uu.empty(), "spectral_analysis needs at least one window");
  const Eigen::Index nu = ps.phi_uu.front().rows(), ny = ps.phi_yu.front().rows();
  FrfEstimate e = FrfEstimate::zeros(ps.bin_frequencies, ny, nu, "spectral_analysis");
  e.metadata["m_windows"] = std::to_string(ps.m_windows);
  e.metadata["window"] = ps.window;
  const bool with_variance = ps.m_windows > static_cast<std::size_t>(nu);
  if (with_variance) e.variance.assign(ps.phi_uu.size(), Eigen::MatrixXd::Zero(ny, nu));
  else e.metadata["variance"] = "absent: M <= n_u";
  const auto cv = with_variance ? noise_covariance(ps, floor) : std::vector<std::optional<Eigen::MatrixXcd>>{};
  double ref = 0.0;
  for (const auto& p : ps.phi_uu) ref = std::max(ref, p.cwiseAbs().maxCoeff());
  const double inv_m = 1.0 / static_cast<double>(ps.m_windows);
  for (std::size_t k = 0; k < ps.phi_uu.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    if (power_spectrum_singular(ps.phi_uu[k], ref, floor)) {
      e.mark_defect(kk, "singular input power spectrum");
      continue;
    }
    const auto solver = ps.phi_uu[k].ldlt();
    // G Phi_uu = Phi_yu  <=>  Phi_uu^H G^H = Phi_yu^H, and Phi_uu is Hermitian.
    e.g[k] = solver.solve(ps.phi_yu[k].adjoint()).adjoint();
    if (with_variance && cv[k]) {
      const Eigen::MatrixXcd inv_uu = solver.solve(Eigen::MatrixXcd::Identity(nu, nu));
      for (Eigen::Index i = 0; i < ny; ++i)
        for (Eigen::Index j = 0; j < nu; ++j)
          e.variance[k](i, j) = std::max(0.0, inv_m * inv_uu(j, j).real() * (*cv[k])(i, i).real());
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Local polynomial method
// ---------------------------------------------------------------------------

struct LpmConfig {
  int order = 2;       // R
  int half_width = 4;  // n_w
  int dof_margin = 3;

  /// Complex parameters per output row: (R + 1)(n_u + 1).
  int parameter_count(Eigen::Index n_u) const { return (order + 1) * (static_cast<int>(n_u) + 1); }
  int window_width() const { return 2 * half_width + 1; }

  void validate(Eigen::Index n_u) const {
    detail::require(order >= 0, "LPM order must be nonnegative");
    detail::require(half_width >= 1, "LPM half width must be at least 1");
    detail::require(dof_margin >= 1, "LPM dof margin must be at least 1");
    if (window_width() < parameter_count(n_u) + dof_margin)
      throw ValidationError("LPM window of " + std::to_string(window_width()) + " bins cannot fit " +
                            std::to_string(parameter_count(n_u)) + " parameters with dof margin " +
                            std::to_string(dof_margin));
  }

  /// Order R with margin R + 1 and the narrowest window that fits.
  static LpmConfig defaults(Eigen::Index n_u, int order = 2) {
    LpmConfig cfg{order, 1, order + 1};
    while (cfg.window_width() < cfg.parameter_count(n_u) + cfg.dof_margin) ++cfg.half_width;
    return cfg;
  }
};

/// Coefficients of the local model at one bin: G(k + r) = sum_s g_s r^s and
/// T(k + r) = sum_s t_s r^s, with g_0 = G(Omega_k) and t_0 = T(Omega_k).
struct LocalModelTheta {
  std::vector<Eigen::MatrixXcd> theta_g;  // R + 1 blocks, n_y x n_u
  std::vector<Eigen::VectorXcd> theta_t;  // R + 1 blocks, n_y
};

/// First and last bin of the 2 n_w + 1 wide fit window for bin k: centred
/// where possible, shifted inward at the edges.
inline std::pair<Eigen::Index, Eigen::Index> lpm_edge_policy(Eigen::Index k, Eigen::Index n_bins, const LpmConfig& cfg) {
  const Eigen::Index width = cfg.window_width();
  detail::require(k >= 0 && k < n_bins, "lpm_edge_policy: bin out of range");
  if (n_bins < width)
    throw ValidationError("LPM needs at least " + std::to_string(width) + " bins, got " + std::to_string(n_bins));
  const Eigen::Index first = std::clamp<Eigen::Index>(k - cfg.half_width, 0, n_bins - width);
  return {first, first + width - 1};
}

struct LpmResult {
  FrfEstimate frf;                                    // with transient and variance
  std::vector<std::optional<LocalModelTheta>> theta;  // empty optional at defect bins
};

/// Least-squares fit of Y(k + r) = Theta(k) K(k + r) for every bin, with
/// K(k + r) = [K1(r) (x) U(k + r); K1(r)] and K1(r) = [1 r ... r^R]^T.
/// Needs a single window (M = 1). The per-entry variance is the residual
/// variance of the output row times the matching diagonal of (K_n K_n^H)^{-1}.
/// With `keep_theta` false only the FRF is returned.
inline LpmResult lpm_local_models(const SpectrumSet& u, const SpectrumSet& y, const LpmConfig& cfg,
                                  bool keep_theta = true) {
  detail::require_matching(u, y);
  detail::require(u.n_windows() == 1, "LPM expects a single window (M = 1)");
  const Eigen::Index nu = u.n_channels(), ny = y.n_channels(), n_bins = u.n_bins();
  cfg.validate(nu);
  if (n_bins < cfg.window_width())
    throw ValidationError("LPM needs at least " + std::to_string(cfg.window_width()) + " bins, got " +
                          std::to_string(n_bins));
  const int order = cfg.order;
  const Eigen::Index q = cfg.parameter_count(nu), width = cfg.window_width();
  const Eigen::MatrixXcd& uw = u.windows.front();
  const Eigen::MatrixXcd& yw = y.windows.front();

  LpmResult out;
  out.frf = FrfEstimate::zeros(u.bin_frequencies, ny, nu, "lpm");
  out.frf.metadata["order"] = std::to_string(cfg.order);
  out.frf.metadata["half_width"] = std::to_string(cfg.half_width);
  out.frf.metadata["dof_margin"] = std::to_string(cfg.dof_margin);
  out.frf.variance.assign(static_cast<std::size_t>(n_bins), Eigen::MatrixXd::Zero(ny, nu));
  out.frf.transient.assign(static_cast<std::size_t>(n_bins), Eigen::VectorXcd::Zero(ny));
  if (keep_theta) out.theta.assign(static_cast<std::size_t>(n_bins), std::nullopt);
  std::vector<std::string> failure(static_cast<std::size_t>(n_bins));

  struct Workspace {
    Eigen::MatrixXcd reg, rhs, theta, residual, r_inv;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr;
  };

  parallel_for(static_cast<std::size_t>(n_bins), [&](std::size_t bin) {
    thread_local Workspace ws;
    const auto k = static_cast<Eigen::Index>(bin);
    const auto [first, last] = lpm_edge_policy(k, n_bins, cfg);
    // Regressor transposed: one row per bin of the window.
    ws.reg.resize(width, q);
    ws.rhs.resize(width, ny);
    for (Eigen::Index row = 0; row < width; ++row) {
      const Eigen::Index idx = first + row;
      const double r = static_cast<double>(idx - k);
      double power = 1.0;
      for (int s = 0; s <= order; ++s) {
        for (Eigen::Index j = 0; j < nu; ++j) ws.reg(row, s * nu + j) = power * uw(j, idx);
        ws.reg(row, (order + 1) * nu + s) = power;
        power *= r;
      }
      ws.rhs.row(row) = yw.col(idx).transpose();
    }
    ws.qr.compute(ws.reg);
    if (ws.qr.rank() < q) {
      failure[bin] = "rank-deficient LPM regressor (rank " + std::to_string(ws.qr.rank()) + " < " + std::to_string(q) + ")";
      return;
    }
    ws.theta = ws.qr.solve(ws.rhs);  // q x n_y
    ws.residual.noalias() = ws.rhs - ws.reg * ws.theta;
    const double dof = static_cast<double>(width - q);
    // reg P = Q R, so diag((reg^H reg)^{-1}) at column c is the squared norm
    // of row p(c) of R^{-1}.
    ws.r_inv.setIdentity(q, q);
    ws.qr.matrixR().topLeftCorner(q, q).template triangularView<Eigen::Upper>().solveInPlace(ws.r_inv);
    const auto& perm = ws.qr.colsPermutation().indices();

    auto& g0 = out.frf.g[bin];
    for (Eigen::Index j = 0; j < nu; ++j) g0.col(j) = ws.theta.row(j).transpose();
    out.frf.transient[bin] = ws.theta.row((order + 1) * nu).transpose();
    for (Eigen::Index j = 0; j < nu; ++j) {
      Eigen::Index p = 0;
      while (perm(p) != j) ++p;
      const double gram_jj = ws.r_inv.row(p).squaredNorm();
      for (Eigen::Index i = 0; i < ny; ++i)
        out.frf.variance[bin](i, j) = ws.residual.col(i).squaredNorm() / dof * gram_jj;
    }
    if (keep_theta) {
      LocalModelTheta theta;
      for (int s = 0; s <= order; ++s) {
        Eigen::MatrixXcd gs(ny, nu);
        for (Eigen::Index i = 0; i < ny; ++i)
          for (Eigen::Index j = 0; j < nu; ++j) gs(i, j) = ws.theta(s * nu + j, i);
        theta.theta_g.push_back(std::move(gs));
        theta.theta_t.push_back(ws.theta.row((order + 1) * nu + s).transpose());
      }
      out.theta[bin] = std::move(theta);
    }
  });

  for (Eigen::Index k = 0; k < n_bins; ++k)
    if (!failure[static_cast<std::size_t>(k)].empty()) out.frf.mark_defect(k, failure[static_cast<std::size_t>(k)]);
  return out;
}

inline FrfEstimate lpm_fit(const SpectrumSet& u, const SpectrumSet& y, const LpmConfig& cfg) {
  return lpm_local_models(u, y, cfg, false).frf;
}

inline FrfEstimate lpm_fit(const SpectrumSet& u, const SpectrumSet& y) {
  return lpm_fit(u, y, LpmConfig::defaults(u.n_channels()));
}

}  // namespace frfkit
