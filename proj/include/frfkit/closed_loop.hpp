#pragma once

// Closed-loop identification for the loop u = d - K (y + v).
//
// The direct estimate fits (u -> y) inside the loop and is biased by the
// feedback. The indirect estimate fits the sensitivity S (d -> u) and the
// process sensitivity GS (d -> y) and divides them. For MIMO loops the full
// plant is GS S^{-1} per bin, while entrywise division GS ./ S gives the
// equivalent plants seen by each loop with the other loops closed.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "frfkit/error.hpp"
#include "frfkit/estimators.hpp"
#include "frfkit/frf.hpp"
#include "frfkit/random.hpp"
#include "frfkit/signals.hpp"
#include "frfkit/state_space.hpp"

namespace frfkit {

struct ClosedLoopDataset {
  TimeSeries d;  // excitation, one channel per loop
  TimeSeries u;  // plant input
  TimeSeries y;  // measured plant output
  Eigen::Index excited_input_index = 0;
  ControllerConfig controller;

  void validate() const {
    detail::require(d.samples() == u.samples() && d.samples() == y.samples(), "closed-loop signals differ in length");
    detail::require(d.ts() == u.ts() && d.ts() == y.ts(), "closed-loop signals differ in ts");
    detail::require(excited_input_index >= 0 && excited_input_index < d.channels(), "excited input index out of range");
    detail::require(u.channels() == d.channels() && y.channels() == d.channels(),
                    "closed-loop dataset needs one d, u and y channel per loop");
  }

  static ClosedLoopDataset from_record(const SimulationRecord& r, Eigen::Index excited, const ControllerConfig& k) {
    return ClosedLoopDataset{r.d, r.u, r.y, excited, k};
  }

  ClosedLoopDataset slice(Eigen::Index start, Eigen::Index length) const {
    return ClosedLoopDataset{d.slice(start, length), u.slice(start, length), y.slice(start, length),
                             excited_input_index, controller};
  }
};

enum class FrfMethod { SpectralAnalysis, Lpm };

inline std::string to_string(FrfMethod m) { return m == FrfMethod::Lpm ? "lpm" : "sa"; }

/// How the open-loop estimators are applied to closed-loop records.
struct EstimationOptions {
  FrfMethod method = FrfMethod::SpectralAnalysis;
  std::size_t window_length = 0;  // SA segment length; 0 = whole record (M = 1)
  WindowKind window = WindowKind::Rectangular;
  double overlap = 0.0;
  LpmConfig lpm = LpmConfig::defaults(1);
  double floor = kDivisionFloor;
};

/// Process sensitivity and sensitivity. Column j comes from the experiment
/// that excited d_j.
struct FrmPair {
  FrfEstimate gs;  // d -> y
  FrfEstimate s;   // d -> u
};

namespace detail {

inline std::size_t resolve_window(const EstimationOptions& opt, Eigen::Index samples) {
  return opt.window_length == 0 ? static_cast<std::size_t>(samples) : opt.window_length;
}

inline FrfEstimate sa_estimate(const TimeSeries& in, const TimeSeries& out, const EstimationOptions& opt) {
  const std::size_t len = resolve_window(opt, in.samples());
  PowerSpectra ps =
      power_spectra(windowed_spectra(in, len, opt.window, opt.overlap), windowed_spectra(out, len, opt.window, opt.overlap));
  ps.window = to_string(opt.window);
  return spectral_analysis(ps, opt.floor);
}

/// First-order variance of a / b for independent a and b.
inline double ratio_variance(cplx a, cplx b, double var_a, double var_b) {
  const double b2 = std::norm(b);
  return var_a / b2 + std::norm(a) * var_b / (b2 * b2);
}

}  // namespace detail

/// One column of GS and S from a single experiment: the chosen estimator is
/// applied jointly to d_j -> [y; u] so both share the same input spectrum.
inline FrmPair sensitivity_columns(const ClosedLoopDataset& data, const EstimationOptions& opt) {
  data.validate();
  const Eigen::Index n = data.d.channels();
  const TimeSeries input = data.d.select({data.excited_input_index});
  const TimeSeries outputs = TimeSeries::stack(data.y, data.u);
  FrfEstimate joint;
  if (opt.method == FrfMethod::Lpm) {
    joint = lpm_fit(spectra({input}), spectra({outputs}), opt.lpm);
  } else {
    joint = detail::sa_estimate(input, outputs, opt);
  }
  FrmPair out{FrfEstimate::zeros(joint.bin_frequencies, n, 1, "gs:" + joint.estimator_tag),
              FrfEstimate::zeros(joint.bin_frequencies, n, 1, "s:" + joint.estimator_tag)};
  out.gs.metadata = out.s.metadata = joint.metadata;
  if (joint.has_variance()) {
    out.gs.variance.assign(joint.variance.size(), Eigen::MatrixXd::Zero(n, 1));
    out.s.variance.assign(joint.variance.size(), Eigen::MatrixXd::Zero(n, 1));
  }
  if (joint.has_transient()) {
    out.gs.transient.assign(joint.transient.size(), Eigen::VectorXcd::Zero(n));
    out.s.transient.assign(joint.transient.size(), Eigen::VectorXcd::Zero(n));
  }
  for (Eigen::Index k = 0; k < joint.n_bins(); ++k) {
    const auto sk = static_cast<std::size_t>(k);
    out.gs.g[sk] = joint.g[sk].topRows(n);
    out.s.g[sk] = joint.g[sk].bottomRows(n);
    if (joint.has_variance()) {
      out.gs.variance[sk] = joint.variance[sk].topRows(n);
      out.s.variance[sk] = joint.variance[sk].bottomRows(n);
    }
    if (joint.has_transient()) {
      out.gs.transient[sk] = joint.transient[sk].head(n);
      out.s.transient[sk] = joint.transient[sk].tail(n);
    }
  }
  for (const auto& d : joint.defects) {
    out.gs.mark_defect(d.bin, d.reason);
    out.s.mark_defect(d.bin, d.reason);
  }
  return out;
}

/// Fits (u -> y) of the excited loop as if it were open loop. In closed loop
/// this converges to (G Phi_dd - conj(K) Phi_vv) / (Phi_dd + |K|^2 Phi_vv),
/// not to G.
inline FrfEstimate direct_estimate(const ClosedLoopDataset& data, const EstimationOptions& opt) {
  data.validate();
  const Eigen::Index j = data.excited_input_index;
  FrfEstimate e;
  if (opt.method == FrfMethod::Lpm) {
    const auto u = data.u.select({j});
    const auto y = data.y.select({j});
    e = lpm_fit(spectra({u}), spectra({y}), opt.lpm);
  } else {
    e = detail::sa_estimate(data.u.select({j}), data.y.select({j}), opt);
  }
  e.estimator_tag = "direct:" + e.estimator_tag;
  e.metadata["closed_loop"] = "biased";
  return e;
}

/// Asymptotic value of the direct estimate for given true G, controller K and
/// excitation/noise spectra at one bin.
inline cplx direct_asymptote(cplx g0, cplx k, double phi_dd, double phi_vv) {
  return (g0 * phi_dd - std::conj(k) * phi_vv) / (phi_dd + std::norm(k) * phi_vv);
}

/// G = GS / S for the excited loop of a SISO (or per-channel) experiment.
inline FrfEstimate indirect_estimate(const ClosedLoopDataset& data, const EstimationOptions& opt) {
  data.validate();
  const Eigen::Index j = data.excited_input_index;
  ClosedLoopDataset siso{data.d.select({j}), data.u.select({j}), data.y.select({j}), 0, data.controller};
  const FrmPair cols = sensitivity_columns(siso, opt);
  FrfEstimate e = FrfEstimate::zeros(cols.s.bin_frequencies, 1, 1, "indirect:" + to_string(opt.method));
  e.metadata = cols.s.metadata;
  const bool with_var = cols.s.has_variance() && cols.gs.has_variance();
  if (with_var) {
    e.variance.assign(static_cast<std::size_t>(e.n_bins()), Eigen::MatrixXd::Zero(1, 1));
    e.variance_approximate = true;
  }
  double peak = 0.0;
  for (Eigen::Index k = 0; k < e.n_bins(); ++k)
    if (!cols.s.is_defect(k)) peak = std::max(peak, std::abs(cols.s.g[static_cast<std::size_t>(k)](0, 0)));
  for (Eigen::Index k = 0; k < e.n_bins(); ++k) {
    const auto sk = static_cast<std::size_t>(k);
    if (cols.s.is_defect(k) || cols.gs.is_defect(k)) {
      e.mark_defect(k, "sensitivity estimate defect");
      continue;
    }
    const cplx s = cols.s.g[sk](0, 0), gs = cols.gs.g[sk](0, 0);
    if (!(std::abs(s) > opt.floor * peak)) {
      e.mark_defect(k, "|S| below division floor");
      continue;
    }
    e.g[sk](0, 0) = gs / s;
    if (with_var)
      e.variance[sk](0, 0) = detail::ratio_variance(gs, s, cols.gs.variance[sk](0, 0), cols.s.variance[sk](0, 0));
  }
  return e;
}

/// G = (1/K) (1/S - 1). Only valid when K is known exactly.
inline FrfEstimate controller_inversion_estimate(const FrfEstimate& s_hat, const std::vector<cplx>& k_frf) {
  detail::require(s_hat.n_y() == 1 && s_hat.n_u() == 1, "controller inversion expects a SISO sensitivity");
  detail::require(static_cast<Eigen::Index>(k_frf.size()) == s_hat.n_bins(), "one controller value per bin required");
  FrfEstimate e = FrfEstimate::zeros(s_hat.bin_frequencies, 1, 1, "controller_inversion");
  e.metadata["requires"] = "exact controller K";
  for (Eigen::Index k = 0; k < e.n_bins(); ++k) {
    const auto sk = static_cast<std::size_t>(k);
    const cplx s = s_hat.g[sk](0, 0), kk = k_frf[sk];
    if (s_hat.is_defect(k) || s == 0.0 || kk == 0.0 || !std::isfinite(std::abs(s))) {
      e.mark_defect(k, kk == 0.0 ? "controller is zero" : "sensitivity is zero or defect");
      continue;
    }
    e.g[sk](0, 0) = (1.0 / kk) * (1.0 / s - 1.0);
  }
  return e;
}

inline FrfEstimate controller_inversion_estimate(const FrfEstimate& s_hat, const ControllerConfig& k, Eigen::Index loop) {
  std::vector<cplx> kf;
  for (Eigen::Index b = 0; b < s_hat.n_bins(); ++b) kf.push_back(k.frequency_response(s_hat.bin_frequencies[b])(loop, loop));
  return controller_inversion_estimate(s_hat, kf);
}

// ---------------------------------------------------------------------------
// MIMO
// ---------------------------------------------------------------------------

struct MimoExperimentConfig {
  MultisineSpec excitation;  // shared magnitude; phase seed re-derived per experiment
  std::size_t discard_periods = 0;
  std::vector<double> noise_std;
  std::uint64_t excitation_seed = 1;
  std::uint64_t noise_seed = 2;
  EstimationOptions estimation;
};

/// Per-experiment seeds derived from a base seed.
inline std::uint64_t experiment_seed(std::uint64_t base, std::size_t experiment) {
  return mix_seed(base, 0x1000 + static_cast<std::uint64_t>(experiment));
}

/// Experiment j excites only d_j; the chosen estimator gives column j of GS and S.
inline FrmPair run_mimo_experiments(const StateSpaceModel& plant, const ControllerConfig& k,
                                    const MimoExperimentConfig& cfg) {
  detail::require(plant.is_discrete(), "run_mimo_experiments expects a discrete plant");
  const Eigen::Index n = plant.n_u();
  detail::require(cfg.discard_periods < cfg.excitation.n_periods, "all periods would be discarded");
  std::vector<FrmPair> columns;
  for (Eigen::Index j = 0; j < n; ++j) {
    MultisineSpec spec = cfg.excitation;
    spec.phase_seed = experiment_seed(cfg.excitation_seed, static_cast<std::size_t>(j));
    const TimeSeries dj = generate_multisine(spec, *plant.ts);
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, dj.samples());
    d.row(j) = dj.data().row(0);
    const auto rec = simulate_closed_loop(plant, k, TimeSeries(std::move(d), *plant.ts), cfg.noise_std,
                                          experiment_seed(cfg.noise_seed, static_cast<std::size_t>(j)));
    const auto start = static_cast<Eigen::Index>(cfg.discard_periods * spec.period_samples);
    auto data = ClosedLoopDataset::from_record(rec, j, k).slice(start, rec.d.samples() - start);
    columns.push_back(sensitivity_columns(data, cfg.estimation));
  }
  const auto& ref = columns.front();
  FrmPair out{FrfEstimate::zeros(ref.gs.bin_frequencies, plant.n_y(), n, "gs:" + to_string(cfg.estimation.method)),
              FrfEstimate::zeros(ref.s.bin_frequencies, n, n, "s:" + to_string(cfg.estimation.method))};
  out.gs.metadata = out.s.metadata = ref.s.metadata;
  const bool with_var = std::all_of(columns.begin(), columns.end(), [](const FrmPair& c) { return c.s.has_variance(); });
  if (with_var) {
    out.gs.variance.assign(static_cast<std::size_t>(out.gs.n_bins()), Eigen::MatrixXd::Zero(plant.n_y(), n));
    out.s.variance.assign(static_cast<std::size_t>(out.s.n_bins()), Eigen::MatrixXd::Zero(n, n));
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& c = columns[static_cast<std::size_t>(j)];
    for (Eigen::Index b = 0; b < out.s.n_bins(); ++b) {
      const auto sb = static_cast<std::size_t>(b);
      out.gs.g[sb].col(j) = c.gs.g[sb].col(0);
      out.s.g[sb].col(j) = c.s.g[sb].col(0);
      if (with_var) {
        out.gs.variance[sb].col(j) = c.gs.variance[sb].col(0);
        out.s.variance[sb].col(j) = c.s.variance[sb].col(0);
      }
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& c = columns[static_cast<std::size_t>(j)];
    for (const auto& d : c.s.defects) {
      out.gs.mark_defect(d.bin, "column " + std::to_string(j + 1) + ": " + d.reason);
      out.s.mark_defect(d.bin, "column " + std::to_string(j + 1) + ": " + d.reason);
    }
  }
  out.gs.sort_defects();
  out.s.sort_defects();
  return out;
}

inline constexpr double kConditionLimit = 1e8;

/// G = GS S^{-1} per bin (matrix inverse). Records cond(S); bins with
/// cond(S) above `condition_limit` are defects.
inline FrfEstimate full_plant(const FrmPair& frm, double condition_limit = kConditionLimit) {
  const Eigen::Index n = frm.s.n_u();
  detail::require(frm.s.n_y() == n && frm.gs.n_u() == n, "full_plant needs square S and matching GS");
  detail::require(frm.s.n_bins() == frm.gs.n_bins(), "GS and S have different bins");
  FrfEstimate e = FrfEstimate::zeros(frm.s.bin_frequencies, frm.gs.n_y(), n, "full_plant");
  e.metadata = frm.s.metadata;
  e.condition.assign(static_cast<std::size_t>(e.n_bins()), std::numeric_limits<double>::quiet_NaN());
  const bool with_var = frm.s.has_variance() && frm.gs.has_variance();
  if (with_var) {
    e.variance.assign(static_cast<std::size_t>(e.n_bins()), Eigen::MatrixXd::Zero(e.n_y(), n));
    e.variance_approximate = true;
  }
  for (Eigen::Index k = 0; k < e.n_bins(); ++k) {
    const auto sk = static_cast<std::size_t>(k);
    if (frm.s.is_defect(k) || frm.gs.is_defect(k)) {
      e.mark_defect(k, "input estimate defect");
      continue;
    }
    const Eigen::MatrixXcd& s = frm.s.g[sk];
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXcd>(s).singularValues();
    const double cond = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1] : std::numeric_limits<double>::infinity();
    if (!(cond <= condition_limit)) {
      e.mark_defect(k, "ill-conditioned S (cond " + io::format_number(cond) + ")");
      e.condition[sk] = cond;
      continue;
    }
    e.condition[sk] = cond;
    const Eigen::MatrixXcd s_inv = s.fullPivLu().inverse();
    e.g[sk] = frm.gs.g[sk] * s_inv;
    if (with_var) {
      // dG = dGS S^-1 - G dS S^-1, entries treated as independent.
      const Eigen::MatrixXd w = s_inv.cwiseAbs2();
      const Eigen::MatrixXd g2 = e.g[sk].cwiseAbs2();
      e.variance[sk] = frm.gs.variance[sk] * w + g2 * frm.s.variance[sk] * w;
    }
  }
  return e;
}

/// Entrywise GS ./ S: the equivalent plant of each loop with the other
/// loops closed.
inline FrfEstimate equivalent_plant(const FrmPair& frm, double floor = kDivisionFloor) {
  detail::require(frm.s.n_y() == frm.gs.n_y() && frm.s.n_u() == frm.gs.n_u(), "GS and S must have the same shape");
  detail::require(frm.s.n_bins() == frm.gs.n_bins(), "GS and S have different bins");
  FrfEstimate e = FrfEstimate::zeros(frm.s.bin_frequencies, frm.gs.n_y(), frm.gs.n_u(), "equivalent_plant");
  e.metadata = frm.s.metadata;
  e.metadata["model"] = "equivalent plant (sequential loop closing)";
  const bool with_var = frm.s.has_variance() && frm.gs.has_variance();
  if (with_var) {
    e.variance.assign(static_cast<std::size_t>(e.n_bins()), Eigen::MatrixXd::Zero(e.n_y(), e.n_u()));
    e.variance_approximate = true;
  }
  double peak = 0.0;
  for (Eigen::Index k = 0; k < e.n_bins(); ++k)
    if (!frm.s.is_defect(k)) peak = std::max(peak, frm.s.g[static_cast<std::size_t>(k)].cwiseAbs().maxCoeff());
  for (Eigen::Index k = 0; k < e.n_bins(); ++k) {
    const auto sk = static_cast<std::size_t>(k);
    if (frm.s.is_defect(k) || frm.gs.is_defect(k)) {
      e.mark_defect(k, "input estimate defect");
      continue;
    }
    const Eigen::MatrixXcd& s = frm.s.g[sk];
    if (!(s.cwiseAbs().minCoeff() > floor * peak)) {
      e.mark_defect(k, "zero entry in S");
      continue;
    }
    e.g[sk] = frm.gs.g[sk].cwiseQuotient(s);
    if (with_var)
      for (Eigen::Index i = 0; i < e.n_y(); ++i)
        for (Eigen::Index j = 0; j < e.n_u(); ++j)
          e.variance[sk](i, j) = detail::ratio_variance(frm.gs.g[sk](i, j), s(i, j), frm.gs.variance[sk](i, j),
                                                        frm.s.variance[sk](i, j));
  }
  return e;
}

/// Loop-interaction term G_ij K_j G_ji / (1 + K_j G_jj) for a 2 x 2 plant
/// under diagonal K, i != j. The equivalent plant of loop i is G_ii minus it.
inline cplx interaction_term(const Eigen::MatrixXcd& g, const Eigen::MatrixXcd& k, Eigen::Index i) {
  detail::require(g.rows() == 2 && g.cols() == 2, "interaction_term is defined for 2 x 2 plants");
  const Eigen::Index j = 1 - i;
  return g(i, j) * k(j, j) * g(j, i) / (1.0 + k(j, j) * g(j, j));
}

}  // namespace frfkit
