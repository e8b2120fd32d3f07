#pragma once

// Ground-truth plant models: the two-motor benchmark, zero-order-hold
// discretization, open- and closed-loop simulation, and the analytic
// frequency responses and transient terms the estimators are checked against.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include "frfkit/error.hpp"
#include "frfkit/frf.hpp"
#include "frfkit/random.hpp"
#include "frfkit/signals.hpp"

namespace frfkit {

// ---------------------------------------------------------------------------
// StateSpaceModel
// ---------------------------------------------------------------------------

struct StateSpaceModel {
  Eigen::MatrixXd a, b, c, d;
  std::optional<double> ts;  // nullopt: continuous time

  Eigen::Index n_x() const { return a.rows(); }
  Eigen::Index n_u() const { return b.cols(); }
  Eigen::Index n_y() const { return c.rows(); }
  bool is_discrete() const { return ts.has_value(); }

  void validate() const {
    detail::require(a.rows() == a.cols() && a.rows() >= 1, "A must be square and non-empty");
    detail::require(b.rows() == a.rows() && b.cols() >= 1, "B must have n_x rows");
    detail::require(c.cols() == a.rows() && c.rows() >= 1, "C must have n_x columns");
    detail::require(d.rows() == c.rows() && d.cols() == b.cols(), "D must be n_y x n_u");
    detail::require(a.allFinite() && b.allFinite() && c.allFinite() && d.allFinite(), "model matrices must be finite");
    if (ts) detail::require(std::isfinite(*ts) && *ts > 0.0, "discrete model needs ts > 0");
  }

  Eigen::VectorXcd eigenvalues() const { return Eigen::EigenSolver<Eigen::MatrixXd>(a, false).eigenvalues(); }

  /// Continuous: Re(lambda) < 0. Discrete: |lambda| < 1.
  bool is_stable() const {
    const auto ev = eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      if (is_discrete() ? std::abs(ev[i]) >= 1.0 : ev[i].real() >= 0.0) return false;
    }
    return true;
  }

  /// Sub-system from the listed inputs to the listed outputs.
  StateSpaceModel subsystem(const std::vector<Eigen::Index>& outputs, const std::vector<Eigen::Index>& inputs) const {
    StateSpaceModel m{a, Eigen::MatrixXd(n_x(), static_cast<Eigen::Index>(inputs.size())),
                      Eigen::MatrixXd(static_cast<Eigen::Index>(outputs.size()), n_x()),
                      Eigen::MatrixXd(static_cast<Eigen::Index>(outputs.size()), static_cast<Eigen::Index>(inputs.size())),
                      ts};
    for (std::size_t j = 0; j < inputs.size(); ++j) m.b.col(static_cast<Eigen::Index>(j)) = b.col(inputs[j]);
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      m.c.row(static_cast<Eigen::Index>(i)) = c.row(outputs[i]);
      for (std::size_t j = 0; j < inputs.size(); ++j)
        m.d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d(outputs[i], inputs[j]);
    }
    return m;
  }
};

/// Two DC motors coupled by a flexible connection; inputs are amplifier
/// voltages [V], outputs are angular positions [rad].
inline StateSpaceModel paper_plant() {
  StateSpaceModel m;
  m.a.resize(4, 4);
  m.a << 0, 1, 0, 0,
         -173, -8, 166, 1.33,
         0, 0, 0, 1,
         166, 1.33, -173, -8;
  m.b.resize(4, 2);
  m.b << 0, 0,
         53, 0,
         0, 0,
         0, 53;
  m.c.resize(2, 4);
  m.c << 1, 0, 0, 0,
         0, 0, 1, 0;
  m.d = Eigen::MatrixXd::Zero(2, 2);
  return m;
}

/// Exact ZOH equivalent, from exp([[A, B], [0, 0]] * ts).
inline StateSpaceModel discretize_zoh(const StateSpaceModel& m, double ts) {
  m.validate();
  detail::require(!m.is_discrete(), "discretize_zoh expects a continuous-time model");
  detail::require(std::isfinite(ts) && ts > 0.0, "discretize_zoh: ts must be positive");
  const Eigen::Index n = m.n_x(), nu = m.n_u();
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + nu, n + nu);
  aug.topLeftCorner(n, n) = m.a * ts;
  aug.topRightCorner(n, nu) = m.b * ts;
  const Eigen::MatrixXd e = aug.exp();
  if (!e.allFinite()) throw RuntimeDefect("matrix exponential did not converge");
  return StateSpaceModel{e.topLeftCorner(n, n), e.topRightCorner(n, nu), m.c, m.d, ts};
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct SimulationRecord {
  TimeSeries d;  // excitation
  TimeSeries u;  // plant input
  TimeSeries y;  // plant output as measured (includes v)
  TimeSeries v;  // injected output noise
  Eigen::VectorXd x0;
  Eigen::VectorXd x_n;  // state after the last stored sample
};

namespace detail {

inline std::vector<std::string> prefixed_names(const std::string& prefix, Eigen::Index n) {
  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i + 1));
  return names;
}

/// x(n+1) = A x(n) + B u(n), y(n) = C x(n) + D u(n). Returns the outputs and
/// leaves the final state in `x`.
inline Eigen::MatrixXd run_state_space(const StateSpaceModel& m, const Eigen::MatrixXd& u, Eigen::VectorXd& x) {
  const Eigen::Index n_samples = u.cols();
  Eigen::MatrixXd y(m.n_y(), n_samples);
  Eigen::VectorXd next(m.n_x());
  const bool has_d = !m.d.isZero(0.0);
  for (Eigen::Index i = 0; i < n_samples; ++i) {
    y.col(i).noalias() = m.c * x;
    if (has_d) y.col(i).noalias() += m.d * u.col(i);
    next.noalias() = m.a * x;
    next.noalias() += m.b * u.col(i);
    x.swap(next);
  }
  return y;
}

}  // namespace detail

inline SimulationRecord lsim(const StateSpaceModel& m, const TimeSeries& u, const Eigen::VectorXd& x0) {
  m.validate();
  detail::require(m.is_discrete(), "lsim expects a discrete-time model");
  detail::require(u.channels() == m.n_u(), "lsim: input channel count does not match the model");
  detail::require(x0.size() == m.n_x(), "lsim: initial state has the wrong dimension");
  detail::require(std::abs(u.ts() - *m.ts) <= 1e-12 * *m.ts, "lsim: input ts does not match the model ts");
  Eigen::VectorXd x = x0;
  Eigen::MatrixXd y = detail::run_state_space(m, u.data(), x);
  TimeSeries v(Eigen::MatrixXd::Zero(m.n_y(), u.samples()), u.ts(), detail::prefixed_names("v", m.n_y()));
  return SimulationRecord{u, u, TimeSeries(std::move(y), u.ts(), detail::prefixed_names("y", m.n_y())), std::move(v),
                          x0, std::move(x)};
}

/// Initial state that makes the response to a periodic input periodic:
/// solves (I - A^P) x0 = x_P, where x_P is the state after one period from rest.
inline Eigen::VectorXd periodic_steady_state(const StateSpaceModel& m, const TimeSeries& one_period) {
  detail::require(m.is_discrete() && m.is_stable(), "periodic_steady_state needs a stable discrete model");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(m.n_x());
  detail::run_state_space(m, one_period.data(), x);
  Eigen::MatrixXd a_pow = Eigen::MatrixXd::Identity(m.n_x(), m.n_x());
  Eigen::MatrixXd base = m.a;
  for (auto p = static_cast<std::uint64_t>(one_period.samples()); p > 0; p >>= 1) {
    if (p & 1U) a_pow = a_pow * base;
    base = base * base;
  }
  const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(m.n_x(), m.n_x()) - a_pow;
  return lhs.fullPivLu().solve(x);
}

// ---------------------------------------------------------------------------
// Controller
// ---------------------------------------------------------------------------

/// Discrete transfer function num(z)/den(z), coefficients in descending powers of z.
struct DiscreteTf {
  std::vector<double> num;
  std::vector<double> den;

  void validate() const {
    detail::require(!den.empty() && den.front() != 0.0, "transfer function denominator must have a nonzero leading coefficient");
    detail::require(!num.empty(), "transfer function numerator is empty");
    detail::require(num.size() <= den.size(), "transfer function must be proper");
  }

  std::complex<double> operator()(std::complex<double> z) const {
    auto horner = [z](const std::vector<double>& p) {
      std::complex<double> acc = 0.0;
      for (double c : p) acc = acc * z + c;
      return acc;
    };
    return horner(num) / horner(den);
  }

  bool is_zero() const {
    return std::all_of(num.begin(), num.end(), [](double c) { return c == 0.0; });
  }

  /// Controllable canonical realization.
  StateSpaceModel to_state_space(double ts) const {
    validate();
    const std::size_t n = den.size() - 1;
    const double lead = den.front();
    std::vector<double> a(den.size()), b(den.size(), 0.0);
    for (std::size_t i = 0; i < den.size(); ++i) a[i] = den[i] / lead;
    for (std::size_t i = 0; i < num.size(); ++i) b[den.size() - num.size() + i] = num[i] / lead;
    StateSpaceModel m;
    m.ts = ts;
    m.d = Eigen::MatrixXd::Constant(1, 1, b[0]);
    if (n == 0) {
      m.a = Eigen::MatrixXd::Zero(1, 1);
      m.b = Eigen::MatrixXd::Zero(1, 1);
      m.c = Eigen::MatrixXd::Zero(1, 1);
      return m;
    }
    const auto ni = static_cast<Eigen::Index>(n);
    m.a = Eigen::MatrixXd::Zero(ni, ni);
    for (Eigen::Index j = 0; j < ni; ++j) m.a(0, j) = -a[static_cast<std::size_t>(j) + 1];
    for (Eigen::Index i = 1; i < ni; ++i) m.a(i, i - 1) = 1.0;
    m.b = Eigen::MatrixXd::Zero(ni, 1);
    m.b(0, 0) = 1.0;
    m.c.resize(1, ni);
    for (Eigen::Index j = 0; j < ni; ++j) {
      const auto sj = static_cast<std::size_t>(j) + 1;
      m.c(0, j) = b[sj] - a[sj] * b[0];
    }
    return m;
  }
};

/// Decentralized (diagonal) discrete controller, one transfer function per loop.
struct ControllerConfig {
  std::vector<DiscreteTf> loops;
  double ts = 0.0;

  Eigen::Index n_loops() const { return static_cast<Eigen::Index>(loops.size()); }

  void validate() const {
    detail::require(!loops.empty(), "controller needs at least one loop");
    detail::require(std::isfinite(ts) && ts > 0.0, "controller ts must be positive");
    for (const auto& l : loops) l.validate();
  }

  /// Diagonal K(e^{j omega ts}).
  Eigen::MatrixXcd frequency_response(double omega) const {
    const auto z = std::polar(1.0, omega * ts);
    Eigen::MatrixXcd k = Eigen::MatrixXcd::Zero(n_loops(), n_loops());
    for (Eigen::Index i = 0; i < n_loops(); ++i) k(i, i) = loops[static_cast<std::size_t>(i)](z);
    return k;
  }

  /// Block-diagonal state-space realization of all loops.
  StateSpaceModel to_state_space() const {
    validate();
    std::vector<StateSpaceModel> parts;
    Eigen::Index nx = 0;
    for (const auto& l : loops) {
      parts.push_back(l.to_state_space(ts));
      nx += parts.back().n_x();
    }
    const Eigen::Index nl = n_loops();
    StateSpaceModel m{Eigen::MatrixXd::Zero(nx, nx), Eigen::MatrixXd::Zero(nx, nl), Eigen::MatrixXd::Zero(nl, nx),
                      Eigen::MatrixXd::Zero(nl, nl), ts};
    Eigen::Index off = 0;
    for (Eigen::Index i = 0; i < nl; ++i) {
      const auto& p = parts[static_cast<std::size_t>(i)];
      const Eigen::Index k = p.n_x();
      m.a.block(off, off, k, k) = p.a;
      m.b.block(off, i, k, 1) = p.b;
      m.c.block(i, off, 1, k) = p.c;
      m.d(i, i) = p.d(0, 0);
      off += k;
    }
    return m;
  }
};

/// Lead filter 0.5 (z - 0.9) / (z - 0.5) on every loop.
inline ControllerConfig default_controller(double ts, std::size_t n_loops = 2) {
  return ControllerConfig{std::vector<DiscreteTf>(n_loops, DiscreteTf{{0.5, -0.45}, {1.0, -0.5}}), ts};
}

inline ControllerConfig zero_controller(double ts, std::size_t n_loops) {
  return ControllerConfig{std::vector<DiscreteTf>(n_loops, DiscreteTf{{0.0}, {1.0}}), ts};
}

/// Interconnection u = d - K (y + v) around a discrete plant, as one model
/// with inputs [d; v] and outputs [u; y + v]. States are [plant; controller].
inline StateSpaceModel closed_loop_model(const StateSpaceModel& plant, const ControllerConfig& k) {
  plant.validate();
  k.validate();
  detail::require(plant.is_discrete(), "closed_loop_model expects a discrete plant");
  detail::require(plant.n_u() == plant.n_y() && plant.n_u() == k.n_loops(),
                  "decentralized loop needs n_u = n_y = number of controller loops");
  detail::require(std::abs(*plant.ts - k.ts) <= 1e-12 * k.ts, "plant and controller sample times differ");
  const StateSpaceModel ctrl = k.to_state_space();
  const Eigen::Index nx = plant.n_x(), nc = ctrl.n_x(), n = plant.n_u();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);

  // (I + Dc Dp) u = d + Cc xc - Dc C x - Dc v
  const Eigen::MatrixXd loop = eye + ctrl.d * plant.d;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(loop);
  if (!lu.isInvertible() || 1.0 / lu.rcond() > 1e12) throw ValidationError("ill-posed algebraic loop: I + Dc Dp is singular");
  const Eigen::MatrixXd li = lu.inverse();

  // u = Ux x + Uc xc + Ud d + Uv v
  const Eigen::MatrixXd ux = -li * ctrl.d * plant.c;
  const Eigen::MatrixXd uc = li * ctrl.c;
  const Eigen::MatrixXd ud = li;
  const Eigen::MatrixXd uv = -li * ctrl.d;
  // y_m = C x + Dp u + v
  const Eigen::MatrixXd yx = plant.c + plant.d * ux;
  const Eigen::MatrixXd yc = plant.d * uc;
  const Eigen::MatrixXd yd = plant.d * ud;
  const Eigen::MatrixXd yv = plant.d * uv + eye;

  StateSpaceModel m;
  m.ts = plant.ts;
  m.a.resize(nx + nc, nx + nc);
  m.a << plant.a + plant.b * ux, plant.b * uc,
         -ctrl.b * yx, ctrl.a - ctrl.b * yc;
  m.b.resize(nx + nc, 2 * n);
  m.b << plant.b * ud, plant.b * uv,
         -ctrl.b * yd, -ctrl.b * yv;
  m.c.resize(2 * n, nx + nc);
  m.c << ux, uc,
         yx, yc;
  m.d.resize(2 * n, 2 * n);
  m.d << ud, uv,
         yd, yv;
  return m;
}

/// Runs the loop u = d - K (y + v) with white Gaussian output noise v.
/// `x0` covers plant and controller states (zero when omitted).
inline SimulationRecord simulate_closed_loop(const StateSpaceModel& plant, const ControllerConfig& k, const TimeSeries& d,
                                             const std::vector<double>& noise_std, std::uint64_t noise_seed,
                                             const std::optional<Eigen::VectorXd>& x0 = std::nullopt) {
  const StateSpaceModel cl = closed_loop_model(plant, k);
  if (!cl.is_stable()) throw RuntimeDefect("closed loop is unstable");
  const Eigen::Index n = plant.n_u();
  detail::require(d.channels() == n, "excitation must have one channel per loop");
  detail::require(static_cast<Eigen::Index>(noise_std.size()) == n, "one noise level per output required");
  detail::require(std::abs(d.ts() - *plant.ts) <= 1e-12 * *plant.ts, "excitation ts does not match the plant ts");
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, d.samples());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = noise_std[static_cast<std::size_t>(i)];
    detail::require(std::isfinite(s) && s >= 0.0, "noise std must be nonnegative");
    if (s == 0.0) continue;
    Rng rng(mix_seed(noise_seed, static_cast<std::uint64_t>(i)));
    for (Eigen::Index t = 0; t < d.samples(); ++t) v(i, t) = s * rng.normal();
  }
  Eigen::MatrixXd w(2 * n, d.samples());
  w << d.data(), v;
  Eigen::VectorXd x = x0.value_or(Eigen::VectorXd::Zero(cl.n_x()));
  detail::require(x.size() == cl.n_x(), "closed-loop initial state has the wrong dimension");
  const Eigen::VectorXd start = x;
  const Eigen::MatrixXd out = detail::run_state_space(cl, w, x);
  return SimulationRecord{TimeSeries(d.data(), d.ts(), detail::prefixed_names("d", n)),
                          TimeSeries(out.topRows(n), d.ts(), detail::prefixed_names("u", n)),
                          TimeSeries(out.bottomRows(n), d.ts(), detail::prefixed_names("y", n)),
                          TimeSeries(std::move(v), d.ts(), detail::prefixed_names("v", n)), start, std::move(x)};
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// Generalized frequency: j omega (continuous) or e^{j omega ts} (discrete).
inline std::complex<double> generalized_frequency(const StateSpaceModel& m, double omega) {
  return m.is_discrete() ? std::polar(1.0, omega * *m.ts) : std::complex<double>(0.0, omega);
}

/// C (Omega I - A)^{-1} B + D at a single frequency.
inline Eigen::MatrixXcd frequency_response(const StateSpaceModel& m, double omega) {
  const auto s = generalized_frequency(m, omega);
  const Eigen::MatrixXcd lhs = s * Eigen::MatrixXcd::Identity(m.n_x(), m.n_x()) - m.a.cast<std::complex<double>>();
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(lhs);
  if (!(std::abs(lu.determinant()) > 0.0)) throw RuntimeDefect("singular (Omega I - A)");
  return m.c.cast<std::complex<double>>() * lu.solve(m.b.cast<std::complex<double>>()) + m.d.cast<std::complex<double>>();
}

/// Analytic FRF on the given bins (zero variance, oracle flag set).
inline FrfEstimate true_frf(const StateSpaceModel& m, const Eigen::VectorXd& omega) {
  m.validate();
  if (m.is_discrete()) {
    const double nyquist = std::numbers::pi / *m.ts;
    for (Eigen::Index k = 0; k < omega.size(); ++k)
      detail::require(omega[k] >= 0.0 && omega[k] <= nyquist * (1.0 + 1e-12), "true_frf: frequency beyond Nyquist");
  }
  FrfEstimate e = FrfEstimate::zeros(omega, m.n_y(), m.n_u(), "oracle");
  e.is_oracle = true;
  e.variance.assign(static_cast<std::size_t>(omega.size()), Eigen::MatrixXd::Zero(m.n_y(), m.n_u()));
  for (Eigen::Index k = 0; k < omega.size(); ++k) {
    const auto s = generalized_frequency(m, omega[k]);
    const Eigen::MatrixXcd lhs = s * Eigen::MatrixXcd::Identity(m.n_x(), m.n_x()) - m.a.cast<std::complex<double>>();
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(lhs);
    if (!lu.isInvertible()) {
      e.mark_defect(k, "singular (Omega I - A)");
      continue;
    }
    e.g[static_cast<std::size_t>(k)] =
        m.c.cast<std::complex<double>>() * lu.solve(m.b.cast<std::complex<double>>()) + m.d.cast<std::complex<double>>();
  }
  return e;
}

/// Analytic closed-loop maps for u = d - K y:
/// sensitivity S = (I + K G)^{-1} (d -> u) and process sensitivity G S (d -> y).
struct ClosedLoopOracle {
  FrfEstimate s;
  FrfEstimate gs;
};

inline ClosedLoopOracle closed_loop_oracle(const StateSpaceModel& plant, const ControllerConfig& k,
                                           const Eigen::VectorXd& omega) {
  const FrfEstimate g = true_frf(plant, omega);
  ClosedLoopOracle out{FrfEstimate::zeros(omega, plant.n_u(), plant.n_u(), "oracle:S"),
                       FrfEstimate::zeros(omega, plant.n_y(), plant.n_u(), "oracle:GS")};
  out.s.is_oracle = out.gs.is_oracle = true;
  const Eigen::Index n = plant.n_u();
  for (Eigen::Index b = 0; b < omega.size(); ++b) {
    const auto& gb = g.g[static_cast<std::size_t>(b)];
    const Eigen::MatrixXcd loop = Eigen::MatrixXcd::Identity(n, n) + k.frequency_response(omega[b]) * gb;
    const Eigen::MatrixXcd s = loop.fullPivLu().inverse();
    out.s.g[static_cast<std::size_t>(b)] = s;
    out.gs.g[static_cast<std::size_t>(b)] = gb * s;
  }
  return out;
}

/// Transient term of an N-sample window for bins k = 0..N/2:
/// T(k) = 1/sqrt(N) C (I - z_k^{-1} A)^{-1} (x0 - xN), z_k = e^{j 2 pi k / N}.
inline std::vector<Eigen::VectorXcd> transient_oracle(const StateSpaceModel& m, const Eigen::VectorXd& x0,
                                                      const Eigen::VectorXd& x_n, std::size_t window_length) {
  m.validate();
  detail::require(m.is_discrete() && m.is_stable(), "transient_oracle needs a stable discrete model");
  detail::require(x0.size() == m.n_x() && x_n.size() == m.n_x(), "transient_oracle: state dimension mismatch");
  detail::require(window_length >= 1, "transient_oracle: window length must be positive");
  const Eigen::VectorXcd delta = (x0 - x_n).cast<std::complex<double>>();
  const Eigen::MatrixXcd a = m.a.cast<std::complex<double>>();
  const Eigen::MatrixXcd c = m.c.cast<std::complex<double>>();
  const Eigen::MatrixXcd eye = Eigen::MatrixXcd::Identity(m.n_x(), m.n_x());
  const double scale = 1.0 / std::sqrt(static_cast<double>(window_length));
  std::vector<Eigen::VectorXcd> out(window_length / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto z_inv =
        std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(window_length));
    out[k] = scale * (c * (eye - z_inv * a).partialPivLu().solve(delta));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& name) {
  require(j.is_array() && !j.empty(), "model field '" + name + "' must be a non-empty nested array");
  const std::size_t rows = j.size();
  const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
  require(cols >= 1, "model field '" + name + "' must be row-major nested arrays");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    require(j[i].is_array() && j[i].size() == cols, "model field '" + name + "' has ragged rows");
    for (std::size_t c = 0; c < cols; ++c) {
      require(j[i][c].is_number(), "model field '" + name + "' contains a non-number");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
    }
  }
  return m;
}

}  // namespace detail

/// {"A": [[..]], "B": [[..]], "C": [[..]], "D": [[..]], "ts": null | seconds}
inline nlohmann::json to_json(const StateSpaceModel& m) {
  nlohmann::json j;
  j["A"] = detail::matrix_to_json(m.a);
  j["B"] = detail::matrix_to_json(m.b);
  j["C"] = detail::matrix_to_json(m.c);
  j["D"] = detail::matrix_to_json(m.d);
  j["ts"] = m.ts ? nlohmann::json(*m.ts) : nlohmann::json(nullptr);
  return j;
}

inline StateSpaceModel model_from_json(const nlohmann::json& j) {
  detail::require(j.is_object(), "model JSON must be an object");
  for (const auto& [key, _] : j.items())
    detail::require(key == "A" || key == "B" || key == "C" || key == "D" || key == "ts",
                    "unknown model field '" + key + "'");
  for (const char* key : {"A", "B", "C"}) detail::require(j.contains(key), std::string("model JSON lacks '") + key + "'");
  StateSpaceModel m;
  m.a = detail::matrix_from_json(j["A"], "A");
  m.b = detail::matrix_from_json(j["B"], "B");
  m.c = detail::matrix_from_json(j["C"], "C");
  m.d = j.contains("D") ? detail::matrix_from_json(j["D"], "D") : Eigen::MatrixXd::Zero(m.c.rows(), m.b.cols());
  if (j.contains("ts") && !j["ts"].is_null()) {
    detail::require(j["ts"].is_number(), "model field 'ts' must be a number or null");
    m.ts = j["ts"].get<double>();
  }
  m.validate();
  return m;
}

}  // namespace frfkit
