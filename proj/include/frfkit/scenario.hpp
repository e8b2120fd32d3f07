#pragma once

// Scenario runner: strict JSON configuration, seeded simulation pipelines and
// byte-stable export of estimates, oracle curves and summary statistics.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "frfkit/closed_loop.hpp"
#include "frfkit/error.hpp"
#include "frfkit/estimators.hpp"
#include "frfkit/frf.hpp"
#include "frfkit/io.hpp"
#include "frfkit/parallel.hpp"
#include "frfkit/random.hpp"
#include "frfkit/signals.hpp"
#include "frfkit/state_space.hpp"

namespace frfkit {

enum class ScenarioKind { TransientStudy, ClosedLoopSisoBias, MimoFullVsEquivalent, Custom };

inline std::string to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::TransientStudy: return "transient_study";
    case ScenarioKind::ClosedLoopSisoBias: return "closed_loop_siso_bias";
    case ScenarioKind::MimoFullVsEquivalent: return "mimo_full_vs_equivalent";
    case ScenarioKind::Custom: return "custom";
  }
  return "custom";
}

enum class InitialState { Zero, SteadyState };

inline std::string to_string(InitialState s) { return s == InitialState::Zero ? "zero" : "steady_state"; }

struct FrequencyBand {
  double lo_hz = 0.0;
  double hi_hz = 0.0;  // half-open [lo, hi)
  bool contains(double f) const { return f >= lo_hz && f < hi_hz; }
};

/// Fully materialized scenario parameters. Every field is echoed into summary.json.
struct ScenarioConfig {
  ScenarioKind scenario = ScenarioKind::TransientStudy;
  std::string plant = "builtin";  // "builtin" or a model JSON path
  StateSpaceModel model;          // discrete plant (all inputs and outputs)
  double fs = 1000.0;
  ControllerConfig controller;
  double period_s = 5.0;
  double f_min_hz = 0.0;
  double f_max_hz = 0.0;
  double rms = 1.0;
  std::size_t excited_input = 1;  // 1-based
  std::size_t n_periods_total = 2;
  std::size_t n_periods_used = 2;
  InitialState initial_state = InitialState::Zero;
  std::vector<double> noise_std;
  FrfMethod method = FrfMethod::SpectralAnalysis;
  std::vector<std::string> estimators;
  std::size_t sa_window_periods = 1;
  LpmConfig lpm;
  double floor = kDivisionFloor;
  std::size_t monte_carlo_runs = 1;
  std::uint64_t excitation_seed = 1;
  std::uint64_t noise_seed = 2;
  std::vector<FrequencyBand> bands;
  double max_defect_fraction = 0.5;
  std::string output_dir = "out";

  double ts() const { return 1.0 / fs; }

  /// The siso bias scenario closes a single loop around G_ii, i = excited_input.
  bool single_loop() const { return scenario == ScenarioKind::ClosedLoopSisoBias; }

  StateSpaceModel simulated_model() const {
    if (!single_loop() || model.n_u() == 1) return model;
    const auto i = static_cast<Eigen::Index>(excited_input - 1);
    return model.subsystem({i}, {i});
  }

  /// Input channel of simulated_model() that carries the excitation.
  Eigen::Index excited_channel() const { return single_loop() ? 0 : static_cast<Eigen::Index>(excited_input - 1); }

  std::size_t period_samples() const { return static_cast<std::size_t>(std::llround(period_s * fs)); }
  std::size_t discard_periods() const { return n_periods_total - n_periods_used; }

  /// Multisine bins k (of the period grid) with f_min <= k fs / P <= f_max.
  std::vector<std::size_t> excited_bins() const {
    const std::size_t p = period_samples();
    std::vector<std::size_t> out;
    const double df = fs / static_cast<double>(p);
    for (std::size_t k = 1; k + 1 <= p / 2; ++k) {
      const double f = static_cast<double>(k) * df;
      if (f >= f_min_hz * (1.0 - 1e-12) && f <= f_max_hz * (1.0 + 1e-12)) out.push_back(k);
    }
    return out;
  }

  MultisineSpec excitation() const {
    return flat_multisine(period_samples(), excited_bins(), rms, excitation_seed, n_periods_total);
  }

  void validate() const;
};

namespace detail {

/// Reads one JSON object and rejects keys that were never asked for.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(where() + "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const nlohmann::json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const auto& v = at(key);
    if (!v.is_number()) throw ValidationError(field(key) + ": expected a number");
    return v.get<double>();
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ValidationError(field(key) + ": expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const auto& v = at(key);
    if (!v.is_string()) throw ValidationError(field(key) + ": expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key) {
    const auto& v = at(key);
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array()) throw ValidationError(field(key) + ": expected a number or an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ValidationError(field(key) + "[" + std::to_string(i) + "]: expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ValidationError(field(it.key()) + ": unknown key");
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : path_ + ": "; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline ScenarioKind parse_scenario_kind(const std::string& s) {
  if (s == "transient_study" || s == "TransientStudy") return ScenarioKind::TransientStudy;
  if (s == "closed_loop_siso_bias" || s == "ClosedLoopSisoBias") return ScenarioKind::ClosedLoopSisoBias;
  if (s == "mimo_full_vs_equivalent" || s == "MimoFullVsEquivalent") return ScenarioKind::MimoFullVsEquivalent;
  if (s == "custom" || s == "Custom") return ScenarioKind::Custom;
  throw ValidationError("scenario: unknown scenario '" + s + "'");
}

inline const std::vector<std::string>& known_estimators() {
  static const std::vector<std::string> names{"etfe", "sa_rect", "sa_hann", "lpm"};
  return names;
}

template <typename Fn>
auto with_field(const std::string& field, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError(field + ": " + e.what());
  }
}

}  // namespace detail

inline void ScenarioConfig::validate() const {
  using detail::require;
  if (!(std::isfinite(fs) && fs > 0.0)) throw ValidationError("fs: must be positive");
  if (!(std::isfinite(period_s) && period_s > 0.0)) throw ValidationError("multisine.period_s: must be positive");
  const double p = period_s * fs;
  if (std::abs(p - std::round(p)) > 1e-9 * std::max(1.0, p))
    throw ValidationError("multisine.period_s: period_s * fs must be a whole number of samples");
  if (period_samples() < 8) throw ValidationError("multisine.period_s: period must span at least 8 samples");
  if (!(rms > 0.0 && std::isfinite(rms))) throw ValidationError("multisine.rms: must be positive");
  if (!(f_min_hz <= f_max_hz)) throw ValidationError("multisine.f_max_hz: must not be below f_min_hz");
  if (excited_bins().empty()) throw ValidationError("multisine: no excitable bin between f_min_hz and f_max_hz");
  if (n_periods_total < 1) throw ValidationError("n_periods_total: must be at least 1");
  if (n_periods_used < 1) throw ValidationError("n_periods_used: must be at least 1");
  if (n_periods_used > n_periods_total) throw ValidationError("n_periods_used: exceeds n_periods_total");
  if (sa_window_periods < 1) throw ValidationError("estimators.sa_window_periods: must be at least 1");
  if (n_periods_used % sa_window_periods != 0)
    throw ValidationError("estimators.sa_window_periods: must divide n_periods_used");
  if (!(floor >= 0.0 && std::isfinite(floor))) throw ValidationError("estimators.floor: must be nonnegative");
  if (excited_input < 1 || excited_input > static_cast<std::size_t>(model.n_u()))
    throw ValidationError("excited_input: out of range 1.." + std::to_string(model.n_u()));
  if (single_loop() && model.n_u() != model.n_y())
    throw ValidationError("plant: closed-loop scenarios need a square plant");
  const StateSpaceModel sim = simulated_model();
  if (noise_std.size() != static_cast<std::size_t>(sim.n_y()))
    throw ValidationError("noise_std: expected " + std::to_string(sim.n_y()) + " values");
  for (double s : noise_std)
    if (!(s >= 0.0 && std::isfinite(s))) throw ValidationError("noise_std: values must be nonnegative");
  if (monte_carlo_runs < 1) throw ValidationError("monte_carlo_runs: must be at least 1");
  if (!(max_defect_fraction >= 0.0 && max_defect_fraction <= 1.0))
    throw ValidationError("max_defect_fraction: must lie in [0, 1]");
  for (std::size_t i = 0; i < bands.size(); ++i)
    if (!(bands[i].lo_hz >= 0.0 && bands[i].lo_hz < bands[i].hi_hz))
      throw ValidationError("bands_hz[" + std::to_string(i) + "]: need 0 <= lo < hi");
  if (bands.empty()) throw ValidationError("bands_hz: at least one band required");
  detail::with_field("estimators.lpm", [&] { lpm.validate(1); });
  if (scenario != ScenarioKind::Custom) {
    if (sim.n_u() != sim.n_y()) throw ValidationError("plant: closed-loop scenarios need a square plant");
    if (controller.n_loops() != sim.n_u())
      throw ValidationError("controller.loops: expected " + std::to_string(sim.n_u()) + " loops");
    detail::with_field("controller", [&] { controller.validate(); });
  }
  if (scenario == ScenarioKind::MimoFullVsEquivalent && model.n_u() < 2)
    throw ValidationError("plant: mimo_full_vs_equivalent needs at least two inputs");
  if (scenario == ScenarioKind::Custom) {
    if (estimators.empty()) throw ValidationError("estimators.list: at least one estimator required");
    for (const auto& e : estimators)
      if (std::find(detail::known_estimators().begin(), detail::known_estimators().end(), e) ==
          detail::known_estimators().end())
        throw ValidationError("estimators.list: unknown estimator '" + e + "'");
  }
  if (model.n_x() == 0) throw ValidationError("plant: model has no states");
  if (!model.is_stable()) throw ValidationError("plant: discrete model is not stable");
}

/// Parses a JSON scenario document. Relative plant paths resolve against
/// `base_dir`. Defaults depend on the scenario and are written back into the
/// returned config.
inline ScenarioConfig parse_config_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".") {
  detail::ObjectReader root(j, "");
  ScenarioConfig cfg;
  if (!root.has("scenario")) throw ValidationError("scenario: required");
  cfg.scenario = detail::parse_scenario_kind(root.text("scenario", ""));
  const ScenarioKind kind = cfg.scenario;

  cfg.fs = root.number("fs", 1000.0);
  if (!(std::isfinite(cfg.fs) && cfg.fs > 0.0)) throw ValidationError("fs: must be positive");

  cfg.plant = root.text("plant", "builtin");
  StateSpaceModel plant;
  if (cfg.plant == "builtin") {
    plant = paper_plant();
  } else {
    std::filesystem::path p(cfg.plant);
    if (p.is_relative()) p = base_dir / p;
    nlohmann::json mj;
    try {
      mj = nlohmann::json::parse(io::read_file(p.string()));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("plant: cannot parse '" + p.string() + "': " + e.what());
    }
    plant = detail::with_field("plant", [&] { return model_from_json(mj); });
  }
  if (plant.is_discrete()) {
    if (std::abs(*plant.ts - 1.0 / cfg.fs) > 1e-12 / cfg.fs)
      throw ValidationError("plant: discrete model ts does not match 1 / fs");
    cfg.model = plant;
  } else {
    cfg.model = detail::with_field("plant", [&] { return discretize_zoh(plant, 1.0 / cfg.fs); });
  }

  cfg.excited_input = root.count("excited_input", 1);
  if (cfg.excited_input < 1 || cfg.excited_input > static_cast<std::size_t>(cfg.model.n_u()))
    throw ValidationError("excited_input: out of range 1.." + std::to_string(cfg.model.n_u()));
  if (kind == ScenarioKind::ClosedLoopSisoBias && cfg.model.n_u() != cfg.model.n_y())
    throw ValidationError("plant: closed-loop scenarios need a square plant");
  const StateSpaceModel sim = cfg.simulated_model();

  const double default_period = kind == ScenarioKind::ClosedLoopSisoBias ? 1.0 : 5.0;
  std::size_t default_total = 2, default_used = 2;
  switch (kind) {
    case ScenarioKind::TransientStudy: break;
    case ScenarioKind::ClosedLoopSisoBias: default_total = default_used = 200; break;
    case ScenarioKind::MimoFullVsEquivalent: default_total = 4; break;
    case ScenarioKind::Custom: default_used = 1; break;
  }

  if (root.has("multisine")) {
    detail::ObjectReader ms(root.at("multisine"), "multisine");
    cfg.period_s = ms.number("period_s", default_period);
    if (!(std::isfinite(cfg.period_s) && cfg.period_s > 0.0)) throw ValidationError("multisine.period_s: must be positive");
    const double df = 1.0 / cfg.period_s;
    const double last = std::floor(cfg.period_s * cfg.fs / 2.0 + 1e-9) - 1.0;
    cfg.f_min_hz = ms.number("f_min_hz", df);
    cfg.f_max_hz = ms.number("f_max_hz", last * df);
    cfg.rms = ms.number("rms", 1.0);
    ms.finish();
  } else {
    cfg.period_s = default_period;
    const double df = 1.0 / cfg.period_s;
    cfg.f_min_hz = df;
    cfg.f_max_hz = (std::floor(cfg.period_s * cfg.fs / 2.0 + 1e-9) - 1.0) * df;
  }

  cfg.n_periods_total = root.count("n_periods_total", default_total);
  cfg.n_periods_used = root.count("n_periods_used", std::min<std::size_t>(default_used, cfg.n_periods_total));

  const std::string ic = root.text("initial_state", kind == ScenarioKind::ClosedLoopSisoBias ? "steady_state" : "zero");
  if (ic == "zero") {
    cfg.initial_state = InitialState::Zero;
  } else if (ic == "steady_state") {
    cfg.initial_state = InitialState::SteadyState;
  } else {
    throw ValidationError("initial_state: expected 'zero' or 'steady_state'");
  }
  if (kind == ScenarioKind::MimoFullVsEquivalent && cfg.initial_state != InitialState::Zero)
    throw ValidationError("initial_state: mimo_full_vs_equivalent starts from rest and discards periods instead");

  double default_noise = 0.0;
  if (kind == ScenarioKind::TransientStudy) default_noise = 1e-3;
  if (kind == ScenarioKind::ClosedLoopSisoBias) default_noise = 0.5;
  const auto ny = static_cast<std::size_t>(sim.n_y());
  if (root.has("noise_std")) {
    auto v = root.numbers("noise_std");
    if (v.size() == 1) v.assign(ny, v.front());
    cfg.noise_std = v;
  } else {
    cfg.noise_std.assign(ny, default_noise);
  }

  cfg.lpm = kind == ScenarioKind::TransientStudy ? LpmConfig{2, 3, 1} : LpmConfig::defaults(1);
  if (kind == ScenarioKind::Custom) cfg.estimators = detail::known_estimators();
  if (root.has("estimators")) {
    detail::ObjectReader est(root.at("estimators"), "estimators");
    const std::string method = est.text("method", "sa");
    if (method == "sa") {
      cfg.method = FrfMethod::SpectralAnalysis;
    } else if (method == "lpm") {
      cfg.method = FrfMethod::Lpm;
    } else {
      throw ValidationError("estimators.method: expected 'sa' or 'lpm'");
    }
    cfg.sa_window_periods = est.count("sa_window_periods", 1);
    cfg.floor = est.number("floor", kDivisionFloor);
    if (est.has("list")) {
      if (kind != ScenarioKind::Custom) throw ValidationError("estimators.list: only used by the custom scenario");
      const auto& l = est.at("list");
      if (!l.is_array()) throw ValidationError("estimators.list: expected an array of names");
      cfg.estimators.clear();
      for (const auto& e : l) {
        if (!e.is_string()) throw ValidationError("estimators.list: expected an array of names");
        cfg.estimators.push_back(e.get<std::string>());
      }
    }
    if (est.has("lpm")) {
      detail::ObjectReader lp(est.at("lpm"), "estimators.lpm");
      const auto order = static_cast<int>(lp.count("order", static_cast<std::uint64_t>(cfg.lpm.order)));
      if (!lp.has("half_width") && !lp.has("dof_margin")) {
        cfg.lpm = LpmConfig::defaults(1, order);
      } else {
        cfg.lpm.order = order;
      }
      cfg.lpm.half_width = static_cast<int>(lp.count("half_width", static_cast<std::uint64_t>(cfg.lpm.half_width)));
      cfg.lpm.dof_margin = static_cast<int>(lp.count("dof_margin", static_cast<std::uint64_t>(cfg.lpm.dof_margin)));
      lp.finish();
    }
    est.finish();
  }

  const auto n_loops = static_cast<std::size_t>(sim.n_u());
  if (root.has("controller")) {
    detail::ObjectReader ctl(root.at("controller"), "controller");
    if (!ctl.has("loops")) throw ValidationError("controller.loops: required");
    const auto& loops = ctl.at("loops");
    if (!loops.is_array()) throw ValidationError("controller.loops: expected an array");
    cfg.controller.ts = cfg.ts();
    for (std::size_t i = 0; i < loops.size(); ++i) {
      detail::ObjectReader lr(loops[i], "controller.loops[" + std::to_string(i) + "]");
      if (!lr.has("num") || !lr.has("den")) throw ValidationError(lr.field("num") + ": num and den are required");
      cfg.controller.loops.push_back(DiscreteTf{lr.numbers("num"), lr.numbers("den")});
      lr.finish();
    }
    ctl.finish();
  } else {
    cfg.controller = default_controller(cfg.ts(), n_loops);
  }

  cfg.monte_carlo_runs = root.count("monte_carlo_runs", kind == ScenarioKind::ClosedLoopSisoBias ? 20 : 1);
  if (kind != ScenarioKind::ClosedLoopSisoBias && cfg.monte_carlo_runs != 1)
    throw ValidationError("monte_carlo_runs: only used by closed_loop_siso_bias");

  if (root.has("seeds")) {
    detail::ObjectReader sd(root.at("seeds"), "seeds");
    cfg.excitation_seed = sd.count("excitation", 1);
    cfg.noise_seed = sd.count("noise", 2);
    sd.finish();
  }

  const double nyquist = cfg.fs / 2.0;
  if (root.has("bands_hz")) {
    const auto& b = root.at("bands_hz");
    if (!b.is_array()) throw ValidationError("bands_hz: expected an array of [lo, hi] pairs");
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (!b[i].is_array() || b[i].size() != 2 || !b[i][0].is_number() || !b[i][1].is_number())
        throw ValidationError("bands_hz[" + std::to_string(i) + "]: expected [lo, hi]");
      cfg.bands.push_back({b[i][0].get<double>(), b[i][1].get<double>()});
    }
  } else {
    cfg.bands.push_back({0.4, 0.8 * nyquist});
    if (kind == ScenarioKind::TransientStudy) cfg.bands.push_back({0.0, 40.0});
  }

  cfg.max_defect_fraction = root.number("max_defect_fraction", 0.5);
  cfg.output_dir = root.text("output_dir", "out/" + to_string(kind));
  root.finish();
  cfg.validate();
  return cfg;
}

inline ScenarioConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = ".") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config_json(j, base_dir);
}

inline ScenarioConfig parse_config(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("config file '" + path + "' does not exist");
  return parse_config_text(io::read_file(path), std::filesystem::path(path).parent_path());
}

/// Materialized config in the same layout parse_config accepts.
inline nlohmann::json to_json(const ScenarioConfig& c) {
  using nlohmann::json;
  json loops = json::array();
  for (const auto& l : c.controller.loops) loops.push_back({{"num", l.num}, {"den", l.den}});
  json bands = json::array();
  for (const auto& b : c.bands) bands.push_back({b.lo_hz, b.hi_hz});
  json est{{"method", to_string(c.method)},
           {"sa_window_periods", c.sa_window_periods},
           {"floor", c.floor},
           {"lpm", {{"order", c.lpm.order}, {"half_width", c.lpm.half_width}, {"dof_margin", c.lpm.dof_margin}}}};
  if (c.scenario == ScenarioKind::Custom) est["list"] = c.estimators;
  json out{{"scenario", to_string(c.scenario)},
           {"plant", c.plant},
           {"fs", c.fs},
           {"multisine", {{"period_s", c.period_s}, {"f_min_hz", c.f_min_hz}, {"f_max_hz", c.f_max_hz}, {"rms", c.rms}}},
           {"excited_input", c.excited_input},
           {"n_periods_total", c.n_periods_total},
           {"n_periods_used", c.n_periods_used},
           {"initial_state", to_string(c.initial_state)},
           {"noise_std", c.noise_std},
           {"estimators", est},
           {"monte_carlo_runs", c.monte_carlo_runs},
           {"seeds", {{"excitation", c.excitation_seed}, {"noise", c.noise_seed}}},
           {"bands_hz", bands},
           {"max_defect_fraction", c.max_defect_fraction},
           {"output_dir", c.output_dir}};
  if (c.scenario != ScenarioKind::Custom) out["controller"] = {{"loops", loops}};
  return out;
}

/// Replaces both base seeds.
inline void override_seed(ScenarioConfig& c, std::uint64_t seed) {
  c.excitation_seed = seed;
  c.noise_seed = seed;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct BandStats {
  FrequencyBand band;
  std::size_t n_bins = 0;     // evaluated (non-defect) bins
  std::size_t n_defects = 0;  // defect bins inside the band
  double max_abs_error = std::numeric_limits<double>::quiet_NaN();
  double mean_abs_error = std::numeric_limits<double>::quiet_NaN();
  double max_error_db = std::numeric_limits<double>::quiet_NaN();
  double mean_error_db = std::numeric_limits<double>::quiet_NaN();
};

/// One exported FRF. `oracle` names the matching entry of ScenarioReport::oracles.
struct ReportEntry {
  std::string name;
  FrfEstimate estimate;
  std::string oracle;
  std::vector<Eigen::MatrixXd> abs_error;  // per bin, |G_hat - G_0|; empty without oracle
  std::vector<BandStats> stats;
};

struct ScenarioReport {
  ScenarioConfig config;
  std::vector<ReportEntry> estimates;
  std::vector<ReportEntry> oracles;
  nlohmann::json results = nlohmann::json::object();
  std::vector<std::pair<std::string, std::string>> extra_files;  // file name, content
  bool defect_threshold_exceeded = false;
  double runtime_seconds = 0.0;
  std::string started_utc;

  const ReportEntry& estimate(const std::string& name) const {
    for (const auto& e : estimates)
      if (e.name == name) return e;
    throw Error("no estimate named '" + name + "' in the report");
  }

  const ReportEntry& oracle(const std::string& name) const {
    for (const auto& e : oracles)
      if (e.name == name) return e;
    throw Error("no oracle named '" + name + "' in the report");
  }
};

inline double to_db(double v) { return 20.0 * std::log10(v); }

inline std::vector<Eigen::MatrixXd> abs_error(const FrfEstimate& est, const FrfEstimate& oracle) {
  detail::require(est.n_bins() == oracle.n_bins() && est.n_y() == oracle.n_y() && est.n_u() == oracle.n_u(),
                  "estimate and oracle shapes differ");
  std::vector<Eigen::MatrixXd> out;
  for (Eigen::Index k = 0; k < est.n_bins(); ++k) {
    const auto sk = static_cast<std::size_t>(k);
    detail::require(std::abs(est.bin_frequencies[k] - oracle.bin_frequencies[k]) <=
                        1e-9 * std::max(1.0, oracle.bin_frequencies[k]),
                    "estimate and oracle frequency grids differ");
    out.push_back((est.g[sk] - oracle.g[sk]).cwiseAbs());
  }
  return out;
}

/// Statistics over all entries of the non-defect bins inside the band.
inline BandStats band_stats(const FrfEstimate& est, const std::vector<Eigen::MatrixXd>& err, const FrequencyBand& band) {
  BandStats s;
  s.band = band;
  double sum = 0.0, max = 0.0;
  std::size_t count = 0;
  for (Eigen::Index k = 0; k < est.n_bins(); ++k) {
    if (!band.contains(est.bin_frequencies[k] / (2.0 * std::numbers::pi))) continue;
    if (est.is_defect(k)) {
      ++s.n_defects;
      continue;
    }
    ++s.n_bins;
    const auto& e = err[static_cast<std::size_t>(k)];
    sum += e.sum();
    max = std::max(max, e.maxCoeff());
    count += static_cast<std::size_t>(e.size());
  }
  if (count > 0) {
    s.max_abs_error = max;
    s.mean_abs_error = sum / static_cast<double>(count);
    s.max_error_db = to_db(max);
    s.mean_error_db = to_db(s.mean_abs_error);
  }
  return s;
}

namespace detail {

inline FrfEstimate entry(const FrfEstimate& e, Eigen::Index i, Eigen::Index j) {
  FrfEstimate out = FrfEstimate::zeros(e.bin_frequencies, 1, 1, e.estimator_tag);
  out.metadata = e.metadata;
  out.variance_approximate = e.variance_approximate;
  out.is_oracle = e.is_oracle;
  if (e.has_variance()) out.variance.assign(static_cast<std::size_t>(e.n_bins()), Eigen::MatrixXd::Zero(1, 1));
  if (e.has_transient()) out.transient.assign(static_cast<std::size_t>(e.n_bins()), Eigen::VectorXcd::Zero(1));
  if (!e.condition.empty()) out.condition = e.condition;
  for (Eigen::Index k = 0; k < e.n_bins(); ++k) {
    const auto sk = static_cast<std::size_t>(k);
    out.g[sk](0, 0) = e.g[sk](i, j);
    if (e.has_variance()) out.variance[sk](0, 0) = e.variance[sk](i, j);
    if (e.has_transient()) out.transient[sk][0] = e.transient[sk][i];
  }
  for (const auto& d : e.defects) out.mark_defect(d.bin, d.reason);
  return out;
}

/// Bins of a grid `factor` times finer than the period grid.
inline std::vector<Eigen::Index> scaled_bins(const std::vector<std::size_t>& bins, std::size_t factor) {
  std::vector<Eigen::Index> out;
  for (auto b : bins) out.push_back(static_cast<Eigen::Index>(b * factor));
  return out;
}

inline Eigen::VectorXd excited_frequencies(const ScenarioConfig& c) {
  const auto bins = c.excited_bins();
  Eigen::VectorXd w(static_cast<Eigen::Index>(bins.size()));
  const double scale = 2.0 * std::numbers::pi * c.fs / static_cast<double>(c.period_samples());
  for (std::size_t i = 0; i < bins.size(); ++i) w[static_cast<Eigen::Index>(i)] = scale * static_cast<double>(bins[i]);
  return w;
}

inline EstimationOptions estimation_options(const ScenarioConfig& c, FrfMethod method, WindowKind window) {
  EstimationOptions o;
  o.method = method;
  o.window_length = c.sa_window_periods * c.period_samples();
  o.window = window;
  o.lpm = c.lpm;
  o.floor = c.floor;
  return o;
}

/// Grid factor between the estimator output and the period grid.
inline std::size_t grid_factor(const ScenarioConfig& c, FrfMethod method) {
  return method == FrfMethod::Lpm ? c.n_periods_used : c.sa_window_periods;
}

inline TimeSeries excitation_matrix(const ScenarioConfig& c, const MultisineSpec& spec, Eigen::Index n,
                                    Eigen::Index channel) {
  const TimeSeries one = generate_multisine(spec, c.ts());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, one.samples());
  d.row(channel) = one.data().row(0);
  return TimeSeries(std::move(d), c.ts(), prefixed_names("d", n));
}

/// Closed-loop state that is periodic under excitation `d` (noise-free).
inline Eigen::VectorXd closed_loop_steady_state(const ScenarioConfig& c, const TimeSeries& d) {
  const StateSpaceModel cl = closed_loop_model(c.simulated_model(), c.controller);
  if (!cl.is_stable()) throw RuntimeDefect("closed loop is unstable");
  const Eigen::Index n = d.channels();
  const auto p = static_cast<Eigen::Index>(c.period_samples());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2 * n, p);
  w.topRows(n) = d.data().leftCols(p);
  return periodic_steady_state(cl, TimeSeries(std::move(w), c.ts()));
}

inline void add_estimate(ScenarioReport& r, std::string name, FrfEstimate est, std::string oracle) {
  r.estimates.push_back(ReportEntry{std::move(name), std::move(est), std::move(oracle), {}, {}});
}

inline void add_oracle(ScenarioReport& r, std::string name, FrfEstimate est) {
  est.is_oracle = true;
  r.oracles.push_back(ReportEntry{std::move(name), std::move(est), "", {}, {}});
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---- scenario pipelines -----------------------------------------------------

inline void run_transient_study(ScenarioReport& r) {
  const ScenarioConfig& c = r.config;
  const Eigen::Index n = c.model.n_u();
  const auto loop = static_cast<Eigen::Index>(c.excited_input - 1);
  const MultisineSpec spec = c.excitation();
  const TimeSeries d = excitation_matrix(c, spec, n, loop);
  std::optional<Eigen::VectorXd> x0;
  if (c.initial_state == InitialState::SteadyState) x0 = closed_loop_steady_state(c, d);
  const auto rec = simulate_closed_loop(c.model, c.controller, d, c.noise_std, c.noise_seed, x0);
  const auto start = static_cast<Eigen::Index>(c.discard_periods() * c.period_samples());
  const auto data = ClosedLoopDataset::from_record(rec, loop, c.controller).slice(start, rec.d.samples() - start);

  const auto bins = c.excited_bins();
  const Eigen::VectorXd omega = excited_frequencies(c);
  const ClosedLoopOracle oracle = closed_loop_oracle(c.model, c.controller, omega);
  add_oracle(r, "oracle", entry(oracle.s, loop, loop));

  const std::vector<std::tuple<std::string, FrfMethod, WindowKind>> runs{
      {"frf_sa_rect", FrfMethod::SpectralAnalysis, WindowKind::Rectangular},
      {"frf_sa_hann", FrfMethod::SpectralAnalysis, WindowKind::Hann},
      {"frf_lpm", FrfMethod::Lpm, WindowKind::Rectangular}};
  for (const auto& [name, method, window] : runs) {
    const FrmPair cols = sensitivity_columns(data, estimation_options(c, method, window));
    FrfEstimate s = entry(cols.s, loop, 0).select_bins(scaled_bins(bins, grid_factor(c, method)));
    s.bin_frequencies = omega;
    s.estimator_tag = "S" + std::to_string(loop + 1) + std::to_string(loop + 1) + ":" + s.estimator_tag;
    add_estimate(r, name, std::move(s), "oracle");
  }
}

inline void run_siso_bias(ScenarioReport& r) {
  const ScenarioConfig& c = r.config;
  const StateSpaceModel plant = c.simulated_model();
  const MultisineSpec spec = c.excitation();
  const TimeSeries d = excitation_matrix(c, spec, 1, 0);
  std::optional<Eigen::VectorXd> x0;
  if (c.initial_state == InitialState::SteadyState) x0 = closed_loop_steady_state(c, d);
  const auto bins = c.excited_bins();
  const Eigen::VectorXd omega = excited_frequencies(c);
  const auto nb = static_cast<std::size_t>(omega.size());
  const EstimationOptions opt = estimation_options(c, c.method, WindowKind::Rectangular);
  const auto sel = scaled_bins(bins, grid_factor(c, c.method));
  const auto start = static_cast<Eigen::Index>(c.discard_periods() * c.period_samples());

  // Running sums of each run's estimate per bin.
  struct Accumulator {
    std::vector<cplx> sum = {};
    std::vector<double> sum_sq_re = {}, sum_sq_im = {};
    std::vector<std::size_t> count = {};
    void init(std::size_t n) {
      sum.assign(n, 0.0);
      sum_sq_re.assign(n, 0.0);
      sum_sq_im.assign(n, 0.0);
      count.assign(n, 0);
    }
    void add(const FrfEstimate& e) {
      for (std::size_t k = 0; k < sum.size(); ++k) {
        if (e.is_defect(static_cast<Eigen::Index>(k))) continue;
        const cplx v = e.g[k](0, 0);
        sum[k] += v;
        sum_sq_re[k] += v.real() * v.real();
        sum_sq_im[k] += v.imag() * v.imag();
        ++count[k];
      }
    }
    FrfEstimate mean(const Eigen::VectorXd& w, const std::string& tag) const {
      FrfEstimate e = FrfEstimate::zeros(w, 1, 1, tag);
      e.variance.assign(sum.size(), Eigen::MatrixXd::Zero(1, 1));
      for (std::size_t k = 0; k < sum.size(); ++k) {
        const auto n = static_cast<double>(count[k]);
        if (count[k] < 2) {
          e.mark_defect(static_cast<Eigen::Index>(k), "fewer than two valid runs");
          continue;
        }
        const cplx m = sum[k] / n;
        const double var_re = std::max(0.0, (sum_sq_re[k] - n * m.real() * m.real()) / (n - 1.0));
        const double var_im = std::max(0.0, (sum_sq_im[k] - n * m.imag() * m.imag()) / (n - 1.0));
        e.g[k](0, 0) = m;
        e.variance[k](0, 0) = (var_re + var_im) / n;  // squared standard error of the mean
      }
      return e;
    }
  } direct_acc, indirect_acc;
  direct_acc.init(nb);
  indirect_acc.init(nb);

  for (std::size_t run = 0; run < c.monte_carlo_runs; ++run) {
    const auto rec = simulate_closed_loop(plant, c.controller, d, c.noise_std, experiment_seed(c.noise_seed, run), x0);
    const auto data = ClosedLoopDataset::from_record(rec, 0, c.controller).slice(start, rec.d.samples() - start);
    direct_acc.add(direct_estimate(data, opt).select_bins(sel));
    indirect_acc.add(indirect_estimate(data, opt).select_bins(sel));
  }
  const std::string runs = std::to_string(c.monte_carlo_runs);
  FrfEstimate direct = direct_acc.mean(omega, "direct:" + to_string(c.method) + ":mean_of_" + runs + "_runs");
  FrfEstimate indirect = indirect_acc.mean(omega, "indirect:" + to_string(c.method) + ":mean_of_" + runs + "_runs");
  direct.metadata["variance"] = "squared standard error of the Monte-Carlo mean";
  indirect.metadata["variance"] = direct.metadata["variance"];

  const FrfEstimate g0 = true_frf(plant, omega);
  // Phi_dd from the excitation DFT over one estimator window; Phi_vv = sigma^2.
  const std::size_t win = c.method == FrfMethod::Lpm ? c.n_periods_used * c.period_samples()
                                                     : c.sa_window_periods * c.period_samples();
  const auto d_spec = dft(std::span<const double>(d.data().data(), win));
  const double phi_vv = c.noise_std.front() * c.noise_std.front();
  FrfEstimate asym = FrfEstimate::zeros(omega, 1, 1, "direct_asymptote");
  nlohmann::json per_bin = nlohmann::json::array();
  std::size_t tested = 0, within = 0, significant = 0, indirect_better = 0;
  std::string mc_csv = "frequency_hz,direct_re,direct_im,indirect_re,indirect_im,asymptote_re,asymptote_im,true_re,true_im,"
                       "direct_se,indirect_se,bias_abs,direct_dev_se\n";
  const FrequencyBand& band = c.bands.front();
  for (std::size_t k = 0; k < nb; ++k) {
    const auto sk = static_cast<Eigen::Index>(k);
    const double phi_dd = std::norm(d_spec[static_cast<std::size_t>(sel[k])]);
    const cplx kk = c.controller.frequency_response(omega[sk])(0, 0);
    const cplx g = g0.g[k](0, 0);
    const cplx a = direct_asymptote(g, kk, phi_dd, phi_vv);
    asym.g[k](0, 0) = a;
    const double f = omega[sk] / (2.0 * std::numbers::pi);
    const cplx dm = direct.g[k](0, 0), im = indirect.g[k](0, 0);
    const double se = std::sqrt(direct.variance[k](0, 0));
    const double bias = std::abs(a - g);
    const double dev = std::abs(dm - a) / se;
    mc_csv += io::format_number(f) + "," + io::format_number(dm.real()) + "," + io::format_number(dm.imag()) + "," +
              io::format_number(im.real()) + "," + io::format_number(im.imag()) + "," + io::format_number(a.real()) +
              "," + io::format_number(a.imag()) + "," + io::format_number(g.real()) + "," +
              io::format_number(g.imag()) + "," + io::format_number(se) + "," +
              io::format_number(std::sqrt(indirect.variance[k](0, 0))) + "," + io::format_number(bias) + "," +
              io::format_number(dev) + "\n";
    if (!band.contains(f) || direct.is_defect(sk) || indirect.is_defect(sk)) continue;
    ++tested;
    if (dev <= 3.0) ++within;
    if (bias > 3.0 * se) {
      ++significant;
      if (std::abs(im - g) < std::abs(dm - g)) ++indirect_better;
    }
  }
  add_oracle(r, "oracle", g0);
  add_oracle(r, "direct_asymptote", asym);
  add_estimate(r, "frf_direct", std::move(direct), "oracle");
  add_estimate(r, "frf_indirect", std::move(indirect), "oracle");
  r.extra_files.emplace_back("monte_carlo.csv", mc_csv);
  r.results["bias_check"] = {{"band_hz", {band.lo_hz, band.hi_hz}},
                             {"bins_tested", tested},
                             {"bins_within_3se_of_asymptote", within},
                             {"fraction_within_3se", tested ? static_cast<double>(within) / tested : 0.0},
                             {"bins_bias_above_3se", significant},
                             {"bins_indirect_closer", indirect_better},
                             {"phi_vv", phi_vv}};
}

inline void run_mimo(ScenarioReport& r) {
  const ScenarioConfig& c = r.config;
  MimoExperimentConfig mc;
  mc.excitation = c.excitation();
  mc.discard_periods = c.discard_periods();
  mc.noise_std = c.noise_std;
  mc.excitation_seed = c.excitation_seed;
  mc.noise_seed = c.noise_seed;
  mc.estimation = estimation_options(c, c.method, WindowKind::Rectangular);
  const FrmPair raw = run_mimo_experiments(c.model, c.controller, mc);
  const auto sel = scaled_bins(c.excited_bins(), grid_factor(c, c.method));
  const Eigen::VectorXd omega = excited_frequencies(c);
  FrmPair frm{raw.gs.select_bins(sel), raw.s.select_bins(sel)};
  frm.gs.bin_frequencies = frm.s.bin_frequencies = omega;

  FrfEstimate full = full_plant(frm);
  FrfEstimate equiv = equivalent_plant(frm, c.floor);

  const FrfEstimate g0 = true_frf(c.model, omega);
  const ClosedLoopOracle cl = closed_loop_oracle(c.model, c.controller, omega);
  FrfEstimate eq0 = FrfEstimate::zeros(omega, g0.n_y(), g0.n_u(), "oracle:equivalent_plant");
  for (Eigen::Index k = 0; k < omega.size(); ++k) {
    const auto sk = static_cast<std::size_t>(k);
    eq0.g[sk] = cl.gs.g[sk].cwiseQuotient(cl.s.g[sk]);
  }

  const Eigen::Index n = g0.n_u();
  nlohmann::json loops = nlohmann::json::array();
  std::string icsv = "frequency_hz,loop,full_minus_equiv_re,full_minus_equiv_im,interaction_re,interaction_im,gap_abs,"
                     "interaction_abs\n";
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(n, 2); ++i) {
    double max_gap_diff = 0.0, max_rel_equiv = 0.0;
    for (Eigen::Index k = 0; k < omega.size(); ++k) {
      if (n != 2) break;
      const auto sk = static_cast<std::size_t>(k);
      const cplx term = interaction_term(g0.g[sk], c.controller.frequency_response(omega[k]), i);
      const cplx eq_formula = g0.g[sk](i, i) - term;
      if (full.is_defect(k) || equiv.is_defect(k)) continue;
      const cplx gap = full.g[sk](i, i) - equiv.g[sk](i, i);
      max_gap_diff = std::max(max_gap_diff, std::abs(std::abs(gap) - std::abs(term)) / std::abs(g0.g[sk](i, i)));
      max_rel_equiv = std::max(max_rel_equiv, std::abs(equiv.g[sk](i, i) - eq_formula) / std::abs(eq_formula));
      icsv += io::format_number(omega[k] / (2.0 * std::numbers::pi)) + "," + std::to_string(i + 1) + "," +
              io::format_number(gap.real()) + "," + io::format_number(gap.imag()) + "," +
              io::format_number(term.real()) + "," + io::format_number(term.imag()) + "," +
              io::format_number(std::abs(gap)) + "," + io::format_number(std::abs(term)) + "\n";
    }
    if (n == 2)
      loops.push_back({{"loop", i + 1},
                       {"max_gap_vs_interaction_rel_gii", max_gap_diff},
                       {"max_rel_equiv_vs_formula", max_rel_equiv}});
  }
  double max_rel_full = 0.0;
  for (Eigen::Index k = 0; k < omega.size(); ++k) {
    if (full.is_defect(k)) continue;
    const auto sk = static_cast<std::size_t>(k);
    max_rel_full = std::max(max_rel_full, (full.g[sk] - g0.g[sk]).norm() / g0.g[sk].norm());
  }
  double max_cond = 0.0;
  for (double cnd : full.condition)
    if (std::isfinite(cnd)) max_cond = std::max(max_cond, cnd);

  add_oracle(r, "oracle", g0);
  add_oracle(r, "oracle_equiv", eq0);
  add_oracle(r, "oracle_gs", cl.gs);
  add_oracle(r, "oracle_s", cl.s);
  add_estimate(r, "gs", std::move(frm.gs), "oracle_gs");
  add_estimate(r, "s", std::move(frm.s), "oracle_s");
  add_estimate(r, "g_full", std::move(full), "oracle");
  add_estimate(r, "g_equiv", std::move(equiv), "oracle_equiv");
  if (n == 2) r.extra_files.emplace_back("interaction.csv", icsv);
  r.results["mimo_check"] = {{"max_rel_full_vs_true", max_rel_full},
                             {"max_condition_s", max_cond},
                             {"condition_limit", kConditionLimit},
                             {"loops", loops}};
}

inline void run_custom(ScenarioReport& r) {
  const ScenarioConfig& c = r.config;
  const Eigen::Index nu = c.model.n_u(), ny = c.model.n_y();
  const auto j = static_cast<Eigen::Index>(c.excited_input - 1);
  const MultisineSpec spec = c.excitation();
  const TimeSeries u = excitation_matrix(c, spec, nu, j);
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(c.model.n_x());
  if (c.initial_state == InitialState::SteadyState)
    x0 = periodic_steady_state(c.model, u.slice(0, static_cast<Eigen::Index>(c.period_samples())));
  auto rec = lsim(c.model, u, x0);
  Eigen::MatrixXd y = rec.y.data();
  for (Eigen::Index i = 0; i < ny; ++i) {
    const double s = c.noise_std[static_cast<std::size_t>(i)];
    if (s == 0.0) continue;
    Rng rng(mix_seed(c.noise_seed, static_cast<std::uint64_t>(i)));
    for (Eigen::Index t = 0; t < y.cols(); ++t) y(i, t) += s * rng.normal();
  }
  const auto start = static_cast<Eigen::Index>(c.discard_periods() * c.period_samples());
  const auto len = static_cast<Eigen::Index>(c.n_periods_used * c.period_samples());
  const TimeSeries uu = u.select({j}).slice(start, len);
  const TimeSeries yy = TimeSeries(std::move(y), c.ts(), rec.y.channel_names()).slice(start, len);

  const auto bins = c.excited_bins();
  const Eigen::VectorXd omega = excited_frequencies(c);
  FrfEstimate g0 = true_frf(c.model, omega);
  FrfEstimate col = FrfEstimate::zeros(omega, ny, 1, "oracle");
  col.variance.assign(static_cast<std::size_t>(omega.size()), Eigen::MatrixXd::Zero(ny, 1));
  for (Eigen::Index k = 0; k < omega.size(); ++k) col.g[static_cast<std::size_t>(k)] = g0.g[static_cast<std::size_t>(k)].col(j);
  add_oracle(r, "oracle", col);

  const std::size_t win = c.sa_window_periods * c.period_samples();
  for (const auto& name : c.estimators) {
    FrfEstimate e;
    std::size_t factor = c.sa_window_periods;
    if (name == "etfe") {
      // ETFE is SISO; stack the per-output estimates.
      const SpectrumSet us = windowed_spectra(uu, win, WindowKind::Rectangular, 0.0);
      const SpectrumSet ys = windowed_spectra(yy, win, WindowKind::Rectangular, 0.0);
      e = FrfEstimate::zeros(us.bin_frequencies, ny, 1, "etfe");
      for (Eigen::Index i = 0; i < ny; ++i) {
        const FrfEstimate ei = etfe(us, ys.select({i}), c.floor);
        e.metadata = ei.metadata;
        for (Eigen::Index k = 0; k < e.n_bins(); ++k) e.g[static_cast<std::size_t>(k)](i, 0) = ei.g[static_cast<std::size_t>(k)](0, 0);
        for (const auto& d : ei.defects) e.mark_defect(d.bin, "output " + std::to_string(i + 1) + ": " + d.reason);
      }
      e.sort_defects();
    } else if (name == "sa_rect" || name == "sa_hann") {
      const WindowKind w = name == "sa_rect" ? WindowKind::Rectangular : WindowKind::Hann;
      PowerSpectra ps = power_spectra(windowed_spectra(uu, win, w, 0.0), windowed_spectra(yy, win, w, 0.0));
      ps.window = to_string(w);
      e = spectral_analysis(ps, c.floor);
    } else {
      e = lpm_fit(spectra({uu}), spectra({yy}), c.lpm);
      factor = c.n_periods_used;
    }
    FrfEstimate s = e.select_bins(scaled_bins(bins, factor));
    s.bin_frequencies = omega;
    add_estimate(r, "frf_" + name, std::move(s), "oracle");
  }
}

}  // namespace detail

/// Runs the configured scenario. Estimator defects are recorded, not fatal;
/// an unstable loop throws RuntimeDefect.
inline ScenarioReport run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioReport r;
  r.config = cfg;
  r.started_utc = detail::utc_now();
  switch (cfg.scenario) {
    case ScenarioKind::TransientStudy: detail::run_transient_study(r); break;
    case ScenarioKind::ClosedLoopSisoBias: detail::run_siso_bias(r); break;
    case ScenarioKind::MimoFullVsEquivalent: detail::run_mimo(r); break;
    case ScenarioKind::Custom: detail::run_custom(r); break;
  }
  for (auto& e : r.estimates) {
    e.estimate.sort_defects();
    if (!e.oracle.empty()) {
      e.abs_error = abs_error(e.estimate, r.oracle(e.oracle).estimate);
      for (const auto& b : cfg.bands) e.stats.push_back(band_stats(e.estimate, e.abs_error, b));
    }
    const double fraction =
        e.estimate.n_bins() ? static_cast<double>(e.estimate.defects.size()) / static_cast<double>(e.estimate.n_bins()) : 0.0;
    if (fraction > cfg.max_defect_fraction) r.defect_threshold_exceeded = true;
  }
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline nlohmann::json to_json(const BandStats& s) {
  auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"band_hz", {s.band.lo_hz, s.band.hi_hz}}, {"n_bins", s.n_bins},
          {"n_defects", s.n_defects},                {"max_abs_error", num(s.max_abs_error)},
          {"mean_abs_error", num(s.mean_abs_error)}, {"max_error_db", num(s.max_error_db)},
          {"mean_error_db", num(s.mean_error_db)}};
}

/// Deterministic summary: config echo, plant, seeds, error statistics and defects.
inline nlohmann::json summary_json(const ScenarioReport& r) {
  using nlohmann::json;
  const auto& c = r.config;
  json estimates = json::object();
  for (const auto& e : r.estimates) {
    json defects = json::array();
    for (const auto& d : e.estimate.defects)
      defects.push_back({{"bin_index", d.bin},
                         {"frequency_hz", e.estimate.bin_frequencies[d.bin] / (2.0 * std::numbers::pi)},
                         {"reason", d.reason}});
    json bands = json::array();
    for (const auto& s : e.stats) bands.push_back(to_json(s));
    estimates[e.name] = {{"file", e.name + ".csv"},
                         {"estimator_tag", e.estimate.estimator_tag},
                         {"metadata", e.estimate.metadata},
                         {"oracle", e.oracle.empty() ? json(nullptr) : json(e.oracle + ".csv")},
                         {"n_bins", e.estimate.n_bins()},
                         {"variance_approximate", e.estimate.variance_approximate},
                         {"defects", defects},
                         {"bands", bands}};
  }
  json oracles = json::array();
  for (const auto& o : r.oracles) oracles.push_back(o.name + ".csv");
  const auto bins = c.excited_bins();
  return json{{"scenario", to_string(c.scenario)},
              {"config", to_json(c)},
              {"plant_model", to_json(c.model)},
              {"seeds", {{"excitation", c.excitation_seed}, {"noise", c.noise_seed}}},
              {"excitation",
               {{"period_samples", c.period_samples()},
                {"n_excited_bins", bins.size()},
                {"first_excited_hz", static_cast<double>(bins.front()) * c.fs / static_cast<double>(c.period_samples())},
                {"last_excited_hz", static_cast<double>(bins.back()) * c.fs / static_cast<double>(c.period_samples())},
                {"discarded_periods", c.discard_periods()}}},
              {"estimates", estimates},
              {"oracles", oracles},
              {"results", r.results},
              {"defect_threshold_exceeded", r.defect_threshold_exceeded}};
}

/// Long-format error curves: one row per estimate, entry and bin.
inline std::string errors_csv(const ScenarioReport& r) {
  std::string out = "estimate,entry,frequency_hz,magnitude_db,oracle_magnitude_db,abs_error,error_db\n";
  for (const auto& e : r.estimates) {
    if (e.oracle.empty()) continue;
    const auto& o = r.oracle(e.oracle).estimate;
    for (Eigen::Index i = 0; i < e.estimate.n_y(); ++i)
      for (Eigen::Index j = 0; j < e.estimate.n_u(); ++j)
        for (Eigen::Index k = 0; k < e.estimate.n_bins(); ++k) {
          const auto sk = static_cast<std::size_t>(k);
          const double err = e.abs_error[sk](i, j);
          out += e.name + "," + pair_label(i, j) + "," +
                 io::format_number(e.estimate.bin_frequencies[k] / (2.0 * std::numbers::pi)) + "," +
                 io::format_number(to_db(std::abs(e.estimate.g[sk](i, j)))) + "," +
                 io::format_number(to_db(std::abs(o.g[sk](i, j)))) + "," + io::format_number(err) + "," +
                 io::format_number(to_db(err)) + "\n";
        }
  }
  return out;
}

/// Writes every estimate and oracle as CSV plus errors.csv, summary.json and
/// run_info.json (the only file with wall-clock data). Returns the file names.
inline std::vector<std::string> export_report(const ScenarioReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir.string() + "': " + ec.message());
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& content) {
    io::write_file((dir / name).string(), content);
    written.push_back(name);
  };
  for (const auto& e : r.estimates) put(e.name + ".csv", to_csv(e.estimate));
  for (const auto& o : r.oracles) put(o.name + ".csv", to_csv(o.estimate));
  put("errors.csv", errors_csv(r));
  for (const auto& [name, content] : r.extra_files) put(name, content);
  put("summary.json", summary_json(r).dump(2) + "\n");
  const nlohmann::json info{{"started_utc", r.started_utc},
                            {"runtime_seconds", r.runtime_seconds},
                            {"thread_budget", thread_budget()}};
  put("run_info.json", info.dump(2) + "\n");
  return written;
}

}  // namespace frfkit
