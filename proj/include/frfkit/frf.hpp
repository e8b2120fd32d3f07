#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "frfkit/error.hpp"
#include "frfkit/io.hpp"

namespace frfkit {

/// A bin the estimator could not evaluate. Its entries are NaN.
struct BinDefect {
  Eigen::Index bin = 0;
  std::string reason;
};

/// Per-bin complex FRF matrix (n_y x n_u) with optional per-entry variance,
/// transient estimate and condition number.
struct FrfEstimate {
  Eigen::VectorXd bin_frequencies;           // rad/s, strictly increasing
  std::vector<Eigen::MatrixXcd> g;           // per bin, n_y x n_u
  std::vector<Eigen::MatrixXd> variance;     // per bin, n_y x n_u; empty when absent
  std::vector<Eigen::VectorXcd> transient;   // per bin, n_y; empty when absent
  std::vector<double> condition;             // per bin; empty when absent
  std::string estimator_tag;
  std::map<std::string, std::string> metadata;
  bool variance_approximate = false;
  bool is_oracle = false;
  std::vector<BinDefect> defects;

  static FrfEstimate zeros(const Eigen::VectorXd& freqs, Eigen::Index n_y, Eigen::Index n_u, std::string tag) {
    FrfEstimate e;
    e.bin_frequencies = freqs;
    e.g.assign(static_cast<std::size_t>(freqs.size()), Eigen::MatrixXcd::Zero(n_y, n_u));
    e.estimator_tag = std::move(tag);
    return e;
  }

  Eigen::Index n_bins() const { return bin_frequencies.size(); }
  Eigen::Index n_y() const { return g.empty() ? 0 : g.front().rows(); }
  Eigen::Index n_u() const { return g.empty() ? 0 : g.front().cols(); }
  bool has_variance() const { return !variance.empty(); }
  bool has_transient() const { return !transient.empty(); }

  bool is_defect(Eigen::Index k) const {
    return static_cast<std::size_t>(k) < defect_mask_.size() && defect_mask_[static_cast<std::size_t>(k)];
  }

  void mark_defect(Eigen::Index k, std::string reason) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto& gk = g[static_cast<std::size_t>(k)];
    gk.setConstant(std::complex<double>(nan, nan));
    if (has_variance()) variance[static_cast<std::size_t>(k)].setConstant(nan);
    if (has_transient()) transient[static_cast<std::size_t>(k)].setConstant(std::complex<double>(nan, nan));
    if (is_defect(k)) return;
    if (defect_mask_.size() != g.size()) defect_mask_.resize(g.size(), false);
    defect_mask_[static_cast<std::size_t>(k)] = true;
    defects.push_back({k, std::move(reason)});
  }

  void sort_defects() {
    std::sort(defects.begin(), defects.end(), [](const BinDefect& a, const BinDefect& b) { return a.bin < b.bin; });
  }

  /// Keep only the listed bins (in the given order).
  FrfEstimate select_bins(const std::vector<Eigen::Index>& bins) const {
    FrfEstimate out;
    out.bin_frequencies.resize(static_cast<Eigen::Index>(bins.size()));
    out.estimator_tag = estimator_tag;
    out.metadata = metadata;
    out.variance_approximate = variance_approximate;
    out.is_oracle = is_oracle;
    for (std::size_t i = 0; i < bins.size(); ++i) {
      const auto k = bins[i];
      detail::require(k >= 0 && k < n_bins(), "select_bins: bin out of range");
      const auto sk = static_cast<std::size_t>(k);
      out.bin_frequencies[static_cast<Eigen::Index>(i)] = bin_frequencies[k];
      out.g.push_back(g[sk]);
      if (has_variance()) out.variance.push_back(variance[sk]);
      if (has_transient()) out.transient.push_back(transient[sk]);
      if (!condition.empty()) out.condition.push_back(condition[sk]);
    }
    for (const auto& d : defects)
      for (std::size_t i = 0; i < bins.size(); ++i)
        if (bins[i] == d.bin) out.mark_defect(static_cast<Eigen::Index>(i), d.reason);
    out.sort_defects();
    return out;
  }

 private:
  std::vector<bool> defect_mask_;
};

inline std::string pair_label(Eigen::Index i, Eigen::Index j) {
  return "g" + std::to_string(i + 1) + "_" + std::to_string(j + 1);
}

/// Columns: frequency_hz, then re/im/variance per (output, input) pair,
/// then t<i>_re/t<i>_im when a transient is present and condition when present.
inline std::string to_csv(const FrfEstimate& e) {
  std::string out = "frequency_hz";
  for (Eigen::Index i = 0; i < e.n_y(); ++i)
    for (Eigen::Index j = 0; j < e.n_u(); ++j) {
      const auto p = pair_label(i, j);
      out += "," + p + "_re," + p + "_im," + p + "_var";
    }
  if (e.has_transient())
    for (Eigen::Index i = 0; i < e.n_y(); ++i) {
      const auto t = "t" + std::to_string(i + 1);
      out += "," + t + "_re," + t + "_im";
    }
  if (!e.condition.empty()) out += ",condition";
  out += "\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (Eigen::Index k = 0; k < e.n_bins(); ++k) {
    const auto sk = static_cast<std::size_t>(k);
    out += io::format_number(e.bin_frequencies[k] / (2.0 * std::numbers::pi));
    for (Eigen::Index i = 0; i < e.n_y(); ++i)
      for (Eigen::Index j = 0; j < e.n_u(); ++j) {
        const auto v = e.g[sk](i, j);
        out += "," + io::format_number(v.real()) + "," + io::format_number(v.imag()) + "," +
               io::format_number(e.has_variance() ? e.variance[sk](i, j) : nan);
      }
    if (e.has_transient())
      for (Eigen::Index i = 0; i < e.n_y(); ++i)
        out += "," + io::format_number(e.transient[sk][i].real()) + "," + io::format_number(e.transient[sk][i].imag());
    if (!e.condition.empty()) out += "," + io::format_number(e.condition[sk]);
    out += "\n";
  }
  return out;
}

inline nlohmann::json to_json(const FrfEstimate& e) {
  using nlohmann::json;
  auto number = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
  json bins = json::array();
  for (Eigen::Index k = 0; k < e.n_bins(); ++k) {
    const auto sk = static_cast<std::size_t>(k);
    json b;
    b["frequency_hz"] = e.bin_frequencies[k] / (2.0 * std::numbers::pi);
    json g = json::array();
    json var = json::array();
    for (Eigen::Index i = 0; i < e.n_y(); ++i) {
      json grow = json::array();
      json vrow = json::array();
      for (Eigen::Index j = 0; j < e.n_u(); ++j) {
        grow.push_back({number(e.g[sk](i, j).real()), number(e.g[sk](i, j).imag())});
        if (e.has_variance()) vrow.push_back(number(e.variance[sk](i, j)));
      }
      g.push_back(grow);
      var.push_back(vrow);
    }
    b["g"] = g;
    if (e.has_variance()) b["variance"] = var;
    if (e.has_transient()) {
      json t = json::array();
      for (Eigen::Index i = 0; i < e.n_y(); ++i)
        t.push_back({number(e.transient[sk][i].real()), number(e.transient[sk][i].imag())});
      b["transient"] = t;
    }
    if (!e.condition.empty()) b["condition"] = number(e.condition[sk]);
    bins.push_back(b);
  }
  json defects = json::array();
  for (const auto& d : e.defects) defects.push_back({{"bin", d.bin}, {"reason", d.reason}});
  return json{{"estimator_tag", e.estimator_tag},
              {"metadata", e.metadata},
              {"n_y", e.n_y()},
              {"n_u", e.n_u()},
              {"variance_present", e.has_variance()},
              {"variance_approximate", e.variance_approximate},
              {"oracle", e.is_oracle},
              {"bins", bins},
              {"defects", defects}};
}

}  // namespace frfkit
