#pragma once

// Sampled signals and their spectra: the 1/sqrt(N) DFT, random-phase
// multisines, segmentation into windows and window functions.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "frfkit/error.hpp"
#include "frfkit/io.hpp"
#include "frfkit/random.hpp"

namespace frfkit {

using cplx = std::complex<double>;

// ---------------------------------------------------------------------------
// TimeSeries
// ---------------------------------------------------------------------------

/// Multichannel real signal, one row per channel, sampled every ts seconds.
class TimeSeries {
 public:
  TimeSeries(Eigen::MatrixXd data, double ts, std::vector<std::string> channel_names = {})
      : data_(std::move(data)), ts_(ts), names_(std::move(channel_names)) {
    detail::require(data_.rows() >= 1 && data_.cols() >= 1, "TimeSeries needs at least one channel and one sample");
    detail::require(std::isfinite(ts_) && ts_ > 0.0, "TimeSeries sampling period must be positive");
    detail::require(data_.allFinite(), "TimeSeries samples must be finite");
    if (names_.empty()) {
      for (Eigen::Index c = 0; c < data_.rows(); ++c) names_.push_back("ch" + std::to_string(c));
    }
    detail::require(static_cast<Eigen::Index>(names_.size()) == data_.rows(),
                    "TimeSeries channel name count does not match channel count");
  }

  const Eigen::MatrixXd& data() const { return data_; }
  double ts() const { return ts_; }
  const std::vector<std::string>& channel_names() const { return names_; }
  Eigen::Index channels() const { return data_.rows(); }
  Eigen::Index samples() const { return data_.cols(); }

  Eigen::VectorXd channel(Eigen::Index c) const { return data_.row(c).transpose(); }

  TimeSeries slice(Eigen::Index start, Eigen::Index length) const {
    detail::require(start >= 0 && length >= 1 && start + length <= samples(), "TimeSeries slice out of range");
    return TimeSeries(data_.middleCols(start, length), ts_, names_);
  }

  TimeSeries select(const std::vector<Eigen::Index>& rows) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), samples());
    std::vector<std::string> names;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      detail::require(rows[i] >= 0 && rows[i] < channels(), "TimeSeries channel index out of range");
      out.row(static_cast<Eigen::Index>(i)) = data_.row(rows[i]);
      names.push_back(names_[static_cast<std::size_t>(rows[i])]);
    }
    return TimeSeries(std::move(out), ts_, std::move(names));
  }

  /// Channels of `a` followed by channels of `b`.
  static TimeSeries stack(const TimeSeries& a, const TimeSeries& b) {
    detail::require(a.samples() == b.samples() && a.ts() == b.ts(), "cannot stack TimeSeries of different length or ts");
    Eigen::MatrixXd out(a.channels() + b.channels(), a.samples());
    out << a.data(), b.data();
    auto names = a.channel_names();
    names.insert(names.end(), b.channel_names().begin(), b.channel_names().end());
    return TimeSeries(std::move(out), a.ts(), std::move(names));
  }

 private:
  Eigen::MatrixXd data_;
  double ts_;
  std::vector<std::string> names_;
};

/// CSV: header "time,<names...>", one row per sample, LF endings.
inline std::string to_csv(const TimeSeries& x) {
  std::string out = "time";
  for (const auto& n : x.channel_names()) out += "," + n;
  out += "\n";
  for (Eigen::Index i = 0; i < x.samples(); ++i) {
    out += io::format_number(static_cast<double>(i) * x.ts());
    for (Eigen::Index c = 0; c < x.channels(); ++c) {
      out += ",";
      out += io::format_number(x.data()(c, i));
    }
    out += "\n";
  }
  return out;
}

inline TimeSeries time_series_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  detail::require(static_cast<bool>(std::getline(in, line)), "empty TimeSeries CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = io::split(line);
  detail::require(header.size() >= 2, "TimeSeries CSV needs a time column and at least one channel");
  std::vector<std::string> names(header.begin() + 1, header.end());
  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = io::split(line);
    detail::require(cells.size() == header.size(), "TimeSeries CSV row has wrong column count");
    times.push_back(io::parse_number(cells[0]));
    std::vector<double> row;
    for (std::size_t c = 1; c < cells.size(); ++c) row.push_back(io::parse_number(cells[c]));
    rows.push_back(std::move(row));
  }
  detail::require(!rows.empty(), "TimeSeries CSV has no samples");
  double ts = 1.0;
  if (times.size() >= 2) ts = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  Eigen::MatrixXd data(static_cast<Eigen::Index>(names.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < names.size(); ++c)
      data(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) = rows[i][c];
  return TimeSeries(std::move(data), ts, std::move(names));
}

// ---------------------------------------------------------------------------
// DFT
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::FFT<double>& fft_engine() {
  thread_local Eigen::FFT<double> engine;
  return engine;
}

}  // namespace detail

/// X(k) = 1/sqrt(N) * sum_n x(n) exp(-j 2 pi n k / N), k = 0..N-1.
/// With this scaling the transform is unitary, so energy is preserved.
inline std::vector<cplx> dft(std::span<const double> x) {
  detail::require(!x.empty(), "dft of an empty sequence");
  for (double v : x) detail::require(std::isfinite(v), "dft input contains non-finite samples");
  if (x.size() == 1) return {cplx(x[0], 0.0)};  // kissfft cannot plan length 1
  std::vector<double> in(x.begin(), x.end());
  std::vector<cplx> out;
  detail::fft_engine().fwd(out, in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.size()));
  for (auto& v : out) v *= scale;
  return out;
}

/// Inverse of dft() for a conjugate-symmetric spectrum; returns the real signal.
inline std::vector<double> idft(std::span<const cplx> spectrum) {
  const std::size_t n = spectrum.size();
  detail::require(n >= 1, "idft of an empty spectrum");
  double peak = 0.0;
  for (const auto& v : spectrum) peak = std::max(peak, std::abs(v));
  const double tol = 1e-9 * std::max(peak, 1e-300);
  for (std::size_t k = 0; k < n; ++k) {
    const cplx mirror = spectrum[(n - k) % n];
    if (std::abs(spectrum[k] - std::conj(mirror)) > tol)
      throw ValidationError("idft: spectrum is not conjugate-symmetric at bin " + std::to_string(k));
  }
  std::vector<cplx> in(spectrum.begin(), spectrum.end());
  std::vector<cplx> out;
  detail::fft_engine().inv(out, in);  // includes 1/N
  std::vector<double> x(n);
  const double scale = std::sqrt(static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) x[i] = out[i].real() * scale;
  return x;
}

/// Real signal of length n from its one-sided spectrum (bins 0..n/2).
inline std::vector<double> idft_one_sided(std::span<const cplx> half, std::size_t n) {
  detail::require(half.size() == n / 2 + 1, "one-sided spectrum must have n/2+1 bins");
  std::vector<cplx> full(n);
  for (std::size_t k = 0; k < half.size(); ++k) full[k] = half[k];
  full[0] = cplx(half[0].real(), 0.0);
  if (n % 2 == 0) full[n / 2] = cplx(half[n / 2].real(), 0.0);
  for (std::size_t k = 1; k < (n + 1) / 2; ++k) full[n - k] = std::conj(full[k]);
  return idft(full);
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

enum class WindowKind { Rectangular, Hann };

inline std::string to_string(WindowKind k) { return k == WindowKind::Hann ? "hann" : "rectangular"; }

struct WindowFunction {
  WindowKind kind = WindowKind::Rectangular;
  std::size_t length = 0;

  /// Rectangular is all ones; Hann is the periodic form 0.5(1 - cos(2 pi n / N)).
  std::vector<double> values() const {
    detail::require(length >= 2, "window length must be at least 2");
    std::vector<double> w(length, 1.0);
    if (kind == WindowKind::Hann) {
      const double n = static_cast<double>(length);
      for (std::size_t i = 0; i < length; ++i)
        w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n));
    }
    return w;
  }

  /// mean(w^2); the power loss a window applies to stationary signals.
  double mean_square() const {
    const auto w = values();
    double s = 0.0;
    for (double v : w) s += v * v;
    return s / static_cast<double>(w.size());
  }
};

inline std::vector<double> apply_window(std::span<const double> x, const WindowFunction& w) {
  detail::require(x.size() == w.length, "apply_window: signal and window lengths differ");
  const auto values = w.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * values[i];
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation and spectra
// ---------------------------------------------------------------------------

inline std::size_t segment_stride(std::size_t window_length, double overlap_fraction) {
  detail::require(overlap_fraction >= 0.0 && overlap_fraction < 1.0, "overlap fraction must lie in [0, 1)");
  const auto stride =
      static_cast<std::size_t>(std::llround(static_cast<double>(window_length) * (1.0 - overlap_fraction)));
  return std::max<std::size_t>(stride, 1);
}

/// Full windows in order; a trailing partial window is dropped.
inline std::vector<TimeSeries> segment(const TimeSeries& x, std::size_t window_length, double overlap_fraction = 0.0) {
  detail::require(window_length >= 1, "window length must be positive");
  detail::require(static_cast<Eigen::Index>(window_length) <= x.samples(), "window length exceeds the record length");
  const std::size_t stride = segment_stride(window_length, overlap_fraction);
  const auto total = static_cast<std::size_t>(x.samples());
  const std::size_t count = (total - window_length) / stride + 1;
  std::vector<TimeSeries> windows;
  windows.reserve(count);
  for (std::size_t m = 0; m < count; ++m)
    windows.push_back(x.slice(static_cast<Eigen::Index>(m * stride), static_cast<Eigen::Index>(window_length)));
  return windows;
}

/// One-sided DFTs of a set of equally long windows.
struct SpectrumSet {
  std::vector<Eigen::MatrixXcd> windows;  // each: channels x bins
  Eigen::VectorXd bin_frequencies;        // rad/s
  std::size_t window_length = 0;

  std::size_t n_windows() const { return windows.size(); }
  Eigen::Index n_channels() const { return windows.empty() ? 0 : windows.front().rows(); }
  Eigen::Index n_bins() const { return bin_frequencies.size(); }

  SpectrumSet select(const std::vector<Eigen::Index>& channels) const {
    SpectrumSet out{{}, bin_frequencies, window_length};
    for (const auto& w : windows) {
      Eigen::MatrixXcd sel(static_cast<Eigen::Index>(channels.size()), w.cols());
      for (std::size_t i = 0; i < channels.size(); ++i) {
        detail::require(channels[i] >= 0 && channels[i] < w.rows(), "SpectrumSet channel index out of range");
        sel.row(static_cast<Eigen::Index>(i)) = w.row(channels[i]);
      }
      out.windows.push_back(std::move(sel));
    }
    return out;
  }

  void validate() const {
    detail::require(!windows.empty(), "SpectrumSet needs at least one window");
    detail::require(window_length >= 1, "SpectrumSet window length must be positive");
    detail::require(bin_frequencies.size() == static_cast<Eigen::Index>(window_length / 2 + 1),
                    "SpectrumSet must carry floor(N/2)+1 bins");
    for (Eigen::Index k = 1; k < bin_frequencies.size(); ++k)
      detail::require(bin_frequencies[k] > bin_frequencies[k - 1], "bin frequencies must be strictly increasing");
    for (const auto& w : windows)
      detail::require(w.rows() == windows.front().rows() && w.cols() == bin_frequencies.size(),
                      "SpectrumSet windows have inconsistent shapes");
  }
};

/// omega_k = 2 pi k / (N ts) for k = 0..N/2.
inline Eigen::VectorXd bin_frequencies(std::size_t window_length, double ts) {
  const auto n_bins = static_cast<Eigen::Index>(window_length / 2 + 1);
  Eigen::VectorXd w(n_bins);
  for (Eigen::Index k = 0; k < n_bins; ++k)
    w[k] = 2.0 * std::numbers::pi * static_cast<double>(k) / (static_cast<double>(window_length) * ts);
  return w;
}

/// One-sided spectra of each window. Every sample is multiplied by
/// `gain * w(n)`, where w is the window (no window = rectangular).
inline SpectrumSet spectra(const std::vector<TimeSeries>& windows,
                           const std::optional<WindowFunction>& window = std::nullopt, double gain = 1.0) {
  detail::require(!windows.empty(), "spectra: no windows");
  const auto length = static_cast<std::size_t>(windows.front().samples());
  std::vector<double> taper(length, 1.0);
  if (window) {
    detail::require(window->length == length, "spectra: window function length differs from segment length");
    taper = window->values();
  }
  for (auto& t : taper) t *= gain;
  SpectrumSet out;
  out.window_length = length;
  out.bin_frequencies = bin_frequencies(length, windows.front().ts());
  const auto n_bins = out.bin_frequencies.size();
  std::vector<double> buf(length);
  for (const auto& win : windows) {
    detail::require(static_cast<std::size_t>(win.samples()) == length && win.channels() == windows.front().channels(),
                    "spectra: windows differ in shape");
    Eigen::MatrixXcd m(win.channels(), n_bins);
    for (Eigen::Index c = 0; c < win.channels(); ++c) {
      for (std::size_t i = 0; i < length; ++i) buf[i] = win.data()(c, static_cast<Eigen::Index>(i)) * taper[i];
      const auto full = dft(buf);
      for (Eigen::Index k = 0; k < n_bins; ++k) m(c, k) = full[static_cast<std::size_t>(k)];
    }
    out.windows.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multisine
// ---------------------------------------------------------------------------

struct MultisineSpec {
  std::size_t period_samples = 0;
  std::vector<std::size_t> excited_bins;
  std::vector<double> amplitude_per_bin;
  std::uint64_t phase_seed = 0;
  std::size_t n_periods = 1;
  /// Explicit phases in radians; drawn uniformly from phase_seed when empty.
  std::vector<double> phases;

  void validate() const {
    detail::require(period_samples >= 4, "multisine period must be at least 4 samples");
    detail::require(n_periods >= 1, "multisine needs at least one period");
    detail::require(!excited_bins.empty(), "multisine needs at least one excited bin");
    detail::require(amplitude_per_bin.size() == excited_bins.size(), "one amplitude per excited bin required");
    detail::require(phases.empty() || phases.size() == excited_bins.size(), "one phase per excited bin required");
    std::vector<std::size_t> sorted = excited_bins;
    std::sort(sorted.begin(), sorted.end());
    detail::require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "excited bins must be distinct");
    for (std::size_t b : excited_bins)
      if (b < 1 || b > period_samples / 2 - 1)
        throw ValidationError("excited bin " + std::to_string(b) + " outside [1, period/2 - 1]");
    for (double a : amplitude_per_bin)
      detail::require(std::isfinite(a) && a > 0.0, "multisine amplitudes must be positive");
  }
};

/// Equal amplitudes on `bins`, scaled so that the signal RMS equals `rms`.
inline MultisineSpec flat_multisine(std::size_t period_samples, std::vector<std::size_t> bins, double rms,
                                    std::uint64_t phase_seed, std::size_t n_periods) {
  detail::require(rms > 0.0, "multisine RMS must be positive");
  detail::require(!bins.empty(), "multisine needs at least one excited bin");
  const double amplitude = rms * std::sqrt(2.0 / static_cast<double>(bins.size()));
  MultisineSpec spec;
  spec.period_samples = period_samples;
  spec.amplitude_per_bin.assign(bins.size(), amplitude);
  spec.excited_bins = std::move(bins);
  spec.phase_seed = phase_seed;
  spec.n_periods = n_periods;
  return spec;
}

/// Bins first..last inclusive.
inline std::vector<std::size_t> bin_range(std::size_t first, std::size_t last) {
  std::vector<std::size_t> out;
  for (std::size_t k = first; k <= last; ++k) out.push_back(k);
  return out;
}

inline std::vector<double> multisine_phases(const MultisineSpec& spec) {
  if (!spec.phases.empty()) return spec.phases;
  Rng rng(spec.phase_seed);
  std::vector<double> ph(spec.excited_bins.size());
  for (auto& p : ph) p = 2.0 * std::numbers::pi * rng.uniform();
  return ph;
}

/// sum_k a_k cos(2 pi k n / P + phi_k), tiled over n_periods.
inline TimeSeries generate_multisine(const MultisineSpec& spec, double ts) {
  spec.validate();
  const std::size_t period = spec.period_samples;
  const auto phases = multisine_phases(spec);
  std::vector<cplx> half(period / 2 + 1, cplx(0.0, 0.0));
  const double root_n = std::sqrt(static_cast<double>(period));
  for (std::size_t i = 0; i < spec.excited_bins.size(); ++i)
    half[spec.excited_bins[i]] = std::polar(0.5 * spec.amplitude_per_bin[i] * root_n, phases[i]);
  const auto one = idft_one_sided(half, period);
  Eigen::MatrixXd data(1, static_cast<Eigen::Index>(period * spec.n_periods));
  for (std::size_t p = 0; p < spec.n_periods; ++p)
    for (std::size_t i = 0; i < period; ++i) data(0, static_cast<Eigen::Index>(p * period + i)) = one[i];
  return TimeSeries(std::move(data), ts, {"d"});
}

}  // namespace frfkit
