// frfkit command line: scenario runner and analytic FRF oracle.
//
//   frfkit run <config> [--out DIR] [--seed-override N]
//   frfkit oracle <model.json> --fs HZ --bins N [--out FILE]
//
// Exit codes: 0 success, 2 validation error, 3 runtime defect threshold exceeded.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "frfkit/frfkit.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDefect = 3;

int run_command(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  frfkit::ScenarioConfig cfg = frfkit::parse_config(config_path);
  if (seed) frfkit::override_seed(cfg, *seed);
  // --out only redirects the files; summary.json keeps the configured output_dir.
  const std::string dir = out_dir.empty() ? cfg.output_dir : out_dir;
  const frfkit::ScenarioReport report = frfkit::run_scenario(cfg);
  const auto files = frfkit::export_report(report, dir);

  std::cout << "scenario " << frfkit::to_string(cfg.scenario) << " -> " << dir << "\n";
  for (const auto& e : report.estimates) {
    std::cout << "  " << e.name << ": " << e.estimate.defects.size() << " defect bins";
    for (const auto& s : e.stats)
      std::cout << "; [" << frfkit::io::format_number(s.band.lo_hz) << ", " << frfkit::io::format_number(s.band.hi_hz)
                << ") Hz max error " << frfkit::io::format_number(s.max_error_db) << " dB";
    std::cout << "\n";
  }
  std::cout << "  wrote " << files.size() << " files\n";
  if (report.defect_threshold_exceeded) {
    std::cerr << "frfkit: defect fraction above max_defect_fraction ("
              << frfkit::io::format_number(cfg.max_defect_fraction) << ")\n";
    return kExitDefect;
  }
  return kExitOk;
}

int oracle_command(const std::string& model_path, double fs, std::size_t bins, const std::string& out_file) {
  frfkit::detail::require(std::isfinite(fs) && fs > 0.0, "--fs must be positive");
  frfkit::detail::require(bins >= 2, "--bins must be at least 2");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(frfkit::io::read_file(model_path));
  } catch (const nlohmann::json::exception& e) {
    throw frfkit::ValidationError("cannot parse '" + model_path + "': " + e.what());
  }
  frfkit::StateSpaceModel m = frfkit::model_from_json(j);
  if (m.is_discrete()) {
    if (std::abs(*m.ts - 1.0 / fs) > 1e-12 / fs) throw frfkit::ValidationError("model ts does not match 1 / --fs");
  } else {
    m = frfkit::discretize_zoh(m, 1.0 / fs);
  }
  // `bins` points from DC to Nyquist inclusive: the one-sided grid of a
  // 2 (bins - 1) sample DFT.
  const Eigen::VectorXd omega = frfkit::bin_frequencies(2 * (bins - 1), 1.0 / fs);
  const std::string csv = frfkit::to_csv(frfkit::true_frf(m, omega));
  if (out_file.empty()) {
    std::cout << csv;
  } else {
    frfkit::io::write_file(out_file, csv);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonparametric FRF identification toolkit"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a scenario config and export its results");
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  run->add_option("config", config_path, "Scenario JSON file")->required();
  run->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  run->add_option("--seed-override", seed, "Replace the excitation and noise seeds");

  auto* oracle = app.add_subcommand("oracle", "Emit the analytic FRF of a state-space model as CSV");
  std::string model_path, oracle_out;
  double fs = 0.0;
  std::size_t bins = 0;
  oracle->add_option("model", model_path, "Model JSON file (A, B, C, D, optional ts)")->required();
  oracle->add_option("--fs", fs, "Sampling frequency [Hz]")->required();
  oracle->add_option("--bins", bins, "Number of bins from DC to Nyquist")->required();
  oracle->add_option("--out", oracle_out, "Write the CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*run) return run_command(config_path, out_dir, seed);
    return oracle_command(model_path, fs, bins, oracle_out);
  } catch (const frfkit::ValidationError& e) {
    std::cerr << "frfkit: validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const frfkit::RuntimeDefect& e) {
    std::cerr << "frfkit: runtime defect: " << e.what() << "\n";
    return kExitDefect;
  } catch (const std::exception& e) {
    std::cerr << "frfkit: error: " << e.what() << "\n";
    return 1;
  }
}
