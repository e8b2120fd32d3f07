#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "frfkit/scenario.hpp"

using namespace frfkit;
namespace fs = std::filesystem;

namespace {

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string validation_message(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("frfkit_scenario_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const BandStats& band(const ReportEntry& e, double hi_hz) {
  for (const auto& s : e.stats)
    if (s.band.hi_hz == hi_hz) return s;
  throw Error("band not found");
}

}  // namespace

TEST(ScenarioConfigParse, MinimalTransientDefaults) {
  const auto c = parse_config_text(R"({"scenario": "transient_study"})");
  EXPECT_EQ(c.scenario, ScenarioKind::TransientStudy);
  EXPECT_EQ(c.fs, 1000.0);
  EXPECT_EQ(c.period_s, 5.0);
  EXPECT_EQ(c.period_samples(), 5000U);
  EXPECT_EQ(c.n_periods_total, 2U);
  EXPECT_EQ(c.n_periods_used, 2U);
  EXPECT_EQ(c.initial_state, InitialState::Zero);
  ASSERT_EQ(c.noise_std.size(), 2U);
  EXPECT_EQ(c.noise_std[0], 1e-3);
  EXPECT_EQ(c.f_min_hz, 0.2);
  EXPECT_NEAR(c.f_max_hz, 499.8, 1e-9);
  EXPECT_EQ(c.excited_bins().front(), 1U);
  EXPECT_EQ(c.excited_bins().back(), 2499U);
  EXPECT_EQ(c.controller.n_loops(), 2);
  EXPECT_EQ(c.output_dir, "out/transient_study");
  ASSERT_EQ(c.bands.size(), 2U);
  EXPECT_EQ(c.bands[1].hi_hz, 40.0);
  EXPECT_TRUE(c.model.is_discrete());
  EXPECT_EQ(c.model.n_x(), discretize_zoh(paper_plant(), 1e-3).n_x());
}

TEST(ScenarioConfigParse, ScenarioSpecificDefaults) {
  const auto bias = parse_config_text(R"({"scenario": "closed_loop_siso_bias"})");
  EXPECT_EQ(bias.period_s, 1.0);
  EXPECT_EQ(bias.n_periods_total, 200U);
  EXPECT_EQ(bias.initial_state, InitialState::SteadyState);
  EXPECT_EQ(bias.monte_carlo_runs, 20U);
  EXPECT_EQ(bias.noise_std.size(), 1U);
  EXPECT_EQ(bias.controller.n_loops(), 1);
  const auto mimo = parse_config_text(R"({"scenario": "MimoFullVsEquivalent"})");
  EXPECT_EQ(mimo.discard_periods(), 2U);
  const auto custom = parse_config_text(R"({"scenario": "custom"})");
  EXPECT_EQ(custom.estimators.size(), 4U);
  EXPECT_EQ(custom.n_periods_used, 1U);
}

TEST(ScenarioConfigParse, RejectsInvalidFieldsByName) {
  EXPECT_NE(validation_message(R"({"scenario": "transient_study", "windwo": 3})").find("windwo"), std::string::npos);
  EXPECT_NE(validation_message(R"({"scenario": "transient_study", "multisine": {"period": 5}})")
                .find("multisine.period"),
            std::string::npos);
  EXPECT_NE(validation_message(R"({"scenario": "transient_study", "n_periods_total": 2, "n_periods_used": 3})")
                .find("n_periods_used"),
            std::string::npos);
  EXPECT_NE(validation_message(R"({"scenario": "transient_study", "multisine": {"period_s": -1}})")
                .find("multisine.period_s"),
            std::string::npos);
  EXPECT_NE(validation_message(R"({"scenario": "custom", "estimators": {"list": ["etfe", "magic"]}})").find("magic"),
            std::string::npos);
  EXPECT_NE(validation_message(R"({"scenario": "sideways"})").find("scenario"), std::string::npos);
  EXPECT_NE(validation_message(R"({"fs": 1000})").find("scenario"), std::string::npos);
  EXPECT_NE(validation_message(R"({"scenario": "transient_study", "fs": "fast"})").find("fs"), std::string::npos);
  EXPECT_NE(validation_message("{not json").find("JSON"), std::string::npos);
  EXPECT_NE(validation_message(R"({"scenario": "mimo_full_vs_equivalent", "initial_state": "steady_state"})")
                .find("initial_state"),
            std::string::npos);
  EXPECT_THROW(parse_config("/nonexistent/frfkit.json"), ValidationError);
}

TEST(ScenarioConfigParse, EchoRoundTrips) {
  for (const char* name : {"transient_study", "closed_loop_siso_bias", "mimo_full_vs_equivalent", "custom_open_loop"}) {
    const std::string dir = std::string(FRFKIT_SOURCE_DIR) + "/configs";
    const auto c = parse_config(dir + "/" + name + ".json");
    const auto echo = to_json(c);
    const auto again = to_json(parse_config_json(echo, dir));
    EXPECT_EQ(echo, again) << name;
  }
}

TEST(ScenarioConfigParse, RelativePlantPathResolvesAgainstConfigDirectory) {
  const auto dir = scratch("plant_path");
  fs::create_directories(dir / "models");
  fs::copy_file(fs::path(FRFKIT_SOURCE_DIR) / "configs/paper_plant.json", dir / "models/p.json");
  std::ofstream(dir / "cfg.json") << R"({"scenario": "custom", "plant": "models/p.json"})";
  const auto c = parse_config((dir / "cfg.json").string());
  const auto builtin = discretize_zoh(paper_plant(), 1e-3);
  EXPECT_LT((c.model.a - builtin.a).norm(), 1e-12);
  std::ofstream(dir / "bad.json") << R"({"scenario": "custom", "plant": "models/missing.json"})";
  EXPECT_THROW(parse_config((dir / "bad.json").string()), ValidationError);
}

TEST(ScenarioConfigParse, SeedOverrideSetsBothSeeds) {
  auto c = parse_config_text(R"({"scenario": "transient_study", "seeds": {"excitation": 5, "noise": 6}})");
  EXPECT_EQ(c.excitation_seed, 5U);
  override_seed(c, 99);
  EXPECT_EQ(c.excitation_seed, 99U);
  EXPECT_EQ(c.noise_seed, 99U);
}

TEST(ScenarioRun, TransientStudyOrdersEstimators) {
  const auto r = run_scenario(parse_config_text(R"({"scenario": "transient_study"})"));
  const double lpm = band(r.estimate("frf_lpm"), 40.0).max_abs_error;
  const double rect = band(r.estimate("frf_sa_rect"), 40.0).max_abs_error;
  const double hann = band(r.estimate("frf_sa_hann"), 40.0).max_abs_error;
  EXPECT_LT(lpm, rect);
  EXPECT_LT(rect, hann);
  EXPECT_FALSE(r.defect_threshold_exceeded);
  EXPECT_EQ(r.estimate("frf_lpm").estimate.n_bins(), static_cast<Eigen::Index>(r.config.excited_bins().size()));
}

TEST(ScenarioRun, SteadyStateStartNarrowsTheGap) {
  auto c = parse_config_text(R"({"scenario": "transient_study", "initial_state": "steady_state"})");
  const auto r = run_scenario(c);
  const double lpm = band(r.estimate("frf_lpm"), 40.0).max_error_db;
  const double rect = band(r.estimate("frf_sa_rect"), 40.0).max_error_db;
  EXPECT_LT(std::abs(lpm - rect), 20.0);
}

TEST(ScenarioRun, MimoFullPlantMatchesTruth) {
  const auto r = run_scenario(parse_config_text(R"({"scenario": "mimo_full_vs_equivalent"})"));
  const auto& m = r.results.at("mimo_check");
  EXPECT_LT(m.at("max_rel_full_vs_true").get<double>(), 1e-6);
  for (const auto& loop : m.at("loops")) EXPECT_LT(loop.at("max_rel_equiv_vs_formula").get<double>(), 1e-6);
  EXPECT_TRUE(r.estimate("g_full").estimate.defects.empty());
}

TEST(ScenarioRun, SisoBiasDirectEstimateFollowsAsymptote) {
  const auto r = run_scenario(parse_config_text(
      R"({"scenario": "closed_loop_siso_bias", "n_periods_total": 60, "monte_carlo_runs": 6})"));
  const auto& b = r.results.at("bias_check");
  EXPECT_GT(b.at("fraction_within_3se").get<double>(), 0.9);
  // Few runs here, so allow a handful of bins where noise favours the direct estimate.
  EXPECT_GE(b.at("bins_indirect_closer").get<double>(), 0.95 * b.at("bins_bias_above_3se").get<double>());
  EXPECT_GT(b.at("bins_bias_above_3se").get<int>(), 0);
}

TEST(ScenarioRun, CustomOpenLoopEstimatorsAgainstOracle) {
  const auto r = run_scenario(parse_config_text(R"({"scenario": "custom", "n_periods_total": 3, "n_periods_used": 2})"));
  for (const char* n : {"frf_etfe", "frf_sa_rect", "frf_sa_hann", "frf_lpm"}) {
    const auto& e = r.estimate(n);
    EXPECT_EQ(e.estimate.n_y(), 2) << n;
    EXPECT_EQ(e.estimate.n_u(), 1) << n;
  }
  EXPECT_LT(band(r.estimate("frf_etfe"), 400.0).max_abs_error, 1e-2);
}

TEST(ScenarioRun, DefectThresholdIsReported) {
  const auto r = run_scenario(parse_config_text(
      R"({"scenario": "custom", "estimators": {"list": ["etfe"], "floor": 2.0}, "max_defect_fraction": 0.1})"));
  EXPECT_TRUE(r.defect_threshold_exceeded);
}

TEST(ScenarioExport, WritesExpectedFilesDeterministically) {
  const auto c = parse_config_text(R"({"scenario": "transient_study"})");
  const auto a = scratch("export_a"), b = scratch("export_b");
  const auto files = export_report(run_scenario(c), a);
  export_report(run_scenario(c), b);
  for (const char* want : {"frf_sa_rect.csv", "frf_sa_hann.csv", "frf_lpm.csv", "oracle.csv", "errors.csv",
                           "summary.json", "run_info.json"})
    EXPECT_TRUE(fs::exists(a / want)) << want;
  for (const auto& f : files) {
    if (f == "run_info.json") continue;
    EXPECT_EQ(read(a / f), read(b / f)) << f;
  }
  const auto summary = nlohmann::json::parse(read(a / "summary.json"));
  EXPECT_EQ(summary.at("scenario"), "transient_study");
  EXPECT_EQ(summary.at("seeds").at("excitation"), 1);
  EXPECT_TRUE(summary.at("estimates").contains("frf_lpm"));
  EXPECT_EQ(read(a / "errors.csv").substr(0, 9), "estimate,");

  auto other = c;
  override_seed(other, 42);
  const auto o = scratch("export_seed");
  export_report(run_scenario(other), o);
  EXPECT_NE(read(a / "frf_lpm.csv"), read(o / "frf_lpm.csv"));
}
