#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ncc/harness.hpp"

using namespace ncc;

namespace {

ExperimentSpec small_spec() {
  ExperimentSpec spec = preset("fig3_caliper");
  spec.scenario.n = 400;
  spec.replicates = 3;
  spec.lambda_grid = {1.0};
  spec.base_seed = 5;
  return spec;
}

std::vector<ReplicateResult> fake_results() {
  std::vector<ReplicateResult> results;
  const double diffs[3] = {1.0, 2.0, 3.0};
  for (int r = 0; r < 3; ++r) {
    ReplicateResult rr;
    rr.replicate = r;
    rr.reference[Estimand::log_hr_xb] = 0.7;
    CellResult cell;
    cell.ok = true;
    cell.estimate = 0.7 + diffs[r];
    rr.cells["km"][Estimand::log_hr_xb] = cell;
    results.push_back(rr);
  }
  return results;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("estimand names round trip") {
  for (Estimand e : {Estimand::log_hr_xb, Estimand::cond_surv_xa0_at_u1,
                     Estimand::theta_xb_on_xa})
    CHECK(estimand_from_name(estimand_name(e)) == e);
  CHECK_THROWS_AS(estimand_from_name("bogus"), std::invalid_argument);
}

TEST_CASE("presets exist, validate, and unknown names throw") {
  auto names = preset_names();
  CHECK(names.size() == 6);
  for (const auto& name : names) CHECK_NOTHROW(preset(name).validate());
  CHECK_THROWS_AS(preset("fig9"), std::invalid_argument);
  // Spot checks of the designs.
  CHECK(preset("fig3_nn").matching.mode == MatchingMode::nearest_neighbor);
  CHECK(preset("fig4_interactions").matching.exact_factors ==
        std::vector<std::string>{"m2"});
  CHECK(preset("fig4_interactions").weight_variants.size() == 3);
  CHECK(preset("fig5_Z").scenario.alpha_m1 == 0.0);
  CHECK(preset("fig5_W").scenario.rho_mxa == 0.2);
  CHECK(preset("fig5_V").weight_variants.size() == 4);
}

TEST_CASE("experiment runs are deterministic in the base seed") {
  ExperimentSpec spec = small_spec();
  auto a = run_experiment(spec);
  auto b = run_experiment(spec);
  REQUIRE(a.size() == 3);
  for (std::size_t r = 0; r < a.size(); ++r) {
    CHECK(a[r].reference.at(Estimand::log_hr_xb) == b[r].reference.at(Estimand::log_hr_xb));
    for (const auto& [method, cells] : a[r].cells)
      for (const auto& [e, cell] : cells) {
        const CellResult& other = b[r].cells.at(method).at(e);
        CHECK(cell.ok == other.ok);
        if (cell.ok) CHECK(cell.estimate == other.estimate);
      }
  }
  // Every estimand gets a comparator column plus the two weight variants.
  CHECK(a[0].cells.count("km") == 1);
  CHECK(a[0].cells.count("gam") == 1);
  CHECK(a[0].cells.count("clogit") == 1);
  CHECK(a[0].cells.at("clogit").count(Estimand::log_hr_xb) == 1);
  CHECK(a[0].cells.at("clogit").count(Estimand::theta_xb_on_xa) == 0);
  CHECK(a[0].sum_weights_km > 0.0);
  CHECK(a[0].eligible_count > 0);
}

TEST_CASE("bias summary of a known diff sequence") {
  BiasSummary summary = summarize_bias(fake_results());
  const BiasCell& cell = summary.cells.at("km").at(Estimand::log_hr_xb);
  CHECK(cell.n_ok == 3);
  CHECK(cell.n_failed == 0);
  CHECK(cell.mean_diff == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(cell.sd_diff == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cell.q1 == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(cell.median == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(cell.q3 == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(cell.t_stat == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("bias summary is invariant to replicate order and counts failures") {
  auto results = fake_results();
  results[1].cells["km"][Estimand::log_hr_xb].ok = false;
  results[1].cells["km"][Estimand::log_hr_xb].error = "boom";
  BiasSummary a = summarize_bias(results);
  std::swap(results[0], results[2]);
  BiasSummary b = summarize_bias(results);
  CHECK(a.cells.at("km").at(Estimand::log_hr_xb).mean_diff ==
        b.cells.at("km").at(Estimand::log_hr_xb).mean_diff);
  CHECK(a.cells.at("km").at(Estimand::log_hr_xb).n_failed == 1);
  CHECK(a.cells.at("km").at(Estimand::log_hr_xb).n_ok == 2);
}

TEST_CASE("export writes the requested formats and is byte-stable") {
  auto results = fake_results();
  BiasSummary summary = summarize_bias(results);
  auto base = std::filesystem::temp_directory_path() / "harness_export_test";
  std::filesystem::remove_all(base);

  auto written = export_results(results, summary, base / "a", {"csv", "json", "svg"});
  // replicates.csv, summary.csv, summary.json, one boxplot per estimand.
  CHECK(written.size() == 4);
  CHECK(std::filesystem::exists(base / "a" / "replicates.csv"));
  CHECK(std::filesystem::exists(base / "a" / "summary.csv"));
  CHECK(std::filesystem::exists(base / "a" / "summary.json"));
  CHECK(std::filesystem::exists(base / "a" / "boxplot_log_hr_xb.svg"));

  std::string header = slurp(base / "a" / "replicates.csv");
  CHECK(header.rfind("replicate,estimand,method,estimate,reference,diff", 0) == 0);

  auto only_csv = export_results(results, summary, base / "b", {"csv"});
  CHECK(only_csv.size() == 2);
  CHECK(!std::filesystem::exists(base / "b" / "summary.json"));

  // Re-export is byte-identical.
  export_results(results, summary, base / "c", {"csv", "json", "svg"});
  CHECK(slurp(base / "a" / "replicates.csv") == slurp(base / "c" / "replicates.csv"));
  CHECK(slurp(base / "a" / "summary.json") == slurp(base / "c" / "summary.json"));
  CHECK(slurp(base / "a" / "boxplot_log_hr_xb.svg") ==
        slurp(base / "c" / "boxplot_log_hr_xb.svg"));

  // The boxplot carries one labelled group per method.
  std::string svg = slurp(base / "a" / "boxplot_log_hr_xb.svg");
  CHECK(svg.find("data-method=\"km\"") != std::string::npos);
  CHECK(svg.find("<rect") != std::string::npos);
  std::filesystem::remove_all(base);
}

TEST_CASE("json summary matches the csv summary numbers") {
  auto results = fake_results();
  BiasSummary summary = summarize_bias(results);
  auto base = std::filesystem::temp_directory_path() / "harness_json_test";
  std::filesystem::remove_all(base);
  export_results(results, summary, base, {"json"});
  nlohmann::json j;
  std::ifstream(base / "summary.json") >> j;
  CHECK(j.at("log_hr_xb").at("km").at("mean_diff").get<double>() ==
        doctest::Approx(2.0).epsilon(1e-12));
  CHECK(j.at("log_hr_xb").at("km").at("n_ok").get<int>() == 3);
  std::filesystem::remove_all(base);
}

TEST_CASE("validation rejects broken experiment specs") {
  ExperimentSpec spec = small_spec();
  spec.replicates = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = small_spec();
  spec.estimands.clear();
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
