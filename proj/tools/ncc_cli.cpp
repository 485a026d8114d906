// Command-line frontend: simulate / weights / fit.
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "ncc/harness.hpp"

namespace {

std::filesystem::path default_out_dir() {
  if (const char* env = std::getenv("NCC_OUT_DIR")) return env;
  return "out";
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Shared matching/design flags so `weights` and `fit` can rebuild the
// effective risk sets that the CSVs do not carry.
struct MatchingArgs {
  std::vector<std::string> caliper;  // name=tolerance
  std::vector<std::string> exact;
  std::string nn;
  std::size_t m = 1;
  double pi1 = 1.0;

  void attach(CLI::App* app) {
    app->add_option("--caliper", caliper, "caliper factor as name=tolerance (repeatable)");
    app->add_option("--exact", exact, "exact matching factor (repeatable)");
    app->add_option("--nn", nn, "nearest-neighbor matching factor");
    app->add_option("--m", m, "controls per case");
    app->add_option("--pi1", pi1, "case inclusion probability");
  }

  ncc::MatchingSpec spec() const {
    ncc::MatchingSpec ms;
    if (!nn.empty()) {
      ms.mode = ncc::MatchingMode::nearest_neighbor;
      ms.nn_factor = nn;
    } else {
      for (const std::string& c : caliper) {
        auto eq = c.find('=');
        if (eq == std::string::npos)
          throw CLI::ValidationError("--caliper", "expected name=tolerance: " + c);
        ms.caliper_factors.push_back({c.substr(0, eq), std::stod(c.substr(eq + 1))});
      }
      ms.exact_factors = exact;
    }
    ms.validate();
    return ms;
  }
};

int run_simulate(const std::string& preset_name, int n, int replicates,
                 std::uint64_t seed, const std::filesystem::path& out,
                 const std::string& formats_arg) {
  ncc::ExperimentSpec spec = ncc::preset(preset_name);
  if (n > 0) spec.scenario.n = static_cast<std::size_t>(n);
  if (replicates > 0) spec.replicates = replicates;
  if (seed != 0) spec.base_seed = seed;

  std::set<std::string> formats;
  for (const std::string& f : split_csv(formats_arg)) {
    if (f != "csv" && f != "json" && f != "svg") {
      std::cerr << "unknown format: " << f << "\n";
      return 2;
    }
    formats.insert(f);
  }

  auto results = ncc::run_experiment(spec);
  auto summary = ncc::summarize_bias(results);
  auto written = ncc::export_results(results, summary, out, formats);
  for (const auto& p : written) std::cout << "wrote " << p.string() << "\n";

  int failed_cells = 0;
  for (const auto& [method, per_estimand] : summary.cells)
    for (const auto& [e, cell] : per_estimand) failed_cells += cell.n_failed;
  std::cout << "replicates: " << results.size() << "/" << spec.replicates
            << ", failed cells: " << failed_cells << "\n";
  bool all_completed =
      static_cast<int>(results.size()) == spec.replicates && failed_cells == 0;
  return all_completed ? 0 : 1;
}

int run_weights(const std::filesystem::path& cohort_path,
                const std::filesystem::path& selection_path,
                const std::filesystem::path& matched_path, const std::string& family,
                const std::string& covariates_arg, bool interactions, double threshold,
                const MatchingArgs& margs, const std::filesystem::path& out_path) {
  ncc::Cohort cohort = ncc::read_cohort_csv(cohort_path);
  ncc::MatchingSpec matching = margs.spec();
  ncc::NccSample ncc_sample =
      ncc::read_ncc_csv(cohort, matching, margs.m, margs.pi1, selection_path, matched_path);

  ncc::WeightMethodSpec wspec;
  wspec.family = family == "gam" ? ncc::WeightFamily::gam : ncc::WeightFamily::km;
  if (covariates_arg != "none") wspec.covariate_set = split_csv(covariates_arg);
  wspec.include_interactions = interactions;
  if (threshold > 0.0) wspec.threshold = threshold;
  wspec.pi1 = margs.pi1;
  wspec.label = family;
  wspec.validate();

  std::vector<double> probs;
  if (wspec.family == ncc::WeightFamily::km) {
    probs = margs.pi1 < 1.0 ? ncc::ht_inclusion_probabilities(cohort, ncc_sample, wspec)
                            : ncc::km_inclusion_probabilities(cohort, ncc_sample, wspec);
  } else {
    probs = ncc::gam_inclusion_probabilities(cohort, ncc_sample, wspec,
                                             ncc::default_gam_terms(matching, wspec))
                .probs;
  }
  ncc::WeightVector wv = ncc::finalize_weights(probs, ncc_sample, wspec);
  ncc::write_weights_csv(wv, out_path);
  std::cout << "wrote " << out_path.string() << " (sum of weights "
            << wv.diagnostics.sum_weights << ", capped " << wv.diagnostics.capped << ")\n";
  for (const std::string& w : wv.diagnostics.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int run_fit(const std::string& estimand_name, const std::filesystem::path& cohort_path,
            const std::filesystem::path& weights_path, const std::string& covariates_arg,
            double u1) {
  ncc::Cohort cohort = ncc::read_cohort_csv(cohort_path);
  ncc::WeightVector wv = ncc::read_weights_csv(weights_path);
  if (wv.weights.size() != cohort.size())
    throw std::runtime_error("weights file does not match cohort size");

  ncc::Estimand e = ncc::estimand_from_name(estimand_name);
  std::vector<std::string> names = split_csv(covariates_arg);

  if (e == ncc::Estimand::log_hr_xb) {
    if (names.empty()) names = {"xb", "xa"};
    std::vector<ncc::WeightedRecord> records;
    for (const ncc::Subject& s : cohort.subjects) {
      if (!(wv.weights[s.id] > 0.0)) continue;
      ncc::WeightedRecord r{s.id, s.t_obs, s.entry, s.d, {}, wv.weights[s.id]};
      for (const std::string& c : names) r.covariates.push_back(ncc::factor_value(s, c));
      records.push_back(std::move(r));
    }
    ncc::CoxFit fit = ncc::weighted_cox_fit(records, names);
    for (std::size_t k = 0; k < names.size(); ++k)
      std::cout << names[k] << " " << fit.coefficients[k] << "\n";
    return 0;
  }
  if (e == ncc::Estimand::cond_surv_xa0_at_u1) {
    std::vector<ncc::WeightedRecord> records;
    for (const ncc::Subject& s : cohort.subjects) {
      if (!(wv.weights[s.id] > 0.0)) continue;
      records.push_back({s.id, s.t_obs, s.entry, s.d, {double(s.xa_raw)}, wv.weights[s.id]});
    }
    auto curve = ncc::weighted_km(records, std::make_pair(std::size_t{0}, 0.0));
    std::cout << "surv(" << u1 << ") " << curve.at(u1) << "\n";
    return 0;
  }
  std::vector<std::vector<double>> X;
  std::vector<double> y, w;
  for (const ncc::Subject& s : cohort.subjects) {
    if (!(wv.weights[s.id] > 0.0)) continue;
    X.push_back({1.0, s.xa});
    y.push_back(s.xb);
    w.push_back(wv.weights[s.id]);
  }
  auto fit = ncc::weighted_ols(X, y, w);
  std::cout << "intercept " << fit.coefficients[0] << "\nxa " << fit.coefficients[1] << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nested case-control sampling, inclusion weights and weighted estimators"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "run a preset bias experiment");
  std::string preset_name;
  int n = 0, replicates = 0;
  std::uint64_t seed = 0;
  std::filesystem::path out = default_out_dir();
  std::string formats = "csv,json,svg";
  sim->add_option("--preset", preset_name, "one of: fig3_nn, fig3_caliper, fig4_interactions, fig5_W, fig5_V, fig5_Z")
      ->required();
  sim->add_option("--n", n, "cohort size override");
  sim->add_option("--replicates", replicates, "replicate count override");
  sim->add_option("--seed", seed, "base seed override");
  sim->add_option("--out", out, "output directory (default $NCC_OUT_DIR or ./out)");
  sim->add_option("--formats", formats, "comma-separated subset of csv,json,svg");

  // weights
  auto* wcmd = app.add_subcommand("weights", "compute inclusion weights for an existing sample");
  std::filesystem::path cohort_path, selection_path, matched_path;
  std::filesystem::path weights_out = "weights.csv";
  std::string family = "km", covariates = "none";
  bool interactions = false;
  double threshold = 0.0;
  MatchingArgs margs;
  wcmd->add_option("--cohort", cohort_path, "cohort CSV")->required();
  wcmd->add_option("--ncc", selection_path, "selection CSV (id,s,s1)")->required();
  wcmd->add_option("--matched-sets", matched_path, "matched sets CSV")->required();
  wcmd->add_option("--weights", family, "km or gam")->required()
      ->check(CLI::IsMember({"km", "gam"}));
  wcmd->add_option("--covariates", covariates, "comma-separated matching factors, or 'none'");
  wcmd->add_flag("--interactions", interactions, "include by-level interaction smooths (gam)");
  wcmd->add_option("--threshold", threshold, "weight cap (> 1)");
  wcmd->add_option("--out", weights_out, "output weights CSV");
  margs.attach(wcmd);

  // fit
  auto* fcmd = app.add_subcommand("fit", "fit a weighted estimator from a weights file");
  std::string estimand, fit_covariates;
  std::filesystem::path fit_cohort, weights_file;
  double u1 = 50.0;
  fcmd->add_option("--estimand", estimand,
                   "log_hr_xb, cond_surv_xa0_at_u1 or theta_xb_on_xa")->required();
  fcmd->add_option("--cohort", fit_cohort, "cohort CSV")->required();
  fcmd->add_option("--weights-file", weights_file, "weights CSV")->required();
  fcmd->add_option("--covariates", fit_covariates, "covariates for the hazard model");
  fcmd->add_option("--u1", u1, "evaluation time for the conditional survival estimand");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return run_simulate(preset_name, n, replicates, seed, out, formats);
    if (wcmd->parsed())
      return run_weights(cohort_path, selection_path, matched_path, family, covariates,
                         interactions, threshold, margs, weights_out);
    return run_fit(estimand, fit_cohort, weights_file, fit_covariates, u1);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}
