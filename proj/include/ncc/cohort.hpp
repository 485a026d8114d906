#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace ncc {

// Parameters of the synthetic-cohort generating mechanism: two matching
// factors (continuous M1, binary M2), a SNP-like exposure X_a whose minor
// allele frequency may shift with M, a continuous exposure X_b, Weibull
// baseline hazard and uniform censoring.
struct ScenarioConfig {
  std::size_t n = 10000;
  double rho_mxa = 0.0;    // MAF shift
  double gamma_mxb = 0.0;  // slope of M1 in the mean of X_b within X_a
  double r2_xb = 0.1;      // variance fraction of X_b explained by (X_a, M1)
  double alpha_a = 0.0;
  double alpha_b = 0.0;
  double alpha_m1 = 0.0;
  double alpha_m2 = 0.0;
  double alpha_m1m2 = 0.0;
  double alpha_mxa = 0.0;
  double weibull_shape = 3.0;
  double weibull_scale = 70.0;
  double censor_lo = 20.0;
  double censor_hi = 50.0;
  bool m2_active = false;  // bivariate MAF formula and M2 in matching
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
};

struct Subject {
  std::size_t id = 0;
  double m1 = 0.0;  // centered-scaled Uniform[0,1]
  double m2 = 0.0;  // centered-scaled Bernoulli(1/2), values in {-1, +1}
  int xa_raw = 0;   // SNP level in {0, 1, 2}
  double xa = 0.0;  // centered-scaled X_a
  double xb = 0.0;  // centered-scaled X_b
  double entry = 0.0;
  double t_obs = 0.0;
  int d = 0;
  double y_latent = 0.0;  // simulation diagnostics only, never used by estimators
};

struct Cohort {
  std::vector<Subject> subjects;
  ScenarioConfig config;

  std::size_t size() const { return subjects.size(); }
};

// Pure function of (config, seed): independent substreams per variable block.
Cohort generate_cohort(const ScenarioConfig& config, std::uint64_t seed);
inline Cohort generate_cohort(const ScenarioConfig& config) {
  return generate_cohort(config, config.seed);
}

// eta of the proportional-hazards model, evaluated on centered-scaled values.
double linear_predictor(const Subject& subject, const ScenarioConfig& config);

// Inverse-transform draw for a PH model with Weibull baseline; u in (0,1).
double sample_event_time(double eta, const ScenarioConfig& config, double u);

// (t_obs, d); ties y == c count as events.
std::pair<double, int> apply_censoring(double y, double c);

// Named accessor for matching/estimation factors ("m1", "m2", "xa", "xa_raw",
// "xb", "entry", "t_obs", "d"). Throws on unknown names.
double factor_value(const Subject& subject, const std::string& name);

// CSV with header id,m1,m2,xa_raw,xa,xb,entry,t_obs,d
void write_cohort_csv(const Cohort& cohort, const std::filesystem::path& path);
Cohort read_cohort_csv(const std::filesystem::path& path);

nlohmann::json scenario_to_json(const ScenarioConfig& config);
ScenarioConfig scenario_from_json(const nlohmann::json& j);

}  // namespace ncc
