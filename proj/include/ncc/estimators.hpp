#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ncc {

struct NonIdentifiableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct WeightedRecord {
  std::size_t id = 0;
  double t_obs = 0.0;
  double entry = 0.0;
  int d = 0;
  std::vector<double> covariates;
  double weight = 1.0;
};

struct CoxFit {
  std::vector<double> coefficients;
  std::vector<std::string> covariate_names;
  double score_norm = 0.0;  // sup-norm of the score per unit of event weight
  int iterations = 0;
  std::vector<double> loglik_path;  // weighted partial log-likelihood
};

// Newton-Raphson root of the weighted partial likelihood score, Breslow ties.
// tol bounds the score sup-norm divided by the total event weight.
CoxFit weighted_cox_fit(const std::vector<WeightedRecord>& records,
                        const std::vector<std::string>& covariate_names,
                        double tol = 1e-7, int max_iter = 100);

struct SurvivalCurve {
  std::vector<double> times;         // strictly increasing event times
  std::vector<double> surv;          // non-increasing step values
  std::vector<double> at_risk_mass;  // weighted risk mass at each step
  double domain_end = 0.0;           // largest time with positive risk mass

  // Step-function value; times past domain_end carry the last value.
  double at(double t) const;
};

// Weighted (conditional) Kaplan-Meier; the optional condition selects the
// subgroup with covariates[index] == value.
SurvivalCurve weighted_km(const std::vector<WeightedRecord>& records,
                          std::optional<std::pair<std::size_t, double>> condition = {});

struct LinFit {
  std::vector<double> coefficients;
  double weighted_rss = 0.0;
};

// Weighted least squares of y on the rows of X (caller supplies the intercept
// column when wanted).
LinFit weighted_ols(const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                    const std::vector<double>& weights);

struct MatchedSetCovariates {
  std::vector<double> case_covariates;
  std::vector<std::vector<double>> control_covariates;
};

// Conditional logistic regression over matched sets (one case per set).
// tol bounds the score sup-norm divided by the number of sets.
std::vector<double> clogit_fit(const std::vector<MatchedSetCovariates>& sets,
                               double tol = 1e-7, int max_iter = 100);

// Empirical Horvitz-Thompson functional: sum w_j phi_j / n_cohort over the
// (selected) records.
double weighted_mean_functional(const std::vector<WeightedRecord>& records,
                                const std::function<double(const WeightedRecord&)>& phi,
                                std::size_t n_cohort);

}  // namespace ncc
