#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace ncc {

struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TermKind { smooth, categorical, linear };

struct SmoothTermSpec {
  std::string variable;
  TermKind kind = TermKind::smooth;
  int basis_size = 10;
  int degree = 3;         // cubic
  int penalty_order = 2;  // second differences
  std::string by_variable;  // optional categorical, for interaction smooths

  void validate() const;
};

struct SplineBasis {
  Eigen::MatrixXd basis;    // n x basis_size
  Eigen::MatrixXd penalty;  // basis_size x basis_size, D'D
  std::vector<double> knots;  // full clamped knot vector
  int degree = 3;
};

// B-spline basis with interior knots at quantiles of x; throws if fewer than
// basis_size distinct values (callers degrade the term to linear instead).
SplineBasis build_spline_basis(const std::vector<double>& x, const SmoothTermSpec& spec);

// Row of all basis functions at x; linear extrapolation beyond boundary knots.
Eigen::RowVectorXd bspline_row(const std::vector<double>& knots, int degree, double x);

// Generic (already materialized) penalized design block. An all-zero penalty
// marks an unpenalized block (categorical dummies, linear columns).
struct TermBlock {
  std::string name;
  Eigen::MatrixXd design;
  Eigen::MatrixXd penalty;
};

struct PenalizedLogitModel {
  Eigen::VectorXd coefficients;  // intercept first, then blocks in order
  std::vector<double> lambdas;
  int iterations = 0;
  double deviance = 0.0;           // unpenalized, at convergence
  double penalized_deviance = 0.0;
  double final_rel_change = 0.0;
  double edf = 0.0;
  std::vector<double> deviance_path;  // penalized, per IRLS iteration
  bool separation_warning = false;
  Eigen::VectorXd fitted;  // fitted probabilities on training rows
};

// Penalized IRLS for the Bernoulli logit objective
//   -2 loglik + sum_t lambda_t b_t' P_t b_t
// with step-halving so the penalized deviance never increases.
PenalizedLogitModel fit_penalized_logit(const std::vector<int>& y,
                                        const std::vector<TermBlock>& blocks,
                                        const std::vector<double>& lambdas,
                                        int max_iter = 50, double tol = 1e-8);

// Coordinate-wise GCV search over per-term grids, two sweeps.
std::vector<double> select_penalty_gcv(const std::vector<int>& y,
                                       const std::vector<TermBlock>& blocks,
                                       const std::vector<std::vector<double>>& grids,
                                       int max_iter = 50, double tol = 1e-8);

// Columnar named data for GAM fitting/prediction.
struct GamData {
  std::map<std::string, std::vector<double>> cols;
  std::size_t rows() const;
  const std::vector<double>& at(const std::string& name) const;
};

struct GamOptions {
  std::vector<double> lambda_grid;  // empty -> default log-spaced 1e-4..1e4
  std::vector<double> fixed_lambdas;  // overrides GCV when non-empty
  int max_iter = 50;
  double tol = 1e-8;
};

// High-level additive logit model: term construction from named data,
// identifiability constraints, penalty selection, and prediction.
class GamModel {
 public:
  static GamModel fit(const std::vector<int>& y, const GamData& data,
                      const std::vector<SmoothTermSpec>& terms,
                      const GamOptions& opts = {});

  double predict_probability(const std::map<std::string, double>& row) const;
  std::vector<double> predict(const GamData& data) const;
  double linear_predictor_at(const std::map<std::string, double>& row) const;

  const PenalizedLogitModel& fit_result() const { return fit_; }
  const std::vector<double>& lambdas() const { return fit_.lambdas; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  nlohmann::json dump() const;  // coefficients, knots, lambdas

 private:
  struct FittedTerm {
    SmoothTermSpec spec;
    TermKind effective_kind = TermKind::smooth;  // after degrade rules
    bool dropped = false;
    std::vector<double> knots;
    Eigen::MatrixXd constraint;  // K x (K-1) sum-to-zero transform
    std::vector<double> levels;  // categorical or by-variable levels
    // by-variable smooths: one constraint per level
    std::vector<Eigen::MatrixXd> by_constraints;
    double center = 0.0;  // linear terms
    int offset = 0;       // first coefficient index
    int width = 0;
  };

  std::vector<FittedTerm> terms_;
  PenalizedLogitModel fit_;
  std::vector<std::string> warnings_;

  void append_term_predictor(const FittedTerm& t, double value, double by_value,
                             double& eta) const;
};

}  // namespace ncc
