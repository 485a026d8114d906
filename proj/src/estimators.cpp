#include "ncc/estimators.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace ncc {

namespace {

constexpr double kCoefGuard = 20.0;

Eigen::VectorXd to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Weighted risk-set sums S^(0), S^(1), S^(2) at each distinct event time,
// sweeping event times in decreasing order with entry/exit bookkeeping.
struct RiskSums {
  std::vector<double> event_times;              // decreasing
  std::vector<double> s0;                       // per event time
  std::vector<Eigen::VectorXd> s1;
  std::vector<Eigen::MatrixXd> s2;
};

RiskSums risk_sums(const std::vector<WeightedRecord>& records, const Eigen::VectorXd& alpha) {
  const int d = static_cast<int>(alpha.size());
  std::vector<double> times;
  for (const auto& r : records)
    if (r.d == 1) times.push_back(r.t_obs);
  std::sort(times.begin(), times.end(), std::greater<>());
  times.erase(std::unique(times.begin(), times.end()), times.end());

  std::vector<std::size_t> by_exit(records.size()), by_entry(records.size());
  std::iota(by_exit.begin(), by_exit.end(), 0);
  std::iota(by_entry.begin(), by_entry.end(), 0);
  std::sort(by_exit.begin(), by_exit.end(),
            [&](std::size_t a, std::size_t b) { return records[a].t_obs > records[b].t_obs; });
  std::sort(by_entry.begin(), by_entry.end(),
            [&](std::size_t a, std::size_t b) { return records[a].entry > records[b].entry; });

  RiskSums out;
  out.event_times = times;
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(d, d);
  std::size_t add = 0, rem = 0;
  for (double t : times) {
    while (add < by_exit.size() && records[by_exit[add]].t_obs >= t) {
      const auto& r = records[by_exit[add]];
      Eigen::VectorXd z = to_vec(r.covariates);
      double v = r.weight * std::exp(z.dot(alpha));
      s0 += v;
      s1 += v * z;
      s2 += v * z * z.transpose();
      ++add;
    }
    while (rem < by_entry.size() && records[by_entry[rem]].entry > t) {
      const auto& r = records[by_entry[rem]];
      if (r.t_obs >= t) {  // present in the running sums, take it back out
        Eigen::VectorXd z = to_vec(r.covariates);
        double v = r.weight * std::exp(z.dot(alpha));
        s0 -= v;
        s1 -= v * z;
        s2 -= v * z * z.transpose();
      }
      ++rem;
    }
    out.s0.push_back(s0);
    out.s1.push_back(s1);
    out.s2.push_back(s2);
  }
  return out;
}

}  // namespace

CoxFit weighted_cox_fit(const std::vector<WeightedRecord>& records,
                        const std::vector<std::string>& covariate_names,
                        double tol, int max_iter) {
  const int d = static_cast<int>(covariate_names.size());
  std::size_t n_events = 0;
  for (const auto& r : records) {
    if (static_cast<int>(r.covariates.size()) != d)
      throw std::invalid_argument("weighted_cox_fit: covariate length mismatch");
    if (!(r.weight > 0.0) || !std::isfinite(r.weight))
      throw std::invalid_argument("weighted_cox_fit: weights must be positive and finite");
    if (r.d == 1) ++n_events;
  }
  if (n_events == 0) throw NonIdentifiableError("weighted_cox_fit: no events");
  for (int k = 0; k < d; ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : records) {
      lo = std::min(lo, r.covariates[k]);
      hi = std::max(hi, r.covariates[k]);
    }
    if (!(hi > lo))
      throw NonIdentifiableError("weighted_cox_fit: constant covariate " + covariate_names[k]);
  }

  auto loglik_score = [&](const Eigen::VectorXd& alpha, Eigen::VectorXd* U,
                          Eigen::MatrixXd* H) -> double {
    RiskSums rs = risk_sums(records, alpha);
    std::map<double, std::size_t, std::greater<>> time_index;
    for (std::size_t i = 0; i < rs.event_times.size(); ++i) time_index[rs.event_times[i]] = i;
    double ll = 0.0;
    if (U) U->setZero();
    if (H) H->setZero();
    for (const auto& r : records) {
      if (r.d != 1) continue;
      std::size_t i = time_index.at(r.t_obs);
      Eigen::VectorXd z = to_vec(r.covariates);
      double s0 = rs.s0[i];
      Eigen::VectorXd zbar = rs.s1[i] / s0;
      ll += r.weight * (z.dot(alpha) - std::log(s0));
      if (U) *U += r.weight * (z - zbar);
      if (H) *H += r.weight * (rs.s2[i] / s0 - zbar * zbar.transpose());
    }
    return ll;
  };

  CoxFit fit;
  fit.covariate_names = covariate_names;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd U(d);
  Eigen::MatrixXd H(d, d);
  double ll = loglik_score(alpha, &U, &H);
  fit.loglik_path.push_back(ll);

  // The raw score grows with the weighted event mass, and so does its
  // floating-point noise floor; compare a per-event-weight score against tol.
  double score_scale = 0.0;
  for (const auto& r : records)
    if (r.d == 1) score_scale += r.weight;
  score_scale = std::max(1.0, score_scale);

  for (int it = 0; it < max_iter; ++it) {
    fit.score_norm = U.lpNorm<Eigen::Infinity>() / score_scale;
    if (fit.score_norm < tol) break;
    Eigen::VectorXd step = H.ldlt().solve(U);
    if (!step.allFinite())
      throw NonIdentifiableError("weighted_cox_fit: singular information matrix");
    double frac = 1.0;
    Eigen::VectorXd cand;
    double new_ll;
    // Accept any step within the likelihood's own rounding noise, otherwise
    // spurious halving freezes the iteration near the optimum.
    const double ll_slack = 1e-12 + 8.0 * std::numeric_limits<double>::epsilon() * std::abs(ll);
    for (int h = 0;; ++h) {
      cand = alpha + frac * step;
      new_ll = loglik_score(cand, nullptr, nullptr);
      if (new_ll >= ll - ll_slack || h >= 30) break;
      frac *= 0.5;
    }
    alpha = cand;
    if (alpha.lpNorm<Eigen::Infinity>() > kCoefGuard)
      throw NonIdentifiableError("weighted_cox_fit: coefficient diverging (monotone likelihood?)");
    ll = std::max(new_ll, ll);
    fit.loglik_path.push_back(ll);
    fit.iterations = it + 1;
    loglik_score(alpha, &U, &H);
  }
  fit.score_norm = U.lpNorm<Eigen::Infinity>() / score_scale;
  if (fit.score_norm >= tol)
    throw NonIdentifiableError("weighted_cox_fit: score " + std::to_string(fit.score_norm) +
                               " above tolerance after " + std::to_string(max_iter) +
                               " iterations");
  fit.coefficients.assign(alpha.data(), alpha.data() + d);
  return fit;
}

double SurvivalCurve::at(double t) const {
  double s = 1.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] <= t) s = surv[i];
    else break;
  }
  return s;
}

SurvivalCurve weighted_km(const std::vector<WeightedRecord>& records,
                          std::optional<std::pair<std::size_t, double>> condition) {
  std::vector<const WeightedRecord*> sub;
  for (const auto& r : records) {
    if (condition) {
      if (condition->first >= r.covariates.size())
        throw std::invalid_argument("weighted_km: condition index out of range");
      if (r.covariates[condition->first] != condition->second) continue;
    }
    sub.push_back(&r);
  }
  if (sub.empty()) throw std::invalid_argument("weighted_km: empty conditioning subgroup");

  // Tied event times go into a single factor with summed event weight.
  std::map<double, double> event_weight;
  double domain_end = 0.0;
  for (const auto* r : sub) {
    domain_end = std::max(domain_end, r->t_obs);
    if (r->d == 1) event_weight[r->t_obs] += r->weight;
  }

  // risk(t) = entered mass (entry <= t) minus exited mass (t_obs < t),
  // accumulated with two pointers over the ascending event times.
  std::vector<std::pair<double, double>> entries, exits;
  for (const auto* r : sub) {
    entries.emplace_back(r->entry, r->weight);
    exits.emplace_back(r->t_obs, r->weight);
  }
  std::sort(entries.begin(), entries.end());
  std::sort(exits.begin(), exits.end());

  SurvivalCurve curve;
  curve.domain_end = domain_end;
  double s = 1.0;
  double entered = 0.0, exited = 0.0;
  std::size_t ei = 0, xi = 0;
  for (const auto& [t, ew] : event_weight) {
    if (t > domain_end) break;
    while (ei < entries.size() && entries[ei].first <= t) entered += entries[ei++].second;
    while (xi < exits.size() && exits[xi].first < t) exited += exits[xi++].second;
    double risk = entered - exited;
    s *= 1.0 - ew / risk;
    curve.times.push_back(t);
    curve.surv.push_back(s);
    curve.at_risk_mass.push_back(risk);
  }
  return curve;
}

LinFit weighted_ols(const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                    const std::vector<double>& weights) {
  if (X.size() != y.size() || X.size() != weights.size())
    throw std::invalid_argument("weighted_ols: input length mismatch");
  if (X.empty()) throw std::invalid_argument("weighted_ols: empty input");
  const int p = static_cast<int>(X[0].size());
  const int n = static_cast<int>(X.size());

  Eigen::MatrixXd A(n, p);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) {
    double sw = std::sqrt(weights[i]);
    for (int j = 0; j < p; ++j) A(i, j) = sw * X[i][j];
    b(i) = sw * y[i];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < p) throw NonIdentifiableError("weighted_ols: singular weighted Gram matrix");
  Eigen::VectorXd theta = qr.solve(b);

  LinFit fit;
  fit.coefficients.assign(theta.data(), theta.data() + p);
  fit.weighted_rss = (b - A * theta).squaredNorm();
  return fit;
}

std::vector<double> clogit_fit(const std::vector<MatchedSetCovariates>& sets,
                               double tol, int max_iter) {
  if (sets.empty()) throw std::invalid_argument("clogit_fit: no matched sets");
  const int d = static_cast<int>(sets[0].case_covariates.size());

  auto loglik_score = [&](const Eigen::VectorXd& alpha, Eigen::VectorXd* U,
                          Eigen::MatrixXd* H) -> double {
    double ll = 0.0;
    if (U) U->setZero();
    if (H) H->setZero();
    for (const auto& set : sets) {
      std::vector<Eigen::VectorXd> zs;
      zs.push_back(to_vec(set.case_covariates));
      for (const auto& c : set.control_covariates) zs.push_back(to_vec(c));
      double denom = 0.0;
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
      Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d, d);
      double emax = -std::numeric_limits<double>::infinity();
      for (const auto& z : zs) emax = std::max(emax, z.dot(alpha));
      for (const auto& z : zs) {
        double e = std::exp(z.dot(alpha) - emax);
        denom += e;
        mean += e * z;
        second += e * z * z.transpose();
      }
      mean /= denom;
      second /= denom;
      ll += zs[0].dot(alpha) - emax - std::log(denom);
      if (U) *U += zs[0] - mean;
      if (H) *H += second - mean * mean.transpose();
    }
    return ll;
  };

  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd U(d);
  Eigen::MatrixXd H(d, d);
  double ll = loglik_score(alpha, &U, &H);
  if (H.lpNorm<Eigen::Infinity>() < 1e-12)
    throw NonIdentifiableError("clogit_fit: all matched sets concordant");

  // One score term per matched set; compare a per-set score against tol so the
  // threshold stays above the likelihood's rounding noise for large samples.
  const double score_scale = std::max<std::size_t>(1, sets.size());

  for (int it = 0; it < max_iter; ++it) {
    if (U.lpNorm<Eigen::Infinity>() / score_scale < tol) break;
    Eigen::VectorXd step = H.ldlt().solve(U);
    if (!step.allFinite()) throw NonIdentifiableError("clogit_fit: singular information matrix");
    double frac = 1.0;
    Eigen::VectorXd cand;
    double new_ll;
    // Accept any step within the likelihood's own rounding noise, otherwise
    // spurious halving freezes the iteration near the optimum.
    const double ll_slack = 1e-12 + 8.0 * std::numeric_limits<double>::epsilon() * std::abs(ll);
    for (int h = 0;; ++h) {
      cand = alpha + frac * step;
      new_ll = loglik_score(cand, nullptr, nullptr);
      if (new_ll >= ll - ll_slack || h >= 30) break;
      frac *= 0.5;
    }
    alpha = cand;
    if (alpha.lpNorm<Eigen::Infinity>() > kCoefGuard)
      throw NonIdentifiableError("clogit_fit: coefficient diverging");
    ll = std::max(new_ll, ll);
    loglik_score(alpha, &U, &H);
  }
  if (U.lpNorm<Eigen::Infinity>() / score_scale >= tol)
    throw NonIdentifiableError("clogit_fit: no convergence");
  return {alpha.data(), alpha.data() + d};
}

double weighted_mean_functional(const std::vector<WeightedRecord>& records,
                                const std::function<double(const WeightedRecord&)>& phi,
                                std::size_t n_cohort) {
  double sum = 0.0;
  for (const auto& r : records) {
    if (!(r.weight > 0.0)) throw std::invalid_argument("weighted_mean_functional: weights must be positive");
    sum += r.weight * phi(r);
  }
  return sum / static_cast<double>(n_cohort);
}

}  // namespace ncc
