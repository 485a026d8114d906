#include "ncc/smooth_logit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ncc {

namespace {

constexpr double kEtaClip = 30.0;
constexpr double kMuFloor = 1e-12;

int find_span(const std::vector<double>& t, int p, double x) {
  int n = static_cast<int>(t.size()) - p - 2;  // last basis index
  if (x >= t[n + 1]) return n;
  if (x <= t[p]) return p;
  int lo = p, hi = n + 1;
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    if (x < t[mid]) hi = mid;
    else lo = mid;
  }
  return lo;
}

// Cox-de Boor triangular scheme; N[j] = B_{span-p+j, p}(x).
std::vector<double> basis_funs(int span, double x, int p, const std::vector<double>& t) {
  std::vector<double> N(p + 1), left(p + 1), right(p + 1);
  N[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - t[span + 1 - j];
    right[j] = t[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      double denom = right[r + 1] + left[j - r];
      double temp = denom != 0.0 ? N[r] / denom : 0.0;
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
  return N;
}

Eigen::RowVectorXd row_at_degree(const std::vector<double>& t, int p, double x) {
  const int K = static_cast<int>(t.size()) - p - 1;
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(K);
  int span = find_span(t, p, x);
  std::vector<double> N = basis_funs(span, x, p, t);
  for (int j = 0; j <= p; ++j) {
    int idx = span - p + j;
    if (idx >= 0 && idx < K) row(idx) += N[j];
  }
  return row;
}

// First derivatives of all degree-p basis functions at x (x inside the knots).
Eigen::RowVectorXd deriv_row(const std::vector<double>& t, int p, double x) {
  const int K = static_cast<int>(t.size()) - p - 1;
  Eigen::RowVectorXd lower = row_at_degree(t, p - 1, x);  // length K + 1
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(K);
  for (int i = 0; i < K; ++i) {
    double a = t[i + p] - t[i];
    double b = t[i + p + 1] - t[i + 1];
    double v = 0.0;
    if (a != 0.0) v += lower(i) / a;
    if (b != 0.0) v -= lower(i + 1) / b;
    out(i) = p * v;
  }
  return out;
}

Eigen::MatrixXd difference_penalty(int size, int order) {
  Eigen::MatrixXd D = Eigen::MatrixXd::Identity(size, size);
  for (int k = 0; k < order; ++k) {
    Eigen::MatrixXd Dn = Eigen::MatrixXd::Zero(D.rows() - 1, size);
    for (int i = 0; i + 1 < D.rows(); ++i) Dn.row(i) = D.row(i + 1) - D.row(i);
    D = Dn;
  }
  return D.transpose() * D;
}

// Orthonormal basis of the null space of the row vector c (sum-to-zero
// constraint): columns 2..K of the Q factor of c'.
Eigen::MatrixXd constraint_null_space(const Eigen::RowVectorXd& c) {
  const int K = c.size();
  Eigen::MatrixXd ct = c.transpose();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(ct);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(K, K);
  return Q.rightCols(K - 1);
}

double penalized_deviance(const Eigen::VectorXd& eta, const std::vector<int>& y,
                          const Eigen::MatrixXd& P, const Eigen::VectorXd& beta) {
  double dev = 0.0;
  for (int i = 0; i < eta.size(); ++i) {
    double mu = 1.0 / (1.0 + std::exp(-eta(i)));
    mu = std::min(std::max(mu, kMuFloor), 1.0 - kMuFloor);
    dev -= 2.0 * (y[i] * std::log(mu) + (1 - y[i]) * std::log(1.0 - mu));
  }
  return dev + beta.dot(P * beta);
}

std::vector<double> sorted_distinct(const std::vector<double>& x) {
  std::set<double> s(x.begin(), x.end());
  return {s.begin(), s.end()};
}

std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int i = -4; i <= 4; ++i) g.push_back(std::pow(10.0, i));
  return g;
}

}  // namespace

void SmoothTermSpec::validate() const {
  if (variable.empty()) throw std::invalid_argument("SmoothTermSpec: variable name required");
  if (kind == TermKind::smooth) {
    if (basis_size <= degree)
      throw std::invalid_argument("SmoothTermSpec: basis_size must exceed degree");
    if (penalty_order >= basis_size)
      throw std::invalid_argument("SmoothTermSpec: penalty_order must be below basis_size");
    if (degree < 1) throw std::invalid_argument("SmoothTermSpec: degree must be >= 1");
  }
}

SplineBasis build_spline_basis(const std::vector<double>& x, const SmoothTermSpec& spec) {
  spec.validate();
  std::vector<double> distinct = sorted_distinct(x);
  if (static_cast<int>(distinct.size()) < spec.basis_size)
    throw std::invalid_argument("build_spline_basis: fewer than basis_size distinct values for " +
                                spec.variable);
  const int p = spec.degree;
  const int K = spec.basis_size;
  const int n_interior = K - p - 1;
  const double lo = distinct.front(), hi = distinct.back();

  SplineBasis out;
  out.degree = p;
  for (int i = 0; i <= p; ++i) out.knots.push_back(lo);
  for (int i = 1; i <= n_interior; ++i) {
    double q = static_cast<double>(i) / (n_interior + 1);
    double pos = q * (distinct.size() - 1);
    std::size_t k = static_cast<std::size_t>(pos);
    double frac = pos - k;
    double v = k + 1 < distinct.size() ? distinct[k] * (1 - frac) + distinct[k + 1] * frac
                                       : distinct[k];
    out.knots.push_back(v);
  }
  for (int i = 0; i <= p; ++i) out.knots.push_back(hi);

  out.basis.resize(x.size(), K);
  for (std::size_t i = 0; i < x.size(); ++i)
    out.basis.row(i) = bspline_row(out.knots, p, x[i]);
  out.penalty = difference_penalty(K, spec.penalty_order);
  return out;
}

Eigen::RowVectorXd bspline_row(const std::vector<double>& knots, int degree, double x) {
  const double lo = knots[degree];
  const double hi = knots[knots.size() - degree - 1];
  if (x < lo) return row_at_degree(knots, degree, lo) + (x - lo) * deriv_row(knots, degree, lo);
  if (x > hi) return row_at_degree(knots, degree, hi) + (x - hi) * deriv_row(knots, degree, hi);
  return row_at_degree(knots, degree, x);
}

PenalizedLogitModel fit_penalized_logit(const std::vector<int>& y,
                                        const std::vector<TermBlock>& blocks,
                                        const std::vector<double>& lambdas,
                                        int max_iter, double tol) {
  if (blocks.size() != lambdas.size())
    throw std::invalid_argument("fit_penalized_logit: one lambda per term block required");
  const int n = static_cast<int>(y.size());
  for (int v : y)
    if (v != 0 && v != 1) throw std::invalid_argument("fit_penalized_logit: y must be binary");

  int ncol = 1;
  for (const auto& b : blocks) {
    if (b.design.rows() != n)
      throw std::invalid_argument("fit_penalized_logit: block row count mismatch for " + b.name);
    ncol += static_cast<int>(b.design.cols());
  }
  Eigen::MatrixXd X(n, ncol);
  X.col(0).setOnes();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(ncol, ncol);
  {
    int off = 1;
    for (std::size_t t = 0; t < blocks.size(); ++t) {
      const int w = static_cast<int>(blocks[t].design.cols());
      X.middleCols(off, w) = blocks[t].design;
      if (blocks[t].penalty.size() > 0 && lambdas[t] != 0.0)
        P.block(off, off, w, w) = lambdas[t] * blocks[t].penalty;
      off += w;
    }
  }

  PenalizedLogitModel model;
  model.lambdas = lambdas;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(ncol);
  double ybar = 0.0;
  for (int v : y) ybar += v;
  ybar = std::min(std::max(ybar / n, 1e-6), 1.0 - 1e-6);
  beta(0) = std::log(ybar / (1.0 - ybar));

  Eigen::VectorXd eta = X * beta;
  double dev = penalized_deviance(eta, y, P, beta);
  model.deviance_path.push_back(dev);
  bool converged = false;

  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd w(n), z(n);
    for (int i = 0; i < n; ++i) {
      double mu = 1.0 / (1.0 + std::exp(-eta(i)));
      double wi = std::max(mu * (1.0 - mu), 1e-10);
      w(i) = wi;
      z(i) = eta(i) + (y[i] - mu) / wi;
    }
    Eigen::MatrixXd XtW = X.transpose() * w.asDiagonal();
    Eigen::MatrixXd A = XtW * X + P;
    Eigen::VectorXd rhs = XtW * z;
    Eigen::VectorXd cand = A.ldlt().solve(rhs);
    if (!cand.allFinite())
      throw ConvergenceError("fit_penalized_logit: singular working system for " +
                             std::to_string(ncol) + " columns at iteration " + std::to_string(it));

    Eigen::VectorXd step = cand - beta;
    double new_dev = 0.0;
    Eigen::VectorXd new_beta;
    double frac = 1.0;
    for (int h = 0;; ++h) {
      new_beta = beta + frac * step;
      new_dev = penalized_deviance(X * new_beta, y, P, new_beta);
      if (new_dev <= dev + 1e-10 || h >= 30) break;
      frac *= 0.5;
    }
    beta = new_beta;
    eta = X * beta;
    model.iterations = it + 1;
    model.final_rel_change = std::abs(dev - new_dev) / (0.1 + std::abs(new_dev));
    dev = std::min(new_dev, dev);
    model.deviance_path.push_back(dev);
    if (model.final_rel_change < tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "fit_penalized_logit: no convergence after " << model.iterations
        << " iterations; penalized deviance path:";
    for (double d : model.deviance_path) msg << ' ' << d;
    throw ConvergenceError(msg.str());
  }

  model.coefficients = beta;
  model.penalized_deviance = dev;
  model.deviance = dev - beta.dot(P * beta);
  model.fitted.resize(n);
  model.separation_warning = false;
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) {
    model.fitted(i) = 1.0 / (1.0 + std::exp(-eta(i)));
    w(i) = std::max(model.fitted(i) * (1.0 - model.fitted(i)), 1e-10);
    if (std::abs(eta(i)) > kEtaClip) model.separation_warning = true;
  }
  Eigen::MatrixXd M = X.transpose() * w.asDiagonal() * X;
  model.edf = (M + P).ldlt().solve(M).trace();
  return model;
}

std::vector<double> select_penalty_gcv(const std::vector<int>& y,
                                       const std::vector<TermBlock>& blocks,
                                       const std::vector<std::vector<double>>& grids,
                                       int max_iter, double tol) {
  if (grids.size() != blocks.size())
    throw std::invalid_argument("select_penalty_gcv: one grid per term block required");
  for (const auto& g : grids)
    if (g.empty()) throw std::invalid_argument("select_penalty_gcv: empty grid");

  const double n = static_cast<double>(y.size());
  std::vector<double> lambdas;
  for (const auto& g : grids) lambdas.push_back(g[g.size() / 2]);

  auto gcv_of = [&](const std::vector<double>& ls) -> double {
    PenalizedLogitModel m = fit_penalized_logit(y, blocks, ls, max_iter, tol);
    double denom = n - m.edf;
    return n * m.deviance / (denom * denom);
  };

  bool any_fit = false;
  double best = std::numeric_limits<double>::infinity();
  try {
    best = gcv_of(lambdas);
    any_fit = true;
  } catch (const ConvergenceError&) {
  }

  for (int sweep = 0; sweep < 2; ++sweep) {
    for (std::size_t t = 0; t < grids.size(); ++t) {
      if (grids[t].size() < 2) continue;
      for (double cand : grids[t]) {
        std::vector<double> trial = lambdas;
        trial[t] = cand;
        try {
          double score = gcv_of(trial);
          any_fit = true;
          if (score < best) {
            best = score;
            lambdas = trial;
          }
        } catch (const ConvergenceError&) {
        }
      }
    }
  }
  if (!any_fit) throw ConvergenceError("select_penalty_gcv: every candidate fit diverged");
  return lambdas;
}

std::size_t GamData::rows() const {
  return cols.empty() ? 0 : cols.begin()->second.size();
}

const std::vector<double>& GamData::at(const std::string& name) const {
  auto it = cols.find(name);
  if (it == cols.end()) throw std::invalid_argument("GamData: no column named " + name);
  return it->second;
}

GamModel GamModel::fit(const std::vector<int>& y, const GamData& data,
                       const std::vector<SmoothTermSpec>& specs, const GamOptions& opts) {
  GamModel model;
  const std::size_t n = y.size();
  std::vector<TermBlock> blocks;
  std::vector<std::vector<double>> grids;
  std::vector<double> grid =
      opts.lambda_grid.empty() ? default_lambda_grid() : opts.lambda_grid;

  for (const SmoothTermSpec& spec : specs) {
    spec.validate();
    const std::vector<double>& x = data.at(spec.variable);
    if (x.size() != n) throw std::invalid_argument("GamModel: column length mismatch for " + spec.variable);

    FittedTerm term;
    term.spec = spec;
    term.effective_kind = spec.kind;
    std::vector<double> distinct = sorted_distinct(x);

    if (spec.kind == TermKind::smooth && static_cast<int>(distinct.size()) < spec.basis_size) {
      term.effective_kind = distinct.size() >= 2 ? TermKind::linear : TermKind::smooth;
      if (distinct.size() < 2) {
        term.dropped = true;
        model.warnings_.push_back("term " + spec.variable + " dropped: constant in training data");
        model.terms_.push_back(term);
        continue;
      }
      model.warnings_.push_back("term " + spec.variable +
                                " degraded to linear: too few distinct values");
    }
    if ((spec.kind == TermKind::categorical || spec.kind == TermKind::linear) &&
        distinct.size() < 2) {
      term.dropped = true;
      model.warnings_.push_back("term " + spec.variable + " dropped: constant in training data");
      model.terms_.push_back(term);
      continue;
    }

    TermBlock block;
    block.name = spec.variable;
    if (term.effective_kind == TermKind::smooth) {
      SplineBasis sb = build_spline_basis(x, spec);
      term.knots = sb.knots;
      if (spec.by_variable.empty()) {
        Eigen::RowVectorXd colsum = sb.basis.colwise().sum();
        term.constraint = constraint_null_space(colsum);
        block.design = sb.basis * term.constraint;
        block.penalty = term.constraint.transpose() * sb.penalty * term.constraint;
        grids.push_back(grid);
      } else {
        // by-level smooth: one constrained sub-block per level of by_variable
        const std::vector<double>& by = data.at(spec.by_variable);
        term.levels = sorted_distinct(by);
        const int K = spec.basis_size;
        const int w = K - 1;
        block.design = Eigen::MatrixXd::Zero(n, w * term.levels.size());
        block.penalty = Eigen::MatrixXd::Zero(w * term.levels.size(), w * term.levels.size());
        for (std::size_t L = 0; L < term.levels.size(); ++L) {
          Eigen::RowVectorXd colsum = Eigen::RowVectorXd::Zero(K);
          for (std::size_t i = 0; i < n; ++i)
            if (by[i] == term.levels[L]) colsum += sb.basis.row(i);
          Eigen::MatrixXd Z = constraint_null_space(colsum);
          term.by_constraints.push_back(Z);
          for (std::size_t i = 0; i < n; ++i)
            if (by[i] == term.levels[L])
              block.design.block(i, L * w, 1, w) = sb.basis.row(i) * Z;
          block.penalty.block(L * w, L * w, w, w) = Z.transpose() * sb.penalty * Z;
        }
        grids.push_back(grid);
      }
    } else if (term.effective_kind == TermKind::categorical) {
      term.levels = distinct;
      block.design = Eigen::MatrixXd::Zero(n, distinct.size() - 1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t L = 1; L < distinct.size(); ++L)
          if (x[i] == distinct[L]) block.design(i, L - 1) = 1.0;
      block.penalty = Eigen::MatrixXd();
      grids.push_back({0.0});
    } else {  // linear
      double mean = 0.0;
      for (double v : x) mean += v;
      mean /= static_cast<double>(n);
      term.center = mean;
      block.design = Eigen::MatrixXd(n, 1);
      for (std::size_t i = 0; i < n; ++i) block.design(i, 0) = x[i] - mean;
      block.penalty = Eigen::MatrixXd();
      grids.push_back({0.0});
    }
    term.width = static_cast<int>(block.design.cols());
    model.terms_.push_back(term);
    blocks.push_back(std::move(block));
  }

  std::vector<double> lambdas;
  if (!opts.fixed_lambdas.empty()) {
    if (opts.fixed_lambdas.size() == blocks.size()) {
      lambdas = opts.fixed_lambdas;
    } else {
      // one fixed lambda per penalized (smooth) block
      std::size_t k = 0;
      for (std::size_t t = 0; t < blocks.size(); ++t) {
        bool penalized = grids[t].size() != 1 || grids[t][0] != 0.0;
        if (penalized) {
          if (k >= opts.fixed_lambdas.size())
            throw std::invalid_argument("GamModel: wrong number of fixed lambdas");
          lambdas.push_back(opts.fixed_lambdas[k++]);
        } else {
          lambdas.push_back(0.0);
        }
      }
      if (k != opts.fixed_lambdas.size())
        throw std::invalid_argument("GamModel: wrong number of fixed lambdas");
    }
  } else {
    lambdas = select_penalty_gcv(y, blocks, grids, opts.max_iter, opts.tol);
  }

  model.fit_ = fit_penalized_logit(y, blocks, lambdas, opts.max_iter, opts.tol);
  if (model.fit_.separation_warning)
    model.warnings_.push_back("possible complete separation: |linear predictor| exceeds 30");

  int off = 1;
  for (FittedTerm& t : model.terms_) {
    if (t.dropped) continue;
    t.offset = off;
    off += t.width;
  }
  return model;
}

void GamModel::append_term_predictor(const FittedTerm& t, double value, double by_value,
                                     double& eta) const {
  const Eigen::VectorXd& beta = fit_.coefficients;
  if (t.effective_kind == TermKind::smooth) {
    Eigen::RowVectorXd row = bspline_row(t.knots, t.spec.degree, value);
    if (t.spec.by_variable.empty()) {
      eta += (row * t.constraint * beta.segment(t.offset, t.width))(0);
    } else {
      const int w = t.spec.basis_size - 1;
      for (std::size_t L = 0; L < t.levels.size(); ++L)
        if (by_value == t.levels[L]) {
          eta += (row * t.by_constraints[L] * beta.segment(t.offset + L * w, w))(0);
          return;
        }
      throw std::invalid_argument("GamModel: unknown level " + std::to_string(by_value) +
                                  " of by-variable " + t.spec.by_variable);
    }
  } else if (t.effective_kind == TermKind::categorical) {
    for (std::size_t L = 0; L < t.levels.size(); ++L)
      if (value == t.levels[L]) {
        if (L > 0) eta += beta(t.offset + static_cast<int>(L) - 1);
        return;
      }
    throw std::invalid_argument("GamModel: unknown level " + std::to_string(value) +
                                " of categorical " + t.spec.variable);
  } else {
    eta += beta(t.offset) * (value - t.center);
  }
}

double GamModel::linear_predictor_at(const std::map<std::string, double>& row) const {
  double eta = fit_.coefficients(0);
  for (const FittedTerm& t : terms_) {
    if (t.dropped) continue;
    auto it = row.find(t.spec.variable);
    if (it == row.end())
      throw std::invalid_argument("GamModel: missing covariate " + t.spec.variable);
    double by_value = 0.0;
    if (!t.spec.by_variable.empty()) {
      auto bit = row.find(t.spec.by_variable);
      if (bit == row.end())
        throw std::invalid_argument("GamModel: missing by-variable " + t.spec.by_variable);
      by_value = bit->second;
    }
    append_term_predictor(t, it->second, by_value, eta);
  }
  return eta;
}

double GamModel::predict_probability(const std::map<std::string, double>& row) const {
  return 1.0 / (1.0 + std::exp(-linear_predictor_at(row)));
}

std::vector<double> GamModel::predict(const GamData& data) const {
  const std::size_t n = data.rows();
  std::vector<double> out(n);
  std::map<std::string, double> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    for (const auto& [name, col] : data.cols) row[name] = col[i];
    out[i] = predict_probability(row);
  }
  return out;
}

nlohmann::json GamModel::dump() const {
  nlohmann::json j;
  j["lambdas"] = fit_.lambdas;
  j["iterations"] = fit_.iterations;
  j["deviance"] = fit_.deviance;
  j["edf"] = fit_.edf;
  std::vector<double> coef(fit_.coefficients.data(),
                           fit_.coefficients.data() + fit_.coefficients.size());
  j["coefficients"] = coef;
  for (const FittedTerm& t : terms_) {
    nlohmann::json jt;
    jt["variable"] = t.spec.variable;
    jt["dropped"] = t.dropped;
    jt["kind"] = t.effective_kind == TermKind::smooth ? "smooth"
                 : t.effective_kind == TermKind::categorical ? "categorical" : "linear";
    if (!t.knots.empty()) jt["knots"] = t.knots;
    if (!t.levels.empty()) jt["levels"] = t.levels;
    j["terms"].push_back(jt);
  }
  j["warnings"] = warnings_;
  return j;
}

}  // namespace ncc
