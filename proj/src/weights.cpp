#include "ncc/weights.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ncc {

namespace {

// Complement products 1 - m/(n_i - 1) accumulated per subject over the given
// per-case member lists. Cases with n_i = 1 contribute nothing (warned).
std::vector<double> complement_products(const Cohort& cohort,
                                        const std::vector<EffectiveRiskSet>& sets,
                                        std::size_t m, bool skip_case_member,
                                        std::vector<std::string>& warnings) {
  std::vector<double> comp(cohort.size(), 1.0);
  for (const auto& ers : sets) {
    const std::size_t n_i = ers.members.size();
    if (n_i <= 1) {
      warnings.push_back("case " + std::to_string(ers.case_id) +
                         " alone in its effective risk set; factor skipped");
      continue;
    }
    const double frac = std::min(1.0, static_cast<double>(m) / static_cast<double>(n_i - 1));
    const double factor = 1.0 - frac;
    for (std::size_t j : ers.members) {
      if (skip_case_member && j == ers.case_id) continue;
      comp[j] *= factor;
    }
  }
  return comp;
}

std::vector<EffectiveRiskSet> plain_risk_sets(const Cohort& cohort, const NccSample& ncc) {
  std::vector<EffectiveRiskSet> sets;
  for (const auto& ers : ncc.effective_risk_sets) {
    EffectiveRiskSet plain;
    plain.case_id = ers.case_id;
    plain.members = risk_set(cohort, ers.case_id);
    sets.push_back(std::move(plain));
  }
  return sets;
}

bool is_exact_factor(const MatchingSpec& matching, const std::string& name) {
  return std::find(matching.exact_factors.begin(), matching.exact_factors.end(), name) !=
         matching.exact_factors.end();
}

}  // namespace

void WeightMethodSpec::validate() const {
  if (threshold && !(*threshold > 1.0))
    throw std::invalid_argument("WeightMethodSpec: threshold must exceed 1");
  if (!(pi1 > 0.0) || !(pi1 <= 1.0))
    throw std::invalid_argument("WeightMethodSpec: pi1 must lie in (0,1]");
}

std::vector<double> km_inclusion_probabilities(const Cohort& cohort, const NccSample& ncc,
                                               const WeightMethodSpec& spec) {
  spec.validate();
  if (spec.family != WeightFamily::km)
    throw std::invalid_argument("km_inclusion_probabilities: spec.family must be km");
  if (spec.pi1 != 1.0)
    throw std::invalid_argument("km_inclusion_probabilities: requires pi1 = 1 (use ht_*)");

  std::vector<std::string> warnings;
  const auto sets = spec.covariate_set.empty() ? plain_risk_sets(cohort, ncc)
                                               : ncc.effective_risk_sets;
  std::vector<double> comp =
      complement_products(cohort, sets, ncc.m, /*skip_case_member=*/false, warnings);

  std::vector<double> probs(cohort.size(), 0.0);
  for (const Subject& s : cohort.subjects)
    probs[s.id] = s.d == 1 ? 1.0 : 1.0 - comp[s.id];
  return probs;
}

std::vector<double> ht_inclusion_probabilities(const Cohort& cohort, const NccSample& ncc,
                                               const WeightMethodSpec& spec) {
  spec.validate();
  if (spec.family != WeightFamily::km)
    throw std::invalid_argument("ht_inclusion_probabilities: spec.family must be km");

  std::vector<std::string> warnings;
  const auto sets = spec.covariate_set.empty() ? plain_risk_sets(cohort, ncc)
                                               : ncc.effective_risk_sets;
  // A subject cannot serve as control for its own case, hence the product for
  // events runs over the other selected cases only.
  std::vector<double> comp =
      complement_products(cohort, sets, ncc.m, /*skip_case_member=*/true, warnings);

  const double pi1 = spec.pi1;
  std::vector<double> probs(cohort.size(), 0.0);
  for (const Subject& s : cohort.subjects) {
    double control_prob = 1.0 - comp[s.id];
    probs[s.id] = s.d == 1 ? pi1 + (1.0 - pi1) * control_prob : control_prob;
  }
  return probs;
}

std::vector<SmoothTermSpec> default_gam_terms(const MatchingSpec& matching,
                                              const WeightMethodSpec& spec) {
  std::vector<SmoothTermSpec> terms;
  SmoothTermSpec entry;
  entry.variable = "entry";
  terms.push_back(entry);
  SmoothTermSpec time;
  time.variable = "t_obs";
  terms.push_back(time);

  std::vector<std::string> smooth_vars, cat_vars;
  for (const std::string& name : spec.covariate_set) {
    SmoothTermSpec t;
    t.variable = name;
    if (is_exact_factor(matching, name)) {
      t.kind = TermKind::categorical;
      cat_vars.push_back(name);
    } else {
      smooth_vars.push_back(name);
    }
    terms.push_back(t);
  }
  if (spec.include_interactions) {
    for (const std::string& cont : smooth_vars)
      for (const std::string& cat : cat_vars) {
        SmoothTermSpec t;
        t.variable = cont;
        t.by_variable = cat;
        terms.push_back(t);
      }
  }
  return terms;
}

GamWeightResult gam_inclusion_probabilities(const Cohort& cohort, const NccSample& ncc,
                                            const WeightMethodSpec& spec,
                                            const std::vector<SmoothTermSpec>& terms,
                                            const GamWeightOptions& opts) {
  spec.validate();
  if (spec.family != WeightFamily::gam)
    throw std::invalid_argument("gam_inclusion_probabilities: spec.family must be gam");

  // Column names needed by the term list.
  std::vector<std::string> columns;
  for (const auto& t : terms) {
    columns.push_back(t.variable);
    if (!t.by_variable.empty()) columns.push_back(t.by_variable);
  }
  std::sort(columns.begin(), columns.end());
  columns.erase(std::unique(columns.begin(), columns.end()), columns.end());

  auto stratum_data = [&](int d_value) {
    GamData data;
    std::vector<int> y;
    for (const std::string& c : columns) data.cols[c] = {};
    for (const Subject& s : cohort.subjects) {
      if (s.d != d_value) continue;
      for (const std::string& c : columns) data.cols[c].push_back(factor_value(s, c));
      y.push_back(ncc.s[s.id] ? 1 : 0);
    }
    return std::make_pair(data, y);
  };

  GamWeightResult res;
  res.probs.assign(cohort.size(), 0.0);

  auto [nonevent_data, nonevent_y] = stratum_data(0);
  GamModel nonevent_model = GamModel::fit(nonevent_y, nonevent_data, terms, opts.gam);
  for (const std::string& w : nonevent_model.warnings())
    res.warnings.push_back("nonevent model: " + w);

  GamModel event_model;
  const bool untypical = spec.pi1 < 1.0;
  if (untypical) {
    auto [event_data, event_y] = stratum_data(1);
    event_model = GamModel::fit(event_y, event_data, terms, opts.gam);
    for (const std::string& w : event_model.warnings())
      res.warnings.push_back("event model: " + w);
  }

  std::map<std::string, double> row;
  std::size_t extrapolated = 0;
  double t_lo = std::numeric_limits<double>::infinity();
  double t_hi = -std::numeric_limits<double>::infinity();
  for (double v : nonevent_data.at("t_obs")) {
    t_lo = std::min(t_lo, v);
    t_hi = std::max(t_hi, v);
  }
  for (const Subject& s : cohort.subjects) {
    if (s.d == 1 && !untypical) {
      res.probs[s.id] = 1.0;
      continue;
    }
    row.clear();
    for (const std::string& c : columns) row[c] = factor_value(s, c);
    const GamModel& model = s.d == 1 ? event_model : nonevent_model;
    double p = model.predict_probability(row);
    if (s.d == 0 && (s.t_obs < t_lo || s.t_obs > t_hi)) ++extrapolated;
    if (p < opts.probability_floor) {
      p = opts.probability_floor;
      ++res.clipped;
    }
    res.probs[s.id] = p;
  }
  if (extrapolated > 0)
    res.warnings.push_back(std::to_string(extrapolated) +
                           " subjects beyond the observed follow-up support (linear extrapolation)");
  if (res.clipped > 0)
    res.warnings.push_back(std::to_string(res.clipped) + " fitted probabilities clipped at floor");
  return res;
}

WeightVector finalize_weights(const std::vector<double>& probs, const NccSample& ncc,
                              const WeightMethodSpec& spec) {
  spec.validate();
  if (probs.size() != ncc.s.size())
    throw std::invalid_argument("finalize_weights: probs size mismatch");

  WeightVector wv;
  wv.probs = probs;
  wv.method = spec;
  wv.weights.assign(probs.size(), 0.0);
  wv.diagnostics.min_weight = std::numeric_limits<double>::infinity();
  wv.diagnostics.max_weight = 0.0;

  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (!ncc.s[j]) continue;
    if (!(probs[j] > 0.0))
      throw std::runtime_error("finalize_weights: selected subject " + std::to_string(j) +
                               " has zero inclusion probability (weight variant inconsistent "
                               "with the realized sampling)");
    double w = 1.0 / probs[j];
    if (spec.threshold && w > *spec.threshold) {
      w = *spec.threshold;
      ++wv.diagnostics.capped;
    }
    wv.weights[j] = w;
    wv.diagnostics.sum_weights += w;
    wv.diagnostics.min_weight = std::min(wv.diagnostics.min_weight, w);
    wv.diagnostics.max_weight = std::max(wv.diagnostics.max_weight, w);
  }
  if (!std::isfinite(wv.diagnostics.min_weight)) wv.diagnostics.min_weight = 0.0;
  return wv;
}

void write_weights_csv(const WeightVector& wv, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "id,prob,weight,method,capped\n";
  const std::string method =
      wv.method.label.empty()
          ? (wv.method.family == WeightFamily::km ? "km" : "gam")
          : wv.method.label;
  char buf[160];
  for (std::size_t j = 0; j < wv.probs.size(); ++j) {
    bool capped = wv.method.threshold && wv.weights[j] > 0.0 &&
                  wv.weights[j] >= *wv.method.threshold &&
                  1.0 / wv.probs[j] > *wv.method.threshold;
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%s,%d\n", j, wv.probs[j], wv.weights[j],
                  method.c_str(), capped ? 1 : 0);
    out << buf;
  }
}

WeightVector read_weights_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::string line;
  std::getline(in, line);
  WeightVector wv;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    std::getline(ss, tok, ',');
    wv.probs.push_back(std::stod(tok));
    std::getline(ss, tok, ',');
    wv.weights.push_back(std::stod(tok));
    std::getline(ss, tok, ',');
    wv.method.label = tok;
  }
  return wv;
}

}  // namespace ncc
