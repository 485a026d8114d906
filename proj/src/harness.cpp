#include "ncc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ncc {

namespace {

constexpr std::uint64_t kNccSeedSalt = 0x5bd1e995c3ULL;

std::vector<std::string> dedup(std::vector<std::string> names) {
  std::vector<std::string> out;
  for (auto& n : names)
    if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
  return out;
}

// Covariates of the log-HR model: X_b first, then X_a and the matching
// factors entered linearly.
std::vector<std::string> cox_covariates(const ExperimentSpec& spec) {
  std::vector<std::string> names = {"xb", "xa"};
  for (const std::string& f : spec.matching.factor_names()) names.push_back(f);
  return dedup(names);
}

std::vector<WeightedRecord> make_records(const Cohort& cohort,
                                         const std::vector<std::string>& covariates,
                                         const std::vector<double>* weights) {
  std::vector<WeightedRecord> records;
  for (const Subject& s : cohort.subjects) {
    double w = weights ? (*weights)[s.id] : 1.0;
    if (weights && !(w > 0.0)) continue;
    WeightedRecord r;
    r.id = s.id;
    r.t_obs = s.t_obs;
    r.entry = s.entry;
    r.d = s.d;
    r.weight = w;
    for (const std::string& c : covariates) r.covariates.push_back(factor_value(s, c));
    records.push_back(std::move(r));
  }
  return records;
}

double estimate_estimand(Estimand e, const ExperimentSpec& spec, const Cohort& cohort,
                         const std::vector<double>* weights) {
  switch (e) {
    case Estimand::log_hr_xb: {
      auto names = cox_covariates(spec);
      auto records = make_records(cohort, names, weights);
      return weighted_cox_fit(records, names).coefficients[0];
    }
    case Estimand::cond_surv_xa0_at_u1: {
      auto records = make_records(cohort, {"xa_raw"}, weights);
      SurvivalCurve curve = weighted_km(records, std::make_pair(std::size_t{0}, 0.0));
      return curve.at(spec.scenario.censor_hi);
    }
    case Estimand::theta_xb_on_xa: {
      std::vector<std::vector<double>> X;
      std::vector<double> y, w;
      for (const Subject& s : cohort.subjects) {
        double wi = weights ? (*weights)[s.id] : 1.0;
        if (weights && !(wi > 0.0)) continue;
        X.push_back({1.0, s.xa});
        y.push_back(s.xb);
        w.push_back(wi);
      }
      return weighted_ols(X, y, w).coefficients[1];
    }
  }
  throw std::logic_error("estimate_estimand: unknown estimand");
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  double pos = q * (v.size() - 1);
  std::size_t k = static_cast<std::size_t>(pos);
  double frac = pos - k;
  return k + 1 < v.size() ? v[k] * (1 - frac) + v[k + 1] * frac : v[k];
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

void write_boxplot_svg(const std::filesystem::path& path, const std::string& title,
                       const std::vector<std::pair<std::string, std::vector<double>>>& groups) {
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const auto& [name, v] : groups)
    for (double x : v) {
      lo = any ? std::min(lo, x) : x;
      hi = any ? std::max(hi, x) : x;
      any = true;
    }
  if (!any) {
    lo = -1;
    hi = 1;
  }
  if (hi <= lo) hi = lo + 1.0;
  double pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;

  const double width = 160.0 * groups.size() + 80.0;
  const double height = 360.0;
  const double plot_top = 40.0, plot_bottom = 320.0;
  auto ypos = [&](double v) {
    return plot_bottom - (v - lo) / (hi - lo) * (plot_bottom - plot_top);
  };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  out << "<text x=\"10\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  if (lo < 0.0 && hi > 0.0)
    out << "<line x1=\"40\" x2=\"" << width - 20 << "\" y1=\"" << ypos(0.0) << "\" y2=\""
        << ypos(0.0) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";

  double cx = 110.0;
  for (const auto& [name, v] : groups) {
    out << "<g class=\"box\" data-method=\"" << name << "\">\n";
    if (!v.empty()) {
      double q1 = quantile(v, 0.25), med = quantile(v, 0.5), q3 = quantile(v, 0.75);
      double iqr = q3 - q1;
      double wlo = q1, whi = q3;
      for (double x : v) {
        if (x >= q1 - 1.5 * iqr) wlo = std::min(wlo, x);
        if (x <= q3 + 1.5 * iqr) whi = std::max(whi, x);
      }
      const double bw = 50.0;
      out << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << ypos(whi) << "\" y2=\""
          << ypos(wlo) << "\" stroke=\"black\"/>\n";
      out << "<rect x=\"" << cx - bw / 2 << "\" y=\"" << ypos(q3) << "\" width=\"" << bw
          << "\" height=\"" << ypos(q1) - ypos(q3)
          << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
      out << "<line x1=\"" << cx - bw / 2 << "\" x2=\"" << cx + bw / 2 << "\" y1=\""
          << ypos(med) << "\" y2=\"" << ypos(med) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
      for (double x : v)
        if (x < q1 - 1.5 * iqr || x > q3 + 1.5 * iqr)
          out << "<circle cx=\"" << cx << "\" cy=\"" << ypos(x) << "\" r=\"2\" fill=\"black\"/>\n";
    }
    out << "<text x=\"" << cx << "\" y=\"340\" font-size=\"12\" text-anchor=\"middle\">" << name
        << "</text>\n";
    out << "</g>\n";
    cx += 160.0;
  }
  out << "</svg>\n";
}

}  // namespace

std::string estimand_name(Estimand e) {
  switch (e) {
    case Estimand::log_hr_xb: return "log_hr_xb";
    case Estimand::cond_surv_xa0_at_u1: return "cond_surv_xa0_at_u1";
    case Estimand::theta_xb_on_xa: return "theta_xb_on_xa";
  }
  return "unknown";
}

Estimand estimand_from_name(const std::string& name) {
  if (name == "log_hr_xb") return Estimand::log_hr_xb;
  if (name == "cond_surv_xa0_at_u1") return Estimand::cond_surv_xa0_at_u1;
  if (name == "theta_xb_on_xa") return Estimand::theta_xb_on_xa;
  throw std::invalid_argument("unknown estimand: " + name);
}

void ExperimentSpec::validate() const {
  scenario.validate();
  matching.validate();
  if (replicates < 1) throw std::invalid_argument("ExperimentSpec: replicates must be >= 1");
  if (estimands.empty()) throw std::invalid_argument("ExperimentSpec: estimands must be non-empty");
  for (const auto& v : weight_variants) v.spec.validate();
}

std::vector<ReplicateResult> run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  std::vector<ReplicateResult> results;
  results.reserve(spec.replicates);

  for (int r = 0; r < spec.replicates; ++r) {
    const std::uint64_t cohort_seed = spec.base_seed + static_cast<std::uint64_t>(r);
    Cohort cohort = generate_cohort(spec.scenario, cohort_seed);
    const std::uint64_t ncc_seed = cohort_seed * 0x9e3779b97f4a7c15ULL + kNccSeedSalt;
    NccSample ncc = sample_ncc(cohort, spec.matching, spec.m, spec.pi1, ncc_seed);

    ReplicateResult rr;
    rr.replicate = r;
    rr.cohort_size = cohort.size();
    rr.eligible_count = eligibility(cohort, ncc).eligible;

    for (Estimand e : spec.estimands)
      rr.reference[e] = estimate_estimand(e, spec, cohort, nullptr);

    for (const WeightVariant& variant : spec.weight_variants) {
      std::vector<double> weights;
      bool weights_ok = true;
      std::string weight_error;
      try {
        WeightMethodSpec wspec = variant.spec;
        wspec.pi1 = spec.pi1;
        std::vector<double> probs;
        if (wspec.family == WeightFamily::km) {
          probs = spec.pi1 < 1.0 ? ht_inclusion_probabilities(cohort, ncc, wspec)
                                 : km_inclusion_probabilities(cohort, ncc, wspec);
        } else {
          GamWeightOptions gopts;
          gopts.gam.lambda_grid = spec.lambda_grid;
          auto terms = default_gam_terms(spec.matching, wspec);
          for (auto& t : terms)
            if (t.kind == TermKind::smooth) t.basis_size = spec.gam_basis_size;
          probs = gam_inclusion_probabilities(cohort, ncc, wspec, terms, gopts).probs;
        }
        WeightVector wv = finalize_weights(probs, ncc, wspec);
        weights = std::move(wv.weights);
        if (variant.spec.family == WeightFamily::km && !variant.spec.covariate_set.empty())
          rr.sum_weights_km = wv.diagnostics.sum_weights;
        if (variant.spec.family == WeightFamily::gam && !variant.spec.covariate_set.empty() &&
            !variant.spec.include_interactions)
          rr.sum_weights_gam = wv.diagnostics.sum_weights;
      } catch (const std::exception& ex) {
        weights_ok = false;
        weight_error = ex.what();
      }
      for (Estimand e : spec.estimands) {
        CellResult cell;
        if (!weights_ok) {
          cell.error = "weight computation failed: " + weight_error;
        } else {
          try {
            cell.estimate = estimate_estimand(e, spec, cohort, &weights);
            cell.ok = true;
          } catch (const std::exception& ex) {
            cell.error = ex.what();
          }
        }
        rr.cells[variant.name][e] = cell;
      }
    }

    // Conditional-logistic comparator, log-HR only.
    if (spec.clogit_comparator &&
        std::find(spec.estimands.begin(), spec.estimands.end(), Estimand::log_hr_xb) !=
            spec.estimands.end()) {
      CellResult cell;
      try {
        std::vector<MatchedSetCovariates> sets;
        for (const MatchedSet& ms : ncc.matched_sets) {
          MatchedSetCovariates sc;
          const Subject& c = cohort.subjects[ms.case_id];
          sc.case_covariates = {c.xb, c.xa};
          for (std::size_t j : ms.control_ids) {
            const Subject& s = cohort.subjects[j];
            sc.control_covariates.push_back({s.xb, s.xa});
          }
          if (!sc.control_covariates.empty()) sets.push_back(std::move(sc));
        }
        cell.estimate = clogit_fit(sets)[0];
        cell.ok = true;
      } catch (const std::exception& ex) {
        cell.error = ex.what();
      }
      rr.cells["clogit"][Estimand::log_hr_xb] = cell;
    }
    results.push_back(std::move(rr));
  }
  return results;
}

BiasSummary summarize_bias(const std::vector<ReplicateResult>& results) {
  if (results.empty()) throw std::invalid_argument("summarize_bias: no results");
  BiasSummary summary;
  std::map<std::string, std::map<Estimand, std::vector<double>>> diffs;
  std::map<std::string, std::map<Estimand, int>> failures;
  for (const auto& rr : results)
    for (const auto& [method, cells] : rr.cells)
      for (const auto& [e, cell] : cells) {
        if (cell.ok)
          diffs[method][e].push_back(cell.estimate - rr.reference.at(e));
        else
          failures[method][e]++;
      }

  for (const auto& [method, per_estimand] : diffs)
    for (const auto& [e, v] : per_estimand) {
      BiasCell cell;
      cell.n_ok = static_cast<int>(v.size());
      cell.n_failed = failures[method][e];
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= v.size();
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      cell.mean_diff = mean;
      cell.sd_diff = v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0;
      cell.q1 = quantile(v, 0.25);
      cell.median = quantile(v, 0.5);
      cell.q3 = quantile(v, 0.75);
      cell.t_stat = cell.sd_diff > 0.0 ? mean / (cell.sd_diff / std::sqrt(double(v.size()))) : 0.0;
      summary.cells[method][e] = cell;
    }
  for (const auto& [method, per_estimand] : failures)
    for (const auto& [e, count] : per_estimand)
      if (!summary.cells[method].count(e)) {
        BiasCell cell;
        cell.n_failed = count;
        summary.cells[method][e] = cell;
      }
  return summary;
}

std::vector<std::filesystem::path> export_results(const std::vector<ReplicateResult>& results,
                                                  const BiasSummary& summary,
                                                  const std::filesystem::path& out_dir,
                                                  const std::set<std::string>& formats) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;

  if (formats.count("csv")) {
    auto rep_path = out_dir / "replicates.csv";
    std::ofstream out(rep_path);
    if (!out) throw std::runtime_error("cannot open for writing: " + rep_path.string());
    out << "replicate,estimand,method,estimate,reference,diff\n";
    for (const auto& rr : results)
      for (const auto& [method, cells] : rr.cells)
        for (const auto& [e, cell] : cells) {
          double ref = rr.reference.at(e);
          if (cell.ok)
            out << rr.replicate << ',' << estimand_name(e) << ',' << method << ','
                << fmt(cell.estimate) << ',' << fmt(ref) << ',' << fmt(cell.estimate - ref)
                << '\n';
          else
            out << rr.replicate << ',' << estimand_name(e) << ',' << method << ",nan,"
                << fmt(ref) << ",nan\n";
        }
    written.push_back(rep_path);

    auto sum_path = out_dir / "summary.csv";
    std::ofstream sout(sum_path);
    sout << "estimand,method,mean_diff,sd_diff,q1,median,q3,t_stat,n_ok,n_failed\n";
    for (const auto& [method, per_estimand] : summary.cells)
      for (const auto& [e, c] : per_estimand)
        sout << estimand_name(e) << ',' << method << ',' << fmt(c.mean_diff) << ','
             << fmt(c.sd_diff) << ',' << fmt(c.q1) << ',' << fmt(c.median) << ',' << fmt(c.q3)
             << ',' << fmt(c.t_stat) << ',' << c.n_ok << ',' << c.n_failed << '\n';
    written.push_back(sum_path);
  }

  if (formats.count("json")) {
    nlohmann::json j;
    for (const auto& [method, per_estimand] : summary.cells)
      for (const auto& [e, c] : per_estimand) {
        nlohmann::json cell{{"mean_diff", c.mean_diff}, {"sd_diff", c.sd_diff},
                            {"q1", c.q1},               {"median", c.median},
                            {"q3", c.q3},               {"t_stat", c.t_stat},
                            {"n_ok", c.n_ok},           {"n_failed", c.n_failed}};
        j[estimand_name(e)][method] = cell;
      }
    auto path = out_dir / "summary.json";
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    written.push_back(path);
  }

  if (formats.count("svg")) {
    std::set<Estimand> estimands;
    for (const auto& rr : results)
      for (const auto& [e, v] : rr.reference) estimands.insert(e);
    for (Estimand e : estimands) {
      std::vector<std::pair<std::string, std::vector<double>>> groups;
      std::set<std::string> methods;
      for (const auto& rr : results)
        for (const auto& [method, cells] : rr.cells)
          if (cells.count(e)) methods.insert(method);
      for (const std::string& method : methods) {
        std::vector<double> diffs;
        for (const auto& rr : results) {
          auto mit = rr.cells.find(method);
          if (mit == rr.cells.end()) continue;
          auto cit = mit->second.find(e);
          if (cit != mit->second.end() && cit->second.ok)
            diffs.push_back(cit->second.estimate - rr.reference.at(e));
        }
        groups.emplace_back(method, std::move(diffs));
      }
      auto path = out_dir / ("boxplot_" + estimand_name(e) + ".svg");
      write_boxplot_svg(path, "diff vs full cohort: " + estimand_name(e), groups);
      written.push_back(path);
    }
  }
  return written;
}

namespace {

constexpr double kLog2 = 0.6931471805599453;
constexpr double kCaliperEps = 0.34641016151377546;  // sqrt(3)/5

ExperimentSpec base_experiment() {
  ExperimentSpec spec;
  spec.scenario.n = 10000;
  spec.scenario.r2_xb = 0.1;
  spec.scenario.alpha_a = kLog2;
  spec.scenario.alpha_b = kLog2;
  spec.scenario.gamma_mxb = 0.0;
  spec.m = 1;
  spec.pi1 = 1.0;
  spec.replicates = 50;
  spec.estimands = {Estimand::log_hr_xb, Estimand::cond_surv_xa0_at_u1,
                    Estimand::theta_xb_on_xa};
  return spec;
}

WeightVariant variant(const std::string& name, WeightFamily family,
                      std::vector<std::string> covariates, bool interactions = false) {
  WeightVariant v;
  v.name = name;
  v.spec.family = family;
  v.spec.covariate_set = std::move(covariates);
  v.spec.include_interactions = interactions;
  v.spec.label = name;
  return v;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"fig3_nn", "fig3_caliper", "fig4_interactions", "fig5_W", "fig5_V", "fig5_Z"};
}

ExperimentSpec preset(const std::string& name) {
  ExperimentSpec spec = base_experiment();
  if (name == "fig3_nn" || name == "fig3_caliper") {
    spec.scenario.rho_mxa = 0.2;
    spec.scenario.alpha_m1 = kLog2;
    if (name == "fig3_nn") {
      spec.matching.mode = MatchingMode::nearest_neighbor;
      spec.matching.nn_factor = "m1";
    } else {
      spec.matching.caliper_factors = {{"m1", kCaliperEps}};
    }
    spec.weight_variants = {variant("km", WeightFamily::km, {"m1"}),
                            variant("gam", WeightFamily::gam, {"m1"})};
    return spec;
  }
  if (name == "fig4_interactions") {
    spec.scenario.rho_mxa = 0.2;
    spec.scenario.m2_active = true;
    spec.scenario.alpha_m1 = 0.0;
    spec.scenario.alpha_m2 = 0.0;
    spec.scenario.alpha_m1m2 = kLog2;
    spec.matching.caliper_factors = {{"m1", kCaliperEps}};
    spec.matching.exact_factors = {"m2"};
    spec.weight_variants = {variant("km", WeightFamily::km, {"m1", "m2"}),
                            variant("gam", WeightFamily::gam, {"m1", "m2"}),
                            variant("gam_interM", WeightFamily::gam, {"m1", "m2"}, true)};
    return spec;
  }
  if (name == "fig5_W" || name == "fig5_V" || name == "fig5_Z") {
    spec.scenario.rho_mxa = name == "fig5_W" ? 0.2 : 0.0;
    spec.scenario.alpha_m1 = name == "fig5_Z" ? 0.0 : kLog2;
    spec.matching.caliper_factors = {{"m1", kCaliperEps}};
    spec.weight_variants = {variant("km", WeightFamily::km, {"m1"}),
                            variant("gam", WeightFamily::gam, {"m1"}),
                            variant("km_wo_m", WeightFamily::km, {}),
                            variant("gam_wo_m", WeightFamily::gam, {})};
    return spec;
  }
  throw std::invalid_argument("unknown preset: " + name);
}

}  // namespace ncc
