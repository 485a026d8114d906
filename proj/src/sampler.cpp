#include "ncc/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ncc/rng.hpp"

namespace ncc {

namespace {
enum StreamId : std::uint64_t { kCaseSelection = 0x6e63632d63617365ULL };
constexpr std::uint64_t kControlStreamSalt = 0x9e3779b97f4a7c15ULL;
}  // namespace

void MatchingSpec::validate() const {
  if (mode == MatchingMode::nearest_neighbor) {
    if (nn_factor.empty())
      throw std::invalid_argument("MatchingSpec: nearest_neighbor mode requires nn_factor");
    if (!caliper_factors.empty() || !exact_factors.empty())
      throw std::invalid_argument("MatchingSpec: nearest_neighbor mode takes a single nn_factor");
  } else {
    if (caliper_factors.empty() && exact_factors.empty())
      throw std::invalid_argument("MatchingSpec: caliper_exact mode needs at least one factor");
    for (const auto& f : caliper_factors)
      if (!(f.tolerance > 0.0))
        throw std::invalid_argument("MatchingSpec: caliper tolerance must be positive for " + f.factor);
  }
}

std::vector<std::string> MatchingSpec::factor_names() const {
  std::vector<std::string> names;
  if (mode == MatchingMode::nearest_neighbor) {
    names.push_back(nn_factor);
    return names;
  }
  for (const auto& f : caliper_factors) names.push_back(f.factor);
  for (const auto& f : exact_factors) names.push_back(f);
  return names;
}

std::vector<std::size_t> risk_set(const Cohort& cohort, std::size_t case_id) {
  if (case_id >= cohort.size() || cohort.subjects[case_id].d != 1)
    throw std::invalid_argument("risk_set: case_id must index an event");
  const double t_i = cohort.subjects[case_id].t_obs;
  std::vector<std::size_t> out;
  for (const Subject& s : cohort.subjects)
    if (s.entry <= t_i && t_i <= s.t_obs) out.push_back(s.id);
  return out;
}

std::vector<std::size_t> effective_risk_set(const Cohort& cohort,
                                            std::size_t case_id,
                                            const MatchingSpec& spec) {
  spec.validate();
  std::vector<std::size_t> base = risk_set(cohort, case_id);
  if (base.empty()) throw std::runtime_error("effective_risk_set: empty risk set");
  const Subject& c = cohort.subjects[case_id];

  if (spec.mode == MatchingMode::nearest_neighbor) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_id = case_id;
    const double ref = factor_value(c, spec.nn_factor);
    for (std::size_t j : base) {
      if (j == case_id) continue;
      double dist = std::abs(factor_value(cohort.subjects[j], spec.nn_factor) - ref);
      if (dist < best || (dist == best && j < best_id)) {
        best = dist;
        best_id = j;
      }
    }
    if (best_id == case_id) return {};  // nobody else at risk
    return {best_id};
  }

  std::vector<std::size_t> out;
  for (std::size_t j : base) {
    const Subject& s = cohort.subjects[j];
    bool ok = true;
    for (const auto& f : spec.caliper_factors)
      if (std::abs(factor_value(s, f.factor) - factor_value(c, f.factor)) > f.tolerance) {
        ok = false;
        break;
      }
    if (ok)
      for (const auto& g : spec.exact_factors)
        if (factor_value(s, g) != factor_value(c, g)) {
          ok = false;
          break;
        }
    if (ok) out.push_back(j);
  }
  return out;
}

NccSample sample_ncc(const Cohort& cohort, const MatchingSpec& spec,
                     std::size_t m, double pi1, std::uint64_t seed) {
  spec.validate();
  if (m < 1) throw std::invalid_argument("sample_ncc: m must be >= 1");
  if (!(pi1 > 0.0) || !(pi1 <= 1.0))
    throw std::invalid_argument("sample_ncc: pi1 must lie in (0,1]");
  if (spec.mode == MatchingMode::nearest_neighbor && m != 1)
    throw std::invalid_argument("sample_ncc: nearest-neighbor matching is defined for m = 1 only");

  NccSample ncc;
  ncc.m = m;
  ncc.pi1 = pi1;
  ncc.seed = seed;
  ncc.s.assign(cohort.size(), 0);
  ncc.s1.assign(cohort.size(), 0);

  RandomStream case_rng(seed, kCaseSelection);
  for (const Subject& subj : cohort.subjects) {
    if (subj.d != 1) continue;
    bool selected = pi1 >= 1.0 || case_rng.bernoulli(pi1);
    if (!selected) continue;
    const std::size_t case_id = subj.id;
    ncc.s[case_id] = 1;
    ncc.s1[case_id] = 1;

    std::vector<std::size_t> pool = effective_risk_set(cohort, case_id, spec);
    // Bookkeeping keeps the case as a member so n_i counts it.
    EffectiveRiskSet ers;
    ers.case_id = case_id;
    ers.members.push_back(case_id);
    for (std::size_t j : pool)
      if (j != case_id) ers.members.push_back(j);
    std::vector<std::size_t> candidates(ers.members.begin() + 1, ers.members.end());
    ncc.effective_risk_sets.push_back(std::move(ers));

    MatchedSet set;
    set.case_id = case_id;
    if (candidates.size() < m) {
      ncc.warnings.push_back("case " + std::to_string(case_id) + ": control pool has " +
                             std::to_string(candidates.size()) + " < m = " +
                             std::to_string(m) + " candidates, taking all");
      set.control_ids = candidates;
    } else {
      RandomStream ctrl_rng(seed ^ kControlStreamSalt, case_id);
      // Partial Fisher-Yates for m draws without replacement.
      for (std::size_t k = 0; k < m; ++k) {
        std::size_t r = k + static_cast<std::size_t>(ctrl_rng.below(candidates.size() - k));
        std::swap(candidates[k], candidates[r]);
        set.control_ids.push_back(candidates[k]);
      }
    }
    for (std::size_t j : set.control_ids) ncc.s[j] = 1;
    ncc.matched_sets.push_back(std::move(set));
  }
  return ncc;
}

Eligibility eligibility(const Cohort& cohort, const NccSample& ncc) {
  Eligibility e;
  e.mask.assign(cohort.size(), 0);
  for (const Subject& s : cohort.subjects)
    if (s.d == 1 && ncc.pi1 > 0.0) e.mask[s.id] = 1;
  for (const auto& ers : ncc.effective_risk_sets)
    for (std::size_t j : ers.members)
      if (cohort.subjects[j].d == 0) e.mask[j] = 1;
  for (char f : e.mask) (f ? e.eligible : e.ineligible)++;
  return e;
}

void write_ncc_csv(const NccSample& ncc, const std::filesystem::path& selection_path,
                   const std::filesystem::path& matched_sets_path) {
  std::ofstream sel(selection_path);
  if (!sel) throw std::runtime_error("cannot open for writing: " + selection_path.string());
  sel << "id,s,s1\n";
  for (std::size_t i = 0; i < ncc.s.size(); ++i)
    sel << i << ',' << int(ncc.s[i]) << ',' << int(ncc.s1[i]) << '\n';

  std::ofstream ms(matched_sets_path);
  if (!ms) throw std::runtime_error("cannot open for writing: " + matched_sets_path.string());
  ms << "case_id,control_id,set_index\n";
  for (std::size_t k = 0; k < ncc.matched_sets.size(); ++k)
    for (std::size_t j : ncc.matched_sets[k].control_ids)
      ms << ncc.matched_sets[k].case_id << ',' << j << ',' << k << '\n';
}

NccSample read_ncc_csv(const Cohort& cohort, const MatchingSpec& spec,
                       std::size_t m, double pi1,
                       const std::filesystem::path& selection_path,
                       const std::filesystem::path& matched_sets_path) {
  NccSample ncc;
  ncc.m = m;
  ncc.pi1 = pi1;
  ncc.s.assign(cohort.size(), 0);
  ncc.s1.assign(cohort.size(), 0);

  std::ifstream sel(selection_path);
  if (!sel) throw std::runtime_error("cannot open for reading: " + selection_path.string());
  std::string line;
  std::getline(sel, line);
  while (std::getline(sel, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    std::size_t id = std::stoull(tok);
    if (id >= cohort.size()) throw std::runtime_error("selection id out of range: " + tok);
    std::getline(ss, tok, ',');
    ncc.s[id] = std::stoi(tok) ? 1 : 0;
    std::getline(ss, tok, ',');
    ncc.s1[id] = std::stoi(tok) ? 1 : 0;
  }

  std::ifstream ms(matched_sets_path);
  if (!ms) throw std::runtime_error("cannot open for reading: " + matched_sets_path.string());
  std::getline(ms, line);
  std::vector<MatchedSet> sets;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    std::size_t case_id = std::stoull(tok);
    std::getline(ss, tok, ',');
    std::size_t control_id = std::stoull(tok);
    std::getline(ss, tok, ',');
    std::size_t idx = std::stoull(tok);
    if (idx >= sets.size()) sets.resize(idx + 1);
    sets[idx].case_id = case_id;
    sets[idx].control_ids.push_back(control_id);
  }
  ncc.matched_sets = std::move(sets);

  for (const auto& set : ncc.matched_sets) {
    EffectiveRiskSet ers;
    ers.case_id = set.case_id;
    ers.members.push_back(set.case_id);
    for (std::size_t j : effective_risk_set(cohort, set.case_id, spec))
      if (j != set.case_id) ers.members.push_back(j);
    ncc.effective_risk_sets.push_back(std::move(ers));
  }
  return ncc;
}

nlohmann::json matching_to_json(const MatchingSpec& spec) {
  nlohmann::json j;
  j["mode"] = spec.mode == MatchingMode::nearest_neighbor ? "nearest_neighbor" : "caliper_exact";
  for (const auto& f : spec.caliper_factors)
    j["caliper"][f.factor] = f.tolerance;
  j["exact"] = spec.exact_factors;
  if (!spec.nn_factor.empty()) j["nn_factor"] = spec.nn_factor;
  return j;
}

MatchingSpec matching_from_json(const nlohmann::json& j) {
  MatchingSpec spec;
  std::string mode = j.value("mode", "caliper_exact");
  spec.mode = mode == "nearest_neighbor" ? MatchingMode::nearest_neighbor
                                         : MatchingMode::caliper_exact;
  if (j.contains("caliper"))
    for (const auto& [k, v] : j.at("caliper").items())
      spec.caliper_factors.push_back({k, v.get<double>()});
  if (j.contains("exact")) spec.exact_factors = j.at("exact").get<std::vector<std::string>>();
  spec.nn_factor = j.value("nn_factor", "");
  return spec;
}

}  // namespace ncc
