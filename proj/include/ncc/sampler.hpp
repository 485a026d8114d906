#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ncc/cohort.hpp"

namespace ncc {

enum class MatchingMode { caliper_exact, nearest_neighbor };

struct CaliperFactor {
  std::string factor;
  double tolerance = 0.0;  // strictly positive
};

struct MatchingSpec {
  MatchingMode mode = MatchingMode::caliper_exact;
  std::vector<CaliperFactor> caliper_factors;
  std::vector<std::string> exact_factors;
  std::string nn_factor;  // required iff nearest_neighbor

  void validate() const;
  // Matching factor names in declaration order (caliper, then exact; or nn).
  std::vector<std::string> factor_names() const;
};

struct MatchedSet {
  std::size_t case_id;
  std::vector<std::size_t> control_ids;
};

// Members always include the case itself, so n_i = members.size() matches the
// m/(n_i - 1) control-pool bookkeeping in both matching modes.
struct EffectiveRiskSet {
  std::size_t case_id;
  std::vector<std::size_t> members;
};

struct NccSample {
  std::vector<char> s;   // selection indicator per subject
  std::vector<char> s1;  // case indicator S_j * D_j
  std::vector<MatchedSet> matched_sets;
  std::vector<EffectiveRiskSet> effective_risk_sets;  // per selected case
  std::size_t m = 1;
  double pi1 = 1.0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

// {j : L_j <= T_i <= T_j}; case_id must be an event.
std::vector<std::size_t> risk_set(const Cohort& cohort, std::size_t case_id);

// Caliper/exact mode keeps the case as a member; nearest-neighbor mode returns
// the argmin singleton excluding the case (ties broken by lowest id).
std::vector<std::size_t> effective_risk_set(const Cohort& cohort,
                                            std::size_t case_id,
                                            const MatchingSpec& spec);

// Bernoulli(pi1) case selection, m controls per case drawn uniformly without
// replacement from the effective risk set minus the case. Control draws use a
// dedicated substream per case id.
NccSample sample_ncc(const Cohort& cohort, const MatchingSpec& spec,
                     std::size_t m, double pi1, std::uint64_t seed);

struct Eligibility {
  std::vector<char> mask;
  std::size_t eligible = 0;
  std::size_t ineligible = 0;
};

// A subject is eligible iff it is an event (with pi1 > 0) or a nonevent lying
// in at least one selected case's effective risk set.
Eligibility eligibility(const Cohort& cohort, const NccSample& ncc);

// selection.csv: id,s,s1 ; matched_sets.csv: case_id,control_id,set_index
void write_ncc_csv(const NccSample& ncc, const std::filesystem::path& selection_path,
                   const std::filesystem::path& matched_sets_path);
// Reads selection + matched sets; effective risk sets are rebuilt from the
// cohort and matching spec.
NccSample read_ncc_csv(const Cohort& cohort, const MatchingSpec& spec,
                       std::size_t m, double pi1,
                       const std::filesystem::path& selection_path,
                       const std::filesystem::path& matched_sets_path);

nlohmann::json matching_to_json(const MatchingSpec& spec);
MatchingSpec matching_from_json(const nlohmann::json& j);

}  // namespace ncc
