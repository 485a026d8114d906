#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ncc/sampler.hpp"
#include "ncc/smooth_logit.hpp"

namespace ncc {

enum class WeightFamily { km, gam };

struct WeightMethodSpec {
  WeightFamily family = WeightFamily::km;
  // Matching factors to condition on beyond (D, T); empty means "w/o M".
  std::vector<std::string> covariate_set;
  bool include_interactions = false;  // GAM only
  std::optional<double> threshold;    // weight cap, e.g. 100
  double pi1 = 1.0;
  std::string label;

  void validate() const;
};

struct WeightDiagnostics {
  double sum_weights = 0.0;
  std::size_t capped = 0;
  double min_weight = 0.0;
  double max_weight = 0.0;
  std::size_t clipped_probs = 0;
  std::vector<std::string> warnings;
};

struct WeightVector {
  std::vector<double> probs;    // per cohort subject (zero allowed for ineligible)
  std::vector<double> weights;  // per cohort subject; zero when not selected
  WeightMethodSpec method;
  WeightDiagnostics diagnostics;
};

// Product-form nonparametric probabilities for the typical design (pi1 = 1).
// Empty covariate_set replaces effective risk sets by plain risk sets.
std::vector<double> km_inclusion_probabilities(const Cohort& cohort, const NccSample& ncc,
                                               const WeightMethodSpec& spec);

// Horvitz-Thompson generalization for pi1 <= 1; reduces to KM at pi1 = 1.
std::vector<double> ht_inclusion_probabilities(const Cohort& cohort, const NccSample& ncc,
                                               const WeightMethodSpec& spec);

struct GamWeightOptions {
  GamOptions gam;
  double probability_floor = 1e-8;
};

// Smoothed probabilities from logit-link additive models of selection on
// (entry, follow-up time, covariate_set); separate event/nonevent fits when
// pi1 < 1. Diagnostics lands in the returned pair's second member.
struct GamWeightResult {
  std::vector<double> probs;
  std::size_t clipped = 0;
  std::vector<std::string> warnings;
};
GamWeightResult gam_inclusion_probabilities(const Cohort& cohort, const NccSample& ncc,
                                            const WeightMethodSpec& spec,
                                            const std::vector<SmoothTermSpec>& terms,
                                            const GamWeightOptions& opts = {});

// Default GAM term structure for a matching spec: smooths of entry and t_obs,
// smooths for caliper factors, categorical terms for exact factors, by-level
// interaction smooths when requested.
std::vector<SmoothTermSpec> default_gam_terms(const MatchingSpec& matching,
                                              const WeightMethodSpec& spec);

// w = min(1/p, threshold) for selected subjects; p = 0 on a selected subject
// is an invariant violation and throws.
WeightVector finalize_weights(const std::vector<double>& probs, const NccSample& ncc,
                              const WeightMethodSpec& spec);

// CSV: id,prob,weight,method,capped
void write_weights_csv(const WeightVector& wv, const std::filesystem::path& path);
WeightVector read_weights_csv(const std::filesystem::path& path);

}  // namespace ncc
