#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "ncc/sampler.hpp"

using namespace ncc;

namespace {

Subject subj(std::size_t id, double t_obs, int d, double m1 = 0.0, double m2 = 1.0,
             double entry = 0.0) {
  Subject s;
  s.id = id;
  s.t_obs = t_obs;
  s.d = d;
  s.m1 = m1;
  s.m2 = m2;
  s.entry = entry;
  return s;
}

Cohort tiny_cohort() {
  // Subject 1 is the event at t = 10; 0 exits earlier, 2-4 stay longer.
  Cohort c;
  c.subjects = {subj(0, 5.0, 0), subj(1, 10.0, 1, 0.0), subj(2, 12.0, 0, 0.1),
                subj(3, 20.0, 0, 0.1), subj(4, 30.0, 0, 2.0)};
  return c;
}

MatchingSpec caliper_m1(double tol) {
  MatchingSpec spec;
  spec.caliper_factors = {{"m1", tol}};
  return spec;
}

MatchingSpec nn_m1() {
  MatchingSpec spec;
  spec.mode = MatchingMode::nearest_neighbor;
  spec.nn_factor = "m1";
  return spec;
}

}  // namespace

TEST_CASE("risk set keeps exactly those at risk at the event time") {
  Cohort c = tiny_cohort();
  CHECK(risk_set(c, 1) == std::vector<std::size_t>{1, 2, 3, 4});
  CHECK_THROWS_AS(risk_set(c, 0), std::invalid_argument);  // not an event
  // Late entry excludes a subject even with a long exit time.
  c.subjects[4].entry = 15.0;
  CHECK(risk_set(c, 1) == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("caliper matching keeps the case and near-by members") {
  Cohort c = tiny_cohort();
  CHECK(effective_risk_set(c, 1, caliper_m1(0.5)) == std::vector<std::size_t>{1, 2, 3});
  CHECK(effective_risk_set(c, 1, caliper_m1(5.0)) == std::vector<std::size_t>{1, 2, 3, 4});
}

TEST_CASE("exact matching compares factor values literally") {
  Cohort c = tiny_cohort();
  c.subjects[2].m2 = -1.0;
  MatchingSpec spec;
  spec.exact_factors = {"m2"};
  CHECK(effective_risk_set(c, 1, spec) == std::vector<std::size_t>{1, 3, 4});
}

TEST_CASE("nearest neighbor returns the closest non-case, ties to lowest id") {
  Cohort c = tiny_cohort();
  CHECK(effective_risk_set(c, 1, nn_m1()) == std::vector<std::size_t>{2});
  c.subjects[3].m1 = -0.1;  // tie in |m1 - 0| with subject 2
  CHECK(effective_risk_set(c, 1, nn_m1()) == std::vector<std::size_t>{2});
  c.subjects[2].m1 = 0.3;
  CHECK(effective_risk_set(c, 1, nn_m1()) == std::vector<std::size_t>{3});
}

TEST_CASE("matching spec validation") {
  MatchingSpec spec;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);  // no factors
  spec.caliper_factors = {{"m1", 0.0}};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);  // bad tolerance
  spec = nn_m1();
  spec.exact_factors = {"m2"};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  CHECK(caliper_m1(1.0).factor_names() == std::vector<std::string>{"m1"});
}

TEST_CASE("sampling basics: cases, control counts, determinism") {
  Cohort c = tiny_cohort();
  NccSample ncc = sample_ncc(c, caliper_m1(5.0), 2, 1.0, 42);
  REQUIRE(ncc.matched_sets.size() == 1);
  CHECK(ncc.s1[1] == 1);
  CHECK(ncc.matched_sets[0].case_id == 1);
  CHECK(ncc.matched_sets[0].control_ids.size() == 2);
  for (std::size_t j : ncc.matched_sets[0].control_ids) {
    CHECK(j != 1);
    CHECK(ncc.s[j] == 1);
  }
  // n_i bookkeeping counts the case itself.
  CHECK(ncc.effective_risk_sets[0].members.front() == 1);
  CHECK(ncc.effective_risk_sets[0].members.size() == 4);

  NccSample again = sample_ncc(c, caliper_m1(5.0), 2, 1.0, 42);
  CHECK(again.matched_sets[0].control_ids == ncc.matched_sets[0].control_ids);
}

TEST_CASE("nearest neighbor sampling requires m = 1") {
  Cohort c = tiny_cohort();
  CHECK_THROWS_AS(sample_ncc(c, nn_m1(), 2, 1.0, 1), std::invalid_argument);
  NccSample ncc = sample_ncc(c, nn_m1(), 1, 1.0, 1);
  CHECK(ncc.matched_sets[0].control_ids == std::vector<std::size_t>{2});
  // Member bookkeeping: case plus its single neighbor.
  CHECK(ncc.effective_risk_sets[0].members == std::vector<std::size_t>{1, 2});
}

TEST_CASE("short control pools are taken whole with a warning") {
  Cohort c = tiny_cohort();
  NccSample ncc = sample_ncc(c, caliper_m1(0.5), 5, 1.0, 7);
  CHECK(ncc.matched_sets[0].control_ids == std::vector<std::size_t>{2, 3});
  CHECK(!ncc.warnings.empty());
}

TEST_CASE("control selection frequencies match m over (n_i - 1)") {
  Cohort c = tiny_cohort();
  // Effective risk set {1,2,3,4}: each of the 3 candidates should appear with
  // probability 2/3 when m = 2.
  const int reps = 3000;
  std::map<std::size_t, int> hits;
  for (int r = 0; r < reps; ++r) {
    NccSample ncc = sample_ncc(c, caliper_m1(5.0), 2, 1.0, 1000 + r);
    for (std::size_t j : ncc.matched_sets[0].control_ids) hits[j]++;
  }
  const double p = 2.0 / 3.0;
  const double se = std::sqrt(p * (1 - p) / reps);
  for (std::size_t j : {std::size_t{2}, std::size_t{3}, std::size_t{4}})
    CHECK(std::abs(double(hits[j]) / reps - p) < 3.5 * se);
}

TEST_CASE("case selection is Bernoulli(pi1)") {
  Cohort c = tiny_cohort();
  int selected = 0;
  const int reps = 4000;
  for (int r = 0; r < reps; ++r) selected += sample_ncc(c, caliper_m1(5.0), 1, 0.3, r).s1[1];
  double se = std::sqrt(0.3 * 0.7 / reps);
  CHECK(std::abs(double(selected) / reps - 0.3) < 3.5 * se);
}

TEST_CASE("eligibility marks events and reachable nonevents") {
  Cohort c = tiny_cohort();
  NccSample ncc = sample_ncc(c, caliper_m1(0.5), 1, 1.0, 3);
  Eligibility e = eligibility(c, ncc);
  CHECK(e.mask[1] == 1);  // event
  CHECK(e.mask[2] == 1);  // in the effective risk set
  CHECK(e.mask[3] == 1);
  CHECK(e.mask[0] == 0);  // exited before the event time
  CHECK(e.mask[4] == 0);  // outside the caliper
  CHECK(e.eligible == 3);
  CHECK(e.ineligible == 2);
}

TEST_CASE("selection csv round trip restores the sample") {
  Cohort c = tiny_cohort();
  NccSample ncc = sample_ncc(c, caliper_m1(5.0), 2, 1.0, 17);
  auto dir = std::filesystem::temp_directory_path();
  auto sel = dir / "sel_rt.csv", ms = dir / "ms_rt.csv";
  write_ncc_csv(ncc, sel, ms);
  NccSample back = read_ncc_csv(c, caliper_m1(5.0), 2, 1.0, sel, ms);
  CHECK(back.s == ncc.s);
  CHECK(back.s1 == ncc.s1);
  REQUIRE(back.matched_sets.size() == ncc.matched_sets.size());
  CHECK(back.matched_sets[0].control_ids == ncc.matched_sets[0].control_ids);
  REQUIRE(back.effective_risk_sets.size() == 1);
  CHECK(back.effective_risk_sets[0].members == ncc.effective_risk_sets[0].members);
  std::filesystem::remove(sel);
  std::filesystem::remove(ms);
}

TEST_CASE("matching json round trip") {
  MatchingSpec spec;
  spec.caliper_factors = {{"m1", 0.25}};
  spec.exact_factors = {"m2"};
  MatchingSpec back = matching_from_json(matching_to_json(spec));
  CHECK(back.mode == spec.mode);
  REQUIRE(back.caliper_factors.size() == 1);
  CHECK(back.caliper_factors[0].factor == "m1");
  CHECK(back.caliper_factors[0].tolerance == 0.25);
  CHECK(back.exact_factors == spec.exact_factors);
  MatchingSpec nn = matching_from_json(matching_to_json(nn_m1()));
  CHECK(nn.mode == MatchingMode::nearest_neighbor);
  CHECK(nn.nn_factor == "m1");
}
