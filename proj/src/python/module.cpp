#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ncc/harness.hpp"

namespace py = pybind11;
using namespace ncc;

PYBIND11_MODULE(nccipw, m) {
  m.doc() = "nested case-control sampling, inclusion weights and weighted estimators";

  py::class_<ScenarioConfig>(m, "ScenarioConfig")
      .def(py::init<>())
      .def_readwrite("n", &ScenarioConfig::n)
      .def_readwrite("rho_mxa", &ScenarioConfig::rho_mxa)
      .def_readwrite("gamma_mxb", &ScenarioConfig::gamma_mxb)
      .def_readwrite("r2_xb", &ScenarioConfig::r2_xb)
      .def_readwrite("alpha_a", &ScenarioConfig::alpha_a)
      .def_readwrite("alpha_b", &ScenarioConfig::alpha_b)
      .def_readwrite("alpha_m1", &ScenarioConfig::alpha_m1)
      .def_readwrite("alpha_m2", &ScenarioConfig::alpha_m2)
      .def_readwrite("alpha_m1m2", &ScenarioConfig::alpha_m1m2)
      .def_readwrite("alpha_mxa", &ScenarioConfig::alpha_mxa)
      .def_readwrite("weibull_shape", &ScenarioConfig::weibull_shape)
      .def_readwrite("weibull_scale", &ScenarioConfig::weibull_scale)
      .def_readwrite("censor_lo", &ScenarioConfig::censor_lo)
      .def_readwrite("censor_hi", &ScenarioConfig::censor_hi)
      .def_readwrite("m2_active", &ScenarioConfig::m2_active)
      .def_readwrite("seed", &ScenarioConfig::seed)
      .def("validate", &ScenarioConfig::validate);

  py::class_<Subject>(m, "Subject")
      .def_readonly("id", &Subject::id)
      .def_readonly("m1", &Subject::m1)
      .def_readonly("m2", &Subject::m2)
      .def_readonly("xa_raw", &Subject::xa_raw)
      .def_readonly("xa", &Subject::xa)
      .def_readonly("xb", &Subject::xb)
      .def_readonly("entry", &Subject::entry)
      .def_readonly("t_obs", &Subject::t_obs)
      .def_readonly("d", &Subject::d);

  py::class_<Cohort>(m, "Cohort")
      .def_readonly("subjects", &Cohort::subjects)
      .def("__len__", &Cohort::size);

  m.def("generate_cohort",
        [](const ScenarioConfig& c, std::uint64_t seed) { return generate_cohort(c, seed); },
        py::arg("config"), py::arg("seed"));
  m.def("write_cohort_csv", &write_cohort_csv);
  m.def("read_cohort_csv", &read_cohort_csv);

  py::enum_<MatchingMode>(m, "MatchingMode")
      .value("caliper_exact", MatchingMode::caliper_exact)
      .value("nearest_neighbor", MatchingMode::nearest_neighbor);

  py::class_<CaliperFactor>(m, "CaliperFactor")
      .def(py::init([](std::string f, double tol) {
             return CaliperFactor{std::move(f), tol};
           }),
           py::arg("factor"), py::arg("tolerance"))
      .def_readwrite("factor", &CaliperFactor::factor)
      .def_readwrite("tolerance", &CaliperFactor::tolerance);

  py::class_<MatchingSpec>(m, "MatchingSpec")
      .def(py::init<>())
      .def_readwrite("mode", &MatchingSpec::mode)
      .def_readwrite("caliper_factors", &MatchingSpec::caliper_factors)
      .def_readwrite("exact_factors", &MatchingSpec::exact_factors)
      .def_readwrite("nn_factor", &MatchingSpec::nn_factor)
      .def("validate", &MatchingSpec::validate)
      .def("factor_names", &MatchingSpec::factor_names);

  py::class_<MatchedSet>(m, "MatchedSet")
      .def_readonly("case_id", &MatchedSet::case_id)
      .def_readonly("control_ids", &MatchedSet::control_ids);

  py::class_<NccSample>(m, "NccSample")
      .def_property_readonly("s",
                             [](const NccSample& x) {
                               return std::vector<int>(x.s.begin(), x.s.end());
                             })
      .def_property_readonly("s1",
                             [](const NccSample& x) {
                               return std::vector<int>(x.s1.begin(), x.s1.end());
                             })
      .def_readonly("matched_sets", &NccSample::matched_sets)
      .def_readonly("warnings", &NccSample::warnings);

  m.def("sample_ncc", &sample_ncc, py::arg("cohort"), py::arg("matching"), py::arg("m"),
        py::arg("pi1"), py::arg("seed"));

  py::enum_<WeightFamily>(m, "WeightFamily")
      .value("km", WeightFamily::km)
      .value("gam", WeightFamily::gam);

  py::class_<WeightMethodSpec>(m, "WeightMethodSpec")
      .def(py::init<>())
      .def_readwrite("family", &WeightMethodSpec::family)
      .def_readwrite("covariate_set", &WeightMethodSpec::covariate_set)
      .def_readwrite("include_interactions", &WeightMethodSpec::include_interactions)
      .def_readwrite("threshold", &WeightMethodSpec::threshold)
      .def_readwrite("pi1", &WeightMethodSpec::pi1)
      .def_readwrite("label", &WeightMethodSpec::label);

  py::class_<WeightVector>(m, "WeightVector")
      .def_readonly("probs", &WeightVector::probs)
      .def_readonly("weights", &WeightVector::weights)
      .def_property_readonly("sum_weights",
                             [](const WeightVector& w) { return w.diagnostics.sum_weights; })
      .def_property_readonly("capped",
                             [](const WeightVector& w) { return w.diagnostics.capped; });

  m.def("km_inclusion_probabilities", &km_inclusion_probabilities);
  m.def("ht_inclusion_probabilities", &ht_inclusion_probabilities);
  m.def(
      "gam_inclusion_probabilities",
      [](const Cohort& cohort, const NccSample& ncc, const WeightMethodSpec& spec,
         const MatchingSpec& matching) {
        return gam_inclusion_probabilities(cohort, ncc, spec, default_gam_terms(matching, spec))
            .probs;
      },
      py::arg("cohort"), py::arg("ncc"), py::arg("spec"), py::arg("matching"));
  m.def("finalize_weights", &finalize_weights);
  m.def("write_weights_csv", &write_weights_csv);
  m.def("read_weights_csv", &read_weights_csv);

  py::class_<WeightedRecord>(m, "WeightedRecord")
      .def(py::init([](std::size_t id, double t_obs, double entry, int d,
                       std::vector<double> covariates, double weight) {
             return WeightedRecord{id, t_obs, entry, d, std::move(covariates), weight};
           }),
           py::arg("id"), py::arg("t_obs"), py::arg("entry"), py::arg("d"),
           py::arg("covariates"), py::arg("weight") = 1.0);

  m.def(
      "weighted_cox_fit",
      [](const std::vector<WeightedRecord>& records, const std::vector<std::string>& names,
         double tol) { return weighted_cox_fit(records, names, tol).coefficients; },
      py::arg("records"), py::arg("names"), py::arg("tol") = 1e-7);
  m.def("weighted_km_at",
        [](const std::vector<WeightedRecord>& records, double t,
           std::optional<std::pair<std::size_t, double>> condition) {
          return weighted_km(records, condition).at(t);
        },
        py::arg("records"), py::arg("t"), py::arg("condition") = std::nullopt);
  m.def("weighted_ols",
        [](const std::vector<std::vector<double>>& X, const std::vector<double>& y,
           const std::vector<double>& w) { return weighted_ols(X, y, w).coefficients; });

  m.def("preset_names", &preset_names);
  m.def(
      "run_preset",
      [](const std::string& name, int n, int replicates, std::uint64_t seed,
         const std::filesystem::path& out_dir, const std::set<std::string>& formats) {
        ExperimentSpec spec = preset(name);
        if (n > 0) spec.scenario.n = static_cast<std::size_t>(n);
        if (replicates > 0) spec.replicates = replicates;
        if (seed != 0) spec.base_seed = seed;
        auto results = run_experiment(spec);
        auto summary = summarize_bias(results);
        std::vector<std::string> written;
        if (!out_dir.empty())
          for (const auto& p : export_results(results, summary, out_dir, formats))
            written.push_back(p.string());
        py::dict out;
        for (const auto& [method, per_estimand] : summary.cells) {
          py::dict d;
          for (const auto& [e, c] : per_estimand) {
            py::dict cell;
            cell["mean_diff"] = c.mean_diff;
            cell["sd_diff"] = c.sd_diff;
            cell["t_stat"] = c.t_stat;
            cell["n_ok"] = c.n_ok;
            cell["n_failed"] = c.n_failed;
            d[py::str(estimand_name(e))] = cell;
          }
          out[py::str(method)] = d;
        }
        return py::make_tuple(out, written);
      },
      py::arg("name"), py::arg("n") = 0, py::arg("replicates") = 0, py::arg("seed") = 0,
      py::arg("out_dir") = std::filesystem::path(),
      py::arg("formats") = std::set<std::string>{"csv", "json"});
}
