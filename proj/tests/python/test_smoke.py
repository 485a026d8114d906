import math

import nccipw


def make_cohort(n=500, seed=3):
    cfg = nccipw.ScenarioConfig()
    cfg.n = n
    cfg.rho_mxa = 0.2
    cfg.alpha_a = cfg.alpha_b = cfg.alpha_m1 = math.log(2.0)
    return cfg, nccipw.generate_cohort(cfg, seed)


def caliper_matching():
    spec = nccipw.MatchingSpec()
    spec.caliper_factors = [nccipw.CaliperFactor("m1", math.sqrt(3.0) / 5.0)]
    spec.validate()
    return spec


def test_cohort_generation_is_deterministic():
    _, a = make_cohort()
    _, b = make_cohort()
    assert len(a) == 500
    assert [s.t_obs for s in a.subjects] == [s.t_obs for s in b.subjects]
    assert any(s.d == 1 for s in a.subjects)


def test_sampling_and_km_weights():
    _, cohort = make_cohort()
    ncc = nccipw.sample_ncc(cohort, caliper_matching(), 1, 1.0, 17)
    assert len(ncc.matched_sets) == sum(s.d for s in cohort.subjects)

    spec = nccipw.WeightMethodSpec()
    spec.family = nccipw.WeightFamily.km
    spec.covariate_set = ["m1"]
    probs = nccipw.km_inclusion_probabilities(cohort, ncc, spec)
    wv = nccipw.finalize_weights(probs, ncc, spec)
    assert all(p == 1.0 for p, s in zip(probs, cohort.subjects) if s.d == 1)
    assert wv.sum_weights > 0.0
    selected = [i for i, w in enumerate(wv.weights) if w > 0.0]
    assert all(ncc.s[i] == 1 for i in selected)


def test_weighted_estimators_against_hand_values():
    # Events at t=1,2 with x=(-1,0,-1): alpha-hat = ln(sqrt(2)).
    records = [
        nccipw.WeightedRecord(0, 1.0, 0.0, 1, [-1.0], 1.0),
        nccipw.WeightedRecord(1, 2.0, 0.0, 1, [0.0], 1.0),
        nccipw.WeightedRecord(2, 3.0, 0.0, 0, [-1.0], 1.0),
    ]
    coef = nccipw.weighted_cox_fit(records, ["x"], tol=1e-12)
    assert abs(coef[0] - math.log(math.sqrt(2.0))) < 1e-8

    km_records = [
        nccipw.WeightedRecord(0, 1.0, 0.0, 1, [], 2.0),
        nccipw.WeightedRecord(1, 2.0, 0.0, 0, [], 1.0),
        nccipw.WeightedRecord(2, 3.0, 0.0, 0, [], 1.0),
    ]
    assert nccipw.weighted_km_at(km_records, 1.5) == 0.5

    X = [[1.0, 0.0], [1.0, 1.0], [1.0, 1.0]]
    coef = nccipw.weighted_ols(X, [0.0, 0.0, 3.0], [1.0, 1.0, 2.0])
    assert abs(coef[0]) < 1e-10 and abs(coef[1] - 2.0) < 1e-10


def test_run_preset_summary(tmp_path):
    summary, written = nccipw.run_preset(
        "fig3_caliper", n=300, replicates=2, seed=9, out_dir=str(tmp_path),
        formats={"csv", "json"},
    )
    assert "km" in summary and "gam" in summary
    assert summary["km"]["log_hr_xb"]["n_ok"] + summary["km"]["log_hr_xb"]["n_failed"] == 2
    assert (tmp_path / "replicates.csv").exists()
    assert (tmp_path / "summary.json").exists()
    assert len(written) == 3
