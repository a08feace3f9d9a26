import warnings

import numpy as np
import pandas as pd
import pytest

from clickpersist.errors import ValidationError
from clickpersist.estimators import (KINDS, PROGRESSION_KINDS, EngagementThresholds, ModelSpec, ape_and_jacobian,
                                     ape_jacobian_fd, build_cre_terms, design_frame, engagement_split, estimate,
                                     heterogeneity_share, interaction_suite, progression)


@pytest.fixture(scope="module")
def tr(small_prepared):
    return small_prepared.transitions


@pytest.fixture(scope="module")
def msm_cre(tr):
    return estimate(ModelSpec(kind="msm-cre"), tr)


@pytest.mark.parametrize("kind", ["pooled-probit", "msm-cre", "msm-logit"])
def test_analytic_ape_jacobian_matches_finite_difference(tr, kind):
    spec = ModelSpec(kind=kind)
    res = estimate(spec, tr)
    cre = build_cre_terms(tr) if kind == "msm-cre" else None
    camps = np.unique(tr.next_campaign_id.astype(np.int64))
    cols = list(res.model.params.index)
    X1 = design_frame(tr, spec, cre, {"click_t": 1}, camps).loc[:, cols].to_numpy()
    X0 = design_frame(tr, spec, cre, {"click_t": 0}, camps).loc[:, cols].to_numpy()
    w = tr.sw_trim.to_numpy() if kind.startswith("msm") else None
    ape, jac = ape_and_jacobian(res.model, X1, X0, w)
    assert ape == pytest.approx(res.ape.ape, abs=1e-12)
    fd = ape_jacobian_fd(res.model, X1, X0, w)
    assert np.allclose(jac, fd, rtol=1e-5, atol=1e-8)


def test_ape_block_fields(msm_cre):
    row = msm_cre.ape.get("click_t", "sample")
    assert row.lower < row.ape < row.upper
    assert row.upper - row.ape == pytest.approx(1.959963984540054 * row.se)
    assert "trimmed stabilized weights" in msm_cre.ape.convention
    with pytest.raises(KeyError):
        msm_cre.ape.get("click_t", "nowhere")


def test_unweighted_ape_convention(tr):
    res = estimate(ModelSpec(kind="msm-probit", ape_weighting="unweighted"), tr)
    assert res.ape.convention.endswith("equal weights")


def test_cre_block_columns(msm_cre):
    cols = msm_cre.columns
    assert "initial_click" in cols and "initial_report" not in cols
    assert "n_exposures" in cols and "mean(sim_jaccard)" in cols
    assert any(c.startswith("org_unit[") for c in cols)
    assert any(c.startswith("next_campaign[") for c in cols)


def test_report_outcome_adds_initial_report(tr):
    res = estimate(ModelSpec(outcome="report", kind="cre-probit"), tr)
    assert "initial_report" in res.columns


def test_fe_lpm_has_no_intercept(tr):
    res = estimate(ModelSpec(kind="fe-lpm"), tr)
    assert "const" not in res.columns
    assert res.model.link == "linear"


def test_spec_validation():
    with pytest.raises(ValidationError):
        ModelSpec(kind="ols")
    with pytest.raises(ValidationError):
        ModelSpec(kind="msm-probit", weight_source="none")
    with pytest.raises(ValidationError):
        ModelSpec(treatments=("click_t",), terms=(("click_t", "sim_jaccard"),))
    assert ModelSpec(kind="pooled-probit").weight_source == "none"
    assert ModelSpec(kind="msm-probit").weight_source == "trimmed"


def test_weighted_kind_needs_weights(tr):
    with pytest.raises(ValidationError):
        estimate(ModelSpec(kind="msm-probit"), tr.drop(columns=["sw", "sw_trim"]))


def test_raw_weights_warn_and_note(tr):
    with pytest.warns(RuntimeWarning):
        res = estimate(ModelSpec(kind="msm-probit", weight_source="raw"), tr)
    assert any("untrimmed" in n for n in res.notes)


def test_progression_table(tr):
    table = progression(tr)
    assert list(table.kind) == list(PROGRESSION_KINDS)
    assert list(table.columns) == ["kind", "addresses", "coefficient", "se", "ape", "ape_se", "observations",
                                   "log_pseudolikelihood", "pseudo_r2", "error"]
    assert (table.error == "").all()
    assert (table.observations[1:] == len(tr)).all()
    # singleton employees carry no within variation
    singletons = (tr.groupby("employee_id").size() == 1).sum()
    assert table.observations[0] == len(tr) - singletons


def test_logit_and_probit_agree(tr):
    p = estimate(ModelSpec(kind="msm-probit"), tr).ape.get()
    lg = estimate(ModelSpec(kind="msm-logit"), tr).ape.get()
    assert np.sign(p.ape) == np.sign(lg.ape)
    assert lg.lower <= p.upper and p.lower <= lg.upper


def test_heterogeneity_share():
    assert heterogeneity_share(0.1, 0.04) == pytest.approx(0.6)
    assert set(KINDS) >= set(PROGRESSION_KINDS)


def test_engagement_split_rules():
    frame = pd.DataFrame({
        "employee_id": ["a"] * 7,
        "t": range(1, 8),
        "click_t": [1, 1, 1, 1, 1, 1, 0],
        "education_seconds_t": [5, 15, 20, 290, 295, 300, np.nan],
    })
    frame.loc[frame.index[-1], "education_seconds_t"] = np.nan
    out, keep = engagement_split(frame, EngagementThresholds())
    assert list(out.disengaged_t) == [1, 0, 0, 0, 0, 1, 0]
    assert list(out.engaged_t) == [0, 0, 1, 1, 0, 0, 0]
    assert list(out.engagement_buffer) == [0, 1, 0, 0, 1, 0, 0]
    assert list(keep) == [True, False, True, True, False, True, True]
    assert (out.initial_disengaged == 1).all() and (out.initial_engaged == 0).all()


def test_click_without_time_is_excluded():
    frame = pd.DataFrame({"employee_id": ["a", "a"], "t": [1, 2], "click_t": [1, 0],
                          "education_seconds_t": [np.nan, np.nan]})
    _, keep = engagement_split(frame)
    assert list(keep) == [False, True]


@pytest.mark.parametrize("suite", ["similarity", "design", "cues", "cue-by-education", "engagement"])
def test_suites_run(tr, suite):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = interaction_suite(tr, suite)
    assert res.fits
    apes = res.ape_table()
    assert {"model", "treatment", "at", "ape", "se"} <= set(apes.columns)
    assert np.isfinite(apes.ape).all()
    assert len(res.coefficient_table()) > 0
    if suite == "similarity":
        assert set(res.fits) == {"click", "report", "safe"}
        assert set(apes["at"]) == {"sample", "0", "0.25", "mean", "0.75", "1"}
        assert res.wald["click"]["df"] == 1
    if suite == "cues":
        assert len(res.wald_table()) == 1
    if suite == "engagement":
        s = res.sample
        assert s["estimation_sample"] == s["transitions"] - s["excluded_buffer"] - s["excluded_unclassified"]
        assert res.wald["engagement"]["df"] == 1


def test_collinear_interaction_is_dropped_with_note(tr):
    frame = tr.copy()
    frame["dup"] = frame["sim_jaccard"]
    from clickpersist.estimators import _fit_reporting_collinearity
    spec = ModelSpec(kind="pooled-probit", terms=(("click_t",), ("sim_jaccard",), ("dup",)))
    res, notes = _fit_reporting_collinearity(spec, frame, None)
    assert notes and "omitted for collinearity" in notes[0]
    assert "dup" not in res.model.params.index


@pytest.mark.slow
def test_no_confounding_estimates_agree():
    from clickpersist import dgp
    from clickpersist.pipeline import prepare
    fe = {}
    for T in (12, 40):
        cfg = dgp.DgpConfig(seed=3, n_employees=1500, n_campaigns=T, sigma_alpha=0.0, rho=0.0)
        table = progression(prepare(dgp.simulate_panel(cfg)).transitions).set_index("kind")
        probits = table.loc[["pooled-probit", "cre-probit", "msm-probit", "msm-cre"], "ape"]
        # nothing to adjust for, so the adjustments move the estimate by less than its noise
        assert probits.max() - probits.min() < table.loc["pooled-probit", "ape_se"]
        truth = dgp.oracle_ape(cfg, 20000).ape
        assert abs(probits["pooled-probit"] - truth) < 3 * table.loc["pooled-probit", "ape_se"]
        fe[T] = table.loc["fe-lpm", "coefficient"] - truth
    # the within estimator's downward bias shrinks with panel length
    assert fe[12] < fe[40] < 0
