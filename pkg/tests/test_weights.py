import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clickpersist import dgp
from clickpersist.errors import PositivityError, ValidationError
from clickpersist.panel import exposure_histories
from clickpersist.weights import (DENOMINATOR_HISTORY, TreatmentModels, fit_treatment_models, history_balance,
                                  percentile, stabilized_weights, treatment_design, trim_weights,
                                  weight_diagnostics, weight_histogram, weights_from_probabilities)


def test_single_exposure_ratio():
    ws = weights_from_probabilities(["a"], [1], [1], [0.5], [0.25])
    assert ws.sw[0] == 2.0


def test_running_product_by_hand():
    emp = ["a", "a", "a", "b", "b"]
    t = [1, 2, 3, 1, 2]
    a = [1, 0, 1, 0, 1]
    pn = [0.5, 0.4, 0.3, 0.2, 0.6]
    pd_ = [0.25, 0.2, 0.6, 0.5, 0.3]
    ws = weights_from_probabilities(emp, t, a, pn, pd_)
    r = [0.5 / 0.25, 0.6 / 0.8, 0.3 / 0.6, 0.8 / 0.5, 0.6 / 0.3]
    expect = [r[0], r[0] * r[1], r[0] * r[1] * r[2], r[3], r[3] * r[4]]
    assert np.allclose(ws.sw, expect, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0.01, 0.99)), min_size=1, max_size=30))
def test_equal_models_give_unit_weights(rows):
    a = [r[0] for r in rows]
    p = [r[1] for r in rows]
    emp = [i // 4 for i in range(len(rows))]
    t = [i % 4 + 1 for i in range(len(rows))]
    ws = weights_from_probabilities(emp, t, a, p, p)
    assert np.all(ws.sw == 1.0)


def test_positivity_floor():
    with pytest.raises(PositivityError) as err:
        weights_from_probabilities(["x", "x"], [1, 2], [1, 1], [0.5, 0.5], [0.5, 1e-9])
    assert err.value.exposure_index == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 50.0), min_size=2, max_size=200), st.floats(0, 20), st.floats(80, 100))
def test_trimming_bounds_and_idempotence(values, lo, hi):
    n = len(values)
    ws = weights_from_probabilities(np.arange(n), np.ones(n), np.ones(n), values, np.ones(n) * 0.999)
    once = trim_weights(ws, lo, hi)
    twice = trim_weights(once, lo, hi)
    assert np.array_equal(once.sw_trim, twice.sw_trim)
    assert once.lower <= once.sw_trim.min() and once.sw_trim.max() <= once.upper
    assert np.array_equal(once.sw, ws.sw)


def test_percentile_linear_interpolation():
    assert percentile([1.0, 2.0, 3.0, 4.0], 50) == 2.5
    assert percentile([0.0, 10.0], 1) == pytest.approx(0.1)


def test_trim_rejects_bad_percentiles(small_prepared):
    with pytest.raises(ValidationError):
        trim_weights(small_prepared.weights, 60, 40)


def test_nested_models_loglik(small_prepared):
    m = small_prepared.models
    assert set(m.numerator_columns) <= set(m.denominator_columns)
    assert m.denominator.loglik >= m.numerator.loglik


def test_numerator_has_no_history_by_default(small_sim):
    hist = exposure_histories(small_sim.panel)
    cols = treatment_design(hist, "numerator").columns
    assert not set(cols) & set(DENOMINATOR_HISTORY)
    den = treatment_design(hist, "denominator").columns
    assert set(DENOMINATOR_HISTORY) <= set(den)


def test_numerator_history_option(small_sim):
    hist = exposure_histories(small_sim.panel)
    m = fit_treatment_models(hist, ("lag_click",))
    assert "lag_click" in m.numerator_columns
    with pytest.raises(ValidationError):
        fit_treatment_models(hist, ("not_a_history",))


def test_identical_models_through_fitted_path(small_sim):
    hist = exposure_histories(small_sim.panel)
    m = fit_treatment_models(hist)
    same = TreatmentModels(m.denominator, m.denominator, m.denominator_columns, m.denominator_columns,
                           numerator_history=DENOMINATOR_HISTORY)
    ws = stabilized_weights(hist, same)
    assert np.all(ws.sw == 1.0)


def test_probabilities_in_open_interval(small_prepared):
    f = small_prepared.weights.frame
    assert ((f.p_num > 0) & (f.p_num < 1) & (f.p_den > 0) & (f.p_den < 1)).all()


def test_weights_cover_every_exposure(small_sim, small_prepared):
    assert len(small_prepared.weights) == small_sim.panel.n_exposures
    assert small_prepared.transitions.sw.notna().all()


def test_diagnostics_layout(small_prepared):
    d = weight_diagnostics(small_prepared.weights)
    assert list(d.columns) == ["weight", "Mean", "SD", "P1", "P5", "P50", "P95", "P99", "Min", "Max", "N",
                               "capped_low", "capped_high"]
    assert list(d.weight) == ["sw", "sw_trim"]
    h = weight_histogram(small_prepared.weights, bins=20)
    assert list(h.columns) == ["bin_left", "bin_right", "count"]
    assert h["count"].sum() == len(small_prepared.weights)


def test_trimming_caps_about_two_percent(desk_prepared):
    ws = desk_prepared.weights
    share = (ws.capped_low + ws.capped_high) / len(ws)
    assert 0.015 <= share <= 0.025


def test_no_confounding_gives_near_unit_weights():
    # no feedback, no state dependence, no heterogeneity: histories carry no information
    cfg = dgp.DgpConfig(n_employees=1500, sigma_alpha=0.0, psi=0.0, rho=0.0, seed=2)
    hist = exposure_histories(dgp.simulate_panel(cfg))
    m = fit_treatment_models(hist)
    ws = stabilized_weights(hist, m)
    diff = np.abs(ws.frame.p_num - ws.frame.p_den)
    # only sampling noise in the history coefficients separates the two models
    assert np.median(diff) < 0.01
    assert abs(ws.sw.mean() - 1) < 0.02


def test_balance_improves_after_weighting(desk_prepared):
    bal = history_balance(desk_prepared.histories, desk_prepared.weights)
    cum = bal.set_index("term").loc["cum_clicks"]
    assert abs(cum.weighted) < abs(cum.unweighted)
