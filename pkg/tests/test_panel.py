import io
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from clickpersist.errors import MissingScenarioError, ParseError, ValidationError
from clickpersist.panel import (EXPOSURE_COLUMNS, TRANSITION_COLUMNS, build_transitions, exposure_histories,
                                ingest_exposures, read_transitions_csv, safe_handling_decomposition,
                                transition_rates, write_exposures_csv, write_transitions_csv)

SCEN = ["28", "47", "56", "67", "71"]


def _rows(spec):
    """spec: list of (employee, campaign, clicked, reported, seconds)."""
    rows = []
    for emp, camp, c, r, secs in spec:
        rows.append({
            "employee_id": emp, "campaign_id": str(camp), "scenario_id": SCEN[(camp - 1) % len(SCEN)],
            "sent_at": f"2017-{camp:02d}-01", "clicked": str(c), "reported": str(r),
            "education_seconds": "" if secs is None else str(secs),
            "role": "staff", "job_status": "full_time", "org_unit": "U1", "tenure_days": "400",
        })
    return pd.DataFrame(rows)


TOY = _rows([
    ("B", 1, 0, 1, None), ("B", 2, 1, 0, 25), ("B", 4, 1, 1, 5), ("B", 5, 0, 0, None),
    ("A", 2, 1, 0, 300), ("A", 3, 0, 0, None),
    ("C", 1, 0, 0, None),
])


def test_ingest_sorts_and_indexes():
    panel = ingest_exposures(TOY)
    ex = panel.exposures
    assert list(ex.employee_id) == ["A", "A", "B", "B", "B", "B", "C"]
    assert list(ex.exposure_index) == [1, 2, 1, 2, 3, 4, 1]
    assert panel.n_transitions == 7 - 3


def test_histories_use_strict_past():
    hist = exposure_histories(ingest_exposures(TOY))
    b = hist[hist.employee_id == "B"]
    assert list(b.lag_click) == [0, 0, 1, 1]
    assert list(b.cum_clicks) == [0, 0, 1, 2]
    assert list(b.cum_reports) == [0, 1, 1, 2]
    assert list(b.first_exposure) == [1, 0, 0, 0]
    assert list(b.gap_days) == [0.0, 31.0, 59.0, 30.0]


def test_transitions_pair_adjacent_exposures(codes):
    tr = build_transitions(ingest_exposures(TOY), codes)
    assert len(tr) == 4
    assert list(tr.columns) == list(TRANSITION_COLUMNS)
    b = tr[tr.employee_id == "B"]
    assert list(b.click_t) == [0, 1, 1]
    assert list(b.click_next) == [1, 1, 0]
    assert list(b.consecutive) == [1, 0, 1]
    assert list(b.initial_report) == [1, 1, 1]
    assert tr.sw.isna().all()
    only = build_transitions(ingest_exposures(TOY), codes, consecutive_only=True)
    assert len(only) == 3


def test_transition_similarity_matches_codes(codes):
    from clickpersist.similarity import jaccard, smc
    tr = build_transitions(ingest_exposures(TOY), codes)
    for row in tr.itertuples():
        a, b = codes[row.scenario_id], codes[row.next_scenario_id]
        assert row.sim_jaccard == jaccard(a, b)
        assert row.sim_smc == smc(a, b)
        assert row.sim_jaccard_edu == jaccard(a, b, "education")


def test_missing_scenario(codes):
    bad = TOY.copy()
    bad.loc[0, "scenario_id"] = "999"
    with pytest.raises(MissingScenarioError):
        build_transitions(ingest_exposures(bad), codes)


@pytest.mark.parametrize("column,value", [
    ("clicked", "yes"), ("sent_at", "June 1"), ("campaign_id", "1.5"), ("education_seconds", "-3"),
])
def test_parse_errors_carry_row(column, value):
    bad = TOY.copy()
    bad.loc[2, column] = value
    with pytest.raises(ParseError) as err:
        ingest_exposures(bad)
    assert err.value.row == 3


def test_seconds_without_click_rejected():
    bad = TOY.copy()
    bad.loc[0, "education_seconds"] = "12"
    with pytest.raises(ParseError):
        ingest_exposures(bad)


def test_duplicate_exposure_rejected():
    with pytest.raises(ValidationError):
        ingest_exposures(pd.concat([TOY, TOY.iloc[[0]]]))


def test_missing_column():
    with pytest.raises(ParseError):
        ingest_exposures(TOY.drop(columns=["role"]))


def test_round_trip_is_identical():
    panel = ingest_exposures(TOY)
    text = write_exposures_csv(panel)
    again = ingest_exposures(io.StringIO(text))
    pd.testing.assert_frame_equal(panel.exposures, again.exposures)
    assert write_exposures_csv(again) == text


def test_transitions_csv_round_trip(codes):
    tr = build_transitions(ingest_exposures(TOY), codes)
    back = read_transitions_csv(io.StringIO(write_transitions_csv(tr)))
    assert list(back.columns) == list(tr.columns)
    assert back.click_next.tolist() == tr.click_next.tolist()


def test_rates_undefined_cells_are_nan(codes):
    tr = build_transitions(ingest_exposures(TOY), codes)
    tr = tr[tr.report_t == 0]
    rates = transition_rates(tr).set_index("condition")
    assert np.isnan(rates.loc["report_t=1", "rate"])


def test_empty_panel():
    panel = ingest_exposures(pd.DataFrame(columns=list(EXPOSURE_COLUMNS)))
    assert panel.n_exposures == 0 and panel.n_transitions == 0


@st.composite
def panels(draw):
    n_emp = draw(st.integers(1, 8))
    rows = []
    for e in range(n_emp):
        camps = draw(st.lists(st.integers(1, 12), min_size=1, max_size=6, unique=True))
        for c in camps:
            click = draw(st.integers(0, 1))
            rows.append((f"E{e}", c, click, draw(st.integers(0, 1)), 30 if click else None))
    return _rows(rows)


@settings(max_examples=60, deadline=None)
@given(panels())
def test_transition_identity_property(frame):
    from clickpersist.similarity import published_codes
    panel = ingest_exposures(frame)
    tr = build_transitions(panel, published_codes())
    assert len(tr) == panel.n_exposures - panel.n_employees


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_safe_identity_property(pairs):
    click, report = np.array(pairs).T
    d = safe_handling_decomposition(click, report)
    if d["no_click"]:
        assert d["p_safe"] == d["product"]
    else:
        assert d["p_safe"] == 0 and d["product"] is None


def test_safe_identity_hand_example():
    d = safe_handling_decomposition(np.array([0, 0, 1, 0]), np.array([1, 0, 1, 0]))
    assert d["p_safe"] == Fraction(1, 4)
    assert d["p_report_given_no_click"] == Fraction(1, 3)
