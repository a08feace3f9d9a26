import io

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from clickpersist.errors import ParseError, ValidationError
from clickpersist.similarity import (CODE_COLUMNS, EMPTY_UNION_JACCARD, ScenarioCode, empty_union, jaccard,
                                     jaccard_vectors, pair_similarity, read_scenario_codes, similarity_matrix,
                                     smc, smc_vectors, top_pairs, write_scenario_codes)

from conftest import FIXTURES

binary = st.lists(st.integers(0, 1), min_size=5, max_size=5)


def _published(name):
    return pd.read_csv(FIXTURES / f"{name}.csv", index_col=0, dtype={"scenario_id": str})


@pytest.mark.parametrize("metric,layer,fixture", [
    ("jaccard", "cue", "jaccard_cues"),
    ("jaccard", "education", "jaccard_education"),
    ("smc", "cue", "smc_cues"),
    ("smc", "education", "smc_education"),
])
def test_published_matrices(codes, metric, layer, fixture):
    m = similarity_matrix(codes, metric, layer).to_frame()
    pub = _published(fixture)
    pub.index = pub.index.astype(str)
    assert list(pub.columns) == list(m.columns)
    assert np.abs(m.loc[pub.index, pub.columns].to_numpy() - pub.to_numpy()).max() <= 0.005


def test_seventeen_codes(codes):
    assert len(codes) == 17
    assert list(codes)[:3] == ["28", "29", "30"]


def test_hand_computed_pair():
    a = ScenarioCode("a", (1, 1, 0, 0, 0), (0, 0), (0, 0, 0, 0, 0))
    b = ScenarioCode("b", (1, 0, 1, 0, 0), (0, 0), (0, 0, 0, 0, 0))
    assert jaccard(a, b) == pytest.approx(1 / 3)
    assert smc(a, b) == pytest.approx(3 / 5)


def test_empty_union_is_one():
    a = ScenarioCode("a", (0,) * 5, (0, 0), (0,) * 5)
    assert empty_union(a, a, "education")
    assert jaccard(a, a, "education") == EMPTY_UNION_JACCARD == 1.0
    assert smc(a, a, "education") == 1.0


@given(binary, binary)
def test_similarity_bounds_and_symmetry(a, b):
    j, s = jaccard_vectors(a, b), smc_vectors(a, b)
    assert 0.0 <= j <= 1.0 and 0.0 <= s <= 1.0
    assert j == jaccard_vectors(b, a) and s == smc_vectors(b, a)
    # joint absences only ever raise agreement
    assert s >= j - 1e-12


@given(binary)
def test_self_similarity_is_one(a):
    assert jaccard_vectors(a, a) == 1.0
    assert smc_vectors(a, a) == 1.0


def test_matrix_symmetric_unit_diagonal(codes):
    for metric in ("jaccard", "smc"):
        for layer in ("cue", "education"):
            v = similarity_matrix(codes, metric, layer).values
            assert np.array_equal(v, v.T)
            assert np.all(np.diag(v) == 1.0)


def test_top_pair_and_tie_break(codes):
    m = similarity_matrix(codes, "jaccard", "cue")
    top = top_pairs(m, 5, codes)
    first = top.iloc[0]
    assert (first.scenario_s, first.scenario_t) == ("56", "67")
    assert first.similarity == 1.0 and first.shared == 4 and first.union == 4
    # ties on similarity break on shared count, then ids
    keys = list(zip(-top.similarity.round(12), -top.shared))
    assert keys == sorted(keys)


def test_pair_similarity_matches_matrix(codes):
    m = similarity_matrix(codes, "smc", "education")
    assert pair_similarity(codes, "47", "71", "smc", "education") == m.get("47", "71")


def test_codes_round_trip(tmp_path, codes):
    path = tmp_path / "codes.csv"
    write_scenario_codes(codes.values(), path)
    assert read_scenario_codes(path) == codes


def test_codes_header_lines_skipped(codes):
    text = "# tool: x\n# seed: 0\n" + ",".join(CODE_COLUMNS) + "\n28,1,0,0,0,0,0,0,0,0,0,0,0\n"
    got = read_scenario_codes(io.StringIO(text))
    assert list(got) == ["28"]


def test_bad_code_value_reports_row():
    text = ",".join(CODE_COLUMNS) + "\n1,0,0,0,0,0,0,0,0,0,0,0,0\n2,0,2,0,0,0,0,0,0,0,0,0,0\n"
    with pytest.raises(ParseError) as err:
        read_scenario_codes(io.StringIO(text))
    assert err.value.row == 2


def test_duplicate_code_rejected():
    line = "1,0,0,0,0,0,0,0,0,0,0,0,0\n"
    with pytest.raises(ValidationError):
        read_scenario_codes(io.StringIO(",".join(CODE_COLUMNS) + "\n" + line + line))


def test_unknown_metric(codes):
    with pytest.raises(ValueError):
        similarity_matrix(codes, "cosine")
