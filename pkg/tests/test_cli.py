import json

import numpy as np
import pandas as pd
import pytest

from clickpersist import cli, glm
from clickpersist.reporting import open_text

from conftest import FIXTURES

RUNS = [
    ["ingest"],
    ["weights"],
    ["estimate", "--kind", "msm-cre"],
    ["estimate", "--kind", "msm-probit", "--link", "logit", "--format", "json"],
    ["progression"],
    ["suite", "--suite", "similarity"],
    ["diagnose"],
]


@pytest.fixture(scope="module")
def panel_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert cli.main(["simulate", "--n-employees", "250", "--replications", "10000", "--seed", "4",
                     "--out-dir", str(out)]) == 0
    return out / "panel.csv"


def _run(argv, out):
    code = cli.main(argv + ["--out-dir", str(out)])
    return code, {p.name: p.read_bytes() for p in sorted(out.iterdir())}


@pytest.mark.parametrize("argv", RUNS, ids=lambda a: "-".join(a[:3]))
def test_outputs_identical_across_runs_and_threads(argv, panel_csv, tmp_path, monkeypatch, capsys):
    # small blocks so the threaded path really splits the work
    monkeypatch.setattr(glm, "BLOCK_ROWS", 257)
    full = argv + ["--panel", str(panel_csv)]
    monkeypatch.setenv("CLICKPERSIST_THREADS", "1")
    code1, one = _run(full, tmp_path / "a")
    monkeypatch.setenv("CLICKPERSIST_THREADS", "4")
    code2, four = _run(full, tmp_path / "b")
    code3, again = _run(full, tmp_path / "c")
    assert code1 == code2 == code3 == 0
    assert one and one == four == again
    printed = capsys.readouterr().out.split()
    assert len(printed) == 3 * len(one)


def test_simulate_is_reproducible(tmp_path):
    argv = ["simulate", "--n-employees", "120", "--replications", "10000", "--seed", "2"]
    _, a = _run(argv, tmp_path / "a")
    _, b = _run(argv, tmp_path / "b")
    assert a == b
    truth = json.loads(a["truth.json"])
    assert truth["schema_version"] == 1
    assert truth["config"]["dgp"]["n_employees"] == 120
    assert truth["config_echo"]["seed"] == 2


def test_csv_header_block(panel_csv, tmp_path):
    cli.main(["estimate", "--panel", str(panel_csv), "--kind", "pooled-probit", "--out-dir", str(tmp_path)])
    lines = (tmp_path / "estimate_ape.csv").read_text().splitlines()
    assert lines[0] == "# tool: clickpersist 0.1.0"
    assert lines[1] == "# command: estimate"
    assert lines[2].startswith("# config_hash: ") and len(lines[2].split()[-1]) == 16
    assert lines[3] == "# seed: 0"
    assert lines[4].startswith("# config: {")
    table = pd.read_csv(open_text(tmp_path / "estimate_ape.csv"))
    assert list(table.columns[:4]) == ["treatment", "at", "ape", "se"]
    payload = json.loads((tmp_path / "estimate.json").read_text())
    assert payload["schema_version"] == 1 and payload["command"] == "estimate"
    assert payload["config_hash"] == lines[2].split()[-1]


def test_config_hash_tracks_options(panel_csv, tmp_path):
    cli.main(["weights", "--panel", str(panel_csv), "--out-dir", str(tmp_path / "a")])
    cli.main(["weights", "--panel", str(panel_csv), "--trim", "5", "95", "--out-dir", str(tmp_path / "b")])
    ha = json.loads((tmp_path / "a" / "weights.json").read_text())["config_hash"]
    hb = json.loads((tmp_path / "b" / "weights.json").read_text())["config_hash"]
    assert ha != hb


def test_similarity_matches_published(tmp_path):
    assert cli.main(["similarity", "--metric", "jaccard", "--layer", "cues", "--top", "3",
                     "--out-dir", str(tmp_path)]) == 0
    got = pd.read_csv(open_text(tmp_path / "similarity_jaccard_cue.csv"), index_col=0)
    pub = pd.read_csv(FIXTURES / "jaccard_cues.csv", index_col=0)
    assert np.abs(got.to_numpy() - pub.to_numpy()).max() <= 0.005
    top = pd.read_csv(open_text(tmp_path / "top_pairs_jaccard_cue.csv"), dtype={"scenario_s": str, "scenario_t": str})
    assert (top.scenario_s[0], top.scenario_t[0]) == ("56", "67")


def test_missing_input_exits_one(tmp_path, capsys):
    code = cli.main(["ingest", "--panel", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path / "o")])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "FileNotFoundError"


def test_parse_error_reports_row(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("employee_id,campaign_id,scenario_id,sent_at,clicked,reported,education_seconds,role,"
                   "job_status,org_unit,tenure_days\nA,1,28,2017-01-01,maybe,0,,staff,full_time,U1,10\n")
    assert cli.main(["ingest", "--panel", str(bad), "--out-dir", str(tmp_path / "o")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ParseError" and err["row"] == 1


@pytest.mark.parametrize("argv", [
    ["estimate", "--kind", "cre-probit", "--link", "logit"],
    ["weights", "--trim", "90", "10"],
    ["estimate", "--kind", "nonsense"],
])
def test_usage_errors_exit_two(argv, panel_csv, tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv + ["--panel", str(panel_csv), "--out-dir", str(tmp_path)])
    assert exc.value.code == 2


def test_simulate_needs_enough_replications(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate", "--replications", "10", "--out-dir", str(tmp_path)])
    assert exc.value.code == 2
