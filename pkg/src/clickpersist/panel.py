"""Exposure-log ingestion and transition construction.

An *exposure* is one campaign email delivered to one employee.  Exposures
are ordered within employee by ``(sent_at, campaign_id)`` and every adjacent
pair forms a *transition* ``(t, t+1)``: treatment is the click at ``t``,
outcomes are read from ``t+1``, and the history block is computed from
exposures strictly before ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import MissingScenarioError, ParseError, ValidationError
from .reporting import open_text
from .similarity import CODE_COLUMNS, ScenarioCode

EXPOSURE_COLUMNS = (
    "employee_id",
    "campaign_id",
    "scenario_id",
    "sent_at",
    "clicked",
    "reported",
    "education_seconds",
    "role",
    "job_status",
    "org_unit",
    "tenure_days",
)

HISTORY_COLUMNS = (
    "lag_click",
    "lag_report",
    "cum_clicks",
    "cum_reports",
    "exposure_order",
    "gap_days",
    "first_exposure",
)

FEATURE_COLUMNS = CODE_COLUMNS[1:]

# canonical column order of the transitions CSV
TRANSITION_COLUMNS = (
    ("employee_id", "t", "campaign_id", "scenario_id", "next_campaign_id", "next_scenario_id",
     "sent_at", "next_sent_at", "click_t", "report_t", "safe_t", "education_seconds_t",
     "click_next", "report_next", "safe_next")
    + HISTORY_COLUMNS
    + ("days_to_next", "consecutive", "n_exposures", "initial_click", "initial_report",
       "role", "job_status", "org_unit", "tenure_days", "tenure_missing")
    + FEATURE_COLUMNS
    + tuple(f"next_{c}" for c in FEATURE_COLUMNS)
    + ("sim_jaccard", "sim_smc", "sim_jaccard_edu", "sw", "sw_trim")
)


@dataclass(frozen=True)
class PanelDataset:
    """Exposures sorted by employee and send order, with 1-based ``exposure_index``."""

    exposures: pd.DataFrame = field(repr=False)

    @property
    def n_exposures(self) -> int:
        return len(self.exposures)

    @property
    def n_employees(self) -> int:
        return int(self.exposures["employee_id"].nunique())

    @property
    def n_transitions(self) -> int:
        return self.n_exposures - self.n_employees

    def exposure_counts(self) -> pd.Series:
        return self.exposures.groupby("employee_id", sort=False).size()

    def summary(self) -> dict:
        counts = self.exposure_counts()
        return {
            "exposures": self.n_exposures,
            "employees": self.n_employees,
            "transitions": self.n_transitions,
            "campaigns": int(self.exposures["campaign_id"].nunique()),
            "mean_exposures_per_employee": float(counts.mean()) if len(counts) else float("nan"),
            "median_exposures_per_employee": float(counts.median()) if len(counts) else float("nan"),
            "click_rate": float(self.exposures["clicked"].mean()) if len(counts) else float("nan"),
            "report_rate": float(self.exposures["reported"].mean()) if len(counts) else float("nan"),
        }


def _bad_row(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0]) + 1


def _parse_binary(raw: pd.Series, name: str) -> np.ndarray:
    text = raw.astype(str).str.strip()
    ok = text.isin(["0", "1", "0.0", "1.0"])
    if not ok.all():
        row = _bad_row(~ok.to_numpy())
        raise ParseError(f"{name} must be 0 or 1, got {raw.iloc[row - 1]!r}", row=row)
    return text.str[0].astype(int).to_numpy()


def _parse_optional_float(raw: pd.Series, name: str, nonnegative: bool = True) -> np.ndarray:
    text = raw.astype(str).str.strip()
    blank = text.isin(["", "nan", "NaN", "NA", "None"])
    out = np.full(len(text), np.nan)
    vals = pd.to_numeric(text[~blank], errors="coerce")
    bad = np.zeros(len(text), dtype=bool)
    bad[np.flatnonzero(~blank.to_numpy())] = vals.isna().to_numpy() | ~np.isfinite(vals.to_numpy())
    if nonnegative:
        neg = np.zeros(len(text), dtype=bool)
        neg[np.flatnonzero(~blank.to_numpy())] = vals.to_numpy() < 0
        bad |= neg
    if bad.any():
        row = _bad_row(bad)
        raise ParseError(f"{name} must be a nonnegative number or blank, got {raw.iloc[row - 1]!r}", row=row)
    out[~blank.to_numpy()] = vals.to_numpy(dtype=float)
    return out


def _as_frame(rows) -> pd.DataFrame:
    if isinstance(rows, pd.DataFrame):
        return rows.copy()
    if isinstance(rows, (str, Path)) or hasattr(rows, "read"):
        return pd.read_csv(open_text(rows), dtype=str, keep_default_na=False)
    return pd.DataFrame(list(rows))


def ingest_exposures(rows) -> PanelDataset:
    """Parse and validate exposure rows into a :class:`PanelDataset`.

    ``rows`` may be a DataFrame, a CSV path or buffer, or an iterable of
    mappings with the columns in ``EXPOSURE_COLUMNS``.  Row numbers in
    errors count data rows from 1 (header excluded).
    """
    raw = _as_frame(rows)
    missing = [c for c in EXPOSURE_COLUMNS if c not in raw.columns]
    if missing:
        raise ParseError(f"missing columns {missing}")
    raw = raw.reset_index(drop=True)
    n = len(raw)
    if n == 0:
        return PanelDataset(pd.DataFrame({c: [] for c in EXPOSURE_COLUMNS + ("exposure_index",)}))

    emp = raw["employee_id"].astype(str).str.strip()
    if (emp == "").any() or raw["employee_id"].isna().any():
        raise ParseError("employee_id is empty", row=_bad_row((emp == "").to_numpy()))
    camp_text = raw["campaign_id"].astype(str).str.strip()
    if (camp_text == "").any():
        raise ParseError("campaign_id is empty", row=_bad_row((camp_text == "").to_numpy()))
    camp = pd.to_numeric(camp_text, errors="coerce")
    bad = camp.isna().to_numpy() | (camp.to_numpy() % 1 != 0)
    if bad.any():
        row = _bad_row(bad)
        raise ParseError(f"campaign_id must be an integer index, got {camp_text.iloc[row - 1]!r}", row=row)
    scen = raw["scenario_id"].astype(str).str.strip()
    if (scen == "").any():
        raise ParseError("scenario_id is empty", row=_bad_row((scen == "").to_numpy()))
    sent = pd.to_datetime(raw["sent_at"].astype(str).str.strip(), format="ISO8601", errors="coerce")
    if sent.isna().any():
        row = _bad_row(sent.isna().to_numpy())
        raise ParseError(f"sent_at is not an ISO-8601 date: {raw['sent_at'].iloc[row - 1]!r}", row=row)
    clicked = _parse_binary(raw["clicked"], "clicked")
    reported = _parse_binary(raw["reported"], "reported")
    edu = _parse_optional_float(raw["education_seconds"], "education_seconds")
    bad = ~np.isnan(edu) & (clicked == 0)
    if bad.any():
        raise ParseError("education_seconds present without a click", row=_bad_row(bad))
    tenure = _parse_optional_float(raw["tenure_days"], "tenure_days")

    frame = pd.DataFrame({
        "employee_id": emp.to_numpy(),
        "campaign_id": camp.astype(np.int64).to_numpy(),
        "scenario_id": scen.to_numpy(),
        "sent_at": sent.dt.normalize().to_numpy(),
        "clicked": clicked,
        "reported": reported,
        "education_seconds": edu,
        "role": raw["role"].astype(str).str.strip().to_numpy(),
        "job_status": raw["job_status"].astype(str).str.strip().to_numpy(),
        "org_unit": raw["org_unit"].astype(str).str.strip().to_numpy(),
        "tenure_days": tenure,
    })
    dup = frame.duplicated(["employee_id", "campaign_id"], keep="first").to_numpy()
    if dup.any():
        row = _bad_row(dup)
        raise ValidationError(
            f"row {row}: duplicate exposure for employee {frame['employee_id'].iloc[row - 1]!r} "
            f"in campaign {frame['campaign_id'].iloc[row - 1]}"
        )
    frame = frame.sort_values(["employee_id", "sent_at", "campaign_id"], kind="mergesort").reset_index(drop=True)
    frame["exposure_index"] = frame.groupby("employee_id", sort=False).cumcount().to_numpy() + 1
    return PanelDataset(frame)


def write_exposures_csv(panel: PanelDataset, path_or_buffer=None) -> str | None:
    """Emit the canonical exposure CSV (input format, sorted)."""
    out = panel.exposures.loc[:, list(EXPOSURE_COLUMNS)].copy()
    out["sent_at"] = pd.to_datetime(out["sent_at"]).dt.strftime("%Y-%m-%d")
    text = out.to_csv(index=False, lineterminator="\n", na_rep="")
    if path_or_buffer is None:
        return text
    if isinstance(path_or_buffer, (str, Path)):
        Path(path_or_buffer).write_text(text)
    else:
        path_or_buffer.write(text)
    return None


def _feature_table(scenario_ids: pd.Series, codes: dict[str, ScenarioCode]) -> np.ndarray:
    uniq = pd.unique(scenario_ids)
    for sid in uniq:
        if sid not in codes:
            raise MissingScenarioError(sid)
    lookup = {sid: codes[sid].cues + codes[sid].formats + codes[sid].education for sid in uniq}
    return np.array([lookup[s] for s in scenario_ids], dtype=np.int64).reshape(len(scenario_ids), len(FEATURE_COLUMNS))


def exposure_histories(panel: PanelDataset) -> pd.DataFrame:
    """Every exposure with its pre-treatment history and baseline covariates.

    This is the frame the treatment models are fitted on: one row per
    exposure, including each employee's last one.
    """
    ex = panel.exposures
    out = ex.loc[:, ["employee_id", "exposure_index", "campaign_id", "scenario_id", "sent_at",
                     "clicked", "reported", "education_seconds"]].copy()
    out = out.rename(columns={"exposure_index": "t", "clicked": "click_t", "reported": "report_t",
                              "education_seconds": "education_seconds_t"})
    g = out.groupby("employee_id", sort=False)
    first = out["t"].to_numpy() == 1
    out["safe_t"] = ((out["report_t"] == 1) & (out["click_t"] == 0)).astype(int)
    out["lag_click"] = g["click_t"].shift(1).fillna(0).astype(int)
    out["lag_report"] = g["report_t"].shift(1).fillna(0).astype(int)
    out["cum_clicks"] = (g["click_t"].cumsum() - out["click_t"]).astype(int)
    out["cum_reports"] = (g["report_t"].cumsum() - out["report_t"]).astype(int)
    out["exposure_order"] = out["t"].astype(int)
    gap = (out["sent_at"] - g["sent_at"].shift(1)).dt.days
    out["gap_days"] = gap.fillna(0).astype(float)
    out["first_exposure"] = first.astype(int)

    n_exp = g["t"].transform("size")
    out["n_exposures"] = n_exp.astype(int)
    firsts = ex.loc[first, ["employee_id", "clicked", "reported", "role", "job_status", "org_unit", "tenure_days"]]
    firsts = firsts.set_index("employee_id")
    emp = out["employee_id"]
    out["initial_click"] = emp.map(firsts["clicked"]).astype(int).to_numpy()
    out["initial_report"] = emp.map(firsts["reported"]).astype(int).to_numpy()
    for c in ("role", "job_status", "org_unit"):
        out[c] = emp.map(firsts[c]).to_numpy()
    tenure = emp.map(firsts["tenure_days"]).to_numpy(dtype=float)
    out["tenure_missing"] = np.isnan(tenure).astype(int)
    out["tenure_days"] = tenure
    out["has_next"] = (out["t"] < out["n_exposures"]).astype(int)
    return out


def build_transitions(panel: PanelDataset, scenario_codes: dict[str, ScenarioCode],
                      consecutive_only: bool = False) -> pd.DataFrame:
    """One row per adjacent exposure pair, in employee then exposure order.

    Histories use exposures before ``t`` only; ``*_next`` outcomes come from
    ``t+1``.  Missing scenario codes raise :class:`MissingScenarioError`.
    ``consecutive_only`` keeps transitions whose next exposure is in the
    immediately following campaign.
    """
    hist = exposure_histories(panel)
    feats = _feature_table(hist["scenario_id"], scenario_codes)
    for j, c in enumerate(FEATURE_COLUMNS):
        hist[c] = feats[:, j]
    g = hist.groupby("employee_id", sort=False)
    nxt = {
        "next_campaign_id": g["campaign_id"].shift(-1),
        "next_scenario_id": g["scenario_id"].shift(-1),
        "next_sent_at": g["sent_at"].shift(-1),
        "click_next": g["click_t"].shift(-1),
        "report_next": g["report_t"].shift(-1),
        "safe_next": g["safe_t"].shift(-1),
    }
    for c in FEATURE_COLUMNS:
        nxt[f"next_{c}"] = g[c].shift(-1)
    keep = hist["has_next"].to_numpy() == 1
    tr = hist.loc[keep].copy()
    for k, v in nxt.items():
        tr[k] = v.loc[keep].to_numpy()
    for k in ("next_campaign_id", "click_next", "report_next", "safe_next") + tuple(f"next_{c}" for c in FEATURE_COLUMNS):
        tr[k] = tr[k].astype(np.int64)
    tr["days_to_next"] = (tr["next_sent_at"] - tr["sent_at"]).dt.days.astype(float)
    tr["consecutive"] = (tr["next_campaign_id"] == tr["campaign_id"] + 1).astype(int)

    cue_now = tr[list(FEATURE_COLUMNS[:5])].to_numpy()
    cue_next = tr[[f"next_{c}" for c in FEATURE_COLUMNS[:5]]].to_numpy()
    edu_now = tr[list(FEATURE_COLUMNS[7:])].to_numpy()
    edu_next = tr[[f"next_{c}" for c in FEATURE_COLUMNS[7:]]].to_numpy()
    tr["sim_jaccard"] = _pairwise(cue_now, cue_next, "jaccard")
    tr["sim_smc"] = _pairwise(cue_now, cue_next, "smc")
    tr["sim_jaccard_edu"] = _pairwise(edu_now, edu_next, "jaccard")
    tr["sw"] = np.nan
    tr["sw_trim"] = np.nan
    if consecutive_only:
        tr = tr.loc[tr["consecutive"] == 1]
    return tr.loc[:, list(TRANSITION_COLUMNS)].reset_index(drop=True)


def _pairwise(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    # vectorized over rows; identical to jaccard_vectors / smc_vectors
    if metric == "smc":
        return (a == b).mean(axis=1)
    shared = (a & b).sum(axis=1)
    union = (a | b).sum(axis=1)
    out = np.ones(len(a))
    nz = union > 0
    out[nz] = shared[nz] / union[nz]
    return out


def write_transitions_csv(transitions: pd.DataFrame, path_or_buffer=None) -> str | None:
    out = transitions.loc[:, list(TRANSITION_COLUMNS)].copy()
    for c in ("sent_at", "next_sent_at"):
        out[c] = pd.to_datetime(out[c]).dt.strftime("%Y-%m-%d")
    text = out.to_csv(index=False, lineterminator="\n", na_rep="", float_format="%.10g")
    if path_or_buffer is None:
        return text
    if isinstance(path_or_buffer, (str, Path)):
        Path(path_or_buffer).write_text(text)
    else:
        path_or_buffer.write(text)
    return None


def transition_rates(transitions: pd.DataFrame) -> pd.DataFrame:
    """Raw conditional frequencies of next-exposure clicking and reporting.

    Empty conditioning cells give ``NaN`` (undefined), never 0.
    """
    if len(transitions) == 0:
        raise ValidationError("no transitions to tabulate")
    rows = []
    for outcome, cond in (("click", "click"), ("report", "report")):
        for level in (1, 0):
            mask = transitions[f"{cond}_t"].to_numpy() == level
            n = int(mask.sum())
            hits = int(transitions[f"{outcome}_next"].to_numpy()[mask].sum())
            rows.append({
                "outcome": f"{outcome}_next",
                "condition": f"{cond}_t={level}",
                "n": n,
                "count": hits,
                "rate": hits / n if n else float("nan"),
            })
    return pd.DataFrame(rows)


def safe_handling_decomposition(click: np.ndarray, report: np.ndarray) -> dict:
    """Tabulate Pr(safe) and its factorization Pr(report | no click) * Pr(no click).

    All quantities are exact integer-count ratios, returned as
    :class:`fractions.Fraction` so the identity can be checked without
    rounding.
    """
    from fractions import Fraction

    click = np.asarray(click).astype(int)
    report = np.asarray(report).astype(int)
    n = len(click)
    no_click = int((click == 0).sum())
    safe = int(((click == 0) & (report == 1)).sum())
    out = {"n": n, "no_click": no_click, "safe": safe,
           "p_safe": Fraction(safe, n) if n else None,
           "p_no_click": Fraction(no_click, n) if n else None,
           "p_report_given_no_click": Fraction(safe, no_click) if no_click else None}
    if no_click:
        out["product"] = out["p_report_given_no_click"] * out["p_no_click"]
    else:
        out["product"] = None
    return out


def read_transitions_csv(path_or_buffer) -> pd.DataFrame:
    frame = pd.read_csv(open_text(path_or_buffer), dtype={"employee_id": str, "scenario_id": str, "next_scenario_id": str,
                                               "role": str, "job_status": str, "org_unit": str},
                        keep_default_na=True)
    for c in ("sent_at", "next_sent_at"):
        frame[c] = pd.to_datetime(frame[c])
    return frame
