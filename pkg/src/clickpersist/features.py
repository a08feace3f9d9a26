"""Regressor blocks shared by the treatment and outcome models."""

from __future__ import annotations

import numpy as np
import pandas as pd

BASELINE_CATEGORIES = ("role", "job_status", "org_unit")


def dummies(values, prefix: str, reference=None) -> pd.DataFrame:
    """Indicator columns for every level except the reference (first sorted level by default)."""
    s = pd.Series(np.asarray(values)).astype(str)
    levels = sorted(s.unique(), key=_level_key)
    if reference is None and levels:
        reference = levels[0]
    cols = {}
    for lv in levels:
        if lv == str(reference):
            continue
        cols[f"{prefix}[{lv}]"] = (s.to_numpy() == lv).astype(float)
    return pd.DataFrame(cols, index=range(len(s)))


def _level_key(v: str):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


def baseline_block(frame: pd.DataFrame, categories=BASELINE_CATEGORIES, tenure: bool = True) -> pd.DataFrame:
    """Baseline covariates measured at the first exposure.

    Categorical fields become indicators; tenure enters in years with
    missing values set to 0 alongside a missingness flag.
    """
    parts = [dummies(frame[c].to_numpy(), c) for c in categories]
    if tenure:
        days = frame["tenure_days"].to_numpy(dtype=float)
        parts.append(pd.DataFrame({
            "tenure_years": np.where(np.isnan(days), 0.0, days / 365.25),
            "tenure_missing": np.isnan(days).astype(float),
        }))
    return pd.concat(parts, axis=1) if parts else pd.DataFrame(index=range(len(frame)))


def campaign_block(campaign_ids, prefix: str = "campaign") -> pd.DataFrame:
    """Campaign fixed effects with the earliest campaign as reference."""
    ids = np.asarray(campaign_ids).astype(np.int64)
    levels = np.unique(ids)
    return pd.DataFrame({f"{prefix}[{c}]": (ids == c).astype(float) for c in levels[1:]},
                        index=range(len(ids)))


def drop_constant(frame: pd.DataFrame, keep=("const",)) -> tuple[pd.DataFrame, list[str]]:
    """Remove zero-variance columns (other than ``keep``); returns the names removed."""
    X = frame.to_numpy(dtype=float)
    const = (X.max(axis=0) == X.min(axis=0)) if len(X) else np.ones(X.shape[1], bool)
    dropped = [c for c, k in zip(frame.columns, const) if k and c not in keep]
    return frame.drop(columns=dropped), dropped
