"""Stabilized inverse-probability-of-treatment weights.

Treatment at an exposure is the click.  Two pooled logits model it: the
numerator on baseline covariates and campaign indicators only (history terms
can be added through ``numerator_history``); the denominator adds the
time-varying histories.  The stabilized weight at
exposure ``t`` is the running product, over the employee's exposures up to
``t``, of numerator over denominator probabilities of the observed arm.

Both models are fitted on every exposure (an employee's last exposure has a
treatment even though it has no outcome), so weights exist for every
exposure and are then attached to transitions by ``(employee_id, t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import PositivityError, ValidationError
from .features import baseline_block, campaign_block, drop_constant
from .glm import DesignMatrix, FittedModel, cdf, fit_glm

NUMERATOR_HISTORY: tuple[str, ...] = ()
DENOMINATOR_HISTORY = ("lag_click", "first_exposure", "lag_report", "cum_clicks", "cum_reports",
                       "exposure_order", "gap_days")
POSITIVITY_FLOOR = 1e-6
DIAGNOSTIC_COLUMNS = ("Mean", "SD", "P1", "P5", "P50", "P95", "P99", "Min", "Max")


@dataclass(frozen=True)
class TreatmentModels:
    numerator: FittedModel
    denominator: FittedModel
    numerator_columns: tuple[str, ...]
    denominator_columns: tuple[str, ...]
    dropped: tuple[str, ...] = ()
    numerator_history: tuple[str, ...] = NUMERATOR_HISTORY


@dataclass(frozen=True)
class WeightSet:
    """Per-exposure weights.

    ``frame`` has one row per exposure with columns employee_id, t,
    treatment, p_num, p_den (observed-arm probabilities), ratio, sw and
    sw_trim.  Trimming always works from the raw ``sw`` column.
    """

    frame: pd.DataFrame = field(repr=False)
    lower: float = float("nan")
    upper: float = float("nan")
    lower_pct: float = 0.0
    upper_pct: float = 100.0
    capped_low: int = 0
    capped_high: int = 0

    @property
    def sw(self) -> np.ndarray:
        return self.frame["sw"].to_numpy()

    @property
    def sw_trim(self) -> np.ndarray:
        return self.frame["sw_trim"].to_numpy()

    def __len__(self) -> int:
        return len(self.frame)


def treatment_design(histories: pd.DataFrame, which: str, numerator_history=NUMERATOR_HISTORY) -> pd.DataFrame:
    """Regressors of the numerator (``which="numerator"``) or denominator model."""
    if which not in ("numerator", "denominator"):
        raise ValueError("which must be 'numerator' or 'denominator'")
    hist = tuple(numerator_history) if which == "numerator" else DENOMINATOR_HISTORY
    frame = histories.reset_index(drop=True)
    parts = [pd.DataFrame({"const": np.ones(len(frame))}),
             baseline_block(frame),
             campaign_block(frame["campaign_id"]),
             frame.loc[:, list(hist)].astype(float).reset_index(drop=True)]
    return pd.concat(parts, axis=1)


def fit_treatment_models(histories: pd.DataFrame, numerator_history=NUMERATOR_HISTORY) -> TreatmentModels:
    """Pooled logits of the click at each exposure on the two regressor sets.

    ``histories`` is the per-exposure frame from
    :func:`clickpersist.panel.exposure_histories`.  Columns that are
    constant in the sample (e.g. a missingness flag with no missing values)
    are left out of both models and listed in ``dropped``.
    ``numerator_history`` names history columns (a subset of the
    denominator's) to keep in the numerator as well.
    """
    numerator_history = tuple(numerator_history)
    unknown = [c for c in numerator_history if c not in DENOMINATOR_HISTORY]
    if unknown:
        raise ValidationError(f"numerator history terms must be denominator terms: {unknown}")
    y = histories["click_t"].to_numpy(dtype=float)
    clusters = histories["employee_id"].to_numpy()
    den = treatment_design(histories, "denominator")
    den, dropped = drop_constant(den)
    num = treatment_design(histories, "numerator", numerator_history).drop(columns=dropped, errors="ignore")
    num_fit = fit_glm(DesignMatrix.from_frame(num, clusters), y, link="logit")
    den_fit = fit_glm(DesignMatrix.from_frame(den, clusters), y, link="logit")
    return TreatmentModels(num_fit, den_fit, tuple(num.columns), tuple(den.columns), tuple(dropped),
                           numerator_history)


def observed_arm_probability(model: FittedModel, X: pd.DataFrame, treatment) -> np.ndarray:
    p = cdf(X.loc[:, list(model.params.index)].to_numpy(dtype=float) @ model.params.to_numpy(), model.link)
    a = np.asarray(treatment)
    return np.where(a == 1, p, 1.0 - p)


def weights_from_probabilities(employee_ids, exposure_index, treatment, p_num, p_den,
                               floor: float = POSITIVITY_FLOOR) -> WeightSet:
    """Cumulative products of observed-arm probability ratios.

    ``p_num`` and ``p_den`` are treatment probabilities Pr(A=1); rows must be
    sorted by employee then exposure.  A denominator probability of the
    observed arm below ``floor`` raises :class:`PositivityError`.
    """
    emp = np.asarray(employee_ids)
    t = np.asarray(exposure_index)
    a = np.asarray(treatment).astype(int)
    pn = np.asarray(p_num, dtype=float)
    pd_ = np.asarray(p_den, dtype=float)
    num_arm = np.where(a == 1, pn, 1.0 - pn)
    den_arm = np.where(a == 1, pd_, 1.0 - pd_)
    return _weights_from_arms(emp, t, a, num_arm, den_arm, floor)


def _weights_from_arms(emp, t, a, num_arm, den_arm, floor):
    bad = ~(den_arm >= floor)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise PositivityError(emp[i], int(t[i]), float(den_arm[i]), floor)
    if not (num_arm > 0).all():
        i = int(np.flatnonzero(~(num_arm > 0))[0])
        raise PositivityError(emp[i], int(t[i]), float(num_arm[i]), floor)
    ratio = num_arm / den_arm
    frame = pd.DataFrame({"employee_id": emp, "t": t, "treatment": a,
                          "p_num": num_arm, "p_den": den_arm, "ratio": ratio})
    frame["sw"] = _running_product(emp, ratio)
    frame["sw_trim"] = frame["sw"]
    return WeightSet(frame)


def _running_product(emp: np.ndarray, ratio: np.ndarray) -> np.ndarray:
    # products within runs of equal employee id, accumulated in log space
    logr = np.log(ratio)
    start = np.r_[True, emp[1:] != emp[:-1]]
    cs = np.cumsum(logr)
    offset = np.maximum.accumulate(np.where(start, np.arange(len(emp)), 0))
    base = cs[offset] - logr[offset]
    return np.exp(cs - base)


def stabilized_weights(histories: pd.DataFrame, models: TreatmentModels,
                       floor: float = POSITIVITY_FLOOR) -> WeightSet:
    """Stabilized weights for every exposure in ``histories`` (untrimmed)."""
    hist = histories.reset_index(drop=True)
    a = hist["click_t"].to_numpy()
    num_X = treatment_design(hist, "numerator", models.numerator_history)
    den_X = treatment_design(hist, "denominator")
    num_arm = observed_arm_probability(models.numerator, num_X, a)
    if models.denominator is models.numerator:
        den_arm = num_arm.copy()
    else:
        den_arm = observed_arm_probability(models.denominator, den_X, a)
    return _weights_from_arms(hist["employee_id"].to_numpy(), hist["t"].to_numpy(), a,
                              num_arm, den_arm, floor)


def percentile(values, q: float) -> float:
    """Percentile by linear interpolation between order statistics."""
    return float(np.percentile(np.asarray(values, dtype=float), q, method="linear"))


def trim_weights(weights: WeightSet, lower_pct: float = 1.0, upper_pct: float = 99.0,
                 cutoffs: tuple[float, float] | None = None) -> WeightSet:
    """Cap raw weights at percentile cutoffs (or explicit ``cutoffs``).

    Cutoffs are computed from the raw ``sw`` column, so trimming an already
    trimmed set with the same settings returns the same set.
    """
    if not 0 <= lower_pct < upper_pct <= 100:
        raise ValidationError("need 0 <= lower_pct < upper_pct <= 100")
    sw = weights.sw
    if len(sw) == 0:
        raise ValidationError("no weights to trim")
    if cutoffs is None:
        lo, hi = percentile(sw, lower_pct), percentile(sw, upper_pct)
    else:
        lo, hi = map(float, cutoffs)
        if lo > hi:
            raise ValidationError("lower cutoff exceeds upper cutoff")
    trimmed = np.clip(sw, lo, hi)
    frame = weights.frame.copy()
    frame["sw_trim"] = trimmed
    return replace(weights, frame=frame, lower=lo, upper=hi, lower_pct=float(lower_pct),
                   upper_pct=float(upper_pct), capped_low=int((sw < lo).sum()),
                   capped_high=int((sw > hi).sum()))


def weight_diagnostics(weights: WeightSet) -> pd.DataFrame:
    """Summary statistics of raw (``sw``) and trimmed (``sw_trim``) weights."""
    if len(weights) == 0:
        raise ValidationError("no weights to summarize")
    rows = []
    for name in ("sw", "sw_trim"):
        v = weights.frame[name].to_numpy(dtype=float)
        rows.append({
            "weight": name,
            "Mean": float(v.mean()),
            "SD": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
            "P1": percentile(v, 1),
            "P5": percentile(v, 5),
            "P50": percentile(v, 50),
            "P95": percentile(v, 95),
            "P99": percentile(v, 99),
            "Min": float(v.min()),
            "Max": float(v.max()),
            "N": len(v),
        })
    out = pd.DataFrame(rows)
    out["capped_low"] = [0, weights.capped_low]
    out["capped_high"] = [0, weights.capped_high]
    return out


def weight_histogram(weights: WeightSet, column: str = "sw", bins: int = 50) -> pd.DataFrame:
    v = weights.frame[column].to_numpy(dtype=float)
    counts, edges = np.histogram(v, bins=bins)
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})


def attach_weights(transitions: pd.DataFrame, weights: WeightSet) -> pd.DataFrame:
    """Copy ``sw``/``sw_trim`` onto transitions by ``(employee_id, t)``."""
    w = weights.frame.loc[:, ["employee_id", "t", "sw", "sw_trim"]]
    out = transitions.drop(columns=["sw", "sw_trim"], errors="ignore")
    merged = out.merge(w, on=["employee_id", "t"], how="left", validate="one_to_one")
    if merged["sw"].isna().any():
        raise ValidationError("some transitions have no matching exposure weight")
    return merged


def history_balance(histories: pd.DataFrame, weights: WeightSet,
                    terms=("lag_report", "cum_clicks", "cum_reports", "exposure_order", "gap_days")) -> pd.DataFrame:
    """Association between histories and treatment before and after weighting.

    Fits the denominator logit unweighted and weighted by trimmed weights;
    in a well-balanced pseudo-population the weighted history coefficients
    shrink toward zero.
    """
    hist = histories.reset_index(drop=True)
    X = treatment_design(hist, "denominator")
    X, _ = drop_constant(X)
    y = hist["click_t"].to_numpy(dtype=float)
    clusters = hist["employee_id"].to_numpy()
    w = weights.frame["sw_trim"].to_numpy()
    raw = fit_glm(DesignMatrix.from_frame(X, clusters), y, link="logit")
    wtd = fit_glm(DesignMatrix.from_frame(X, clusters, w), y, link="logit")
    keep = [t for t in terms if t in X.columns]
    return pd.DataFrame({
        "term": keep,
        "unweighted": raw.params[keep].to_numpy(),
        "unweighted_se": raw.bse[keep].to_numpy(),
        "weighted": wtd.params[keep].to_numpy(),
        "weighted_se": wtd.bse[keep].to_numpy(),
    })
