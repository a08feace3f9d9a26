"""The estimator ladder for click persistence and its interaction extensions.

Every model regresses an outcome at the next exposure (click, report or
safe handling) on the click at ``t`` plus next-campaign fixed effects.  The
kinds differ in what else they adjust for:

==============  ===========================================  ==================
kind            adjustment                                   addresses
==============  ===========================================  ==================
fe-lpm          employee fixed effects, linear probability   --
pooled-probit   none                                         Neither
cre-probit      CRE block (initial condition, Mundlak means  Stable het.
                exposure count, org unit, job status)
msm-probit      trimmed stabilized weights                   TV confounding
msm-cre         weights and CRE block                        Both
msm-logit       weights, logit link                          TV confounding
==============  ===========================================  ==================

Average partial effects (APEs) switch the treatment indicator on and off
for every row of the estimation sample and average the change in the
predicted probability; delta-method standard errors use the analytic
Jacobian and the cluster-robust covariance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import CollinearityError, EstimationError, ValidationError
from .features import dummies
from .glm import DesignMatrix, FittedModel, cdf, fe_lpm, fit_glm, pdf, wald_test

KINDS = ("fe-lpm", "pooled-probit", "cre-probit", "msm-probit", "msm-cre", "msm-logit")
PROGRESSION_KINDS = ("fe-lpm", "pooled-probit", "cre-probit", "msm-probit", "msm-cre")
OUTCOMES = {"click": "click_next", "report": "report_next", "safe": "safe_next"}
ADDRESSES = {
    "fe-lpm": "--",
    "pooled-probit": "Neither",
    "cre-probit": "Stable het.",
    "msm-probit": "TV confounding",
    "msm-cre": "Both",
    "msm-logit": "TV confounding",
}
DEFAULT_MUNDLAK = ("sim_jaccard", "ann_email", "ann_land", "report_pitch", "emot_heur")
CRE_CATEGORIES = ("org_unit", "job_status")
SUITES = ("similarity", "design", "cues", "cue-by-education", "engagement")
SIMILARITY_GRID = (0.0, 0.25, "mean", 0.75, 1.0)
DESIGN_FEATURES = ("ann_email", "ann_land", "report_pitch", "emot_heur")
DESIGN_PROFILES = {
    "none": {},
    "emot_heur": {"emot_heur": 1},
    "emot_heur+report_pitch": {"emot_heur": 1, "report_pitch": 1},
    "ann_email": {"ann_email": 1},
    "all": {f: 1 for f in DESIGN_FEATURES},
}
CUE_TERMS = ("auth", "urg", "fin", "cur", "intr", "trans_template")
JOINT_CUE_TERMS = ("auth", "urg", "fin", "cur", "intr", "trans_template", "attach_lure")
CUE_BY_EDUCATION = ("auth", "fin", "cur", "intr")


def _uses_weights(kind: str) -> bool:
    return kind.startswith("msm")


def _uses_cre(kind: str) -> bool:
    return kind in ("cre-probit", "msm-cre")


def _link(kind: str) -> str:
    if kind == "fe-lpm":
        return "linear"
    return "logit" if kind == "msm-logit" else "probit"


@dataclass(frozen=True)
class ModelSpec:
    """What to regress on what.

    ``terms`` lists every regressor other than the intercept, fixed effects
    and CRE block as a tuple of variable names whose product forms the
    column (``("click_t", "sim_jaccard")`` is the interaction).  Variables
    named in ``treatments`` are the ones switched on and off for APEs.
    """

    outcome: str = "click"
    kind: str = "msm-cre"
    treatments: tuple[str, ...] = ("click_t",)
    terms: tuple[tuple[str, ...], ...] = (("click_t",),)
    weight_source: str | None = None
    mundlak: tuple[str, ...] = DEFAULT_MUNDLAK
    extra_initial: tuple[str, ...] = ()
    ape_weighting: str = "weighted"
    small_sample: bool = False

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValidationError(f"outcome must be one of {tuple(OUTCOMES)}")
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}")
        ws = self.weight_source
        if ws is None:
            ws = "trimmed" if _uses_weights(self.kind) else "none"
            object.__setattr__(self, "weight_source", ws)
        if ws not in ("none", "trimmed", "raw"):
            raise ValidationError("weight_source must be none, trimmed or raw")
        if _uses_weights(self.kind) and ws == "none":
            raise ValidationError(f"{self.kind} requires a weight source")
        if self.ape_weighting not in ("weighted", "unweighted"):
            raise ValidationError("ape_weighting must be weighted or unweighted")
        object.__setattr__(self, "terms", tuple(tuple(t) for t in self.terms))
        for tr in self.treatments:
            if (tr,) not in self.terms:
                raise ValidationError(f"treatment {tr!r} must appear as a main term")

    @property
    def link(self) -> str:
        return _link(self.kind)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(":".join(t) for t in self.terms)


@dataclass(frozen=True)
class ApeBlock:
    table: pd.DataFrame
    convention: str

    def get(self, treatment: str = "click_t", at: str = "sample") -> pd.Series:
        hit = self.table[(self.table["treatment"] == treatment) & (self.table["at"] == at)]
        if hit.empty:
            raise KeyError((treatment, at))
        return hit.iloc[0]

    @property
    def ape(self) -> float:
        return float(self.table["ape"].iloc[0])

    @property
    def se(self) -> float:
        return float(self.table["se"].iloc[0])


@dataclass(frozen=True)
class EstimationResult:
    spec: ModelSpec
    model: FittedModel
    ape: ApeBlock
    columns: tuple[str, ...]
    notes: tuple[str, ...] = ()

    def coefficient_table(self) -> pd.DataFrame:
        return self.model.summary_frame()

    def fit_statistics(self) -> dict:
        return {
            "Observations": self.model.nobs,
            "Clusters": self.model.n_clusters,
            "Log pseudolikelihood": self.model.loglik,
            "Pseudo R2": self.model.pseudo_r2,
        }


# ---------------------------------------------------------------------------
# CRE block

def build_cre_terms(transitions: pd.DataFrame, covariates: Sequence[str] = DEFAULT_MUNDLAK,
                    initial: Sequence[str] = ("initial_click", "initial_report")) -> pd.DataFrame:
    """Employee-level CRE terms: initial conditions, Mundlak means, exposure count, categories.

    Means are taken over the employee's transitions.  One row per employee,
    in first-appearance order.
    """
    missing = [c for c in covariates if c not in transitions.columns]
    if missing:
        raise ValidationError(f"Mundlak covariates not in transitions: {missing}")
    g = transitions.groupby("employee_id", sort=False)
    out = pd.DataFrame(index=pd.Index(g.size().index, name="employee_id"))
    for c in initial:
        out[c] = g[c].first().astype(float)
    for c in covariates:
        out[f"mean({c})"] = g[c].mean().astype(float)
    out["n_exposures"] = g["n_exposures"].first().astype(float)
    for c in CRE_CATEGORIES:
        out[c] = g[c].first()
    return out


def cre_block(transitions: pd.DataFrame, cre: pd.DataFrame, initial: Sequence[str]) -> pd.DataFrame:
    rows = cre.reindex(transitions["employee_id"].to_numpy())
    if rows["n_exposures"].isna().any():
        raise ValidationError("CRE terms missing for some employees")
    numeric = [c for c in initial] + [c for c in cre.columns if c.startswith("mean(")] + ["n_exposures"]
    parts = [rows.loc[:, numeric].reset_index(drop=True).astype(float)]
    for c in CRE_CATEGORIES:
        parts.append(dummies(rows[c].to_numpy(), c))
    return pd.concat(parts, axis=1)


def _initial_terms(spec: ModelSpec) -> tuple[str, ...]:
    # extra_initial replaces the initial click (e.g. by engagement-type analogs)
    clicks = tuple(spec.extra_initial) or ("initial_click",)
    return clicks if spec.outcome == "click" else clicks + ("initial_report",)


# ---------------------------------------------------------------------------
# design construction

def _term_columns(frame: pd.DataFrame, spec: ModelSpec, overrides: dict | None = None) -> pd.DataFrame:
    values = {}
    needed = {v for t in spec.terms for v in t}
    for v in needed:
        if overrides and v in overrides:
            values[v] = np.full(len(frame), float(overrides[v]))
        else:
            values[v] = frame[v].to_numpy(dtype=float)
    cols = {}
    for t in spec.terms:
        col = values[t[0]].copy()
        for v in t[1:]:
            col = col * values[v]
        cols[":".join(t)] = col
    return pd.DataFrame(cols, index=range(len(frame)))


def design_frame(transitions: pd.DataFrame, spec: ModelSpec, cre: pd.DataFrame | None = None,
                 overrides: dict | None = None, campaigns=None) -> pd.DataFrame:
    """Regressor matrix (as a DataFrame) for ``spec`` on ``transitions``.

    ``overrides`` fixes named variables (treatments or moderators) at a
    constant before interactions are formed; it is how counterfactual
    designs for APEs are produced.  ``campaigns`` pins the set of
    next-campaign levels so counterfactual designs keep the same columns.
    """
    frame = transitions.reset_index(drop=True)
    parts = []
    if spec.kind != "fe-lpm":
        parts.append(pd.DataFrame({"const": np.ones(len(frame))}))
    parts.append(_term_columns(frame, spec, overrides))
    nxt = frame["next_campaign_id"].to_numpy().astype(np.int64)
    levels = np.unique(nxt) if campaigns is None else np.asarray(campaigns)
    parts.append(pd.DataFrame({f"next_campaign[{c}]": (nxt == c).astype(float) for c in levels[1:]},
                              index=range(len(frame))))
    if _uses_cre(spec.kind):
        if cre is None:
            raise ValidationError(f"{spec.kind} requires CRE terms")
        parts.append(cre_block(frame, cre, _initial_terms(spec)))
    return pd.concat(parts, axis=1)


def _observation_weights(transitions: pd.DataFrame, spec: ModelSpec) -> np.ndarray | None:
    if spec.weight_source == "none":
        return None
    col = "sw_trim" if spec.weight_source == "trimmed" else "sw"
    if col not in transitions.columns or transitions[col].isna().any():
        raise ValidationError(f"{spec.kind} needs weights in column {col!r}; attach weights first")
    return transitions[col].to_numpy(dtype=float)


def estimate(spec: ModelSpec, transitions: pd.DataFrame, cre: pd.DataFrame | None = None,
             grid: dict | None = None) -> EstimationResult:
    """Fit ``spec`` and compute its APE block.

    ``grid`` maps a label to a dict of moderator settings; the APE of every
    treatment is reported at each setting in addition to the sample APE.
    """
    frame = transitions.reset_index(drop=True)
    if len(frame) == 0:
        raise ValidationError("no transitions to estimate on")
    notes = []
    if spec.weight_source == "raw" and _uses_weights(spec.kind):
        msg = f"{spec.kind} fitted with untrimmed weights"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if _uses_cre(spec.kind) and cre is None:
        cre = build_cre_terms(frame, spec.mundlak, _initial_terms(spec))
    y = frame[OUTCOMES[spec.outcome]].to_numpy(dtype=float)
    w = _observation_weights(frame, spec)
    X = design_frame(frame, spec, cre)
    clusters = frame["employee_id"].to_numpy()
    design = DesignMatrix.from_frame(X, clusters, w)
    if spec.kind == "fe-lpm":
        model = fe_lpm(design, y, clusters, small_sample=spec.small_sample)
    else:
        model = fit_glm(design, y, link=spec.link, small_sample=spec.small_sample)
    notes.extend(model.notes)
    campaigns = np.unique(frame["next_campaign_id"].to_numpy().astype(np.int64))
    ape = apes(model, spec, frame, cre, grid=grid, campaigns=campaigns)
    return EstimationResult(spec, model, ape, tuple(X.columns), tuple(notes))


# ---------------------------------------------------------------------------
# average partial effects

def ape_and_jacobian(model: FittedModel, X1: np.ndarray, X0: np.ndarray, avg_weights=None):
    """APE ``mean_w[F(X1 b) - F(X0 b)]`` and its gradient in ``b``."""
    beta = model.params.to_numpy()
    w = np.ones(len(X1)) if avg_weights is None else np.asarray(avg_weights, dtype=float)
    eta1, eta0 = X1 @ beta, X0 @ beta
    sw = w.sum()
    ape = float(np.sum(w * (cdf(eta1, model.link) - cdf(eta0, model.link))) / sw)
    jac = (X1.T @ (w * pdf(eta1, model.link)) - X0.T @ (w * pdf(eta0, model.link))) / sw
    return ape, jac


def ape_jacobian_fd(model: FittedModel, X1, X0, avg_weights=None, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of the APE (cross-check for the analytic one)."""
    beta = model.params.to_numpy()
    w = np.ones(len(X1)) if avg_weights is None else np.asarray(avg_weights, dtype=float)
    out = np.empty(len(beta))
    for j in range(len(beta)):
        e = np.zeros(len(beta))
        e[j] = h
        hi = np.sum(w * (cdf(X1 @ (beta + e), model.link) - cdf(X0 @ (beta + e), model.link)))
        lo = np.sum(w * (cdf(X1 @ (beta - e), model.link) - cdf(X0 @ (beta - e), model.link)))
        out[j] = (hi - lo) / (2 * h * w.sum())
    return out


def _ape_row(model, treatment, at, X1, X0, w):
    ape, jac = ape_and_jacobian(model, X1, X0, w)
    var = float(jac @ model.cov.to_numpy() @ jac)
    se = float(np.sqrt(max(var, 0.0)))
    z = ape / se if se > 0 else float("nan")
    return {"treatment": treatment, "at": at, "ape": ape, "se": se, "z": z,
            "p": float(2 * stats.norm.sf(abs(z))) if se > 0 else float("nan"),
            "lower": ape - 1.959963984540054 * se, "upper": ape + 1.959963984540054 * se}


def apes(model: FittedModel, spec: ModelSpec, transitions: pd.DataFrame, cre=None,
         grid: dict | None = None, campaigns=None) -> ApeBlock:
    """APE of each treatment, overall and at each moderator setting in ``grid``.

    For a treatment ``d`` the two counterfactual designs set ``d`` to 1 and
    0 with every other treatment at 0, then rebuild interactions.
    """
    frame = transitions.reset_index(drop=True)
    cols = list(model.params.index)
    if spec.ape_weighting == "weighted" and spec.weight_source != "none":
        w = _observation_weights(frame, spec)
    else:
        w = np.ones(len(frame))
    settings = {"sample": {}}
    if grid:
        settings.update(grid)
    rows = []
    for label, setting in settings.items():
        _check_support(frame, setting)
        for d in spec.treatments:
            off = {t: 0 for t in spec.treatments}
            on = dict(off)
            on[d] = 1
            X1 = design_frame(frame, spec, cre, {**setting, **on}, campaigns).loc[:, cols].to_numpy()
            X0 = design_frame(frame, spec, cre, {**setting, **off}, campaigns).loc[:, cols].to_numpy()
            rows.append(_ape_row(model, d, label, X1, X0, w))
    convention = ("average over the estimation sample, weighted by "
                  + ("trimmed stabilized weights" if spec.weight_source == "trimmed" and spec.ape_weighting == "weighted"
                     else "raw stabilized weights" if spec.weight_source == "raw" and spec.ape_weighting == "weighted"
                     else "equal weights"))
    return ApeBlock(pd.DataFrame(rows), convention)


def _check_support(frame: pd.DataFrame, setting: dict) -> None:
    for var, value in setting.items():
        if var not in frame.columns:
            continue
        col = frame[var].to_numpy(dtype=float)
        if value < col.min() or value > col.max():
            warnings.warn(f"{var}={value} lies outside the observed support "
                          f"[{col.min():g}, {col.max():g}]", RuntimeWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# progression

def progression(transitions: pd.DataFrame, outcome: str = "click", kinds=PROGRESSION_KINDS,
                mundlak=DEFAULT_MUNDLAK, cre: pd.DataFrame | None = None,
                ape_weighting: str = "weighted") -> pd.DataFrame:
    """Run the estimator ladder and tabulate the click coefficient and APE of each kind.

    A failing estimator is reported in the ``error`` column; the others
    still run.
    """
    frame = transitions.reset_index(drop=True)
    rows = []
    for kind in kinds:
        spec = ModelSpec(outcome=outcome, kind=kind, mundlak=tuple(mundlak), ape_weighting=ape_weighting)
        row = {"kind": kind, "addresses": ADDRESSES[kind]}
        try:
            res = estimate(spec, frame, cre)
        except (EstimationError, ValidationError) as exc:
            row.update({"coefficient": np.nan, "se": np.nan, "ape": np.nan, "ape_se": np.nan,
                        "observations": np.nan, "log_pseudolikelihood": np.nan, "pseudo_r2": np.nan,
                        "error": f"{type(exc).__name__}: {exc}"})
        else:
            m = res.model
            row.update({"coefficient": float(m.params["click_t"]), "se": float(m.bse["click_t"]),
                        "ape": res.ape.ape, "ape_se": res.ape.se, "observations": m.nobs,
                        "log_pseudolikelihood": m.loglik, "pseudo_r2": m.pseudo_r2, "error": ""})
        rows.append(row)
    return pd.DataFrame(rows)


def heterogeneity_share(ape_msm: float, ape_cre: float) -> float:
    """Share of the weighted persistence APE removed by the CRE adjustment."""
    return (ape_msm - ape_cre) / ape_msm


# ---------------------------------------------------------------------------
# interaction suites

@dataclass(frozen=True)
class EngagementThresholds:
    disengaged_max: float = 10.0
    engaged_min: float = 20.0
    engaged_max: float = 290.0
    timeout: float = 300.0


def engagement_split(transitions: pd.DataFrame, thresholds: EngagementThresholds = EngagementThresholds()):
    """Classify clicks at ``t`` by education-page time.

    Returns ``(frame, keep)``: the transitions with ``disengaged_t`` and
    ``engaged_t`` indicators added, and a boolean mask that drops buffer
    clicks (strictly between the disengaged and engaged bands, or between
    the engaged maximum and the timeout) and clicks with no recorded time.
    """
    th = thresholds
    frame = transitions.reset_index(drop=True).copy()
    click = frame["click_t"].to_numpy() == 1
    secs = frame["education_seconds_t"].to_numpy(dtype=float)
    dis = click & ((secs <= th.disengaged_max) | (secs >= th.timeout))
    eng = click & (secs >= th.engaged_min) & (secs <= th.engaged_max)
    buffer = click & ~np.isnan(secs) & ~dis & ~eng
    unknown = click & np.isnan(secs)
    frame["disengaged_t"] = dis.astype(int)
    frame["engaged_t"] = eng.astype(int)
    frame["engagement_buffer"] = buffer.astype(int)
    first = frame.loc[frame["t"] == 1].set_index("employee_id")
    for c in ("disengaged_t", "engaged_t"):
        name = "initial_" + c[:-2]
        frame[name] = frame["employee_id"].map(first[c]).fillna(0).astype(int).to_numpy()
    keep = ~(buffer | unknown)
    return frame, keep


def _fit_reporting_collinearity(spec: ModelSpec, frame, cre, grid=None):
    """Fit, and on rank deficiency drop the last column of each dependent set and refit."""
    try:
        return estimate(spec, frame, cre, grid), []
    except CollinearityError as exc:
        drop_cols = {s[-1] for s in exc.dependent_sets}
        term_names = spec.column_names
        bad = [c for c in drop_cols if c not in term_names]
        if bad:
            raise
        terms = tuple(t for t in spec.terms if ":".join(t) not in drop_cols)
        treatments = tuple(d for d in spec.treatments if (d,) in terms)
        reduced = replace(spec, terms=terms, treatments=treatments)
        note = f"omitted for collinearity: {', '.join(sorted(drop_cols))} ({exc})"
        res = estimate(reduced, frame, cre, grid)
        return replace(res, notes=res.notes + (note,)), [note]


@dataclass(frozen=True)
class SuiteResult:
    suite: str
    fits: dict
    wald: dict
    notes: tuple[str, ...] = ()
    sample: dict = field(default_factory=dict)

    def ape_table(self) -> pd.DataFrame:
        frames = []
        for name, res in self.fits.items():
            t = res.ape.table.copy()
            t.insert(0, "model", name)
            frames.append(t)
        return pd.concat(frames, ignore_index=True)

    def coefficient_table(self) -> pd.DataFrame:
        frames = []
        for name, res in self.fits.items():
            t = res.coefficient_table()
            t.insert(0, "model", name)
            frames.append(t)
        return pd.concat(frames, ignore_index=True)

    def wald_table(self) -> pd.DataFrame:
        return pd.DataFrame([{"model": k, "statistic": v["statistic"], "df": v["df"], "p": v["p"],
                              "terms": " ".join(v["terms"])} for k, v in self.wald.items()])


def interaction_suite(transitions: pd.DataFrame, suite: str, kind: str = "msm-cre",
                      mundlak=DEFAULT_MUNDLAK, thresholds: EngagementThresholds = EngagementThresholds(),
                      ape_weighting: str = "weighted") -> SuiteResult:
    """Fit one family of moderated persistence models with joint Wald tests."""
    if suite not in SUITES:
        raise ValidationError(f"suite must be one of {SUITES}")
    frame = transitions.reset_index(drop=True)
    base = dict(kind=kind, mundlak=tuple(mundlak), ape_weighting=ape_weighting)
    fits, wald, notes, sample = {}, {}, [], {}
    cre = build_cre_terms(frame, mundlak) if _uses_cre(kind) else None

    if suite == "similarity":
        mean_sim = float(frame["sim_jaccard"].mean())
        grid = {("mean" if g == "mean" else f"{g:g}"): {"sim_jaccard": mean_sim if g == "mean" else g}
                for g in SIMILARITY_GRID}
        for outcome in OUTCOMES:
            spec = ModelSpec(outcome=outcome, terms=(("click_t",), ("sim_jaccard",), ("click_t", "sim_jaccard")),
                             **base)
            res, n = _fit_reporting_collinearity(spec, frame, cre, grid)
            fits[outcome] = res
            notes += n
            if "click_t:sim_jaccard" in res.model.params.index:
                wald[outcome] = wald_test(res.model, ["click_t:sim_jaccard"])
        sample["mean_sim_jaccard"] = mean_sim

    elif suite == "design":
        terms = [("click_t",)] + [(f,) for f in DESIGN_FEATURES] + [("click_t", f) for f in DESIGN_FEATURES]
        grid = {k: {f: v.get(f, 0) for f in DESIGN_FEATURES} for k, v in DESIGN_PROFILES.items()}
        spec = ModelSpec(outcome="click", terms=tuple(terms), **base)
        res, n = _fit_reporting_collinearity(spec, frame, cre, grid)
        fits["design"] = res
        notes += n
        inter = [c for c in res.model.params.index if c.startswith("click_t:")]
        wald["design"] = wald_test(res.model, inter)

    elif suite == "cues":
        for cue in CUE_TERMS:
            spec = ModelSpec(outcome="click", terms=(("click_t",), (cue,), ("click_t", cue)), **base)
            res, n = _fit_reporting_collinearity(spec, frame, cre, {f"{cue}=0": {cue: 0}, f"{cue}=1": {cue: 1}})
            fits[cue] = res
            notes += n
        terms = [("click_t",)] + [(c,) for c in JOINT_CUE_TERMS] + [("click_t", c) for c in JOINT_CUE_TERMS]
        spec = ModelSpec(outcome="click", terms=tuple(terms), **base)
        res, n = _fit_reporting_collinearity(spec, frame, cre)
        fits["joint"] = res
        notes += n
        inter = [c for c in res.model.params.index if c.startswith("click_t:")]
        wald["joint"] = wald_test(res.model, inter)

    elif suite == "cue-by-education":
        e = "emot_heur"
        for cue in CUE_BY_EDUCATION:
            terms = (("click_t",), (cue,), (e,), (cue, e), ("click_t", cue), ("click_t", e), ("click_t", cue, e))
            spec = ModelSpec(outcome="click", terms=terms, **base)
            grid = {f"{cue}={a},{e}={b}": {cue: a, e: b} for a in (0, 1) for b in (0, 1)}
            res, n = _fit_reporting_collinearity(spec, frame, cre, grid)
            fits[cue] = res
            notes += n

    else:  # engagement
        split, keep = engagement_split(frame, thresholds)
        sample = {"transitions": int(len(split)), "excluded_buffer": int(split["engagement_buffer"].sum()),
                  "excluded_unclassified": int((~keep).sum() - split["engagement_buffer"].sum()),
                  "estimation_sample": int(keep.sum())}
        eng_cre = None
        if _uses_cre(kind):
            eng_cre = build_cre_terms(split, mundlak, ("initial_click", "initial_report",
                                                       "initial_disengaged", "initial_engaged"))
        sub = split.loc[keep].reset_index(drop=True)
        spec = ModelSpec(outcome="click", treatments=("disengaged_t", "engaged_t"),
                         terms=(("disengaged_t",), ("engaged_t",)),
                         extra_initial=("initial_disengaged", "initial_engaged"), **base)
        res, n = _fit_reporting_collinearity(spec, sub, eng_cre)
        fits["engagement"] = res
        notes += n
        names = list(res.model.params.index)
        R = np.zeros((1, len(names)))
        R[0, names.index("disengaged_t")] = 1.0
        R[0, names.index("engaged_t")] = -1.0
        wt = wald_test(res.model, R=R)
        wt["terms"] = ["disengaged_t=engaged_t"]
        wald["engagement"] = wt

    return SuiteResult(suite, fits, wald, tuple(notes), sample)
