"""Synthetic exposure panels with known causal structure, and their oracle effects.

Click propensity at a recorded exposure ``s`` of employee ``i`` in campaign
``c`` (probit or logit latent scale)::

    eta = mu + gamma_c + alpha_i
          + psi * A_prev + kappa * A_prev * Sim(prev, s)
          + rho * C_i(before prev)

``A_prev`` is the click at the previous recorded exposure (a burn-in
exposure before the first recorded one supplies it there) and ``C`` is a
discounted count of recorded clicks strictly before the previous exposure::

    C(after s) = feedback_decay * C(before s) + A_prev

so ``do(A_prev)`` at the next exposure moves only the ``psi`` and ``kappa``
terms.  ``feedback_decay=1`` gives the plain cumulative count; the default
``0`` keeps only the click two exposures back, a delayed training effect
that pushes the click at ``t`` and the outcome at ``t+1`` in opposite
directions.  ``alpha_i`` mixes a part loaded on the employee's org unit and
job status with an unobserved normal part (weight ``1 - observed_share``);
``sigma_alpha`` scales both.

Reporting follows its own equation (this is a modelling choice for tests,
not an estimated model)::

    eta_r = mu_r + alpha_r_i + psi_r * A_prev + beta_r * A_s

with ``alpha_r_i = sigma_r * v_i - tau * alpha_i``.

Every employee draws from its own seeded substream, so a panel does not
depend on the order employees are simulated in.  Structural constants
(campaign effects, org-unit and job-status loadings) come from
``structure_seed`` and stay fixed across replications that vary ``seed``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import special

from .errors import ValidationError
from .panel import PanelDataset, ingest_exposures
from .similarity import published_campaigns, published_codes

ROLES = ("faculty", "staff", "unknown")
ROLE_SHARES = (0.204, 0.465, 0.331)
JOB_STATUSES = ("full_time", "part_time", "temporary", "other")
JOB_SHARES = (0.55, 0.2, 0.15, 0.1)
N_ORG_UNITS = 8

# education-page time mixture for clicks: (share, low, high) in whole seconds
EDUCATION_TIME_MIX = (
    (0.40, 1, 10),      # dismissed
    (0.07, 300, 300),   # timed out
    (0.49, 20, 290),    # engaged
    (0.02, 11, 19),     # buffer
    (0.02, 291, 299),   # buffer
)

PRESETS = {
    "desk": {"n_employees": 3000, "n_campaigns": 12},
    "paper-like": {"n_employees": 19341, "n_campaigns": 17},
}


@dataclass(frozen=True)
class DgpConfig:
    n_employees: int = 3000
    n_campaigns: int = 12
    link: str = "probit"
    intercept: float = -1.6
    sigma_alpha: float = 0.45
    observed_share: float = 1.0
    psi: float = 0.25
    rho: float = -0.4
    feedback_decay: float = 0.0
    kappa: float = 0.0
    campaign_scale: float = 0.2
    report_intercept: float = -2.7
    report_sigma: float = 1.5
    report_tau: float = 0.3
    report_psi: float = 0.05
    report_click: float = -0.3
    skip_prob: float = 0.12
    late_entry_prob: float = 0.25
    attrition_prob: float = 0.03
    tenure_missing_prob: float = 0.1
    scenario_ids: tuple[str, ...] | None = None
    structure_seed: int = 20160607
    seed: int = 0

    def __post_init__(self):
        if self.n_employees < 2:
            raise ValidationError("need at least 2 employees")
        if self.n_campaigns < 3:
            raise ValidationError("need at least 3 campaigns")
        if self.link not in ("probit", "logit"):
            raise ValidationError("link must be probit or logit")
        for name in ("intercept", "sigma_alpha", "psi", "rho", "kappa", "campaign_scale",
                     "report_intercept", "report_sigma", "report_tau", "report_psi", "report_click"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.sigma_alpha < 0 or self.report_sigma < 0 or self.campaign_scale < 0:
            raise ValidationError("scales must be nonnegative")
        for name in ("observed_share", "feedback_decay", "skip_prob", "late_entry_prob", "attrition_prob", "tenure_missing_prob"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.skip_prob == 1:
            raise ValidationError("skip_prob must be below 1")
        if self.scenario_ids is not None:
            object.__setattr__(self, "scenario_ids", tuple(str(s) for s in self.scenario_ids))

    @classmethod
    def preset(cls, name: str, **overrides) -> "DgpConfig":
        if name not in PRESETS:
            raise ValidationError(f"unknown preset {name!r}; choose from {tuple(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario_ids"] = list(self.scenario_ids) if self.scenario_ids else None
        return d


@dataclass(frozen=True)
class DgpTruth:
    """Oracle average effect of a click at ``t`` on the next exposure's outcomes."""

    ape: float
    se: float
    n_paths: int
    n_transitions: int
    outcome_apes: dict = field(default_factory=dict)
    outcome_ses: dict = field(default_factory=dict)
    at_similarity: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Simulation:
    """A simulated panel plus the per-exposure latent pieces the oracle needs."""

    config: DgpConfig
    panel: PanelDataset
    latent: pd.DataFrame = field(repr=False)


def _scenario_sequence(config: DgpConfig) -> list[str]:
    codes = published_codes()
    if config.scenario_ids is not None:
        seq = list(config.scenario_ids)
        missing = [s for s in seq if s not in codes]
        if missing:
            raise ValidationError(f"scenario ids without codes: {missing}")
        if len(seq) < config.n_campaigns:
            seq = [seq[i % len(seq)] for i in range(config.n_campaigns)]
        return seq[: config.n_campaigns]
    published = published_campaigns()["scenario_id"].tolist()
    return [published[i % len(published)] for i in range(config.n_campaigns)]


def _campaign_dates(n: int) -> list[pd.Timestamp]:
    dates = list(published_campaigns()["start_date"])
    while len(dates) < n:
        dates.append(dates[-1] + pd.Timedelta(days=80))
    return dates[:n]


def _structure(config: DgpConfig):
    rng = np.random.default_rng(config.structure_seed)
    gamma = rng.standard_normal(config.n_campaigns)
    gamma = config.campaign_scale * (gamma - gamma.mean())
    gamma_r = 0.5 * config.campaign_scale * rng.standard_normal(config.n_campaigns)
    org = rng.standard_normal(N_ORG_UNITS)
    job = rng.standard_normal(len(JOB_STATUSES))
    # org loadings: keep the drawn order but use evenly spaced normal quantiles,
    # so no unit gets an extreme loading that leaves it without clicks
    org = special.ndtri((np.argsort(np.argsort(org)) + 0.5) / N_ORG_UNITS)
    return gamma, gamma_r, org, job


def _jaccard_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    shared = (a & b).sum(axis=1)
    union = (a | b).sum(axis=1)
    out = np.ones(len(a))
    nz = union > 0
    out[nz] = shared[nz] / union[nz]
    return out


def _link_cdf(eta, link):
    return special.ndtr(eta) if link == "probit" else special.expit(eta)


def _employee_draws(config: DgpConfig):
    """Uniform and normal draws, one independent substream per employee."""
    T = config.n_campaigns
    n_u = 4 + 5 * (T + 1)
    n_z = 3
    U = np.empty((config.n_employees, n_u))
    Z = np.empty((config.n_employees, n_z))
    for i in range(config.n_employees):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(i,))))
        U[i] = rng.random(n_u)
        Z[i] = rng.standard_normal(n_z)
    return U, Z


def simulate(config: DgpConfig) -> Simulation:
    """Simulate a panel and keep the latent indices needed by the oracle."""
    T, N, link = config.n_campaigns, config.n_employees, config.link
    scen = _scenario_sequence(config)
    codes = published_codes()
    cues = np.array([codes[s].cues for s in scen], dtype=np.int64)
    dates = _campaign_dates(T)
    gamma, gamma_r, org_load, job_load = _structure(config)
    U, Z = _employee_draws(config)

    role = np.minimum(np.searchsorted(np.cumsum(ROLE_SHARES), U[:, 0], side="right"), len(ROLES) - 1)
    job = np.minimum(np.searchsorted(np.cumsum(JOB_SHARES), U[:, 1], side="right"), len(JOB_STATUSES) - 1)
    org = np.minimum((U[:, 2] * N_ORG_UNITS).astype(int), N_ORG_UNITS - 1)
    tenure = np.round(365.25 * np.exp(1.6 + 0.8 * Z[:, 2]))
    tenure_missing = U[:, 3] < config.tenure_missing_prob

    obs = org_load[org] + job_load[job]
    obs_sd = float(np.sqrt(np.var(org_load) + np.var(job_load))) or 1.0
    alpha = config.sigma_alpha * (np.sqrt(config.observed_share) * obs / obs_sd
                                  + np.sqrt(1 - config.observed_share) * Z[:, 0])
    alpha_r = config.report_sigma * Z[:, 1] - config.report_tau * alpha

    steps = U[:, 4:].reshape(N, T + 1, 5)  # [skip/entry, click, report, edu-mix, edu-value]
    # entry campaign: 0 for most, uniform over later campaigns for late entrants
    late = steps[:, 0, 0] < config.late_entry_prob
    entry = np.where(late, 1 + (steps[:, 0, 3] * (T - 1)).astype(int), 0)
    entry = np.minimum(entry, T - 1)

    # burn-in exposure before the first recorded one
    burn = (steps[:, 0, 1] < _link_cdf(config.intercept + alpha, link)).astype(int)
    a_prev = burn.copy()
    prev_scen = np.full(N, -1)
    c_before_prev = np.zeros(N)
    active = np.ones(N, dtype=bool)
    recorded_any = np.zeros(N, dtype=bool)

    rec = []
    for c in range(T):
        u = steps[:, c + 1]
        eligible = active & (c >= entry)
        first = eligible & ~recorded_any
        skip = eligible & ~first & (u[:, 0] < config.skip_prob)
        leave = eligible & ~first & (u[:, 0] > 1 - config.attrition_prob)
        active &= ~leave
        here = eligible & ~skip & ~leave
        if not here.any():
            continue
        idx = np.flatnonzero(here)
        has_prev_rec = prev_scen[idx] >= 0
        sim = np.zeros(len(idx))
        if has_prev_rec.any():
            sim[has_prev_rec] = _jaccard_rows(cues[prev_scen[idx][has_prev_rec]], np.repeat(cues[[c]], has_prev_rec.sum(), 0))
        ap = a_prev[idx]
        eta_nolag = config.intercept + gamma[c] + alpha[idx] + config.rho * c_before_prev[idx]
        lag_part = config.psi * ap + config.kappa * ap * sim * has_prev_rec
        p_click = _link_cdf(eta_nolag + lag_part, link)
        click = (u[idx, 1] < p_click).astype(int)
        eta_r_nolag = config.report_intercept + gamma_r[c] + alpha_r[idx]
        p_rep = _link_cdf(eta_r_nolag + config.report_psi * ap + config.report_click * click, link)
        report = (u[idx, 2] < p_rep).astype(int)
        secs = _education_seconds(u[idx, 3], u[idx, 4])
        secs = np.where(click == 1, secs, np.nan)
        rec.append(pd.DataFrame({
            "i": idx, "campaign": c, "click": click, "report": report, "education_seconds": secs,
            "eta_nolag": eta_nolag, "eta_r_nolag": eta_r_nolag, "sim_prev": sim,
            "has_prev_recorded": has_prev_rec.astype(int),
        }))
        # update histories: C(before prev) absorbs the old previous click
        c_before_prev[idx] = config.feedback_decay * c_before_prev[idx] + has_prev_rec * a_prev[idx]
        a_prev[idx] = click
        prev_scen[idx] = c
        recorded_any[idx] = True

    lat = pd.concat(rec, ignore_index=True)
    ids = np.array([f"E{i + 1:06d}" for i in range(N)])
    lat["employee_id"] = ids[lat["i"].to_numpy()]
    lat["campaign_id"] = lat["campaign"] + 1
    rows = pd.DataFrame({
        "employee_id": lat["employee_id"],
        "campaign_id": lat["campaign_id"],
        "scenario_id": np.array(scen)[lat["campaign"].to_numpy()],
        "sent_at": np.array([d.strftime("%Y-%m-%d") for d in dates])[lat["campaign"].to_numpy()],
        "clicked": lat["click"],
        "reported": lat["report"],
        "education_seconds": lat["education_seconds"],
        "role": np.array(ROLES)[role[lat["i"].to_numpy()]],
        "job_status": np.array(JOB_STATUSES)[job[lat["i"].to_numpy()]],
        "org_unit": np.array([f"U{k + 1:02d}" for k in range(N_ORG_UNITS)])[org[lat["i"].to_numpy()]],
        "tenure_days": np.where(tenure_missing, np.nan, tenure)[lat["i"].to_numpy()],
    })
    panel = ingest_exposures(rows)
    lat = lat.sort_values(["employee_id", "campaign_id"], kind="mergesort").reset_index(drop=True)
    lat["t"] = lat.groupby("employee_id", sort=False).cumcount() + 1
    keep = ["employee_id", "t", "campaign_id", "click", "report", "eta_nolag", "eta_r_nolag",
            "sim_prev", "has_prev_recorded"]
    return Simulation(config, panel, lat.loc[:, keep])


def _education_seconds(u_mix: np.ndarray, u_val: np.ndarray) -> np.ndarray:
    shares = np.array([m[0] for m in EDUCATION_TIME_MIX])
    comp = np.minimum(np.searchsorted(np.cumsum(shares) / shares.sum(), u_mix, side="right"), len(shares) - 1)
    lo = np.array([m[1] for m in EDUCATION_TIME_MIX])[comp]
    hi = np.array([m[2] for m in EDUCATION_TIME_MIX])[comp]
    return np.floor(lo + u_val * (hi - lo + 1)).clip(lo, hi).astype(float)


def simulate_panel(config: DgpConfig) -> PanelDataset:
    """Draw a synthetic exposure panel (see module docstring for the equations)."""
    return simulate(config).panel


def _per_transition_effects(sim: Simulation, similarity: float | None = None) -> pd.DataFrame:
    """Exact potential-outcome probability differences for every transition.

    For transition ``(t, t+1)`` the history entering exposure ``t+1`` is held
    at its simulated value and only the click at ``t`` is switched.
    """
    cfg = sim.config
    lat = sim.latent
    nxt = lat.groupby("employee_id", sort=False).shift(-1)
    has = nxt["t"].notna().to_numpy()
    emp = lat["employee_id"].to_numpy()[has]
    eta = nxt["eta_nolag"].to_numpy()[has]
    eta_r = nxt["eta_r_nolag"].to_numpy()[has]
    s = nxt["sim_prev"].to_numpy()[has] if similarity is None else np.full(has.sum(), float(similarity))
    F = lambda x: _link_cdf(x, cfg.link)  # noqa: E731
    p1 = F(eta + cfg.psi + cfg.kappa * s)
    p0 = F(eta)
    rep1 = p1 * F(eta_r + cfg.report_psi + cfg.report_click) + (1 - p1) * F(eta_r + cfg.report_psi)
    rep0 = p0 * F(eta_r + cfg.report_click) + (1 - p0) * F(eta_r)
    safe1 = (1 - p1) * F(eta_r + cfg.report_psi)
    safe0 = (1 - p0) * F(eta_r)
    return pd.DataFrame({"employee_id": emp, "click": p1 - p0, "report": rep1 - rep0, "safe": safe1 - safe0})


def _cluster_mean_se(values: np.ndarray, clusters: np.ndarray) -> tuple[float, float]:
    n = len(values)
    mean = float(values.mean())
    _, inv = np.unique(clusters, return_inverse=True)
    sums = np.bincount(inv, weights=values - mean)
    g = len(sums)
    se = float(np.sqrt(np.sum(sums ** 2) * g / max(g - 1, 1)) / n)
    return mean, se


def truth_from_simulation(sim: Simulation, similarity_grid=()) -> DgpTruth:
    eff = _per_transition_effects(sim)
    emp = eff["employee_id"].to_numpy()
    outcome_apes, outcome_ses = {}, {}
    for k in ("click", "report", "safe"):
        outcome_apes[k], outcome_ses[k] = _cluster_mean_se(eff[k].to_numpy(), emp)
    at = {}
    for s in similarity_grid:
        e = _per_transition_effects(sim, similarity=s)
        at[f"{float(s):g}"] = _cluster_mean_se(e["click"].to_numpy(), emp)[0]
    return DgpTruth(outcome_apes["click"], outcome_ses["click"], sim.config.n_employees, len(eff),
                    outcome_apes, outcome_ses, at)


def oracle_ape(config: DgpConfig, replications: int = 100_000, similarity_grid=(),
               seed_offset: int = 7_919) -> DgpTruth:
    """Brute-force oracle over ``replications`` simulated employee paths.

    Each transition contributes the exact difference of next-exposure
    outcome probabilities under a forced click and a forced non-click at
    ``t`` (history held at its simulated value), so no outcome noise enters
    the average.  The Monte Carlo SE is clustered by employee path.
    """
    if replications < 2:
        raise ValidationError("need at least 2 replications")
    big = replace(config, n_employees=int(replications), seed=config.seed + seed_offset)
    return truth_from_simulation(simulate(big), similarity_grid)


def truth_json(config: DgpConfig, truth: DgpTruth) -> str:
    payload = {"schema_version": 1, "config": config.to_dict(), "truth": truth.to_dict()}
    return json.dumps(payload, indent=2, sort_keys=True, default=float)
