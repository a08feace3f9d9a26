"""Weighted binary-response GLMs (probit, logit) and the FE linear probability model.

Estimation is Newton-Raphson on the weighted log-likelihood with exact
Hessians and step halving.  Covariances are cluster-robust sandwiches
``H^-1 B H^-1`` where ``B`` sums outer products of per-cluster scores.

Row accumulation runs over fixed-size blocks reduced left to right so the
numbers do not depend on how many worker threads are used.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, special, stats

from .errors import (
    CollinearityError,
    ConvergenceError,
    EstimationError,
    SeparationError,
    SingularHessianError,
    ValidationError,
    WaldRankError,
)

LINKS = ("probit", "logit")
BLOCK_ROWS = 65536
MAX_ITER = 50
MAX_HALVINGS = 30
GRAD_TOL = 1e-8
# a full Newton step that cannot change the loglik in floating point means the
# optimum is reached even if summation noise keeps the gradient above GRAD_TOL
DECREMENT_TOL = float(np.finfo(float).eps)
RANK_TOL = 1e-10
PROBIT_WARN_BOUND = 8.0


def n_threads() -> int:
    """Worker count from ``CLICKPERSIST_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("CLICKPERSIST_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    columns: tuple[str, ...]
    clusters: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValidationError("design must be two-dimensional")
        if X.shape[1] != len(self.columns):
            raise ValidationError("column names do not match design width")
        if not np.isfinite(X).all():
            bad = np.flatnonzero(~np.isfinite(X).all(axis=0))
            raise ValidationError(f"non-finite entries in columns {[self.columns[j] for j in bad]}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "columns", tuple(self.columns))
        w = np.ones(len(X)) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (len(X),):
            raise ValidationError("weights must have one entry per row")
        if not np.isfinite(w).all() or (w < 0).any():
            raise ValidationError("weights must be finite and nonnegative")
        if not (w > 0).any():
            raise ValidationError("at least one weight must be positive")
        object.__setattr__(self, "weights", w)
        c = np.arange(len(X)) if self.clusters is None else np.asarray(self.clusters)
        if len(c) != len(X):
            raise ValidationError("clusters must have one entry per row")
        object.__setattr__(self, "clusters", c)

    @property
    def nobs(self) -> int:
        return self.X.shape[0]

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, clusters=None, weights=None) -> "DesignMatrix":
        return cls(frame.to_numpy(dtype=float), tuple(map(str, frame.columns)), clusters, weights)


@dataclass(frozen=True)
class FittedModel:
    link: str
    params: pd.Series
    cov: pd.DataFrame
    loglik: float
    null_loglik: float
    nobs: int
    n_clusters: int
    iterations: int
    grad_norm: float
    converged: bool = True
    sum_weights: float = float("nan")
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def pseudo_r2(self) -> float:
        if not np.isfinite(self.loglik) or not self.null_loglik < 0:
            return float("nan")
        return 1.0 - self.loglik / self.null_loglik

    @property
    def bse(self) -> pd.Series:
        return pd.Series(np.sqrt(np.clip(np.diag(self.cov.to_numpy()), 0, None)), index=self.params.index)

    @property
    def zvalues(self) -> pd.Series:
        return self.params / self.bse

    @property
    def pvalues(self) -> pd.Series:
        return pd.Series(2 * stats.norm.sf(np.abs(self.zvalues.to_numpy())), index=self.params.index)

    def conf_int(self, level: float = 0.95) -> pd.DataFrame:
        q = stats.norm.ppf(0.5 + level / 2)
        se = self.bse
        return pd.DataFrame({"lower": self.params - q * se, "upper": self.params + q * se})

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "term": self.params.index,
            "coefficient": self.params.to_numpy(),
            "se": self.bse.to_numpy(),
            "z": self.zvalues.to_numpy(),
            "p": self.pvalues.to_numpy(),
        })


# ---------------------------------------------------------------------------
# link functions

def cdf(eta: np.ndarray, link: str) -> np.ndarray:
    if link == "probit":
        return special.ndtr(eta)
    if link == "logit":
        return special.expit(eta)
    if link == "linear":
        return eta
    raise ValueError(f"unknown link {link!r}")


def pdf(eta: np.ndarray, link: str) -> np.ndarray:
    if link == "probit":
        return np.exp(-0.5 * eta * eta) / np.sqrt(2 * np.pi)
    if link == "logit":
        p = special.expit(eta)
        return p * (1 - p)
    if link == "linear":
        return np.ones_like(eta)
    raise ValueError(f"unknown link {link!r}")


def inverse_link(p: float, link: str) -> float:
    if link == "probit":
        return float(special.ndtri(p))
    if link == "logit":
        return float(special.logit(p))
    raise ValueError(f"unknown link {link!r}")


def _row_terms(eta: np.ndarray, y: np.ndarray, link: str):
    """Per-row log-likelihood, d/d eta and d2/d eta2."""
    if link == "logit":
        ll = y * eta - np.logaddexp(0.0, eta)
        p = special.expit(eta)
        return ll, y - p, -p * (1 - p)
    if link != "probit":
        raise ValueError(f"unknown link {link!r}")
    # signed form: q = 2y-1, ll = log Phi(q eta); Mills ratio via log_ndtr
    q = 2.0 * y - 1.0
    qe = q * eta
    ll = special.log_ndtr(qe)
    lam = np.exp(-0.5 * qe * qe - 0.5 * np.log(2 * np.pi) - ll)
    d1 = q * lam
    d2 = -lam * (qe + lam)
    return ll, d1, d2


def _blocks(n: int):
    return [(s, min(s + BLOCK_ROWS, n)) for s in range(0, n, BLOCK_ROWS)]


def _accumulate(fn, n: int):
    blocks = _blocks(n)
    workers = min(n_threads(), len(blocks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda b: fn(*b), blocks))
    else:
        parts = [fn(*b) for b in blocks]
    total = parts[0]
    for p in parts[1:]:
        total = tuple(a + b for a, b in zip(total, p))
    return total


def _check_beta(beta: np.ndarray) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if not np.isfinite(beta).all():
        raise EstimationError("coefficient vector has non-finite entries")
    return beta


def loglik_and_gradient(X, y, beta, link: str = "probit", weights=None):
    """Weighted log-likelihood and its analytic gradient at ``beta``.

    Probit uses the inverse-Mills form with ``log_ndtr`` for the tails;
    logit uses the residual form.  Zero-weight rows contribute exactly 0.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = _check_beta(beta)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)

    def block(s, e):
        eta = X[s:e] @ beta
        ll, d1, _ = _row_terms(eta, y[s:e], link)
        ww = w[s:e]
        pos = ww > 0
        return (float(np.sum(ww[pos] * ll[pos])), X[s:e][pos].T @ (ww[pos] * d1[pos]))

    ll, grad = _accumulate(block, len(y))
    return ll, grad


def loglik_grad_hessian(X, y, beta, link: str = "probit", weights=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = _check_beta(beta)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)

    def block(s, e):
        ww = w[s:e]
        pos = ww > 0
        Xb = X[s:e][pos]
        eta = Xb @ beta
        ll, d1, d2 = _row_terms(eta, y[s:e][pos], link)
        wp = ww[pos]
        return (float(np.sum(wp * ll)), Xb.T @ (wp * d1), (Xb * (wp * d2)[:, None]).T @ Xb)

    return _accumulate(block, len(y))


# ---------------------------------------------------------------------------
# design diagnostics

def collinearity_sets(X: np.ndarray, columns, tol: float = RANK_TOL) -> list[tuple[str, ...]]:
    """Minimal dependent column sets found by pivoted QR (empty if full rank)."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] == 0:
        return []
    scale = np.sqrt((X * X).sum(axis=0))
    scale[scale == 0] = 1.0
    Xs = X / scale
    _, R, piv = linalg.qr(Xs, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0:
        return [(columns[j],) for j in range(X.shape[1])]
    rank = int((diag > tol * diag[0]).sum())
    if rank == X.shape[1]:
        return []
    basis = piv[:rank]
    sets = []
    for j in piv[rank:]:
        coef, *_ = linalg.lstsq(Xs[:, basis], Xs[:, j])
        involved = [basis[k] for k in np.flatnonzero(np.abs(coef) > 1e-7)]
        cols = sorted(involved + [j])
        sets.append(tuple(columns[k] for k in cols))
    return sets


def _intercept_index(X: np.ndarray) -> int | None:
    for j in range(X.shape[1]):
        col = X[:, j]
        if np.all(col == 1.0):
            return j
    return None


def _separation_check(X, y, w, columns):
    pos = w > 0
    Xp, yp = X[pos], y[pos]
    if yp.min() == yp.max():
        raise SeparationError(columns[_intercept_index(X) or 0], f"outcome is constant ({int(yp[0])})")
    has_const = _intercept_index(X) is not None
    for j, name in enumerate(columns):
        col = Xp[:, j]
        if not np.isin(col, (0.0, 1.0)).all():
            continue
        on = col == 1
        if on.all() or not on.any():
            continue
        y_on = yp[on]
        if y_on.min() == y_on.max():
            raise SeparationError(name, f"outcome constant ({int(y_on[0])}) where column is 1")
        if has_const:
            y_off = yp[~on]
            if y_off.min() == y_off.max():
                raise SeparationError(name, f"outcome constant ({int(y_off[0])}) where column is 0")


# ---------------------------------------------------------------------------
# fitting

def fit_glm(design: DesignMatrix, y, link: str = "probit", small_sample: bool = False,
            max_iter: int = MAX_ITER, check: bool = True) -> FittedModel:
    """Maximum-likelihood fit of a weighted probit or logit.

    Raises :class:`SeparationError`, :class:`CollinearityError` or
    :class:`ConvergenceError`; nothing is dropped silently.
    """
    if link not in LINKS:
        raise ValueError(f"link must be one of {LINKS}")
    X, w, cols = design.X, design.weights, design.columns
    y = np.asarray(y, dtype=float)
    if y.shape != (len(X),):
        raise ValidationError("y must have one entry per design row")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValidationError("y must be binary 0/1")
    pos = w > 0
    if check:
        sets = collinearity_sets(X[pos], cols)
        if sets:
            raise CollinearityError(sets)
        _separation_check(X, y, w, cols)

    ybar = float(np.sum(w * y) / np.sum(w))
    # Newton runs on max-abs scaled columns for conditioning; gradients are
    # reported and tested on the original scale
    scale = np.abs(X).max(axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    bs = np.zeros(X.shape[1])
    j0 = _intercept_index(X)
    if j0 is not None:
        bs[j0] = inverse_link(ybar, link) * scale[j0]

    ll, gs, Hs = loglik_grad_hessian(Xs, y, bs, link, w)
    gmax = float(np.max(np.abs(gs / scale)))
    trace = [{"iter": 0, "loglik": ll, "grad_max": gmax}]
    converged = False
    notes = []
    it = 0
    for it in range(1, max_iter + 1):
        if gmax < GRAD_TOL:
            converged = True
            it -= 1
            break
        try:
            step = linalg.solve(-Hs, gs, assume_a="sym")
        except (linalg.LinAlgError, ValueError) as exc:
            raise SingularHessianError("Hessian is singular; check collinearity") from exc
        decrement = 0.5 * float(gs @ step)
        if decrement <= DECREMENT_TOL * max(1.0, abs(ll)):
            converged = True
            it -= 1
            notes.append(f"stopped on Newton decrement {decrement:.3g} with max |gradient| {gmax:.3g}")
            break
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = bs + t * step
            ll_new, g_new, H_new = loglik_grad_hessian(Xs, y, cand, link, w)
            gmax_new = float(np.max(np.abs(g_new / scale)))
            if np.isfinite(ll_new) and (ll_new > ll or (ll_new == ll and gmax_new < gmax)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # step underflow: no ascent left at machine precision
            converged = True
            notes.append(f"stopped on step underflow with max |gradient| {gmax:.3g}")
            trace.append({"iter": it, "loglik": ll, "grad_max": gmax, "step": 0.0})
            break
        bs, ll, gs, Hs, gmax = cand, ll_new, g_new, H_new, gmax_new
        trace.append({"iter": it, "loglik": ll, "grad_max": gmax, "step": t})
    else:
        converged = gmax < GRAD_TOL
    beta = bs / scale
    if not converged:
        big = int(np.argmax(np.abs(beta)))
        if np.abs(beta[big]) > 15:
            raise SeparationError(cols[big], "coefficient diverging")
        raise ConvergenceError(f"no convergence after {max_iter} iterations", trace)
    g = gs / scale

    if link == "probit":
        eta = X[pos] @ beta
        if np.any(np.abs(eta) > PROBIT_WARN_BOUND):
            msg = f"linear predictor beyond +/-{PROBIT_WARN_BOUND:g} at the optimum"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)

    cov = _sandwich_from_parts(Xs, y, bs, link, w, design.clusters, Hs, small_sample) / np.outer(scale, scale)
    null_ll = _null_loglik(y, w)
    return FittedModel(
        link=link,
        params=pd.Series(beta, index=list(cols)),
        cov=pd.DataFrame(cov, index=list(cols), columns=list(cols)),
        loglik=float(ll),
        null_loglik=null_ll,
        nobs=int(pos.sum()),
        n_clusters=int(len(np.unique(design.clusters[pos]))),
        iterations=it,
        grad_norm=float(np.max(np.abs(g))),
        converged=True,
        sum_weights=float(w.sum()),
        notes=tuple(notes),
    )


def _null_loglik(y, w) -> float:
    ybar = float(np.sum(w * y) / np.sum(w))
    if ybar <= 0 or ybar >= 1:
        return 0.0
    return float(np.sum(w * (y * np.log(ybar) + (1 - y) * np.log1p(-ybar))))


def _cluster_sums(S: np.ndarray, clusters: np.ndarray) -> np.ndarray:
    _, inv = np.unique(clusters, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    inv_sorted = inv[order]
    starts = np.flatnonzero(np.r_[True, inv_sorted[1:] != inv_sorted[:-1]])
    return np.add.reduceat(S[order], starts, axis=0)


def scores(X, y, beta, link: str, weights=None) -> np.ndarray:
    """Per-row weighted score contributions (n x k)."""
    X = np.asarray(X, dtype=float)
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    eta = X @ beta
    _, d1, _ = _row_terms(eta, np.asarray(y, dtype=float), link)
    return X * (w * d1)[:, None]


def _sandwich_from_parts(X, y, beta, link, w, clusters, H, small_sample):
    S = scores(X, y, beta, link, w)
    pos = w > 0
    G = _cluster_sums(S[pos], clusters[pos])
    B = G.T @ G
    try:
        Hinv = linalg.inv(-H)
    except linalg.LinAlgError as exc:
        raise SingularHessianError("Hessian is singular; run collinearity_sets on the design") from exc
    V = Hinv @ B @ Hinv
    V = 0.5 * (V + V.T)
    if small_sample:
        g = G.shape[0]
        if g > 1:
            V *= g / (g - 1)
    return V


def cluster_sandwich(X, y, beta, link: str, weights, cluster_ids, small_sample: bool = False) -> np.ndarray:
    """Cluster-robust covariance ``H^-1 B H^-1`` at ``beta``.

    ``small_sample`` applies the ``G/(G-1)`` factor.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    _, _, H = loglik_grad_hessian(X, y, beta, link, w)
    if np.linalg.matrix_rank(H) < H.shape[0]:
        raise SingularHessianError("Hessian is singular; run collinearity_sets on the design")
    return _sandwich_from_parts(X, y, np.asarray(beta, float), link, w, np.asarray(cluster_ids), H, small_sample)


# ---------------------------------------------------------------------------
# fixed-effects linear probability model

def within_demean(values: np.ndarray, units: np.ndarray, weights=None) -> np.ndarray:
    """Subtract (weighted) unit means from each column."""
    values = np.asarray(values, dtype=float)
    squeeze = values.ndim == 1
    V = values[:, None] if squeeze else values
    w = np.ones(len(V)) if weights is None else np.asarray(weights, dtype=float)
    _, inv = np.unique(units, return_inverse=True)
    sw = np.bincount(inv, weights=w)
    means = np.column_stack([np.bincount(inv, weights=w * V[:, j]) for j in range(V.shape[1])])
    means = means / np.where(sw > 0, sw, 1.0)[:, None]
    out = V - means[inv]
    return out[:, 0] if squeeze else out


def fe_lpm(design: DesignMatrix, y, unit_ids, small_sample: bool = False) -> FittedModel:
    """Within-unit OLS (optionally weighted) with covariance clustered by unit.

    ``design`` should not contain an intercept; it is absorbed by the unit
    effects.  Singleton units drop out of the within transformation.
    """
    X, w, cols = design.X, design.weights, design.columns
    y = np.asarray(y, dtype=float)
    units = np.asarray(unit_ids)
    _, inv, counts = np.unique(units, return_inverse=True, return_counts=True)
    if not (counts >= 2).any():
        raise EstimationError("every unit is a singleton; fixed effects identify nothing")
    keep = (counts[inv] >= 2) & (w > 0)
    Xd = within_demean(X[keep], units[keep], w[keep])
    yd = within_demean(y[keep], units[keep], w[keep])
    wk = w[keep]
    sets = collinearity_sets(Xd, cols)
    if sets:
        raise CollinearityError(sets)
    XtX = (Xd * wk[:, None]).T @ Xd
    beta = linalg.solve(XtX, (Xd * wk[:, None]).T @ yd, assume_a="sym")
    resid = yd - Xd @ beta
    S = Xd * (wk * resid)[:, None]
    G = _cluster_sums(S, units[keep])
    bread = linalg.inv(XtX)
    V = bread @ (G.T @ G) @ bread
    V = 0.5 * (V + V.T)
    if small_sample and G.shape[0] > 1:
        V *= G.shape[0] / (G.shape[0] - 1)
    return FittedModel(
        link="linear",
        params=pd.Series(beta, index=list(cols)),
        cov=pd.DataFrame(V, index=list(cols), columns=list(cols)),
        loglik=float("nan"),
        null_loglik=float("nan"),
        nobs=int(keep.sum()),
        n_clusters=int(G.shape[0]),
        iterations=1,
        grad_norm=0.0,
        sum_weights=float(wk.sum()),
    )


def wald_test(model: FittedModel, terms=None, R=None, r=None) -> dict:
    """Joint Wald test of ``R beta = r`` (default: listed ``terms`` are all zero)."""
    names = list(model.params.index)
    if R is None:
        if not terms:
            raise ValueError("give terms or R")
        R = np.zeros((len(terms), len(names)))
        for i, t in enumerate(terms):
            R[i, names.index(t)] = 1.0
        labels = list(terms)
    else:
        R = np.atleast_2d(np.asarray(R, dtype=float))
        labels = [f"restriction_{i}" for i in range(R.shape[0])]
    q = R.shape[0]
    r = np.zeros(q) if r is None else np.asarray(r, dtype=float)
    rank = np.linalg.matrix_rank(R)
    if rank < q:
        dep = collinearity_sets(R.T, labels)
        raise WaldRankError(labels, [x for s in dep for x in s])
    diff = R @ model.params.to_numpy() - r
    RVR = R @ model.cov.to_numpy() @ R.T
    if np.linalg.matrix_rank(RVR) < q:
        raise WaldRankError(labels, labels)
    stat = float(diff @ linalg.solve(RVR, diff, assume_a="sym"))
    return {"statistic": stat, "df": q, "p": float(stats.chi2.sf(stat, q)), "terms": labels}
