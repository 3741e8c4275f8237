"""Multinomial logistic regression, multi-replicate inference and the simulation DGP."""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .metrics import SSSOutcome, classify_sss
from .tables import AttributeSchema, Dataset

log = logging.getLogger(__name__)

SCORE_TOL = 1e-8
MAX_ITER = 100
# Past these, the MLE is treated as nonexistent (separation) or unidentified.
MAX_ABS_COEF = 15.0
MAX_CONDITION = 1e12


@dataclass
class FitResult:
    coefficients: np.ndarray
    variances: np.ndarray
    converged: bool
    n_obs: int
    names: list[str] = field(default_factory=list)
    loglik: float = float("nan")
    iterations: int = 0
    diagnostic: str = ""


@dataclass
class CombinedInference:
    name: str
    estimate: float
    variance: float
    within: float
    between: float
    dof: float
    ci_low: float
    ci_high: float
    p_value: float


def design_matrix(dataset: Dataset, covariates: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    """Intercept plus treatment dummies (reference = level 0) for each covariate."""
    cols = [np.ones(dataset.n)]
    names = ["(Intercept)"]
    for c in covariates:
        x = dataset.column(c)
        for lvl in range(1, dataset.schema.cardinality(c)):
            cols.append((x == lvl).astype(float))
            names.append(f"{c}={lvl}")
    return np.column_stack(cols), names


def multinomial_loglik(beta: np.ndarray, X: np.ndarray, y: np.ndarray, n_classes: int) -> float:
    """Log-likelihood with class 0 as reference; ``beta`` is (n_classes - 1) x d, flattened."""
    eta = _eta(beta, X, n_classes)
    return float(eta[np.arange(len(y)), y].sum() - _logsumexp(eta).sum())


def multinomial_score(beta: np.ndarray, X: np.ndarray, y: np.ndarray, n_classes: int) -> np.ndarray:
    P = _probs(beta, X, n_classes)
    Y = np.eye(n_classes)[y]
    return ((Y - P)[:, 1:].T @ X).reshape(-1)


def multinomial_information(beta: np.ndarray, X: np.ndarray, n_classes: int) -> np.ndarray:
    """Observed (= expected) information, the negative Hessian of the log-likelihood."""
    P = _probs(beta, X, n_classes)[:, 1:]
    J, d = n_classes - 1, X.shape[1]
    info = np.empty((J * d, J * d))
    for a in range(J):
        for b in range(J):
            w = P[:, a] * ((a == b) - P[:, b])
            info[a * d:(a + 1) * d, b * d:(b + 1) * d] = X.T @ (X * w[:, None])
    return info


def _eta(beta, X, n_classes):
    B = np.asarray(beta, dtype=float).reshape(n_classes - 1, X.shape[1])
    return np.column_stack([np.zeros(len(X)), X @ B.T])


def _logsumexp(eta):
    mx = eta.max(axis=1)
    return mx + np.log(np.exp(eta - mx[:, None]).sum(axis=1))


def _probs(beta, X, n_classes):
    eta = _eta(beta, X, n_classes)
    return np.exp(eta - _logsumexp(eta)[:, None])


def fit_multinomial_logit(dataset: Dataset, outcome: str, covariates: Sequence[str],
                          trace: list | None = None) -> FitResult:
    """Maximum likelihood by Newton-Raphson with step halving.

    Non-existent or unidentified estimates (separation, empty covariate
    levels) come back with ``converged=False`` and a diagnostic rather than
    raising; callers drop such fits.  ``trace`` collects the log-likelihood of
    each accepted iterate, starting from beta = 0.
    """
    K = dataset.schema.cardinality(outcome)
    X, xnames = design_matrix(dataset, covariates)
    y = dataset.column(outcome)
    names = [f"{outcome}={j}:{x}" for j in range(1, K) for x in xnames]
    dim = len(names)
    beta = np.zeros(dim)
    ll = multinomial_loglik(beta, X, y, K)
    if trace is not None:
        trace.append(ll)

    def failed(why, it):
        log.debug("multinomial fit failed: %s", why)
        return FitResult(beta, np.full(dim, np.nan), False, dataset.n, names, ll, it, why)

    if dataset.n == 0:
        return failed("no observations", 0)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        score = multinomial_score(beta, X, y, K)
        if np.abs(score).max() < SCORE_TOL:
            converged = True
            break
        info = multinomial_information(beta, X, K)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            return failed("singular information matrix", it)
        # near the optimum a full step can lower ll by rounding noise alone; halving
        # against that noise would stall the iteration at large n
        slack = 64 * np.finfo(float).eps * max(1.0, abs(ll))
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_new = multinomial_loglik(cand, X, y, K)
            if ll_new >= ll - slack:
                break
            t /= 2
        else:
            if np.abs(step).max() < 1e-10:
                converged = True
                break
            return failed("step halving could not increase the log-likelihood", it)
        beta, ll = cand, ll_new
        if trace is not None:
            trace.append(ll)
        if np.abs(beta).max() > MAX_ABS_COEF:
            return failed("coefficients diverging (separation)", it)
    if not converged:
        return failed(f"no convergence in {MAX_ITER} iterations", it)

    info = multinomial_information(beta, X, K)
    if not np.all(np.isfinite(info)) or np.linalg.cond(info) > MAX_CONDITION:
        return failed("ill-conditioned information matrix", it)
    cov = np.linalg.inv(info)
    return FitResult(beta, np.diag(cov).copy(), True, dataset.n, names, ll, it)


def combine(fits: Sequence[FitResult], alpha: float = 0.05) -> list[CombinedInference]:
    """Pool estimates from m synthetic replicates.

    Point estimate is the mean, variance B/m + W (B between-replicate with an
    (m-1) denominator, W mean within-replicate variance), and inference uses a
    t distribution with (m-1)(1 + mW/B)^2 degrees of freedom; B = 0 gives
    infinite degrees of freedom (normal quantiles).
    """
    good = [f for f in fits if f.converged]
    if len(good) < 2:
        raise ValueError(f"need at least 2 converged fits, got {len(good)} of {len(fits)}")
    m = len(good)
    est = np.array([f.coefficients for f in good])
    var = np.array([f.variances for f in good])
    names = good[0].names
    out = []
    for j in range(est.shape[1]):
        bbar = float(est[:, j].mean())
        W = float(var[:, j].mean())
        B = float(est[:, j].var(ddof=1))
        V = B / m + W
        dof = (m - 1) * (1 + m * W / B) ** 2 if B > 0 else math.inf
        q = _quantile(1 - alpha / 2, dof)
        se = math.sqrt(V)
        p = _two_sided_p(bbar, se, dof)
        out.append(CombinedInference(names[j] if names else str(j), bbar, V, W, B, dof,
                                     bbar - q * se, bbar + q * se, p))
    return out


def _quantile(prob, dof):
    return float(stats.norm.ppf(prob) if math.isinf(dof) else stats.t.ppf(prob, dof))


def _two_sided_p(est, se, dof):
    if se == 0:
        return 0.0 if est != 0 else 1.0
    z = abs(est) / se
    return float(2 * (stats.norm.sf(z) if math.isinf(dof) else stats.t.sf(z, dof)))


def signs_match(a: float, b: float) -> bool:
    """A zero estimate matches either sign."""
    return a == 0 or b == 0 or (a > 0) == (b > 0)


def sss_report(original: Dataset, replicates: Sequence[Dataset], outcome: str,
               covariates: Sequence[str], alpha: float = 0.05) -> dict:
    """SSS category of every coefficient of the outcome model.

    The original fit is tested with Wald z statistics; the synthetic side uses
    the combined t inference.  Replicates whose fit fails are dropped and
    listed.
    """
    orig = fit_multinomial_logit(original, outcome, covariates)
    if not orig.converged:
        raise ValueError(f"model does not converge on the original data: {orig.diagnostic}")
    fits = [fit_multinomial_logit(r, outcome, covariates) for r in replicates]
    dropped = [i for i, f in enumerate(fits) if not f.converged]
    pooled = combine(fits, alpha)
    per_coef = {}
    counts = Counter({o.value: 0 for o in SSSOutcome})
    for j, c in enumerate(pooled):
        b0 = float(orig.coefficients[j])
        p0 = _two_sided_p(b0, math.sqrt(orig.variances[j]), math.inf)
        outcome_j = classify_sss(signs_match(b0, c.estimate), p0 < alpha, c.p_value < alpha)
        counts[outcome_j.value] += 1
        per_coef[c.name] = {"original": b0, "original_p": p0, "synthetic": c.estimate,
                            "synthetic_p": c.p_value, "dof": c.dof, "outcome": outcome_j.value}
    return {"alpha": alpha, "counts": dict(counts), "coefficients": per_coef,
            "dropped_replicates": dropped,
            "variance_rule": "V = B/m + W"}


DGP_SCHEMA = AttributeSchema.from_cardinalities([("V1", 2), ("V2", 2), ("V3", 3), ("V4", 3)])

# rows: non-reference outcome levels; columns: intercept, V1, V2 (, 1[V3=1], 1[V3=2])
V2_COEF = np.array([0.5, 1.0])
V3_COEF = np.array([[-1.0, 2.0, 1.0],
                    [0.5, 1.0, -1.0]])
V4_COEF = np.array([[1.5, -1.0, 0.5, 1.0, -2.0],
                    [1.0, -1.5, -0.5, 0.75, -1.0]])


def _draw_categorical(eta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    eta = np.column_stack([np.zeros(len(eta)), eta])
    P = np.exp(eta - _logsumexp(eta)[:, None])
    u = rng.random(len(eta))
    return np.minimum((P.cumsum(axis=1) < u[:, None]).sum(axis=1), P.shape[1] - 1)


def dgp_simulate(n: int, rng: np.random.Generator) -> Dataset:
    """Four-variable simulation design: V1, V2 binary; V3, V4 three-level (codes 0-based)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    v1 = (rng.random(n) < 0.5).astype(np.int64)
    ones = np.ones(n)
    v2 = _draw_categorical((np.column_stack([ones, v1]) @ V2_COEF)[:, None], rng)
    v3 = _draw_categorical(np.column_stack([ones, v1, v2]) @ V3_COEF.T, rng)
    x4 = np.column_stack([ones, v1, v2, v3 == 1, v3 == 2]).astype(float)
    v4 = _draw_categorical(x4 @ V4_COEF.T, rng)
    return Dataset(DGP_SCHEMA, np.column_stack([v1, v2, v3, v4]))
