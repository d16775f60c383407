"""Uncertainty quantification for exposure-response estimates.

Three routes:

* resampling the outcome units (naive bootstrap, or block bootstrap over
  graph components when interference makes rows dependent),
* the asymptotic normal interval for regression coefficients,
* a parametric bootstrap that rebuilds outcomes from a fitted
  two-component error model (unit-level noise plus noise propagated from
  the diversion side through the graph), which stays honest when the
  naive bootstrap's independence assumption fails.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import stats

from .errors import DataError, NumericalError
from .estimators import Dataset
from .graph import BipartiteGraph, connected_components
from .seeding import as_generator

DEFAULT_LEVEL = 0.95
MIN_BOOTSTRAP = 50
MAX_FAILURE_SHARE = 0.01


@dataclass(frozen=True)
class IntervalEstimate:
    estimate: float
    lower: float
    upper: float
    level: float
    method: str
    n_replicates: int = 0

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError("confidence level must be in (0, 1)")
        if not self.lower <= self.upper:
            raise ValueError("interval endpoints out of order")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "method": self.method,
            "n_replicates": self.n_replicates,
        }


def _quantile_interval(
    estimate: float,
    replicates: np.ndarray,
    level: float,
    method: str,
    interval: str,
) -> IntervalEstimate:
    alpha = 1.0 - level
    lo, hi = np.quantile(replicates, [alpha / 2, 1 - alpha / 2])
    if interval == "percentile":
        lower, upper = float(lo), float(hi)
    elif interval == "basic":
        lower, upper = 2 * estimate - float(hi), 2 * estimate - float(lo)
    else:
        raise ValueError(f"unknown interval type {interval!r}")
    return IntervalEstimate(
        estimate=estimate,
        lower=lower,
        upper=upper,
        level=level,
        method=method,
        n_replicates=int(replicates.size),
    )


def _run_replicates(data, statistic, sampler, n_replicates, rng, method):
    """Shared bootstrap loop with a failure census."""
    if n_replicates < MIN_BOOTSTRAP:
        raise ValueError(f"need at least {MIN_BOOTSTRAP} replicates, got {n_replicates}")
    values = np.empty(n_replicates)
    failures = 0
    for b in range(n_replicates):
        idx = sampler(rng)
        try:
            values[b] = float(statistic(data.take(idx)))
        except (DataError, NumericalError):
            failures += 1
            values[b] = np.nan
    if failures > MAX_FAILURE_SHARE * n_replicates:
        raise DataError(
            f"{method} bootstrap: {failures}/{n_replicates} replicates failed; "
            "the statistic is too fragile for this resampling scheme"
        )
    return values[np.isfinite(values)]


def naive_bootstrap(
    data: Dataset,
    statistic,
    *,
    n_replicates: int = 200,
    level: float = DEFAULT_LEVEL,
    interval: str = "percentile",
    rng=None,
) -> IntervalEstimate:
    """IID resample of outcome units; valid only without cross-unit noise."""
    rng = as_generator(rng)
    estimate = float(statistic(data))
    n = data.n_units

    def sampler(r):
        return r.integers(0, n, size=n)

    reps = _run_replicates(data, statistic, sampler, n_replicates, rng, "naive")
    return _quantile_interval(estimate, reps, level, "naive-bootstrap", interval)


def block_bootstrap(
    data: Dataset,
    statistic,
    *,
    labels: np.ndarray | None = None,
    n_replicates: int = 200,
    level: float = DEFAULT_LEVEL,
    interval: str = "percentile",
    rng=None,
) -> IntervalEstimate:
    """Resample whole graph components to respect within-component dependence.

    Blocks default to the graph's connected components; pass `labels` (one
    integer per outcome unit) to override. Requires at least 5 blocks with
    no single block holding more than half the outcome units; blocks are
    drawn with replacement until at least n rows are collected, then
    truncated to n.
    """
    rng = as_generator(rng)
    if labels is None:
        _, out_labels, _ = connected_components(data.graph)
    else:
        out_labels = np.asarray(labels)
        if out_labels.shape != (data.n_units,):
            raise ValueError("labels must assign one block per outcome unit")
    uniq = np.unique(out_labels)
    blocks = [np.flatnonzero(out_labels == c) for c in uniq]
    if len(blocks) < 5:
        raise DataError(
            f"block bootstrap needs at least 5 graph components, found {len(blocks)}"
        )
    n = data.n_units
    if max(len(b) for b in blocks) > 0.5 * n:
        raise DataError(
            "block bootstrap is unreliable when one component holds more than "
            "half the outcome units"
        )
    estimate = float(statistic(data))

    def sampler(r):
        chosen: list[np.ndarray] = []
        total = 0
        while total < n:
            b = blocks[int(r.integers(0, len(blocks)))]
            chosen.append(b)
            total += len(b)
        return np.concatenate(chosen)[:n]

    reps = _run_replicates(data, statistic, sampler, n_replicates, rng, "block")
    return _quantile_interval(estimate, reps, level, "block-bootstrap", interval)


def ols_asymptotic_interval(
    fit,
    column: int,
    *,
    level: float = DEFAULT_LEVEL,
) -> IntervalEstimate:
    """Normal-theory interval for one regression coefficient."""
    se = float(np.sqrt(fit.coef_cov[column, column]))
    z = float(stats.norm.ppf(0.5 + level / 2))
    est = float(fit.coef[column])
    return IntervalEstimate(
        estimate=est,
        lower=est - z * se,
        upper=est + z * se,
        level=level,
        method="ols-asymptotic",
    )


# -- two-component error model ------------------------------------------------


@dataclass(frozen=True)
class ErrorVarianceEstimates:
    """Split of residual variance into unit-level and graph-propagated parts."""

    sigma2_eps: float
    sigma2_gamma: float
    clipped: bool
    sigma2_gamma_raw: float


def estimate_sigmas(
    y: np.ndarray,
    phi: np.ndarray,
    graph: BipartiteGraph,
    *,
    ddof_correction: bool = True,
) -> ErrorVarianceEstimates:
    """Method-of-moments split of residual variance.

    Regresses y on the design, then the residuals on the graph's dense
    columns; the remaining scatter identifies the unit-level variance and
    the explained mass, rescaled by the graph's total squared weight,
    identifies the variance of the diversion-side noise. A negative
    diversion-side estimate is clipped to zero and flagged.

    With `ddof_correction` (default), both divisors account for degrees of
    freedom absorbed by the graph regression and by the design fit; the
    plain /n moment versions are available with `ddof_correction=False`.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[0] != y.size:
        raise ValueError("design must be a matrix aligned with y")
    coef, _, design_rank, _ = np.linalg.lstsq(phi, y, rcond=None)
    return _split_residual_variance(
        y - phi @ coef, graph, int(design_rank), ddof_correction
    )


def _split_residual_variance(
    residuals: np.ndarray,
    graph: BipartiteGraph,
    design_rank: int,
    ddof_correction: bool,
) -> ErrorVarianceEstimates:
    u = np.ascontiguousarray(residuals, dtype=np.float64)
    n = u.size
    if n != graph.n_outcome:
        raise ValueError("residuals must align with the graph's outcome units")
    w = graph.to_dense()
    coef, _, w_rank, _ = np.linalg.lstsq(w, u, rcond=None)
    eps_hat = u - w @ coef
    rss = float(eps_hat @ eps_hat)
    if ddof_correction:
        dof = n - int(w_rank) - int(design_rank)
        if dof <= 0:
            raise DataError("no residual degrees of freedom left for variance estimation")
        sigma2_eps = rss / dof
        # The graph regression's own fit to pure noise inflates the explained
        # mass by sigma2_eps * rank(W); subtract it before rescaling.
        explained = float(u @ u) - rss
        numer = explained - sigma2_eps * float(w_rank)
    else:
        sigma2_eps = rss / n
        numer = float(u @ u) - n * sigma2_eps
    denom = graph.sum_squared_weights()
    if denom <= 0:
        raise DataError("graph has no edges; diversion-side variance is unidentified")
    raw = numer / denom
    clipped = raw < 0
    return ErrorVarianceEstimates(
        sigma2_eps=float(sigma2_eps),
        sigma2_gamma=float(max(raw, 0.0)),
        clipped=bool(clipped),
        sigma2_gamma_raw=float(raw),
    )


def correlated_error_variance(
    phi: np.ndarray,
    graph: BipartiteGraph,
    sigma2_eps: float,
    sigma2_gamma: float,
) -> np.ndarray:
    """Asymptotic covariance of sqrt(n) * (coef - truth) under the model
    Y = phi @ beta + W @ gamma + eps with iid eps and iid gamma."""
    phi = np.asarray(phi, dtype=np.float64)
    n = phi.shape[0]
    q = phi.T @ phi / n
    try:
        q_inv = np.linalg.inv(q)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("design moment matrix is singular") from exc
    wt_phi = graph.to_csr().T @ phi  # (m, k)
    q_cross = wt_phi.T @ wt_phi / n
    cov = sigma2_eps * q_inv + sigma2_gamma * (q_inv @ q_cross @ q_inv)
    return (cov + cov.T) / 2.0


@dataclass(frozen=True)
class ParametricBootstrapResult:
    estimate: float
    interval: IntervalEstimate
    sigmas: ErrorVarianceEstimates
    replicates: np.ndarray
    coef: np.ndarray
    coef_replicates: np.ndarray


def parametric_bootstrap(
    data: Dataset,
    phi: np.ndarray,
    target: np.ndarray,
    *,
    contrast: np.ndarray | None = None,
    n_replicates: int = 200,
    level: float = DEFAULT_LEVEL,
    interval: str = "percentile",
    ddof_correction: bool = True,
    rng=None,
) -> ParametricBootstrapResult:
    """Model-based bootstrap for a linear fit under graph-propagated noise.

    Fits target ~ phi, splits the residual variance with `estimate_sigmas`,
    then repeatedly rebuilds synthetic targets
    phi @ coef + W @ gamma_b + eps_b and refits. The interval is formed
    from quantiles of the replicate contrasts (default contrast: last
    column minus first, the endpoint difference).
    """
    rng = as_generator(rng)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    n, k = phi.shape
    if target.shape != (n,):
        raise ValueError("target must align with the design's rows")
    if contrast is None:
        contrast = np.zeros(k)
        contrast[0] = -1.0
        contrast[-1] = 1.0
    contrast = np.asarray(contrast, dtype=np.float64)

    q, r = sla.qr(phi, mode="economic")
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise NumericalError("design matrix is rank deficient; cannot refit replicates")
    coef = sla.solve_triangular(r, q.T @ target)
    resid = target - phi @ coef
    sigmas = _split_residual_variance(resid, data.graph, k, ddof_correction)
    estimate = float(contrast @ coef)

    w = data.graph.to_csr()
    m = data.graph.m_diversion
    if n_replicates < MIN_BOOTSTRAP:
        raise ValueError(f"need at least {MIN_BOOTSTRAP} replicates, got {n_replicates}")
    gamma = rng.normal(0.0, np.sqrt(sigmas.sigma2_gamma), size=(m, n_replicates))
    eps = rng.normal(0.0, np.sqrt(sigmas.sigma2_eps), size=(n, n_replicates))
    targets = (phi @ coef)[:, None] + w @ gamma + eps
    coef_reps = sla.solve_triangular(r, q.T @ targets)  # (k, B)
    reps = contrast @ coef_reps
    iv = _quantile_interval(estimate, reps, level, "parametric-bootstrap", interval)
    return ParametricBootstrapResult(
        estimate=estimate,
        interval=iv,
        sigmas=sigmas,
        replicates=np.asarray(reps),
        coef=np.asarray(coef),
        coef_replicates=np.asarray(coef_reps),
    )
