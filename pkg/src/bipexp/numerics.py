"""Least squares and kernel ridge regression used by the estimators.

Both routines are deliberately strict about failure: rank deficiency names
the offending columns instead of silently pseudo-inverting, and a singular
kernel system says to raise the ridge instead of returning garbage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.spatial.distance import cdist, pdist

from .errors import NumericalError, RankDeficiencyError

# Singular values below RANK_TOL * largest count as zero.
RANK_TOL = 1e-10

DEFAULT_RIDGE = 1e-3

# Cap on the number of points entering the median-distance heuristic.
_BANDWIDTH_SAMPLE = 1500


@dataclass(frozen=True)
class DesignMatrix:
    """A regressor matrix with named columns (names surface in errors)."""

    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("design matrix must be 2-d")
        if len(self.labels) != values.shape[1]:
            raise ValueError("need one label per column")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class LinearFit:
    """OLS result: coefficients, residuals, and homoskedastic covariance."""

    coef: np.ndarray
    residuals: np.ndarray
    coef_cov: np.ndarray
    sigma2: float
    labels: tuple[str, ...]
    rank: int

    def predict(self, x) -> np.ndarray:
        x = x.values if isinstance(x, DesignMatrix) else np.asarray(x, dtype=np.float64)
        return x @ self.coef


def _coerce_design(x, labels):
    if isinstance(x, DesignMatrix):
        return x.values, x.labels
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("design matrix must be 2-d")
    if labels is None:
        labels = tuple(f"x{k}" for k in range(x.shape[1]))
    return x, tuple(labels)


def ols(x, y, *, labels=None, rank_tol: float = RANK_TOL) -> LinearFit:
    """Ordinary least squares through a pivoted QR decomposition.

    Parameters
    ----------
    x : ndarray (n, k) or DesignMatrix
    y : ndarray (n,)
    rank_tol : float
        Relative threshold on the R diagonal for rank detection.

    Raises
    ------
    RankDeficiencyError
        Numerically collinear columns; the error lists their labels.
    ValueError
        Fewer observations than columns, or non-finite entries.
    """
    x, labels = _coerce_design(x, labels)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, k = x.shape
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if n < k:
        raise ValueError(f"need at least as many observations ({n}) as columns ({k})")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("design matrix and response must be finite")

    q, r, piv = sla.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    threshold = rank_tol * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > threshold)) if diag.size else 0
    if rank < k:
        culprits = tuple(labels[j] for j in piv[rank:])
        raise RankDeficiencyError(
            f"design matrix is rank deficient (rank {rank} of {k}); "
            f"collinear columns: {', '.join(culprits)}",
            columns=culprits,
        )

    z = sla.solve_triangular(r, q.T @ y)
    coef = np.empty(k)
    coef[piv] = z
    residuals = y - x @ coef
    dof = n - k
    sigma2 = float(residuals @ residuals / dof) if dof > 0 else 0.0
    r_inv = sla.solve_triangular(r, np.eye(k))
    xtx_inv_piv = r_inv @ r_inv.T
    xtx_inv = np.empty((k, k))
    xtx_inv[np.ix_(piv, piv)] = xtx_inv_piv
    cov = sigma2 * xtx_inv
    cov = (cov + cov.T) / 2.0
    return LinearFit(
        coef=coef,
        residuals=residuals,
        coef_cov=cov,
        sigma2=sigma2,
        labels=labels,
        rank=rank,
    )


@dataclass(frozen=True)
class KernelFit:
    """Kernel ridge fit over standardized inputs.

    Training inputs are standardized to unit variance, duplicate rows are
    collapsed into one weighted point (the ridge objective depends on the
    data only through per-point counts and mean targets, so predictions
    are identical to the uncollapsed fit), and the dual weights are solved
    against the collapsed system.
    """

    points: np.ndarray  # (g, d) distinct standardized inputs
    dual: np.ndarray  # (g,)
    bandwidth: np.ndarray  # (d,) per-feature length scales
    ridge: float
    center: np.ndarray
    scale: np.ndarray
    target_center: float


def _standardize_params(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)  # constant features pass through
    return center, scale


def median_pairwise_distance(points: np.ndarray) -> float:
    """Median euclidean distance between distinct point pairs (0 if degenerate)."""
    if points.shape[0] > _BANDWIDTH_SAMPLE:
        stride = int(np.ceil(points.shape[0] / _BANDWIDTH_SAMPLE))
        points = points[::stride]
    if points.shape[0] < 2:
        return 0.0
    return float(np.median(pdist(points)))


def krr_fit(
    x,
    y,
    *,
    bandwidth=None,
    bandwidth_scale=1.0,
    ridge: float = DEFAULT_RIDGE,
) -> KernelFit:
    """Fit kernel ridge regression with a Gaussian kernel.

    Targets are centered before solving and the mean is added back at
    prediction time, so the ridge penalty shrinks toward the sample mean
    rather than toward zero.

    Parameters
    ----------
    x : ndarray (n, d)
        Inputs; standardized internally to unit variance per feature.
    y : ndarray (n,)
    bandwidth : float or (d,) array, optional
        Kernel length scale on the standardized inputs; a vector gives
        each feature its own scale. Defaults to the median pairwise
        distance among the distinct standardized inputs, times
        ``bandwidth_scale``.
    bandwidth_scale : float or (d,) array
        Multiplier applied to the median heuristic. Ignored when an
        explicit bandwidth is given.
    ridge : float
        Regularization strength (must be positive).

    Raises
    ------
    NumericalError
        The regularized kernel system could not be factorized; a larger
        ridge is the usual fix.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("x must be (n, d) and y (n,)")
    if x.shape[0] == 0:
        raise ValueError("need at least one observation")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs and targets must be finite")
    if ridge <= 0:
        raise ValueError("ridge must be positive")

    center, scale = _standardize_params(x)
    xs = (x - center) / scale

    points, inverse = np.unique(xs, axis=0, return_inverse=True)
    counts = np.bincount(inverse).astype(np.float64)
    ybar = np.bincount(inverse, weights=y) / counts

    d = x.shape[1]
    if bandwidth is None:
        scale_vec = np.broadcast_to(np.asarray(bandwidth_scale, dtype=np.float64), (d,))
        if np.any(scale_vec <= 0):
            raise ValueError("bandwidth_scale must be positive")
        base = median_pairwise_distance(points)
        bandwidth = scale_vec * (base if base > 0 else 1.0)
    else:
        bandwidth = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (d,))
    if np.any(bandwidth <= 0):
        raise ValueError("bandwidth must be positive")
    bandwidth = np.ascontiguousarray(bandwidth)
    bandwidth.setflags(write=False)

    target_center = float(y.mean())
    scaled = points / bandwidth
    gram = np.exp(-0.5 * cdist(scaled, scaled, "sqeuclidean"))
    # collapsed normal equations: (K + ridge * diag(1/counts)) alpha = ybar - y0
    system = gram + ridge * np.diag(1.0 / counts)
    try:
        cho = sla.cho_factor(system)
        dual = sla.cho_solve(cho, ybar - target_center)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"kernel system is numerically singular ({exc}); increase ridge"
        ) from exc
    return KernelFit(
        points=points,
        dual=dual,
        bandwidth=bandwidth,
        ridge=float(ridge),
        center=center,
        scale=scale,
        target_center=target_center,
    )


def krr_predict(fit: KernelFit, x) -> np.ndarray:
    """Evaluate a kernel ridge fit at new inputs (n, d)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != fit.points.shape[1]:
        raise ValueError(f"x must be (n, {fit.points.shape[1]})")
    xs = (x - fit.center) / fit.scale
    k = np.exp(-0.5 * cdist(xs / fit.bandwidth, fit.points / fit.bandwidth, "sqeuclidean"))
    return k @ fit.dual + fit.target_center
