"""Exposure-response estimators.

The shared input is a `Dataset`: outcomes, realized exposures, the graph,
and a propensity table for the design that generated the exposures. Naive
estimators read only (Y, E). The two-step estimators first fit a surface
for the conditional mean of Y given (exposure, observed score), then
average the surface over each unit's imputed score at the query level;
inverse-propensity weighting reaches the endpoints of the exposure range
directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, MissingCellError
from .gps import ATOM_TOL, Bucketing, GpsTable
from .graph import BipartiteGraph
from .numerics import DesignMatrix, KernelFit, LinearFit, krr_fit, krr_predict, ols

# Scores below this floor are lifted to it before dividing (with a warning).
TRIM_FLOOR = 1e-6


class PropensityTrimWarning(UserWarning):
    """A contributing unit's score was floored before inverse weighting."""


@dataclass(frozen=True)
class Dataset:
    """Aligned per-unit data: outcomes, exposures, graph rows, score rows."""

    y: np.ndarray
    exposure: np.ndarray
    graph: BipartiteGraph
    gps: GpsTable
    source_indices: np.ndarray | None = None

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        exposure = np.ascontiguousarray(self.exposure, dtype=np.float64)
        n = self.graph.n_outcome
        if y.shape != (n,) or exposure.shape != (n,):
            raise ValueError("y and exposure must align with the graph's outcome units")
        if self.gps.n_units != n:
            raise ValueError("gps table must align with the graph's outcome units")
        y.setflags(write=False)
        exposure.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "exposure", exposure)

    @classmethod
    def build(cls, graph, gps, y, exposure, *, drop_isolated: bool = True) -> "Dataset":
        """Assemble a dataset, excluding isolated outcome units.

        An isolated unit's exposure is constantly 0, so its score away from
        0 is 0 and no estimator can say anything about it; such units are
        dropped with a warning rather than silently divided by.
        """
        data = cls(y=y, exposure=exposure, graph=graph, gps=gps)
        isolated = np.flatnonzero(graph.degrees == 0)
        if isolated.size and drop_isolated:
            warnings.warn(
                f"excluded {isolated.size} isolated outcome units from estimation "
                "(no diversion neighbors, exposure identically 0)",
                UserWarning,
                stacklevel=2,
            )
            keep = np.flatnonzero(graph.degrees > 0)
            return data.take(keep)
        return data

    @property
    def n_units(self) -> int:
        return int(self.y.size)

    def take(self, indices) -> "Dataset":
        """Row resample/subset; shares distribution objects with the parent."""
        indices = np.asarray(indices, dtype=np.int64)
        src = self.source_indices if self.source_indices is not None else np.arange(self.n_units)
        return Dataset(
            y=self.y[indices],
            exposure=self.exposure[indices],
            graph=self.graph.take(indices),
            gps=self.gps.take(indices),
            source_indices=np.asarray(src)[indices],
        )

    def observed_scores(self) -> np.ndarray:
        # graph and gps rows are taken alongside y, so no index mapping here
        return self.gps.observed_scores(self.exposure)


# -- naive estimators -------------------------------------------------------


def naive_mean(data: Dataset, e: float, *, tol: float = ATOM_TOL) -> float:
    """Mean outcome among units whose exposure equals e (within tol)."""
    mask = np.abs(data.exposure - e) <= tol
    if not np.any(mask):
        raise DataError(f"no observations at exposure level e={e!r}")
    return float(data.y[mask].mean())


def naive_ols(data: Dataset) -> float:
    """Slope of the regression of Y on (1, E); ignores the graph entirely."""
    e = data.exposure
    if np.ptp(e) <= 0:
        raise DataError("exposure is constant; the naive regression slope is undefined")
    x = DesignMatrix(np.column_stack([np.ones(data.n_units), e]), ("const", "exposure"))
    return float(ols(x, data.y).coef[1])


# -- inverse-propensity weighting -------------------------------------------


def ht_estimate(
    data: Dataset,
    e: float,
    *,
    tol: float = ATOM_TOL,
    trim_floor: float = TRIM_FLOOR,
) -> float:
    """Inverse-propensity estimate of the mean outcome at level e.

    Averages Y_i * 1[E_i = e] / score_i(E_i) over all units. Contributing
    units with scores below `trim_floor` are floored and flagged with a
    `PropensityTrimWarning`, never divided by as-is.
    """
    mask = np.abs(data.exposure - e) <= tol
    if not np.any(mask):
        return 0.0
    scores = data.gps.observed_scores(data.exposure[mask], units=np.flatnonzero(mask))
    floored = scores < trim_floor
    if np.any(floored):
        warnings.warn(
            f"floored {int(floored.sum())} propensity scores below {trim_floor} "
            f"at level e={e!r}",
            PropensityTrimWarning,
            stacklevel=2,
        )
        scores = np.maximum(scores, trim_floor)
    return float(np.sum(data.y[mask] / scores) / data.n_units)


@dataclass(frozen=True)
class HtWeightedRegression:
    """Inverse-propensity estimates recast as one weighted regression.

    Regressing Y_i / sqrt(score_i(E_i)) on indicator columns
    1[E_i = e_r] / sqrt(score_i(e_r)) reproduces the per-level
    inverse-propensity ratios as coefficients, and `fit` carries the
    design so the inference module can resample or perturb it.
    """

    levels: np.ndarray
    estimates: np.ndarray
    fit: LinearFit
    design: np.ndarray
    target: np.ndarray


def ht_weighted_regression(
    data: Dataset,
    grid,
    *,
    tol: float = ATOM_TOL,
    trim_floor: float = TRIM_FLOOR,
) -> HtWeightedRegression:
    """Joint inverse-propensity fit across the exposure levels in `grid`.

    Requires every grid level to have at least one observation and a
    positive imputed score for every unit at every grid level.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a nonempty 1-d vector")
    n = data.n_units
    phi = np.zeros((n, grid.size))
    observed = data.observed_scores()
    floored = observed < trim_floor
    if np.any(floored):
        warnings.warn(
            f"floored {int(floored.sum())} observed propensity scores below {trim_floor}",
            PropensityTrimWarning,
            stacklevel=2,
        )
        observed = np.maximum(observed, trim_floor)
    for r, e in enumerate(grid):
        mask = np.abs(data.exposure - e) <= tol
        if not np.any(mask):
            raise DataError(f"no observations at grid level e={e!r}")
        imputed = data.gps.imputed_scores(e)[mask]
        if np.any(imputed <= 0):
            raise DataError(
                f"grid level e={e!r} has zero propensity for some observed units; "
                "positivity fails"
            )
        phi[mask, r] = 1.0 / np.sqrt(imputed)
    target = data.y / np.sqrt(observed)
    labels = tuple(f"level_{e:g}" for e in grid)
    fit = ols(DesignMatrix(phi, labels), target)
    return HtWeightedRegression(
        levels=grid, estimates=fit.coef.copy(), fit=fit, design=phi, target=target
    )


# -- response surfaces -------------------------------------------------------


def _merge_levels(values: np.ndarray, tol: float) -> np.ndarray:
    u = np.sort(np.unique(values))
    if u.size <= 1:
        return u
    keep = np.concatenate([[True], np.diff(u) > tol])
    return u[keep]


def _locate_level(levels: np.ndarray, value, tol: float) -> np.ndarray:
    """Index of the level matching each value within tol, -1 when none does."""
    value = np.atleast_1d(np.asarray(value, dtype=np.float64))
    pos = np.searchsorted(levels, value)
    best = np.full(value.shape, -1, dtype=np.int64)
    for shift in (0, -1):
        idx = np.clip(pos + shift, 0, levels.size - 1)
        hit = (np.abs(levels[idx] - value) <= tol) & (best < 0)
        best = np.where(hit, idx, best)
    return best


@dataclass(frozen=True)
class CellMeanSurface:
    """Cell-mean response surface over (exposure, score) cells.

    Evaluation returns NaN as the explicit missing marker for empty cells
    and for coordinates that fall outside the table's levels.
    """

    e_levels: np.ndarray
    r_levels: np.ndarray
    values: np.ndarray  # (n_e, n_r), NaN where empty
    counts: np.ndarray
    tol: float = ATOM_TOL

    kind = "cell-means"

    @classmethod
    def from_cells(cls, cells: dict[tuple[float, float], float], *, tol: float = ATOM_TOL):
        """Build directly from {(e, r): value} (counts set to 1)."""
        e_levels = _merge_levels(np.array([k[0] for k in cells]), tol)
        r_levels = _merge_levels(np.array([k[1] for k in cells]), tol)
        values = np.full((e_levels.size, r_levels.size), np.nan)
        counts = np.zeros_like(values)
        for (e, r), v in cells.items():
            ei = _locate_level(e_levels, e, tol)[0]
            ri = _locate_level(r_levels, r, tol)[0]
            values[ei, ri] = v
            counts[ei, ri] = 1
        return cls(e_levels=e_levels, r_levels=r_levels, values=values, counts=counts, tol=tol)

    def evaluate(self, e: float, r: np.ndarray) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=np.float64))
        ei = _locate_level(self.e_levels, e, self.tol)[0]
        if ei < 0:
            return np.full(r.shape, np.nan)
        ri = _locate_level(self.r_levels, r, self.tol)
        out = np.full(r.shape, np.nan)
        ok = ri >= 0
        out[ok] = self.values[ei, ri[ok]]
        return out


@dataclass(frozen=True)
class PolynomialSurface:
    """Quadratic-with-interaction surface in (exposure, score)."""

    coef: np.ndarray  # matches _poly_features ordering

    kind = "polynomial"

    def evaluate(self, e: float, r: np.ndarray) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=np.float64))
        e_col = np.full(r.shape, float(e))
        return _poly_features(e_col, r) @ self.coef


@dataclass(frozen=True)
class KernelSurface:
    """Kernel ridge response surface in (exposure, score).

    The surface is a linear-in-exposure mean plus a kernel ridge fit of
    the residuals, so the kernel only has to learn departures from the
    overall exposure trend.
    """

    fit: KernelFit
    mean_coef: np.ndarray  # (2,) intercept and exposure slope

    kind = "kernel-ridge"

    def evaluate(self, e: float, r: np.ndarray) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=np.float64))
        pts = np.column_stack([np.full(r.shape, float(e)), r])
        trend = self.mean_coef[0] + self.mean_coef[1] * float(e)
        return trend + krr_predict(self.fit, pts)


POLY_LABELS = ("const", "e", "e2", "r", "r2", "e_r")


def _poly_features(e: np.ndarray, r: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones_like(e), e, e * e, r, r * r, e * r])


def beta_cell_means(
    data: Dataset,
    exposure_bucketing: Bucketing | None = None,
    score_bucketing: Bucketing | None = None,
) -> CellMeanSurface:
    """Average Y within each (exposure, observed score) cell.

    Default bucketing is exact atoms on both axes; equal-width bin
    bucketing coarsens either axis for binned (Monte Carlo) score tables.
    """
    e_b = exposure_bucketing or Bucketing.atoms()
    r_b = score_bucketing or Bucketing.atoms()
    scores = data.observed_scores()

    def levels_and_assign(values, bucketing):
        if bucketing.mode == "atoms":
            levels = _merge_levels(values, bucketing.tol)
            assign = _locate_level(levels, values, bucketing.tol)
            return levels, assign
        edges = bucketing.edges
        idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, len(edges) - 2)
        centers = (edges[:-1] + edges[1:]) / 2.0
        return centers, idx

    e_levels, e_idx = levels_and_assign(data.exposure, e_b)
    r_levels, r_idx = levels_and_assign(scores, r_b)
    values = np.full((e_levels.size, r_levels.size), np.nan)
    counts = np.zeros((e_levels.size, r_levels.size))
    flat = e_idx * r_levels.size + r_idx
    sums = np.bincount(flat, weights=data.y, minlength=values.size)
    ns = np.bincount(flat, minlength=values.size)
    filled = ns > 0
    values.flat[filled] = sums[filled] / ns[filled]
    counts.flat[:] = ns
    tol = e_b.tol if e_b.mode == "atoms" else ATOM_TOL
    return CellMeanSurface(e_levels=e_levels, r_levels=r_levels, values=values, counts=counts, tol=tol)


def beta_poly_fit(data: Dataset) -> PolynomialSurface:
    """Regress Y on (1, E, E^2, R, R^2, E*R) with R the observed score."""
    if data.n_units < len(POLY_LABELS):
        raise DataError(
            f"need at least {len(POLY_LABELS)} observations for the polynomial surface"
        )
    scores = data.observed_scores()
    x = DesignMatrix(_poly_features(data.exposure, scores), POLY_LABELS)
    return PolynomialSurface(coef=ols(x, data.y).coef)


def beta_krr_fit(
    data: Dataset,
    *,
    bandwidth=None,
    bandwidth_scale=(12.0, 2.0),
    ridge: float = 1e-1,
) -> KernelSurface:
    """Kernel ridge regression of Y on (exposure, observed score).

    Fits an ordinary least squares trend in exposure first and applies
    the kernel to its residuals, a standard parametric-mean variant.
    Dose-response queries sit at the exposure extremes where data is
    thin; anchoring them to the global trend instead of the grand mean
    removes most of the endpoint noise. For the same reason the default
    bandwidth stretches the median heuristic along the exposure axis,
    while the score axis keeps the plain heuristic so units with unusual
    scores are not smoothed into the crowd.
    """
    scores = data.observed_scores()
    x = np.column_stack([data.exposure, scores])
    if np.ptp(data.exposure) > 0:
        trend = DesignMatrix(np.column_stack([np.ones(data.n_units), data.exposure]), ("const", "e"))
        mean_coef = ols(trend, data.y).coef
    else:
        mean_coef = np.array([float(data.y.mean()), 0.0])  # degenerate: no exposure variation
    resid = data.y - (mean_coef[0] + mean_coef[1] * data.exposure)
    fit = krr_fit(x, resid, bandwidth=bandwidth, bandwidth_scale=bandwidth_scale, ridge=ridge)
    return KernelSurface(fit=fit, mean_coef=mean_coef)


# -- curves -------------------------------------------------------------------


@dataclass(frozen=True)
class DoseResponseCurve:
    """Estimated mean outcome at each grid level."""

    grid: np.ndarray
    mu_hat: np.ndarray
    estimator: str = ""

    def __post_init__(self):
        grid = np.ascontiguousarray(self.grid, dtype=np.float64)
        mu = np.ascontiguousarray(self.mu_hat, dtype=np.float64)
        if grid.ndim != 1 or grid.shape != mu.shape or grid.size == 0:
            raise ValueError("grid and mu_hat must be matching nonempty vectors")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly ascending")
        if grid[0] < -ATOM_TOL or grid[-1] > 1.0 + ATOM_TOL:
            raise ValueError("grid levels must lie in [0, 1]")
        grid.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mu_hat", mu)

    def level(self, e: float, *, tol: float = ATOM_TOL) -> float:
        idx = _locate_level(self.grid, e, tol)[0]
        if idx < 0:
            raise ValueError(f"level e={e!r} is not on the grid")
        return float(self.mu_hat[idx])

    def to_rows(self) -> list[dict]:
        return [
            {"estimator": self.estimator, "level": float(e), "estimate": float(m)}
            for e, m in zip(self.grid, self.mu_hat)
        ]


DEFAULT_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))


def dose_response(surface, gps: GpsTable, grid=DEFAULT_GRID) -> DoseResponseCurve:
    """Average the surface over imputed scores at each grid level.

    For each level e, evaluates the surface at (e, score_i(e)) for every
    unit i and averages. Cell-mean surfaces with holes at needed
    coordinates raise `MissingCellError` listing every (e, r) hole.
    """
    grid = np.asarray(grid, dtype=np.float64)
    mu = np.empty(grid.shape)
    holes: list[tuple[float, float]] = []
    for k, e in enumerate(grid):
        scores = gps.imputed_scores(float(e))
        uniq, inverse = np.unique(scores, return_inverse=True)
        vals = np.asarray(surface.evaluate(float(e), uniq), dtype=np.float64)
        bad = ~np.isfinite(vals)
        if np.any(bad):
            holes.extend((float(e), float(r)) for r in uniq[bad])
            continue
        mu[k] = vals[inverse].mean()
    if holes:
        shown = ", ".join(f"({e:g}, {r:g})" for e, r in holes[:8])
        more = "" if len(holes) <= 8 else f" and {len(holes) - 8} more"
        raise MissingCellError(
            f"surface has no value at required (exposure, score) cells: {shown}{more}",
            holes=holes,
        )
    return DoseResponseCurve(grid=grid, mu_hat=mu, estimator=getattr(surface, "kind", ""))


def ate(curve: DoseResponseCurve, *, tol: float = ATOM_TOL) -> float:
    """Difference of the curve between full exposure and none."""
    return curve.level(1.0, tol=tol) - curve.level(0.0, tol=tol)


def smooth_curve_linear(curve: DoseResponseCurve) -> DoseResponseCurve:
    """Optional post-hoc smoothing: replace the curve by its linear fit."""
    if curve.grid.size < 2:
        raise ValueError("need at least two grid levels to smooth")
    x = DesignMatrix(
        np.column_stack([np.ones(curve.grid.size), curve.grid]), ("const", "level")
    )
    fit = ols(x, curve.mu_hat)
    return DoseResponseCurve(
        grid=curve.grid,
        mu_hat=fit.predict(x),
        estimator=f"{curve.estimator}+linear" if curve.estimator else "linear",
    )


# -- stratification -----------------------------------------------------------


def stratified_estimate(
    data: Dataset,
    e: float,
    *,
    moment: str = "variance",
    n_strata: int = 10,
    labels: np.ndarray | None = None,
    tol: float = ATOM_TOL,
) -> float:
    """Population-weighted stratum means of Y at level e.

    Strata come from a moment of each unit's exposure distribution
    (default: variance, cut at deciles). When the moment statistic takes
    at most `n_strata` distinct values, units are grouped exactly on those
    values instead, so coarse populations (e.g. two unit types) split
    cleanly. Every nonempty stratum must contain at least one observation
    at level e.
    """
    if labels is None:
        if moment == "variance":
            stat = data.gps.dist_variance()
        elif moment == "mean":
            stat = data.gps.dist_mean()
        else:
            raise ValueError(f"unknown moment {moment!r}")
        distinct = _merge_levels(stat, 1e-12)
        if distinct.size <= n_strata:
            labels = _locate_level(distinct, stat, 1e-12)
        else:
            qs = np.quantile(stat, np.linspace(0, 1, n_strata + 1))
            edges = np.unique(qs)
            labels = np.clip(np.searchsorted(edges, stat, side="right") - 1, 0, edges.size - 2)
    labels = np.asarray(labels)
    at_level = np.abs(data.exposure - e) <= tol
    total = 0.0
    for s in np.unique(labels):
        members = labels == s
        hits = members & at_level
        if not np.any(hits):
            raise DataError(
                f"stratum {s} has {int(members.sum())} units but no observation "
                f"at level e={e!r}"
            )
        total += (members.sum() / data.n_units) * data.y[hits].mean()
    return float(total)
