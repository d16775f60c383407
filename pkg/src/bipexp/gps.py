"""Exposure distributions and generalized propensity scores.

For each outcome unit the treatment design induces a distribution over the
unit's possible exposures; the probability mass that distribution puts on a
level e is the unit's generalized propensity score at e. Scores evaluated
at a unit's realized exposure ("observed scores") weight inverse-propensity
estimators; scores evaluated at a common query level across all units
("imputed scores") drive dose-response imputation.

Two constructions are provided. `exact_gps` enumerates a unit's neighbor
assignments (Bernoulli designs, capped degree) and yields exact atoms.
`mc_gps` estimates the table for any design by simulating assignments and
bucketing the resulting exposures, either on the same atom grid or on
equal-width bins.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .design import (
    BERNOULLI,
    BERNOULLI_HETEROGENEOUS,
    AssignmentDesign,
    draw_assignments,
)
from .errors import DataError, ValidationError
from .graph import BipartiteGraph, IdMap, _open_write
from .seeding import as_generator

# Exposure values closer than this are the same atom.
ATOM_TOL = 1e-9

# Degrees above this cap make exact enumeration unreasonable.
MAX_EXACT_DEGREE = 20

EXACT = "exact"
MONTE_CARLO = "monte-carlo"


@dataclass(frozen=True)
class Bucketing:
    """How exposure values are grouped: exact atoms or equal-width bins."""

    mode: str  # "atoms" | "bins"
    tol: float = ATOM_TOL
    edges: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("atoms", "bins"):
            raise ValidationError(f"unknown bucketing mode {self.mode!r}")
        if self.tol <= 0:
            raise ValidationError("atom tolerance must be positive")
        if self.mode == "bins":
            if self.edges is None or len(self.edges) < 2:
                raise ValidationError("bin bucketing needs at least two edges")
            edges = np.ascontiguousarray(self.edges, dtype=np.float64)
            if np.any(np.diff(edges) <= 0):
                raise ValidationError("bin edges must be strictly increasing")
            edges.setflags(write=False)
            object.__setattr__(self, "edges", edges)

    @classmethod
    def atoms(cls, tol: float = ATOM_TOL) -> "Bucketing":
        return cls(mode="atoms", tol=tol)

    @classmethod
    def equal_width(cls, n_bins: int = 20, lo: float = 0.0, hi: float = 1.0) -> "Bucketing":
        if n_bins < 1:
            raise ValidationError("need at least one bin")
        if not hi > lo:
            raise ValidationError("need hi > lo")
        return cls(mode="bins", edges=np.linspace(lo, hi, n_bins + 1))


@dataclass(frozen=True)
class ExposureDistribution:
    """Distribution of one unit's exposure under the design.

    support : atom values (atoms mode) or bin centers (bins mode), ascending
    probs   : matching probabilities, summing to 1
    """

    support: np.ndarray
    probs: np.ndarray
    bucketing: Bucketing

    def __post_init__(self):
        support = np.ascontiguousarray(self.support, dtype=np.float64)
        probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        if support.ndim != 1 or support.shape != probs.shape or support.size == 0:
            raise ValidationError("support and probs must be matching nonempty vectors")
        if np.any(np.diff(support) <= 0):
            raise ValidationError("support must be strictly ascending")
        if probs.min() < -1e-12:
            raise ValidationError("probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValidationError(f"probabilities sum to {probs.sum():.12f}, expected 1")
        support.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    def mass_at(self, e: float) -> float:
        return float(self.mass_at_many(np.asarray([e]))[0])

    def mass_at_many(self, e: np.ndarray) -> np.ndarray:
        """Probability mass at each query level (0 where nothing matches)."""
        e = np.asarray(e, dtype=np.float64)
        if self.bucketing.mode == "atoms":
            out = np.zeros(e.shape)
            pos = np.searchsorted(self.support, e)
            for shift in (0, -1):  # candidate atoms on both sides of the insertion point
                idx = np.clip(pos + shift, 0, self.support.size - 1)
                hit = np.abs(self.support[idx] - e) <= self.bucketing.tol
                out = np.where(hit & (out == 0), self.probs[idx], out)
            return out
        edges = self.bucketing.edges
        tol = self.bucketing.tol
        idx = np.searchsorted(edges, e, side="right") - 1
        # the top edge closes the last bin; tol absorbs float spill past either end
        idx = np.where((e >= edges[-1]) & (e <= edges[-1] + tol), len(edges) - 2, idx)
        idx = np.where((e < edges[0]) & (e >= edges[0] - tol), 0, idx)
        inside = (idx >= 0) & (idx <= len(edges) - 2)
        return np.where(inside, self.probs[np.clip(idx, 0, len(edges) - 2)], 0.0)

    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    def variance(self) -> float:
        mu = self.mean()
        return float(np.dot((self.support - mu) ** 2, self.probs))


def _merge_atoms(support: np.ndarray, probs: np.ndarray, tol: float):
    order = np.argsort(support, kind="stable")
    support = support[order]
    probs = probs[order]
    if support.size <= 1:
        return support, probs
    starts = np.flatnonzero(np.concatenate([[True], np.diff(support) > tol]))
    return support[starts], np.add.reduceat(probs, starts)


def _neighbor_probabilities(graph: BipartiteGraph, design: AssignmentDesign, i: int) -> np.ndarray:
    lo, hi = graph.indptr[i], graph.indptr[i + 1]
    if design.kind == BERNOULLI:
        return np.full(hi - lo, design.p)
    if design.kind == BERNOULLI_HETEROGENEOUS:
        p = design.probabilities(graph.m_diversion)
        return p[graph.indices[lo:hi]]
    raise ValueError(
        f"exact enumeration supports Bernoulli designs only, not {design.kind!r}; use mc_gps"
    )


def exact_gps(
    graph: BipartiteGraph,
    design: AssignmentDesign,
    i: int,
    *,
    tol: float = ATOM_TOL,
    max_degree: int = MAX_EXACT_DEGREE,
) -> ExposureDistribution:
    """Exact exposure distribution of outcome unit i under a Bernoulli design.

    Enumerates the unit's neighbor assignments by convolving one neighbor
    at a time, merging exposure values within `tol` of each other into one
    atom. Equivalent to summing over all 2^degree assignment patterns.

    Raises
    ------
    ValueError
        Degree above `max_degree` (use `mc_gps`), or a non-Bernoulli design.
    """
    if not 0 <= i < graph.n_outcome:
        raise IndexError(f"outcome unit {i} out of range [0, {graph.n_outcome})")
    lo, hi = graph.indptr[i], graph.indptr[i + 1]
    degree = hi - lo
    if degree > max_degree:
        raise ValueError(
            f"unit {i} has degree {degree} > cap {max_degree}: "
            "exact enumeration would be exponential, use mc_gps instead"
        )
    p_nbrs = _neighbor_probabilities(graph, design, i)
    return _convolve_row(graph.weights[lo:hi], p_nbrs, tol)


def _convolve_row(row_weights: np.ndarray, p_nbrs: np.ndarray, tol: float) -> ExposureDistribution:
    support = np.zeros(1)
    probs = np.ones(1)
    for w, p in zip(row_weights, p_nbrs):
        support = np.concatenate([support, support + w])
        probs = np.concatenate([probs * (1.0 - p), probs * p])
        support, probs = _merge_atoms(support, probs, tol)
    return ExposureDistribution(support, probs, Bucketing.atoms(tol))


@dataclass(frozen=True)
class GpsTable:
    """Per-unit exposure distributions plus fast batched score lookups.

    Units sharing an identical (weights, probabilities) row share one
    distribution object; `unit_dist` maps each unit to its distribution.
    Query levels must lie inside [lo, hi], the reachable exposure range.
    """

    dists: tuple[ExposureDistribution, ...]
    unit_dist: np.ndarray
    mode: str  # "exact" | "monte-carlo"
    bucketing: Bucketing
    lo: float
    hi: float

    def __post_init__(self):
        unit_dist = np.ascontiguousarray(self.unit_dist, dtype=np.int64)
        if unit_dist.ndim != 1:
            raise ValidationError("unit_dist must be a vector")
        if unit_dist.size and (unit_dist.min() < 0 or unit_dist.max() >= len(self.dists)):
            raise ValidationError("unit_dist points outside dists")
        unit_dist.setflags(write=False)
        object.__setattr__(self, "unit_dist", unit_dist)

    @property
    def n_units(self) -> int:
        return int(self.unit_dist.size)

    def distribution(self, i: int) -> ExposureDistribution:
        return self.dists[int(self.unit_dist[i])]

    def _check_range(self, e: np.ndarray) -> None:
        tol = self.bucketing.tol
        e = np.asarray(e, dtype=np.float64)
        if np.any(e < self.lo - tol) or np.any(e > self.hi + tol):
            bad = e[(e < self.lo - tol) | (e > self.hi + tol)]
            raise DataError(
                f"exposure level {bad.flat[0]!r} outside the bucketing range "
                f"[{self.lo}, {self.hi}]"
            )

    def at(self, i: int, e: float) -> float:
        """Score of unit i at level e (0 when e carries no mass)."""
        if not 0 <= i < self.n_units:
            raise IndexError(f"unit {i} out of range [0, {self.n_units})")
        self._check_range(np.asarray([e]))
        return self.distribution(i).mass_at(e)

    def imputed_scores(self, e: float) -> np.ndarray:
        """Score of every unit at the common query level e."""
        self._check_range(np.asarray([e]))
        per_dist = np.array([d.mass_at(e) for d in self.dists])
        return per_dist[self.unit_dist]

    def observed_scores(self, exposures: np.ndarray, units: np.ndarray | None = None) -> np.ndarray:
        """Score of each unit at its own realized exposure."""
        exposures = np.asarray(exposures, dtype=np.float64)
        ids = self.unit_dist if units is None else self.unit_dist[np.asarray(units)]
        if exposures.shape != ids.shape:
            raise ValueError("exposures must align with the selected units")
        self._check_range(exposures)
        out = np.empty(exposures.shape)
        for d_id in np.unique(ids):
            mask = ids == d_id
            out[mask] = self.dists[d_id].mass_at_many(exposures[mask])
        return out

    def dist_variance(self) -> np.ndarray:
        """Per-unit variance of the exposure distribution."""
        per_dist = np.array([d.variance() for d in self.dists])
        return per_dist[self.unit_dist]

    def dist_mean(self) -> np.ndarray:
        per_dist = np.array([d.mean() for d in self.dists])
        return per_dist[self.unit_dist]

    def take(self, units) -> "GpsTable":
        """Row subset sharing the underlying distribution objects."""
        units = np.asarray(units, dtype=np.int64)
        return GpsTable(
            dists=self.dists,
            unit_dist=self.unit_dist[units],
            mode=self.mode,
            bucketing=self.bucketing,
            lo=self.lo,
            hi=self.hi,
        )

    def write_csv(self, dest, id_map: IdMap | None = None) -> None:
        """Audit serialization: one row per (unit, atom-or-bin, probability)."""
        ids = id_map.outcome_ids if id_map is not None else [str(i) for i in range(self.n_units)]
        with _open_write(dest) as fh:
            writer = csv.writer(fh)
            writer.writerow(["outcome_id", "exposure_lo", "exposure_hi", "probability"])
            for i in range(self.n_units):
                d = self.distribution(i)
                if d.bucketing.mode == "atoms":
                    for v, q in zip(d.support, d.probs):
                        writer.writerow([ids[i], repr(float(v)), repr(float(v)), repr(float(q))])
                else:
                    edges = d.bucketing.edges
                    for b, q in enumerate(d.probs):
                        writer.writerow(
                            [ids[i], repr(float(edges[b])), repr(float(edges[b + 1])), repr(float(q))]
                        )


def gps_at(table: GpsTable, i: int, e: float) -> float:
    """Score of unit i at level e. Convenience wrapper around `GpsTable.at`."""
    return table.at(i, e)


def exact_gps_table(
    graph: BipartiteGraph,
    design: AssignmentDesign,
    *,
    tol: float = ATOM_TOL,
    max_degree: int = MAX_EXACT_DEGREE,
) -> GpsTable:
    """Exact table for all units; identical rows share one distribution."""
    if design.kind == BERNOULLI_HETEROGENEOUS:
        design.probabilities(graph.m_diversion)  # fail fast on length mismatch
    cache: dict[bytes, int] = {}
    dists: list[ExposureDistribution] = []
    unit_dist = np.empty(graph.n_outcome, dtype=np.int64)
    for i in range(graph.n_outcome):
        lo, hi = graph.indptr[i], graph.indptr[i + 1]
        if hi - lo > max_degree:
            raise ValueError(
                f"unit {i} has degree {hi - lo} > cap {max_degree}: "
                "exact enumeration would be exponential, use mc_gps instead"
            )
        p_nbrs = _neighbor_probabilities(graph, design, i)
        key = graph.weights[lo:hi].tobytes() + b"|" + p_nbrs.tobytes()
        if key not in cache:
            cache[key] = len(dists)
            dists.append(_convolve_row(graph.weights[lo:hi], p_nbrs, tol))
        unit_dist[i] = cache[key]
    return GpsTable(
        dists=tuple(dists),
        unit_dist=unit_dist,
        mode=EXACT,
        bucketing=Bucketing.atoms(tol),
        lo=0.0,
        hi=graph.max_row_sum,
    )


def mc_gps(
    graph: BipartiteGraph,
    design: AssignmentDesign,
    bucketing: Bucketing,
    n_draws: int = 10_000,
    rng=None,
    *,
    chunk_size: int = 512,
) -> GpsTable:
    """Monte Carlo table: simulate assignments, bucket the exposures.

    Works for any design. Deterministic for a fixed rng seed. With atom
    bucketing, exposures are quantized to the atom tolerance; with bins,
    the bucketing must cover the graph's reachable exposure range.
    """
    if n_draws <= 0:
        raise ValueError("n_draws must be positive")
    rng = as_generator(rng)
    hi_reachable = graph.max_row_sum
    if bucketing.mode == "bins":
        edges = bucketing.edges
        if edges[0] > 0.0 or edges[-1] < hi_reachable - ATOM_TOL:
            raise ValidationError(
                f"bin edges [{edges[0]}, {edges[-1]}] do not cover the reachable "
                f"exposure range [0, {hi_reachable}]"
            )
        counts = np.zeros((graph.n_outcome, len(edges) - 1), dtype=np.int64)
    else:
        atom_counts: dict[int, int] = {}
        shift = np.int64(1) << np.int64(42)
        quantum = bucketing.tol

    csr = graph.to_csr()
    done = 0
    while done < n_draws:
        take = min(chunk_size, n_draws - done)
        z = draw_assignments(design, graph.m_diversion, take, rng)
        exposures = csr @ z.astype(np.float64)  # (n_outcome, take)
        if bucketing.mode == "bins":
            # coverage was validated above, so clipping only absorbs float spill
            idx = np.clip(
                np.searchsorted(edges, exposures, side="right") - 1, 0, len(edges) - 2
            )
            flat = (np.arange(graph.n_outcome)[:, None] * (len(edges) - 1) + idx).ravel()
            counts += np.bincount(flat, minlength=counts.size).reshape(counts.shape).astype(np.int64)
        else:
            q = np.rint(exposures / quantum).astype(np.int64)
            keys = (np.arange(graph.n_outcome, dtype=np.int64)[:, None] * shift + q).ravel()
            uniq, cts = np.unique(keys, return_counts=True)
            for key, ct in zip(uniq.tolist(), cts.tolist()):
                atom_counts[key] = atom_counts.get(key, 0) + ct
        done += take

    dists: list[ExposureDistribution] = []
    unit_dist = np.arange(graph.n_outcome, dtype=np.int64)
    if bucketing.mode == "bins":
        centers = (bucketing.edges[:-1] + bucketing.edges[1:]) / 2.0
        for i in range(graph.n_outcome):
            dists.append(
                ExposureDistribution(centers, counts[i] / float(n_draws), bucketing)
            )
        lo, hi = float(bucketing.edges[0]), float(bucketing.edges[-1])
    else:
        per_unit: list[dict[int, int]] = [dict() for _ in range(graph.n_outcome)]
        for key, ct in atom_counts.items():
            per_unit[key >> 42][key & ((1 << 42) - 1)] = ct
        for i in range(graph.n_outcome):
            qs = np.array(sorted(per_unit[i].keys()), dtype=np.int64)
            probs = np.array([per_unit[i][q] for q in qs], dtype=np.float64) / n_draws
            dists.append(ExposureDistribution(qs * quantum, probs, bucketing))
        lo, hi = 0.0, hi_reachable
    return GpsTable(
        dists=tuple(dists),
        unit_dist=unit_dist,
        mode=MONTE_CARLO,
        bucketing=bucketing,
        lo=lo,
        hi=hi,
    )


def product_gps(p_vec: np.ndarray, z_partial: np.ndarray) -> float:
    """Probability of one neighbor-assignment pattern under independent coins.

    Multiplies p_j over treated neighbors and (1 - p_j) over untreated
    ones. When the neighbor weights are all distinct, each exposure value
    identifies a unique pattern, so this is also the score at that
    exposure; with tied weights several patterns share an exposure and the
    caller must sum over them (exact_gps does exactly that).
    """
    p_vec = np.asarray(p_vec, dtype=np.float64)
    z_partial = np.asarray(z_partial)
    if p_vec.shape != z_partial.shape or p_vec.ndim != 1:
        raise ValueError("p_vec and z_partial must be matching 1-d vectors")
    if p_vec.size and (p_vec.min() <= 0.0 or p_vec.max() >= 1.0):
        raise ValidationError("all probabilities must lie strictly inside (0, 1)")
    if not np.all((z_partial == 0) | (z_partial == 1)):
        raise ValueError("z_partial must be 0/1")
    return float(np.prod(np.where(z_partial == 1, p_vec, 1.0 - p_vec)))
