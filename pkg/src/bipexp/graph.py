"""Weighted bipartite graphs between outcome units and diversion units.

The graph is the fixed structure through which treatment reaches outcomes:
row i holds the weights tying outcome unit i to the diversion units it is
exposed to. Graphs are stored in compressed sparse row form and are
immutable once built; loading, synthesis, and serialization all go through
the same validated constructor.

External ids from edge-list files are mapped to dense indices in first-
appearance order; the mapping is kept in an `IdMap` so results can be
reported against the original ids.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .seeding import as_generator

EDGE_HEADER = ("outcome_id", "diversion_id", "weight")

# |row sum - 1| tolerance for the row-normalized flag.
NORMALIZED_TOL = 1e-9


def _as_readonly(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    if out.base is None and out is not arr:
        pass
    else:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Immutable weighted bipartite graph in CSR layout.

    Parameters
    ----------
    n_outcome, m_diversion : int
        Number of outcome units (rows) and diversion units (columns).
    indptr : ndarray, shape (n_outcome + 1,)
        Row start offsets into `indices` / `weights`.
    indices : ndarray, shape (nnz,)
        Diversion-unit index of each edge, ascending within a row.
    weights : ndarray, shape (nnz,)
        Nonnegative, finite edge weights.
    row_normalized : bool
        True when every nonempty row sums to 1 within 1e-9. Set
        automatically by the constructors.
    """

    n_outcome: int
    m_diversion: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    row_normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "indptr", _as_readonly(self.indptr, np.int64))
        object.__setattr__(self, "indices", _as_readonly(self.indices, np.int64))
        object.__setattr__(self, "weights", _as_readonly(self.weights, np.float64))
        if self.n_outcome < 0 or self.m_diversion < 0:
            raise ValidationError("unit counts must be nonnegative")
        if self.indptr.shape != (self.n_outcome + 1,):
            raise ValidationError("indptr length must be n_outcome + 1")
        if self.indptr[0] != 0 or self.indptr[-1] != self.indices.size:
            raise ValidationError("indptr must start at 0 and end at nnz")
        if np.any(np.diff(self.indptr) < 0):
            raise ValidationError("indptr must be nondecreasing")
        if self.indices.shape != self.weights.shape:
            raise ValidationError("indices and weights must have equal length")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= self.m_diversion:
                raise ValidationError("diversion index out of range")
            if not np.all(np.isfinite(self.weights)):
                raise ValidationError("edge weights must be finite")
            if self.weights.min() < 0:
                raise ValidationError("edge weights must be nonnegative")
            # ascending within row also rules out duplicate edges
            row_starts = self.indptr[:-1]
            diffs = np.diff(self.indices)
            boundary = np.zeros(self.indices.size - 1, dtype=bool) if self.indices.size > 1 else None
            if self.indices.size > 1:
                boundary[row_starts[(row_starts > 0) & (row_starts < self.indices.size)] - 1] = True
                bad = (diffs <= 0) & ~boundary
                if np.any(bad):
                    raise ValidationError(
                        "row indices must be strictly ascending (duplicate edge?)"
                    )
        sums = self.row_sums
        degrees = np.diff(self.indptr)
        normalized = bool(
            np.all(np.abs(sums[degrees > 0] - 1.0) <= NORMALIZED_TOL)
        ) if np.any(degrees > 0) else True
        object.__setattr__(self, "row_normalized", normalized)

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_rows(cls, rows, m_diversion: int) -> "BipartiteGraph":
        """Build from an iterable of per-unit [(diversion_index, weight), ...] lists."""
        indptr = [0]
        indices: list[int] = []
        weights: list[float] = []
        for row in rows:
            row = sorted(row, key=lambda jw: jw[0])
            for j, w in row:
                indices.append(int(j))
                weights.append(float(w))
            indptr.append(len(indices))
        return cls(
            n_outcome=len(indptr) - 1,
            m_diversion=int(m_diversion),
            indptr=np.asarray(indptr, dtype=np.int64),
            indices=np.asarray(indices, dtype=np.int64),
            weights=np.asarray(weights, dtype=np.float64),
        )

    # -- properties --------------------------------------------------------

    @property
    def degrees(self) -> np.ndarray:
        """Number of diversion neighbors per outcome unit."""
        return np.diff(self.indptr)

    @property
    def row_sums(self) -> np.ndarray:
        cs = np.concatenate([[0.0], np.cumsum(self.weights)])
        return cs[self.indptr[1:]] - cs[self.indptr[:-1]]

    @property
    def max_row_sum(self) -> float:
        sums = self.row_sums
        return float(sums.max()) if sums.size else 0.0

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def row_weights(self, i: int) -> list[tuple[int, float]]:
        """Ordered (diversion_index, weight) pairs of outcome unit i."""
        if not 0 <= i < self.n_outcome:
            raise IndexError(f"outcome unit {i} out of range [0, {self.n_outcome})")
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return list(zip(self.indices[lo:hi].tolist(), self.weights[lo:hi].tolist()))

    # -- transforms --------------------------------------------------------

    def take(self, rows) -> "BipartiteGraph":
        """Row-subset view (copies arrays); used by resampling."""
        rows = np.asarray(rows, dtype=np.int64)
        lengths = self.degrees[rows]
        indptr = np.concatenate([[0], np.cumsum(lengths)])
        gather = _segment_gather(self.indptr, rows, lengths)
        return BipartiteGraph(
            n_outcome=rows.size,
            m_diversion=self.m_diversion,
            indptr=indptr,
            indices=self.indices[gather],
            weights=self.weights[gather],
        )

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_outcome, self.m_diversion))
        rows = np.repeat(np.arange(self.n_outcome), self.degrees)
        out[rows, self.indices] = self.weights
        return out

    def to_csr(self):
        from scipy import sparse

        return sparse.csr_matrix(
            (self.weights, self.indices, self.indptr),
            shape=(self.n_outcome, self.m_diversion),
        )

    def sum_squared_weights(self) -> float:
        return float(np.dot(self.weights, self.weights))


def _segment_gather(indptr, rows, lengths):
    # flat indices of the edges of `rows`, preserving per-row order
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    starts = indptr[rows]
    offsets = np.repeat(starts, lengths)
    within = np.arange(total) - np.repeat(np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths)
    return offsets + within


@dataclass(frozen=True)
class IdMap:
    """External string ids for the dense outcome / diversion indices."""

    outcome_ids: tuple[str, ...]
    diversion_ids: tuple[str, ...]

    @staticmethod
    def identity(n_outcome: int, m_diversion: int) -> "IdMap":
        return IdMap(
            outcome_ids=tuple(str(i) for i in range(n_outcome)),
            diversion_ids=tuple(str(j) for j in range(m_diversion)),
        )

    def outcome_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.outcome_ids)}

    def diversion_index(self) -> dict[str, int]:
        return {s: j for j, s in enumerate(self.diversion_ids)}

    def write_csv(self, outcome_dest, diversion_dest) -> None:
        """Emit the two-column id tables (external id, dense index)."""
        for dest, header, ids in (
            (outcome_dest, "outcome_id", self.outcome_ids),
            (diversion_dest, "diversion_id", self.diversion_ids),
        ):
            with _open_write(dest) as fh:
                writer = csv.writer(fh)
                writer.writerow([header, "index"])
                for idx, ext in enumerate(ids):
                    writer.writerow([ext, idx])


def _open_read(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline="")
    return _NonClosing(source)


def _open_write(dest):
    if isinstance(dest, (str, os.PathLike)):
        return open(dest, "w", encoding="utf-8", newline="")
    return _NonClosing(dest)


class _NonClosing:
    # context manager that leaves caller-owned file objects open
    def __init__(self, fh):
        self._fh = fh

    def __enter__(self):
        return self._fh

    def __exit__(self, *exc):
        return False


def load_edge_list(source, normalize: bool = False) -> tuple[BipartiteGraph, IdMap]:
    """Parse an edge-list CSV into a validated graph.

    The file is UTF-8, comma-delimited, with exact header
    ``outcome_id,diversion_id,weight``. Ids are arbitrary strings and are
    assigned dense indices in first-appearance order. With
    ``normalize=True`` each nonempty row is rescaled to sum to 1.

    Returns
    -------
    (BipartiteGraph, IdMap)

    Raises
    ------
    ParseError
        Malformed header or row (carries the line number).
    ValidationError
        Negative weight or duplicate (outcome, diversion) pair.
    """
    outcome_ids: list[str] = []
    diversion_ids: list[str] = []
    o_index: dict[str, int] = {}
    d_index: dict[str, int] = {}
    rows: list[list[tuple[int, float]]] = []
    seen: set[tuple[int, int]] = set()

    with _open_read(source) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file: expected header outcome_id,diversion_id,weight", 1)
        if tuple(h.strip() for h in header) != EDGE_HEADER:
            raise ParseError(
                f"expected header {','.join(EDGE_HEADER)}, got {','.join(header)}", 1
            )
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != 3:
                raise ParseError(f"expected 3 fields, got {len(record)}", lineno)
            oid, did, wtext = (f.strip() for f in record)
            try:
                w = float(wtext)
            except ValueError:
                raise ParseError(f"weight {wtext!r} is not a decimal literal", lineno)
            if not np.isfinite(w):
                raise ParseError(f"weight {wtext!r} is not finite", lineno)
            if w < 0:
                raise ValidationError(f"line {lineno}: negative weight {w!r}")
            if oid not in o_index:
                o_index[oid] = len(outcome_ids)
                outcome_ids.append(oid)
                rows.append([])
            if did not in d_index:
                d_index[did] = len(diversion_ids)
                diversion_ids.append(did)
            key = (o_index[oid], d_index[did])
            if key in seen:
                raise ValidationError(
                    f"line {lineno}: duplicate edge ({oid!r}, {did!r})"
                )
            seen.add(key)
            rows[o_index[oid]].append((d_index[did], w))

    if normalize:
        for oid_idx, row in enumerate(rows):
            total = sum(w for _, w in row)
            if row and total <= 0:
                raise ValidationError(
                    f"cannot normalize outcome unit {outcome_ids[oid_idx]!r}: row sum is 0"
                )
            rows[oid_idx] = [(j, w / total) for j, w in row]

    graph = BipartiteGraph.from_rows(rows, m_diversion=len(diversion_ids))
    return graph, IdMap(tuple(outcome_ids), tuple(diversion_ids))


def write_edge_list(graph: BipartiteGraph, dest, id_map: IdMap | None = None) -> None:
    """Serialize to edge-list CSV; float repr round-trips weights exactly."""
    if id_map is None:
        id_map = IdMap.identity(graph.n_outcome, graph.m_diversion)
    with _open_write(dest) as fh:
        writer = csv.writer(fh)
        writer.writerow(EDGE_HEADER)
        for i in range(graph.n_outcome):
            lo, hi = graph.indptr[i], graph.indptr[i + 1]
            for j, w in zip(graph.indices[lo:hi], graph.weights[lo:hi]):
                writer.writerow([id_map.outcome_ids[i], id_map.diversion_ids[j], repr(float(w))])


# -- synthesis -------------------------------------------------------------


@dataclass(frozen=True)
class GraphSpec:
    """Recipe for obtaining a graph.

    kind "uniform-degree": each outcome unit draws its degree uniformly
    from {deg_min..deg_max}, picks that many distinct diversion neighbors
    uniformly at random, and weights them equally (1/degree).

    kind "blocks": units are split into n_blocks contiguous groups on both
    sides, wired within their own block as in "uniform-degree", then a
    `cross_share` fraction of edges is rewired to a diversion unit outside
    the block. cross_share = 0 leaves n_blocks disjoint components.

    kind "external-file": load (and row-normalize) an edge-list file.
    """

    kind: str
    n_outcome: int = 0
    m_diversion: int = 0
    deg_min: int = 1
    deg_max: int = 1
    n_blocks: int = 1
    cross_share: float = 0.0
    path: str | None = None
    seed: int | None = None
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in ("uniform-degree", "blocks", "external-file"):
            raise ValidationError(f"unknown graph kind {self.kind!r}")
        if self.kind == "external-file":
            if not self.path:
                raise ValidationError("external-file graph spec needs a path")
            return
        if self.n_outcome <= 0 or self.m_diversion <= 0:
            raise ValidationError("graph spec needs positive unit counts")
        if not (1 <= self.deg_min <= self.deg_max):
            raise ValidationError("need 1 <= deg_min <= deg_max")
        if self.kind == "blocks":
            if self.n_blocks < 1:
                raise ValidationError("n_blocks must be >= 1")
            if not 0.0 <= self.cross_share <= 1.0:
                raise ValidationError("cross_share must lie in [0, 1]")


def contiguous_blocks(n: int, k: int) -> np.ndarray:
    """Block label of each of n units under a contiguous split into k blocks."""
    return (np.arange(n, dtype=np.int64) * k) // n


def synth_graph(spec: GraphSpec, rng=None) -> BipartiteGraph:
    """Realize a synthetic graph spec. Deterministic for a fixed seed.

    The generator is ``rng`` when given, else one seeded from spec.seed.
    """
    if spec.kind == "external-file":
        graph, _ = load_edge_list(spec.path, normalize=spec.normalize)
        return graph
    rng = as_generator(rng if rng is not None else spec.seed)
    if spec.kind == "uniform-degree":
        return _synth_uniform(spec, rng)
    return _synth_blocks(spec, rng)


def _synth_uniform(spec: GraphSpec, rng) -> BipartiteGraph:
    if spec.deg_max > spec.m_diversion:
        raise ValidationError(
            f"deg_max {spec.deg_max} exceeds number of diversion units {spec.m_diversion}"
        )
    degrees = rng.integers(spec.deg_min, spec.deg_max + 1, size=spec.n_outcome)
    rows = []
    for m in degrees:
        nbrs = rng.choice(spec.m_diversion, size=int(m), replace=False)
        w = 1.0 / m
        rows.append([(int(j), w) for j in nbrs])
    return BipartiteGraph.from_rows(rows, m_diversion=spec.m_diversion)


def _synth_blocks(spec: GraphSpec, rng) -> BipartiteGraph:
    k = spec.n_blocks
    o_blocks = contiguous_blocks(spec.n_outcome, k)
    d_blocks = contiguous_blocks(spec.m_diversion, k)
    d_members = [np.flatnonzero(d_blocks == b) for b in range(k)]
    min_block = min(len(m) for m in d_members)
    if spec.deg_max > min_block:
        raise ValidationError(
            f"deg_max {spec.deg_max} exceeds smallest block's diversion count {min_block}"
        )
    degrees = rng.integers(spec.deg_min, spec.deg_max + 1, size=spec.n_outcome)
    neighbor_sets = []
    for i in range(spec.n_outcome):
        pool = d_members[o_blocks[i]]
        nbrs = rng.choice(pool, size=int(degrees[i]), replace=False)
        neighbor_sets.append(set(int(j) for j in nbrs))

    n_cut = int(round(spec.cross_share * int(degrees.sum())))
    if n_cut:
        # pick edge slots uniformly over all edges, then rewire each slot's
        # diversion endpoint to a unit outside the row's block
        owner = np.repeat(np.arange(spec.n_outcome), degrees)
        cut_slots = rng.choice(owner.size, size=n_cut, replace=False)
        flat = np.concatenate([sorted(s) for s in neighbor_sets]).astype(np.int64)
        for slot in cut_slots:
            i = int(owner[slot])
            old_j = int(flat[slot])
            if old_j not in neighbor_sets[i]:
                continue  # already rewired away via another slot of the same row
            own = o_blocks[i]
            while True:
                j_new = int(rng.integers(spec.m_diversion))
                if d_blocks[j_new] != own and j_new not in neighbor_sets[i]:
                    break
            neighbor_sets[i].discard(old_j)
            neighbor_sets[i].add(j_new)

    rows = []
    for i, nbrs in enumerate(neighbor_sets):
        w = 1.0 / degrees[i]
        rows.append([(j, w) for j in sorted(nbrs)])
    return BipartiteGraph.from_rows(rows, m_diversion=spec.m_diversion)


# -- connectivity ----------------------------------------------------------


def connected_components(graph: BipartiteGraph) -> tuple[int, np.ndarray, np.ndarray]:
    """Connected components of the bipartite graph via union-find.

    Returns (count, outcome_labels, diversion_labels); labels are dense ints
    shared across the two sides. Units without edges form singleton
    components.
    """
    n, m = graph.n_outcome, graph.m_diversion
    parent = np.arange(n + m, dtype=np.int64)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    rows = np.repeat(np.arange(n), graph.degrees)
    for i, j in zip(rows, graph.indices):
        ra, rb = find(int(i)), find(int(n + j))
        if ra != rb:
            parent[rb] = ra

    roots = np.fromiter((find(int(a)) for a in range(n + m)), dtype=np.int64, count=n + m)
    _, labels = np.unique(roots, return_inverse=True)
    return int(labels.max() + 1 if labels.size else 0), labels[:n], labels[n:]
