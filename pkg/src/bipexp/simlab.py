"""Simulation studies: bias, RMSE, and interval coverage by construction.

A `DgpSpec` fixes the graph (or a recipe for one), the assignment design,
the exposure-effect form, and the two noise variances. `run_study` replays
the whole pipeline n_sims times with per-replicate random substreams and
aggregates per (estimator, interval-method) bias, RMSE, and coverage of
the true ATE. `edges_cut_sweep` runs the clustered-vs-iid resampling
comparison across graphs with increasing cross-component wiring.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .design import AssignmentDesign, draw_assignment, linear_exposure
from .errors import ConfigError, DataError, NumericalError
from .estimators import (
    Dataset,
    _poly_features,
    ate,
    beta_cell_means,
    beta_krr_fit,
    beta_poly_fit,
    dose_response,
    ht_estimate,
    ht_weighted_regression,
    naive_mean,
    naive_ols,
    stratified_estimate,
)
from .gps import MAX_EXACT_DEGREE, Bucketing, GpsTable, exact_gps_table, mc_gps
from .graph import BipartiteGraph, GraphSpec, contiguous_blocks, synth_graph
from .inference import (
    IntervalEstimate,
    block_bootstrap,
    naive_bootstrap,
    parametric_bootstrap,
)
from .numerics import DesignMatrix, ols
from .seeding import substream

HOMOGENEOUS = "homogeneous"
HETEROGENEOUS = "heterogeneous"
CUSTOM = "custom"

# substream tags: keep these distinct so study-level draws never collide
# with per-replicate draws under any (master_seed, n_sims)
_GRAPH_STREAM = 0
_SIM_STREAM = 1
_GPS_STREAM = 2
_SWEEP_STREAM = 3

SEED_SCHEME = "SeedSequence([master_seed, 1, sim_index])"


@dataclass(frozen=True)
class DgpSpec:
    """Data-generating process for one study.

    The effect form sets each unit's exposure slope: `homogeneous` gives
    every unit the population mean degree (one shared linear effect),
    `heterogeneous` gives each unit its own degree, and `custom` takes an
    explicit per-unit slope vector. Outcomes are
    Y_i = slope_i * E_i + (W @ gamma)_i + eps_i with gamma and eps i.i.d.
    centered normals of variance sigma2_gamma and sigma2_eps.
    """

    graph: BipartiteGraph | GraphSpec
    design: AssignmentDesign
    effect: str = HOMOGENEOUS
    sigma2_eps: float = 0.0
    sigma2_gamma: float = 0.0
    unit_slopes: np.ndarray | None = None
    redraw_graph: bool = False
    label: str = ""

    def __post_init__(self):
        if self.effect not in (HOMOGENEOUS, HETEROGENEOUS, CUSTOM):
            raise ConfigError(f"unknown effect form {self.effect!r}")
        if self.sigma2_eps < 0 or self.sigma2_gamma < 0:
            raise ConfigError("noise variances must be nonnegative")
        if self.effect == CUSTOM and self.unit_slopes is None:
            raise ConfigError("custom effect form needs unit_slopes")
        if self.redraw_graph and not isinstance(self.graph, GraphSpec):
            raise ConfigError("redraw_graph requires a graph recipe, not a fixed graph")


def effect_slopes(dgp: DgpSpec, graph: BipartiteGraph) -> np.ndarray:
    degrees = graph.degrees.astype(np.float64)
    if dgp.effect == HOMOGENEOUS:
        return np.full(graph.n_outcome, degrees.mean())
    if dgp.effect == HETEROGENEOUS:
        return degrees
    slopes = np.asarray(dgp.unit_slopes, dtype=np.float64)
    if slopes.shape != (graph.n_outcome,):
        raise ConfigError("unit_slopes must have one entry per outcome unit")
    return slopes


def true_ate(dgp: DgpSpec, graph: BipartiteGraph) -> float:
    """Population ATE for the realized graph: the mean exposure slope."""
    return float(effect_slopes(dgp, graph).mean())


def generate_outcomes(dgp: DgpSpec, graph: BipartiteGraph, exposure, rng) -> np.ndarray:
    """Draw outcomes at the given exposures (gamma first, then eps)."""
    exposure = np.asarray(exposure, dtype=np.float64)
    y = effect_slopes(dgp, graph) * exposure
    if dgp.sigma2_gamma > 0:
        gamma = rng.normal(0.0, np.sqrt(dgp.sigma2_gamma), size=graph.m_diversion)
        y = y + graph.to_csr() @ gamma
    if dgp.sigma2_eps > 0:
        y = y + rng.normal(0.0, np.sqrt(dgp.sigma2_eps), size=graph.n_outcome)
    return y


# -- estimator registry --------------------------------------------------------

ENDPOINT_GRID = (0.0, 1.0)


@dataclass(frozen=True)
class StudyEstimator:
    """Named ATE estimator: a point function plus an optional linear design.

    `point` maps a Dataset to an ATE estimate. `design`, when present,
    maps a Dataset to (phi, target, contrast) such that
    contrast @ ols_coef(phi, target) reproduces the point estimate; the
    parametric bootstrap and asymptotic intervals require it. `bound`,
    when present, maps the full study Dataset to the statistic handed to
    resampling bootstraps, letting the estimator freeze population
    quantities (resampling should perturb the data, not the estimand).
    """

    name: str
    point: object
    design: object | None = None
    bound: object | None = None

    def statistic(self, full_data: Dataset):
        """Bootstrap statistic for resamples of full_data."""
        return self.bound(full_data) if self.bound is not None else self.point


def _point_naive_mean(data: Dataset) -> float:
    return naive_mean(data, 1.0) - naive_mean(data, 0.0)


def _design_naive_ols(data: Dataset):
    phi = np.column_stack([np.ones(data.n_units), data.exposure])
    return phi, data.y, np.array([0.0, 1.0])


def _point_correct_spec(data: Dataset) -> float:
    phi, y, contrast = _design_correct_spec(data)
    fit = ols(DesignMatrix(phi, ("const", "degree_x_exposure")), y)
    return float(contrast @ fit.coef)


def _design_correct_spec(data: Dataset):
    # true surface under the heterogeneous DGP: per-unit slope = degree
    s = data.graph.degrees.astype(np.float64)
    phi = np.column_stack([np.ones(data.n_units), s * data.exposure])
    return phi, data.y, np.array([0.0, s.mean()])


def _bound_correct_spec(full_data: Dataset):
    # the estimand multiplies the slope by the study graph's mean degree,
    # a fixed population quantity; freezing it keeps bootstrap resamples
    # from adding mean-degree noise the estimator never faces
    m_bar = float(full_data.graph.degrees.mean())

    def statistic(data: Dataset) -> float:
        phi, y, _ = _design_correct_spec(data)
        fit = ols(DesignMatrix(phi, ("const", "degree_x_exposure")), y)
        return m_bar * float(fit.coef[1])

    return statistic


def _point_ht(data: Dataset) -> float:
    return ht_estimate(data, 1.0) - ht_estimate(data, 0.0)


def _design_ht(data: Dataset):
    hw = ht_weighted_regression(data, ENDPOINT_GRID)
    return hw.design, hw.target, np.array([-1.0, 1.0])


def _point_gps_cell(data: Dataset) -> float:
    return ate(dose_response(beta_cell_means(data), data.gps, ENDPOINT_GRID))


def _point_gps_poly(data: Dataset) -> float:
    return ate(dose_response(beta_poly_fit(data), data.gps, ENDPOINT_GRID))


def _design_gps_poly(data: Dataset):
    phi = _poly_features(data.exposure, data.observed_scores())
    ones = np.ones(data.n_units)
    f1 = _poly_features(ones, data.gps.imputed_scores(1.0)).mean(axis=0)
    f0 = _poly_features(np.zeros(data.n_units), data.gps.imputed_scores(0.0)).mean(axis=0)
    return phi, data.y, f1 - f0


def _point_gps_krr(data: Dataset) -> float:
    return ate(dose_response(beta_krr_fit(data), data.gps, ENDPOINT_GRID))


def _point_stratified(data: Dataset) -> float:
    return stratified_estimate(data, 1.0) - stratified_estimate(data, 0.0)


ESTIMATOR_REGISTRY: dict[str, StudyEstimator] = {
    "naive-mean": StudyEstimator("naive-mean", _point_naive_mean),
    "naive-ols": StudyEstimator("naive-ols", naive_ols, _design_naive_ols),
    "correct-spec": StudyEstimator(
        "correct-spec", _point_correct_spec, _design_correct_spec, _bound_correct_spec
    ),
    "ht": StudyEstimator("ht", _point_ht, _design_ht),
    "gps-cell": StudyEstimator("gps-cell", _point_gps_cell),
    "gps-poly": StudyEstimator("gps-poly", _point_gps_poly, _design_gps_poly),
    "gps-krr": StudyEstimator("gps-krr", _point_gps_krr),
    "stratified": StudyEstimator("stratified", _point_stratified),
}


def resolve_estimators(estimators) -> list[StudyEstimator]:
    resolved = []
    for est in estimators:
        if isinstance(est, StudyEstimator):
            resolved.append(est)
        elif est in ESTIMATOR_REGISTRY:
            resolved.append(ESTIMATOR_REGISTRY[est])
        else:
            known = ", ".join(sorted(ESTIMATOR_REGISTRY))
            raise ConfigError(f"unknown estimator {est!r} (known: {known})")
    return resolved


# -- interval methods -----------------------------------------------------------


def _interval_naive(data, est, b, level, rng, block_labels=None) -> IntervalEstimate:
    return naive_bootstrap(data, est.statistic(data), n_replicates=b, level=level, rng=rng)


def _interval_block(data, est, b, level, rng, block_labels=None) -> IntervalEstimate:
    return block_bootstrap(
        data, est.statistic(data), labels=block_labels, n_replicates=b, level=level, rng=rng
    )


def _interval_parametric(data, est, b, level, rng, block_labels=None) -> IntervalEstimate:
    if est.design is None:
        raise ConfigError(
            f"estimator {est.name!r} has no linear design; "
            "the parametric bootstrap does not apply"
        )
    phi, target, contrast = est.design(data)
    out = parametric_bootstrap(
        data, phi, target, contrast=contrast, n_replicates=b, level=level, rng=rng
    )
    return out.interval


def _interval_ols_asymptotic(data, est, b, level, rng, block_labels=None) -> IntervalEstimate:
    if est.design is None:
        raise ConfigError(
            f"estimator {est.name!r} has no linear design; "
            "the asymptotic interval does not apply"
        )
    phi, target, contrast = est.design(data)
    labels = tuple(f"c{j}" for j in range(phi.shape[1]))
    fit = ols(DesignMatrix(np.asarray(phi, dtype=np.float64), labels), target)
    estd = float(contrast @ fit.coef)
    se = float(np.sqrt(contrast @ fit.coef_cov @ contrast))
    z = float(stats.norm.ppf(0.5 + level / 2))
    return IntervalEstimate(
        estimate=estd,
        lower=estd - z * se,
        upper=estd + z * se,
        level=level,
        method="ols-asymptotic",
    )


INTERVAL_METHODS = {
    "naive-bootstrap": _interval_naive,
    "block-bootstrap": _interval_block,
    "parametric-bootstrap": _interval_parametric,
    "ols-asymptotic": _interval_ols_asymptotic,
}


# -- study runner ----------------------------------------------------------------


@dataclass(frozen=True)
class SimStudyResult:
    """Per-replicate estimates and coverage flags, plus aggregation helpers."""

    label: str
    n_sims: int
    n_requested: int
    b_replicates: int
    level: float
    master_seed: int
    truth: np.ndarray
    estimates: dict[str, np.ndarray]
    covered: dict[tuple[str, str], np.ndarray]
    point_failures: dict[str, int] = field(default_factory=dict)
    interval_failures: dict[tuple[str, str], int] = field(default_factory=dict)
    seed_scheme: str = SEED_SCHEME

    def bias(self, estimator: str) -> float:
        return float(np.nanmean(self.estimates[estimator] - self.truth))

    def rmse(self, estimator: str) -> float:
        dev = self.estimates[estimator] - self.truth
        return float(np.sqrt(np.nanmean(dev * dev)))

    def estimate_std(self, estimator: str) -> float:
        return float(np.nanstd(self.estimates[estimator]))

    def coverage(self, estimator: str, method: str) -> float:
        return float(np.nanmean(self.covered[(estimator, method)]))

    def summary(self) -> list[dict]:
        """One row per estimator, then one per (estimator, interval method)."""
        rows = []
        for name in self.estimates:
            rows.append(
                {
                    "estimator": name,
                    "interval_method": "",
                    "bias": self.bias(name),
                    "rmse": self.rmse(name),
                    "coverage": "",
                    "n_sims": self.n_sims,
                    "b_replicates": "",
                    "failures": self.point_failures.get(name, 0),
                }
            )
        for (name, method) in self.covered:
            rows.append(
                {
                    "estimator": name,
                    "interval_method": method,
                    "bias": self.bias(name),
                    "rmse": self.rmse(name),
                    "coverage": self.coverage(name, method),
                    "n_sims": self.n_sims,
                    "b_replicates": self.b_replicates,
                    "failures": self.interval_failures.get((name, method), 0),
                }
            )
        return rows

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "n_sims": self.n_sims,
            "n_requested": self.n_requested,
            "b_replicates": self.b_replicates,
            "level": self.level,
            "master_seed": self.master_seed,
            "seed_scheme": self.seed_scheme,
            "truth": [float(t) for t in self.truth],
            "estimates": {k: [float(v) for v in arr] for k, arr in self.estimates.items()},
            "covered": {
                f"{name}|{method}": [None if np.isnan(v) else float(v) for v in arr]
                for (name, method), arr in self.covered.items()
            },
            "point_failures": dict(self.point_failures),
            "interval_failures": {
                f"{name}|{method}": v for (name, method), v in self.interval_failures.items()
            },
            "summary": self.summary(),
        }

    def write_csv(self, dest) -> None:
        rows = self.summary()
        fields = list(rows[0].keys())
        close = False
        if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
            dest = open(dest, "w", newline="")
            close = True
        try:
            writer = csv.DictWriter(dest, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
        finally:
            if close:
                dest.close()

    def write_json(self, dest) -> None:
        close = False
        if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
            dest = open(dest, "w")
            close = True
        try:
            json.dump(self.as_dict(), dest, indent=2)
            dest.write("\n")
        finally:
            if close:
                dest.close()


def default_gps_table(
    graph: BipartiteGraph,
    design: AssignmentDesign,
    *,
    rng=None,
    mc_draws: int = 100_000,
) -> GpsTable:
    """Exact propensity table when feasible, Monte Carlo bins otherwise."""
    if design.kind != "completely-randomized" and int(graph.degrees.max(initial=0)) <= MAX_EXACT_DEGREE:
        return exact_gps_table(graph, design)
    return mc_gps(graph, design, Bucketing.equal_width(), n_draws=mc_draws, rng=rng)


def _simulate_one(ctx: dict, t: int):
    """One replicate: draw, estimate, cover. Pure given (ctx, t)."""
    dgp: DgpSpec = ctx["dgp"]
    rng = substream(ctx["master_seed"], _SIM_STREAM, t)
    if dgp.redraw_graph:
        graph = synth_graph(dgp.graph, rng)
        gps = default_gps_table(graph, dgp.design, rng=rng)
    else:
        graph = ctx["graph"]
        gps = ctx["gps"]
    z = draw_assignment(dgp.design, graph.m_diversion, rng)
    exposure = linear_exposure(graph, z)
    y = generate_outcomes(dgp, graph, exposure, rng)
    data = Dataset.build(graph, gps, y, exposure)
    truth = true_ate(dgp, graph)

    estimates: dict[str, float] = {}
    point_fail: dict[str, int] = {}
    for est in ctx["estimators"]:
        try:
            estimates[est.name] = float(est.point(data))
        except (DataError, NumericalError):
            estimates[est.name] = np.nan
            point_fail[est.name] = 1
    covered: dict[tuple[str, str], float] = {}
    iv_fail: dict[tuple[str, str], int] = {}
    for est in ctx["estimators"]:
        for method in ctx["intervals"].get(est.name, ()):
            fn = INTERVAL_METHODS[method]
            try:
                iv = fn(
                    data,
                    est,
                    ctx["b_replicates"],
                    ctx["level"],
                    rng,
                    block_labels=ctx["block_labels"],
                )
                covered[(est.name, method)] = 1.0 if iv.covers(truth) else 0.0
            except (DataError, NumericalError):
                covered[(est.name, method)] = np.nan
                iv_fail[(est.name, method)] = 1
    return truth, estimates, covered, point_fail, iv_fail


def run_study(
    dgp: DgpSpec,
    estimators,
    intervals: dict[str, tuple] | None = None,
    *,
    n_sims: int = 100,
    b_replicates: int = 200,
    level: float = 0.95,
    master_seed: int = 0,
    workers: int = 1,
    gps: GpsTable | None = None,
    block_labels: np.ndarray | None = None,
    progress=None,
) -> SimStudyResult:
    """Replay assignment -> exposure -> outcomes -> estimates n_sims times.

    Each replicate draws from its own substream of the master seed, so
    results are bit-identical for any worker count. Estimator or interval
    failures inside a replicate are recorded (NaN + census), not fatal.
    A KeyboardInterrupt truncates the study to the completed prefix.
    """
    if n_sims <= 0:
        raise ConfigError("n_sims must be positive")
    ests = resolve_estimators(estimators)
    intervals = dict(intervals or {})
    known_names = {e.name for e in ests}
    for name, methods in intervals.items():
        if name not in known_names:
            raise ConfigError(f"interval map names unknown estimator {name!r}")
        for m in methods:
            if m not in INTERVAL_METHODS:
                known = ", ".join(sorted(INTERVAL_METHODS))
                raise ConfigError(f"unknown interval method {m!r} (known: {known})")

    if isinstance(dgp.graph, GraphSpec) and not dgp.redraw_graph:
        graph0 = synth_graph(dgp.graph, substream(master_seed, _GRAPH_STREAM))
        dgp = replace(dgp, graph=graph0)
    graph = None if dgp.redraw_graph else dgp.graph
    if not dgp.redraw_graph and gps is None:
        gps = default_gps_table(graph, dgp.design, rng=substream(master_seed, _GPS_STREAM))

    ctx = {
        "dgp": dgp,
        "graph": graph,
        "gps": gps,
        "estimators": ests,
        "intervals": intervals,
        "b_replicates": b_replicates,
        "level": level,
        "master_seed": master_seed,
        "block_labels": block_labels,
    }

    results: list = [None] * n_sims
    done = 0
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for t, out in enumerate(pool.map(_sim_worker, [(ctx, t) for t in range(n_sims)])):
                    results[t] = out
                    done = t + 1
                    if progress is not None:
                        progress(done, n_sims)
        else:
            for t in range(n_sims):
                results[t] = _simulate_one(ctx, t)
                done = t + 1
                if progress is not None:
                    progress(done, n_sims)
    except KeyboardInterrupt:
        pass
    if done == 0:
        raise DataError("study interrupted before any replicate completed")

    truth = np.array([results[t][0] for t in range(done)])
    estimates = {
        e.name: np.array([results[t][1][e.name] for t in range(done)]) for e in ests
    }
    covered = {}
    for e in ests:
        for m in intervals.get(e.name, ()):
            covered[(e.name, m)] = np.array(
                [results[t][2].get((e.name, m), np.nan) for t in range(done)]
            )
    point_failures: dict[str, int] = {}
    interval_failures: dict[tuple[str, str], int] = {}
    for t in range(done):
        for k, v in results[t][3].items():
            point_failures[k] = point_failures.get(k, 0) + v
        for k, v in results[t][4].items():
            interval_failures[k] = interval_failures.get(k, 0) + v
    return SimStudyResult(
        label=dgp.label,
        n_sims=done,
        n_requested=n_sims,
        b_replicates=b_replicates,
        level=level,
        master_seed=master_seed,
        truth=truth,
        estimates=estimates,
        covered=covered,
        point_failures=point_failures,
        interval_failures=interval_failures,
    )


def _sim_worker(args):
    return _simulate_one(*args)


# -- edges-cut sweep --------------------------------------------------------------


def edges_cut_sweep(
    base_spec: GraphSpec,
    cut_shares,
    *,
    design: AssignmentDesign,
    sigma2_eps: float = 0.5,
    sigma2_gamma: float = 0.5,
    estimator: str = "naive-ols",
    n_sims: int = 100,
    b_replicates: int = 200,
    level: float = 0.95,
    master_seed: int = 0,
    workers: int = 1,
) -> list[dict]:
    """Coverage of block vs iid resampling as cross-block wiring grows.

    For each share, draws a block graph whose cross-block edge fraction is
    that share, runs a homogeneous-effect study with graph-propagated
    noise, and reports coverage for both resampling schemes. Blocks for
    the clustered scheme are the generator's block partition: resampling
    acts as if cross-block edges were cut, which is the point.
    """
    if base_spec.kind != "blocks":
        raise ConfigError("edges_cut_sweep needs a block graph recipe")
    rows: list[dict] = []
    labels = contiguous_blocks(base_spec.n_outcome, base_spec.n_blocks)
    for k, share in enumerate(cut_shares):
        spec_k = replace(base_spec, cross_share=float(share))
        graph_k = synth_graph(spec_k, substream(master_seed, _SWEEP_STREAM, k))
        dgp = DgpSpec(
            graph=graph_k,
            design=design,
            effect=HOMOGENEOUS,
            sigma2_eps=sigma2_eps,
            sigma2_gamma=sigma2_gamma,
            label=f"cut-share-{share:g}",
        )
        res = run_study(
            dgp,
            [estimator],
            {estimator: ("naive-bootstrap", "block-bootstrap")},
            n_sims=n_sims,
            b_replicates=b_replicates,
            level=level,
            master_seed=master_seed + k + 1,
            workers=workers,
            block_labels=labels,
        )
        for method in ("naive-bootstrap", "block-bootstrap"):
            rows.append(
                {
                    "cut_share": float(share),
                    "estimator": estimator,
                    "interval_method": method,
                    "coverage": res.coverage(estimator, method),
                    "bias": res.bias(estimator),
                    "rmse": res.rmse(estimator),
                    "n_sims": res.n_sims,
                    "failures": res.interval_failures.get((estimator, method), 0),
                }
            )
    return rows


def write_sweep_csv(rows: list[dict], dest) -> None:
    fields = list(rows[0].keys())
    close = False
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        dest = open(dest, "w", newline="")
        close = True
    try:
        writer = csv.DictWriter(dest, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if close:
            dest.close()


# -- worked two-type fixture ---------------------------------------------------


@dataclass(frozen=True)
class SimpleExample:
    """Two unit types: singles see one diversion unit at weight 1, doubles
    split weight across a dedicated pair. Outcomes equal exposure for
    doubles and zero for singles, so the exposure-response line is e/2
    and the ATE is 1/2, while simple averaging lands on 1/3."""

    graph: BipartiteGraph
    design: AssignmentDesign
    double_mask: np.ndarray
    true_ate: float = 0.5

    def outcomes(self, exposure) -> np.ndarray:
        return np.where(self.double_mask, np.asarray(exposure, dtype=np.float64), 0.0)


def simple_example(n_single: int = 200, n_double: int = 200, p: float = 0.5) -> SimpleExample:
    if n_single <= 0 or n_double <= 0:
        raise ConfigError("need at least one unit of each type")
    rows = []
    for i in range(n_single):
        rows.append([(i, 1.0)])
    base = n_single
    for d in range(n_double):
        rows.append([(base + 2 * d, 0.5), (base + 2 * d + 1, 0.5)])
    graph = BipartiteGraph.from_rows(rows, m_diversion=base + 2 * n_double)
    mask = np.zeros(n_single + n_double, dtype=bool)
    mask[n_single:] = True
    return SimpleExample(
        graph=graph, design=AssignmentDesign.bernoulli(p), double_mask=mask
    )
