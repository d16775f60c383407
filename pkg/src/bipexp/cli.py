"""Batch command line: graph generation, propensity tables, estimation, studies.

Commands read a single YAML config (a file path or the name of a shipped
preset), validated strictly before any computation: unknown keys are
rejected so typos fail loudly. Every command is deterministic given
(config, input files, seed) and writes a provenance sidecar with the
config hash, seed, and package version next to its outputs.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .design import AssignmentDesign, draw_assignment, linear_exposure, load_probability_file
from .errors import (
    BipexpError,
    ConfigError,
    DataError,
    NumericalError,
    ParseError,
)
from .estimators import (
    Dataset,
    ate,
    beta_cell_means,
    beta_krr_fit,
    beta_poly_fit,
    dose_response,
)
from .gps import Bucketing, exact_gps_table, mc_gps
from .graph import GraphSpec, IdMap, load_edge_list, synth_graph, write_edge_list
from .inference import IntervalEstimate
from .seeding import substream
from .simlab import (
    ESTIMATOR_REGISTRY,
    INTERVAL_METHODS,
    DgpSpec,
    default_gps_table,
    edges_cut_sweep,
    run_study,
    simple_example,
    write_sweep_csv,
)

PRESETS = (
    "homogeneous-uncorrelated",
    "heterogeneous-uncorrelated",
    "correlated-coverage",
    "edges-cut-sweep",
    "simple-example",
)

_EXIT_CODES = ((ConfigError, 2), (DataError, 3), (NumericalError, 4))


# -- config plumbing ----------------------------------------------------------


def load_config(ref: str) -> tuple[dict, bytes]:
    """Resolve a config reference: an existing file path wins over a preset name."""
    path = Path(ref)
    if path.is_file():
        raw = path.read_bytes()
    elif ref in PRESETS:
        raw = resources.files("bipexp.presets").joinpath(f"{ref}.yaml").read_bytes()
    else:
        raise ConfigError(
            f"config {ref!r} is neither a file nor a preset "
            f"(presets: {', '.join(PRESETS)})"
        )
    try:
        cfg = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    return cfg, raw


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")


def _section(cfg: dict, name: str, *, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"config is missing the {name!r} section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return sec


def _get(section: dict, key: str, kind, where: str, default=None, required: bool = False):
    if key not in section:
        if required:
            raise ConfigError(f"{where} is missing {key!r}")
        return default
    value = section[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    wrong_type = kind is not None and not isinstance(value, kind)
    bool_as_number = isinstance(value, bool) and kind is not bool
    if wrong_type or bool_as_number:
        raise ConfigError(f"{where}.{key} must be {getattr(kind, '__name__', kind)}")
    return value


# -- section builders ---------------------------------------------------------

_GRAPH_KEYS = (
    "kind", "path", "normalize", "n_outcome", "m_diversion",
    "deg_min", "deg_max", "n_blocks", "cross_share",
)


def build_graph(cfg: dict, seed: int):
    """Load or synthesize the graph; returns (graph, id_map, spec_or_none)."""
    sec = _section(cfg, "graph")
    _check_keys(sec, _GRAPH_KEYS, "graph")
    kind = _get(sec, "kind", str, "graph", default="external-file")
    if kind == "external-file" or "path" in sec:
        path = _get(sec, "path", str, "graph", required=True)
        graph, id_map = load_edge_list(path, normalize=_get(sec, "normalize", bool, "graph", default=False))
        return graph, id_map, None
    spec = GraphSpec(
        kind=kind,
        n_outcome=_get(sec, "n_outcome", int, "graph", required=True),
        m_diversion=_get(sec, "m_diversion", int, "graph", required=True),
        deg_min=_get(sec, "deg_min", int, "graph", default=1),
        deg_max=_get(sec, "deg_max", int, "graph", default=1),
        n_blocks=_get(sec, "n_blocks", int, "graph", default=1),
        cross_share=_get(sec, "cross_share", float, "graph", default=0.0),
        normalize=_get(sec, "normalize", bool, "graph", default=True),
    )
    graph = synth_graph(spec, substream(seed, 10))
    return graph, IdMap.identity(graph.n_outcome, graph.m_diversion), spec


def build_design(cfg: dict, id_map: IdMap | None) -> AssignmentDesign:
    sec = _section(cfg, "design")
    _check_keys(sec, ("kind", "p", "p_file", "k"), "design")
    kind = _get(sec, "kind", str, "design", default="bernoulli")
    if kind == "bernoulli":
        return AssignmentDesign.bernoulli(_get(sec, "p", float, "design", default=0.5))
    if kind == "bernoulli-heterogeneous":
        path = _get(sec, "p_file", str, "design", required=True)
        if id_map is None:
            raise ConfigError("bernoulli-heterogeneous requires a graph with ids")
        return AssignmentDesign.bernoulli_heterogeneous(load_probability_file(path, id_map))
    if kind == "completely-randomized":
        return AssignmentDesign.completely_randomized(_get(sec, "k", int, "design", required=True))
    raise ConfigError(f"unknown design kind {kind!r}")


def build_gps(cfg: dict, graph, design, seed: int):
    sec = _section(cfg, "gps", required=False)
    _check_keys(sec, ("mode", "n_draws", "bins", "tol"), "gps")
    mode = _get(sec, "mode", str, "gps", default="auto")
    if mode == "exact":
        return exact_gps_table(graph, design)
    if mode == "monte-carlo":
        bins = _get(sec, "bins", int, "gps", default=20)
        n_draws = _get(sec, "n_draws", int, "gps", default=100_000)
        return mc_gps(
            graph, design, Bucketing.equal_width(n_bins=bins),
            n_draws=n_draws, rng=substream(seed, 11),
        )
    if mode == "auto":
        return default_gps_table(graph, design, rng=substream(seed, 11))
    raise ConfigError(f"unknown gps mode {mode!r}")


def _parse_estimators(cfg: dict) -> list[str]:
    names = cfg.get("estimators", ["naive-ols"])
    if not isinstance(names, list) or not names:
        raise ConfigError("estimators must be a nonempty list")
    for n in names:
        if n not in ESTIMATOR_REGISTRY:
            raise ConfigError(
                f"unknown estimator {n!r} (known: {', '.join(sorted(ESTIMATOR_REGISTRY))})"
            )
    return names


def _parse_intervals(cfg: dict, names: list[str]) -> dict[str, tuple]:
    sec = _section(cfg, "intervals", required=False)
    out: dict[str, tuple] = {}
    for key, methods in sec.items():
        if key not in names:
            raise ConfigError(f"intervals name unknown estimator {key!r}")
        if not isinstance(methods, list):
            raise ConfigError("intervals values must be lists of method names")
        for m in methods:
            if m not in INTERVAL_METHODS:
                raise ConfigError(
                    f"unknown interval method {m!r} "
                    f"(known: {', '.join(sorted(INTERVAL_METHODS))})"
                )
        out[key] = tuple(methods)
    return out


# -- column-file loaders --------------------------------------------------------


def _load_column(path: str, key_header: str, value_header: str, index: dict[str, int]) -> np.ndarray:
    """Read a strict two-column CSV covering every id in `index` exactly once."""
    out = np.full(len(index), np.nan)
    seen = np.zeros(len(index), dtype=bool)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if [h.strip() for h in header] != [key_header, value_header]:
            raise ParseError(
                f"{path}: expected header {key_header!r},{value_header!r}", line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"{path}: expected 2 columns, got {len(row)}", line=lineno)
            key = row[0].strip()
            if key not in index:
                raise DataError(f"{path}: unknown {key_header} {key!r} (line {lineno})")
            i = index[key]
            if seen[i]:
                raise DataError(f"{path}: duplicate {key_header} {key!r} (line {lineno})")
            try:
                out[i] = float(row[1])
            except ValueError as exc:
                raise ParseError(f"{path}: bad {value_header} value {row[1]!r}", line=lineno) from exc
            seen[i] = True
    if not np.all(seen):
        missing = int((~seen).sum())
        raise DataError(f"{path}: {missing} {key_header} values missing")
    return out


# -- output plumbing -------------------------------------------------------------


def _write_table(rows: list[dict], out_dir: Path, stem: str, fmt: str) -> Path:
    if fmt == "json":
        path = out_dir / f"{stem}.json"
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
        return path
    path = out_dir / f"{stem}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return path


def _write_provenance(out_dir: Path, command: str, raw: bytes, seed: int, outputs: list[str], notes=None) -> None:
    record = {
        "command": command,
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "seed": seed,
        "package": "bipexp",
        "version": __version__,
        "outputs": outputs,
    }
    if notes:
        record["notes"] = notes
    with open(out_dir / "provenance.json", "w") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")


def _resolve_seed(cfg: dict, args) -> int:
    if args.seed is not None:
        return args.seed
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return seed


def _resolve_out(cfg: dict, args) -> Path:
    out = args.out or cfg.get("out", ".")
    if not isinstance(out, str):
        raise ConfigError("out must be a directory path")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- commands ---------------------------------------------------------------------

_TOP_KEYS_COMMON = ("seed", "out")


def cmd_graph_gen(cfg: dict, args) -> int:
    _check_keys(cfg, _TOP_KEYS_COMMON + ("graph",), "config")
    seed = _resolve_seed(cfg, args)
    out_dir = _resolve_out(cfg, args)
    graph, id_map, spec = build_graph(cfg, seed)
    if spec is None:
        raise ConfigError("graph-gen needs a synthetic graph spec, not an external file")
    graph_path = out_dir / "graph.csv"
    write_edge_list(graph, graph_path, id_map=id_map)
    degrees = graph.degrees
    hist = np.bincount(degrees, minlength=int(degrees.max(initial=0)) + 1)
    summary = {
        "n_outcome": graph.n_outcome,
        "m_diversion": graph.m_diversion,
        "n_edges": graph.nnz,
        "degree_histogram": {str(d): int(c) for d, c in enumerate(hist) if c > 0},
        "row_normalized": bool(graph.row_normalized),
    }
    with open(out_dir / "graph_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    _write_provenance(out_dir, "graph-gen", args.raw_config, seed,
                      ["graph.csv", "graph_summary.json"])
    print(f"graph-gen: wrote {graph_path} ({graph.n_outcome}x{graph.m_diversion}, {graph.nnz} edges)")
    return 0


def cmd_gps(cfg: dict, args) -> int:
    _check_keys(cfg, _TOP_KEYS_COMMON + ("graph", "design", "gps"), "config")
    seed = _resolve_seed(cfg, args)
    out_dir = _resolve_out(cfg, args)
    graph, id_map, _ = build_graph(cfg, seed)
    design = build_design(cfg, id_map)
    table = build_gps(cfg, graph, design, seed)
    gps_path = out_dir / "gps.csv"
    table.write_csv(gps_path, id_map=id_map)
    _write_provenance(out_dir, "gps", args.raw_config, seed, ["gps.csv"])
    print(f"gps: wrote {gps_path} ({table.n_units} units, mode {table.mode})")
    return 0


_DATA_KEYS = ("fixture", "n_single", "n_double", "outcomes", "assignment", "exposures")


def _build_estimate_inputs(cfg: dict, seed: int):
    """Returns (dataset, id_map). Fixture configs synthesize everything."""
    sec = _section(cfg, "data")
    _check_keys(sec, _DATA_KEYS, "data")
    fixture = _get(sec, "fixture", str, "data")
    if fixture is not None:
        if fixture != "simple-example":
            raise ConfigError(f"unknown fixture {fixture!r}")
        example = simple_example(
            n_single=_get(sec, "n_single", int, "data", default=200),
            n_double=_get(sec, "n_double", int, "data", default=200),
        )
        graph, design = example.graph, example.design
        rng = substream(seed, 12)
        z = draw_assignment(design, graph.m_diversion, rng)
        exposure = linear_exposure(graph, z)
        y = example.outcomes(exposure)
        gps_table = build_gps(cfg, graph, design, seed)
        id_map = IdMap.identity(graph.n_outcome, graph.m_diversion)
        return Dataset.build(graph, gps_table, y, exposure), id_map

    graph, id_map, _ = build_graph(cfg, seed)
    design = build_design(cfg, id_map)
    outcomes_path = _get(sec, "outcomes", str, "data", required=True)
    y = _load_column(outcomes_path, "outcome_id", "y", id_map.outcome_index())
    if "exposures" in sec and "assignment" in sec:
        raise ConfigError("give either data.assignment or data.exposures, not both")
    if "exposures" in sec:
        exposure = _load_column(
            _get(sec, "exposures", str, "data"), "outcome_id", "exposure",
            id_map.outcome_index(),
        )
    else:
        z_path = _get(sec, "assignment", str, "data", required=True)
        z = _load_column(z_path, "diversion_id", "z", id_map.diversion_index())
        if not np.all((z == 0) | (z == 1)):
            raise DataError(f"{z_path}: assignment values must be 0 or 1")
        exposure = linear_exposure(graph, z.astype(np.uint8))
    gps_table = build_gps(cfg, graph, design, seed)
    return Dataset.build(graph, gps_table, y, exposure), id_map


_SURFACE_FITTERS = {
    "gps-cell": beta_cell_means,
    "gps-poly": beta_poly_fit,
    "gps-krr": beta_krr_fit,
}


def cmd_estimate(cfg: dict, args) -> int:
    _check_keys(
        cfg,
        _TOP_KEYS_COMMON
        + ("graph", "design", "gps", "data", "estimators", "intervals",
           "b_replicates", "level", "grid"),
        "config",
    )
    seed = _resolve_seed(cfg, args)
    out_dir = _resolve_out(cfg, args)
    names = _parse_estimators(cfg)
    intervals = _parse_intervals(cfg, names)
    b = _get(cfg, "b_replicates", int, "config", default=1000)
    level = _get(cfg, "level", float, "config", default=0.95)
    grid = cfg.get("grid")
    if grid is not None and (not isinstance(grid, list) or not grid):
        raise ConfigError("grid must be a nonempty list of exposure levels")

    data, _ = _build_estimate_inputs(cfg, seed)
    rows: list[dict] = []
    rng = substream(seed, 13)

    def empty_interval():
        return {"interval_method": "", "lower": "", "upper": "",
                "interval_level": "", "b_replicates": ""}

    for name in names:
        est = ESTIMATOR_REGISTRY[name]
        point = float(est.point(data))
        rows.append({"estimator": name, "quantity": "ate", "level": "",
                     "estimate": point, **empty_interval()})
        for method in intervals.get(name, ()):
            iv: IntervalEstimate = INTERVAL_METHODS[method](data, est, b, level, rng)
            rows.append({
                "estimator": name, "quantity": "ate", "level": "",
                "estimate": iv.estimate, "interval_method": method,
                "lower": iv.lower, "upper": iv.upper,
                "interval_level": iv.level, "b_replicates": iv.n_replicates,
            })
        if grid is not None and name in _SURFACE_FITTERS:
            surface = _SURFACE_FITTERS[name](data)
            curve = dose_response(surface, data.gps, np.asarray(grid, dtype=np.float64))
            for e, mu in zip(curve.grid, curve.mu_hat):
                rows.append({"estimator": name, "quantity": "mu", "level": float(e),
                             "estimate": float(mu), **empty_interval()})
    table_path = _write_table(rows, out_dir, "estimates", args.format)
    _write_provenance(out_dir, "estimate", args.raw_config, seed, [table_path.name])
    print(f"estimate: wrote {table_path} ({len(rows)} rows)")
    return 0


_STUDY_KEYS = (
    "label", "effect", "sigma2_eps", "sigma2_gamma", "redraw_graph",
    "n_sims", "b_replicates", "level",
)


def cmd_simulate(cfg: dict, args) -> int:
    _check_keys(
        cfg,
        _TOP_KEYS_COMMON + ("graph", "design", "gps", "study", "estimators", "intervals"),
        "config",
    )
    seed = _resolve_seed(cfg, args)
    out_dir = _resolve_out(cfg, args)
    sec = _section(cfg, "study")
    _check_keys(sec, _STUDY_KEYS, "study")
    n_sims = _get(sec, "n_sims", int, "study", default=100)
    if n_sims <= 0:
        raise ConfigError("study.n_sims must be positive")
    graph, id_map, spec = build_graph(cfg, seed)
    design = build_design(cfg, id_map)
    redraw = _get(sec, "redraw_graph", bool, "study", default=False)
    dgp = DgpSpec(
        graph=spec if (redraw and spec is not None) else graph,
        design=design,
        effect=_get(sec, "effect", str, "study", default="homogeneous"),
        sigma2_eps=_get(sec, "sigma2_eps", float, "study", default=0.0),
        sigma2_gamma=_get(sec, "sigma2_gamma", float, "study", default=0.0),
        redraw_graph=redraw,
        label=_get(sec, "label", str, "study", default=""),
    )
    names = _parse_estimators(cfg)
    intervals = _parse_intervals(cfg, names)
    gps_table = None if redraw else build_gps(cfg, graph, design, seed)

    def progress(done: int, total: int) -> None:
        if done == total or done % max(1, total // 10) == 0:
            print(f"simulate: {done}/{total} replicates", file=sys.stderr)

    result = run_study(
        dgp, names, intervals,
        n_sims=n_sims,
        b_replicates=_get(sec, "b_replicates", int, "study", default=200),
        level=_get(sec, "level", float, "study", default=0.95),
        master_seed=seed,
        workers=args.workers,
        gps=gps_table,
        progress=progress,
    )
    csv_path = out_dir / "study.csv"
    json_path = out_dir / "study.json"
    result.write_csv(csv_path)
    result.write_json(json_path)
    notes = None
    if result.n_sims < result.n_requested:
        notes = f"interrupted: {result.n_sims}/{result.n_requested} replicates completed"
    _write_provenance(out_dir, "simulate", args.raw_config, seed,
                      ["study.csv", "study.json"], notes=notes)
    print(f"simulate: wrote {csv_path} and {json_path} ({result.n_sims} replicates)")
    return 0


_SWEEP_KEYS = (
    "cut_shares", "sigma2_eps", "sigma2_gamma", "estimator",
    "n_sims", "b_replicates", "level",
)


def cmd_sweep(cfg: dict, args) -> int:
    _check_keys(cfg, _TOP_KEYS_COMMON + ("graph", "design", "sweep"), "config")
    seed = _resolve_seed(cfg, args)
    out_dir = _resolve_out(cfg, args)
    sec = _section(cfg, "sweep")
    _check_keys(sec, _SWEEP_KEYS, "sweep")
    shares = sec.get("cut_shares", [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    if not isinstance(shares, list) or not shares:
        raise ConfigError("sweep.cut_shares must be a nonempty list")
    gsec = _section(cfg, "graph")
    _check_keys(gsec, _GRAPH_KEYS, "graph")
    spec = GraphSpec(
        kind=_get(gsec, "kind", str, "graph", default="blocks"),
        n_outcome=_get(gsec, "n_outcome", int, "graph", required=True),
        m_diversion=_get(gsec, "m_diversion", int, "graph", required=True),
        deg_min=_get(gsec, "deg_min", int, "graph", default=1),
        deg_max=_get(gsec, "deg_max", int, "graph", default=1),
        n_blocks=_get(gsec, "n_blocks", int, "graph", default=10),
        cross_share=0.0,
        normalize=_get(gsec, "normalize", bool, "graph", default=True),
    )
    design = build_design(cfg, None)
    rows = edges_cut_sweep(
        spec,
        [float(s) for s in shares],
        design=design,
        sigma2_eps=_get(sec, "sigma2_eps", float, "sweep", default=0.5),
        sigma2_gamma=_get(sec, "sigma2_gamma", float, "sweep", default=0.5),
        estimator=_get(sec, "estimator", str, "sweep", default="naive-ols"),
        n_sims=_get(sec, "n_sims", int, "sweep", default=100),
        b_replicates=_get(sec, "b_replicates", int, "sweep", default=200),
        level=_get(sec, "level", float, "sweep", default=0.95),
        master_seed=seed,
        workers=args.workers,
    )
    sweep_path = out_dir / "sweep.csv"
    write_sweep_csv(rows, sweep_path)
    _write_provenance(out_dir, "sweep", args.raw_config, seed, ["sweep.csv"])
    print(f"sweep: wrote {sweep_path} ({len(rows)} rows)")
    return 0


_COMMANDS = {
    "graph-gen": cmd_graph_gen,
    "gps": cmd_gps,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def _emit_error(exc: Exception, code: int) -> None:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record), file=sys.stderr)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bipexp",
        description="Exposure-response estimation for bipartite experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="config file path or preset name")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    args = parser.parse_args(argv)
    try:
        cfg, raw = load_config(args.config)
        args.raw_config = raw
        declared = cfg.pop("command", None)
        if declared is not None and declared != args.command:
            raise ConfigError(
                f"config declares command {declared!r} but {args.command!r} was invoked"
            )
        return _COMMANDS[args.command](cfg, args)
    except BipexpError as exc:
        for klass, code in _EXIT_CODES:
            if isinstance(exc, klass):
                _emit_error(exc, code)
                return code
        _emit_error(exc, 1)
        return 1
    except OSError as exc:
        _emit_error(exc, 3)
        return 3


if __name__ == "__main__":
    sys.exit(main())
