"""End-to-end command line runs in temp directories.

Each test drives `main` with a real YAML config and checks outputs,
provenance sidecars, exit codes, and the JSON error records on stderr.
"""

import csv
import hashlib
import json

import pytest
import yaml

from bipexp import __version__
from bipexp.cli import PRESETS, _COMMANDS, load_config, main

EDGES_CSV = (
    "outcome_id,diversion_id,weight\n"
    "a,x,1.0\n"
    "b,x,0.5\n"
    "b,y,0.5\n"
    "c,y,1.0\n"
)


def write_yaml(path, mapping) -> None:
    path.write_text(yaml.safe_dump(mapping, sort_keys=False))


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def stderr_record(capsys) -> dict:
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def graph_gen_config(tmp_path, **overrides):
    cfg = {
        "seed": 5,
        "graph": {
            "kind": "uniform-degree", "n_outcome": 30, "m_diversion": 10,
            "deg_min": 1, "deg_max": 3,
        },
    }
    cfg.update(overrides)
    path = tmp_path / "graph_gen.yaml"
    write_yaml(path, cfg)
    return path


# -- graph-gen ----------------------------------------------------------------


def test_graph_gen_outputs_and_provenance(tmp_path, capsys):
    cfg_path = graph_gen_config(tmp_path)
    out = tmp_path / "out"
    rc = main(["graph-gen", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    assert "graph-gen: wrote" in capsys.readouterr().out

    summary = json.loads((out / "graph_summary.json").read_text())
    assert summary["n_outcome"] == 30
    assert summary["m_diversion"] == 10
    assert summary["row_normalized"] is True
    hist = summary["degree_histogram"]
    assert set(hist) <= {"1", "2", "3"}
    assert sum(hist.values()) == 30
    assert summary["n_edges"] == sum(int(d) * c for d, c in hist.items())

    prov = json.loads((out / "provenance.json").read_text())
    assert prov["command"] == "graph-gen"
    assert prov["seed"] == 5
    assert prov["config_sha256"] == hashlib.sha256(cfg_path.read_bytes()).hexdigest()
    assert prov["version"] == __version__
    assert prov["outputs"] == ["graph.csv", "graph_summary.json"]

    edge_rows = read_rows(out / "graph.csv")
    assert len(edge_rows) == summary["n_edges"]
    assert set(edge_rows[0]) == {"outcome_id", "diversion_id", "weight"}


def test_graph_gen_deterministic_and_seed_sensitive(tmp_path):
    cfg_path = graph_gen_config(tmp_path)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["graph-gen", "--config", str(cfg_path), "--out", str(a)]) == 0
    assert main(["graph-gen", "--config", str(cfg_path), "--out", str(b)]) == 0
    assert (a / "graph.csv").read_bytes() == (b / "graph.csv").read_bytes()
    assert main(["graph-gen", "--config", str(cfg_path), "--out", str(c), "--seed", "9"]) == 0
    assert (a / "graph.csv").read_bytes() != (c / "graph.csv").read_bytes()
    assert json.loads((c / "provenance.json").read_text())["seed"] == 9


def test_graph_gen_rejects_external_graph(tmp_path, capsys):
    edges = tmp_path / "edges.csv"
    edges.write_text(EDGES_CSV)
    cfg_path = tmp_path / "cfg.yaml"
    write_yaml(cfg_path, {"graph": {"path": str(edges)}})
    rc = main(["graph-gen", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert rc == 2
    record = stderr_record(capsys)
    assert record["error"] == "ConfigError"
    assert record["exit_code"] == 2
    assert "synthetic" in record["message"]


def test_missing_graph_file_exits_3(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_yaml(cfg_path, {"graph": {"path": str(tmp_path / "nope.csv")},
                          "design": {"kind": "bernoulli"}})
    rc = main(["gps", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert rc == 3
    assert stderr_record(capsys)["exit_code"] == 3


# -- gps ---------------------------------------------------------------------


def external_graph_config(tmp_path, gps_section=None):
    edges = tmp_path / "edges.csv"
    edges.write_text(EDGES_CSV)
    cfg = {"graph": {"path": str(edges)}, "design": {"kind": "bernoulli", "p": 0.5}}
    if gps_section is not None:
        cfg["gps"] = gps_section
    path = tmp_path / "cfg.yaml"
    write_yaml(path, cfg)
    return path


def test_gps_exact_table(tmp_path):
    cfg_path = external_graph_config(tmp_path, {"mode": "exact"})
    out = tmp_path / "out"
    assert main(["gps", "--config", str(cfg_path), "--out", str(out)]) == 0
    rows = read_rows(out / "gps.csv")
    assert {r["outcome_id"] for r in rows} == {"a", "b", "c"}
    for unit in ("a", "b", "c"):
        total = sum(float(r["probability"]) for r in rows if r["outcome_id"] == unit)
        assert total == pytest.approx(1.0, abs=1e-12)
    # atoms: each support point is a zero-width bucket
    assert all(r["exposure_lo"] == r["exposure_hi"] for r in rows)
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["command"] == "gps"
    assert prov["outputs"] == ["gps.csv"]


def test_gps_monte_carlo_mode(tmp_path):
    cfg_path = external_graph_config(tmp_path, {"mode": "monte-carlo", "bins": 10, "n_draws": 2000})
    out = tmp_path / "out"
    assert main(["gps", "--config", str(cfg_path), "--out", str(out)]) == 0
    rows = read_rows(out / "gps.csv")
    assert all(float(r["exposure_lo"]) < float(r["exposure_hi"]) for r in rows)
    for unit in ("a", "b", "c"):
        total = sum(float(r["probability"]) for r in rows if r["outcome_id"] == unit)
        assert total == pytest.approx(1.0, abs=1e-9)


def test_gps_unknown_mode_exits_2(tmp_path, capsys):
    cfg_path = external_graph_config(tmp_path, {"mode": "guess"})
    assert main(["gps", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 2
    assert "unknown gps mode" in stderr_record(capsys)["message"]


# -- estimate -----------------------------------------------------------------


def fixture_config(tmp_path, **extra):
    cfg = {
        "seed": 3,
        "data": {"fixture": "simple-example", "n_single": 60, "n_double": 60},
        "estimators": ["naive-mean", "ht", "gps-cell"],
        "grid": [0.0, 1.0],
    }
    cfg.update(extra)
    path = tmp_path / "estimate.yaml"
    write_yaml(path, cfg)
    return path


def test_estimate_fixture_table(tmp_path):
    cfg_path = fixture_config(tmp_path)
    out = tmp_path / "out"
    assert main(["estimate", "--config", str(cfg_path), "--out", str(out)]) == 0
    rows = read_rows(out / "estimates.csv")
    ate_rows = {r["estimator"]: r for r in rows if r["quantity"] == "ate"}
    mu_rows = [r for r in rows if r["quantity"] == "mu"]
    assert set(ate_rows) == {"naive-mean", "ht", "gps-cell"}
    assert [r["estimator"] for r in mu_rows] == ["gps-cell", "gps-cell"]
    # noise-free two-type outcomes: the cell-mean curve hits 0 and 1/2 exactly
    mu = {float(r["level"]): float(r["estimate"]) for r in mu_rows}
    assert mu[0.0] == pytest.approx(0.0, abs=1e-12)
    assert mu[1.0] == pytest.approx(0.5, abs=1e-12)
    assert float(ate_rows["gps-cell"]["estimate"]) == pytest.approx(0.5, abs=1e-12)
    assert 0.0 < float(ate_rows["naive-mean"]["estimate"]) < 0.5

    again = tmp_path / "again"
    assert main(["estimate", "--config", str(cfg_path), "--out", str(again)]) == 0
    assert (out / "estimates.csv").read_bytes() == (again / "estimates.csv").read_bytes()


def test_estimate_interval_rows(tmp_path):
    cfg_path = fixture_config(
        tmp_path,
        estimators=["naive-ols"],
        intervals={"naive-ols": ["naive-bootstrap"]},
        b_replicates=60,
        level=0.9,
        grid=None,
    )
    out = tmp_path / "out"
    assert main(["estimate", "--config", str(cfg_path), "--out", str(out)]) == 0
    rows = read_rows(out / "estimates.csv")
    assert len(rows) == 2
    point, iv = rows
    assert point["interval_method"] == ""
    assert iv["interval_method"] == "naive-bootstrap"
    assert float(iv["lower"]) < float(iv["upper"])
    assert float(iv["interval_level"]) == pytest.approx(0.9)
    assert int(iv["b_replicates"]) == 60


def test_estimate_json_format(tmp_path):
    cfg_path = fixture_config(tmp_path)
    out = tmp_path / "out"
    rc = main(["estimate", "--config", str(cfg_path), "--out", str(out), "--format", "json"])
    assert rc == 0
    rows = json.loads((out / "estimates.json").read_text())
    assert isinstance(rows, list)
    assert rows[0]["quantity"] == "ate"


def file_inputs_config(tmp_path, outcomes_rows, z_rows=("x,1", "y,0")):
    edges = tmp_path / "edges.csv"
    edges.write_text(EDGES_CSV)
    outcomes = tmp_path / "outcomes.csv"
    outcomes.write_text("\n".join(outcomes_rows) + "\n")
    assignment = tmp_path / "assignment.csv"
    assignment.write_text("\n".join(("diversion_id,z",) + tuple(z_rows)) + "\n")
    cfg = {
        "graph": {"path": str(edges)},
        "design": {"kind": "bernoulli", "p": 0.5},
        "data": {"outcomes": str(outcomes), "assignment": str(assignment)},
        "estimators": ["naive-mean"],
    }
    path = tmp_path / "cfg.yaml"
    write_yaml(path, cfg)
    return path


def test_estimate_joins_files_by_external_id(tmp_path):
    # rows deliberately out of graph order; z = (x on, y off) makes
    # exposures a=1, b=1/2, c=0 so naive-mean is y_a - y_c = -2
    cfg_path = file_inputs_config(tmp_path, ("outcome_id,y", "c,4.0", "a,2.0", "b,5.0"))
    out = tmp_path / "out"
    assert main(["estimate", "--config", str(cfg_path), "--out", str(out)]) == 0
    rows = read_rows(out / "estimates.csv")
    assert float(rows[0]["estimate"]) == pytest.approx(-2.0, abs=1e-12)


def test_estimate_missing_outcome_exits_3(tmp_path, capsys):
    cfg_path = file_inputs_config(tmp_path, ("outcome_id,y", "a,2.0", "b,5.0"))
    rc = main(["estimate", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "missing" in stderr_record(capsys)["message"]


def test_estimate_bad_header_exits_3(tmp_path, capsys):
    cfg_path = file_inputs_config(tmp_path, ("outcome,y", "a,2.0", "b,5.0", "c,4.0"))
    rc = main(["estimate", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert rc == 3
    assert stderr_record(capsys)["error"] == "ParseError"


def test_estimate_rejects_exposures_plus_assignment(tmp_path, capsys):
    cfg_path = file_inputs_config(tmp_path, ("outcome_id,y", "a,2.0", "b,5.0", "c,4.0"))
    cfg = yaml.safe_load(cfg_path.read_text())
    cfg["data"]["exposures"] = cfg["data"]["assignment"]
    write_yaml(cfg_path, cfg)
    rc = main(["estimate", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "not both" in stderr_record(capsys)["message"]


def test_estimate_unknown_estimator_exits_2(tmp_path, capsys):
    cfg_path = fixture_config(tmp_path, estimators=["bogus"])
    rc = main(["estimate", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "unknown estimator" in stderr_record(capsys)["message"]


# -- simulate and sweep ---------------------------------------------------------


def test_simulate_command(tmp_path, capsys):
    cfg_path = tmp_path / "sim.yaml"
    write_yaml(cfg_path, {
        "seed": 7,
        "graph": {"kind": "uniform-degree", "n_outcome": 40, "m_diversion": 12,
                  "deg_min": 1, "deg_max": 3},
        "design": {"kind": "bernoulli", "p": 0.5},
        "study": {"effect": "heterogeneous", "sigma2_eps": 0.1,
                  "n_sims": 4, "b_replicates": 50},
        "estimators": ["naive-ols"],
        "intervals": {"naive-ols": ["naive-bootstrap"]},
    })
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
    captured = capsys.readouterr()
    assert "simulate: wrote" in captured.out
    assert "replicates" in captured.err  # progress goes to stderr

    blob = json.loads((out / "study.json").read_text())
    assert blob["n_sims"] == 4
    assert blob["master_seed"] == 7
    assert len(blob["estimates"]["naive-ols"]) == 4
    assert "naive-ols|naive-bootstrap" in blob["covered"]
    assert len(read_rows(out / "study.csv")) == 2  # point row + interval row
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["outputs"] == ["study.csv", "study.json"]


def test_sweep_command(tmp_path):
    cfg_path = tmp_path / "sweep.yaml"
    write_yaml(cfg_path, {
        "seed": 1,
        "graph": {"kind": "blocks", "n_outcome": 40, "m_diversion": 20,
                  "deg_min": 1, "deg_max": 2, "n_blocks": 5},
        "design": {"kind": "bernoulli", "p": 0.5},
        "sweep": {"cut_shares": [0.0, 0.25], "n_sims": 2, "b_replicates": 50},
    })
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg_path), "--out", str(out)]) == 0
    rows = read_rows(out / "sweep.csv")
    assert len(rows) == 4
    assert [float(r["cut_share"]) for r in rows] == [0.0, 0.0, 0.25, 0.25]
    assert {r["interval_method"] for r in rows} == {"naive-bootstrap", "block-bootstrap"}


# -- config plumbing -------------------------------------------------------------


def test_unknown_top_level_key_exits_2(tmp_path, capsys):
    cfg_path = graph_gen_config(tmp_path, graphs={"kind": "uniform-degree"})
    rc = main(["graph-gen", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "unknown keys in config: graphs" in stderr_record(capsys)["message"]


def test_command_mismatch_exits_2(tmp_path, capsys):
    cfg_path = fixture_config(tmp_path, command="estimate")
    rc = main(["gps", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "declares command" in stderr_record(capsys)["message"]


def test_unknown_config_ref_exits_2(tmp_path, capsys):
    rc = main(["estimate", "--config", str(tmp_path / "absent.yaml")])
    assert rc == 2
    assert "presets" in stderr_record(capsys)["message"]


def test_invalid_yaml_exits_2(tmp_path, capsys):
    cfg_path = tmp_path / "bad.yaml"
    cfg_path.write_text("{{")
    rc = main(["estimate", "--config", str(cfg_path)])
    assert rc == 2
    assert "not valid YAML" in stderr_record(capsys)["message"]


def test_config_root_must_be_mapping(tmp_path, capsys):
    cfg_path = tmp_path / "list.yaml"
    cfg_path.write_text("- 1\n- 2\n")
    rc = main(["estimate", "--config", str(cfg_path)])
    assert rc == 2
    assert "mapping" in stderr_record(capsys)["message"]


def test_bad_design_kind_exits_2(tmp_path, capsys):
    edges = tmp_path / "edges.csv"
    edges.write_text(EDGES_CSV)
    cfg_path = tmp_path / "cfg.yaml"
    write_yaml(cfg_path, {"graph": {"path": str(edges)}, "design": {"kind": "coin"}})
    rc = main(["gps", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "unknown design kind" in stderr_record(capsys)["message"]


# -- presets ----------------------------------------------------------------------


def test_presets_load_and_declare_commands():
    for name in PRESETS:
        cfg, raw = load_config(name)
        assert isinstance(cfg, dict)
        assert cfg["command"] in _COMMANDS
        assert isinstance(cfg["seed"], int)
        assert hashlib.sha256(raw).hexdigest()  # raw bytes round out provenance


def test_simple_example_preset_runs(tmp_path):
    out = tmp_path / "out"
    assert main(["estimate", "--config", "simple-example", "--out", str(out)]) == 0
    rows = read_rows(out / "estimates.csv")
    ate_rows = [r for r in rows if r["quantity"] == "ate"]
    assert [r["estimator"] for r in ate_rows] == [
        "naive-mean", "naive-ols", "ht", "gps-cell", "stratified"
    ]
    assert all(r["quantity"] in ("ate", "mu") for r in rows)
