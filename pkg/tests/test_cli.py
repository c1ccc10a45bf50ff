"""End-to-end tests for the command line interface.

Everything runs in-process through ``main(argv)`` so exit codes and output
files can be asserted directly.
"""

import csv
import json

import numpy as np
import pytest

from secnet import netgen
from secnet.cli import EXIT_COMPUTE, EXIT_INPUT, main
from secnet.experiment import Design, TopologyFactor, read_results_csv


@pytest.fixture()
def graph_file(tmp_path):
    graph = netgen.gen_erdos_renyi(6, 9, np.random.default_rng(11))
    path = tmp_path / "graph.json"
    netgen.write_graph_json(graph, path)
    return path


def read_manifest(out_path):
    with open(str(out_path) + ".manifest.json") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# generate


def test_generate_writes_graph_and_manifest(tmp_path, capsys):
    out = tmp_path / "g.json"
    rc = main(["generate", "--kind", "ER", "--n", "8", "--edges", "12",
               "--seed", "5", "--out", str(out)])
    assert rc == 0
    graph = netgen.read_graph_json(out)
    assert graph.n == 8 and graph.n_edges == 12
    lines = capsys.readouterr().out.splitlines()
    assert "n = 8" in lines
    assert "edges = 12" in lines
    assert f"fingerprint = {graph.fingerprint()}" in lines
    manifest = read_manifest(out)
    assert manifest["tool"] == "secnet"
    assert manifest["command"] == "generate"
    assert manifest["args"]["seed"] == 5
    assert manifest["args"]["kind"] == "ER"
    # no timestamps anywhere in the manifest
    assert "time" not in json.dumps(manifest).lower()


def test_generate_density_is_converted(tmp_path):
    out = tmp_path / "g.json"
    rc = main(["generate", "--kind", "ER", "--n", "10", "--density", "0.7",
               "--seed", "1", "--out", str(out)])
    assert rc == 0
    assert netgen.read_graph_json(out).n_edges == 32


def test_generate_missing_seed_draws_entropy_and_reruns(tmp_path):
    out = tmp_path / "g.json"
    rc = main(["generate", "--kind", "PA", "--n", "12", "--edges", "20",
               "--power", "3", "--out", str(out)])
    assert rc == 0
    manifest = read_manifest(out)
    assert isinstance(manifest["args"]["seed"], int)  # resolved, not null
    first = out.read_bytes()
    out2 = tmp_path / "g2.json"
    rc = main(["rerun", "--manifest", str(out) + ".manifest.json",
               "--out", str(out2)])
    assert rc == 0
    assert out2.read_bytes() == first


def test_generate_usage_error_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--kind", "ER", "--n", "8",
              "--out", str(tmp_path / "g.json")])  # no edge budget
    assert exc.value.code == 2


def test_generate_infeasible_exits_4(tmp_path, capsys):
    rc = main(["generate", "--kind", "ER", "--n", "4", "--edges", "10",
               "--seed", "0", "--out", str(tmp_path / "g.json")])
    assert rc == EXIT_COMPUTE
    assert "error:" in capsys.readouterr().err


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


# ---------------------------------------------------------------------------
# exact


def test_exact_reports_horizon_qsd_and_mean_time(tmp_path, graph_file, capsys):
    out = tmp_path / "horizon.csv"
    qsd_out = tmp_path / "qsd.csv"
    rc = main(["exact", "--graph", str(graph_file), "--e", "0.3", "--c", "0.3",
               "--gens", "25", "--out", str(out), "--qsd", str(qsd_out),
               "--mean-time"])
    assert rc == 0
    printed = dict(
        line.split(" = ") for line in capsys.readouterr().out.splitlines())
    p_ext = float(printed["p_extinct[25]"])
    p_per = float(printed["p_persist[25]"])
    assert p_ext + p_per == pytest.approx(1.0, abs=1e-12)
    assert 0.0 < float(printed["lambda1"]) < 1.0
    assert float(printed["mean_extinction_time"]) > 0.0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 26
    assert float(rows[-1]["p_extinct"]) == pytest.approx(p_ext)
    assert qsd_out.exists()
    manifest = read_manifest(out)
    assert manifest["command"] == "exact"
    assert manifest["args"]["mean_extinction_time"] == pytest.approx(
        float(printed["mean_extinction_time"]))


def test_exact_missing_graph_exits_3(tmp_path, capsys):
    rc = main(["exact", "--graph", str(tmp_path / "nope.json"),
               "--e", "0.3", "--c", "0.3", "--gens", "5",
               "--out", str(tmp_path / "h.csv")])
    assert rc == EXIT_INPUT
    assert "not found" in capsys.readouterr().err


def test_exact_over_cap_exits_4(tmp_path, capsys):
    big = netgen.gen_erdos_renyi(16, 30, np.random.default_rng(0))
    gpath = tmp_path / "big.json"
    netgen.write_graph_json(big, gpath)
    rc = main(["exact", "--graph", str(gpath), "--e", "0.3", "--c", "0.3",
               "--gens", "5", "--out", str(tmp_path / "h.csv")])
    assert rc == EXIT_COMPUTE
    assert "cap" in capsys.readouterr().err


def test_bad_initial_state_exits_3(tmp_path, graph_file, capsys):
    rc = main(["exact", "--graph", str(graph_file), "--e", "0.3", "--c", "0.3",
               "--gens", "5", "--z0", "zz", "--out", str(tmp_path / "h.csv")])
    assert rc == EXIT_INPUT
    rc = main(["exact", "--graph", str(graph_file), "--e", "0.3", "--c", "0.3",
               "--gens", "5", "--z0", "fff", "--out", str(tmp_path / "h.csv")])
    assert rc == EXIT_INPUT
    assert "out of range" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_report_and_trajectory(tmp_path, graph_file, capsys):
    out = tmp_path / "report.csv"
    traj = tmp_path / "traj.csv"
    rc = main(["simulate", "--graph", str(graph_file), "--e", "0.2",
               "--c", "0.4", "--gens", "15", "--reps", "300", "--seed", "7",
               "--out", str(out), "--sample-trajectory", str(traj)])
    assert rc == 0
    assert "survived)" in capsys.readouterr().out
    assert traj.read_text().splitlines()[0] == "generation,occupied_count,state_hex"
    first = out.read_bytes()
    rc = main(["simulate", "--graph", str(graph_file), "--e", "0.2",
               "--c", "0.4", "--gens", "15", "--reps", "300", "--seed", "7",
               "--out", str(out)])
    assert rc == 0
    assert out.read_bytes() == first  # same seed, byte-identical output


# ---------------------------------------------------------------------------
# rare


def test_rare_ips_writes_json_and_diagnostics(tmp_path, graph_file):
    out = tmp_path / "ips.json"
    diag = tmp_path / "ips.csv"
    rc = main(["rare", "--graph", str(graph_file), "--e", "0.6", "--c", "0.1",
               "--gens", "20", "--method", "ips", "--particles", "200",
               "--seed", "3", "--out", str(out), "--diagnostics", str(diag)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["method"] == "ips"
    assert 0.0 <= payload["value"] <= 1.0
    lines = diag.read_text().splitlines()
    assert lines[0] == "t,mean_death_fraction"
    assert len(lines) == 21


def test_rare_is_writes_weight_histogram(tmp_path, graph_file):
    out = tmp_path / "is.json"
    diag = tmp_path / "is.csv"
    rc = main(["rare", "--graph", str(graph_file), "--e", "0.1", "--c", "0.45",
               "--gens", "15", "--method", "is", "--sims", "400",
               "--seed", "3", "--out", str(out), "--diagnostics", str(diag)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["method"] == "is"
    assert payload["value"] > 0.0
    assert diag.read_text().splitlines()[0] == \
        "weight_log10_lo,weight_log10_hi,count"


def test_rare_split_with_explicit_thresholds(tmp_path, graph_file):
    out = tmp_path / "split.json"
    diag = tmp_path / "split.csv"
    rc = main(["rare", "--graph", str(graph_file), "--e", "0.15", "--c", "0.4",
               "--gens", "15", "--method", "split", "--thresholds", "4,2,1",
               "--success", "30", "--replications", "5", "--seed", "3",
               "--out", str(out), "--diagnostics", str(diag)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["method"] == "splitting"
    assert payload["diagnostics"]["thresholds"] == [4, 2, 1, 0]
    lines = diag.read_text().splitlines()
    assert lines[0] == "threshold,mean_attempts,first_run_estimate"


# ---------------------------------------------------------------------------
# meanfield and heatmap


def test_meanfield_prints_report_and_writes_trajectory(tmp_path, graph_file, capsys):
    out = tmp_path / "mf.csv"
    rc = main(["meanfield", "--graph", str(graph_file), "--e", "0.6",
               "--c", "0.05", "--gens", "60", "--out", str(out)])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "regime = subcritical" in printed
    header = out.read_text().splitlines()[0]
    assert header == "t," + ",".join(f"p{i}" for i in range(6))
    manifest = read_manifest(out)
    assert manifest["args"]["report"]["regime"] == "subcritical"


def test_heatmap_writes_grid_and_contour(tmp_path, graph_file, capsys):
    out = tmp_path / "heat.csv"
    contour = tmp_path / "contour.csv"
    rc = main(["heatmap", "--graph", str(graph_file),
               "--e-min", "0.1", "--e-max", "0.5", "--e-steps", "3",
               "--c-min", "0.1", "--c-max", "0.5", "--c-steps", "3",
               "--gens", "15", "--out", str(out), "--contour", str(contour)])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "cells = 9" in printed
    assert "method = exact" in printed
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 9
    assert contour.exists()


# ---------------------------------------------------------------------------
# experiment and rerun


def small_design_dict():
    d = Design(
        name="cli-small", n=6,
        topologies=(TopologyFactor("ER", "ER"), TopologyFactor("LAT", "LAT")),
        n_gen=5, e_values=(0.2, 0.4), c_values=(0.3,), n_edges_values=(8,),
        n_network_replicates=2, n_sim_reps=100, estimator="exact",
        master_seed=99,
    )
    return d.to_dict()


def test_experiment_runs_design_file(tmp_path, capsys):
    design_path = tmp_path / "design.json"
    design_path.write_text(json.dumps(small_design_dict()))
    out = tmp_path / "rows.csv"
    anova = tmp_path / "anova.csv"
    rc = main(["experiment", "--design", str(design_path), "--out", str(out),
               "--anova", str(anova), "--response", "persistence"])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "rows = 8" in printed
    assert "failed = 0" in printed
    assert "share[e] = " in printed
    rows = read_results_csv(out)
    assert len(rows) == 8
    assert anova.read_text().startswith("term,sum_sq,share")
    manifest = read_manifest(out)
    assert manifest["command"] == "experiment"
    assert manifest["args"]["design_inline"]["name"] == "cli-small"


def test_experiment_rerun_is_byte_identical_across_workers(tmp_path):
    design_path = tmp_path / "design.json"
    design_path.write_text(json.dumps(small_design_dict()))
    out = tmp_path / "rows.csv"
    assert main(["experiment", "--design", str(design_path),
                 "--out", str(out)]) == 0
    first = out.read_bytes()
    out2 = tmp_path / "rows2.csv"
    rc = main(["rerun", "--manifest", str(out) + ".manifest.json",
               "--out", str(out2), "--workers", "2"])
    assert rc == 0
    assert out2.read_bytes() == first


def test_experiment_bad_preset_exits_3(tmp_path, capsys):
    rc = main(["experiment", "--preset", "grid-n12",
               "--out", str(tmp_path / "r.csv")])
    assert rc == EXIT_INPUT
    assert "unknown preset" in capsys.readouterr().err


def test_experiment_with_failures_exits_4(tmp_path, capsys):
    d = small_design_dict()
    d.update(n=16, n_edges_values=[30], e_values=[0.2], c_values=[0.3],
             n_network_replicates=1,
             topologies=[{"label": "ER", "kind": "ER"}])
    design_path = tmp_path / "design.json"
    design_path.write_text(json.dumps(d))
    out = tmp_path / "rows.csv"
    rc = main(["experiment", "--design", str(design_path), "--out", str(out)])
    assert rc == EXIT_COMPUTE
    assert "failed = 1" in capsys.readouterr().out
    assert out.exists()  # failed rows are still recorded


def test_experiment_workers_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("SECNET_WORKERS", "2")
    design_path = tmp_path / "design.json"
    design_path.write_text(json.dumps(small_design_dict()))
    out = tmp_path / "rows.csv"
    assert main(["experiment", "--design", str(design_path),
                 "--out", str(out)]) == 0
    assert read_manifest(out)["args"]["workers"] == 2


def test_rerun_rejects_bad_manifests(tmp_path, capsys):
    rc = main(["rerun", "--manifest", str(tmp_path / "missing.json")])
    assert rc == EXIT_INPUT
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"command": "frobnicate", "args": {}}))
    rc = main(["rerun", "--manifest", str(bad)])
    assert rc == EXIT_INPUT
    assert "unknown command" in capsys.readouterr().err


def test_rerun_replays_simulate_manifest(tmp_path, graph_file):
    out = tmp_path / "report.csv"
    assert main(["simulate", "--graph", str(graph_file), "--e", "0.2",
                 "--c", "0.4", "--gens", "10", "--reps", "200",
                 "--out", str(out)]) == 0  # seed drawn from entropy
    first = out.read_bytes()
    out2 = tmp_path / "report2.csv"
    rc = main(["rerun", "--manifest", str(out) + ".manifest.json",
               "--out", str(out2)])
    assert rc == 0
    assert out2.read_bytes() == first
