"""End-to-end exercises of the command-line interface.

Everything goes through ``cli.main`` with an explicit argv list, so
exit codes and console output behave exactly as the installed entry
point.  The pipeline test chains simulate -> preanalyze -> fit ->
partition -> summarize inside a tmp directory on a deliberately tiny
problem.
"""

import csv

import numpy as np
import pandas as pd
import pytest

from mrdmix import io
from mrdmix.cli import main
from tests.conftest import make_record


def _write_dataset(path, records):
    io.write_dataset(records, str(path))
    return str(path)


# ---------------------------------------------------------------------------
# exit codes


def test_unknown_subcommand_exits_1(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert "error:" in capsys.readouterr().err


def test_unknown_flag_exits_1(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path / "o"), "--bogus"]) == 1
    assert "error:" in capsys.readouterr().err


def test_missing_data_file_exits_1(tmp_path, capsys):
    rc = main(["fit", "--data", str(tmp_path / "absent.csv"),
               "--out", str(tmp_path / "run")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_invalid_dataset_exits_1(tmp_path, capsys):
    # day-15 censored but day-42 detected: a hard validation error
    path = tmp_path / "bad.csv"
    recs = [make_record(i) for i in range(3)]
    _write_dataset(path, recs)
    rows = list(csv.reader(open(path)))
    rows[1][rows[0].index("mrd15")] = "0"
    rows[1][rows[0].index("mrd42")] = "0.4"
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    rc = main(["fit", "--data", str(path), "--out", str(tmp_path / "run")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_bad_config_file_exits_1(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("iterations = soon\n")
    rc = main(["simulate", "--out", str(tmp_path / "o"),
               "--config", str(cfg)])
    assert rc == 1
    err = capsys.readouterr().err
    assert "iterations" in err and "soon" in err


def test_runtime_failure_exits_2(tmp_path, capsys):
    path = _write_dataset(tmp_path / "d.csv",
                          [make_record(i) for i in range(6)])
    rc = main(["fit", "--data", path, "--out", str(tmp_path / "run"),
               "--iterations", "10", "--burn-in", "20"])
    assert rc == 2
    assert "failure:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_dataset_and_allocations(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out), "--n", "30",
                 "--seed", "4", "--strict-monotone"]) == 0
    records, _ = io.parse_dataset(str(out / "dataset.csv"))
    assert len(records) == 30
    alloc = np.loadtxt(out / "allocations.csv", skiprows=1, dtype=int)
    assert alloc.shape == (30,)
    assert set(alloc) <= {1, 2, 3}
    assert (out / "manifest.txt").exists()
    assert "wrote 30 records" in capsys.readouterr().out


def test_simulate_same_seed_is_byte_identical(tmp_path):
    a, b, c = (tmp_path / name for name in ("a", "b", "c"))
    for out, seed in ((a, "9"), (b, "9"), (c, "10")):
        assert main(["simulate", "--out", str(out), "--n", "25",
                     "--seed", seed]) == 0
    same = (a / "dataset.csv").read_bytes()
    assert same == (b / "dataset.csv").read_bytes()
    assert same != (c / "dataset.csv").read_bytes()


# ---------------------------------------------------------------------------
# the full pipeline on a tiny problem


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> panel -> preanalyze -> fit -> partition -> summarize."""
    root = tmp_path_factory.mktemp("pipeline")
    sim_dir, pre_dir = root / "sim", root / "pre"
    run_dir, part_dir, sum_dir = root / "run", root / "part", root / "summ"

    assert main(["simulate", "--out", str(sim_dir), "--n", "40",
                 "--seed", "11", "--strict-monotone"]) == 0
    data = str(sim_dir / "dataset.csv")

    # build a two-dataset imputed panel around the simulated LC50 values
    records, _ = io.parse_dataset(data)
    base = np.array([r.lc50 for r in records])
    rng = np.random.default_rng(0)
    panel = io.ImputedPanel(
        matrices=np.stack([base, base + 0.05 * rng.standard_normal(base.shape)]),
        tags=["m0", "m1"])
    io.write_panel(panel, str(root / "panel"), [r.id for r in records])
    panel_glob = str(root / "panel" / "imputed_*.csv")

    assert main(["preanalyze", "--panel", panel_glob, "--out", str(pre_dir),
                 "--k-min", "1", "--k-max", "4", "--restarts", "4",
                 "--seed", "2"]) == 0
    assert main(["fit", "--data", data, "--panel", panel_glob,
                 "--out", str(run_dir), "--iterations", "160",
                 "--burn-in", "60", "--thin", "2", "--chains", "2",
                 "--seed", "3"]) == 0
    assert main(["partition", "--run", str(run_dir), "--data", data,
                 "--panel", panel_glob, "--out", str(part_dir),
                 "--binder-orders", "8", "--seed", "3"]) == 0
    assert main(["summarize", "--run", str(run_dir),
                 "--out", str(sum_dir)]) == 0
    return {"root": root, "data": data, "n": len(records),
            "sim": sim_dir, "pre": pre_dir, "run": run_dir,
            "part": part_dir, "summ": sum_dir}


def test_preanalyze_outputs(pipeline):
    profile = pd.read_csv(pipeline["pre"] / "wss_profile.csv", index_col=0)
    assert list(profile.columns[-4:]) == ["1", "2", "3", "4"]
    assert "average" in profile.index
    sel = (pipeline["pre"] / "selected_dataset.txt").read_text()
    assert sel.startswith("index=") and "k=3" in sel


def test_fit_outputs(pipeline):
    run = pipeline["run"]
    store = io.read_draws(str(run / "draws.jsonl"))
    assert store.n_chains == 2 and store.n_retained == 50
    frame = pd.read_csv(run / "draws.csv")
    assert len(frame) == 100 and {"chain", "iteration"} <= set(frame.columns)
    meta = dict(line.split("=", 1) for line in
                (run / "metadata.txt").read_text().splitlines() if "=" in line)
    assert meta["config.iterations"] == "160"
    assert meta["data_sha256"] == io.sha256_file(pipeline["data"])
    manifest = (run / "manifest.txt").read_text()
    assert "command=fit" in manifest and "input.dataset.csv=" in manifest


def test_partition_outputs(pipeline):
    part, n = pipeline["part"], pipeline["n"]
    sim_mat = pd.read_csv(part / "similarity.csv", index_col=0)
    assert sim_mat.shape == (n, n)
    assert np.allclose(np.diag(sim_mat.to_numpy()), 1.0)
    labels = pd.read_csv(part / "partition.csv")
    assert list(labels.columns) == ["id", "cluster"]
    assert len(labels) == n and labels["cluster"].min() == 1
    sizes = pd.read_csv(part / "cluster_sizes.csv", index_col=0)
    assert int(sizes.sum().iloc[0]) == n
    for name in ("cluster_means.csv", "cluster_composition.csv",
                 "lc50_quartiles.csv", "pearson_by_subtype.csv"):
        assert (part / name).exists()


def test_partition_rejects_mismatched_dataset(pipeline, tmp_path, capsys):
    other = _write_dataset(tmp_path / "other.csv",
                           [make_record(i) for i in range(pipeline["n"])])
    rc = main(["partition", "--run", str(pipeline["run"]), "--data", other,
               "--out", str(tmp_path / "part")])
    assert rc == 1
    assert "do not match" in capsys.readouterr().err


def test_summarize_outputs(pipeline):
    frame = pd.read_csv(pipeline["summ"] / "summary.csv", index_col=0)
    for col in ("mean", "sd", "median", "q2_5", "q97_5", "ess", "rhat"):
        assert col in frame.columns
    assert "rho" in frame.index and "w[1]" in frame.index
    assert not any(ix.startswith(("c[", "z1[", "z2[")) for ix in frame.index)


def test_config_file_with_flag_override(pipeline, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("iterations = 120\nburn_in = 40\nthin = 2\n"
                   "chains = 1\nseed = 5\n")
    run = tmp_path / "run"
    assert main(["fit", "--data", pipeline["data"], "--panel",
                 str(pipeline["root"] / "panel" / "imputed_*.csv"),
                 "--config", str(cfg), "--out", str(run),
                 "--iterations", "140"]) == 0
    meta = dict(line.split("=", 1) for line in
                (run / "metadata.txt").read_text().splitlines() if "=" in line)
    assert meta["config.iterations"] == "140"  # flag beats file
    assert meta["config.seed"] == "5"


# ---------------------------------------------------------------------------
# sbc (tiny smoke run; the statistical test lives in test_simulate.py)


def test_sbc_smoke(tmp_path, capsys):
    out = tmp_path / "sbc"
    assert main(["sbc", "--out", str(out), "--replicates", "2",
                 "--n", "24", "--iterations", "120", "--burn-in", "40",
                 "--thin", "4", "--seed", "8"]) == 0
    ranks = pd.read_csv(out / "sbc_ranks.csv")
    assert len(ranks) == 2
    assert (ranks >= 0).all().all() and (ranks <= 20).all().all()
    report = pd.read_csv(out / "sbc_report.csv", index_col=0)
    assert "rho" in report.index
    assert "failures: 0/2" in capsys.readouterr().out
