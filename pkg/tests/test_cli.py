"""Tests for the command-line front end and its exit-code contract."""

import json
from pathlib import Path

import numpy as np
import pytest

import onesided.cli as cli_mod
from onesided.cli import main
from onesided.core import NumericError
from onesided.data import ingest_csv
from onesided.net import deserialize, forward_batch
from onesided.pipeline import config_to_dict
from onesided.select import SelectionCriterion


def run(*argv):
    return main(list(argv))


def synth_csv(path, n=240, seed=1, kind="blobs", sep="4.0"):
    args = ["synth", "--kind", kind, "--n", str(n), "--seed", str(seed), "--out", str(path)]
    if kind == "blobs":
        args += ["--classes", "3", "--separation", sep]
    assert run(*args) == 0
    return path


def train_model(data, out, mu="1.0", log=None):
    args = [
        "train",
        "--data", str(data),
        "--mu", mu,
        "--epochs", "6",
        "--batch-size", "64",
        "--lr-min", "0.02",
        "--lr-max", "0.05",
        "--interval", "3",
        "--warm-epochs", "10",
        "--widths", "2,8,6",
        "--out", str(out),
    ]
    if log is not None:
        args += ["--log", str(log)]
    assert run(*args) == 0
    return out


def test_synth_writes_ingestible_csv(tmp_path, capsys):
    out = synth_csv(tmp_path / "d.csv")
    data = ingest_csv(out)
    assert data.n == 240 and data.num_classes == 3
    assert "240 points" in capsys.readouterr().out
    again = tmp_path / "d2.csv"
    synth_csv(again)
    assert out.read_bytes() == again.read_bytes()


def test_synth_analytic(tmp_path):
    out = tmp_path / "an.csv"
    assert run("synth", "--kind", "analytic", "--n", "50", "--seed", "0", "--out", str(out)) == 0
    data = ingest_csv(out)
    assert data.dim == 1 and data.num_classes == 2


def test_synth_mixture_needs_spec_file(tmp_path, capsys):
    assert run("synth", "--kind", "mixture", "--out", str(tmp_path / "m.csv")) == 1
    assert "spec-file" in capsys.readouterr().err
    spec = {
        "kind": "mixture",
        "n": 60,
        "seed": 0,
        "mixture": {
            "means": [[-1.0, 0.0], [1.0, 0.0]],
            "covariances": [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]],
            "priors": [0.5, 0.5],
        },
    }
    spec_file = tmp_path / "spec.json"
    spec_file.write_text(json.dumps(spec))
    out = tmp_path / "m.csv"
    assert run("synth", "--spec-file", str(spec_file), "--out", str(out)) == 0
    assert ingest_csv(out).num_classes == 2


def test_synth_without_kind_or_spec(tmp_path):
    assert run("synth", "--out", str(tmp_path / "x.csv")) == 1


def test_train_writes_model_and_log(tmp_path, capsys):
    data = synth_csv(tmp_path / "d.csv")
    model_path = train_model(data, tmp_path / "m.npz", log=tmp_path / "log.json")
    model = deserialize(model_path.read_bytes())
    X = np.zeros((4, 2))
    assert np.allclose(forward_batch(model, X).sum(axis=1), 1.0)
    log = json.loads((tmp_path / "log.json").read_text())
    assert log["mu"] == 1.0
    assert len(log["records"]) == 6
    out = capsys.readouterr().out
    assert "fit_sum=" in out


def test_train_is_deterministic(tmp_path):
    data = synth_csv(tmp_path / "d.csv")
    a = train_model(data, tmp_path / "a.npz")
    b = train_model(data, tmp_path / "b.npz")
    assert a.read_bytes() == b.read_bytes()


def test_train_rejects_width_mismatch(tmp_path, capsys):
    data = synth_csv(tmp_path / "d.csv")
    code = run(
        "train", "--data", str(data), "--mu", "1.0", "--widths", "3,8",
        "--out", str(tmp_path / "m.npz"),
    )
    assert code == 1
    assert "must equal the data dim" in capsys.readouterr().err


def test_select_feasible_and_grid_out(tmp_path, capsys):
    data = synth_csv(tmp_path / "d.csv")
    val = synth_csv(tmp_path / "v.csv", n=120, seed=2)
    m1 = train_model(data, tmp_path / "m1.npz", mu="1.0")
    m2 = train_model(data, tmp_path / "m2.npz", mu="4.0")
    grid_out = tmp_path / "grid.csv"
    code = run(
        "select", "--val", str(val),
        "--model", str(m1), "--mu", "1.0",
        "--model", str(m2), "--mu", "4.0",
        "--mode", "error", "--target", "0.05", "--t-size", "20",
        "--grid-out", str(grid_out),
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "mu_star=" in out and "feasible=true" in out
    lines = grid_out.read_text().strip().splitlines()
    assert lines[0] == "mu,t,coverage,error"
    assert len(lines) == 1 + 2 * 20


def test_select_infeasible_exit_code(tmp_path, capsys):
    data = synth_csv(tmp_path / "d.csv", sep="0.5", seed=5)
    m1 = train_model(data, tmp_path / "m1.npz")
    code = run(
        "select", "--val", str(data),
        "--model", str(m1), "--mu", "1.0",
        "--target", "0.0", "--t-values", "0.0",
    )
    assert code == 3
    assert "feasible=false" in capsys.readouterr().out


def test_select_model_mu_mismatch(tmp_path):
    data = synth_csv(tmp_path / "d.csv")
    m1 = train_model(data, tmp_path / "m1.npz")
    assert run("select", "--val", str(data), "--model", str(m1), "--target", "0.1") == 1
    assert run("select", "--val", str(data), "--target", "0.1") == 1


def test_eval_prints_metrics(tmp_path, capsys):
    data = synth_csv(tmp_path / "d.csv")
    m1 = train_model(data, tmp_path / "m1.npz")
    assert run("eval", "--data", str(data), "--model", str(m1), "--t", "0.5") == 0
    out = capsys.readouterr().out
    for field in ("coverage=", "error=", "per_class_error=", "overlap="):
        assert field in out


def test_curve_writes_points(tmp_path):
    data = synth_csv(tmp_path / "d.csv")
    val = synth_csv(tmp_path / "v.csv", n=120, seed=2)
    m1 = train_model(data, tmp_path / "m1.npz")
    out = tmp_path / "curve.csv"
    code = run(
        "curve", "--val", str(val), "--test", str(val),
        "--model", str(m1), "--mu", "1.0",
        "--targets", "0.01,0.05,0.2", "--t-size", "20",
        "--out", str(out),
    )
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "target,achieved_error,achieved_coverage,feasible,method"
    assert len(lines) == 4


def test_curve_infeasible_exit_code(tmp_path, capsys):
    data = synth_csv(tmp_path / "d.csv", sep="0.5", seed=5)
    m1 = train_model(data, tmp_path / "m1.npz")
    out = tmp_path / "curve.csv"
    code = run(
        "curve", "--val", str(data), "--test", str(data),
        "--model", str(m1), "--mu", "1.0",
        "--targets", "0.0", "--t-values", "0.0",
        "--out", str(out),
    )
    assert code == 3
    assert out.is_file()
    assert "infeasible" in capsys.readouterr().err


def test_oracle_analytic_closed_form(capsys):
    assert run("oracle", "--analytic-eps", "0.04") == 0
    out = capsys.readouterr().out
    assert "coverage=0.4" in out
    assert "upper_cut=0.8" in out
    assert "lower_cut=0.2" in out


def test_oracle_exact_solves(tmp_path, capsys):
    an = tmp_path / "an.csv"
    assert run("synth", "--kind", "analytic", "--n", "200", "--seed", "3", "--out", str(an)) == 0
    assert run("oracle", "--data", str(an), "--eps", "0.04", "--mode", "sc") == 0
    sc_out = capsys.readouterr().out
    assert "value=" in sc_out and "feasible=true" in sc_out
    assert run(
        "oracle", "--data", str(an), "--eps", "0.04", "--mode", "osp", "--budget-grid"
    ) == 0
    assert "value=" in capsys.readouterr().out


def test_oracle_rejects_wide_data(tmp_path, capsys):
    wide = synth_csv(tmp_path / "w.csv")
    assert run("oracle", "--data", str(wide), "--eps", "0.1") == 1
    assert "1-D" in capsys.readouterr().err
    assert run("oracle") == 1


def pipeline_config(tmp_path, **over):
    from onesided.data import BlobsParams, SyntheticSpec
    from onesided.net import BackboneSpec
    from onesided.pipeline import RunConfig
    from onesided.train import TrainConfig

    base = dict(
        seed=0,
        out_dir=str(tmp_path / "run"),
        synthetic=SyntheticSpec(
            "blobs", 240, seed=2, blobs=BlobsParams(num_classes=3, separation=4.0)
        ),
        backbone=BackboneSpec((2, 8, 6)),
        train=TrainConfig(
            mu=1.0,
            epochs=6,
            batch_size=64,
            lr_min=0.02,
            lr_max=0.05,
            lr_decay=(0.1, 1000),
            backbone_update_interval=3,
            warm_start_epochs=10,
        ),
        criterion=SelectionCriterion("error", 0.05),
        mu_grid=(0.5, 2.0),
        t_grid=(0.0, 0.3, 0.6, 0.9),
    )
    base.update(over)
    cfg = RunConfig(**base)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config_to_dict(cfg), indent=2))
    return path


def test_pipeline_subcommand_with_overrides(tmp_path, capsys):
    cfg_path = pipeline_config(tmp_path)
    out_dir = tmp_path / "other"
    code = run(
        "pipeline", "--config", str(cfg_path),
        "--seed", "7", "--out-dir", str(out_dir),
    )
    assert code == 0
    assert "flags=ok" in capsys.readouterr().out
    row = (out_dir / "metrics.csv").read_text().strip().splitlines()[1]
    assert row.endswith(",7")


def test_pipeline_subcommand_infeasible(tmp_path, capsys):
    # Overlapping blobs and a reject-nothing threshold grid make a
    # zero-error target unreachable.
    from onesided.data import BlobsParams, SyntheticSpec

    cfg_path = pipeline_config(
        tmp_path,
        synthetic=SyntheticSpec(
            "blobs", 240, seed=5, blobs=BlobsParams(num_classes=3, separation=0.5)
        ),
        criterion=SelectionCriterion("error", 0.0),
        t_grid=(0.0,),
    )
    code = run("pipeline", "--config", str(cfg_path))
    assert code == 3
    assert "flags=infeasible" in capsys.readouterr().out


def test_pipeline_missing_config(tmp_path, capsys):
    assert run("pipeline", "--config", str(tmp_path / "nope.json")) == 1
    assert "error:" in capsys.readouterr().err


def test_numeric_error_maps_to_exit_2(tmp_path, monkeypatch, capsys):
    data = synth_csv(tmp_path / "d.csv")

    def boom(*args, **kwargs):
        raise NumericError("loss diverged")

    monkeypatch.setattr(cli_mod, "sgda_train", boom)
    code = run(
        "train", "--data", str(data), "--mu", "1.0",
        "--widths", "2,8", "--out", str(tmp_path / "m.npz"),
    )
    assert code == 2
    assert "numeric error" in capsys.readouterr().err


def test_unknown_subcommand_and_flags(capsys):
    assert run("bogus") == 1
    assert run("train", "--nope") == 1
    capsys.readouterr()
