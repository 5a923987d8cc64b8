"""Run configuration and end-to-end orchestration with on-disk bundles.

A run loads or synthesizes a dataset, splits it, warm starts one
backbone, trains one constrained model per mu-grid value from that
shared warm start, selects a (mu, t) cell on the validation split, and
reports test metrics.  Every artifact lands in the run directory and is
stamped with the config hash and seed; a stage failure still persists
the completed stages plus an error manifest.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InputError, LabeledDataset, Metrics, evaluate
from .data import (
    BlobsParams,
    MixtureParams,
    SyntheticSpec,
    ingest_csv,
    split_dataset,
    synthesize,
)
from .evaluation import CurvePoint, coverage_error_curve, osp_overlap
from .net import BackboneSpec, deserialize, serialize, warm_start
from .select import (
    SelectionCriterion,
    SelectionResult,
    evaluate_grid,
    harden,
    quick_mu_grid,
)
from .train import TrainConfig, TrainingLog, sgda_train

__all__ = [
    "RunConfig",
    "PipelineResult",
    "run_pipeline",
    "config_to_dict",
    "config_from_dict",
    "synthetic_from_dict",
    "save_config",
    "load_config",
    "config_hash",
    "METRICS_COLUMNS",
]

METRICS_COLUMNS = (
    "target",
    "coverage",
    "error",
    "mu_star",
    "t_star",
    "overlap",
    "flags",
    "config_hash",
    "seed",
)

GRID_COLUMNS = ("mu", "t", "coverage", "error")

CURVE_COLUMNS = ("target", "achieved_error", "achieved_coverage", "feasible", "method")


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run depends on.

    Exactly one of ``source_path`` and ``synthetic`` names the dataset.
    ``train`` is a template whose ``mu`` and ``seed`` fields are replaced
    per grid value and by the run seed.  ``split_seed`` is deliberately
    separate from ``seed`` so seed sweeps can vary optimization while
    keeping the data split fixed.
    """

    seed: int
    out_dir: str
    source_path: str | None = None
    synthetic: SyntheticSpec | None = None
    split_fractions: tuple = (0.6, 0.2, 0.2)
    split_seed: int = 0
    backbone: BackboneSpec = BackboneSpec((2, 16, 8))
    train: TrainConfig = TrainConfig(mu=1.0)
    criterion: SelectionCriterion = SelectionCriterion("error", 0.05)
    mu_grid: tuple = quick_mu_grid()
    t_grid: tuple = tuple(np.linspace(0.0, 1.0, 100))
    curve_targets: tuple | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if (self.source_path is None) == (self.synthetic is None):
            raise InputError(
                "exactly one of source_path and synthetic must be given"
            )
        if self.source_path is not None and not Path(self.source_path).exists():
            raise InputError(f"dataset path {self.source_path} does not exist")
        fr = tuple(float(f) for f in self.split_fractions)
        if len(fr) != 3 or any(f <= 0.0 for f in fr):
            raise InputError(f"need three positive split fractions, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise InputError(f"split fractions must sum to 1, got {sum(fr)}")
        mus = tuple(float(m) for m in self.mu_grid)
        if not mus:
            raise InputError("mu grid must not be empty")
        if any(m < 0.0 for m in mus):
            raise InputError("mu grid values must be nonnegative")
        ts = tuple(float(t) for t in self.t_grid)
        if not ts:
            raise InputError("threshold grid must not be empty")
        if any(not 0.0 <= t <= 1.0 for t in ts):
            raise InputError("threshold grid values must lie in [0, 1]")
        targets = self.curve_targets
        if targets is not None:
            targets = tuple(float(e) for e in targets)
            if not targets:
                raise InputError("curve target list must not be empty when given")
            if any(not 0.0 <= e <= 1.0 for e in targets):
                raise InputError("curve targets must lie in [0, 1]")
            if any(b < a for a, b in zip(targets, targets[1:])):
                raise InputError("curve targets must be sorted ascending")
        if self.workers < 1:
            raise InputError(f"workers must be at least 1, got {self.workers}")
        object.__setattr__(self, "split_fractions", fr)
        object.__setattr__(self, "mu_grid", mus)
        object.__setattr__(self, "t_grid", ts)
        object.__setattr__(self, "curve_targets", targets)


def config_to_dict(config: RunConfig) -> dict:
    """Plain nested dict mirroring the config field names, JSON-ready."""
    synth = None
    if config.synthetic is not None:
        s = config.synthetic
        synth = {
            "kind": s.kind,
            "n": s.n,
            "seed": s.seed,
            "mixture": None
            if s.mixture is None
            else {
                "means": [list(m) for m in s.mixture.means],
                "covariances": [[list(r) for r in c] for c in s.mixture.covariances],
                "priors": list(s.mixture.priors),
            },
            "blobs": None
            if s.blobs is None
            else {
                "num_classes": s.blobs.num_classes,
                "dim": s.blobs.dim,
                "separation": s.blobs.separation,
                "spread": s.blobs.spread,
            },
        }
    t = config.train
    return {
        "seed": config.seed,
        "out_dir": config.out_dir,
        "source_path": config.source_path,
        "synthetic": synth,
        "split_fractions": list(config.split_fractions),
        "split_seed": config.split_seed,
        "backbone": {
            "layer_widths": list(config.backbone.layer_widths),
            "activation": config.backbone.activation,
        },
        "train": {
            "mu": t.mu,
            "epochs": t.epochs,
            "batch_size": t.batch_size,
            "lr_min": t.lr_min,
            "lr_max": t.lr_max,
            "lr_decay": list(t.lr_decay),
            "backbone_update_interval": t.backbone_update_interval,
            "seed": t.seed,
            "warm_start_epochs": t.warm_start_epochs,
            "lambda_max": t.lambda_max,
            "adaptive": t.adaptive,
            "restricted": t.restricted,
        },
        "criterion": {"mode": config.criterion.mode, "target": config.criterion.target},
        "mu_grid": list(config.mu_grid),
        "t_grid": list(config.t_grid),
        "curve_targets": None
        if config.curve_targets is None
        else list(config.curve_targets),
        "workers": config.workers,
    }


def _take(d: dict, allowed: tuple, where: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise InputError(f"unknown {where} keys: {sorted(unknown)}")


def synthetic_from_dict(synth: dict) -> SyntheticSpec:
    """Build a synthetic-source spec from its nested dict form."""
    if not isinstance(synth, dict):
        raise InputError("synthetic section must be a mapping")
    _take(synth, ("kind", "n", "seed", "mixture", "blobs"), "synthetic")
    for key in ("kind", "n", "seed"):
        if key not in synth:
            raise InputError(f"synthetic section is missing required key {key!r}")
    mixture = synth.get("mixture")
    if mixture is not None:
        _take(mixture, ("means", "covariances", "priors"), "mixture")
        mixture = MixtureParams(
            means=mixture["means"],
            covariances=mixture["covariances"],
            priors=mixture["priors"],
        )
    blobs = synth.get("blobs")
    if blobs is not None:
        _take(blobs, ("num_classes", "dim", "separation", "spread"), "blobs")
        blobs = BlobsParams(**blobs)
    return SyntheticSpec(
        kind=synth["kind"],
        n=int(synth["n"]),
        seed=int(synth["seed"]),
        mixture=mixture,
        blobs=blobs,
    )


def config_from_dict(d: dict) -> RunConfig:
    """Build and validate a config from the nested dict form."""
    if not isinstance(d, dict):
        raise InputError("config document must be a mapping")
    allowed = (
        "seed",
        "out_dir",
        "source_path",
        "synthetic",
        "split_fractions",
        "split_seed",
        "backbone",
        "train",
        "criterion",
        "mu_grid",
        "t_grid",
        "curve_targets",
        "workers",
    )
    _take(d, allowed, "config")
    for key in ("seed", "out_dir"):
        if key not in d:
            raise InputError(f"config is missing required key {key!r}")
    kwargs: dict = {"seed": int(d["seed"]), "out_dir": str(d["out_dir"])}
    if d.get("source_path") is not None:
        kwargs["source_path"] = str(d["source_path"])
    synth = d.get("synthetic")
    if synth is not None:
        kwargs["synthetic"] = synthetic_from_dict(synth)
    if "split_fractions" in d:
        kwargs["split_fractions"] = tuple(d["split_fractions"])
    if "split_seed" in d:
        kwargs["split_seed"] = int(d["split_seed"])
    backbone = d.get("backbone")
    if backbone is not None:
        _take(backbone, ("layer_widths", "activation"), "backbone")
        kwargs["backbone"] = BackboneSpec(
            tuple(backbone["layer_widths"]),
            backbone.get("activation", "relu"),
        )
    train = d.get("train")
    if train is not None:
        _take(
            train,
            (
                "mu",
                "epochs",
                "batch_size",
                "lr_min",
                "lr_max",
                "lr_decay",
                "backbone_update_interval",
                "seed",
                "warm_start_epochs",
                "lambda_max",
                "adaptive",
                "restricted",
            ),
            "train",
        )
        train = dict(train)
        if "lr_decay" in train:
            train["lr_decay"] = tuple(train["lr_decay"])
        if "mu" not in train:
            raise InputError("train section is missing required key 'mu'")
        kwargs["train"] = TrainConfig(**train)
    criterion = d.get("criterion")
    if criterion is not None:
        _take(criterion, ("mode", "target"), "criterion")
        kwargs["criterion"] = SelectionCriterion(
            criterion["mode"], criterion["target"]
        )
    for key in ("mu_grid", "t_grid"):
        if d.get(key) is not None:
            kwargs[key] = tuple(d[key])
    if d.get("curve_targets") is not None:
        kwargs["curve_targets"] = tuple(d["curve_targets"])
    if "workers" in d:
        kwargs["workers"] = int(d["workers"])
    return RunConfig(**kwargs)


def save_config(config: RunConfig, path: str | Path) -> None:
    _write_json(Path(path), config_to_dict(config))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}")
    return config_from_dict(doc)


def config_hash(config: RunConfig) -> str:
    """Hash of everything that influences results.

    The output directory and worker count only steer where and how fast
    results land, so they are excluded and a rerun elsewhere hashes the
    same.
    """
    doc = config_to_dict(config)
    del doc["out_dir"]
    del doc["workers"]
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(
        json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_table(path: Path, columns: tuple, rows: list) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _log_to_doc(mu: float, log: TrainingLog) -> dict:
    return {
        "mu": float(mu),
        "records": [
            {
                "epoch": int(r.epoch),
                "fit_sum": float(r.fit_sum),
                "leaks": [float(v) for v in r.leaks],
                "lambdas": [float(v) for v in r.lambdas],
                "phis": [float(v) for v in r.phis],
                "absent_fit": [int(v) for v in r.absent_fit],
                "absent_leak": [int(v) for v in r.absent_leak],
            }
            for r in log.records
        ],
    }


def _train_for_mu(payload) -> tuple[float, bytes, TrainingLog]:
    data, spec, cfg, warm_bytes = payload
    warm = deserialize(warm_bytes)
    model, _, log = sgda_train(data, spec, cfg, initial_model=warm)
    return cfg.mu, serialize(model), log


@dataclass(frozen=True)
class PipelineResult:
    """Outcome of one run: chosen cell, test metrics, artifact paths."""

    out_dir: Path
    config_hash: str
    selection: SelectionResult
    test_metrics: Metrics
    metrics_row: dict
    curve: tuple | None


def run_pipeline(config: RunConfig) -> PipelineResult:
    """Execute load, split, warm start, mu-grid training, selection, eval.

    Artifacts written under ``config.out_dir``: config.json,
    manifest.json, models/, training_log.json, selection_grid.csv,
    metrics.csv, and curve.csv when curve targets are given.  A stage
    exception persists an error manifest naming the stage, then
    propagates.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(config)
    completed: list = []
    files: dict = {"config": "config.json"}
    save_config(config, out / "config.json")

    def manifest(status: str, stage=None, message=None, selection=None) -> None:
        _write_json(
            out / "manifest.json",
            {
                "status": status,
                "stage": stage,
                "message": message,
                "completed": list(completed),
                "config_hash": chash,
                "seed": config.seed,
                "files": dict(files),
                "selection": selection,
            },
        )

    stage = "load_data"
    try:
        if config.source_path is not None:
            data = ingest_csv(config.source_path)
        else:
            data = synthesize(config.synthetic)
        completed.append(stage)

        stage = "split"
        train_d, val_d, test_d = split_dataset(
            data, config.split_fractions, config.split_seed
        )
        completed.append(stage)

        stage = "warm_start"
        warm = warm_start(
            train_d,
            config.backbone,
            data.num_classes,
            config.train.warm_start_epochs,
            config.train.lr_min,
            config.seed,
            config.train.batch_size,
        )
        warm_bytes = serialize(warm)
        completed.append(stage)

        stage = "train"
        payloads = [
            (
                train_d,
                config.backbone,
                dataclasses.replace(config.train, mu=mu, seed=config.seed),
                warm_bytes,
            )
            for mu in config.mu_grid
        ]
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                trained = list(pool.map(_train_for_mu, payloads))
        else:
            trained = [_train_for_mu(p) for p in payloads]
        models = {}
        model_dir = out / "models"
        model_dir.mkdir(exist_ok=True)
        log_docs = []
        model_files = {}
        for i, (mu, model_bytes, log) in enumerate(trained):
            models[mu] = deserialize(model_bytes)
            name = f"models/model_{i:02d}.npz"
            (out / name).write_bytes(model_bytes)
            model_files[repr(float(mu))] = name
            log_docs.append(_log_to_doc(mu, log))
        _write_json(
            out / "training_log.json",
            {"config_hash": chash, "seed": config.seed, "per_mu": log_docs},
        )
        files["models"] = model_files
        files["training_log"] = "training_log.json"
        completed.append(stage)

        stage = "select"
        grid = evaluate_grid(models, config.t_grid, val_d)
        result = config.criterion.pick(grid)
        _write_table(
            out / "selection_grid.csv", GRID_COLUMNS, list(grid.rows())
        )
        files["selection_grid"] = "selection_grid.csv"
        completed.append(stage)

        stage = "evaluate"
        chosen = models[result.mu_star]
        metrics = evaluate(harden(chosen, result.t_star), test_d)
        overlap = osp_overlap(chosen, result.t_star, test_d)
        row = {
            "target": config.criterion.target,
            "coverage": metrics.coverage,
            "error": metrics.raw_error,
            "mu_star": result.mu_star,
            "t_star": result.t_star,
            "overlap": overlap,
            "flags": "ok" if result.feasible else "infeasible",
            "config_hash": chash,
            "seed": config.seed,
        }
        _write_table(
            out / "metrics.csv",
            METRICS_COLUMNS,
            [[row[c] for c in METRICS_COLUMNS]],
        )
        files["metrics"] = "metrics.csv"
        completed.append(stage)

        curve = None
        if config.curve_targets is not None:
            stage = "curve"
            curve = tuple(
                coverage_error_curve(
                    models, config.t_grid, val_d, test_d, config.curve_targets
                )
            )
            _write_table(
                out / "curve.csv",
                CURVE_COLUMNS,
                [
                    [
                        p.target_error,
                        p.achieved_error,
                        p.achieved_coverage,
                        p.feasible,
                        p.method,
                    ]
                    for p in curve
                ],
            )
            files["curve"] = "curve.csv"
            completed.append(stage)
    except Exception as exc:
        manifest("error", stage=stage, message=f"{type(exc).__name__}: {exc}")
        raise

    manifest(
        "ok",
        selection={
            "mu_star": result.mu_star,
            "t_star": result.t_star,
            "feasible": result.feasible,
        },
    )
    return PipelineResult(
        out_dir=out,
        config_hash=chash,
        selection=result,
        test_metrics=metrics,
        metrics_row=row,
        curve=curve,
    )
