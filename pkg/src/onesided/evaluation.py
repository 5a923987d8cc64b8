"""Experiment-level measurements over trained selective classifiers.

Covers the max-score baseline, coverage-versus-error curves across a
sweep of target error levels, the overlap mass of raw per-class score
sets, and nestedness checks between rejection regions of models trained
at different targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import DecisionSetFamily, InputError, LabeledDataset, evaluate
from .net import SelectiveModel, forward_batch
from .select import evaluate_grid, harden, pick_error_constrained

__all__ = [
    "CurvePoint",
    "ConsistencyReport",
    "sr_baseline",
    "coverage_error_curve",
    "interpolate_coverage",
    "osp_overlap",
    "consistency_check",
]


def sr_baseline(model: SelectiveModel, t: float) -> DecisionSetFamily:
    """Max-score baseline: predict the argmax class unless max score < t.

    Decisions coincide with `harden` at every threshold in [0, 1] since
    the argmax attains the max; the two differ only in how the underlying
    model was trained.  Thresholds above 1 are allowed and reject everything.
    """
    t = float(t)
    if not np.isfinite(t):
        raise InputError(f"threshold must be finite, got {t}")

    def member(X: np.ndarray) -> np.ndarray:
        probs = forward_batch(model, X)
        top = np.argmax(probs, axis=1)
        accept = probs.max(axis=1) >= t
        out = np.zeros(probs.shape, dtype=bool)
        out[np.arange(probs.shape[0]), top] = accept
        return out

    return DecisionSetFamily(member, model.num_classes, model.spec.input_dim, disjoint=True)


@dataclass(frozen=True)
class CurvePoint:
    """One sweep entry: achieved test error and coverage at a target level."""

    achieved_error: float
    achieved_coverage: float
    target_error: float
    method: str
    feasible: bool = True

    def __post_init__(self) -> None:
        for name in ("achieved_error", "achieved_coverage", "target_error"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name} must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)


def coverage_error_curve(
    models: Mapping[float, SelectiveModel],
    t_values: Sequence[float],
    val: LabeledDataset,
    test: LabeledDataset,
    targets: Sequence[float],
    method: str = "osp",
) -> list[CurvePoint]:
    """Select at each target error on ``val`` and measure on ``test``.

    Targets must be sorted ascending.  The validation grid is evaluated
    once and re-picked per target.  A target no grid cell satisfies
    yields a point built from the fallback cell with ``feasible`` False.
    """
    targets = [float(e) for e in targets]
    if not targets:
        raise InputError("curve needs at least one target error")
    if any(b < a for a, b in zip(targets, targets[1:])):
        raise InputError("target errors must be sorted ascending")
    grid = evaluate_grid(models, t_values, val)
    points = []
    for eps in targets:
        res = pick_error_constrained(grid, eps)
        metrics = evaluate(harden(models[res.mu_star], res.t_star), test)
        points.append(
            CurvePoint(
                achieved_error=metrics.raw_error,
                achieved_coverage=metrics.coverage,
                target_error=eps,
                method=method,
                feasible=res.feasible,
            )
        )
    return points


def interpolate_coverage(points: Sequence[CurvePoint], error_value: float) -> float:
    """Piecewise-linear coverage at an error level between curve points.

    Outside the achieved-error range the nearest endpoint's coverage is
    returned; a single point gives its own coverage everywhere.
    """
    if not points:
        raise InputError("interpolation needs at least one curve point")
    error_value = float(error_value)
    if not np.isfinite(error_value):
        raise InputError(f"error level must be finite, got {error_value}")
    pairs = sorted((p.achieved_error, p.achieved_coverage) for p in points)
    xs = np.array([e for e, _ in pairs])
    ys = np.array([c for _, c in pairs])
    return float(np.interp(error_value, xs, ys))


def osp_overlap(model: SelectiveModel, t: float, data: LabeledDataset) -> float:
    """Fraction of points lying in at least two raw sets {x : f_k(x) > t}.

    Raw sets use a strict comparison and no argmax tie-break, so they can
    overlap; at t >= 1/2 score normalization makes overlap impossible.
    """
    t = float(t)
    if not np.isfinite(t):
        raise InputError(f"threshold must be finite, got {t}")
    probs = forward_batch(model, data.features)
    counts = (probs > t).sum(axis=1)
    return float((counts >= 2).mean())


@dataclass(frozen=True)
class ConsistencyReport:
    """Pairwise nestedness violations between rejection regions.

    ``pair_violations[(i, j)]`` with i < j is the empirical mass of
    points rejected by family j (looser target) yet accepted by family i
    (stricter target).  Zero everywhere means the regions are nested.
    """

    num_families: int
    pair_violations: tuple[tuple[int, int, float], ...]
    max_violation: float
    fully_nested: bool
    targets: tuple[float, ...] | None = None


def consistency_check(
    families: Sequence[DecisionSetFamily],
    data: LabeledDataset,
    targets: Sequence[float] | None = None,
) -> ConsistencyReport:
    """Measure how far rejection regions are from being nested.

    ``families`` must be ordered by increasing target error.  For each
    pair i < j the violation is the mass of data points rejected by
    family j but accepted by family i; regions are fully nested when
    every violation is zero.
    """
    fams = list(families)
    if len(fams) < 2:
        raise InputError("consistency check needs at least two families")
    if targets is not None:
        targets = tuple(float(e) for e in targets)
        if len(targets) != len(fams):
            raise InputError(
                f"got {len(targets)} targets for {len(fams)} families"
            )
        if any(b <= a for a, b in zip(targets, targets[1:])):
            raise InputError("targets must be strictly increasing")
    rejected = []
    for fam in fams:
        member = fam.membership(data.features)
        rejected.append(~member.any(axis=1))
    pairs = []
    worst = 0.0
    for i in range(len(fams)):
        for j in range(i + 1, len(fams)):
            mass = float((rejected[j] & ~rejected[i]).mean())
            pairs.append((i, j, mass))
            worst = max(worst, mass)
    return ConsistencyReport(
        num_families=len(fams),
        pair_violations=tuple(pairs),
        max_violation=worst,
        fully_nested=worst == 0.0,
        targets=targets,
    )
