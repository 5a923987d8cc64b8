"""Hardening soft classifiers and model selection over a (mu, t) grid.

A trained scorer becomes an abstaining classifier by thresholding: the
point is assigned to its top-scoring class when that score clears ``t``
and rejected otherwise.  Selection evaluates one hardened family per
(constraint weight, threshold) cell on held-out data and picks the cell
that best satisfies the chosen criterion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .core import DecisionSetFamily, InputError, LabeledDataset
from .net import SelectiveModel, forward_batch

__all__ = [
    "SelectionGrid",
    "SelectionCriterion",
    "SelectionResult",
    "harden",
    "evaluate_grid",
    "pick_error_constrained",
    "pick_coverage_constrained",
    "select_error_constrained",
    "select_coverage_constrained",
    "default_threshold_grid",
    "full_mu_grid",
    "quick_mu_grid",
]


def _harden_membership(probs: np.ndarray, t: float) -> np.ndarray:
    """Membership matrix for the thresholded-argmax rule.

    Row i has a single True at the argmax class (ties to the smallest
    index) when its score is at least ``t``, else all False.
    """
    top = np.argmax(probs, axis=1)
    rows = np.arange(probs.shape[0])
    out = np.zeros(probs.shape, dtype=bool)
    out[rows, top] = probs[rows, top] >= t
    return out


def harden(model: SelectiveModel, t: float) -> DecisionSetFamily:
    """Turn a soft scorer into disjoint decision sets at threshold ``t``.

    Set k contains x exactly when class k has the largest score on x and
    that score is >= t.  The comparison is closed, so a score exactly at
    the threshold is accepted.  The family is disjoint by construction.
    """
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise InputError(f"threshold must lie in [0, 1], got {t}")

    def member(X: np.ndarray) -> np.ndarray:
        return _harden_membership(forward_batch(model, X), t)

    return DecisionSetFamily(member, model.num_classes, model.spec.input_dim, disjoint=True)


@dataclass(frozen=True)
class SelectionGrid:
    """Held-out coverage and error for every (mu, t) cell.

    ``coverage[i, j]`` and ``error[i, j]`` are the empirical coverage and
    raw error of model ``mu_values[i]`` hardened at ``t_values[j]``.  The
    error is the sum of per-class one-sided errors, which equals the raw
    error because hardened families are disjoint.
    """

    mu_values: tuple[float, ...]
    t_values: tuple[float, ...]
    coverage: np.ndarray
    error: np.ndarray

    def __post_init__(self) -> None:
        mus = tuple(float(m) for m in self.mu_values)
        ts = tuple(float(t) for t in self.t_values)
        if not mus or not ts:
            raise InputError("selection grid needs at least one mu and one t")
        cov = np.asarray(self.coverage, dtype=np.float64)
        err = np.asarray(self.error, dtype=np.float64)
        shape = (len(mus), len(ts))
        if cov.shape != shape or err.shape != shape:
            raise InputError(
                f"grid tables must have shape {shape}, "
                f"got coverage {cov.shape} and error {err.shape}"
            )
        if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(err))):
            raise InputError("grid tables must be finite")
        if np.any(cov < 0.0) or np.any(cov > 1.0) or np.any(err < 0.0):
            raise InputError("grid coverage and error must lie in [0, 1]")
        if np.any(err > cov + 1e-12):
            raise InputError("grid error cannot exceed coverage")
        cov.setflags(write=False)
        err.setflags(write=False)
        object.__setattr__(self, "mu_values", mus)
        object.__setattr__(self, "t_values", ts)
        object.__setattr__(self, "coverage", cov)
        object.__setattr__(self, "error", err)

    @property
    def num_cells(self) -> int:
        return len(self.mu_values) * len(self.t_values)

    def rows(self) -> Iterator[tuple[float, float, float, float]]:
        """Yield (mu, t, coverage, error) one cell at a time, mu-major."""
        for i, mu in enumerate(self.mu_values):
            for j, t in enumerate(self.t_values):
                yield mu, t, float(self.coverage[i, j]), float(self.error[i, j])


@dataclass(frozen=True)
class SelectionCriterion:
    """Grid-search objective: cap held-out error or floor held-out coverage."""

    mode: str
    target: float

    def __post_init__(self) -> None:
        if self.mode not in ("error", "coverage"):
            raise InputError(
                f"selection mode must be 'error' or 'coverage', got {self.mode!r}"
            )
        target = float(self.target)
        if not 0.0 <= target <= 1.0:
            raise InputError(f"selection target must lie in [0, 1], got {target}")
        object.__setattr__(self, "target", target)

    @classmethod
    def error_constrained(cls, eps: float) -> "SelectionCriterion":
        """Maximize coverage subject to error <= eps."""
        return cls("error", eps)

    @classmethod
    def coverage_constrained(cls, rho: float) -> "SelectionCriterion":
        """Minimize error subject to coverage >= rho."""
        return cls("coverage", rho)

    def pick(self, grid: SelectionGrid) -> "SelectionResult":
        if self.mode == "error":
            return pick_error_constrained(grid, self.target)
        return pick_coverage_constrained(grid, self.target)


@dataclass(frozen=True)
class SelectionResult:
    """Chosen grid cell plus the full grid it came from.

    ``feasible`` is False when no cell met the constraint and the result
    is the best-effort fallback cell.
    """

    mu_star: float
    t_star: float
    mu_index: int
    t_index: int
    grid: SelectionGrid
    feasible: bool

    @property
    def coverage(self) -> float:
        return float(self.grid.coverage[self.mu_index, self.t_index])

    @property
    def error(self) -> float:
        return float(self.grid.error[self.mu_index, self.t_index])


def evaluate_grid(
    models: Mapping[float, SelectiveModel],
    t_values: Sequence[float],
    val: LabeledDataset,
) -> SelectionGrid:
    """Fill the (mu, t) grid with held-out coverage and error.

    Each model is scored once on ``val``; every threshold then reuses the
    cached scores through the same membership rule as `harden`.
    """
    if not models:
        raise InputError("selection needs at least one trained model")
    ts = tuple(float(t) for t in t_values)
    if not ts:
        raise InputError("selection needs at least one threshold")
    for t in ts:
        if not 0.0 <= t <= 1.0:
            raise InputError(f"threshold must lie in [0, 1], got {t}")
    mus = tuple(float(m) for m in models)
    cov = np.zeros((len(mus), len(ts)))
    err = np.zeros((len(mus), len(ts)))
    for i, mu_key in enumerate(models):
        model = models[mu_key]
        if model.num_classes != val.num_classes:
            raise InputError(
                f"model for mu={mu_key} has {model.num_classes} classes "
                f"but the validation data has {val.num_classes}"
            )
        probs = forward_batch(model, val.features)
        for j, t in enumerate(ts):
            member = _harden_membership(probs, t)
            cov[i, j] = member.any(axis=1).mean()
            wrong = member & (val.labels[:, None] != np.arange(val.num_classes))
            err[i, j] = wrong.mean(axis=0).sum()
    return SelectionGrid(mus, ts, cov, err)


def pick_error_constrained(grid: SelectionGrid, eps: float) -> SelectionResult:
    """Cell with maximal coverage among those with error <= eps.

    Ties prefer larger t, then smaller mu.  With no feasible cell the
    fallback is the minimal-error cell (ties by the same cascade) and
    the result is flagged infeasible.
    """
    eps = float(eps)
    if not 0.0 <= eps <= 1.0:
        raise InputError(f"target error must lie in [0, 1], got {eps}")
    best = None
    best_key = None
    for i, mu in enumerate(grid.mu_values):
        for j, t in enumerate(grid.t_values):
            if grid.error[i, j] > eps:
                continue
            key = (grid.coverage[i, j], t, -mu)
            if best_key is None or key > best_key:
                best_key = key
                best = (i, j)
    if best is not None:
        i, j = best
        return SelectionResult(grid.mu_values[i], grid.t_values[j], i, j, grid, True)
    fallback = None
    fb_key = None
    for i, mu in enumerate(grid.mu_values):
        for j, t in enumerate(grid.t_values):
            key = (-grid.error[i, j], grid.coverage[i, j], t, -mu)
            if fb_key is None or key > fb_key:
                fb_key = key
                fallback = (i, j)
    i, j = fallback
    return SelectionResult(grid.mu_values[i], grid.t_values[j], i, j, grid, False)


def pick_coverage_constrained(grid: SelectionGrid, rho: float) -> SelectionResult:
    """Cell with minimal error among those with coverage >= rho.

    Ties prefer larger coverage, then larger t, then smaller mu.  With no
    feasible cell the fallback is the maximal-coverage cell (then minimal
    error, larger t, smaller mu) and the result is flagged infeasible.
    """
    rho = float(rho)
    if not 0.0 <= rho <= 1.0:
        raise InputError(f"target coverage must lie in [0, 1], got {rho}")
    best = None
    best_key = None
    for i, mu in enumerate(grid.mu_values):
        for j, t in enumerate(grid.t_values):
            if grid.coverage[i, j] < rho:
                continue
            key = (-grid.error[i, j], grid.coverage[i, j], t, -mu)
            if best_key is None or key > best_key:
                best_key = key
                best = (i, j)
    if best is not None:
        i, j = best
        return SelectionResult(grid.mu_values[i], grid.t_values[j], i, j, grid, True)
    fallback = None
    fb_key = None
    for i, mu in enumerate(grid.mu_values):
        for j, t in enumerate(grid.t_values):
            key = (grid.coverage[i, j], -grid.error[i, j], t, -mu)
            if fb_key is None or key > fb_key:
                fb_key = key
                fallback = (i, j)
    i, j = fallback
    return SelectionResult(grid.mu_values[i], grid.t_values[j], i, j, grid, False)


def select_error_constrained(
    models: Mapping[float, SelectiveModel],
    t_values: Sequence[float],
    val: LabeledDataset,
    eps: float,
) -> SelectionResult:
    """Evaluate the grid on ``val`` and pick the error-constrained cell."""
    return pick_error_constrained(evaluate_grid(models, t_values, val), eps)


def select_coverage_constrained(
    models: Mapping[float, SelectiveModel],
    t_values: Sequence[float],
    val: LabeledDataset,
    rho: float,
) -> SelectionResult:
    """Evaluate the grid on ``val`` and pick the coverage-constrained cell."""
    return pick_coverage_constrained(evaluate_grid(models, t_values, val), rho)


def default_threshold_grid(size: int = 100) -> tuple[float, ...]:
    """Equally spaced thresholds spanning [0, 1]."""
    if size < 2:
        raise InputError(f"threshold grid needs at least 2 points, got {size}")
    return tuple(float(t) for t in np.linspace(0.0, 1.0, size))


def full_mu_grid() -> tuple[float, ...]:
    """30 constraint weights: 10 equally spaced in [0.01, 1], 20 more up to 16."""
    low = np.linspace(0.01, 1.0, 10)
    high = np.linspace(1.0, 16.0, 21)[1:]
    return tuple(float(m) for m in np.concatenate([low, high]))


def quick_mu_grid(size: int = 8) -> tuple[float, ...]:
    """Log-spaced constraint weights in [0.05, 16] for fast desk-scale runs."""
    if size < 2:
        raise InputError(f"mu grid needs at least 2 points, got {size}")
    return tuple(float(m) for m in np.geomspace(0.05, 16.0, size))
