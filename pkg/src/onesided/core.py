"""Domain types for selective classification.

A selective classifier is a family of per-class decision sets; a point
falling in set k is predicted as class k, a point in no set is rejected.
This module holds the dataset and decision-set containers plus the
empirical coverage/error metrics everything else is measured with.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

REJECT = -1


class InputError(ValueError):
    """Bad user-supplied data, dimensions, or parameter values."""


class CapacityError(RuntimeError):
    """An exhaustive enumeration would exceed its configured cap."""


class NumericError(ArithmeticError):
    """A computed quantity became non-finite."""


class FormatError(InputError):
    """A serialized payload is truncated, malformed, or incompatible."""


@dataclass(frozen=True)
class LabeledExample:
    """A single feature vector with its integer class label."""

    features: np.ndarray
    label: int


@dataclass(frozen=True)
class LabeledDataset:
    """Immutable array-backed sample of labeled points.

    Labels are 0-indexed and must lie in ``[0, num_classes)``.  Arrays are
    cast to canonical dtypes and marked read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        feats = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        labs = np.asarray(self.labels, dtype=np.int64).ravel()
        if feats.ndim != 2:
            raise InputError(f"features must be 2-D, got shape {feats.shape}")
        if feats.shape[0] != labs.shape[0]:
            raise InputError(
                f"{feats.shape[0]} feature rows vs {labs.shape[0]} labels"
            )
        if self.num_classes < 1:
            raise InputError(f"need at least 1 class, got {self.num_classes}")
        if labs.size and (labs.min() < 0 or labs.max() >= self.num_classes):
            raise InputError(
                f"labels must lie in [0, {self.num_classes}), "
                f"saw range [{labs.min()}, {labs.max()}]"
            )
        feats = feats.copy()
        labs = labs.copy()
        feats.setflags(write=False)
        labs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def example(self, i: int) -> LabeledExample:
        return LabeledExample(self.features[i], int(self.labels[i]))

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        idx = np.asarray(indices)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)

    @classmethod
    def from_examples(
        cls, examples: Iterable[LabeledExample], num_classes: int
    ) -> "LabeledDataset":
        ex = list(examples)
        if not ex:
            raise InputError("cannot build a dataset from zero examples")
        feats = np.vstack([np.atleast_1d(e.features) for e in ex])
        labs = np.array([e.label for e in ex])
        return cls(feats, labs, num_classes)


@dataclass(frozen=True)
class DecisionSetFamily:
    """K membership predicates over feature space.

    ``member_fn`` maps an ``(n, dim)`` batch to an ``(n, K)`` boolean
    membership matrix.  ``disjoint`` declares that the sets cannot overlap;
    classification trusts it only for skipping tie-breaks, never for metrics.
    """

    member_fn: Callable[[np.ndarray], np.ndarray]
    num_sets: int
    dim: int
    disjoint: bool = False

    def membership(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise InputError(
                f"family expects dim {self.dim}, got points of dim {X.shape[1]}"
            )
        M = np.asarray(self.member_fn(X), dtype=bool)
        if M.shape != (X.shape[0], self.num_sets):
            raise InputError(
                f"membership returned shape {M.shape}, "
                f"expected {(X.shape[0], self.num_sets)}"
            )
        return M

    @classmethod
    def from_predicates(
        cls,
        predicates: Sequence[Callable[[np.ndarray], np.ndarray]],
        dim: int,
        disjoint: bool = False,
    ) -> "DecisionSetFamily":
        preds = tuple(predicates)
        if not preds:
            raise InputError("a decision-set family needs at least one set")

        def member(X: np.ndarray) -> np.ndarray:
            return np.column_stack(
                [np.asarray(p(X), dtype=bool).ravel() for p in preds]
            )

        return cls(member, len(preds), dim, disjoint)


@dataclass(frozen=True)
class SelectiveDecision:
    """Outcome of classifying one point: a class index or a rejection."""

    class_index: int | None

    @property
    def is_reject(self) -> bool:
        return self.class_index is None

    @classmethod
    def predict(cls, k: int) -> "SelectiveDecision":
        return cls(int(k))

    @classmethod
    def reject(cls) -> "SelectiveDecision":
        return cls(None)


@dataclass(frozen=True)
class Metrics:
    """Empirical selective-classification metrics on one dataset."""

    coverage: float
    raw_error: float
    per_class_one_sided_error: np.ndarray
    rejection_rate: float


def assign(family: DecisionSetFamily, X: np.ndarray) -> np.ndarray:
    """Vectorized classification: class index per row, ``REJECT`` outside all sets.

    Overlaps resolve toward the smallest class index.
    """
    M = family.membership(X)
    covered = M.any(axis=1)
    # argmax over booleans returns the first True column
    first = np.argmax(M, axis=1)
    return np.where(covered, first, REJECT)


def classify(family: DecisionSetFamily, x: np.ndarray) -> SelectiveDecision:
    """Classify a single point, rejecting when it lies outside every set."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.ndim > 1:
        x = x.ravel()
    if x.shape[0] != family.dim:
        raise InputError(f"point has dim {x.shape[0]}, family expects {family.dim}")
    a = assign(family, x[None, :])[0]
    if a == REJECT:
        return SelectiveDecision.reject()
    return SelectiveDecision.predict(int(a))


def evaluate(family: DecisionSetFamily, data: LabeledDataset) -> Metrics:
    """Empirical coverage, raw error, and per-class one-sided errors.

    ``per_class_one_sided_error[k]`` is the fraction of points assigned to
    set k (after tie-breaking) whose label is not k; the raw error is the
    fraction predicted at all and predicted wrongly.
    """
    if data.n == 0:
        raise InputError("cannot evaluate on an empty dataset")
    if family.num_sets != data.num_classes:
        raise InputError(
            f"family has {family.num_sets} sets but data has "
            f"{data.num_classes} classes"
        )
    a = assign(family, data.features)
    covered = a != REJECT
    coverage = float(np.mean(covered))
    wrong = covered & (a != data.labels)
    raw_error = float(np.mean(wrong))
    per_class = np.array(
        [np.mean((a == k) & (data.labels != k)) for k in range(data.num_classes)]
    )
    return Metrics(
        coverage=coverage,
        raw_error=raw_error,
        per_class_one_sided_error=per_class,
        rejection_rate=1.0 - coverage,
    )
