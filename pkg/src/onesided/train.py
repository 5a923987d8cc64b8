"""Constrained training of per-class decision scores.

Each class k carries two empirical quantities: a fit term (mean negative
log-score over points of class k) and a leakage term (mean negative
log-complement-score over points of other classes).  The training
objective couples them through per-class multipliers lambda_k, slack
variables phi_k, and a budget price mu:

    sum_k [ fit_k + lambda_k * (leak_k - phi_k) + mu * phi_k ]

Network weights and slacks descend on a fast learning rate while the
multipliers ascend on a slow one; the shared backbone accumulates its
descent steps and applies them only every few epochs, keeping the
per-class heads quasi-independent in between.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import InputError, LabeledDataset, NumericError
from .net import (
    PROB_FLOOR,
    BackboneSpec,
    GradientBundle,
    SelectiveModel,
    backward,
    forward_batch,
    warm_start,
)


@dataclass
class LagrangianState:
    """Multipliers, slacks, and the budget price.

    ``lambdas`` and ``phis`` are kept nonnegative by projection after
    every update; ``mu`` prices slack and caps the multipliers.
    """

    lambdas: np.ndarray
    phis: np.ndarray
    mu: float

    def __post_init__(self) -> None:
        self.lambdas = np.asarray(self.lambdas, dtype=np.float64).copy()
        self.phis = np.asarray(self.phis, dtype=np.float64).copy()
        if self.lambdas.shape != self.phis.shape:
            raise InputError("lambda and phi vectors must share a shape")
        if (self.lambdas < 0).any() or (self.phis < 0).any():
            raise InputError("multipliers and slacks must be nonnegative")
        if self.mu < 0:
            raise InputError("budget price mu must be nonnegative")

    @classmethod
    def initial(cls, num_classes: int, mu: float) -> "LagrangianState":
        return cls(np.zeros(num_classes), np.zeros(num_classes), mu)

    def snapshot(self) -> "LagrangianState":
        return LagrangianState(self.lambdas.copy(), self.phis.copy(), self.mu)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one saddle-point run."""

    mu: float
    epochs: int = 200
    batch_size: int = 128
    lr_min: float = 1e-3
    lr_max: float = 1e-4
    lr_decay: tuple = (0.1, 50)
    backbone_update_interval: int = 20
    seed: int = 0
    warm_start_epochs: int = 30
    lambda_max: float | None = None
    adaptive: bool = False
    restricted: bool = True

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise InputError("mu must be nonnegative")
        if self.epochs < 0 or self.warm_start_epochs < 0:
            raise InputError("epoch counts must be nonnegative")
        if self.batch_size < 1:
            raise InputError("batch_size must be at least 1")
        if self.lr_min <= 0 or self.lr_max < 0:
            raise InputError("learning rates must be positive (ascent rate may be 0)")
        factor, at_epoch = self.lr_decay
        if factor <= 0 or at_epoch < 0:
            raise InputError(f"bad lr_decay {self.lr_decay}")
        if self.backbone_update_interval < 1:
            raise InputError("backbone_update_interval must be at least 1")
        if self.lambda_max is not None and self.lambda_max < 0:
            raise InputError("lambda_max must be nonnegative")

    @property
    def effective_lambda_max(self) -> float:
        return self.lambda_max if self.lambda_max is not None else 10.0 * self.mu


@dataclass(frozen=True)
class DGConfig:
    """Extra-output baseline: payoff odds and the thresholds to scan."""

    payoff: float
    thresholds: tuple = tuple(np.linspace(0.0, 1.0, 100))

    def __post_init__(self) -> None:
        if self.payoff < 1.0:
            raise InputError(f"payoff must be at least 1, got {self.payoff}")


# ---------------------------------------------------------------------------
# loss values


def _clamped(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def _fit_value(probs, labels, k, restricted):
    if restricted:
        mask = labels == k
        if not mask.any():
            return 0.0, True
        return float(np.mean(-np.log(_clamped(probs[mask, k])))), False
    return float(np.mean(-np.log(_clamped(probs[:, k])))), False


def _leak_value(probs, labels, k):
    mask = labels != k
    if not mask.any():
        return 0.0, True
    return float(np.mean(-np.log(_clamped(1.0 - probs[mask, k])))), False


def restricted_loss(model: SelectiveModel, batch: LabeledDataset, k: int) -> float:
    """Mean -log f_k over the batch's class-k points (0 when absent)."""
    _check_class(model, k)
    probs = forward_batch(model, batch.features)
    return _fit_value(probs, batch.labels, k, True)[0]


def unrestricted_loss(model: SelectiveModel, batch: LabeledDataset, k: int) -> float:
    """Mean -log f_k over every batch point, regardless of label."""
    _check_class(model, k)
    probs = forward_batch(model, batch.features)
    return _fit_value(probs, batch.labels, k, False)[0]


def constraint_loss(model: SelectiveModel, batch: LabeledDataset, k: int) -> float:
    """Mean -log(1 - f_k) over the batch's non-k points (0 when absent)."""
    _check_class(model, k)
    probs = forward_batch(model, batch.features)
    return _leak_value(probs, batch.labels, k)[0]


def lagrangian(
    model: SelectiveModel, batch: LabeledDataset, state: LagrangianState
) -> float:
    """Full saddle objective at the given multipliers and slacks."""
    probs = forward_batch(model, batch.features)
    K = model.num_classes
    total = 0.0
    for k in range(K):
        fit, _ = _fit_value(probs, batch.labels, k, True)
        leak, _ = _leak_value(probs, batch.labels, k)
        total += fit + state.lambdas[k] * (leak - state.phis[k]) + state.mu * state.phis[k]
    return float(total)


def _check_class(model: SelectiveModel, k: int) -> None:
    if not 0 <= k < model.num_classes:
        raise InputError(f"class index {k} outside [0, {model.num_classes})")


# ---------------------------------------------------------------------------
# loss objects for backward()


class RestrictedFitLoss:
    """Per-class fit term as a standalone differentiable loss."""

    def __init__(self, k: int):
        self.k = k

    def value_and_grad(self, probs, labels):
        k = self.k
        mask = labels == k
        dprobs = np.zeros_like(probs)
        if not mask.any():
            return 0.0, dprobs
        p_raw = probs[mask, k]
        p = _clamped(p_raw)
        value = float(np.mean(-np.log(p)))
        interior = (p_raw > PROB_FLOOR) & (p_raw < 1.0 - PROB_FLOOR)
        dprobs[mask, k] = np.where(interior, -1.0 / (mask.sum() * p), 0.0)
        return value, dprobs


class LeakLoss:
    """Per-class leakage term as a standalone differentiable loss."""

    def __init__(self, k: int):
        self.k = k

    def value_and_grad(self, probs, labels):
        k = self.k
        mask = labels != k
        dprobs = np.zeros_like(probs)
        if not mask.any():
            return 0.0, dprobs
        p_raw = probs[mask, k]
        q = _clamped(1.0 - p_raw)
        value = float(np.mean(-np.log(q)))
        interior = (p_raw > PROB_FLOOR) & (p_raw < 1.0 - PROB_FLOOR)
        dprobs[mask, k] = np.where(interior, 1.0 / (mask.sum() * q), 0.0)
        return value, dprobs


class LagrangianLoss:
    """Saddle objective; also records per-batch leak values and absences.

    ``last_leaks`` (per class) feeds the multiplier ascent step after each
    backward pass; ``last_absent_fit`` / ``last_absent_leak`` flag classes
    whose term was skipped because the batch had no (or only) points of
    that class.
    """

    def __init__(self, state: LagrangianState, restricted: bool = True):
        self.state = state
        self.restricted = restricted
        self.last_leaks: np.ndarray | None = None
        self.last_absent_fit: np.ndarray | None = None
        self.last_absent_leak: np.ndarray | None = None

    def value_and_grad(self, probs, labels):
        state = self.state
        K = probs.shape[1]
        n = probs.shape[0]
        dprobs = np.zeros_like(probs)
        total = 0.0
        leaks = np.zeros(K)
        absent_fit = np.zeros(K, dtype=bool)
        absent_leak = np.zeros(K, dtype=bool)
        for k in range(K):
            if self.restricted:
                mask = labels == k
                if mask.any():
                    p_raw = probs[mask, k]
                    p = _clamped(p_raw)
                    total += float(np.mean(-np.log(p)))
                    interior = (p_raw > PROB_FLOOR) & (p_raw < 1.0 - PROB_FLOOR)
                    dprobs[mask, k] += np.where(
                        interior, -1.0 / (mask.sum() * p), 0.0
                    )
                else:
                    absent_fit[k] = True
            else:
                p_raw = probs[:, k]
                p = _clamped(p_raw)
                total += float(np.mean(-np.log(p)))
                interior = (p_raw > PROB_FLOOR) & (p_raw < 1.0 - PROB_FLOOR)
                dprobs[:, k] += np.where(interior, -1.0 / (n * p), 0.0)
            cmask = labels != k
            if cmask.any():
                p_raw = probs[cmask, k]
                q = _clamped(1.0 - p_raw)
                leak = float(np.mean(-np.log(q)))
                leaks[k] = leak
                total += state.lambdas[k] * leak
                interior = (p_raw > PROB_FLOOR) & (p_raw < 1.0 - PROB_FLOOR)
                dprobs[cmask, k] += np.where(
                    interior, state.lambdas[k] / (cmask.sum() * q), 0.0
                )
            else:
                absent_leak[k] = True
            total += (state.mu - state.lambdas[k]) * state.phis[k]
        self.last_leaks = leaks
        self.last_absent_fit = absent_fit
        self.last_absent_leak = absent_leak
        return float(total), dprobs


class GamblersLoss:
    """Negative mean log of true-class score plus discounted opt-out score.

    Expects a model with one extra head: column K is the opt-out score.
    The payoff must satisfy 1 <= payoff < K.
    """

    def __init__(self, payoff: float):
        self.payoff = payoff

    def value_and_grad(self, probs, labels):
        K = probs.shape[1] - 1
        if K < 1:
            raise InputError("opt-out loss needs at least 2 outputs")
        if not 1.0 <= self.payoff < K:
            raise InputError(
                f"payoff must lie in [1, {K}), got {self.payoff}"
            )
        n = probs.shape[0]
        idx = np.arange(n)
        s_raw = probs[idx, labels] + probs[:, K] / self.payoff
        s = _clamped(s_raw)
        value = float(np.mean(-np.log(s)))
        dprobs = np.zeros_like(probs)
        interior = (s_raw > PROB_FLOOR) & (s_raw < 1.0 - PROB_FLOOR)
        g = np.where(interior, -1.0 / (n * s), 0.0)
        dprobs[idx, labels] += g
        dprobs[:, K] += g / self.payoff
        return value, dprobs


def dg_loss(model: SelectiveModel, batch: LabeledDataset, config: DGConfig) -> float:
    """Opt-out training loss of the extra-head baseline model."""
    K = model.num_classes - 1
    if K < 1:
        raise InputError("opt-out model needs at least 2 heads")
    if not 1.0 <= config.payoff < K:
        raise InputError(f"payoff must lie in [1, {K}), got {config.payoff}")
    probs = forward_batch(model, batch.features)
    idx = np.arange(probs.shape[0])
    s = _clamped(probs[idx, batch.labels] + probs[:, K] / config.payoff)
    return float(np.mean(-np.log(s)))


# ---------------------------------------------------------------------------
# the saddle-point loop


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    fit_sum: float
    leaks: tuple
    lambdas: tuple
    phis: tuple
    absent_fit: tuple
    absent_leak: tuple


@dataclass(frozen=True)
class TrainingLog:
    records: tuple

    def final(self) -> EpochRecord:
        return self.records[-1]


class _Adam:
    """Per-parameter moment scaling for the descent steps."""

    def __init__(self, model: SelectiveModel, b1=0.9, b2=0.999, guard=1e-8):
        self.b1, self.b2, self.guard = b1, b2, guard
        self.t = 0
        self.m = GradientBundle.zeros_like(model)
        self.v = GradientBundle.zeros_like(model)

    def _scale(self, m, v, g):
        m *= self.b1
        m += (1 - self.b1) * g
        v *= self.b2
        v += (1 - self.b2) * g * g
        mhat = m / (1 - self.b1**self.t)
        vhat = v / (1 - self.b2**self.t)
        return mhat / (np.sqrt(vhat) + self.guard)

    def transform(self, grads: GradientBundle) -> GradientBundle:
        self.t += 1
        ws = [
            self._scale(m, v, g)
            for m, v, g in zip(self.m.weights, self.v.weights, grads.weights)
        ]
        bs = [
            self._scale(m, v, g)
            for m, v, g in zip(self.m.biases, self.v.biases, grads.biases)
        ]
        hw = self._scale(self.m.head_w, self.v.head_w, grads.head_w)
        hb = self._scale(self.m.head_b, self.v.head_b, grads.head_b)
        return GradientBundle(ws, bs, hw, hb)


def _full_data_record(
    model, data, state, epoch, absent_fit, absent_leak
) -> EpochRecord:
    probs = forward_batch(model, data.features)
    K = model.num_classes
    fit_sum = 0.0
    leaks = []
    for k in range(K):
        fit_sum += _fit_value(probs, data.labels, k, True)[0]
        leaks.append(_leak_value(probs, data.labels, k)[0])
    return EpochRecord(
        epoch=epoch,
        fit_sum=float(fit_sum),
        leaks=tuple(leaks),
        lambdas=tuple(float(v) for v in state.lambdas),
        phis=tuple(float(v) for v in state.phis),
        absent_fit=tuple(int(v) for v in absent_fit),
        absent_leak=tuple(int(v) for v in absent_leak),
    )


def sgda_train(
    data: LabeledDataset,
    spec: BackboneSpec,
    config: TrainConfig,
    initial_model: SelectiveModel | None = None,
) -> tuple[SelectiveModel, LagrangianState, TrainingLog]:
    """Warm start, then alternating descent/ascent over minibatches.

    Heads and slacks take descent steps at ``lr_min`` each batch; the
    multipliers take ascent steps at ``lr_max``, clipped to
    ``[0, lambda_max]``.  Backbone gradients accumulate and land every
    ``backbone_update_interval`` epochs.  A non-finite loss aborts with a
    :class:`NumericError` carrying the last finite epoch's model.
    """
    K = data.num_classes
    if initial_model is not None:
        if initial_model.num_classes != K:
            raise InputError("initial model class count does not match data")
        model = initial_model.copy()
    else:
        model = warm_start(
            data,
            spec,
            K,
            config.warm_start_epochs,
            config.lr_min,
            config.seed,
            config.batch_size,
        )
    state = LagrangianState.initial(K, config.mu)
    lam_max = config.effective_lambda_max
    rng = np.random.default_rng([config.seed, 1])
    n = data.n
    lr_w, lr_l = config.lr_min, config.lr_max
    decay_factor, decay_epoch = config.lr_decay
    buf = GradientBundle.zeros_like(model)
    adam = _Adam(model) if config.adaptive else None
    absent_fit = np.zeros(K, dtype=np.int64)
    absent_leak = np.zeros(K, dtype=np.int64)
    records = []
    checkpoint_epoch = -1
    checkpoint_model = model.copy()
    checkpoint_state = state.snapshot()

    for epoch in range(config.epochs):
        if epoch == decay_epoch and epoch > 0:
            lr_w *= decay_factor
            lr_l *= decay_factor
        perm = np.arange(n) if config.batch_size >= n else rng.permutation(n)
        try:
            for start in range(0, n, config.batch_size):
                batch = data.subset(perm[start : start + config.batch_size])
                loss_obj = LagrangianLoss(state, config.restricted)
                _, grads = backward(model, batch, loss_obj)
                if adam is not None:
                    grads = adam.transform(grads)
                # heads step now, backbone steps accumulate
                model.head_w -= lr_w * grads.head_w
                model.head_b -= lr_w * grads.head_b
                for bw, g in zip(buf.weights, grads.weights):
                    bw += lr_w * g
                for bb, g in zip(buf.biases, grads.biases):
                    bb += lr_w * g
                # simultaneous update of slacks and multipliers
                new_phis = np.maximum(
                    0.0, state.phis - lr_w * (state.mu - state.lambdas)
                )
                new_lambdas = np.clip(
                    state.lambdas + lr_l * (loss_obj.last_leaks - state.phis),
                    0.0,
                    lam_max,
                )
                state.phis = new_phis
                state.lambdas = new_lambdas
                absent_fit += loss_obj.last_absent_fit
                absent_leak += loss_obj.last_absent_leak
        except NumericError as exc:
            exc.checkpoint_epoch = checkpoint_epoch
            exc.checkpoint_model = checkpoint_model
            exc.checkpoint_state = checkpoint_state
            raise
        if (epoch + 1) % config.backbone_update_interval == 0:
            for W, bw in zip(model.weights, buf.weights):
                W -= bw
                bw[:] = 0.0
            for b, bb in zip(model.biases, buf.biases):
                b -= bb
                bb[:] = 0.0
        records.append(
            _full_data_record(model, data, state, epoch, absent_fit, absent_leak)
        )
        checkpoint_epoch = epoch
        checkpoint_model = model.copy()
        checkpoint_state = state.snapshot()

    if not records:
        records.append(
            _full_data_record(model, data, state, -1, absent_fit, absent_leak)
        )
    return model, state, TrainingLog(tuple(records))
