"""Tests for baseline hardening, curves, overlap mass, and nestedness."""

import numpy as np
import pytest

from onesided.core import DecisionSetFamily, InputError, LabeledDataset, evaluate
from onesided.evaluation import (
    ConsistencyReport,
    CurvePoint,
    consistency_check,
    coverage_error_curve,
    interpolate_coverage,
    osp_overlap,
    sr_baseline,
)
from onesided.net import BackboneSpec, forward_batch, init_model
from onesided.oracle import PointMaskSet
from onesided.select import evaluate_grid, harden, select_error_constrained


def constant_model(probs):
    probs = np.asarray(probs, dtype=np.float64)
    model = init_model(BackboneSpec((1, 4)), probs.size, seed=0)
    for W in model.weights:
        W[...] = 0.0
    model.head_w[...] = 0.0
    model.head_b[...] = np.log(probs)
    return model


def random_model(seed, dim=2, num_classes=3):
    return init_model(BackboneSpec((dim, 6, 5)), num_classes, seed=seed)


def random_data(seed, n=100, dim=2, num_classes=3):
    rng = np.random.default_rng(seed)
    return LabeledDataset(
        rng.normal(size=(n, dim)), rng.integers(0, num_classes, size=n), num_classes
    )


def test_sr_baseline_hand_rules():
    model = constant_model([0.55, 0.45])
    x = np.array([[0.0]])
    assert sr_baseline(model, 0.5).membership(x).tolist() == [[True, False]]
    data = random_data(0, num_classes=2, dim=1)
    assert evaluate(sr_baseline(model, 0.0), data).coverage == 1.0
    assert evaluate(sr_baseline(model, 1.0 + 1e-9), data).coverage == 0.0


def test_sr_baseline_rejects_non_finite_threshold():
    with pytest.raises(InputError):
        sr_baseline(random_model(0), np.nan)


def test_sr_baseline_matches_harden_pointwise():
    # The argmax attains the max, so both rules must agree everywhere.
    for seed in range(6):
        model = random_model(seed, num_classes=4)
        X = np.random.default_rng(seed + 30).normal(size=(150, 2))
        for t in (0.0, 0.3, 0.5, 0.77, 1.0):
            a = sr_baseline(model, t).membership(X)
            b = harden(model, t).membership(X)
            assert np.array_equal(a, b)


def test_curve_point_validation():
    CurvePoint(0.1, 0.8, 0.1, "osp")
    with pytest.raises(InputError):
        CurvePoint(1.2, 0.8, 0.1, "osp")
    with pytest.raises(InputError):
        CurvePoint(0.1, -0.1, 0.1, "osp")
    with pytest.raises(InputError):
        CurvePoint(0.1, 0.8, 2.0, "osp")


def curve_setup(seed=0):
    val = random_data(seed, n=150)
    test = random_data(seed + 1, n=150)
    models = {0.5: random_model(seed + 2), 4.0: random_model(seed + 3)}
    ts = (0.0, 0.35, 0.5, 0.8, 1.0)
    return models, ts, val, test


def test_curve_matches_single_selection_route():
    # Internal cross-check: each curve point equals running selection at
    # that one target and scoring the chosen cell on the test split.
    models, ts, val, test = curve_setup()
    targets = (0.05, 0.2, 0.6)
    points = coverage_error_curve(models, ts, val, test, targets)
    assert len(points) == 3
    for eps, point in zip(targets, points):
        res = select_error_constrained(models, ts, val, eps)
        metrics = evaluate(harden(models[res.mu_star], res.t_star), test)
        assert point.achieved_error == metrics.raw_error
        assert point.achieved_coverage == metrics.coverage
        assert point.target_error == eps
        assert point.feasible == res.feasible
        assert point.method == "osp"


def test_curve_single_target():
    models, ts, val, test = curve_setup(3)
    points = coverage_error_curve(models, ts, val, test, [1.0])
    assert len(points) == 1
    assert points[0].feasible


def test_curve_rejects_unsorted_or_empty_targets():
    models, ts, val, test = curve_setup(4)
    with pytest.raises(InputError):
        coverage_error_curve(models, ts, val, test, [0.2, 0.1])
    with pytest.raises(InputError):
        coverage_error_curve(models, ts, val, test, [])


def test_curve_propagates_infeasibility():
    # A threshold grid with only t=0 cells cannot reach error zero on
    # data a random model misclassifies somewhere.
    models, _, val, test = curve_setup(5)
    grid = evaluate_grid(models, (0.0,), val)
    assert grid.error.min() > 0.0
    points = coverage_error_curve(models, (0.0,), val, test, [0.0])
    assert not points[0].feasible


def test_interpolation_linear_midpoint():
    points = [
        CurvePoint(0.01, 0.6, 0.01, "osp"),
        CurvePoint(0.02, 0.8, 0.02, "osp"),
    ]
    assert interpolate_coverage(points, 0.015) == pytest.approx(0.7)
    assert interpolate_coverage(points, 0.01) == 0.6
    assert interpolate_coverage(points, 0.02) == 0.8
    # Outside the range the nearest endpoint wins.
    assert interpolate_coverage(points, 0.0) == 0.6
    assert interpolate_coverage(points, 0.5) == 0.8
    assert interpolate_coverage(points[:1], 0.9) == 0.6
    with pytest.raises(InputError):
        interpolate_coverage([], 0.1)
    with pytest.raises(InputError):
        interpolate_coverage(points, np.inf)


def test_overlap_hand_example():
    model = constant_model([0.4, 0.35, 0.25])
    data = random_data(1, dim=1)
    # Every point sits in exactly the two raw sets that clear 0.3.
    assert osp_overlap(model, 0.3, data) == 1.0
    assert osp_overlap(model, 0.38, data) == 0.0


def test_overlap_extremes():
    for seed in range(4):
        model = random_model(seed, num_classes=4)
        data = random_data(seed + 10)
        assert osp_overlap(model, 0.0, data) == 1.0
        for t in (0.5, 0.6, 0.9, 1.0):
            assert osp_overlap(model, t, data) == 0.0


def test_overlap_nonincreasing_in_t():
    model = random_model(11)
    data = random_data(12, n=300)
    values = [osp_overlap(model, t, data) for t in np.linspace(0.0, 1.0, 21)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_overlap_uses_strict_comparison():
    # Equal logits give scores of exactly one half; strictly-greater
    # membership leaves both raw sets empty at t = 0.5.
    model = constant_model([0.5, 0.5])
    data = random_data(2, dim=1, num_classes=2)
    probs = forward_batch(model, data.features)
    assert np.all(probs == 0.5)
    assert osp_overlap(model, 0.5, data) == 0.0
    assert osp_overlap(model, 0.4999, data) == 1.0


def mask_family(reference, masks):
    preds = [PointMaskSet(reference, m) for m in masks]
    return DecisionSetFamily.from_predicates(preds, reference.shape[1], disjoint=True)


def nested_setup():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(10, 2))
    data = LabeledDataset(X, np.zeros(10, dtype=np.int64), 2)
    return X, data


def test_consistency_identical_families():
    X, data = nested_setup()
    accept = np.arange(10) < 6
    fam = mask_family(X, [accept, np.zeros(10, dtype=bool)])
    report = consistency_check([fam, fam, fam], data)
    assert isinstance(report, ConsistencyReport)
    assert report.fully_nested
    assert report.max_violation == 0.0
    assert len(report.pair_violations) == 3
    assert all(mass == 0.0 for _, _, mass in report.pair_violations)


def test_consistency_nested_chain():
    X, data = nested_setup()
    # Acceptance grows with the target, so rejections shrink and nest.
    accepts = [np.arange(10) < k for k in (4, 7, 9)]
    fams = [mask_family(X, [a, np.zeros(10, dtype=bool)]) for a in accepts]
    report = consistency_check(fams, data, targets=[0.01, 0.02, 0.03])
    assert report.fully_nested
    assert report.targets == (0.01, 0.02, 0.03)


def test_consistency_single_violation_mass():
    X, data = nested_setup()
    strict = np.arange(10) < 5
    loose = np.arange(10) < 5
    loose = loose.copy()
    # Point 4 is accepted at the strict target yet rejected at the loose
    # one: exactly one violating point out of ten.
    loose[4] = False
    loose[5] = True
    fams = [
        mask_family(X, [strict, np.zeros(10, dtype=bool)]),
        mask_family(X, [loose, np.zeros(10, dtype=bool)]),
    ]
    report = consistency_check(fams, data)
    assert report.max_violation == pytest.approx(0.1)
    assert not report.fully_nested
    assert report.pair_violations == ((0, 1, 0.1),)


def test_consistency_orientation_is_looser_rejected_stricter_accepted():
    X, data = nested_setup()
    # The stricter model rejects extra points; that direction is the
    # expected shrinkage, not a violation.
    strict_accept = np.arange(10) < 3
    loose_accept = np.arange(10) < 8
    fams = [
        mask_family(X, [strict_accept, np.zeros(10, dtype=bool)]),
        mask_family(X, [loose_accept, np.zeros(10, dtype=bool)]),
    ]
    assert consistency_check(fams, data).fully_nested


def test_consistency_input_errors():
    X, data = nested_setup()
    fam = mask_family(X, [np.ones(10, dtype=bool), np.zeros(10, dtype=bool)])
    with pytest.raises(InputError):
        consistency_check([fam], data)
    with pytest.raises(InputError):
        consistency_check([fam, fam], data, targets=[0.01])
    with pytest.raises(InputError):
        consistency_check([fam, fam], data, targets=[0.02, 0.01])
    wrong_dim = LabeledDataset(np.zeros((4, 3)), np.zeros(4, dtype=np.int64), 2)
    with pytest.raises(InputError):
        consistency_check([fam, fam], wrong_dim)
