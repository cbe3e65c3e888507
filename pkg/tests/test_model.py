import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barrierkit.errors import ContractError, DimensionError, NumericError
from barrierkit.fixtures import FIXTURES, academic, linear_spring, nonlinear_spring
from barrierkit.model import (AffineDecomposition, ConstraintSet, ControlSet, RegionLabel,
                              SystemModel, active_indices, classify_region, eval_dynamics,
                              finite_difference_jacobian, gronwall_bound, lie_derivative)


def test_eval_dynamics_examples():
    assert np.allclose(eval_dynamics(academic().system, [0, 2], [1]), [-3, 1])
    assert np.allclose(eval_dynamics(linear_spring().system, [0, 0], [0]), [0, 0])
    assert np.allclose(eval_dynamics(nonlinear_spring().system, [1, 1], [0]), [1, -6])


def test_eval_dynamics_errors():
    sysm = academic().system
    with pytest.raises(DimensionError):
        eval_dynamics(sysm, [0, 0, 0], [1])
    with pytest.raises(DimensionError):
        eval_dynamics(sysm, [0, 0], [1, 2])
    with pytest.raises(NumericError, match="component"):
        eval_dynamics(sysm, [0, np.inf], [0])


def test_classify_region_examples():
    cs = academic().constraints
    assert classify_region(cs, [0, 0]) is RegionLabel.INTERIOR
    assert classify_region(cs, [3, 5]) is RegionLabel.BOUNDARY
    assert classify_region(cs, [3.1, 0]) is RegionLabel.OUTSIDE


def test_active_indices_examples():
    cs = academic().constraints
    assert active_indices(cs, [3, 0]) == {1}
    assert active_indices(cs, [-1, 7]) == {0}
    box = ConstraintSet(4, lambda x: np.array([-x[0], -x[1], x[0] - 1, x[1] - 1]),
                        lambda i, x: np.array([[-1, 0], [0, -1], [1, 0], [0, 1]][i], float))
    assert active_indices(box, [0, 0]) == {0, 1}
    with pytest.raises(ContractError):
        active_indices(cs, [0, 0])


def test_lie_derivative_examples():
    fx = academic()
    for u in (-1.0, 0.0, 0.7):
        assert lie_derivative(fx.system, fx.constraints, 1, [3, 1], [u]) == pytest.approx(0.0)
    assert lie_derivative(fx.system, fx.constraints, 1, [3, 0], [0]) == pytest.approx(1.0)
    sp = linear_spring()
    for x2 in (-2.0, 0.0, 1.5):
        assert lie_derivative(sp.system, sp.constraints, 0, [1, x2], [0.3]) == pytest.approx(x2)


def test_gronwall_examples():
    assert gronwall_bound(1, 1, 0, 0) == 0
    assert gronwall_bound(1, 1, 1, 1) == pytest.approx(2 * math.e - 1)
    assert gronwall_bound(1, 2, 1, 0.5) == pytest.approx(math.sqrt(2 * math.e - 1))
    assert gronwall_bound(1, 2, 1, 0.5) == pytest.approx(2.106315, abs=1e-6)
    with pytest.raises(ContractError):
        gronwall_bound(-1, 1, 0, 1)
    with pytest.raises(ContractError):
        gronwall_bound(1, 3, 0, 1)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_jacobian_matches_finite_differences(name, rng):
    fx = FIXTURES[name]()
    box = np.array(fx.search_box)
    for _ in range(100):
        x = rng.uniform(box[:, 0], box[:, 1])
        u = rng.uniform(-1, 1, fx.system.m)
        J = fx.system.jac(x, u)
        fd = finite_difference_jacobian(lambda y: fx.system.f(y, u), x, 1e-5)
        assert np.all((np.abs(J - fd) <= 1e-5) | (np.abs(J - fd) <= 1e-4 * np.abs(fd)))


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_gradients_match_finite_differences(name, rng):
    fx = FIXTURES[name]()
    cs = fx.constraints
    box = np.array(fx.search_box)
    for _ in range(100):
        x = rng.uniform(box[:, 0], box[:, 1])
        fd = finite_difference_jacobian(cs.values, x, 1e-5)
        assert np.allclose(cs.gradients(x), fd, atol=1e-5, rtol=1e-4)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_affine_consistency(name, rng):
    sysm = FIXTURES[name]().system
    assert sysm.is_affine
    for _ in range(100):
        x = rng.uniform(-4, 4, 2)
        u = rng.uniform(-1, 1, 1)
        f = sysm.f(x, u)
        aff = sysm.drift(x) + sysm.input_matrix(x) @ u
        assert np.linalg.norm(aff - f) <= 1e-10 * (1 + np.linalg.norm(f))


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_region_trichotomy(x1, x2):
    cs = academic().constraints
    g = float(np.max(cs.values([x1, x2])))
    label = classify_region(cs, [x1, x2])
    expected = [g <= -1e-8, abs(g) < 1e-8, g >= 1e-8]
    assert sum(expected) == 1
    assert label is [RegionLabel.INTERIOR, RegionLabel.BOUNDARY, RegionLabel.OUTSIDE][expected.index(True)]


def test_control_set_membership_and_argmin():
    ball = ControlSet.unit_ball(2)
    assert ball.contains([0.6, 0.8]) and not ball.contains([0.8, 0.8])
    u, deg = ball.argmin_linear([3.0, 4.0])
    assert np.allclose(u, [-0.6, -0.8]) and not deg
    u, deg = ball.argmin_linear([0.0, 0.0])
    assert np.allclose(u, 0) and deg
    box = ControlSet.box([-1, 0], [2, 1])
    u, deg = box.argmin_linear([1.0, -1.0])
    assert np.allclose(u, [-1, 1]) and not deg
    u, deg = box.argmin_linear([0.0, 1.0])
    assert np.allclose(u, [0.5, 0]) and deg
    assert box.contains([2, 1]) and not box.contains([2.1, 0])
    with pytest.raises(ContractError):
        ControlSet.box([1], [0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_ball_argmin_is_minimal(a):
    ball = ControlSet.unit_ball(2)
    u, _ = ball.argmin_linear(a)
    assert ball.contains(u, 1e-12)
    samples = ball.samples()
    assert np.dot(a, u) <= np.min(samples @ np.asarray(a)) + 1e-10


def test_sample_counts_default():
    assert ControlSet.unit_ball(1).n_samples == 64
    assert ControlSet.unit_ball(3).n_samples == 256


def test_custom_system_without_affine_part():
    sysm = SystemModel(1, 1, lambda x, u: np.array([np.sin(u[0]) + x[0]]),
                       lambda x, u: np.array([[1.0]]))
    assert not sysm.is_affine
    assert np.allclose(eval_dynamics(sysm, [1.0], [0.0]), [1.0])
    aff = SystemModel(1, 1, lambda x, u: np.array([x[0] + u[0]]), lambda x, u: np.array([[1.0]]),
                      AffineDecomposition(lambda x: np.array([x[0]]), lambda x: np.array([[1.0]])))
    assert aff.is_affine
