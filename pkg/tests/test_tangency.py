import numpy as np
import pytest

from barrierkit.errors import ContractError, SingularFaceError
from barrierkit.fixtures import academic, academic_disconnected, linear_spring, nonlinear_spring
from barrierkit.model import (AffineDecomposition, ConstraintSet, ControlSet, SystemModel,
                              lie_derivative)
from barrierkit.tangency import (FaceSearchOptions, TangencyPoint, find_all_tangency_points,
                                 find_tangency_points, hamiltonian, min_max_lie,
                                 minimize_hamiltonian, project_to_face, usable_part)


def _sampling_twin(sysm: SystemModel) -> SystemModel:
    """Same dynamics without the affine decomposition, forcing the sampling path."""
    return SystemModel(sysm.n, sysm.m, sysm.dynamics, sysm.jacobian_x, None, sysm.name)


def test_hamiltonian_examples():
    sysm = academic().system
    for u in (-1.0, 0.0, 1.0):
        assert hamiltonian(sysm, [3, 1], [1, 0], [u]) == pytest.approx(0.0)
        assert hamiltonian(sysm, [0.4, -2], [0, 0], [u]) == 0.0
    assert hamiltonian(sysm, [0, 0], [-1, 0], [0.3]) == pytest.approx(-1.0)


def test_minimize_hamiltonian_examples():
    fx = academic()
    x = np.array([0.5, 0.7])
    res = minimize_hamiltonian(fx.system, fx.control, x, [-1, 0.5])
    assert np.allclose(res.u_star, [-1]) and not res.degenerate
    assert res.value == pytest.approx(-(1 - x[1] ** 2) - 0.5)
    sp = linear_spring()
    res = minimize_hamiltonian(sp.system, sp.control, [0.2, 0.1], [0.3, -0.8])
    assert np.allclose(res.u_star, [1])
    res = minimize_hamiltonian(sp.system, sp.control, [0.2, 0.1], [0.3, 0.0])
    assert res.degenerate and np.allclose(res.u_star, [0])


def test_minimize_hamiltonian_box():
    sysm = SystemModel(2, 2, lambda x, u: np.asarray(u, float) + 0 * np.asarray(x, float),
                       lambda x, u: np.zeros((2, 2)),
                       AffineDecomposition(lambda x: np.zeros(2), lambda x: np.eye(2)))
    box = ControlSet.box([-1, 0], [2, 3])
    res = minimize_hamiltonian(sysm, box, [0, 0], [1.0, -2.0])
    assert np.allclose(res.u_star, [-1, 3]) and not res.degenerate
    res = minimize_hamiltonian(sysm, box, [0, 0], [0.0, -2.0])
    assert np.allclose(res.u_star, [0.5, 3]) and res.degenerate


@pytest.mark.parametrize("fx", [academic(), linear_spring(), nonlinear_spring()], ids=lambda f: f.name)
def test_affine_path_equals_sampling_path(fx, rng):
    twin = _sampling_twin(fx.system)
    for _ in range(100):
        x = rng.uniform(-2, 2, 2)
        lam = rng.normal(size=2)
        exact = minimize_hamiltonian(fx.system, fx.control, x, lam)
        sampled = minimize_hamiltonian(twin, fx.control, x, lam)
        assert abs(exact.value - sampled.value) <= 1e-6
        assert sampled.value >= exact.value - 1e-10


def test_minimizer_value_bounds_samples(rng):
    fx = nonlinear_spring()
    for _ in range(50):
        x, lam = rng.uniform(-2, 2, 2), rng.normal(size=2)
        res = minimize_hamiltonian(fx.system, fx.control, x, lam)
        assert fx.control.contains(res.u_star)
        for u in fx.control.samples():
            assert res.value <= hamiltonian(fx.system, x, lam, u) + 1e-10


def test_non_affine_ball_m2():
    # f = (u1^2 - u2, u2): min over the disc of lam . f
    sysm = SystemModel(2, 2, lambda x, u: np.array([u[0] ** 2 - u[1], u[1]]),
                       lambda x, u: np.zeros((2, 2)))
    ctrl = ControlSet.unit_ball(2)
    res = minimize_hamiltonian(sysm, ctrl, [0, 0], [1.0, 0.0])
    # minimise u1^2 - u2 on the disc: u = (0, 1), value -1
    assert res.value == pytest.approx(-1.0, abs=1e-6)
    assert np.allclose(res.u_star, [0, 1], atol=1e-3)


def test_usable_part_examples():
    fx = academic()
    S = (fx.system, fx.constraints, fx.control)
    assert usable_part(*S, [3, 2])
    assert not usable_part(*S, [3, 0])
    sp = linear_spring()
    assert usable_part(sp.system, sp.constraints, sp.control, [1, -1])
    assert not usable_part(sp.system, sp.constraints, sp.control, [1, 0.5])
    with pytest.raises(ContractError):
        usable_part(*S, [0, 0])


def test_usable_part_matches_analytic_sign(rng):
    fx = academic()
    S = (fx.system, fx.constraints, fx.control)
    for x2 in rng.uniform(-3, 3, 100):
        for face_x1 in (-1.0, 3.0):
            expected = (1 - x2 ** 2) * (1 if face_x1 == 3.0 else -1) <= 1e-9
            assert usable_part(*S, [face_x1, x2]) == expected


def test_usable_part_monotone_in_eps():
    fx = academic()
    S = (fx.system, fx.constraints, fx.control)
    for x2 in np.linspace(0.9, 1.1, 21):
        flags = [usable_part(*S, [3.0, x2], eps) for eps in (1e-12, 1e-9, 1e-3, 0.5)]
        assert flags == sorted(flags)


def test_min_max_lie_at_box_corner():
    sysm = SystemModel(2, 2, lambda x, u: np.asarray(u, float), lambda x, u: np.zeros((2, 2)),
                       AffineDecomposition(lambda x: np.zeros(2), lambda x: np.eye(2)))
    cs = ConstraintSet(2, lambda x: np.array([x[0] - 1, x[1] - 1]),
                       lambda i, x: np.eye(2)[i])
    value, u, _, _ = min_max_lie(sysm, cs, ControlSet.box([-1, -1], [1, 1]), [1, 1], [0, 1])
    assert value == pytest.approx(-1.0)
    value, u, _, _ = min_max_lie(sysm, cs, ControlSet.unit_ball(2), [1, 1], [0, 1])
    assert value == pytest.approx(-1 / np.sqrt(2), abs=1e-6)


def _pts(fx, face=None):
    search = FaceSearchOptions.from_box(fx.search_box)
    S = (fx.system, fx.constraints, fx.control)
    if face is None:
        return find_all_tangency_points(*S, search)
    return find_tangency_points(*S, face, search)


def _zs(points):
    return sorted(tuple(np.round(p.z, 6)) for p in points)


def test_tangency_examples():
    assert _zs(_pts(academic(), 1)) == [(3.0, -1.0), (3.0, 1.0)]
    assert _zs(_pts(academic(), 0)) == [(-1.0, -1.0), (-1.0, 1.0)]
    (tp,) = _pts(linear_spring())
    assert np.allclose(tp.z, [1, 0], atol=1e-8)
    assert tp.i_star == 0 and tp.degenerate


@pytest.mark.parametrize("factory", [academic, academic_disconnected, linear_spring, nonlinear_spring])
def test_tangency_invariants(factory):
    fx = factory()
    S = (fx.system, fx.constraints, fx.control)
    samples = fx.control.samples()
    for tp in _pts(fx):
        g = fx.constraints.values(tp.z)
        assert all(abs(g[i]) < fx.constraints.activation_tol for i in tp.active)
        assert abs(lie_derivative(*S[:2], tp.i_star, tp.z, tp.u_star)) <= 1e-6
        for j in tp.active:
            assert lie_derivative(*S[:2], j, tp.z, tp.u_star) <= 1e-6
        worst = min(max(lie_derivative(*S[:2], j, tp.z, u) for j in tp.active) for u in samples)
        assert worst >= -1e-6


def test_tangency_point_round_trip():
    tp = _pts(academic(), 1)[0]
    d = tp.as_dict()
    assert d["face"] == 2 and d["i_star"] == 1
    back = TangencyPoint.from_dict(d)
    assert np.array_equal(back.z, tp.z) and back.active == tp.active


def test_empty_search_result():
    fx = linear_spring()
    search = FaceSearchOptions((0.0, 1.0), (2.0, 2.0))
    assert find_tangency_points(fx.system, fx.constraints, fx.control, 0, search) == []


def test_singular_face():
    cs = ConstraintSet(1, lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0]),
                       lambda i, x: np.array([2 * x[0], 2 * x[1]]))
    with pytest.raises(SingularFaceError) as err:
        project_to_face(cs, 0, [0.0, 0.0])
    assert np.allclose(err.value.point, [0, 0])
    assert np.allclose(np.linalg.norm(project_to_face(cs, 0, [0.3, 0.4])), 1.0)
