"""Projector, retraction, and curvature-lift checks for the manifold module."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectralr.spectrahedron import (
    BasePointMismatchError,
    inner_product,
    is_horizontal,
    is_tangent,
    manifold_point,
    normalized_point,
    project_horizontal,
    project_tangent,
    random_horizontal,
    random_point,
    retract,
    riemannian_gradient,
    riemannian_hess_vec,
)


def rng(seed=0):
    return np.random.default_rng(seed)


shapes = st.tuples(st.integers(2, 8), st.integers(1, 4)).filter(lambda s: s[0] >= s[1])


class TestPointValidation:
    def test_unit_norm_enforced(self):
        with pytest.raises(ValueError):
            manifold_point(np.ones((3, 2)))

    def test_shape_order_enforced(self):
        u = np.ones((2, 3)) / np.sqrt(6)
        with pytest.raises(ValueError):
            manifold_point(u)

    def test_normalized_point_lands_on_manifold(self):
        p = normalized_point(rng().standard_normal((5, 2)))
        assert np.linalg.norm(p.u) == pytest.approx(1.0, abs=1e-14)


class TestProjectTangent:
    def test_annihilates_normal_direction(self):
        p = random_point(6, 2, rng(1))
        tv = project_tangent(p, p.u.copy())
        assert np.allclose(tv.xi, 0.0, atol=1e-14)

    def test_identity_on_tangent_vectors(self):
        p = random_point(6, 2, rng(2))
        z = rng(3).standard_normal((6, 2))
        z -= np.tensordot(z, p.u, axes=2) * p.u
        tv = project_tangent(p, z)
        assert np.allclose(tv.xi, z, atol=1e-14)

    def test_hand_example_d2_r1(self):
        # U = (1,0)^T, Z = (3,4)^T: trace(Z^T U) = 3, so Z - 3U = (0,4)^T
        p = manifold_point(np.array([[1.0], [0.0]]))
        tv = project_tangent(p, np.array([[3.0], [4.0]]))
        assert np.allclose(tv.xi, [[0.0], [4.0]])

    def test_shape_mismatch_raises(self):
        p = random_point(6, 2, rng(4))
        with pytest.raises(ValueError):
            project_tangent(p, np.ones((5, 2)))

    @settings(deadline=None, max_examples=25)
    @given(shapes, st.integers(0, 10_000))
    def test_idempotent_and_self_adjoint(self, shape, seed):
        d, r = shape
        g = rng(seed)
        p = random_point(d, r, g)
        a, b = g.standard_normal((2, d, r))
        pa = project_tangent(p, a)
        scale = max(1.0, np.linalg.norm(a))
        assert np.allclose(project_tangent(p, pa.xi).xi, pa.xi, atol=1e-12 * scale)
        lhs = np.tensordot(pa.xi, b, axes=2)
        rhs = np.tensordot(a, project_tangent(p, b).xi, axes=2)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def dense_lyapunov_solve(gram, rhs):
    # independent oracle: vectorize (G L + L G = R) as a Kronecker system
    r = gram.shape[0]
    eye = np.eye(r)
    k = np.kron(eye, gram) + np.kron(gram.T, eye)
    return np.linalg.solve(k, rhs.reshape(-1, order="F")).reshape((r, r), order="F")


class TestProjectHorizontal:
    def test_horizontal_input_unchanged(self):
        p = random_point(6, 2, rng(5))
        tv = random_horizontal(p, rng(6))
        again = project_horizontal(p, tv)
        assert np.allclose(again.xi, tv.xi, atol=1e-12)

    def test_rank_one_is_identity(self):
        # the only skew 1x1 matrix is zero, so the vertical space is trivial
        p = random_point(7, 1, rng(7))
        tv = project_tangent(p, rng(8).standard_normal((7, 1)))
        assert np.allclose(project_horizontal(p, tv).xi, tv.xi, atol=1e-14)

    def test_against_dense_lyapunov_oracle(self):
        g = rng(9)
        p = random_point(5, 2, g)
        tv = project_tangent(p, g.standard_normal((5, 2)))
        got = project_horizontal(p, tv)
        skew = p.u.T @ tv.xi - tv.xi.T @ p.u
        lam = dense_lyapunov_solve(p.u.T @ p.u, skew)
        assert np.allclose(got.xi, tv.xi - p.u @ lam, atol=1e-10)
        sym = p.u.T @ got.xi
        assert np.allclose(sym, sym.T, atol=1e-10)
        for _ in range(5):
            a = g.standard_normal((2, 2))
            vert = p.u @ (a - a.T)
            assert np.tensordot(got.xi, vert, axes=2) == pytest.approx(0.0, abs=1e-10)

    @settings(deadline=None, max_examples=25)
    @given(shapes, st.integers(0, 10_000))
    def test_idempotent(self, shape, seed):
        d, r = shape
        g = rng(seed)
        p = random_point(d, r, g)
        tv = project_tangent(p, g.standard_normal((d, r)))
        once = project_horizontal(p, tv)
        twice = project_horizontal(p, once)
        assert np.allclose(twice.xi, once.xi, atol=1e-10 * max(1.0, once.norm))

    @settings(deadline=None, max_examples=25)
    @given(shapes, st.integers(0, 10_000))
    def test_orthogonal_to_vertical_space(self, shape, seed):
        d, r = shape
        g = rng(seed)
        p = random_point(d, r, g)
        h = random_horizontal(p, g, unit=False)
        a = g.standard_normal((r, r))
        vert = p.u @ (a - a.T)
        scale = max(1.0, h.norm * np.linalg.norm(vert))
        assert abs(np.tensordot(h.xi, vert, axes=2)) <= 1e-10 * scale


class TestRetract:
    def test_zero_direction_is_identity(self):
        p = random_point(5, 3, rng(10))
        tv = project_tangent(p, np.zeros((5, 3)))
        q = retract(p, tv, 1.0)
        assert np.allclose(q.u, p.u)

    def test_first_order_step_scaling(self):
        p = random_point(5, 2, rng(11))
        tv = random_horizontal(p, rng(12))
        for h in (1e-4, 1e-5):
            moved = retract(p, tv, h)
            ratio = np.linalg.norm(moved.u - p.u) / h
            assert ratio == pytest.approx(tv.norm, rel=1e-6)

    def test_hand_example(self):
        p = manifold_point(np.array([[1.0], [0.0]]))
        tv = project_tangent(p, np.array([[0.0], [1.0]]))
        q = retract(p, tv, 1.0)
        assert np.allclose(q.u, np.array([[1.0], [1.0]]) / np.sqrt(2.0))

    @settings(deadline=None, max_examples=25)
    @given(shapes, st.integers(0, 10_000), st.floats(1e-3, 10.0))
    def test_unit_norm_output(self, shape, seed, step):
        d, r = shape
        g = rng(seed)
        p = random_point(d, r, g)
        tv = project_tangent(p, g.standard_normal((d, r)))
        q = retract(p, tv, step)
        assert np.linalg.norm(q.u) == pytest.approx(1.0, abs=5e-15)


def quad_value(a, u):
    return float(np.tensordot(u, a @ u, axes=2))


class TestRiemannianDerivatives:
    def test_gradient_of_normal_component_vanishes(self):
        p = random_point(6, 2, rng(13))
        tv = riemannian_gradient(p, 3.7 * p.u)
        assert np.allclose(tv.xi, 0.0, atol=1e-14)

    def test_gradient_identity_on_tangent(self):
        p = random_point(6, 2, rng(14))
        z = random_horizontal(p, rng(15)).xi
        assert np.allclose(riemannian_gradient(p, z).xi, z, atol=1e-13)

    def test_gradient_matches_finite_differences(self):
        g = rng(16)
        d, r = 7, 2
        a = g.standard_normal((d, d))
        a = a + a.T
        p = random_point(d, r, g)
        grad = riemannian_gradient(p, 2.0 * a @ p.u)
        for _ in range(5):
            xi = random_horizontal(p, g)
            best = np.inf
            for h in (1e-4, 1e-5, 1e-6):
                fd = (quad_value(a, retract(p, xi, h).u)
                      - quad_value(a, retract(p, -1.0 * xi, h).u)) / (2 * h)
                best = min(best, abs(fd - inner_product(grad, xi))
                           / max(1e-12, abs(fd)))
            assert best < 1e-6

    def test_hess_vec_zero_direction(self):
        g = rng(17)
        p = random_point(6, 2, g)
        a = g.standard_normal((6, 6))
        a = a + a.T
        z = project_horizontal(p, project_tangent(p, np.zeros((6, 2))))
        hv = riemannian_hess_vec(p, 2 * a @ p.u, np.zeros((6, 2)), z)
        assert np.allclose(hv.xi, 0.0, atol=1e-14)

    def test_hess_vec_symmetry(self):
        g = rng(18)
        d, r = 7, 3
        a = g.standard_normal((d, d))
        a = a + a.T
        p = random_point(d, r, g)
        eg = 2 * a @ p.u
        for _ in range(5):
            xi = random_horizontal(p, g)
            eta = random_horizontal(p, g)
            h_xi = riemannian_hess_vec(p, eg, 2 * a @ xi.xi, xi)
            h_eta = riemannian_hess_vec(p, eg, 2 * a @ eta.xi, eta)
            lhs = inner_product(h_xi, eta)
            rhs = inner_product(xi, h_eta)
            assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-10)

    def test_hess_vec_matches_gradient_differences(self):
        g = rng(19)
        d, r = 6, 2
        a = g.standard_normal((d, d))
        a = a + a.T
        p = random_point(d, r, g)
        eg = 2 * a @ p.u
        for _ in range(4):
            xi = random_horizontal(p, g)
            hv = riemannian_hess_vec(p, eg, 2 * a @ xi.xi, xi)
            best = np.inf
            for h in (1e-5, 1e-6):
                up = retract(p, xi, h)
                um = retract(p, -1.0 * xi, h)
                fd = (riemannian_gradient(up, 2 * a @ up.u).xi
                      - riemannian_gradient(um, 2 * a @ um.u).xi) / (2 * h)
                proj = project_horizontal(p, project_tangent(p, fd))
                best = min(best, np.linalg.norm(proj.xi - hv.xi)
                           / max(1e-12, hv.norm))
            assert best < 1e-5

    def test_hess_vec_output_horizontal(self):
        g = rng(20)
        p = random_point(8, 3, g)
        a = g.standard_normal((8, 8))
        a = a + a.T
        xi = random_horizontal(p, g)
        hv = riemannian_hess_vec(p, 2 * a @ p.u, 2 * a @ xi.xi, xi)
        assert is_horizontal(p, hv)


class TestInnerProduct:
    def test_self_inner_is_squared_norm(self):
        p = random_point(5, 2, rng(21))
        tv = project_tangent(p, rng(22).standard_normal((5, 2)))
        assert inner_product(tv, tv) == pytest.approx(tv.norm ** 2, rel=1e-12)

    def test_symmetry(self):
        g = rng(23)
        p = random_point(5, 2, g)
        a = project_tangent(p, g.standard_normal((5, 2)))
        b = project_tangent(p, g.standard_normal((5, 2)))
        assert inner_product(a, b) == pytest.approx(inner_product(b, a), rel=1e-14)

    def test_hand_sum_3x2(self):
        p = random_point(3, 2, rng(24))
        x = np.arange(6.0).reshape(3, 2)
        y = np.array([[2.0, -1.0], [0.5, 3.0], [1.0, 1.0]])
        a = project_tangent(p, x)
        b = project_tangent(p, y)
        manual = sum(a.xi[i, j] * b.xi[i, j] for i in range(3) for j in range(2))
        assert inner_product(a, b) == pytest.approx(manual, rel=1e-12)

    def test_mixed_base_points_rejected(self):
        g = rng(25)
        p1 = random_point(5, 2, g)
        p2 = random_point(5, 2, g)
        a = project_tangent(p1, g.standard_normal((5, 2)))
        b = project_tangent(p2, g.standard_normal((5, 2)))
        with pytest.raises(BasePointMismatchError):
            inner_product(a, b)
        with pytest.raises(BasePointMismatchError):
            _ = a + b
        with pytest.raises(BasePointMismatchError):
            retract(p2, a, 0.5)


def test_is_tangent_flags():
    g = rng(26)
    p = random_point(5, 2, g)
    assert is_tangent(p, project_tangent(p, g.standard_normal((5, 2))))
