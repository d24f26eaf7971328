"""Rotation parameterization, real Wigner-D, and real spherical harmonics.

Oracles: closed-form low-degree harmonics, the Cartesian rotation matrix
(via the fixed (y,z,x) permutation), exact product quadrature on the sphere,
and Monte Carlo moments of the Haar measure.
"""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from st3d import so3

HOMOMORPHISM_TOL = 1e-9
ORTHOGONALITY_TOL = 1e-10
STEERABILITY_TOL = 1e-12
COMPOSE_TOL = 1e-12

angles = st.floats(min_value=-2 * math.pi, max_value=2 * math.pi,
                   allow_nan=False, allow_infinity=False)


def sphere_points(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Rotation


@settings(max_examples=50, deadline=None)
@given(angles, angles, angles)
def test_rotation_matrix_is_orthogonal(a, b, c):
    R = so3.Rotation.from_euler(a, b, c).matrix
    assert np.abs(R @ R.T - np.eye(3)).max() < COMPOSE_TOL
    assert abs(np.linalg.det(R) - 1.0) < COMPOSE_TOL


@settings(max_examples=50, deadline=None)
@given(angles, angles, angles, angles, angles, angles)
def test_compose_matches_matrix_product(a1, b1, c1, a2, b2, c2):
    r1 = so3.Rotation.from_euler(a1, b1, c1)
    r2 = so3.Rotation.from_euler(a2, b2, c2)
    r12 = r1.compose(r2)
    assert np.abs(r12.matrix - r1.matrix @ r2.matrix).max() < COMPOSE_TOL
    # the cached matrix agrees with the recomposed ZYZ angles
    recomposed = so3.euler_zyz_matrix(r12.alpha, r12.beta, r12.gamma)
    assert np.abs(r12.matrix - recomposed).max() < COMPOSE_TOL


def test_inverse():
    rng = np.random.default_rng(3)
    for _ in range(10):
        r = so3.random_rotation(rng)
        assert np.abs(r.compose(r.inverse()).matrix - np.eye(3)).max() < COMPOSE_TOL


def test_from_matrix_rejects_non_rotation():
    with pytest.raises(ValueError):
        so3.Rotation.from_matrix(np.diag([1.0, 1.0, -1.0]))  # det -1
    with pytest.raises(ValueError):
        so3.Rotation.from_matrix(2.0 * np.eye(3))


def test_gimbal_cases_round_trip():
    for base in (np.eye(3), np.diag([-1.0, 1.0, -1.0])):  # beta = 0 and pi
        for t in (0.0, 0.3, -2.0):
            R = so3.euler_zyz_matrix(t, 0.0, 0.0) @ base
            r = so3.Rotation.from_matrix(R)
            assert np.abs(so3.euler_zyz_matrix(r.alpha, r.beta, r.gamma)
                          - R).max() < COMPOSE_TOL


# ---------------------------------------------------------------------------
# Haar sampling


def test_random_rotation_golden_seed0():
    # frozen at first implementation; guards the sampling order and formulas
    expected = np.array([
        [-0.09726553, 0.80965278, -0.5787934],
        [-0.50360257, -0.5416446, -0.67305689],
        [-0.8584427, 0.22601661, 0.46042657],
    ])
    r = so3.random_rotation(np.random.default_rng(0))
    assert np.abs(r.matrix - expected).max() < 1e-8


def test_haar_moments():
    # Haar oracle: E[R] = 0, E[tr R] = 0 and E[(tr R)^2] = 1 (character
    # orthogonality: the standard rep contains no trivial component and is
    # irreducible).
    rng = np.random.default_rng(7)
    n = 100_000
    alpha = rng.uniform(0.0, 2.0 * math.pi, n)
    beta = np.arccos(1.0 - 2.0 * rng.uniform(0.0, 1.0, n))
    gamma = rng.uniform(0.0, 2.0 * math.pi, n)
    mats = np.stack([so3.euler_zyz_matrix(a, b, c)
                     for a, b, c in zip(alpha, beta, gamma)])
    assert np.abs(mats.mean(axis=0)).max() < 0.02
    traces = np.trace(mats, axis1=1, axis2=2)
    assert abs(traces.mean()) < 0.02
    assert abs((traces ** 2).mean() - 1.0) < 0.02


def test_random_rotation_uses_generator():
    rng = np.random.default_rng(11)
    r1, r2 = so3.random_rotation(rng), so3.random_rotation(rng)
    assert np.abs(r1.matrix - r2.matrix).max() > 1e-3  # state advances


# ---------------------------------------------------------------------------
# octahedral group


def test_octahedral_group():
    octa = so3.octahedral_rotations()
    assert len(octa) == 24
    keys = {tuple(m.ravel()) for m in (o.matrix for o in octa)}
    assert len(keys) == 24
    assert np.array_equal(octa[0].matrix, np.eye(3))
    for o in octa:
        assert np.array_equal(o.matrix, np.rint(o.matrix))
        assert set(np.unique(o.matrix)) <= {-1.0, 0.0, 1.0}
    for a, b in itertools.product(octa, repeat=2):
        assert tuple((a.matrix @ b.matrix).ravel()) in keys


def test_octahedral_deterministic_order():
    a = so3.octahedral_rotations()
    b = so3.octahedral_rotations()
    for x, y in zip(a, b):
        assert np.array_equal(x.matrix, y.matrix)


# ---------------------------------------------------------------------------
# Wigner-D


def test_wigner_d0_is_one():
    r = so3.random_rotation(np.random.default_rng(0))
    assert np.array_equal(so3.wigner_d(0, r), np.ones((1, 1)))


def test_wigner_d1_is_permuted_rotation_matrix():
    rng = np.random.default_rng(1)
    P = so3.PERM_YZX
    for _ in range(20):
        r = so3.random_rotation(rng)
        assert np.abs(so3.wigner_d(1, r) - P @ r.matrix @ P.T).max() < 1e-13


def test_wigner_orthogonality():
    rng = np.random.default_rng(2)
    for l in range(so3.L_CAP + 1):
        for _ in range(10):
            D = so3.wigner_d(l, so3.random_rotation(rng))
            assert np.abs(D @ D.T - np.eye(2 * l + 1)).max() < ORTHOGONALITY_TOL


def test_wigner_homomorphism():
    rng = np.random.default_rng(3)
    for l in range(5):
        for _ in range(25):
            r1, r2 = so3.random_rotation(rng), so3.random_rotation(rng)
            lhs = so3.wigner_d(l, r1.compose(r2))
            rhs = so3.wigner_d(l, r1) @ so3.wigner_d(l, r2)
            assert np.abs(lhs - rhs).max() < HOMOMORPHISM_TOL


def test_wigner_degree_errors():
    r = so3.Rotation.identity()
    with pytest.raises(ValueError):
        so3.wigner_d(-1, r)
    with pytest.raises(ValueError):
        so3.wigner_d(so3.L_CAP + 1, r)
    assert so3.wigner_d(so3.L_CAP + 1, r, l_cap=so3.L_CAP + 1).shape == (15, 15)


# ---------------------------------------------------------------------------
# real spherical harmonics


def test_sph_l0_constant():
    pts = sphere_points(np.random.default_rng(4), 50)
    vals = so3.real_spherical_harmonics(0, pts)
    assert np.abs(vals - 1.0 / (2.0 * math.sqrt(math.pi))).max() < 1e-14


def test_sph_l1_closed_form():
    pts = sphere_points(np.random.default_rng(5), 50)
    vals = so3.real_spherical_harmonics(1, pts)
    expected = math.sqrt(3.0 / (4.0 * math.pi)) * pts[:, [1, 2, 0]]  # (y,z,x)
    assert np.abs(vals - expected).max() < 1e-13


def test_sph_l2_closed_form():
    pts = sphere_points(np.random.default_rng(6), 50)
    x, y, z = pts.T
    vals = so3.real_spherical_harmonics(2, pts)
    c = math.sqrt(15.0 / (4.0 * math.pi))
    expected = np.stack([
        c * x * y,
        c * y * z,
        math.sqrt(5.0 / (16.0 * math.pi)) * (3.0 * z ** 2 - 1.0),
        c * x * z,
        0.5 * c * (x ** 2 - y ** 2),
    ], axis=1)
    assert np.abs(vals - expected).max() < 1e-13


def test_sph_orthonormality_exact_quadrature():
    # Gauss-Legendre in cos(theta) x uniform phi integrates products of
    # harmonics up to degree 2*L_CAP exactly, so the Gram matrix must be the
    # identity to machine precision.
    n = 2 * so3.L_CAP + 2
    ct, wt = np.polynomial.legendre.leggauss(n)
    phi = 2.0 * math.pi * np.arange(4 * so3.L_CAP + 4) / (4 * so3.L_CAP + 4)
    st_ = np.sqrt(1.0 - ct ** 2)
    pts = np.stack([np.outer(st_, np.cos(phi)),
                    np.outer(st_, np.sin(phi)),
                    np.outer(ct, np.ones_like(phi))], axis=-1).reshape(-1, 3)
    w = (np.outer(wt, np.ones_like(phi)) * (2.0 * math.pi / phi.size)).ravel()
    ys = np.concatenate([so3.real_spherical_harmonics(l, pts)
                         for l in range(so3.L_CAP + 1)], axis=1)
    gram = (ys * w[:, None]).T @ ys
    assert np.abs(gram - np.eye(ys.shape[1])).max() < 1e-12


def test_sph_steerability():
    rng = np.random.default_rng(8)
    for l in range(so3.L_CAP + 1):
        for _ in range(10):
            r = so3.random_rotation(rng)
            pts = sphere_points(rng, 20)
            lhs = so3.real_spherical_harmonics(l, r.apply(pts))
            rhs = so3.real_spherical_harmonics(l, pts) @ so3.wigner_d(l, r).T
            assert np.abs(lhs - rhs).max() < STEERABILITY_TOL


def test_sph_steerability_octahedral():
    octa = so3.octahedral_rotations()
    pts = sphere_points(np.random.default_rng(9), 20)
    for l in (1, 2, 3):
        for r in octa:
            lhs = so3.real_spherical_harmonics(l, r.apply(pts))
            rhs = so3.real_spherical_harmonics(l, pts) @ so3.wigner_d(l, r).T
            assert np.abs(lhs - rhs).max() < STEERABILITY_TOL


def test_sph_rejects_non_unit():
    with pytest.raises(ValueError):
        so3.real_spherical_harmonics(1, np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ValueError):
        so3.real_spherical_harmonics(1, np.array([0.5, 0.0, 0.0]))
    with pytest.raises(ValueError):
        so3.real_spherical_harmonics(1, np.zeros((2, 4)))


def test_sph_degree_cap():
    p = np.array([0.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        so3.real_spherical_harmonics(so3.L_CAP + 1, p)
    out = so3.real_spherical_harmonics(so3.L_CAP + 1, p, l_cap=so3.L_CAP + 1)
    assert out.shape == (15,)
