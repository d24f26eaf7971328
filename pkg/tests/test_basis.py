"""Steerable kernel basis: intertwiners, change of basis, sampled kernels.

Oracles: the tensor-product block-diagonalization residual, explicit
symmetric/antisymmetric subspaces for j=l=1, an independent grid-rotation
loop for the octahedral kernel constraint, and the brute-force completeness
count on radial shells.
"""

import numpy as np
import pytest

from st3d import basis, so3

EQ13_TOL = 1e-8
Q_ORTH_TOL = 1e-9
KERNEL_CONSTRAINT_TOL = 1e-9
UNIT_NORM_TOL = 1e-12


def block_diag_wigner(degrees, r):
    mats = [so3.wigner_d(J, r) for J in degrees]
    n = sum(m.shape[0] for m in mats)
    out = np.zeros((n, n))
    i = 0
    for m in mats:
        out[i:i + m.shape[0], i:i + m.shape[0]] = m
        i += m.shape[0]
    return out


def rotate_grid_kernel(kern, rot):
    """Oracle: kappa(R x) sampled by explicit per-voxel index lookup."""
    s = kern.shape[-1]
    h = s // 2
    M = np.rint(rot.matrix).astype(int)
    out = np.zeros_like(kern)
    for ix in range(s):
        for iy in range(s):
            for iz in range(s):
                sx, sy, sz = M @ np.array([ix - h, iy - h, iz - h])
                out[..., ix, iy, iz] = kern[..., sx + h, sy + h, sz + h]
    return out


# ---------------------------------------------------------------------------
# intertwiners and change of basis


def test_intertwiner_j1l1_curl_block():
    q = basis.solve_intertwiner(1, 1, 1)
    assert q.shape == (3, 9)
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3))
    sym, antisym = (A + A.T) / 2, (A - A.T) / 2
    assert np.abs(q @ sym.ravel()).max() < 1e-9
    image = q @ antisym.ravel()
    assert np.linalg.norm(image) > 0.1
    # bijective on the antisymmetric subspace: q^T inverts q there
    back = (q.T @ image).reshape(3, 3)
    assert np.abs(back - antisym).max() < 1e-9


def test_intertwiner_j1l1_trace_block():
    q = basis.solve_intertwiner(1, 1, 0)
    expected = np.eye(3).ravel() / np.sqrt(3.0)
    assert np.abs(q[0] - expected).max() < 1e-9  # sign fixed positive


def test_intertwiner_rejects_bad_J():
    with pytest.raises(ValueError):
        basis.solve_intertwiner(2, 1, 0)
    with pytest.raises(ValueError):
        basis.solve_intertwiner(2, 1, 4)


def test_intertwiner_rows_orthonormal():
    for (j, l) in ((1, 1), (2, 1), (2, 2), (3, 2)):
        for J in range(abs(j - l), j + l + 1):
            q = basis.solve_intertwiner(j, l, J)
            assert np.abs(q @ q.T - np.eye(2 * J + 1)).max() < 1e-10


def test_intertwiner_steers():
    rng = np.random.default_rng(1)
    for (j, l, J) in ((1, 1, 2), (2, 1, 1), (2, 2, 3)):
        q = basis.solve_intertwiner(j, l, J)
        for _ in range(5):
            r = so3.random_rotation(rng)
            X = np.kron(so3.wigner_d(j, r), so3.wigner_d(l, r))
            assert np.abs(q @ X - so3.wigner_d(J, r) @ q).max() < 1e-10


def test_change_of_basis_block_diagonalizes():
    rng = np.random.default_rng(2)
    for j in range(0, 4):
        for l in range(0, 4):
            cob = basis.compute_change_of_basis(j, l)
            dim = (2 * j + 1) * (2 * l + 1)
            assert np.abs(cob.matrix @ cob.matrix.T
                          - np.eye(dim)).max() < Q_ORTH_TOL
            for _ in range(3):
                r = so3.random_rotation(rng)
                X = np.kron(so3.wigner_d(j, r), so3.wigner_d(l, r))
                bd = block_diag_wigner(cob.degrees, r)
                assert np.abs(cob.matrix @ X @ cob.matrix.T
                              - bd).max() < EQ13_TOL


def test_change_of_basis_deterministic():
    basis.compute_change_of_basis.cache_clear()
    a = basis.compute_change_of_basis(2, 1).matrix.copy()
    basis.compute_change_of_basis.cache_clear()
    b = basis.compute_change_of_basis(2, 1).matrix
    assert np.array_equal(a, b)


def test_block_lookup():
    cob = basis.compute_change_of_basis(2, 1)
    assert cob.degrees == [1, 2, 3]
    assert cob.block(2).shape == (5, 15)
    with pytest.raises(ValueError):
        cob.block(0)


# ---------------------------------------------------------------------------
# bandlimit rule


def test_default_bandlimit_values():
    assert basis.default_bandlimit(0, 2, 2) == 0
    assert basis.default_bandlimit(2, 3, 3) == 4
    assert basis.default_bandlimit(5, 1, 1) == 2
    assert basis.no_bandlimit(0, 3, 3) == 6


# ---------------------------------------------------------------------------
# sampled kernels


def test_basis_counts():
    # scalar-scalar on s=5: one isotropic kernel per radial window
    assert basis.sample_basis_kernels(0, 0, 5).count == 3
    # vector-from-scalar: J=1 needs m >= 1 under the 2m rule
    sb = basis.sample_basis_kernels(1, 0, 5)
    assert sb.count == 2 and sb.index == ((1, 1), (1, 2))
    # full vector-vector set
    sb = basis.sample_basis_kernels(1, 1, 5)
    assert sb.count == 7
    # 1x1x1 grid: only the pointwise identity survives
    sb = basis.sample_basis_kernels(1, 1, 1)
    assert sb.count == 1 and sb.index == ((0, 0),)


def test_basis_count_bound():
    for (j, l, s) in ((1, 1, 5), (2, 1, 5), (3, 3, 5), (2, 2, 7), (0, 3, 9)):
        sb = basis.sample_basis_kernels(j, l, s)
        assert sb.count <= (s // 2 + 1) * (2 * min(j, l) + 1)
        assert sb.kernels.shape == (sb.count, 2 * j + 1, 2 * l + 1, s, s, s)
        assert sb.kernels.dtype == np.float64


def test_basis_unit_norm():
    sb = basis.sample_basis_kernels(2, 1, 5)
    for k in sb.kernels:
        assert abs(np.linalg.norm(k) - 1.0) < UNIT_NORM_TOL


def test_basis_rejects_bad_args():
    with pytest.raises(ValueError):
        basis.sample_basis_kernels(1, 1, 4)  # even size
    with pytest.raises(ValueError):
        basis.sample_basis_kernels(1, 1, 5, sigma=0.0)
    with pytest.raises(ValueError):
        basis.sample_basis_kernels(1, 1, 5, rule="cubic")


def test_sampled_kernels_satisfy_constraint_octahedral():
    octa = so3.octahedral_rotations()
    for (j, l) in ((0, 0), (1, 0), (1, 1), (2, 1)):
        sb = basis.sample_basis_kernels(j, l, 5)
        for r in octa:
            Dj, Dl = so3.wigner_d(j, r), so3.wigner_d(l, r)
            for k in sb.kernels:
                lhs = rotate_grid_kernel(k, r)
                rhs = np.einsum("ab,bcxyz,dc->adxyz", Dj, k, Dl)
                assert np.abs(lhs - rhs).max() < KERNEL_CONSTRAINT_TOL


def test_analytic_kernel_steers_continuously():
    rng = np.random.default_rng(3)
    pts = 2.0 * rng.normal(size=(30, 3))
    for (j, l) in ((1, 1), (2, 1)):
        sb = basis.sample_basis_kernels(j, l, 5)
        for _ in range(5):
            r = so3.random_rotation(rng)
            Dj, Dl = so3.wigner_d(j, r), so3.wigner_d(l, r)
            for (J, m) in sb.index:
                lhs = basis.kernel_values(j, l, J, m, basis.DEFAULT_SIGMA,
                                          r.apply(pts))
                k0 = basis.kernel_values(j, l, J, m, basis.DEFAULT_SIGMA, pts)
                rhs = np.einsum("ab,nbc,dc->nad", Dj, k0, Dl)
                assert np.abs(lhs - rhs).max() < KERNEL_CONSTRAINT_TOL


def test_center_voxel_values():
    origin = np.zeros((1, 3))
    # J = 0 at the origin: window(0) = 1 times unvec(q0^T Y00), which is
    # the identity over sqrt(3) scaled by the constant harmonic
    v0 = basis.kernel_values(1, 1, 0, 0, 0.6, origin)
    expected = np.eye(3) / np.sqrt(3.0) / (2.0 * np.sqrt(np.pi))
    assert np.abs(v0[0] - expected).max() < 1e-12
    # J > 0 vanishes at the origin
    v2 = basis.kernel_values(1, 1, 2, 0, 0.6, origin)
    assert np.abs(v2).max() == 0.0


def test_trace_kernels_are_identity_multiples():
    sb = basis.sample_basis_kernels(1, 1, 5)
    for (J, m), k in zip(sb.index, sb.kernels):
        if J != 0:
            continue
        for ix, iy, iz in np.ndindex(5, 5, 5):
            mat = k[:, :, ix, iy, iz]
            assert np.abs(mat - mat[0, 0] * np.eye(3)).max() < 1e-12


def test_basis_orthogonality():
    # cross-J orthogonality is pointwise exact; radial windows five apart
    # overlap below 1e-6 (adjacent windows overlap substantially, by design)
    sb = basis.sample_basis_kernels(1, 1, 13)
    gram = np.einsum("aijxyz,bijxyz->ab", sb.kernels, sb.kernels)
    for ai in range(sb.count):
        for bi in range(ai + 1, sb.count):
            Ja, ma = sb.index[ai]
            Jb, mb = sb.index[bi]
            if Ja != Jb:
                assert abs(gram[ai, bi]) < 1e-9
            elif abs(ma - mb) >= 5:
                assert abs(gram[ai, bi]) < 1e-6


# ---------------------------------------------------------------------------
# completeness


def shell_points(radius_sq):
    h = 3
    pts = [p for p in (np.array(q) - h for q in np.ndindex(7, 7, 7))
           if p @ p == radius_sq]
    return np.array(pts, dtype=float)


def test_completeness_small_cases():
    shell = shell_points(2)
    assert len(shell) == 12
    assert basis.verify_completeness(0, 0, shell, 2) == 1
    assert basis.verify_completeness(1, 0, shell, 2) == 1
    assert basis.verify_completeness(1, 1, shell, 2) == 3
    # cap below the triangle range prunes admitted degrees
    assert basis.verify_completeness(1, 1, shell, 1) == 2
    assert basis.verify_completeness(2, 1, shell, 0) == 0


def test_completeness_rejects_bad_shell():
    with pytest.raises(ValueError):
        basis.verify_completeness(1, 1, np.zeros((1, 3)), 2)
    with pytest.raises(ValueError):
        basis.verify_completeness(1, 1, np.array([[1.0, 0, 0], [2.0, 0, 0]]), 2)
