"""Rotations, real Wigner-D matrices, and real spherical harmonics.

Conventions used throughout the package (single source of truth):

* Points are column vectors (x, y, z); rotations act from the left.
* Euler angles are ZYZ: ``R(a, b, c) = Rz(a) @ Ry(b) @ Rz(c)``, all active.
* Real spherical harmonics Y^l are orthonormal on the unit sphere, carry no
  Condon-Shortley phase, and are ordered m = -l..l.  For l = 1 the components
  are proportional to (y, z, x), so D^1 relates to the Cartesian rotation
  matrix by that fixed permutation.
* Wigner-D matrices are real orthogonal and satisfy

      Y^l(R x) = D^l(R) Y^l(x)          (steerability, x on the unit sphere)
      D^l(R1 R2) = D^l(R1) D^l(R2)      (homomorphism)

The real D^l are built from the real so(3) generators: complex ladder
operators in the |l m> basis, conjugated by the fixed complex-to-real
unitary.  Rotations about z act in closed form on the (-m, +m) planes;
the middle Euler rotation about y is conjugated to a z-rotation with a
cached 90-degree x-rotation matrix per degree l.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import expm
from scipy.special import lpmv

# Degrees above this are refused by default: Gaussian-windowed kernels on the
# small grids this package targets cannot resolve them anyway.
L_CAP = 6

_UNIT_TOL = 1e-9


def _check_degree(l: int, l_cap: int = L_CAP) -> None:
    if not isinstance(l, (int, np.integer)) or l < 0:
        raise ValueError(f"degree must be a non-negative integer, got {l!r}")
    if l > l_cap:
        raise ValueError(f"degree {l} exceeds cap {l_cap}")


# ---------------------------------------------------------------------------
# rotations


def _rz(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def euler_zyz_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    return _rz(alpha) @ _ry(beta) @ _rz(gamma)


def matrix_to_euler_zyz(R: np.ndarray) -> tuple[float, float, float]:
    """Extract ZYZ angles; beta in [0, pi], gamma fixed to 0 at gimbal lock."""
    R = np.asarray(R, dtype=float)
    beta = math.atan2(math.hypot(R[0, 2], R[1, 2]), R[2, 2])
    if math.sin(beta) > 1e-12:
        alpha = math.atan2(R[1, 2], R[0, 2])
        gamma = math.atan2(R[2, 1], -R[2, 0])
    elif R[2, 2] > 0.0:  # beta ~ 0: pure z-rotation by alpha+gamma
        alpha = math.atan2(R[1, 0], R[0, 0])
        gamma = 0.0
    else:  # beta ~ pi: R = Rz(alpha) @ diag(-1, 1, -1)
        alpha = math.atan2(-R[1, 0], -R[0, 0])
        gamma = 0.0
    return alpha, beta, gamma


@dataclass(frozen=True, eq=False)
class Rotation:
    """A rotation in SO(3): ZYZ Euler angles plus the cached 3x3 matrix."""

    alpha: float
    beta: float
    gamma: float
    matrix: np.ndarray = field(repr=False)

    @classmethod
    def from_euler(cls, alpha: float, beta: float, gamma: float) -> "Rotation":
        return cls(float(alpha), float(beta), float(gamma),
                   euler_zyz_matrix(alpha, beta, gamma))

    @classmethod
    def from_matrix(cls, R: np.ndarray) -> "Rotation":
        R = np.asarray(R, dtype=float)
        if R.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {R.shape}")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-10 or np.linalg.det(R) < 0.0:
            raise ValueError("matrix is not a rotation (orthogonal, det +1)")
        a, b, c = matrix_to_euler_zyz(R)
        # keep the caller's matrix bit-for-bit (exact for grid rotations)
        return cls(a, b, c, R)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(0.0, 0.0, 0.0, np.eye(3))

    def compose(self, other: "Rotation") -> "Rotation":
        """Rotation equal to (self then applied after other): self @ other."""
        return Rotation.from_matrix(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation":
        return Rotation.from_matrix(self.matrix.T.copy())

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        """Rotate points of shape (..., 3)."""
        return np.asarray(xyz, dtype=float) @ self.matrix.T

    def __repr__(self) -> str:  # angles only; the matrix is derived state
        return (f"Rotation(alpha={self.alpha:.6f}, beta={self.beta:.6f}, "
                f"gamma={self.gamma:.6f})")


def random_rotation(rng: np.random.Generator) -> Rotation:
    """Haar-uniform rotation: alpha, gamma uniform, cos(beta) uniform."""
    alpha = rng.uniform(0.0, 2.0 * math.pi)
    beta = math.acos(1.0 - 2.0 * rng.uniform())
    gamma = rng.uniform(0.0, 2.0 * math.pi)
    return Rotation.from_euler(alpha, beta, gamma)


def octahedral_rotations() -> list[Rotation]:
    """The 24 rotations of the cube, with exact integer matrices.

    Generated by closure from the 90-degree rotations about z and x and
    returned in a deterministic (lexicographic) order, identity first.
    """
    gen_z = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=int)
    gen_x = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=int)
    seen = {tuple(np.eye(3, dtype=int).ravel())}
    frontier = [np.eye(3, dtype=int)]
    while frontier:
        R = frontier.pop()
        for G in (gen_z, gen_x):
            RG = G @ R
            key = tuple(RG.ravel())
            if key not in seen:
                seen.add(key)
                frontier.append(RG)
    assert len(seen) == 24
    keys = sorted(seen, reverse=True)  # identity (1,0,0,0,1,0,0,0,1) first
    return [Rotation.from_matrix(np.array(k, dtype=float).reshape(3, 3))
            for k in keys]


# ---------------------------------------------------------------------------
# real Wigner-D


@lru_cache(maxsize=None)
def _complex_to_real(l: int) -> np.ndarray:
    """Unitary U with Y_real = U @ Y_complex (Condon-Shortley complex basis)."""
    U = np.zeros((2 * l + 1, 2 * l + 1), dtype=complex)
    U[l, l] = 1.0
    for m in range(1, l + 1):
        U[l + m, l + m] = (-1) ** m / math.sqrt(2)
        U[l + m, l - m] = 1 / math.sqrt(2)
        U[l - m, l + m] = -1j * (-1) ** m / math.sqrt(2)
        U[l - m, l - m] = 1j / math.sqrt(2)
    return U


@lru_cache(maxsize=None)
def _real_generators(l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Real antisymmetric generators (Gx, Gy, Gz): D(R_n(t)) = expm(t G_n)."""
    dim = 2 * l + 1
    Jp = np.zeros((dim, dim), dtype=complex)
    Jm = np.zeros((dim, dim), dtype=complex)
    for m in range(-l, l):
        Jp[l + m + 1, l + m] = math.sqrt(l * (l + 1) - m * (m + 1))
    for m in range(-l + 1, l + 1):
        Jm[l + m - 1, l + m] = math.sqrt(l * (l + 1) - m * (m - 1))
    Jx = (Jp + Jm) / 2.0
    Jy = (Jp - Jm) / 2.0j
    Jz = np.diag(np.arange(-l, l + 1)).astype(complex)
    U = _complex_to_real(l)
    Gx = (1j * U @ Jx @ U.conj().T)
    Gy = (-1j * U @ Jy @ U.conj().T)
    Gz = (1j * U @ Jz @ U.conj().T)
    for G in (Gx, Gy, Gz):
        assert np.abs(G.imag).max() < 1e-12
    return Gx.real.copy(), Gy.real.copy(), Gz.real.copy()


@lru_cache(maxsize=None)
def _x90(l: int) -> np.ndarray:
    """D^l of the rotation by -90 degrees about x (conjugates Rz to Ry)."""
    Gx = _real_generators(l)[0]
    return expm(-0.5 * math.pi * Gx)


def _zrot(l: int, t: float) -> np.ndarray:
    """D^l(Rz(t)) in closed form: rotation by m*t in each (-m, +m) plane."""
    D = np.eye(2 * l + 1)
    for m in range(1, l + 1):
        c, s = math.cos(m * t), math.sin(m * t)
        D[l - m, l - m] = c
        D[l + m, l + m] = c
        D[l - m, l + m] = s
        D[l + m, l - m] = -s
    return D


def wigner_d(l: int, rotation: Rotation, l_cap: int = L_CAP) -> np.ndarray:
    """Real Wigner-D matrix of degree l, shape (2l+1, 2l+1).

    Uses Ry(b) = Rx(-90deg) Rz(b) Rx(90deg), so only z-rotations are needed
    at call time.
    """
    _check_degree(l, l_cap)
    if l == 0:
        return np.ones((1, 1))
    za = _zrot(l, rotation.alpha)
    zc = _zrot(l, rotation.gamma)
    if rotation.beta == 0.0:
        # skip the x-conjugation so the identity comes out exactly
        return za @ zc
    A = _x90(l)
    zb = _zrot(l, rotation.beta)
    return za @ (A @ zb @ A.T) @ zc


# ---------------------------------------------------------------------------
# real spherical harmonics


def real_spherical_harmonics(l: int, xyz: np.ndarray,
                             l_cap: int = L_CAP) -> np.ndarray:
    """Real orthonormal spherical harmonics Y^l on unit vectors.

    xyz has shape (..., 3) and must be normalized within 1e-9; the result has
    shape (..., 2l+1) with components ordered m = -l..l.  No Condon-Shortley
    phase: for l = 1 the result is sqrt(3/4pi) * (y, z, x).
    """
    _check_degree(l, l_cap)
    xyz = np.asarray(xyz, dtype=float)
    if xyz.shape[-1] != 3:
        raise ValueError(f"expected (..., 3) points, got shape {xyz.shape}")
    norms = np.linalg.norm(xyz, axis=-1)
    if norms.size == 0:
        return np.empty(xyz.shape[:-1] + (2 * l + 1,))
    if np.abs(norms - 1.0).max() > _UNIT_TOL:
        raise ValueError("points must lie on the unit sphere (within 1e-9)")
    ct = np.clip(xyz[..., 2], -1.0, 1.0)
    phi = np.arctan2(xyz[..., 1], xyz[..., 0])
    out = np.empty(xyz.shape[:-1] + (2 * l + 1,))
    for m in range(0, l + 1):
        # sqrt2 * (-1)^m cancels the Condon-Shortley phase carried by lpmv
        nrm = math.sqrt((2 * l + 1) / (4.0 * math.pi)
                        * math.factorial(l - m) / math.factorial(l + m))
        P = lpmv(m, l, ct)
        if m == 0:
            out[..., l] = nrm * P
        else:
            f = math.sqrt(2.0) * (-1) ** m * nrm
            out[..., l + m] = f * P * np.cos(m * phi)
            out[..., l - m] = f * P * np.sin(m * phi)
    return out


# Fixed permutation with D^1(R) = PERM_YZX @ R @ PERM_YZX.T
PERM_YZX = np.array([[0.0, 1.0, 0.0],
                     [0.0, 0.0, 1.0],
                     [1.0, 0.0, 0.0]])
