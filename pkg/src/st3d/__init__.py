"""SE(3)-equivariant steerable CNNs on voxel grids, in plain numpy.

Analytic steerable kernel bases for all pairs of irreducible SO(3) field
types, equivariant layers (convolution, gated nonlinearities, batch norm,
anti-aliased downsampling), a minimal reverse-mode tape, and verification
suites that check the equivariance claims numerically at desk scale.
"""

from .so3 import (
    L_CAP,
    PERM_YZX,
    Rotation,
    octahedral_rotations,
    random_rotation,
    real_spherical_harmonics,
    wigner_d,
)

__all__ = [
    "L_CAP",
    "PERM_YZX",
    "Rotation",
    "octahedral_rotations",
    "random_rotation",
    "real_spherical_harmonics",
    "wigner_d",
]

__version__ = "0.1.0"
