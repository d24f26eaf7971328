"""The eight tetromino classes, Gaussian voxelization, and dataset splits.

Shapes are the standard 3D tetromino set: pairwise non-congruent under
rotation plus translation, except for the one chiral pair, which are
mirror images of each other.  That pair is what makes the task a genuine
SO(3) problem: no amount of rotation maps one onto the other, so a
classifier must be orientation-aware yet rotation-consistent.

Samples are built by scaling the cell coordinates, rotating them in
continuous space (test-time rotations never touch the voxel grid), then
summing one isotropic Gaussian per cell on the grid, centered at the
point centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import FieldMap, scalar_fiber
from .so3 import Rotation, octahedral_rotations, random_rotation

_SHAPE_CELLS = (
    ("chiral_plus", ((0, 0, 0), (0, 0, 1), (1, 0, 0), (1, 1, 0))),
    ("chiral_minus", ((0, 0, 0), (0, 0, 1), (1, 0, 0), (1, -1, 0))),
    ("square", ((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0))),
    ("line", ((0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 0, 3))),
    ("corner", ((0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0))),
    ("el", ((0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 1, 0))),
    ("tee", ((0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 1, 1))),
    ("zigzag", ((0, 0, 0), (1, 0, 0), (1, 1, 0), (2, 1, 0))),
)


@dataclass(frozen=True)
class TetrisShape:
    shape_id: int
    name: str
    cells: np.ndarray  # (4, 3) integer lattice coordinates

    def centered(self) -> np.ndarray:
        """Cell coordinates relative to the centroid, float."""
        pts = self.cells.astype(float)
        return pts - pts.mean(axis=0)


def tetris_shapes() -> tuple[TetrisShape, ...]:
    out = []
    for i, (name, cells) in enumerate(_SHAPE_CELLS):
        arr = np.array(cells, dtype=int)
        arr.setflags(write=False)
        out.append(TetrisShape(i, name, arr))
    return tuple(out)


def congruent(a: np.ndarray, b: np.ndarray) -> bool:
    """True if cell sets match under some cube rotation plus translation."""
    pa = np.asarray(a, dtype=float)
    pa = pa - pa.mean(axis=0)
    pb = np.asarray(b, dtype=float)
    pb = pb - pb.mean(axis=0)
    sb = {tuple(np.round(p, 6)) for p in pb}
    for rot in octahedral_rotations():
        ra = pa @ rot.matrix.T
        if {tuple(np.round(p, 6)) for p in ra} == sb:
            return True
    return False


def voxelize(points: np.ndarray, grid: int,
             atom_sigma: float = 0.5) -> FieldMap:
    """Sum of unit-height Gaussians at voxel centers, centroid at center.

    points are in voxel units; an empty list gives the zero field.  Points
    landing outside [0, grid-1] after centering are a hard error: clipped
    mass would silently break the rotation-commutation property.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    data = np.zeros((1, grid, grid, grid))
    if points.shape[0] == 0:
        return FieldMap(data, scalar_fiber(1))
    center = (grid - 1) / 2.0
    pos = points - points.mean(axis=0) + center
    if pos.min() < 0.0 or pos.max() > grid - 1.0:
        raise ValueError("point outside grid after centering")
    ax = np.arange(grid, dtype=float)
    for p in pos:
        # isotropic Gaussian factorizes into an outer product per axis
        gx = np.exp(-(ax - p[0]) ** 2 / (2.0 * atom_sigma ** 2))
        gy = np.exp(-(ax - p[1]) ** 2 / (2.0 * atom_sigma ** 2))
        gz = np.exp(-(ax - p[2]) ** 2 / (2.0 * atom_sigma ** 2))
        data[0] += gx[:, None, None] * gy[None, :, None] * gz[None, None, :]
    return FieldMap(data, scalar_fiber(1))


@dataclass(frozen=True)
class VoxelSample:
    field: FieldMap
    label: int
    rotation: Rotation


@dataclass(frozen=True)
class TetrisData:
    train: tuple[VoxelSample, ...]
    val: tuple[VoxelSample, ...]
    test: tuple[VoxelSample, ...]


def _sample(shape: TetrisShape, rotation: Rotation, grid: int,
            spacing: float, atom_sigma: float) -> VoxelSample:
    pts = rotation.apply(shape.centered() * spacing)
    return VoxelSample(voxelize(pts, grid, atom_sigma), shape.shape_id,
                       rotation)


def make_split(seed: int, rotations_train: str = "none",
               count_per_class: int = 5, test_per_class: int = 16,
               grid: int = 16, spacing: float = 2.0,
               atom_sigma: float = 0.5) -> TetrisData:
    """Fixed-orientation (or augmented) train pool and a rotated test set.

    Test rotations are always Haar-random, applied to the continuous
    coordinates before voxelization.  The train pool is split 80/20 into
    train and validation.
    """
    if rotations_train not in ("none", "octahedral", "full"):
        raise ValueError(f"unknown rotation policy {rotations_train!r}")
    root = np.random.SeedSequence(seed)
    rng_train, rng_test, rng_split = (np.random.default_rng(s)
                                      for s in root.spawn(3))
    shapes = tetris_shapes()
    octa = octahedral_rotations()
    pool = []
    for shape in shapes:
        for _ in range(count_per_class):
            if rotations_train == "none":
                rot = Rotation.identity()
            elif rotations_train == "octahedral":
                rot = octa[rng_train.integers(len(octa))]
            else:
                rot = random_rotation(rng_train)
            pool.append(_sample(shape, rot, grid, spacing, atom_sigma))
    order = rng_split.permutation(len(pool))
    n_val = max(len(pool) // 5, 1) if len(pool) > 1 else 0
    val = tuple(pool[i] for i in order[:n_val])
    train = tuple(pool[i] for i in order[n_val:])
    test = tuple(_sample(shape, random_rotation(rng_test), grid, spacing,
                         atom_sigma)
                 for shape in shapes for _ in range(test_per_class))
    return TetrisData(train, val, test)


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    """(N, 1, g, g, g) batch array plus (N,) int64 labels."""
    x = np.stack([s.field.data for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y
