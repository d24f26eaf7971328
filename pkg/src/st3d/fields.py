"""Feature fields on voxel grids and the induced SE(3) action.

A feature map assigns to every voxel a fiber vector that transforms under
rotations through a direct sum of real irreducible SO(3) representations.
The fiber layout is described by a FiberSpec: an ordered list of
(multiplicity, order) pairs, occupying multiplicity * (2*order+1)
consecutive channels each.

The induced action of a rototranslation (t, R) moves the grid and mixes
the fiber:

    [pi(t, R) f](x) = rho(R) f(R^{-1} (x - t))

with rho the block-diagonal Wigner-D matrix of the spec.  Rotations act
about the grid center.  For the 24 cube rotations and integer translations
the spatial part is an exact voxel permutation (zero-filled where the
source falls outside the grid); arbitrary rotations use trilinear
interpolation and are approximate by nature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .so3 import L_CAP, Rotation, wigner_d


@dataclass(frozen=True)
class FiberSpec:
    """Ordered list of (multiplicity, order) pairs describing one fiber."""

    fields: tuple[tuple[int, int], ...]

    def __post_init__(self):
        norm = []
        for mult, l in self.fields:
            if mult < 1:
                raise ValueError(f"multiplicity must be positive, got {mult}")
            if not 0 <= l <= L_CAP:
                raise ValueError(f"order must be in 0..{L_CAP}, got {l}")
            norm.append((int(mult), int(l)))
        object.__setattr__(self, "fields", tuple(norm))

    @property
    def dim(self) -> int:
        """Total channel count K."""
        return sum(mult * (2 * l + 1) for mult, l in self.fields)

    def blocks(self) -> list[tuple[int, int]]:
        """(channel offset, order) for every individual field copy."""
        out = []
        at = 0
        for mult, l in self.fields:
            for _ in range(mult):
                out.append((at, l))
                at += 2 * l + 1
        return out

    def orders(self) -> list[int]:
        return [l for _, l in self.blocks()]

    @property
    def num_scalar(self) -> int:
        return sum(1 for _, l in self.blocks() if l == 0)

    @property
    def num_nonscalar(self) -> int:
        return sum(1 for _, l in self.blocks() if l > 0)

    def representation(self, r: Rotation) -> np.ndarray:
        """Block-diagonal fiber representation rho(r), shape (K, K)."""
        rho = np.zeros((self.dim, self.dim))
        for off, l in self.blocks():
            rho[off:off + 2 * l + 1, off:off + 2 * l + 1] = wigner_d(l, r)
        return rho

    def __add__(self, other: "FiberSpec") -> "FiberSpec":
        return FiberSpec(self.fields + other.fields)


def scalar_fiber(mult: int) -> FiberSpec:
    return FiberSpec(((mult, 0),))


@dataclass
class FieldMap:
    """One feature map: channels x depth x height x width, float64.

    The spatial axes are (x, y, z) in that index order; pitch records the
    physical voxel spacing and is metadata only.
    """

    data: np.ndarray
    spec: FiberSpec
    pitch: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 4:
            raise ValueError(f"field data must be 4-d, got {self.data.ndim}-d")
        if self.data.shape[0] != self.spec.dim:
            raise ValueError(f"channel count {self.data.shape[0]} does not "
                             f"match fiber dimension {self.spec.dim}")

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def is_cube(self) -> bool:
        d, h, w = self.grid_shape
        return d == h == w


def _source_coords(shape, rotation: Rotation, translation) -> np.ndarray:
    """Coordinates R^{-1}(x - t) about the grid center, shape (3, D, H, W)."""
    d, h, w = shape
    if not d == h == w and np.abs(rotation.matrix - np.eye(3)).max() > 0:
        raise ValueError("rotations need a cubic grid")
    c = (np.array(shape, dtype=float) - 1.0) / 2.0
    ax = [np.arange(n, dtype=float) for n in shape]
    gx, gy, gz = np.meshgrid(*ax, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1) - c - np.asarray(translation, float)
    src = pts @ rotation.matrix + c  # (R^T p) as row vectors
    return np.moveaxis(src, -1, 0)


def induced_action(f: FieldMap, rotation: Rotation,
                   translation=(0.0, 0.0, 0.0),
                   mode: str = "exact") -> FieldMap:
    """Apply [pi(t, R) f](x) = rho(R) f(R^{-1}(x - t)).

    mode "exact": the rotation matrix must be a signed permutation (one of
    the 24 cube rotations) and the translation integer; the spatial move is
    then an exact gather.  mode "trilinear": any rotation and real-valued
    translation, interpolated linearly, zero outside the grid.
    """
    if mode not in ("exact", "trilinear"):
        raise ValueError(f"unknown mode {mode!r}")
    src = _source_coords(f.grid_shape, rotation, translation)
    if mode == "exact":
        M = rotation.matrix
        if np.abs(M - np.rint(M)).max() > 1e-12:
            raise ValueError("exact mode needs a grid rotation "
                             "(use mode='trilinear')")
        t = np.asarray(translation, dtype=float)
        if np.abs(t - np.rint(t)).max() > 1e-12:
            raise ValueError("exact mode needs integer translations")
        idx = np.rint(src).astype(int)
        inside = np.all((idx >= 0)
                        & (idx < np.array(f.grid_shape)[:, None, None, None]),
                        axis=0)
        ix = np.clip(idx[0], 0, f.grid_shape[0] - 1)
        iy = np.clip(idx[1], 0, f.grid_shape[1] - 1)
        iz = np.clip(idx[2], 0, f.grid_shape[2] - 1)
        moved = np.where(inside[None], f.data[:, ix, iy, iz], 0.0)
    else:
        moved = np.stack([
            ndimage.map_coordinates(ch, src, order=1, mode="constant",
                                    cval=0.0) for ch in f.data])
    out = np.empty_like(moved)
    for off, l in f.spec.blocks():
        end = off + 2 * l + 1
        if l == 0:
            out[off:end] = moved[off:end]
        else:
            D = wigner_d(l, rotation)
            out[off:end] = np.einsum("mc,cdhw->mdhw", D, moved[off:end])
    return FieldMap(out, f.spec, f.pitch)


def random_field_map(spec: FiberSpec, size: int,
                     rng: np.random.Generator) -> FieldMap:
    return FieldMap(rng.normal(size=(spec.dim, size, size, size)), spec)


def measure_equivariance_error(apply_fn, out_spec: FiberSpec, f: FieldMap,
                               rotation: Rotation,
                               mode: str = "exact") -> float:
    """Relative commutation defect of apply_fn with the induced action.

    Returns |apply(pi(g) f) - pi'(g) apply(f)| / |apply(f)| in Frobenius
    norms, where pi' acts through out_spec on the output grid.  Identity
    rotations give exactly zero (both paths are the same bits).
    """
    base = apply_fn(f)
    if not isinstance(base, FieldMap):
        base = FieldMap(base, out_spec)
    lhs = apply_fn(induced_action(f, rotation, mode=mode))
    if not isinstance(lhs, FieldMap):
        lhs = FieldMap(lhs, out_spec)
    rhs = induced_action(base, rotation, mode=mode)
    denom = np.linalg.norm(base.data)
    if denom == 0.0:
        raise ValueError("apply_fn returned a zero field")
    return float(np.linalg.norm(lhs.data - rhs.data) / denom)
