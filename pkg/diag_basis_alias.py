"""Per-basis-element continuous-rotation defect of the sampled kernels.

For each (j, l) pair and each admitted (J, m) element, wire a one-element
SteerableConv and measure the trilinear commutation defect on a smooth
random field.  Isotropic elements (J=0) are exactly steerable after
sampling, so their scores calibrate the interpolation floor.
"""
import numpy as np
from scipy import ndimage

from st3d.basis import sample_basis_kernels
from st3d.fields import FieldMap, FiberSpec, measure_equivariance_error
from st3d.layers import SteerableConv
from st3d.so3 import random_rotation

rng = np.random.default_rng(7)
rots = [random_rotation(rng) for _ in range(4)]
G = 16


def smooth_field(spec, rng):
    data = rng.normal(size=(spec.dim, G, G, G))
    data = np.stack([ndimage.gaussian_filter(ch, 1.0) for ch in data])
    # kill the border so rotation never clips support
    ax = np.arange(G) - (G - 1) / 2
    r = np.sqrt(sum(v**2 for v in np.meshgrid(ax, ax, ax, indexing="ij")))
    data *= np.exp(-np.clip(r - 4.0, 0, None) ** 2)
    return FieldMap(data, spec)


for (j, l) in [(2, 1), (2, 2)]:
    in_spec = FiberSpec(((1, l),))
    out_spec = FiberSpec(((1, j),))
    layer = SteerableConv(in_spec, out_spec, 5, rule="none",
                          rng=np.random.default_rng(0))
    bas = sample_basis_kernels(j, l, 5, rule="none")
    f = smooth_field(in_spec, np.random.default_rng(11))
    print(f"(j={j}, l={l})  elements={bas.count}")
    w = layer.weights[(j, l)]
    for i, (J, m) in enumerate(bas.index):
        w.value[:] = 0.0
        w.value[0, 0, i] = 1.0

        def apply_fn(fm):
            out = layer.forward(fm.data[None])[0]
            return FieldMap(out, out_spec)

        errs = [measure_equivariance_error(apply_fn, out_spec, f, R,
                                           mode="trilinear") for R in rots]
        flag = "  <-- admitted by 2m" if J <= min(j + l, 2 * m) else ""
        print(f"  J={J} m={m}:  err={np.mean(errs):.4f}{flag}")
