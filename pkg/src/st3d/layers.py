"""Equivariant network layers on batched voxel feature maps.

All layers operate on arrays of shape (batch, channels, D, H, W) with the
channel axis laid out by a FiberSpec (fields in spec order,
multiplicities contiguous).  Parameters and activations are float64 by
default; layers built with dtype=float32 keep the whole chain in single
precision, which is plenty for training and about twice as fast.  forward(x, tape, train) optionally records a
backward closure on the tape; closures map the gradient of the output to
the gradient of the input and accumulate parameter gradients on the side.

The convolution is a direct dense cross-correlation,

    out(x) = sum_u kernel(u) f(x + u),

built from an im2col matrix product per sample.  No FFT, no Winograd;
desk-scale grids only.
"""

from __future__ import annotations

import math
from collections import defaultdict
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .autodiff import Parameter, Tape
from .basis import DEFAULT_SIGMA, sample_basis_kernels
from .fields import FiberSpec, FieldMap, scalar_fiber

_cached_basis = lru_cache(maxsize=None)(sample_basis_kernels)


# ---------------------------------------------------------------------------
# dense cross-correlation core


def _conv_out_size(n: int, s: int, stride: int, padding: int) -> int:
    span = n + 2 * padding - s
    if span < 0:
        raise ValueError(f"kernel size {s} exceeds padded extent "
                         f"{n + 2 * padding}")
    return span // stride + 1


def _im2col(xp: np.ndarray, s: int, stride: int):
    """(N, C, Dp, Hp, Wp) -> column matrix (C*s^3, N*P) plus output shape.

    The column layout puts the batch inside the position axis so that the
    whole batch is one GEMM; this copy is built once per forward pass and
    shared with the backward closure.
    """
    win = np.lib.stride_tricks.sliding_window_view(xp, (s, s, s),
                                                   axis=(2, 3, 4))
    win = win[:, :, ::stride, ::stride, ::stride]
    n, c, od, oh, ow = win.shape[:5]
    cols = win.transpose(1, 5, 6, 7, 0, 2, 3, 4).reshape(
        c * s ** 3, n * od * oh * ow)
    return cols, (od, oh, ow)


def _pad_spatial(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


def _cols_forward(cols, oshape, n: int, kernel: np.ndarray) -> np.ndarray:
    ko = kernel.shape[0]
    y = (kernel.reshape(ko, -1) @ cols).reshape((ko, n) + oshape)
    return y.transpose(1, 0, 2, 3, 4).copy()


def _cols_backward(cols, oshape, x_shape, kernel: np.ndarray, stride: int,
                   padding: int, grad_out: np.ndarray,
                   need_input: bool = True):
    """Gradients of the column product w.r.t. the input and the kernel."""
    n, c, d, h, w = x_shape
    ko, s = kernel.shape[0], kernel.shape[2]
    od, oh, ow = oshape
    g2 = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3, 4)).reshape(
        ko, -1)
    grad_kernel = (g2 @ cols.T).reshape(kernel.shape)
    if not need_input:
        return None, grad_kernel
    gcols = (kernel.reshape(ko, -1).T @ g2).reshape(
        (c, s, s, s, n) + oshape)
    p = padding
    # scatter the columns back, channel-major so every slice-add runs on
    # contiguous memory; one batched add per kernel offset
    grad_xc = np.zeros((c, n, d + 2 * p, h + 2 * p, w + 2 * p),
                       dtype=grad_out.dtype)
    for ux in range(s):
        for uy in range(s):
            for uz in range(s):
                grad_xc[:, :,
                        ux:ux + stride * od:stride,
                        uy:uy + stride * oh:stride,
                        uz:uz + stride * ow:stride] += gcols[:, ux, uy, uz]
    grad_xp = grad_xc.transpose(1, 0, 2, 3, 4)
    if p:
        return grad_xp[:, :, p:p + d, p:p + h, p:p + w], grad_kernel
    return grad_xp, grad_kernel


def conv3d(x: np.ndarray, kernel: np.ndarray, stride: int = 1,
           padding: int = 0) -> np.ndarray:
    """Dense cross-correlation of (N, C, D, H, W) with (O, C, s, s, s)."""
    n, c = x.shape[:2]
    ko, ci, s = kernel.shape[0], kernel.shape[1], kernel.shape[2]
    if ci != c:
        raise ValueError(f"kernel expects {ci} input channels, got {c}")
    oshape = tuple(_conv_out_size(x.shape[2 + a], s, stride, padding)
                   for a in range(3))
    cols, got = _im2col(_pad_spatial(x, padding), s, stride)
    assert got == oshape
    return _cols_forward(cols, oshape, n, kernel)


def conv3d_backward(x: np.ndarray, kernel: np.ndarray, stride: int,
                    padding: int, grad_out: np.ndarray):
    """Gradients of conv3d with respect to the input and the kernel."""
    s = kernel.shape[2]
    cols, oshape = _im2col(_pad_spatial(x, padding), s, stride)
    return _cols_backward(cols, oshape, x.shape, kernel, stride, padding,
                          grad_out)


# ---------------------------------------------------------------------------
# layer base


class Layer:
    """Common forward/backward plumbing; subclasses fill in the math."""

    in_spec: FiberSpec | None = None
    out_spec: FiberSpec | None = None

    @property
    def params(self) -> list[Parameter]:
        return []

    def forward(self, x: np.ndarray, tape: Tape | None = None,
                train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def apply_field(self, f: FieldMap, train: bool = False) -> FieldMap:
        """Single-sample convenience wrapper used by the verification code."""
        y = self.forward(f.data[None], None, train)
        pitch = f.pitch * getattr(self, "stride", 1)
        return FieldMap(y[0], self.out_spec, pitch)

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 5:
            raise ValueError(f"expected (batch, K, D, H, W), got {x.shape}")
        if self.in_spec is not None and x.shape[1] != self.in_spec.dim:
            raise ValueError(f"input has {x.shape[1]} channels, spec wants "
                             f"{self.in_spec.dim}")


class SteerableConv(Layer):
    """Convolution whose kernel lives in the steerable basis.

    Weights are stored per (output order j, input order l) as an array of
    shape (out copies of j, in copies of l, basis count).  The assembled
    kernel is the weighted sum of unit-norm basis elements, so with all
    weights zero the layer is the zero map, and a single unit weight
    reproduces one basis element in its block.
    """

    def __init__(self, in_spec: FiberSpec, out_spec: FiberSpec, size: int,
                 *, stride: int = 1, padding: int | None = None,
                 sigma: float = DEFAULT_SIGMA, rule: str = "2m",
                 name: str = "conv", input_grad: bool = True,
                 rng: np.random.Generator | None = None,
                 dtype=np.float64):
        if stride < 1:
            raise ValueError("stride must be a positive integer")
        self.in_spec = in_spec
        self.out_spec = out_spec
        self.size = int(size)
        self.stride = int(stride)
        self.padding = size // 2 if padding is None else int(padding)
        self.sigma = float(sigma)
        self.rule = rule
        self.name = name
        # first layers can drop the expensive input-gradient scatter;
        # backward then returns None, so only set this on a network input
        self.input_grad = bool(input_grad)
        self.dtype = np.dtype(dtype)
        if rng is None:
            rng = np.random.default_rng(0)

        self._in_copies: dict[int, list[int]] = defaultdict(list)
        for off, l in in_spec.blocks():
            self._in_copies[l].append(off)
        self._out_copies: dict[int, list[int]] = defaultdict(list)
        for off, j in out_spec.blocks():
            self._out_copies[j].append(off)

        self._bases = {}
        self._basis_kernels = {}
        self.weights: dict[tuple[int, int], Parameter] = {}
        for j in sorted(self._out_copies):
            # unit-norm basis elements: variance 1/fan keeps signal scale
            fan = sum(len(self._in_copies[l])
                      * _cached_basis(j, l, self.size, self.sigma, rule).count
                      for l in self._in_copies)
            std = 1.0 / math.sqrt(max(fan, 1))
            for l in sorted(self._in_copies):
                bas = _cached_basis(j, l, self.size, self.sigma, rule)
                self._bases[(j, l)] = bas
                self._basis_kernels[(j, l)] = bas.kernels.astype(self.dtype)
                shape = (len(self._out_copies[j]),
                         len(self._in_copies[l]), bas.count)
                self.weights[(j, l)] = Parameter(
                    f"{name}.w{j}{l}",
                    rng.normal(0.0, std, size=shape).astype(self.dtype))

    @property
    def params(self) -> list[Parameter]:
        return [self.weights[k] for k in sorted(self.weights)]

    def assemble_kernel(self) -> np.ndarray:
        """Full filter bank (K_out, K_in, s, s, s) in spec channel order."""
        s = self.size
        kernel = np.zeros((self.out_spec.dim, self.in_spec.dim, s, s, s),
                          dtype=self.dtype)
        for (j, l), w in self.weights.items():
            basis = self._basis_kernels[(j, l)]
            if basis.shape[0] == 0:
                continue
            blk = np.einsum("oib,buvxyz->ouivxyz", w.value, basis,
                            optimize=True)
            for oi, ooff in enumerate(self._out_copies[j]):
                for ii, ioff in enumerate(self._in_copies[l]):
                    kernel[ooff:ooff + 2 * j + 1,
                           ioff:ioff + 2 * l + 1] = blk[oi, :, ii]
        return kernel

    def _accumulate_weight_grads(self, grad_kernel: np.ndarray) -> None:
        for (j, l), w in self.weights.items():
            basis = self._basis_kernels[(j, l)]
            if basis.shape[0] == 0:
                continue
            gblk = np.empty((len(self._out_copies[j]), 2 * j + 1,
                             len(self._in_copies[l]), 2 * l + 1)
                            + (self.size,) * 3, dtype=grad_kernel.dtype)
            for oi, ooff in enumerate(self._out_copies[j]):
                for ii, ioff in enumerate(self._in_copies[l]):
                    gblk[oi, :, ii] = grad_kernel[ooff:ooff + 2 * j + 1,
                                                  ioff:ioff + 2 * l + 1]
            gw = np.einsum("ouivxyz,buvxyz->oib", gblk, basis,
                           optimize=True)
            w.accumulate(gw)

    def forward(self, x, tape=None, train=False):
        self._check_input(x)
        kernel = self.assemble_kernel()
        cols, oshape = _im2col(_pad_spatial(x, self.padding), self.size,
                               self.stride)
        y = _cols_forward(cols, oshape, x.shape[0], kernel)
        if tape is not None:
            x_shape = x.shape

            def backward(g):
                gx, gk = _cols_backward(cols, oshape, x_shape, kernel,
                                        self.stride, self.padding, g,
                                        self.input_grad)
                self._accumulate_weight_grads(gk)
                return gx
            tape.record(backward)
        return y


class FreeConv(Layer):
    """Unconstrained convolution, the non-equivariant baseline.

    Same channel bookkeeping as SteerableConv but the kernel entries are
    free parameters (He initialization) and an optional per-channel bias.
    """

    def __init__(self, in_spec: FiberSpec, out_spec: FiberSpec, size: int,
                 *, stride: int = 1, padding: int | None = None,
                 bias: bool = True, name: str = "conv",
                 input_grad: bool = True,
                 rng: np.random.Generator | None = None,
                 dtype=np.float64):
        if stride < 1:
            raise ValueError("stride must be a positive integer")
        self.in_spec = in_spec
        self.out_spec = out_spec
        self.size = int(size)
        self.stride = int(stride)
        self.padding = size // 2 if padding is None else int(padding)
        self.name = name
        self.input_grad = bool(input_grad)
        self.dtype = np.dtype(dtype)
        if rng is None:
            rng = np.random.default_rng(0)
        fan = in_spec.dim * size ** 3
        self.kernel = Parameter(
            f"{name}.kernel",
            rng.normal(0.0, math.sqrt(2.0 / fan),
                       size=(out_spec.dim, in_spec.dim,
                             size, size, size)).astype(self.dtype))
        self.bias = Parameter(
            f"{name}.bias",
            np.zeros(out_spec.dim, dtype=self.dtype)) if bias else None

    @property
    def params(self) -> list[Parameter]:
        out = [self.kernel]
        if self.bias is not None:
            out.append(self.bias)
        return out

    def assemble_kernel(self) -> np.ndarray:
        return self.kernel.value.copy()

    def forward(self, x, tape=None, train=False):
        self._check_input(x)
        cols, oshape = _im2col(_pad_spatial(x, self.padding), self.size,
                               self.stride)
        y = _cols_forward(cols, oshape, x.shape[0], self.kernel.value)
        if self.bias is not None:
            y += self.bias.value[None, :, None, None, None]
        if tape is not None:
            kernel = self.kernel.value.copy()
            x_shape = x.shape

            def backward(g):
                gx, gk = _cols_backward(cols, oshape, x_shape, kernel,
                                        self.stride, self.padding, g,
                                        self.input_grad)
                self.kernel.accumulate(gk)
                if self.bias is not None:
                    self.bias.accumulate(g.sum(axis=(0, 2, 3, 4)))
                return gx
            tape.record(backward)
        return y


class GatedNonlinearity(Layer):
    """Sigmoid-gated nonlinearity for mixed-order fibers.

    The input carries the main fields plus one extra scalar gate channel
    per non-scalar field, appended after the main block in field order.
    Non-scalar fields are multiplied pointwise by sigmoid(gate); plain
    scalar fields get a ReLU; gate channels are consumed.
    """

    def __init__(self, spec: FiberSpec):
        self.out_spec = spec
        n_gates = spec.num_nonscalar
        self.n_gates = n_gates
        self.in_spec = spec + scalar_fiber(n_gates) if n_gates else spec

    def forward(self, x, tape=None, train=False):
        self._check_input(x)
        main = self.out_spec.dim
        y = np.empty((x.shape[0], main) + x.shape[2:], dtype=x.dtype)
        gate_at = main
        for off, l in self.out_spec.blocks():
            if l == 0:
                y[:, off] = np.maximum(x[:, off], 0.0)
            else:
                sig = expit(x[:, gate_at])
                y[:, off:off + 2 * l + 1] = (x[:, off:off + 2 * l + 1]
                                             * sig[:, None])
                gate_at += 1
        if tape is not None:
            def backward(g):
                gx = np.zeros_like(x)
                gate_at = main
                for off, l in self.out_spec.blocks():
                    if l == 0:
                        gx[:, off] = g[:, off] * (x[:, off] > 0)
                    else:
                        end = off + 2 * l + 1
                        sig = expit(x[:, gate_at])
                        gx[:, off:end] = g[:, off:end] * sig[:, None]
                        gx[:, gate_at] = ((g[:, off:end] * x[:, off:end])
                                          .sum(axis=1) * sig * (1.0 - sig))
                        gate_at += 1
                return gx
            tape.record(backward)
        return y


class NormNonlinearity(Layer):
    """Norm thresholding: f -> relu(|f| - beta) f / |f| per non-scalar field.

    beta is a fixed positive shrinkage, not learned.  Output is zero
    wherever the norm falls below beta, including the origin, so no
    division blows up.  Scalar fields get the usual ReLU.
    """

    def __init__(self, spec: FiberSpec, beta: float = 0.1):
        if beta <= 0:
            raise ValueError("beta must be positive")
        self.in_spec = spec
        self.out_spec = spec
        self.beta = float(beta)

    def forward(self, x, tape=None, train=False):
        self._check_input(x)
        y = np.empty_like(x)
        beta = self.beta
        for off, l in self.out_spec.blocks():
            if l == 0:
                y[:, off] = np.maximum(x[:, off], 0.0)
                continue
            end = off + 2 * l + 1
            xb = x[:, off:end]
            nrm = np.sqrt((xb ** 2).sum(axis=1))
            factor = np.where(nrm > beta,
                              1.0 - beta / np.maximum(nrm, beta), 0.0)
            y[:, off:end] = xb * factor[:, None]
        if tape is not None:
            def backward(g):
                gx = np.zeros_like(x)
                for off, l in self.out_spec.blocks():
                    if l == 0:
                        gx[:, off] = g[:, off] * (x[:, off] > 0)
                        continue
                    end = off + 2 * l + 1
                    xb = x[:, off:end]
                    gb = g[:, off:end]
                    nrm = np.sqrt((xb ** 2).sum(axis=1))
                    active = nrm > beta
                    safe = np.maximum(nrm, beta)
                    factor = np.where(active, 1.0 - beta / safe, 0.0)
                    radial = np.where(active, beta / safe ** 3, 0.0)
                    gx[:, off:end] = (gb * factor[:, None]
                                      + xb * (radial
                                              * (gb * xb).sum(axis=1))[:, None])
                return gx
            tape.record(backward)
        return y


class EquivariantBatchNorm(Layer):
    """Batch normalization that respects the fiber structure.

    Scalar fields use the standard mean/variance normalization with a
    learnable scale and bias.  Non-scalar fields cannot be centered
    without breaking equivariance, so they are divided by the batch and
    volume mean of the squared field norm (plus eps), then multiplied by
    a learnable per-field scale.  Running statistics use exponential
    momentum; variances are the biased batch estimates.
    """

    def __init__(self, spec: FiberSpec, eps: float = 1e-5,
                 momentum: float = 0.1, name: str = "bn", dtype=np.float64):
        self.in_spec = spec
        self.out_spec = spec
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.name = name
        self.dtype = np.dtype(dtype)
        n_copies = len(spec.blocks())
        self.scale = Parameter(f"{name}.scale",
                               np.ones(n_copies, dtype=self.dtype))
        self.bias = Parameter(f"{name}.bias",
                              np.zeros(spec.num_scalar, dtype=self.dtype))
        self.running_mean = np.zeros(spec.num_scalar, dtype=self.dtype)
        self.running_var = np.ones(spec.num_scalar, dtype=self.dtype)
        self.running_norm2 = np.ones(spec.num_nonscalar, dtype=self.dtype)

    @property
    def params(self) -> list[Parameter]:
        return [self.scale, self.bias]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var,
                f"{self.name}.running_norm2": self.running_norm2}

    def load_state_arrays(self, arrays) -> None:
        self.running_mean = np.array(arrays[f"{self.name}.running_mean"])
        self.running_var = np.array(arrays[f"{self.name}.running_var"])
        self.running_norm2 = np.array(arrays[f"{self.name}.running_norm2"])

    def forward(self, x, tape=None, train=False):
        self._check_input(x)
        y = np.empty_like(x)
        eps, mom = self.eps, self.momentum
        backs = []
        si = ni = 0
        for ci, (off, l) in enumerate(self.out_spec.blocks()):
            s = self.scale.value[ci]
            if l == 0:
                xc = x[:, off]
                if train:
                    mu = xc.mean()
                    var = xc.var()
                    self.running_mean[si] = ((1 - mom) * self.running_mean[si]
                                             + mom * mu)
                    self.running_var[si] = ((1 - mom) * self.running_var[si]
                                            + mom * var)
                else:
                    mu = self.running_mean[si]
                    var = self.running_var[si]
                xhat = (xc - mu) / np.sqrt(var + eps)
                y[:, off] = s * xhat + self.bias.value[si]
                backs.append(("scalar", ci, si, off, xhat, var))
                si += 1
            else:
                end = off + 2 * l + 1
                xb = x[:, off:end]
                if train:
                    nu = (xb ** 2).sum(axis=1).mean()
                    self.running_norm2[ni] = ((1 - mom)
                                              * self.running_norm2[ni]
                                              + mom * nu)
                else:
                    nu = self.running_norm2[ni]
                t = 1.0 / np.sqrt(nu + eps)
                y[:, off:end] = s * t * xb
                backs.append(("field", ci, ni, off, end, t))
                ni += 1
        if tape is not None:
            def backward(g):
                gx = np.empty_like(x)
                gscale = np.zeros_like(self.scale.value)
                gbias = np.zeros_like(self.bias.value)
                for rec in backs:
                    if rec[0] == "scalar":
                        _, ci, si, off, xhat, var = rec
                        s = self.scale.value[ci]
                        gc = g[:, off]
                        gscale[ci] = (gc * xhat).sum()
                        gbias[si] = gc.sum()
                        ghat = gc * s
                        if train:
                            gx[:, off] = (ghat - ghat.mean()
                                          - xhat * (ghat * xhat).mean()) \
                                / np.sqrt(var + eps)
                        else:
                            gx[:, off] = ghat / np.sqrt(var + eps)
                    else:
                        _, ci, ni, off, end, t = rec
                        s = self.scale.value[ci]
                        xb = x[:, off:end]
                        gb = g[:, off:end]
                        gscale[ci] = (gb * xb).sum() * t
                        if train:
                            # nu averages the squared norm over batch and
                            # volume, so that is the denominator here too
                            m = x.shape[0] * x.shape[2] * x.shape[3] \
                                * x.shape[4]
                            gx[:, off:end] = (s * t * gb
                                              - (s * t ** 3 / m) * xb
                                              * (gb * xb).sum())
                        else:
                            gx[:, off:end] = s * t * gb
                self.scale.accumulate(gscale)
                self.bias.accumulate(gbias)
                return gx
            tape.record(backward)
        return y


def _gaussian_taps(sigma: float, half_integer: bool):
    """Normalized blur taps; offsets integer or half-integer, cut at 4 sigma."""
    if half_integer:
        k = max(int(math.floor(4.0 * sigma + 0.5)), 1)
        offs = np.arange(1, k + 1) - 0.5
        offs = np.concatenate([-offs[::-1], offs])
    else:
        k = int(math.floor(4.0 * sigma))
        offs = np.arange(-k, k + 1, dtype=float)
    taps = np.exp(-offs ** 2 / (2.0 * sigma ** 2))
    return offs, taps / taps.sum()


def _reflect(i: int, n: int) -> int:
    # symmetric padding: ..., 1, 0 | 0, 1, ..., n-1 | n-1, n-2, ...
    while i < 0 or i >= n:
        i = -1 - i if i < 0 else 2 * n - 1 - i
    return i


class LowpassDownsample(Layer):
    """Blur-then-subsample along each spatial axis.

    Output voxel o samples input position stride*o + a where the anchor
    a = (D - 1 - stride*(Do - 1))/2 centers the output grid on the input
    grid.  For even extents the anchor is half-integer, so the Gaussian
    taps sit at half-integer offsets; this keeps the output grid centered
    and downsampling commutes exactly with the cube rotations.  With
    blur_sigma=0 the layer degenerates to plain f[::stride] subsampling
    (anchor 0), the intentionally aliasing-prone baseline.  Symmetric edge
    padding keeps constants constant.
    """

    def __init__(self, spec: FiberSpec, stride: int = 2,
                 blur_sigma: float = 0.6, mode: str = "gaussian"):
        if stride < 2:
            raise ValueError("downsampling stride must be at least 2")
        if mode not in ("gaussian", "average"):
            raise ValueError(f"unknown downsampling mode {mode!r}")
        if blur_sigma < 0:
            raise ValueError("blur_sigma must be nonnegative")
        self.in_spec = spec
        self.out_spec = spec
        self.stride = int(stride)
        self.blur_sigma = float(blur_sigma)
        self.mode = mode
        self._axis_cache: dict[tuple, np.ndarray] = {}

    def _axis_matrix(self, n: int, dtype=np.float64) -> np.ndarray:
        key = (n, np.dtype(dtype))
        if key in self._axis_cache:
            return self._axis_cache[key]
        st = self.stride
        if self.mode == "average":
            if n % st:
                raise ValueError(f"average mode needs extent divisible by "
                                 f"{st}, got {n}")
            no = n // st
            w = np.zeros((no, n))
            for o in range(no):
                w[o, st * o:st * (o + 1)] = 1.0 / st
        elif self.blur_sigma == 0.0:
            no = -(-n // st)
            w = np.zeros((no, n))
            for o in range(no):
                w[o, st * o] = 1.0
        else:
            no = -(-n // st)
            anchor = (n - 1 - st * (no - 1)) / 2.0
            half = (anchor % 1.0) != 0.0
            offs, taps = _gaussian_taps(self.blur_sigma, half)
            w = np.zeros((no, n))
            for o in range(no):
                for delta, tap in zip(offs, taps):
                    pos = st * o + anchor + delta
                    idx = int(round(pos))
                    assert abs(pos - idx) < 1e-9
                    w[o, _reflect(idx, n)] += tap
        w = w.astype(dtype)
        self._axis_cache[key] = w
        return w

    def forward(self, x, tape=None, train=False):
        self._check_input(x)
        mats = [self._axis_matrix(x.shape[2 + a], x.dtype) for a in range(3)]
        y = np.einsum("ad,nkdhw->nkahw", mats[0], x)
        y = np.einsum("bh,nkahw->nkabw", mats[1], y)
        y = np.einsum("cw,nkabw->nkabc", mats[2], y)
        if tape is not None:
            def backward(g):
                gx = np.einsum("cw,nkabc->nkabw", mats[2], g)
                gx = np.einsum("bh,nkabw->nkahw", mats[1], gx)
                gx = np.einsum("ad,nkahw->nkdhw", mats[0], gx)
                return gx
            tape.record(backward)
        return y


class GlobalAvgPool(Layer):
    """Spatial mean per channel; demands a scalar-only fiber.

    Pooling a non-scalar field would not give an invariant descriptor
    (the fiber still mixes under rotation), so those specs are rejected.
    Output keeps a 1x1x1 grid so downstream 1-cubed convolutions and the
    container export see uniform shapes.
    """

    def __init__(self, spec: FiberSpec):
        if spec.num_nonscalar:
            raise ValueError("global pooling needs a scalar-only spec")
        self.in_spec = spec
        self.out_spec = spec

    def forward(self, x, tape=None, train=False):
        self._check_input(x)
        volume = x.shape[2] * x.shape[3] * x.shape[4]
        y = x.mean(axis=(2, 3, 4))[..., None, None, None]
        if tape is not None:
            def backward(g):
                g3 = g.reshape(g.shape[0], g.shape[1], 1, 1, 1)
                return np.broadcast_to(g3 / volume, x.shape).copy()
            tape.record(backward)
        return y


def global_avg_pool(f: FieldMap) -> np.ndarray:
    """Pooled fiber vector of a scalar-only field map."""
    pool = GlobalAvgPool(f.spec)
    return pool.forward(f.data[None])[0, :, 0, 0, 0]
