"""Minimal reverse-mode differentiation for a chain of array ops.

The model here is deliberately small: layers push backward closures onto a
Tape during the forward pass; Tape.backward walks them in exact reverse
order, each closure turning the gradient of its output into the gradient
of its input and accumulating parameter gradients additively on the side.
Arrays are float64 by default; float32 parameters and activations pass
through untouched so training can trade precision for speed.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class GradientError(RuntimeError):
    """Raised for non-finite gradients and unrecorded-parameter access."""


class Parameter:
    """A named trainable array with an additively accumulated gradient."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        value = np.asarray(value)
        if value.dtype not in (np.float32, np.float64):
            value = value.astype(float)
        self.value = value
        self._grad: np.ndarray | None = None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            raise GradientError(
                f"gradient of {self.name!r} was never recorded; "
                "call zero_grad() and run a backward pass first")
        return self._grad

    def zero_grad(self) -> None:
        self._grad = np.zeros_like(self.value)

    def accumulate(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        self._grad += g

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Tape:
    """Recorded backward closures, replayed in reverse."""

    def __init__(self):
        self._records: list[Callable[[np.ndarray], np.ndarray]] = []

    def record(self, backward_fn: Callable[[np.ndarray], np.ndarray]) -> None:
        self._records.append(backward_fn)

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, seed_grad: np.ndarray) -> np.ndarray:
        """Propagate d(loss)/d(chain output) back to the chain input."""
        g = np.asarray(seed_grad)
        if g.dtype not in (np.float32, np.float64):
            g = g.astype(float)
        for fn in reversed(self._records):
            g = fn(g)
        return g


# ---------------------------------------------------------------------------
# loss


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray,
                  labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient in the logits.

    Stabilized by max subtraction; returns (loss, d loss / d logits).
    The loss itself is always evaluated in float64; the gradient comes
    back in the dtype of the logits.
    """
    logits = np.asarray(logits)
    dtype = logits.dtype if logits.dtype == np.float32 else np.float64
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"logits must be (batch, classes), got {logits.shape}")
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ValueError("labels must be one integer per batch row")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label outside class range")
    logp = log_softmax(logits.astype(np.float64))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).astype(dtype)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction and optional exponential lr decay."""

    def __init__(self, params: list[Parameter], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 lr_decay: float = 1.0):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.lr_decay = float(lr_decay)
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.v = {p.name: np.zeros_like(p.value) for p in params}

    def current_lr(self) -> float:
        return self.lr * self.lr_decay ** self.t

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise GradientError(f"non-finite gradient in {p.name!r}; "
                                    "step aborted")
        lr_t = self.current_lr()
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad ** 2
            mhat = m / (1.0 - b1 ** self.t)
            vhat = v / (1.0 - b2 ** self.t)
            p.value -= lr_t * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat view of the optimizer state for checkpointing."""
        out = {"adam/t": np.array([self.t], dtype=np.int64)}
        for name in self.m:
            out[f"adam/m/{name}"] = self.m[name]
            out[f"adam/v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["adam/t"][0])
        for name in self.m:
            self.m[name] = np.array(arrays[f"adam/m/{name}"])
            self.v[name] = np.array(arrays[f"adam/v/{name}"])


# ---------------------------------------------------------------------------
# numerical gradient check


def gradcheck(loss_fn: Callable[[], float], params: list[Parameter],
              rng: np.random.Generator, n_entries: int = 50,
              h: float = 1e-5) -> float:
    """Worst relative error of analytic vs central-difference gradients.

    loss_fn must run forward and backward, leaving gradients on the
    parameters (zeroing them itself).  Probes n_entries random coordinates
    across all parameters.
    """
    loss_fn()
    analytic = {p.name: p.grad.copy() for p in params}
    sizes = np.array([p.value.size for p in params])
    if sizes.sum() == 0:
        return 0.0
    worst = 0.0
    for _ in range(n_entries):
        pi = rng.choice(len(params), p=sizes / sizes.sum())
        p = params[pi]
        flat = p.value.reshape(-1)
        ci = rng.integers(flat.size)
        keep = flat[ci]
        flat[ci] = keep + h
        up = loss_fn()
        flat[ci] = keep - h
        down = loss_fn()
        flat[ci] = keep
        numeric = (up - down) / (2.0 * h)
        ana = analytic[p.name].reshape(-1)[ci]
        err = abs(ana - numeric) / max(1.0, abs(ana), abs(numeric))
        worst = max(worst, err)
    return worst
