"""Full-batch training loop for the desk-scale classification runs.

Deterministic end to end: fixed seeds, no shuffling (the batch is the
whole training set).  Inputs are cast to the network's dtype, so float32
networks train entirely in single precision.  Early stopping fires once
the validation accuracy has been saturated for `patience` consecutive
epochs with the training loss below a small threshold.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Adam, Tape, cross_entropy
from .config import TrainConfig
from .network import Network

_LOSS_FLOOR = 0.01


def _as_net_dtype(x, dtype) -> np.ndarray:
    """Cast inputs, zeroing single-precision subnormals.

    Voxelized Gaussian tails drop below the float32 normal range over
    most of the grid, and dense subnormal operands stall the conv GEMMs
    with microcode assists (measured 15x on the first layer).  Zeros
    propagate as exact zeros through conv, gating and downsampling, so
    one flush at the input keeps the whole chain clean.
    """
    x = np.asarray(x, dtype=dtype)
    if x.dtype == np.float32:
        x = np.where(np.abs(x) < 1e-20, np.float32(0.0), x)
    return x


def accuracy(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    logits = net.forward(_as_net_dtype(x, net.dtype))
    return float((logits.argmax(axis=1) == y).mean())


def train_network(net: Network, x_train, y_train, x_val, y_val,
                  cfg: TrainConfig, log=None):
    """Train in place; returns (per-epoch metric records, optimizer)."""
    x_train = _as_net_dtype(x_train, net.dtype)
    x_val = _as_net_dtype(x_val, net.dtype)
    adam = Adam(net.params, cfg.lr, lr_decay=cfg.lr_decay)
    metrics = []
    saturated = 0
    for epoch in range(1, cfg.epochs + 1):
        tape = Tape()
        logits = net.forward(x_train, tape, train=True)
        loss, dlogits = cross_entropy(logits, y_train)
        net.zero_grads()
        tape.backward(dlogits)
        adam.step()
        train_acc = float((logits.argmax(axis=1) == y_train).mean())
        val_acc = accuracy(net, x_val, y_val) if len(y_val) else train_acc
        record = {"epoch": epoch, "loss": round(loss, 10),
                  "train_acc": round(train_acc, 6),
                  "val_acc": round(val_acc, 6),
                  "lr": round(adam.current_lr(), 10)}
        metrics.append(record)
        if log is not None:
            log(record)
        if val_acc >= 1.0 and loss < _LOSS_FLOOR:
            saturated += 1
        else:
            saturated = 0
        if saturated >= cfg.patience:
            break
    return metrics, adam


def evaluate(net: Network, x: np.ndarray, y: np.ndarray) -> dict:
    logits = net.forward(_as_net_dtype(x, net.dtype))
    pred = logits.argmax(axis=1)
    loss, _ = cross_entropy(logits, y)
    per_class = {}
    for c in np.unique(y):
        mask = y == c
        per_class[int(c)] = float((pred[mask] == c).mean())
    return {"accuracy": float((pred == y).mean()), "loss": float(loss),
            "per_class": per_class, "count": int(len(y))}
