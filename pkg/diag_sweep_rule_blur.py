"""Haar test accuracy across bandlimit rule x downsample blur, 1 seed."""
import os
import time

os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
from dataclasses import replace

from st3d.config import default_config
from st3d.network import build_network
from st3d.tetris import make_split, stack_samples
from st3d.training import train_network, evaluate

SEED = 0
data = make_split(SEED, grid=16, spacing=2.5, atom_sigma=1.0)
x_tr, y_tr = stack_samples(data.train)
x_val, y_val = stack_samples(data.val)
x_te, y_te = stack_samples(data.test)

for rule, blur in [("2m", 1.0), ("m", 0.6), ("m", 1.0)]:
    cfg = default_config()
    cfg = replace(cfg,
                  kernel=replace(cfg.kernel, bandlimit=rule),
                  downsample=replace(cfg.downsample, blur_sigma=blur),
                  train=replace(cfg.train, lr=0.03, epochs=600, patience=20))
    net = build_network(cfg, rng=np.random.default_rng(SEED),
                        dtype=np.float32)
    t0 = time.time()
    metrics, _ = train_network(net, x_tr, y_tr, x_val, y_val, cfg.train)
    dt = time.time() - t0
    final = metrics[-1]
    test = evaluate(net, x_te, y_te)
    print(f"rule={rule} blur={blur}: epochs={final['epoch']} "
          f"loss={final['loss']:.4f} val={final['val_acc']:.3f} "
          f"haar={test['accuracy']:.3f} ({dt:.0f}s)")
