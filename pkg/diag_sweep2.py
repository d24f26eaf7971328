"""Recover train fit under the strict bandlimit: lr schedule and arch."""
import os
import time

os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
from dataclasses import replace

from st3d.config import BlockConfig, default_config
from st3d.network import build_network
from st3d.tetris import make_split, stack_samples
from st3d.training import train_network, evaluate

SEED = 0
data = make_split(SEED, grid=16, spacing=2.5, atom_sigma=1.0)
x_tr, y_tr = stack_samples(data.train)
x_val, y_val = stack_samples(data.val)
x_te, y_te = stack_samples(data.test)

lean = (
    BlockConfig(fields=((6, 0), (6, 1)), downsample=True),
    BlockConfig(fields=((12, 0), (8, 1)), downsample=True),
    BlockConfig(fields=((32, 0),), size=3),
)

variants = [
    ("E keep2 lr.05dec", None, 0.05, 0.995),
    ("F lean lr.05dec", lean, 0.05, 0.995),
]

for tag, blocks, lr, dec in variants:
    cfg = default_config()
    if blocks is not None:
        cfg = replace(cfg, blocks=blocks)
    cfg = replace(cfg,
                  kernel=replace(cfg.kernel, bandlimit="m"),
                  downsample=replace(cfg.downsample, blur_sigma=1.0),
                  train=replace(cfg.train, lr=lr, lr_decay=dec,
                                epochs=600, patience=20))
    net = build_network(cfg, rng=np.random.default_rng(SEED),
                        dtype=np.float32)
    nparam = sum(p.value.size for p in net.params)
    t0 = time.time()
    metrics, _ = train_network(net, x_tr, y_tr, x_val, y_val, cfg.train)
    dt = time.time() - t0
    final = metrics[-1]
    test = evaluate(net, x_te, y_te)
    print(f"{tag}: params={nparam} epochs={final['epoch']} "
          f"loss={final['loss']:.4f} val={final['val_acc']:.3f} "
          f"haar={test['accuracy']:.3f} ({dt:.0f}s)", flush=True)
