"""Probe: size-7 first block, size-3 later blocks, blur 1.0, rule 2m."""
import sys, time, dataclasses
import numpy as np
from st3d.config import (RunConfig, BlockConfig, KernelConfig,
                         DownsampleConfig, DataConfig, TrainConfig)
from st3d.network import build_network
from st3d.tetris import make_split, stack_samples
from st3d.training import train_network, evaluate

lr = float(sys.argv[1]) if len(sys.argv) > 1 else 0.01
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

cfg = RunConfig(
    seed=seed,
    kernel=KernelConfig(size=5, sigma=0.6, bandlimit="2m"),
    downsample=DownsampleConfig(stride=2, blur_sigma=1.0),
    blocks=(
        BlockConfig(fields=((4, 0), (4, 1), (2, 2)), size=7, downsample=True),
        BlockConfig(fields=((8, 0), (4, 1), (2, 2)), size=3, downsample=True),
        BlockConfig(fields=((32, 0),), size=3),
    ),
    data=DataConfig(grid=16, spacing=2.5, atom_sigma=1.0),
    train=TrainConfig(lr=lr, epochs=100, patience=10**9),
)
data = make_split(seed, grid=16, spacing=2.5, atom_sigma=1.0)
x_tr, y_tr = stack_samples(data.train)
x_val, y_val = stack_samples(data.val)
x_te, y_te = stack_samples(data.test)
net = build_network(cfg, rng=np.random.default_rng([seed, 0]), dtype=np.float32)
print(f"params={sum(p.value.size for p in net.params)} lr={lr} seed={seed}",
      flush=True)
t0 = time.time()
for chunk in range(8):
    m, _ = train_network(net, x_tr, y_tr, x_val, y_val, cfg.train)
    r = m[-1]
    haar = evaluate(net, x_te, y_te)["accuracy"]
    print(f"ep {(chunk+1)*100}: loss={r['loss']:.4f} train={r['train_acc']:.3f} "
          f"val={r['val_acc']:.3f} haar={haar:.3f} [{time.time()-t0:.0f}s]",
      flush=True)
    if r["loss"] < 0.005:
        break
