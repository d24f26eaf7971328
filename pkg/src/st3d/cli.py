"""Command line front end: basis, verify, tetris, export.

The thread cap must land in the BLAS environment variables before numpy
first loads, so this module touches os.environ at import time and only
then pulls in the numeric stack.  Keep any new imports below that block.
"""

import os

_threads = os.environ.get("ST3D_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .basis import BANDLIMIT_RULES, sample_basis_kernels
from .config import config_to_dict, load_config
from .container import read_container, write_container
from .network import (
    build_network,
    export_network,
    load_checkpoint,
    save_checkpoint,
)
from .tetris import make_split, stack_samples
from .training import evaluate, train_network
from .verify import SUITES, run_suite


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def cmd_basis(args) -> int:
    try:
        sb = sample_basis_kernels(args.j, args.l, args.size,
                                  sigma=args.sigma, rule=args.bandlimit)
    except (ValueError, RuntimeError) as e:
        return _fail(str(e))
    name = f"basis/j{args.j}_l{args.l}"
    meta = {name: {"index": [list(t) for t in sb.index], "rule": sb.rule,
                   "sigma": sb.sigma, "size": sb.size}}
    write_container(args.out, {name: sb.kernels}, meta)
    print(f"B={sb.count}")
    per_m: dict[int, list[int]] = {}
    for J, m in sb.index:
        per_m.setdefault(m, []).append(J)
    for m in sorted(per_m):
        print(f"m={m}: J={','.join(str(J) for J in sorted(per_m[m]))}")
    print(f"wrote {args.out}")
    return 0


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        for rec in run_suite(name, seed=args.seed, tol=args.tol):
            print(json.dumps(rec, sort_keys=True))
            ok = ok and rec["pass"]
    return 0 if ok else 1


def _load_data(path):
    box = read_container(path)
    out = {}
    for split in ("train", "val", "test"):
        out[split] = (box[f"{split}/x"], box[f"{split}/y"])
    return out


def cmd_tetris_gen(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    d = cfg.data
    data = make_split(seed, rotations_train=d.rotations_train,
                      count_per_class=d.count_per_class,
                      test_per_class=d.test_per_class, grid=d.grid,
                      spacing=d.spacing, atom_sigma=d.atom_sigma)
    arrays = {}
    for split in ("train", "val", "test"):
        x, y = stack_samples(getattr(data, split))
        arrays[f"{split}/x"] = x
        arrays[f"{split}/y"] = y
    meta = {"train/x": {"config": config_to_dict(cfg), "seed": seed}}
    write_container(args.out, arrays, meta)
    sizes = {s: int(arrays[f"{s}/y"].size) for s in ("train", "val", "test")}
    print(json.dumps({"wrote": args.out, **sizes}))
    return 0


def cmd_tetris_train(args) -> int:
    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    seed = cfg.seed if args.seed is None else args.seed
    cfg = replace(cfg, seed=seed)
    splits = _load_data(args.data)
    x_tr, y_tr = splits["train"]
    x_val, y_val = splits["val"]
    dtype = np.float32 if args.dtype == "f32" else np.float64
    net = build_network(cfg, baseline=args.baseline,
                        rng=np.random.default_rng(
                            np.random.SeedSequence([seed,
                                                    int(args.baseline)])),
                        dtype=dtype)
    sink = open(args.metrics, "w") if args.metrics else None
    try:
        def log(rec):
            line = json.dumps(rec, sort_keys=True)
            if sink:
                sink.write(line + "\n")
            else:
                print(line)
        metrics, adam = train_network(net, x_tr, y_tr, x_val, y_val,
                                      cfg.train, log=log)
    finally:
        if sink:
            sink.close()
    save_checkpoint(args.out, net, config_to_dict(cfg), adam,
                    epoch=metrics[-1]["epoch"] if metrics else 0)
    print(json.dumps({"wrote": args.out, "epochs": len(metrics),
                      "final_loss": metrics[-1]["loss"] if metrics else None}))
    return 0


def cmd_tetris_eval(args) -> int:
    net, _, _ = load_checkpoint(args.model)
    splits = _load_data(args.data)
    x, y = splits[args.split]
    rep = evaluate(net, x, y)
    rep["split"] = args.split
    print(json.dumps(rep, sort_keys=True))
    return 0


def cmd_export(args) -> int:
    net, _, _ = load_checkpoint(args.model)
    export_network(net, args.out)
    print(json.dumps({"wrote": args.out, "kind": net.kind}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="st3d",
        description="steerable 3D CNNs: kernel bases, verification, Tetris")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("basis", help="sample a steerable kernel basis")
    b.add_argument("--j", type=int, required=True)
    b.add_argument("--l", type=int, required=True)
    b.add_argument("--size", type=int, required=True)
    b.add_argument("--sigma", type=float, default=0.6)
    b.add_argument("--bandlimit", default="2m",
                   choices=sorted(BANDLIMIT_RULES))
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_basis)

    v = sub.add_parser("verify", help="run a numeric verification suite")
    v.add_argument("--suite", required=True,
                   choices=sorted(SUITES) + ["all"])
    v.add_argument("--tol", type=float, default=None)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(fn=cmd_verify)

    t = sub.add_parser("tetris", help="dataset, training and evaluation")
    tsub = t.add_subparsers(dest="step", required=True)

    g = tsub.add_parser("gen", help="voxelize a train/val/test split")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_tetris_gen)

    tr = tsub.add_parser("train", help="train a network on a dataset")
    tr.add_argument("--config", required=True)
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--metrics", default=None,
                    help="write per-epoch JSON lines here instead of stdout")
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--baseline", action="store_true",
                    help="unconstrained conventional CNN of matched sizes")
    tr.add_argument("--dtype", choices=("f64", "f32"), default="f64")
    tr.set_defaults(fn=cmd_tetris_train)

    ev = tsub.add_parser("eval", help="report accuracy on a stored split")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test",
                    choices=("train", "val", "test"))
    ev.set_defaults(fn=cmd_tetris_eval)

    x = sub.add_parser("export", help="collapse a model to plain kernels")
    x.add_argument("--model", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(fn=cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        return _fail(f"missing file: {e.filename}")
    except (ValueError, KeyError) as e:
        return _fail(str(e))


if __name__ == "__main__":
    sys.exit(main())
