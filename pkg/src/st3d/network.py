"""Assembling layer stacks from a RunConfig, plus export and checkpoints.

Two builds share one skeleton: the steerable network, and a conventional
baseline with the same post-activation feature map sizes but unconstrained
kernels ("simply without the constraint of being equivariant").  A trained
steerable network can be exported as a plain filter bank; the exported
network runs the identical convolution code on the frozen kernels, so the
two paths agree bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Adam, Parameter, Tape
from .config import RunConfig
from .container import read_container, write_container
from .fields import FiberSpec, FieldMap, scalar_fiber
from .layers import (EquivariantBatchNorm, FreeConv, GatedNonlinearity,
                     GlobalAvgPool, Layer, LowpassDownsample,
                     NormNonlinearity, SteerableConv)


class Network:
    """A straight-line stack of layers ending in pooled class logits."""

    def __init__(self, layers: list[Layer], classes: int, kind: str):
        self.layers = layers
        self.classes = classes
        self.kind = kind
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names in network")

    @property
    def params(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        return out

    @property
    def dtype(self) -> np.dtype:
        params = self.params
        return params[0].value.dtype if params else np.dtype(np.float64)

    def zero_grads(self) -> None:
        for p in self.params:
            p.zero_grad()

    def forward(self, x: np.ndarray, tape: Tape | None = None,
                train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, tape, train)
        if x.shape[2:] != (1, 1, 1):
            raise RuntimeError(f"head left spatial extent {x.shape[2:]}")
        if tape is not None:
            tape.record(lambda g: g.reshape(g.shape + (1, 1, 1)))
        return x[:, :, 0, 0, 0]

    def feature_field(self, f: FieldMap) -> FieldMap:
        """Run the stack on one sample up to (excluding) the global pool."""
        for layer in self.layers:
            if isinstance(layer, GlobalAvgPool):
                break
            f = layer.apply_field(f)
        return f

    def logits_of_field(self, f: FieldMap) -> np.ndarray:
        return self.forward(f.data[None])[0]


def _block_geometry(cfg: RunConfig, blk) -> tuple[int, int, int]:
    size = blk.size if blk.size is not None else cfg.kernel.size
    padding = blk.padding if blk.padding is not None else size // 2
    return size, padding, blk.stride


def build_network(cfg: RunConfig, baseline: bool = False,
                  rng: np.random.Generator | None = None,
                  dtype=np.float64) -> Network:
    if rng is None:
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, int(baseline)]))
    layers: list[Layer] = []
    spec = scalar_fiber(1)
    for bi, blk in enumerate(cfg.blocks):
        main = FiberSpec(blk.fields)
        size, padding, stride = _block_geometry(cfg, blk)
        name = f"layer{bi}"
        if baseline:
            # matched post-activation map sizes, free kernels, plain ReLU
            flat_in = scalar_fiber(spec.dim)
            flat_out = scalar_fiber(main.dim)
            layers.append(FreeConv(flat_in, flat_out, size, stride=stride,
                                   padding=padding, name=name, rng=rng,
                                   input_grad=bi > 0, dtype=dtype))
            if blk.batchnorm:
                layers.append(EquivariantBatchNorm(flat_out,
                                                   name=f"{name}.bn",
                                                   dtype=dtype))
            if blk.nonlinearity != "none":
                layers.append(GatedNonlinearity(flat_out))
            spec = flat_out
        else:
            gated = blk.nonlinearity == "gate" and main.num_nonscalar > 0
            conv_out = main + scalar_fiber(main.num_nonscalar) if gated \
                else main
            layers.append(SteerableConv(spec, conv_out, size, stride=stride,
                                        padding=padding,
                                        sigma=cfg.kernel.sigma,
                                        rule=cfg.kernel.bandlimit,
                                        name=name, rng=rng,
                                        input_grad=bi > 0, dtype=dtype))
            if blk.batchnorm:
                layers.append(EquivariantBatchNorm(conv_out,
                                                   name=f"{name}.bn",
                                                   dtype=dtype))
            if blk.nonlinearity == "gate":
                layers.append(GatedNonlinearity(main))
            elif blk.nonlinearity == "norm":
                layers.append(NormNonlinearity(main))
            spec = main
        if blk.downsample:
            layers.append(LowpassDownsample(spec, cfg.downsample.stride,
                                            cfg.downsample.blur_sigma,
                                            cfg.downsample.mode))
    if spec.num_nonscalar:
        raise ValueError("last block must end in scalar fields only")
    layers.append(GlobalAvgPool(spec))
    if baseline:
        layers.append(FreeConv(spec, scalar_fiber(cfg.classes), 1,
                               padding=0, name="head", rng=rng, dtype=dtype))
    else:
        layers.append(SteerableConv(spec, scalar_fiber(cfg.classes), 1,
                                    padding=0, sigma=cfg.kernel.sigma,
                                    rule=cfg.kernel.bandlimit,
                                    name="head", rng=rng, dtype=dtype))
    return Network(layers, cfg.classes,
                   "baseline" if baseline else "steerable")


# ---------------------------------------------------------------------------
# serialization


def _spec_fields(spec: FiberSpec) -> list[list[int]]:
    return [list(f) for f in spec.fields]


def _layer_descriptor(i: int, layer: Layer) -> dict:
    if isinstance(layer, (SteerableConv, FreeConv)):
        return {"type": "conv", "index": i,
                "in_fields": _spec_fields(layer.in_spec),
                "out_fields": _spec_fields(layer.out_spec),
                "size": layer.size, "stride": layer.stride,
                "padding": layer.padding,
                "bias": isinstance(layer, FreeConv)
                        and layer.bias is not None}
    if isinstance(layer, GatedNonlinearity):
        return {"type": "gate", "index": i,
                "fields": _spec_fields(layer.out_spec)}
    if isinstance(layer, NormNonlinearity):
        return {"type": "norm", "index": i,
                "fields": _spec_fields(layer.out_spec), "beta": layer.beta}
    if isinstance(layer, EquivariantBatchNorm):
        return {"type": "batchnorm", "index": i,
                "fields": _spec_fields(layer.out_spec), "eps": layer.eps}
    if isinstance(layer, LowpassDownsample):
        return {"type": "downsample", "index": i,
                "fields": _spec_fields(layer.out_spec),
                "stride": layer.stride, "blur_sigma": layer.blur_sigma,
                "mode": layer.mode}
    if isinstance(layer, GlobalAvgPool):
        return {"type": "pool", "index": i,
                "fields": _spec_fields(layer.out_spec)}
    raise TypeError(f"cannot describe layer {type(layer).__name__}")


def export_network(net: Network, path: str) -> None:
    """Write the assembled filter banks plus an architecture manifest.

    Steerable layers are collapsed to their plain kernels, so the file
    describes an ordinary 3D CNN.
    """
    arrays: dict[str, np.ndarray] = {}
    descriptors = []
    for i, layer in enumerate(net.layers):
        descriptors.append(_layer_descriptor(i, layer))
        tag = f"layer{i}"
        if isinstance(layer, (SteerableConv, FreeConv)):
            arrays[f"{tag}/kernel"] = layer.assemble_kernel()
            if isinstance(layer, FreeConv) and layer.bias is not None:
                arrays[f"{tag}/bias"] = layer.bias.value
        elif isinstance(layer, EquivariantBatchNorm):
            arrays[f"{tag}/bn_scale"] = layer.scale.value
            arrays[f"{tag}/bn_bias"] = layer.bias.value
            arrays[f"{tag}/bn_running_mean"] = layer.running_mean
            arrays[f"{tag}/bn_running_var"] = layer.running_var
            arrays[f"{tag}/bn_running_norm2"] = layer.running_norm2
    arrays["architecture"] = np.zeros(0, dtype=np.int64)
    meta = {"architecture": {"layers": descriptors, "classes": net.classes,
                             "kind": net.kind}}
    write_container(path, arrays, meta)


def network_from_export(path: str) -> Network:
    """Rebuild a conventional network from an exported filter bank."""
    box = read_container(path)
    manifest = box.meta.get("architecture")
    if manifest is None:
        raise ValueError("container lacks an architecture manifest")
    layers: list[Layer] = []
    for desc in manifest["layers"]:
        i = desc["index"]
        tag = f"layer{i}"
        kind = desc["type"]
        if kind == "conv":
            in_spec = FiberSpec(tuple(map(tuple, desc["in_fields"])))
            out_spec = FiberSpec(tuple(map(tuple, desc["out_fields"])))
            kernel = np.array(box[f"{tag}/kernel"])
            conv = FreeConv(in_spec, out_spec, desc["size"],
                            stride=desc["stride"], padding=desc["padding"],
                            bias=desc["bias"], name=tag, dtype=kernel.dtype)
            conv.kernel.value = kernel
            if desc["bias"]:
                conv.bias.value = np.array(box[f"{tag}/bias"])
            layers.append(conv)
        elif kind == "gate":
            layers.append(GatedNonlinearity(
                FiberSpec(tuple(map(tuple, desc["fields"])))))
        elif kind == "norm":
            layers.append(NormNonlinearity(
                FiberSpec(tuple(map(tuple, desc["fields"]))), desc["beta"]))
        elif kind == "batchnorm":
            bn = EquivariantBatchNorm(
                FiberSpec(tuple(map(tuple, desc["fields"]))),
                eps=desc["eps"], name=tag)
            bn.scale.value = np.array(box[f"{tag}/bn_scale"])
            bn.bias.value = np.array(box[f"{tag}/bn_bias"])
            bn.running_mean = np.array(box[f"{tag}/bn_running_mean"])
            bn.running_var = np.array(box[f"{tag}/bn_running_var"])
            bn.running_norm2 = np.array(box[f"{tag}/bn_running_norm2"])
            layers.append(bn)
        elif kind == "downsample":
            layers.append(LowpassDownsample(
                FiberSpec(tuple(map(tuple, desc["fields"]))),
                desc["stride"], desc["blur_sigma"], desc["mode"]))
        elif kind == "pool":
            layers.append(GlobalAvgPool(
                FiberSpec(tuple(map(tuple, desc["fields"])))))
        else:
            raise ValueError(f"unknown layer type {kind!r} in manifest")
    return Network(layers, manifest["classes"], "exported")


def save_checkpoint(path: str, net: Network, cfg_raw: dict,
                    adam: Adam | None = None, epoch: int = 0) -> None:
    arrays = {f"param/{p.name}": p.value for p in net.params}
    for layer in net.layers:
        if isinstance(layer, EquivariantBatchNorm):
            for k, v in layer.state_arrays().items():
                arrays[f"buffer/{k}"] = v
    if adam is not None:
        arrays.update(adam.state_arrays())
    arrays["schedule/epoch"] = np.array([epoch], dtype=np.int64)
    meta = {"schedule/epoch": {"kind": net.kind, "config": cfg_raw}}
    write_container(path, arrays, meta)


def load_checkpoint(path: str, cfg: RunConfig | None = None):
    """Rebuild the network (and epoch) stored by save_checkpoint."""
    from .config import config_from_dict
    box = read_container(path)
    info = box.meta["schedule/epoch"]
    if cfg is None:
        cfg = config_from_dict(info["config"])
    stored_params = [n for n in box.names() if n.startswith("param/")]
    dtype = box[stored_params[0]].dtype if stored_params else np.float64
    net = build_network(cfg, baseline=info["kind"] == "baseline",
                        dtype=dtype)
    for p in net.params:
        stored = box[f"param/{p.name}"]
        if stored.shape != p.value.shape:
            raise ValueError(f"checkpoint shape mismatch for {p.name}")
        p.value = np.array(stored)
    for layer in net.layers:
        if isinstance(layer, EquivariantBatchNorm):
            layer.load_state_arrays(
                {k: box[f"buffer/{k}"] for k in layer.state_arrays()})
    epoch = int(box["schedule/epoch"][0])
    return net, cfg, epoch
