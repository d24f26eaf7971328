"""Run configuration: schema-validated JSON mapped onto frozen dataclasses.

One file describes a whole run: network blocks (fiber layout per layer),
kernel and downsampling settings, dataset generation, and the training
schedule.  Everything has a desk-scale default so `default_config()` is a
complete runnable Tetris setup.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import jsonschema

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "classes": {"type": "integer", "minimum": 2},
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "size": {"type": "integer", "minimum": 1},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "bandlimit": {"enum": ["2m", "m", "none"]},
            },
        },
        "downsample": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "stride": {"type": "integer", "minimum": 2},
                "blur_sigma": {"type": "number", "minimum": 0},
                "mode": {"enum": ["gaussian", "average"]},
            },
        },
        "blocks": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["fields"],
                "properties": {
                    "fields": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "array",
                            "items": {"type": "integer", "minimum": 0},
                            "minItems": 2,
                            "maxItems": 2,
                        },
                    },
                    "nonlinearity": {"enum": ["gate", "norm", "none"]},
                    "batchnorm": {"type": "boolean"},
                    "downsample": {"type": "boolean"},
                    "size": {"type": "integer", "minimum": 1},
                    "padding": {"type": "integer", "minimum": 0},
                    "stride": {"type": "integer", "minimum": 1},
                },
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid": {"type": "integer", "minimum": 4},
                "count_per_class": {"type": "integer", "minimum": 1},
                "test_per_class": {"type": "integer", "minimum": 1},
                "rotations_train": {"enum": ["none", "octahedral", "full"]},
                "spacing": {"type": "number", "exclusiveMinimum": 0},
                "atom_sigma": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "lr_decay": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 1},
                "patience": {"type": "integer", "minimum": 1},
            },
        },
    },
}


@dataclass(frozen=True)
class KernelConfig:
    size: int = 5
    sigma: float = 0.6
    bandlimit: str = "2m"


@dataclass(frozen=True)
class DownsampleConfig:
    stride: int = 2
    blur_sigma: float = 0.6
    mode: str = "gaussian"


@dataclass(frozen=True)
class BlockConfig:
    fields: tuple[tuple[int, int], ...]
    nonlinearity: str = "gate"
    batchnorm: bool = False
    downsample: bool = False
    size: int | None = None
    padding: int | None = None
    stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "fields",
                           tuple((int(m), int(l)) for m, l in self.fields))


@dataclass(frozen=True)
class DataConfig:
    grid: int = 16
    count_per_class: int = 5
    test_per_class: int = 16
    rotations_train: str = "none"
    spacing: float = 2.0
    atom_sigma: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    lr_decay: float = 1.0
    epochs: int = 300
    patience: int = 10


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    classes: int = 8
    kernel: KernelConfig = field(default_factory=KernelConfig)
    downsample: DownsampleConfig = field(default_factory=DownsampleConfig)
    blocks: tuple[BlockConfig, ...] = ()
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def default_config() -> RunConfig:
    """Desk-scale Tetris setup: three blocks on a 16 -> 8 -> 4 grid."""
    return RunConfig(blocks=(
        BlockConfig(fields=((4, 0), (4, 1), (2, 2)), downsample=True),
        BlockConfig(fields=((8, 0), (4, 1), (2, 2)), downsample=True),
        BlockConfig(fields=((32, 0),), size=3),
    ))


def config_to_dict(cfg: RunConfig) -> dict:
    raw = asdict(cfg)
    raw["blocks"] = [
        {k: v for k, v in blk.items() if v is not None}
        for blk in raw["blocks"]]
    for blk in raw["blocks"]:
        blk["fields"] = [list(f) for f in blk["fields"]]
    return raw


def config_from_dict(raw: dict) -> RunConfig:
    jsonschema.validate(raw, CONFIG_SCHEMA)
    kw = {}
    if "seed" in raw:
        kw["seed"] = raw["seed"]
    if "classes" in raw:
        kw["classes"] = raw["classes"]
    if "kernel" in raw:
        kw["kernel"] = KernelConfig(**raw["kernel"])
    if "downsample" in raw:
        kw["downsample"] = DownsampleConfig(**raw["downsample"])
    if "blocks" in raw:
        kw["blocks"] = tuple(
            BlockConfig(**{**blk, "fields": tuple(map(tuple, blk["fields"]))})
            for blk in raw["blocks"])
    if "data" in raw:
        kw["data"] = DataConfig(**raw["data"])
    if "train" in raw:
        kw["train"] = TrainConfig(**raw["train"])
    cfg = RunConfig(**kw)
    if not cfg.blocks:
        raise ValueError("config needs at least one block")
    return cfg


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
