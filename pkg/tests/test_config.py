"""Config round trips and schema validation."""

import dataclasses
import json

import pytest

from st3d.basis import BANDLIMIT_RULES
from st3d.config import (BlockConfig, DataConfig, KernelConfig, RunConfig,
                         TrainConfig, config_from_dict, config_to_dict,
                         default_config, load_config, save_config)


def test_default_config_is_complete():
    cfg = default_config()
    assert cfg.classes == 8
    assert cfg.data.grid == 16
    assert len(cfg.blocks) == 3
    assert cfg.blocks[0].downsample and cfg.blocks[1].downsample


def test_round_trip_through_dict():
    cfg = default_config()
    again = config_from_dict(config_to_dict(cfg))
    assert again == cfg


def test_round_trip_through_file(tmp_path):
    cfg = dataclasses.replace(
        default_config(), seed=5,
        kernel=KernelConfig(size=7, sigma=0.8, bandlimit="m"),
        data=DataConfig(spacing=3.0, atom_sigma=1.25),
        train=TrainConfig(lr=0.02, epochs=150))
    path = str(tmp_path / "run.json")
    save_config(cfg, path)
    assert load_config(path) == cfg
    # the file is plain JSON, readable without the package
    with open(path) as fh:
        raw = json.load(fh)
    assert raw["kernel"]["bandlimit"] == "m"


def test_schema_names_every_bandlimit_rule():
    raw = config_to_dict(default_config())
    for rule in BANDLIMIT_RULES:
        raw["kernel"]["bandlimit"] = rule
        config_from_dict(raw)


def test_partial_dict_fills_defaults():
    cfg = config_from_dict({"blocks": [{"fields": [[4, 0]]}]})
    assert cfg.seed == 0
    assert cfg.kernel == KernelConfig()
    assert cfg.blocks == (BlockConfig(fields=((4, 0),)),)


def test_unknown_key_rejected():
    with pytest.raises(Exception, match="additional"):
        config_from_dict({"optimizer": "sgd"})


def test_bad_block_fields_rejected():
    with pytest.raises(Exception):
        config_from_dict({"blocks": [{"fields": [[4]]}]})
    with pytest.raises(Exception):
        config_from_dict({"blocks": [{"fields": [[4, 0, 1]]}]})


def test_bad_enum_rejected():
    with pytest.raises(Exception):
        config_from_dict({"kernel": {"bandlimit": "3m"}})
    with pytest.raises(Exception):
        config_from_dict({"data": {"rotations_train": "sometimes"}})


def test_blocks_fields_normalized_to_tuples():
    blk = BlockConfig(fields=[[4, 0], [2, 1]])
    assert blk.fields == ((4, 0), (2, 1))
    assert isinstance(blk.fields[0][0], int)


def test_config_is_frozen():
    cfg = default_config()
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.seed = 1
