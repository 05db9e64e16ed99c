"""Tests for udun.config."""

import os

import pytest

from udun.config import (
    ModelConfig,
    TrainConfig,
    default_band_width,
    load_config,
    parse_entries,
    save_config,
)

CONFIG = os.path.join(os.path.dirname(__file__), "config.cfg")


def test_load_file():
    model, train = load_config(CONFIG)
    assert model.backbone == "tiny"
    assert (model.hr_size, model.lr_size) == (256, 64)
    assert (train.hr_size, train.lr_size) == (256, 64)
    assert train.batch_size == 2
    assert train.warmup_fraction == 0.25
    # untouched keys keep their defaults
    assert model.aggregation == "tsa"
    assert train.head_lr_max == 0.05


def test_defaults():
    model, train = load_config()
    assert model == ModelConfig()
    assert train == TrainConfig()
    assert train.backbone_lr_max == 0.005
    assert train.epochs == 48
    assert model.band_width == 5


def test_overrides_after_file():
    model, train = load_config(
        CONFIG, ["backbone = 50", "hr_size=512", "lr_size=128", "seed=3"])
    assert model.backbone == "50"
    assert model.hr_size == 512 and train.hr_size == 512
    assert train.seed == 3


@pytest.mark.parametrize("entry, field, expected", [
    ("weight_decay = 1e-05", "weight_decay", 1e-5),
    ("momentum = 1", "momentum", 1.0),
    ("band_width = null", "band_width", None),
    ("band_width = 3", "band_width", 3),
    ("epochs = 4.0", "epochs", 4),
])
def test_coercion(entry, field, expected):
    _, train = load_config(overrides=[entry])
    value = getattr(train, field)
    assert value == expected
    assert type(value) is type(expected)


@pytest.mark.parametrize("entry", [
    "no_such_key = 1",
    "use_dcm = maybe",
    "epochs = 1.5",
    "aggregation = mean",
    "hr_size 1024",
    "backbone = [18, 34]",
])
def test_invalid(entry):
    with pytest.raises(ValueError):
        load_config(overrides=[entry])


def test_comments_and_blank_lines():
    entries = parse_entries(["", "# comment", "epochs = 3  # trailing", "  "])
    assert entries == {"epochs": 3}


def test_roundtrip(tmp_path):
    model = ModelConfig(
        backbone="18", aggregation="concat", use_hr0=False,
        backbone_weights="weights/resnet18.pt")
    train = TrainConfig(weight_decay=5e-5, band_width=2, seed=7)
    path = str(tmp_path / "run.cfg")
    save_config(path, model, train)
    assert load_config(path) == (model, train)


@pytest.mark.parametrize("size, expected", [
    (1024, 5), (2048, 10), (512, 2), (256, 1), (32, 1)])
def test_default_band_width(size, expected):
    assert default_band_width(size) == expected


def test_steps():
    train = TrainConfig(batch_size=8, epochs=3)
    assert train.steps_per_epoch(17) == 2
    assert train.steps_per_epoch(16) == 2
    assert train.steps_per_epoch(7) == 0
    assert train.steps(17) == 6
    assert train.steps(0) == 0
