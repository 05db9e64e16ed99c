"""Model and training configuration.

Both configurations are plain dataclasses, and can be stored together in a
single flat `key = value` text file:

```
# model
backbone = tiny
hr_size = 256
lr_size = 64
aggregation = tsa

# training
epochs = 4
batch_size = 2
```

Values are parsed as YAML scalars, then coerced to the declared field type.
Keys which appear in both configurations (`hr_size`, `lr_size`) are applied
to both.
"""

import dataclasses
import types
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Any, Literal, Union, get_args, get_origin

import yaml

IMAGENET_MEAN = (0.485, 0.456, 0.406)
"""Channel means used to normalize network inputs."""

IMAGENET_STD = (0.229, 0.224, 0.225)
"""Channel standard deviations used to normalize network inputs."""

BACKBONE_CHANNELS: dict[str, tuple[int, int, int, int, int]] = {
    "18": (64, 64, 128, 256, 512),
    "34": (64, 64, 128, 256, 512),
    "50": (64, 256, 512, 1024, 2048),
    "tiny": (16, 16, 32, 64, 128),
}
"""Output widths of the five backbone taps (stem, then four stages)."""


def default_band_width(size: int) -> int:
    """Structure band width for a given image side length.

    Five pixels at 1024×1024, scaled proportionally, and at least one.
    """
    return max(1, round(5 * size / 1024))


@dataclass
class ModelConfig:
    """Network configuration.

    !!! info

        Attributes marked with *(derived)* are computed from other attributes,
        i.e., are `@property` attributes.

    Attributes:
        backbone: backbone depth; `18`, `34` and `50` are torchvision ResNets,
            `tiny` is a small 5-stage residual network for desk-scale runs.
        shared_backbone: use the same backbone weights for both input sizes;
            otherwise, a second backbone is built for the small input.
        dual_input: feed the image at both `hr_size` and `lr_size`. If
            `False`, only the large input is passed through the backbone, and
            the small pyramid is pooled from it.
        trunk_channels: width of every trunk-stream feature.
        structure_channels: width of every structure-stream and union-decoder
            feature.
        head_channels: width of the hidden layer of the final prediction head.
        hr_size: side length of the large input, in pixels.
        lr_size: side length of the small input, in pixels.
        use_dcm: regroup the two pyramids across inputs; if `False`, the trunk
            decoder gets the small-input pyramid and the structure decoder gets
            the large-input pyramid.
        use_hr0: compute a full-resolution shallow feature directly from the
            large input.
        use_filtering: subtract the projected trunk taps from the
            structure-decoder inputs.
        aggregation: union-decoder fusion; `tsa` uses the gated attention
            blocks, `add` and `concat` replace them with a plain sum or a
            concatenation followed by a 1×1 convolution.
        use_trunk_decoder: build the trunk decoder; if `False`, its features
            are replaced by an upsample-and-sum of its inputs.
        use_structure_decoder: same, for the structure decoder.
        backbone_weights: optional path to externally produced backbone
            weights (a torch state dict).
        init_seed: seed for the random initialization of all weights.
        backbone_channels: *(derived)* widths of the five backbone taps.
        band_width: *(derived)* default structure band width at `hr_size`.
    """

    backbone: Literal["18", "34", "50", "tiny"] = "50"
    shared_backbone: bool = True
    dual_input: bool = True
    trunk_channels: int = 64
    structure_channels: int = 32
    head_channels: int = 16
    hr_size: int = 1024
    lr_size: int = 256
    use_dcm: bool = True
    use_hr0: bool = True
    use_filtering: bool = True
    aggregation: Literal["tsa", "add", "concat"] = "tsa"
    use_trunk_decoder: bool = True
    use_structure_decoder: bool = True
    backbone_weights: str | None = None
    init_seed: int = 0

    @property
    def backbone_channels(self) -> tuple[int, int, int, int, int]:
        return BACKBONE_CHANNELS[self.backbone]

    @property
    def band_width(self) -> int:
        return default_band_width(self.hr_size)

    def as_dict(self) -> dict[str, Any]:
        """Get configuration as a JSON-serializable dictionary."""
        return dataclasses.asdict(self)


@dataclass
class TrainConfig:
    """Training recipe.

    Attributes:
        backbone_lr_max: peak learning rate of the backbone parameters.
        head_lr_max: peak learning rate of every other parameter.
        batch_size: number of samples per step.
        epochs: number of passes over the dataset.
        warmup_fraction: fraction of all steps spent ramping the learning rate
            up from zero.
        momentum: SGD momentum.
        weight_decay: SGD weight decay.
        seed: seed for the epoch order and the data augmentation.
        hr_size: training resolution (large input); must match the model.
        lr_size: small input resolution; must match the model.
        flip_prob: probability of a horizontal flip.
        crop_min: smallest random crop, as a fraction of the image side.
        band_width: structure band width; `None` derives it from `hr_size`.
        num_workers: data loading worker processes.
        log_every: also log a human-readable loss summary every this many
            steps (the JSON log always has every step).
    """

    backbone_lr_max: float = 0.005
    head_lr_max: float = 0.05
    batch_size: int = 8
    epochs: int = 48
    warmup_fraction: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    hr_size: int = 1024
    lr_size: int = 256
    flip_prob: float = 0.5
    crop_min: float = 0.75
    band_width: int | None = None
    num_workers: int = 0
    log_every: int = 10

    def steps(self, num_samples: int) -> int:
        """Total number of optimizer steps over `num_samples` samples."""
        return self.epochs * self.steps_per_epoch(num_samples)

    def steps_per_epoch(self, num_samples: int) -> int:
        """Number of full batches per epoch; a partial batch is dropped."""
        return num_samples // self.batch_size

    def as_dict(self) -> dict[str, Any]:
        """Get configuration as a JSON-serializable dictionary."""
        return dataclasses.asdict(self)


def _coerce(value: Any, tp: Any, key: str) -> Any:
    """Coerce a parsed YAML scalar to a dataclass field type."""
    origin = get_origin(tp)
    if origin is Union or origin is types.UnionType:
        options = get_args(tp)
        if value is None and type(None) in options:
            return None
        for option in options:
            if option is type(None):
                continue
            try:
                return _coerce(value, option, key)
            except ValueError:
                pass
        raise ValueError(f"{key}: cannot interpret {value!r} as {tp}")

    if origin is Literal:
        choices = get_args(tp)
        text = str(value)
        for choice in choices:
            if str(choice) == text:
                return choice
        raise ValueError(f"{key}: {value!r} is not one of {choices}")

    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ValueError(f"{key}: expected true/false, got {value!r}")
    if tp in (int, float) and isinstance(value, str):
        # yaml reads exponents without a dot (`1e-05`) as strings
        try:
            value = float(value)
        except ValueError:
            raise ValueError(f"{key}: expected a number, got {value!r}")
    if tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ValueError(f"{key}: expected an integer, got {value!r}")
    if tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ValueError(f"{key}: expected a number, got {value!r}")
    if tp is str:
        if value is None or isinstance(value, (list, dict)):
            raise ValueError(f"{key}: expected a string, got {value!r}")
        return str(value)

    raise ValueError(f"{key}: unsupported field type {tp}")


def parse_entries(lines: Iterable[str]) -> dict[str, Any]:
    """Parse `key = value` lines into a dictionary of YAML scalars.

    Blank lines and `#` comments are skipped.

    Raises:
        ValueError: a line has no `=`, or a value is not a scalar.
    """
    entries: dict[str, Any] = {}
    for i, raw in enumerate(lines):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {i + 1}: expected `key = value`: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        parsed = yaml.safe_load(value) if value else None
        if isinstance(parsed, (list, dict)):
            raise ValueError(f"line {i + 1}: {key} must be a scalar: {raw!r}")
        entries[key] = parsed
    return entries


def apply_entries(
    model: ModelConfig, train: TrainConfig, entries: dict[str, Any]
) -> tuple[ModelConfig, TrainConfig]:
    """Apply parsed entries to copies of the given configurations.

    Raises:
        ValueError: unknown key or a value of the wrong type.
    """
    model_fields = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}

    model_kw: dict[str, Any] = {}
    train_kw: dict[str, Any] = {}
    for key, value in entries.items():
        if key not in model_fields and key not in train_fields:
            raise ValueError(f"unknown config key: {key}")
        if key in model_fields:
            model_kw[key] = _coerce(value, model_fields[key], key)
        if key in train_fields:
            train_kw[key] = _coerce(value, train_fields[key], key)

    return (
        dataclasses.replace(model, **model_kw),
        dataclasses.replace(train, **train_kw))


def load_config(
    path: str | None = None, overrides: Sequence[str] = ()
) -> tuple[ModelConfig, TrainConfig]:
    """Load model and training configuration.

    Args:
        path: `key = value` config file; if `None`, start from the defaults.
        overrides: additional `key=value` strings, applied after the file.

    Returns:
        Model and training configuration.
    """
    model, train = ModelConfig(), TrainConfig()
    if path is not None:
        with open(path) as f:
            model, train = apply_entries(model, train, parse_entries(f))
    if overrides:
        model, train = apply_entries(
            model, train, parse_entries(overrides))
    return model, train


def save_config(
    path: str, model: ModelConfig, train: TrainConfig | None = None
) -> None:
    """Write configuration in the format read by [`load_config`][^.]."""
    def _fmt(value: Any) -> str:
        if value is None:
            return "null"
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, str):
            return yaml.safe_dump(value, default_style=None).split("\n")[0]
        return repr(value)

    lines = ["# model"]
    lines += [f"{k} = {_fmt(v)}" for k, v in model.as_dict().items()]
    if train is not None:
        shared = set(model.as_dict())
        lines += ["", "# training"]
        lines += [
            f"{k} = {_fmt(v)}" for k, v in train.as_dict().items()
            if k not in shared]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
