"""Model and training configuration constraints.

This module documents and enforces the constraints a configuration must meet
for the network to be well-formed (every fusion pairs features of the same
size) and for training to be meaningful.

## Summary

| Constraint | Description |
|------------|-------------|
| [`SizeDivisibility`][.] | Input sizes divisible by 32 |
| [`DualSizeRatio`][.] | `hr_size = 4 × lr_size` |
| [`DecoderPresence`][.] | At least one of the trunk/structure decoders |
| [`ChannelWidths`][.] | All channel widths positive |
| [`SharedBackboneInput`][.] | A second backbone needs a second input |
| [`BackboneWeights`][.] | Backbone weight file exists |
| [`InputSizes`][.] | Training and model input sizes agree |
| [`LearningRates`][.] | Positive rates, warm-up fraction in [0, 1) |
| [`BatchSize`][.] | Batch size ≥ 1, epochs ≥ 0 |
"""

import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass

from .config import ModelConfig, TrainConfig


class Constraint(ABC):
    """Base class for a configuration constraint."""

    @staticmethod
    @abstractmethod
    def check(
        model: ModelConfig, train: TrainConfig | None = None
    ) -> "ConstraintCheck":
        """Return a [`ConstraintCheck`][udun.constraints.ConstraintCheck] result."""


@dataclass(frozen=True)
class ConstraintCheck:
    """Result of a single constraint check.

    Attributes:
        constraint: type of the constraint being checked.
        passed: `True` if the constraint is satisfied, `False` if violated, or
            `None` if not applicable.
        detail: checked value (on pass/skip) or violation description
            (on fail).
    """

    constraint: type[Constraint]
    passed: bool | None
    detail: str


class SizeDivisibility(Constraint):
    """Both input sizes must be divisible by 32.

    The backbone halves its input five times:

        hr_size % 32 == 0 and lr_size % 32 == 0
    """

    @staticmethod
    def check(model, train=None):
        bad = [
            f"{k} = {v}" for k, v in
            (("hr_size", model.hr_size), ("lr_size", model.lr_size))
            if v <= 0 or v % 32 != 0]
        if bad:
            return ConstraintCheck(
                SizeDivisibility, False,
                ", ".join(bad) + " (must be a positive multiple of 32)")
        return ConstraintCheck(
            SizeDivisibility, True,
            f"hr_size = {model.hr_size}, lr_size = {model.lr_size}")


class DualSizeRatio(Constraint):
    """The large input must be exactly four times the small input.

    The trunk decoder consumes the three deepest large-input levels together
    with the two deepest small-input levels, which must form one doubling
    chain; likewise for the structure decoder:

        hr_size == 4 × lr_size
    """

    @staticmethod
    def check(model, train=None):
        passed = model.hr_size == 4 * model.lr_size
        detail = f"hr_size / lr_size = {model.hr_size / model.lr_size:g}"
        if not passed:
            detail += " (must be 4)"
        return ConstraintCheck(DualSizeRatio, passed, detail)


class DecoderPresence(Constraint):
    """At least one of the trunk and structure decoders must be enabled."""

    @staticmethod
    def check(model, train=None):
        passed = model.use_trunk_decoder or model.use_structure_decoder
        detail = (
            f"trunk decoder = {model.use_trunk_decoder}, "
            f"structure decoder = {model.use_structure_decoder}")
        if not passed:
            detail += " (cannot disable both)"
        return ConstraintCheck(DecoderPresence, passed, detail)


class ChannelWidths(Constraint):
    """Trunk, structure and head widths must be positive."""

    @staticmethod
    def check(model, train=None):
        widths = {
            "trunk_channels": model.trunk_channels,
            "structure_channels": model.structure_channels,
            "head_channels": model.head_channels}
        bad = [f"{k} = {v}" for k, v in widths.items() if v <= 0]
        if bad:
            return ConstraintCheck(
                ChannelWidths, False, ", ".join(bad) + " (must be > 0)")
        return ConstraintCheck(
            ChannelWidths, True,
            ", ".join(f"{k} = {v}" for k, v in widths.items()))


class SharedBackboneInput(Constraint):
    """A separate small-input backbone requires the small input.

    With `dual_input = false` the small pyramid is pooled from the large one,
    so a second backbone would never be used.
    """

    @staticmethod
    def check(model, train=None):
        passed = model.shared_backbone or model.dual_input
        detail = (
            f"shared_backbone = {model.shared_backbone}, "
            f"dual_input = {model.dual_input}")
        if not passed:
            detail += " (non-shared backbones need dual input)"
        return ConstraintCheck(SharedBackboneInput, passed, detail)


class BackboneWeights(Constraint):
    """The backbone weight file, if any, must exist."""

    @staticmethod
    def check(model, train=None):
        path = model.backbone_weights
        if path is None:
            return ConstraintCheck(
                BackboneWeights, None, "random initialization")
        passed = os.path.isfile(path)
        detail = f"backbone_weights = {path}"
        if not passed:
            detail += " (file not found)"
        return ConstraintCheck(BackboneWeights, passed, detail)


class InputSizes(Constraint):
    """Training input sizes must match the model input sizes."""

    @staticmethod
    def check(model, train=None):
        if train is None:
            return ConstraintCheck(InputSizes, None, "no train config provided")
        passed = (
            train.hr_size == model.hr_size and train.lr_size == model.lr_size)
        detail = (
            f"train {train.hr_size}/{train.lr_size}, "
            f"model {model.hr_size}/{model.lr_size}")
        if not passed:
            detail += " (must match)"
        return ConstraintCheck(InputSizes, passed, detail)


class LearningRates(Constraint):
    """Learning rates must be positive; warm-up must leave room to decay.

        backbone_lr_max > 0, head_lr_max > 0, 0 ≤ warmup_fraction < 1
    """

    @staticmethod
    def check(model, train=None):
        if train is None:
            return ConstraintCheck(
                LearningRates, None, "no train config provided")
        detail = (
            f"backbone_lr_max = {train.backbone_lr_max}, "
            f"head_lr_max = {train.head_lr_max}, "
            f"warmup_fraction = {train.warmup_fraction}")
        if train.backbone_lr_max <= 0 or train.head_lr_max <= 0:
            return ConstraintCheck(
                LearningRates, False, detail + " (rates must be > 0)")
        if not 0 <= train.warmup_fraction < 1:
            return ConstraintCheck(
                LearningRates, False,
                detail + " (warmup_fraction must be in [0, 1))")
        return ConstraintCheck(LearningRates, True, detail)


class BatchSize(Constraint):
    """Batch size must be at least one; epochs must not be negative.

    Batch normalization in training mode needs more than one value per
    channel. The coarsest feature map is `lr_size / 32` on a side, so

        batch_size · (lr_size / 32)² ≥ 2

    Batches are always full; a trailing partial batch is dropped.
    """

    @staticmethod
    def check(model, train=None):
        if train is None:
            return ConstraintCheck(BatchSize, None, "no train config provided")
        values = train.batch_size * (train.lr_size // 32) ** 2
        detail = (
            f"batch_size = {train.batch_size}, epochs = {train.epochs}, "
            f"coarsest batch = {values} values per channel")
        if train.batch_size < 1 or train.epochs < 0:
            return ConstraintCheck(
                BatchSize, False,
                detail + " (need batch_size ≥ 1 and epochs ≥ 0)")
        if values < 2:
            return ConstraintCheck(
                BatchSize, False,
                detail + " (batch normalization needs at least 2)")
        return ConstraintCheck(BatchSize, True, detail)


CONSTRAINTS: list[type[Constraint]] = [
    SizeDivisibility,
    DualSizeRatio,
    DecoderPresence,
    ChannelWidths,
    SharedBackboneInput,
    BackboneWeights,
    InputSizes,
    LearningRates,
    BatchSize,
]


def check_config(
    model: ModelConfig,
    train: TrainConfig | None = None,
    log: bool = True,
) -> list[ConstraintCheck]:
    """Run all constraints against a configuration.

    Args:
        model: model configuration.
        train: training configuration; training constraints are skipped if
            not provided.
        log: if `True`, log each result at INFO level (pass/skip) or WARNING
            level (fail) using the `udun/constraints` logger.

    Returns:
        All constraint results, including passed and skipped checks.
    """
    results = [C.check(model, train) for C in CONSTRAINTS]
    if log:
        logger = logging.getLogger("udun/constraints")
        for r in results:
            name = r.constraint.__name__
            if r.passed is False:
                logger.warning(f"Invalid - {name}: {r.detail}")
            else:
                logger.info(
                    f"{'skipped' if r.passed is None else 'pass'}"
                    f" | {name}: {r.detail}")
    return results


def validate_config(
    model: ModelConfig, train: TrainConfig | None = None,
    strict: bool = True
) -> None:
    """Check a configuration, and raise if strict and any check failed.

    Raises:
        ValueError: listing every failed check, if `strict`.
    """
    failed = [r for r in check_config(model, train) if r.passed is False]
    if failed and strict:
        raise ValueError(
            "Invalid configuration:\n" + "\n".join(
                f"  {r.constraint.__name__}: {r.detail}" for r in failed))
