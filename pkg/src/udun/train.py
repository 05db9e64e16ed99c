"""Training loop.

SGD with momentum and weight decay; the backbone and the rest of the network
are separate parameter groups with their own maximum learning rate, both
following the same warm-up / linear decay curve:

```
lr(step) = max_lr * step / warmup                        step < warmup
         = max_lr * (total - step) / (total - warmup)    otherwise
```

with `warmup = round(warmup_fraction * total)`.

!!! info "Outputs"

    A run directory holds `epoch_000.pt` (the initialization) and one
    checkpoint per finished epoch, plus `train.jsonl` with one JSON line per
    optimizer step.
"""

import json
import logging
import math
import os
import pickle
from dataclasses import dataclass, field

import torch
from torch.utils.data import DataLoader

from .config import ModelConfig, TrainConfig
from .constraints import validate_config
from .data import EpochSampler, SampleRecord, SegmentationDataset, discover
from .losses import LabelTensors, total_loss
from .model import UDUN

CHECKPOINT_FORMAT = "udun-checkpoint/1"


class TrainingDiverged(RuntimeError):
    """The loss became NaN or infinite.

    Attributes:
        step: index of the offending optimizer step.
        config: model and training configuration of the run.
    """

    def __init__(self, step: int, config: dict) -> None:
        self.step = step
        self.config = config
        super().__init__(
            f"Non-finite loss at step {step}; configuration:\n"
            f"{json.dumps(config, indent=2)}")


class CheckpointError(ValueError):
    """A checkpoint is unreadable, of an unknown format, or incompatible."""


def lr_schedule(
    step: int, total_steps: int, config: TrainConfig
) -> dict[str, float]:
    """Learning rates of both parameter groups at a step.

    Returns:
        `backbone_lr` and `head_lr`; both are zero at step 0 (if there is a
        warm-up) and from `total_steps` on.
    """
    warmup = round(config.warmup_fraction * total_steps)
    if step >= total_steps or total_steps <= 0:
        scale = 0.0
    elif step < warmup:
        scale = step / warmup
    else:
        scale = (total_steps - step) / (total_steps - warmup)
    scale = min(max(scale, 0.0), 1.0)
    return {
        "backbone_lr": config.backbone_lr_max * scale,
        "head_lr": config.head_lr_max * scale,
    }


def make_optimizer(model: UDUN, config: TrainConfig) -> torch.optim.SGD:
    """SGD with `backbone` and `head` parameter groups (learning rate 0)."""
    return torch.optim.SGD([
        {"params": model.backbone_parameters(), "name": "backbone"},
        {"params": model.head_parameters(), "name": "head"},
    ], lr=0.0, momentum=config.momentum, weight_decay=config.weight_decay)


def save_checkpoint(
    path: str, model: UDUN, train_config: TrainConfig | None = None,
    optimizer: torch.optim.Optimizer | None = None, epoch: int = 0,
    step: int = 0
) -> None:
    """Write a single-file, versioned checkpoint."""
    state = model.state_dict()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "state_dict": state,
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "model_config": model.config.as_dict(),
        "train_config": (
            None if train_config is None else train_config.as_dict()),
        "epoch": epoch,
        "step": step,
        "optimizer": None if optimizer is None else optimizer.state_dict(),
    }, path)


def load_checkpoint(path: str) -> dict:
    """Read a checkpoint.

    Raises:
        CheckpointError: if the file cannot be read or has another format.
    """
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        found = ckpt.get("format") if isinstance(ckpt, dict) else type(ckpt)
        raise CheckpointError(
            f"{path} is not a {CHECKPOINT_FORMAT} checkpoint (found {found}).")
    return ckpt


def model_from_checkpoint(
    path: str, device: str | torch.device = "cpu"
) -> UDUN:
    """Rebuild a model from a checkpoint, in eval mode.

    Raises:
        CheckpointError: if the stored configuration is invalid, or the
            weights do not fit the model it describes.
    """
    ckpt = load_checkpoint(path)
    try:
        config = ModelConfig(**{
            **ckpt["model_config"], "backbone_weights": None})
        model = UDUN(config)
    except (TypeError, ValueError) as e:
        raise CheckpointError(
            f"Checkpoint {path} has an invalid model configuration: {e}"
        ) from e
    try:
        model.load_state_dict(ckpt["state_dict"])
    except RuntimeError as e:
        raise CheckpointError(
            f"Checkpoint {path} does not match its model: {e}") from e
    return model.to(device).eval()


@dataclass
class TrainResult:
    """Outcome of a (possibly partial) run.

    Attributes:
        checkpoint: last checkpoint written.
        log: path of the JSON lines log.
        epoch: number of finished epochs.
        step: number of optimizer steps taken.
        losses: total loss of every step taken in this call.
    """

    checkpoint: str
    log: str
    epoch: int
    step: int
    losses: list[float] = field(default_factory=list)


def _records(
    dataset: str | list[SampleRecord], batch_size: int
) -> list[SampleRecord]:
    records = discover(dataset) if isinstance(dataset, str) else dataset
    if len(records) == 0:
        raise ValueError("Cannot train on an empty dataset.")
    if len(records) < batch_size:
        raise ValueError(
            f"Dataset has {len(records)} samples, fewer than one batch of "
            f"{batch_size}.")
    return records


def train(
    dataset: str | list[SampleRecord], model_config: ModelConfig,
    train_config: TrainConfig, out_dir: str, resume: str | None = None,
    until_epoch: int | None = None, device: str | torch.device = "cpu"
) -> TrainResult:
    """Train a model.

    !!! info "Determinism"

        With `num_workers = 0`, a run is fully determined by the seeds in
        the configuration; a resumed run reproduces the log of an
        uninterrupted one.

    Args:
        dataset: dataset root, or sample records.
        model_config: network configuration.
        train_config: optimization configuration.
        out_dir: run directory for checkpoints and the log.
        resume: checkpoint to continue from; its epoch and step counters,
            weights and optimizer state are restored.
        until_epoch: stop after this many finished epochs (default: all).
        device: training device.

    Raises:
        ValueError: if the dataset is empty or smaller than one batch, or the
            configuration is invalid.
        CheckpointError: if `resume` cannot be used with this configuration.
        TrainingDiverged: if the loss becomes non-finite.
    """
    log = logging.getLogger("udun/train")
    validate_config(model_config, train_config)
    records = _records(dataset, train_config.batch_size)
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train.jsonl")
    run_config = {
        "model": model_config.as_dict(), "train": train_config.as_dict()}

    torch.manual_seed(train_config.seed)
    model = UDUN(model_config).to(device)
    optimizer = make_optimizer(model, train_config)

    start, step = 0, 0
    checkpoint = os.path.join(out_dir, "epoch_000.pt")
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt["model_config"] != model_config.as_dict():
            raise CheckpointError(
                f"Checkpoint {resume} was trained with a different model "
                f"configuration.")
        model.load_state_dict(ckpt["state_dict"])
        if ckpt["optimizer"] is not None:
            optimizer.load_state_dict(ckpt["optimizer"])
        start, step = int(ckpt["epoch"]), int(ckpt["step"])
        checkpoint = resume
        log.info(f"Resuming from {resume} at epoch {start}, step {step}.")
    else:
        save_checkpoint(checkpoint, model, train_config, optimizer, 0, 0)
        with open(log_path, "w"):
            pass

    data = SegmentationDataset(records, train_config, train=True)
    sampler = EpochSampler(len(records), train_config.seed)
    total_steps = train_config.steps(len(records))
    last_epoch = train_config.epochs if until_epoch is None else min(
        until_epoch, train_config.epochs)
    log.info(
        f"Training on {len(records)} samples for {train_config.epochs} "
        f"epochs ({total_steps} steps).")

    losses: list[float] = []
    model.train()
    finished = start
    for epoch in range(start, last_epoch):
        data.set_epoch(epoch)
        sampler.set_epoch(epoch)
        loader = DataLoader(
            data, batch_size=train_config.batch_size, sampler=sampler,
            num_workers=train_config.num_workers, drop_last=True)
        for batch in loader:
            lrs = lr_schedule(step, total_steps, train_config)
            for group in optimizer.param_groups:
                group["lr"] = lrs[f"{group['name']}_lr"]

            out = model(
                batch["image_hr"].to(device),
                batch["image_lr"].to(device) if model_config.dual_input
                else None)
            labels = LabelTensors(
                batch["mask"], batch["trunk"], batch["structure"]).to(device)
            report = total_loss(
                out.mask_logits, out.trunk_logits, out.structure_logits,
                labels)
            value = float(report.total)
            if not math.isfinite(value):
                raise TrainingDiverged(step, run_config)

            optimizer.zero_grad()
            report.total.backward()
            optimizer.step()

            entry = {"epoch": epoch, "step": step, **lrs, **report.as_dict()}
            with open(log_path, "a") as f:
                f.write(json.dumps(entry) + "\n")
            if step % train_config.log_every == 0:
                log.info(
                    f"epoch {epoch} step {step}/{total_steps}: "
                    f"loss {value:.4f} (head lr {lrs['head_lr']:.2e})")
            losses.append(value)
            step += 1

        checkpoint = os.path.join(out_dir, f"epoch_{epoch + 1:03d}.pt")
        save_checkpoint(
            checkpoint, model, train_config, optimizer, epoch + 1, step)
        finished = epoch + 1
        log.debug(f"Wrote {checkpoint}.")

    return TrainResult(
        checkpoint=checkpoint, log=log_path, epoch=finished, step=step,
        losses=losses)
