"""Supervision objective.

The total loss is the unweighted sum of

- BCE between the trunk logits and the trunk label,
- BCE between the structure logits and the structure label,
- BCE plus IoU loss between the mask logits and the mask label.

Terms of an ablated decoder are zero and recorded as absent.
"""

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from jaxtyping import Float
from torch import Tensor

from .labels import LabelTriplet


def bce_loss(
    logits: Float[Tensor, "*B H W"], target: Float[Tensor, "*B H W"]
) -> Float[Tensor, ""]:
    """Binary cross entropy, averaged over pixels.

    Evaluated on logits (`log σ(x)` in its numerically safe form), which is
    the same as `−[g log f + (1 − g) log(1 − f)]` with `f = σ(x)`.
    """
    return F.binary_cross_entropy_with_logits(logits, target)


def iou_loss(
    pred: Float[Tensor, "*B H W"], target: Float[Tensor, "*B H W"]
) -> Float[Tensor, ""]:
    """Soft IoU loss `1 − Σ fg / Σ (f + g − fg)` over each image.

    Leading dimensions are images; the result is averaged over them. An image
    where both `f` and `g` are all zero has loss 0.
    """
    inter = (pred * target).sum(dim=(-2, -1))
    union = (pred + target - pred * target).sum(dim=(-2, -1))
    safe = torch.where(union > 0, union, torch.ones_like(union))
    loss = torch.where(union > 0, 1 - inter / safe, torch.zeros_like(union))
    return loss.mean()


@dataclass
class LabelTensors:
    """A batch of label triplets as `(B, 1, H, W)` float tensors."""

    mask: Float[Tensor, "B 1 H W"]
    trunk: Float[Tensor, "B 1 H W"]
    structure: Float[Tensor, "B 1 H W"]

    @classmethod
    def from_triplets(cls, triplets: Sequence[LabelTriplet]) -> "LabelTensors":
        """Stack label triplets into a batch."""
        def _stack(name: str) -> Tensor:
            arr = np.stack([getattr(t, name) for t in triplets])[:, None]
            return torch.from_numpy(arr.astype(np.float32))
        return cls(_stack("mask"), _stack("trunk"), _stack("structure"))

    def to(self, device: torch.device | str) -> "LabelTensors":
        """Move to a device."""
        return LabelTensors(
            self.mask.to(device), self.trunk.to(device),
            self.structure.to(device))


@dataclass
class LossReport:
    """Loss terms of one step.

    Attributes:
        trunk_bce: trunk BCE (zero if absent).
        structure_bce: structure BCE (zero if absent).
        mask_bce: mask BCE.
        mask_iou: mask IoU loss.
        total: sum of all four terms.
        absent: names of the terms whose decoder was ablated.
    """

    trunk_bce: Tensor
    structure_bce: Tensor
    mask_bce: Tensor
    mask_iou: Tensor
    total: Tensor
    absent: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, float | list[str]]:
        """Plain floats, e.g. for logging."""
        return {
            "trunk_bce": float(self.trunk_bce),
            "structure_bce": float(self.structure_bce),
            "mask_bce": float(self.mask_bce),
            "mask_iou": float(self.mask_iou),
            "total": float(self.total),
            "absent": list(self.absent),
        }


def total_loss(
    mask_logits: Float[Tensor, "*B H W"],
    trunk_logits: Float[Tensor, "*B H W"] | None,
    structure_logits: Float[Tensor, "*B H W"] | None,
    labels: LabelTensors,
) -> LossReport:
    """Composite loss over the three predicted maps.

    Args:
        mask_logits: final mask logits.
        trunk_logits: trunk logits, or `None` if the trunk decoder is ablated.
        structure_logits: structure logits, or `None` if the structure
            decoder is ablated.
        labels: matching labels, at the same resolution.

    Raises:
        ValueError: if a prediction does not match the label resolution.
    """
    for name, logits in (
        ("mask", mask_logits), ("trunk", trunk_logits),
        ("structure", structure_logits)
    ):
        if logits is not None and logits.shape != labels.mask.shape:
            raise ValueError(
                f"{name} logits {tuple(logits.shape)} do not match labels "
                f"{tuple(labels.mask.shape)}.")

    zero = mask_logits.new_zeros(())
    absent = []
    if trunk_logits is None:
        trunk = zero
        absent.append("trunk_bce")
    else:
        trunk = bce_loss(trunk_logits, labels.trunk)
    if structure_logits is None:
        structure = zero
        absent.append("structure_bce")
    else:
        structure = bce_loss(structure_logits, labels.structure)

    mask_bce = bce_loss(mask_logits, labels.mask)
    mask_iou = iou_loss(torch.sigmoid(mask_logits), labels.mask)
    return LossReport(
        trunk_bce=trunk, structure_bce=structure, mask_bce=mask_bce,
        mask_iou=mask_iou, total=trunk + structure + mask_bce + mask_iou,
        absent=absent)
