"""Union encoder: dual-size backbone passes, channel reduction and DCM routing.

The backbone produces a five-level pyramid for each input size, `HR1..HR5`
from the large input and `LR1..LR5` from the small one. The divide-and-conquer
routing (DCM) then splits the ten features by destination:

| Destination        | With DCM                          | Without DCM          |
|--------------------|-----------------------------------|----------------------|
| trunk decoder      | LR5, LR4, HR5, HR4, HR3           | LR5 ... LR1          |
| structure decoder  | LR3, LR2, LR1, HR2, HR1, (HR0)    | HR5 ... HR1, (HR0)   |

Each group is ordered smallest-first, and (for `hr_size = 4 × lr_size`)
forms a chain which doubles in size at every step. The channel width of each
feature is set by its destination: `trunk_channels` for the trunk decoder and
`structure_channels` for the structure decoder.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import torch.nn.functional as F
from jaxtyping import Float
from torch import Tensor, nn

from ..config import ModelConfig
from .backbone import Backbone, build_backbone
from .blocks import Reduction

Route = tuple[str, int]


def routing(use_dcm: bool) -> tuple[list[Route], list[Route]]:
    """Get the `(source, level)` routes of the trunk and structure groups.

    Sources are `"hr"` and `"lr"`; levels are `1..5`. Both lists are ordered
    smallest-first, and exclude `HR0`.
    """
    if use_dcm:
        return (
            [("lr", 5), ("lr", 4), ("hr", 5), ("hr", 4), ("hr", 3)],
            [("lr", 3), ("lr", 2), ("lr", 1), ("hr", 2), ("hr", 1)])
    return (
        [("lr", i) for i in range(5, 0, -1)],
        [("hr", i) for i in range(5, 0, -1)])


@dataclass
class EncoderOutput:
    """Encoder features, grouped by destination decoder.

    Attributes:
        trunk_inputs: five features, smallest first, each `trunk_channels`
            wide.
        structure_inputs: five or six (with `HR0`) features, smallest first,
            each `structure_channels` wide.
    """

    trunk_inputs: list[Tensor]
    structure_inputs: list[Tensor]


def _check_pyramid(features: Sequence[Tensor], name: str) -> None:
    sizes = [int(f.shape[-1]) for f in features]
    if len(sizes) != 5 or any(a != 2 * b for a, b in zip(sizes[:-1], sizes[1:])):
        raise ValueError(
            f"{name} must be 5 levels, each half the size of the previous; "
            f"got sizes {sizes}.")


def dcm_regroup(
    hr: Sequence[Tensor], lr: Sequence[Tensor], hr0: Tensor | None = None,
    use_dcm: bool = True
) -> EncoderOutput:
    """Regroup the two (channel-reduced) pyramids by destination decoder.

    Args:
        hr: large-input features `HR1..HR5` (largest first).
        lr: small-input features `LR1..LR5` (largest first).
        hr0: optional full-resolution shallow feature.
        use_dcm: cross-input regrouping; if `False`, the trunk group is the
            small-input pyramid and the structure group the large-input one.

    Returns:
        Trunk and structure groups, smallest first.

    Raises:
        ValueError: if a pyramid is not a 5-level halving chain, `hr0` is not
            twice the size of `HR1`, or features within a group have
            different widths.
    """
    _check_pyramid(hr, "HR pyramid")
    _check_pyramid(lr, "LR pyramid")
    if hr0 is not None and hr0.shape[-1] != 2 * hr[0].shape[-1]:
        raise ValueError(
            f"HR0 ({hr0.shape[-1]}) must be twice the size of HR1 "
            f"({hr[0].shape[-1]}).")

    pick = {"hr": hr, "lr": lr}
    trunk_routes, structure_routes = routing(use_dcm)
    trunk = [pick[src][level - 1] for src, level in trunk_routes]
    structure = [pick[src][level - 1] for src, level in structure_routes]
    if hr0 is not None:
        structure.append(hr0)

    for name, group in (("trunk", trunk), ("structure", structure)):
        widths = {int(f.shape[1]) for f in group}
        if len(widths) != 1:
            raise ValueError(f"Mixed widths in the {name} group: {widths}")
    return EncoderOutput(trunk_inputs=trunk, structure_inputs=structure)


class ChannelReduction(nn.Module):
    """Per-level channel reduction of one pyramid.

    Each level has its own [`Reduction`][^.blocks.] block (1×1 conv, 3×3
    conv, BN); spatial sizes are unchanged.

    Args:
        in_channels: input width of each level.
        targets: output width of each level.
    """

    def __init__(
        self, in_channels: Sequence[int], targets: Sequence[int]
    ) -> None:
        super().__init__()
        if len(in_channels) != len(targets):
            raise ValueError(
                f"{len(in_channels)} levels but {len(targets)} targets.")
        self.blocks = nn.ModuleList(
            [Reduction(c, t) for c, t in zip(in_channels, targets)])

    def forward(self, features: Sequence[Tensor]) -> list[Tensor]:
        if len(features) != len(self.blocks):
            raise ValueError(
                f"Expected {len(self.blocks)} features, got {len(features)}.")
        return [block(f) for block, f in zip(self.blocks, features)]


def reduce_channels(
    features: Sequence[Tensor], target: int
) -> list[Tensor]:
    """Reduce every feature to `target` channels with fresh reduction blocks.

    Stand-alone form of [`ChannelReduction`][^.] for one target width; the
    blocks are created on the fly (on the features' device and dtype).
    """
    if target <= 0:
        raise ValueError(f"Target width must be positive, got {target}.")
    reduce = ChannelReduction(
        [int(f.shape[1]) for f in features], [target] * len(features))
    reduce = reduce.to(device=features[0].device, dtype=features[0].dtype)
    return reduce(features)


class HR0Path(nn.Module):
    """Shallow full-resolution path, applied directly to the large input.

    3×3 convolution + BN + ReLU, then 1×1 convolution + BN.
    """

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(3, channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 1, bias=False),
            nn.BatchNorm2d(channels))

    def forward(self, image: Float[Tensor, "B 3 H W"]) -> Float[Tensor, "B C H W"]:
        return self.layers(image)


class UnionEncoder(nn.Module):
    """Shared (or twin) backbone over both input sizes, with DCM routing.

    Args:
        config: model configuration.
    """

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        self.backbone: Backbone = build_backbone(config.backbone)
        self.backbone_lr: Backbone | None = (
            None if config.shared_backbone
            else build_backbone(config.backbone))

        trunk_routes, _ = routing(config.use_dcm)
        channels = config.backbone_channels

        def _targets(src: str) -> list[int]:
            return [
                config.trunk_channels if (src, level) in trunk_routes
                else config.structure_channels for level in range(1, 6)]

        self.reduce_hr = ChannelReduction(channels, _targets("hr"))
        self.reduce_lr = ChannelReduction(channels, _targets("lr"))
        self.hr0: HR0Path | None = (
            HR0Path(config.structure_channels) if config.use_hr0 else None)

    def backbone_forward(
        self, image_hr: Float[Tensor, "B 3 H W"],
        image_lr: Float[Tensor, "B 3 h w"] | None = None
    ) -> tuple[list[Tensor], list[Tensor]]:
        """Run the backbone(s) over both inputs.

        With `dual_input = false`, `image_lr` must be `None`, and the small
        pyramid is average-pooled from the large one.

        Returns:
            The raw `HR1..HR5` and `LR1..LR5` taps.
        """
        hr = self.backbone(image_hr)
        if self.config.dual_input:
            if image_lr is None:
                raise ValueError("Dual-input model needs the small input.")
            net = self.backbone if self.backbone_lr is None else self.backbone_lr
            lr = net(image_lr)
        else:
            if image_lr is not None:
                raise ValueError("Single-input model takes no small input.")
            factor = self.config.hr_size // self.config.lr_size
            lr = [F.avg_pool2d(f, factor) for f in hr]
        return hr, lr

    def hr0_path(self, image_hr: Float[Tensor, "B 3 H W"]) -> Float[Tensor, "B C H W"]:
        """Full-resolution shallow feature `HR0`.

        Raises:
            ValueError: if the model was built with `use_hr0 = false`.
        """
        if self.hr0 is None:
            raise ValueError("HR0 path is disabled (use_hr0 = false).")
        return self.hr0(image_hr)

    def forward(
        self, image_hr: Float[Tensor, "B 3 H W"],
        image_lr: Float[Tensor, "B 3 h w"] | None = None
    ) -> EncoderOutput:
        hr, lr = self.backbone_forward(image_hr, image_lr)
        hr0 = None if self.hr0 is None else self.hr0_path(image_hr)
        return dcm_regroup(
            self.reduce_hr(hr), self.reduce_lr(lr), hr0, self.config.use_dcm)
