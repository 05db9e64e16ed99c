"""Convolution blocks shared by the encoder and decoders."""

from collections.abc import Sequence

import torch
import torch.nn.functional as F
from jaxtyping import Float
from torch import Tensor, nn


def upsample(x: Float[Tensor, "B C H W"], size: int) -> Float[Tensor, "B C H2 W2"]:
    """Bilinear resize to a square `size × size` (align corners disabled)."""
    if x.shape[-1] == size and x.shape[-2] == size:
        return x
    return F.interpolate(
        x, size=(size, size), mode="bilinear", align_corners=False)


class ConvBN(nn.Module):
    """1×1 convolution followed by batch normalization (no activation).

    Args:
        in_channels: input width.
        out_channels: output width.
    """

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 1, bias=False)
        self.bn = nn.BatchNorm2d(out_channels)

    def forward(self, x: Float[Tensor, "B Ci H W"]) -> Float[Tensor, "B Co H W"]:
        return self.bn(self.conv(x))


class ConvBNReLU(nn.Module):
    """3×3 convolution, batch normalization, ReLU."""

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(
            in_channels, out_channels, 3, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(out_channels)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x: Float[Tensor, "B Ci H W"]) -> Float[Tensor, "B Co H W"]:
        return self.relu(self.bn(self.conv(x)))


class Reduction(nn.Module):
    """Channel reduction: 1×1 convolution, 3×3 convolution, batch norm.

    Spatial size is unchanged.
    """

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.squeeze = nn.Conv2d(in_channels, out_channels, 1, bias=False)
        self.conv = nn.Conv2d(
            out_channels, out_channels, 3, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(out_channels)

    def forward(self, x: Float[Tensor, "B Ci H W"]) -> Float[Tensor, "B Co H W"]:
        return self.bn(self.conv(self.squeeze(x)))


class CascadeFuse(nn.Module):
    """One dense cascade fusion step.

    The deeper feature is upsampled ×2 and projected; the shallower feature is
    projected; the two are summed.

    Args:
        channels: width of both inputs and of the output.
    """

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.deep = ConvBN(channels, channels)
        self.shallow = ConvBN(channels, channels)

    def forward(
        self, deeper: Float[Tensor, "B C h w"],
        shallower: Float[Tensor, "B C H W"]
    ) -> Float[Tensor, "B C H W"]:
        """Fuse `deeper` into `shallower`.

        Raises:
            ValueError: if `shallower` is not exactly twice the size of
                `deeper`.
        """
        if shallower.shape[-1] != 2 * deeper.shape[-1] or (
                shallower.shape[-2] != 2 * deeper.shape[-2]):
            raise ValueError(
                f"Cascade fusion needs a 2× size ratio: deeper "
                f"{tuple(deeper.shape[-2:])}, shallower "
                f"{tuple(shallower.shape[-2:])}.")
        up = upsample(deeper, shallower.shape[-1])
        return self.deep(up) + self.shallow(shallower)


def check_doubling(features: Sequence[Tensor], name: str) -> None:
    """Require features ordered smallest-first, each twice the previous size.

    Raises:
        ValueError: listing the offending sizes.
    """
    sizes = [int(f.shape[-1]) for f in features]
    for a, b in zip(sizes[:-1], sizes[1:]):
        if b != 2 * a:
            raise ValueError(f"{name} sizes must double at each step: {sizes}")


class CascadeChain(nn.Module):
    """Dense cascade fusion over a smallest-first feature chain.

    Args:
        channels: feature width.
        length: number of input features; there are `length - 1` steps.
    """

    def __init__(self, channels: int, length: int) -> None:
        super().__init__()
        self.steps = nn.ModuleList(
            [CascadeFuse(channels) for _ in range(length - 1)])

    def forward(self, features: Sequence[Tensor]) -> list[Tensor]:
        """Fuse all features.

        Returns:
            Fused features, one per step (the first input is not included).
        """
        if len(features) != len(self.steps) + 1:
            raise ValueError(
                f"Expected {len(self.steps) + 1} features, got {len(features)}.")
        check_doubling(features, "Cascade input")
        out = []
        x = features[0]
        for step, shallower in zip(self.steps, features[1:]):
            x = step(x, shallower)
            out.append(x)
        return out


class SumFusion(nn.Module):
    """Parameter-free replacement for a decoder: upsample and sum.

    Produces the same outputs as a [`CascadeChain`][^.], with each step
    replaced by `up(deeper) + shallower`.
    """

    def forward(self, features: Sequence[Tensor]) -> list[Tensor]:
        check_doubling(features, "Fusion input")
        out = []
        x = features[0]
        for shallower in features[1:]:
            x = upsample(x, shallower.shape[-1]) + shallower
            out.append(x)
        return out


class Aggregation(nn.Module):
    """Gated aggregation of a guide feature with a structure feature.

    With `T` the guide (trunk or mask feature) and `S` the structure feature:

        a = sigmoid(C1(T))
        F = C3(C3(C3(S ⊗ a) + C1(S)) + C1(T))

    where `C1` is a 1×1 convolution + BN and `C3` a 3×3 convolution + BN +
    ReLU. Used with a trunk guide this is the trunk-structure aggregation;
    with the running mask feature as the guide, the mask-structure
    aggregation.

    Args:
        guide_channels: width of `T`.
        channels: width of `S` and of the output.
    """

    def __init__(self, guide_channels: int, channels: int) -> None:
        super().__init__()
        self.attention = ConvBN(guide_channels, channels)
        self.structure_proj = ConvBN(channels, channels)
        self.guide_proj = ConvBN(guide_channels, channels)
        self.gated = ConvBNReLU(channels, channels)
        self.mixed = ConvBNReLU(channels, channels)
        self.out = ConvBNReLU(channels, channels)

    def forward(
        self, guide: Float[Tensor, "B Cg H W"],
        structure: Float[Tensor, "B C H W"]
    ) -> Float[Tensor, "B C H W"]:
        gate = structure * torch.sigmoid(self.attention(guide))
        x = self.mixed(self.gated(gate) + self.structure_proj(structure))
        return self.out(x + self.guide_proj(guide))


class AddAggregation(nn.Module):
    """Plain sum; the guide is projected by `C1` only if widths differ."""

    def __init__(self, guide_channels: int, channels: int) -> None:
        super().__init__()
        self.proj = (
            nn.Identity() if guide_channels == channels
            else ConvBN(guide_channels, channels))

    def forward(
        self, guide: Float[Tensor, "B Cg H W"],
        structure: Float[Tensor, "B C H W"]
    ) -> Float[Tensor, "B C H W"]:
        return self.proj(guide) + structure


class ConcatAggregation(nn.Module):
    """Channel concatenation followed by `C1`."""

    def __init__(self, guide_channels: int, channels: int) -> None:
        super().__init__()
        self.proj = ConvBN(guide_channels + channels, channels)

    def forward(
        self, guide: Float[Tensor, "B Cg H W"],
        structure: Float[Tensor, "B C H W"]
    ) -> Float[Tensor, "B C H W"]:
        return self.proj(torch.cat([guide, structure], dim=1))


AGGREGATIONS: dict[str, type[nn.Module]] = {
    "tsa": Aggregation,
    "add": AddAggregation,
    "concat": ConcatAggregation,
}
