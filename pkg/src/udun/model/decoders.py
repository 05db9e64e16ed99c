"""Trunk, structure and union decoders."""

from collections.abc import Sequence
from dataclasses import dataclass

from jaxtyping import Float
from torch import Tensor, nn

from .blocks import (
    AGGREGATIONS,
    CascadeChain,
    ConvBN,
    ConvBNReLU,
    SumFusion,
    check_doubling,
    upsample,
)


@dataclass
class TrunkDecoderOutput:
    """Trunk decoder result.

    Attributes:
        logits: trunk logits at the output size, or `None` if the decoder is
            replaced by a plain upsample-and-sum.
        taps: the three largest fused features `T32, T43, T54`, smallest
            first.
    """

    logits: Tensor | None
    taps: list[Tensor]

    @property
    def final(self) -> Tensor:
        """The fused trunk feature `T54`."""
        return self.taps[-1]


@dataclass
class StructureDecoderOutput:
    """Structure decoder result.

    Attributes:
        logits: structure logits at the output size, or `None` if the decoder
            is replaced by a plain upsample-and-sum.
        filtered: the trunk-filtered inputs `S1, S2, S3`, smallest first.
        fused_taps: fused features larger than `S3` (three with `HR0`, two
            without), smallest first; the last one is `S65`.
    """

    logits: Tensor | None
    filtered: list[Tensor]
    fused_taps: list[Tensor]

    @property
    def final(self) -> Tensor:
        """The integrated structure feature `S65`."""
        return self.fused_taps[-1]


class TrunkDecoder(nn.Module):
    """Dense cascade fusion of the five trunk inputs.

    Four fusion steps produce `T21, T32, T43, T54`; a 3×3 convolution on
    `T54` predicts the trunk logits.

    Args:
        channels: trunk feature width.
        enabled: if `False`, the learned fusion is replaced with
            [`SumFusion`][^.blocks.] and no logits are produced.
    """

    def __init__(self, channels: int, enabled: bool = True) -> None:
        super().__init__()
        self.fuse: nn.Module = CascadeChain(channels, 5) if enabled else SumFusion()
        self.head: nn.Module | None = (
            nn.Conv2d(channels, 1, 3, padding=1) if enabled else None)

    def forward(
        self, inputs: Sequence[Tensor], out_size: int
    ) -> TrunkDecoderOutput:
        """Fuse trunk inputs (smallest first).

        Raises:
            ValueError: if there are not five inputs, or their sizes do not
                double at each step.
        """
        if len(inputs) != 5:
            raise ValueError(f"Trunk decoder needs 5 inputs, got {len(inputs)}.")
        fused = self.fuse(inputs)
        logits = None
        if self.head is not None:
            logits = upsample(self.head(fused[-1]), out_size)
        return TrunkDecoderOutput(logits=logits, taps=fused[-3:])


class StructureFilter(nn.Module):
    """Trunk-guided filtering: `S = LR − C1(T)`.

    Args:
        trunk_channels: width of `T`.
        structure_channels: width of `LR` and of the output.
    """

    def __init__(self, trunk_channels: int, structure_channels: int) -> None:
        super().__init__()
        self.proj = ConvBN(trunk_channels, structure_channels)

    def forward(
        self, lr_feature: Float[Tensor, "B C H W"],
        trunk_tap: Float[Tensor, "B Ct H W"]
    ) -> Float[Tensor, "B C H W"]:
        return lr_feature - self.proj(trunk_tap)


class StructureDecoder(nn.Module):
    """Trunk-filtered upsampling fusion of the structure inputs.

    The three smallest inputs are filtered by the trunk taps of matching
    size; the chain `S1 → S2 → S3 → HR2 → HR1 (→ HR0)` is then fused with the
    same step as the trunk decoder, and a 3×3 convolution on the final
    feature `S65` predicts the structure logits.

    Args:
        trunk_channels: trunk feature width.
        channels: structure feature width.
        num_inputs: `6` with `HR0`, `5` without.
        use_filtering: subtract the projected trunk taps; if `False` the
            inputs pass unchanged.
        enabled: if `False`, filtering and the learned fusion are replaced
            with [`SumFusion`][^.blocks.] and no logits are produced.
    """

    def __init__(
        self, trunk_channels: int, channels: int, num_inputs: int = 6,
        use_filtering: bool = True, enabled: bool = True
    ) -> None:
        super().__init__()
        self.num_inputs = num_inputs
        self.filters = nn.ModuleList([
            StructureFilter(trunk_channels, channels) for _ in range(3)
        ]) if (use_filtering and enabled) else None
        self.fuse: nn.Module = (
            CascadeChain(channels, num_inputs) if enabled else SumFusion())
        self.head: nn.Module | None = (
            nn.Conv2d(channels, 1, 3, padding=1) if enabled else None)

    def filter_inputs(
        self, inputs: Sequence[Tensor], trunk_taps: Sequence[Tensor]
    ) -> list[Tensor]:
        """Filter the three smallest inputs by the trunk taps.

        Raises:
            ValueError: if the sizes of the inputs and taps do not match.
        """
        for x, t in zip(inputs[:3], trunk_taps):
            if x.shape[-2:] != t.shape[-2:]:
                raise ValueError(
                    f"Structure input {tuple(x.shape[-2:])} does not match "
                    f"trunk tap {tuple(t.shape[-2:])}.")
        if self.filters is None:
            return list(inputs[:3])
        return [f(x, t) for f, x, t in zip(self.filters, inputs[:3], trunk_taps)]

    def forward(
        self, inputs: Sequence[Tensor], trunk_taps: Sequence[Tensor],
        out_size: int
    ) -> StructureDecoderOutput:
        """Filter and fuse the structure inputs (smallest first).

        Raises:
            ValueError: if the number of inputs differs from the one the
                decoder was built for (e.g. `HR0` missing).
        """
        if len(inputs) != self.num_inputs:
            raise ValueError(
                f"Structure decoder needs {self.num_inputs} inputs, got "
                f"{len(inputs)}.")
        check_doubling(inputs, "Structure input")
        filtered = self.filter_inputs(inputs, trunk_taps)
        fused = self.fuse([*filtered, *inputs[3:]])
        logits = None
        if self.head is not None:
            logits = upsample(self.head(fused[-1]), out_size)
        return StructureDecoderOutput(
            logits=logits, filtered=filtered, fused_taps=fused[2:])


class UnionDecoder(nn.Module):
    """Aggregate trunk and structure features into the final mask.

    ```
    F@S1 = A(T32, S1)
    F@S2 = A(T43, S2) + up(F@S1)
    F@S3 = A(T54, S3) + up(F@S2)
    for each fused structure tap D:  m = up(F);  F = M(m, D) + m
    logits = conv3x3(C3(F))
    ```

    where `A` / `M` are the trunk- / mask-structure aggregations (or their
    `add` / `concat` replacements).

    Args:
        trunk_channels: trunk feature width.
        channels: structure (and mask) feature width.
        head_channels: hidden width of the prediction head.
        num_mask_stages: number of fused structure taps (`3` with `HR0`).
        aggregation: `tsa`, `add` or `concat`.
    """

    def __init__(
        self, trunk_channels: int, channels: int, head_channels: int = 16,
        num_mask_stages: int = 3, aggregation: str = "tsa"
    ) -> None:
        super().__init__()
        agg = AGGREGATIONS[aggregation]
        self.trunk_agg = nn.ModuleList(
            [agg(trunk_channels, channels) for _ in range(3)])
        self.mask_agg = nn.ModuleList(
            [agg(channels, channels) for _ in range(num_mask_stages)])
        self.head = nn.Sequential(
            ConvBNReLU(channels, head_channels),
            nn.Conv2d(head_channels, 1, 3, padding=1))

    def fuse(
        self, trunk_taps: Sequence[Tensor], structure: StructureDecoderOutput
    ) -> Tensor:
        """Unified feature `F` before the prediction head.

        Raises:
            ValueError: if the taps do not match what the decoder was built
                for.
        """
        if len(trunk_taps) != 3 or len(structure.filtered) != 3:
            raise ValueError(
                f"Need 3 trunk taps and 3 filtered structure features; got "
                f"{len(trunk_taps)} and {len(structure.filtered)}.")
        if len(structure.fused_taps) != len(self.mask_agg):
            raise ValueError(
                f"Need {len(self.mask_agg)} fused structure taps, got "
                f"{len(structure.fused_taps)}.")

        f: Tensor | None = None
        for agg, t, s in zip(self.trunk_agg, trunk_taps, structure.filtered):
            x = agg(t, s)
            f = x if f is None else x + upsample(f, x.shape[-1])
        assert f is not None

        for agg, d in zip(self.mask_agg, structure.fused_taps):
            m = upsample(f, d.shape[-1])
            f = agg(m, d) + m
        return f

    def forward(
        self, trunk_taps: Sequence[Tensor], structure: StructureDecoderOutput,
        out_size: int
    ) -> tuple[Tensor, Tensor]:
        """Predict the mask logits.

        Returns:
            Mask logits at `out_size`, and the unified feature `F`.
        """
        f = self.fuse(trunk_taps, structure)
        return upsample(self.head(f), out_size), f

