"""End-to-end Unite-Divide-Unite network."""

import logging
from dataclasses import dataclass

import torch
from jaxtyping import Float
from torch import Tensor, nn

from ..config import ModelConfig
from ..constraints import validate_config
from .backbone import load_backbone_weights
from .decoders import StructureDecoder, TrunkDecoder, UnionDecoder
from .encoder import UnionEncoder


@dataclass
class ModelOutput:
    """Network outputs; all logit maps are at `hr_size`.

    Attributes:
        mask_logits: final mask logits.
        trunk_logits: trunk logits; `None` without the trunk decoder.
        structure_logits: structure logits; `None` without the structure
            decoder.
        features: `T54`, `S65` and the unified feature `F`, if requested.
    """

    mask_logits: Float[Tensor, "B 1 H W"]
    trunk_logits: Float[Tensor, "B 1 H W"] | None = None
    structure_logits: Float[Tensor, "B 1 H W"] | None = None
    features: dict[str, Tensor] | None = None


class UDUN(nn.Module):
    """Unite-Divide-Unite segmentation network.

    The union encoder extracts and regroups features from both input sizes;
    the trunk and structure decoders each fuse their group, and the union
    decoder aggregates both into the final mask.

    !!! info "Known Constraints"

        The configuration is checked on construction; see
        [`udun.constraints`][udun.constraints].

    Args:
        config: model configuration.
        strict: raise (instead of only logging) on invalid configuration.
    """

    def __init__(self, config: ModelConfig, strict: bool = True) -> None:
        super().__init__()
        validate_config(config, strict=strict)
        self.config = config

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.init_seed)
            self.encoder = UnionEncoder(config)
            self.trunk = TrunkDecoder(
                config.trunk_channels, enabled=config.use_trunk_decoder)
            self.structure = StructureDecoder(
                config.trunk_channels, config.structure_channels,
                num_inputs=6 if config.use_hr0 else 5,
                use_filtering=config.use_filtering,
                enabled=config.use_structure_decoder)
            self.union = UnionDecoder(
                config.trunk_channels, config.structure_channels,
                head_channels=config.head_channels,
                num_mask_stages=3 if config.use_hr0 else 2,
                aggregation=config.aggregation)

        if config.backbone_weights is not None:
            load_backbone_weights(self.encoder.backbone, config.backbone_weights)
            if self.encoder.backbone_lr is not None:
                load_backbone_weights(
                    self.encoder.backbone_lr, config.backbone_weights)

        logging.getLogger("udun/model").debug(
            f"Built UDUN-R{config.backbone} with "
            f"{sum(p.numel() for p in self.parameters())} parameters.")

    def backbone_parameters(self) -> list[nn.Parameter]:
        """Parameters of the backbone(s)."""
        params = list(self.encoder.backbone.parameters())
        if self.encoder.backbone_lr is not None:
            params += list(self.encoder.backbone_lr.parameters())
        return params

    def head_parameters(self) -> list[nn.Parameter]:
        """Every parameter outside the backbone(s)."""
        backbone = {id(p) for p in self.backbone_parameters()}
        return [p for p in self.parameters() if id(p) not in backbone]

    def forward(
        self, image_hr: Float[Tensor, "B 3 H W"],
        image_lr: Float[Tensor, "B 3 h w"] | None = None,
        return_features: bool = False
    ) -> ModelOutput:
        """Segment a batch.

        Args:
            image_hr: normalized image at `hr_size`.
            image_lr: the same image resized to `lr_size`; required iff
                `dual_input`.
            return_features: also return `T54`, `S65` and `F`.

        Raises:
            ValueError: if an input has the wrong size.
        """
        cfg = self.config
        if tuple(image_hr.shape[-2:]) != (cfg.hr_size, cfg.hr_size):
            raise ValueError(
                f"Large input must be {cfg.hr_size}×{cfg.hr_size}; got "
                f"{tuple(image_hr.shape[-2:])}.")
        if image_lr is not None and (
                tuple(image_lr.shape[-2:]) != (cfg.lr_size, cfg.lr_size)):
            raise ValueError(
                f"Small input must be {cfg.lr_size}×{cfg.lr_size}; got "
                f"{tuple(image_lr.shape[-2:])}.")

        enc = self.encoder(image_hr, image_lr)
        trunk = self.trunk(enc.trunk_inputs, cfg.hr_size)
        structure = self.structure(
            enc.structure_inputs, trunk.taps, cfg.hr_size)
        mask, unified = self.union(trunk.taps, structure, cfg.hr_size)

        features = None
        if return_features:
            features = {
                "T54": trunk.final, "S65": structure.final, "F": unified}
        return ModelOutput(
            mask_logits=mask, trunk_logits=trunk.logits,
            structure_logits=structure.logits, features=features)


def model_forward(
    model: UDUN, image_hr: Float[Tensor, "B 3 H W"],
    image_lr: Float[Tensor, "B 3 h w"] | None = None
) -> ModelOutput:
    """Run the full network; see [`UDUN.forward`][^.]."""
    return model(image_hr, image_lr)
