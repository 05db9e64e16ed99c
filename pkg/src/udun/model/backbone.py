"""Backbones returning five feature taps.

The taps are the stem output (after the first convolution, before max
pooling) and the outputs of the four residual stages, at strides
`2, 4, 8, 16, 32` of the input.

| Backbone | Tap widths                  |
|----------|-----------------------------|
| `18`     | 64, 64, 128, 256, 512       |
| `34`     | 64, 64, 128, 256, 512       |
| `50`     | 64, 256, 512, 1024, 2048    |
| `tiny`   | 16, 16, 32, 64, 128         |
"""

import logging

import torch
from jaxtyping import Float
from torch import Tensor, nn
from torchvision import models
from torchvision.models.resnet import BasicBlock

from ..config import BACKBONE_CHANNELS


class Backbone(nn.Module):
    """Five-tap residual backbone.

    Attribute names follow `torchvision.models.ResNet`, so that torchvision
    state dicts load directly.

    Args:
        stem: first convolution (stride 2) and its batch norm.
        layers: the four residual stages; the first is preceded by max
            pooling.
        channels: widths of the five taps.
    """

    def __init__(
        self, stem: tuple[nn.Module, nn.Module], layers: list[nn.Module],
        channels: tuple[int, int, int, int, int]
    ) -> None:
        super().__init__()
        self.conv1, self.bn1 = stem
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(kernel_size=3, stride=2, padding=1)
        self.layer1, self.layer2, self.layer3, self.layer4 = layers
        self.channels = channels

    def forward(self, image: Float[Tensor, "B 3 H W"]) -> list[Tensor]:
        """Extract the five taps, shallowest first.

        Raises:
            ValueError: if the input side is not divisible by 32.
        """
        h, w = image.shape[-2:]
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(
                f"Backbone input must be divisible by 32; got {h}×{w}.")

        x1 = self.relu(self.bn1(self.conv1(image)))
        x2 = self.layer1(self.maxpool(x1))
        x3 = self.layer2(x2)
        x4 = self.layer3(x3)
        x5 = self.layer4(x4)
        return [x1, x2, x3, x4, x5]


def _from_torchvision(name: str) -> Backbone:
    net = getattr(models, f"resnet{name}")(weights=None)
    return Backbone(
        (net.conv1, net.bn1),
        [net.layer1, net.layer2, net.layer3, net.layer4],
        BACKBONE_CHANNELS[name])


def _stage(in_channels: int, out_channels: int, stride: int) -> nn.Module:
    downsample = None
    if stride != 1 or in_channels != out_channels:
        downsample = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
            nn.BatchNorm2d(out_channels))
    return nn.Sequential(
        BasicBlock(in_channels, out_channels, stride, downsample))


def _tiny() -> Backbone:
    return Backbone(
        (nn.Conv2d(3, 16, 3, stride=2, padding=1, bias=False),
         nn.BatchNorm2d(16)),
        [_stage(16, 16, 1), _stage(16, 32, 2), _stage(32, 64, 2),
         _stage(64, 128, 2)],
        BACKBONE_CHANNELS["tiny"])


def build_backbone(name: str) -> Backbone:
    """Create a randomly initialized backbone.

    Args:
        name: `18`, `34`, `50` (torchvision ResNets without the classifier),
            or `tiny`.
    """
    if name == "tiny":
        return _tiny()
    if name in ("18", "34", "50"):
        return _from_torchvision(name)
    raise ValueError(f"Unknown backbone: {name}")


def load_backbone_weights(backbone: Backbone, path: str) -> None:
    """Load externally produced weights into a backbone.

    Accepts a plain state dict, or a dict holding one under `state_dict`;
    classifier (`fc.*`) entries are dropped. Missing and unexpected keys are
    logged, not raised.
    """
    log = logging.getLogger("udun/model")
    state = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" in state:
        state = state["state_dict"]
    state = {k: v for k, v in state.items() if not k.startswith("fc.")}
    result = backbone.load_state_dict(state, strict=False)
    if result.missing_keys:
        log.warning(
            f"{len(result.missing_keys)} backbone weights missing from "
            f"{path}: {result.missing_keys[:5]}...")
    if result.unexpected_keys:
        log.warning(
            f"{len(result.unexpected_keys)} unexpected weights in {path}: "
            f"{result.unexpected_keys[:5]}...")
    log.info(f"Loaded backbone weights from {path}.")
