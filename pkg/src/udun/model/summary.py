"""Parameter and operation counts.

Models are built on the `meta` device, so counting allocates no memory and
runs no arithmetic.

!!! info "FLOPs convention"

    [`count_flops`][.] reports multiply-accumulates (MACs) of all
    convolution and linear layers by default; segmentation benchmarks
    commonly list this number as "FLOPs". Pass `double=True` for
    `2 × MACs`.
"""

import dataclasses

import torch
from torch import Tensor, nn

from ..config import ModelConfig
from .udun import UDUN


def _meta_model(config: ModelConfig) -> UDUN:
    config = dataclasses.replace(config, backbone_weights=None)
    with torch.device("meta"):
        model = UDUN(config)
    return model.eval()


def param_breakdown(config: ModelConfig) -> dict[str, int]:
    """Trainable parameters per part of the network.

    Returns:
        Counts for `backbone`, `reduction` (channel reduction and `HR0`),
        `trunk`, `structure` and `union`.
    """
    model = _meta_model(config)

    def _count(module: nn.Module | None) -> int:
        if module is None:
            return 0
        return sum(p.numel() for p in module.parameters() if p.requires_grad)

    enc = model.encoder
    return {
        "backbone": _count(enc.backbone) + _count(enc.backbone_lr),
        "reduction": (
            _count(enc.reduce_hr) + _count(enc.reduce_lr) + _count(enc.hr0)),
        "trunk": _count(model.trunk),
        "structure": _count(model.structure),
        "union": _count(model.union),
    }


def count_params(config: ModelConfig) -> int:
    """Exact number of trainable parameters."""
    return sum(param_breakdown(config).values())


def count_flops(
    config: ModelConfig, hr_size: int | None = None,
    lr_size: int | None = None, double: bool = False
) -> float:
    """Convolution and linear operations of one forward pass, in G(MAC)s.

    Args:
        config: model configuration.
        hr_size: large input size; defaults to `config.hr_size`.
        lr_size: small input size; defaults to `config.lr_size`.
        double: count `2 × MACs` instead of MACs.

    Returns:
        Operation count, in units of `1e9`.
    """
    config = dataclasses.replace(
        config, hr_size=hr_size or config.hr_size,
        lr_size=lr_size or config.lr_size)
    model = _meta_model(config)

    total = [0]

    def _hook(module: nn.Module, args: tuple, output: Tensor) -> None:
        per_output: int
        if isinstance(module, nn.Conv2d):
            kh, kw = module.kernel_size
            per_output = module.in_channels // module.groups * kh * kw
        else:
            per_output = module.in_features  # type: ignore
        total[0] += output.numel() * per_output

    handles = [
        m.register_forward_hook(_hook) for m in model.modules()
        if isinstance(m, (nn.Conv2d, nn.Linear))]

    image_hr = torch.empty(
        1, 3, config.hr_size, config.hr_size, device="meta")
    image_lr = torch.empty(
        1, 3, config.lr_size, config.lr_size, device="meta"
    ) if config.dual_input else None
    with torch.no_grad():
        model(image_hr, image_lr)

    for handle in handles:
        handle.remove()
    return total[0] * (2 if double else 1) / 1e9
