"""Inference on image files.

Images are resized to the model input sizes, segmented, and the predicted
probability map (`sigmoid` of the mask logits) is resized back to the
original resolution and written as an 8-bit PNG. No other post-processing
is applied.
"""

import logging
import os

import numpy as np
import torch
from jaxtyping import Float, Float32

from .data import list_images, load_image, make_dual_input, resize, write_mask
from .model import UDUN
from .train import model_from_checkpoint

FEATURES = ("T54", "S65", "F")


def heat_map(
    feature: Float[torch.Tensor, "C H W"]
) -> Float[np.ndarray, "H W"]:
    """Channel-mean absolute activation, min-max normalized to `[0, 1]`."""
    energy = feature.abs().mean(dim=0)
    lo, hi = energy.min(), energy.max()
    if hi > lo:
        energy = (energy - lo) / (hi - lo)
    else:
        energy = torch.zeros_like(energy)
    return energy.float().cpu().numpy()


@torch.no_grad()
def predict(
    model: UDUN, image: Float32[np.ndarray, "H W 3"],
    return_aux: bool = False, return_features: bool = False
) -> dict[str, Float[np.ndarray, "H W"]]:
    """Segment one image at its own resolution.

    Args:
        model: network, in eval mode.
        image: `float32` RGB image in `[0, 1]`.
        return_aux: also return the `trunk` and `structure` probability maps.
        return_features: also return heat maps of `T54`, `S65` and `F`.

    Returns:
        `mask`, and the requested extra maps, all at the image resolution.
    """
    cfg = model.config
    device = next(model.parameters()).device
    image_hr, image_lr = make_dual_input(image, cfg.hr_size, cfg.lr_size)
    out = model(
        image_hr[None].to(device),
        image_lr[None].to(device) if cfg.dual_input else None,
        return_features=return_features)

    size = image.shape[:2]

    def _back(x: torch.Tensor) -> np.ndarray:
        return np.clip(resize(x.float().cpu(), size, "bilinear").numpy(), 0, 1)

    maps = {"mask": _back(torch.sigmoid(out.mask_logits[0, 0]))}
    if return_aux:
        for name, logits in (
            ("trunk", out.trunk_logits), ("structure", out.structure_logits)
        ):
            if logits is not None:
                maps[name] = _back(torch.sigmoid(logits[0, 0]))
    if return_features and out.features is not None:
        for name in FEATURES:
            maps[name] = _back(torch.from_numpy(heat_map(out.features[name][0])))
    return maps


def infer(
    source: str, checkpoint: str, out_dir: str, dump_aux: bool = False,
    dump_features: bool = False, device: str | torch.device = "cpu"
) -> list[str]:
    """Predict masks for an image or a directory of images.

    Writes `<id>.png` per image; with `dump_aux`, also `<id>_trunk.png` and
    `<id>_struct.png`, and with `dump_features`, `<id>_T54.png`,
    `<id>_S65.png` and `<id>_F.png`.

    Args:
        source: image file or directory.
        checkpoint: trained checkpoint.
        out_dir: output directory.
        dump_aux: write the trunk and structure predictions.
        dump_features: write feature heat maps.
        device: inference device.

    Returns:
        Paths written, in order.

    Raises:
        ValueError: if an image cannot be read.
        CheckpointError: if the checkpoint cannot be loaded.
    """
    log = logging.getLogger("udun/infer")
    model = model_from_checkpoint(checkpoint, device)
    if os.path.isdir(source):
        images = list_images(source)
    else:
        images = {os.path.splitext(os.path.basename(source))[0]: source}

    suffix = {"mask": "", "trunk": "_trunk", "structure": "_struct"}
    written = []
    for image_id, path in images.items():
        maps = predict(
            model, load_image(path), return_aux=dump_aux,
            return_features=dump_features)
        for name, value in maps.items():
            out = os.path.join(
                out_dir, f"{image_id}{suffix.get(name, '_' + name)}.png")
            write_mask(out, value)
            written.append(out)
    log.info(f"Wrote predictions for {len(images)} images to {out_dir}.")
    return written
