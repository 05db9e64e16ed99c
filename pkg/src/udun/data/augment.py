"""Augmentation and dual-size input construction."""

from typing import Literal, TypeVar, cast

import numpy as np
import torch
from jaxtyping import Float, Float32, Shaped
from torch import Tensor
from torchvision import transforms

from ..config import IMAGENET_MEAN, IMAGENET_STD, TrainConfig, default_band_width
from ..labels import LabelTriplet, decouple

TArray = TypeVar("TArray", bound=np.ndarray | torch.Tensor)

_MODES = {
    "bilinear": transforms.InterpolationMode.BILINEAR,
    "nearest": transforms.InterpolationMode.NEAREST,
}


def resize(
    x: Shaped[TArray, "*B H W"], size: tuple[int, int],
    mode: Literal["bilinear", "nearest"] = "bilinear"
) -> Shaped[TArray, "*B H2 W2"]:
    """Resize the two trailing axes.

    Uses `torchvision.transforms.Resize` (antialiased for bilinear), with a
    round-trip through a cpu `Tensor` for numpy arrays. Boolean inputs must
    use `nearest`. Inputs already at `size` are returned unchanged.

    Type Parameters:
        - `TArray`: array type; `np.ndarray` or `torch.Tensor`.

    Args:
        x: input with any number of leading axes.
        size: output `(height, width)`.
        mode: interpolation mode.
    """
    if tuple(x.shape[-2:]) == tuple(size):
        return x

    if isinstance(x, torch.Tensor):
        is_bool = x.dtype == torch.bool
    else:
        is_bool = x.dtype == np.bool_
    if is_bool and mode != "nearest":
        raise ValueError("Boolean arrays can only be resized with 'nearest'.")

    xt: Tensor
    if isinstance(x, torch.Tensor):
        xt = x
    else:
        xt = torch.from_numpy(np.ascontiguousarray(x))
    if is_bool:
        xt = xt.to(torch.uint8)

    lead = xt.shape[:-2]
    flat = xt.reshape(-1, 1, *xt.shape[-2:])
    out = transforms.Resize(
        size, interpolation=_MODES[mode], antialias=(mode == "bilinear")
    )(flat).reshape(*lead, *size)

    if is_bool:
        out = out.to(torch.bool)
    if isinstance(x, torch.Tensor):
        return cast(TArray, out)
    return cast(TArray, out.numpy())


def augment(
    image: Float32[np.ndarray, "H W 3"], labels: LabelTriplet,
    rng: np.random.Generator, config: TrainConfig
) -> tuple[Float32[np.ndarray, "H W 3"], LabelTriplet]:
    """Random horizontal flip and random crop, applied jointly.

    The crop keeps a fraction in `[crop_min, 1]` of each side, drawn
    uniformly, and is resized back to the input size (bilinear for the
    image, nearest for the mask). Trunk and structure labels are then
    recomputed from the cropped mask, so the band width stays the same in
    pixels. A crop which contains no foreground is a valid sample.

    Args:
        image: `float32` RGB image in `[0, 1]`, at its training size.
        labels: matching labels.
        rng: random generator; exactly four draws are consumed.
        config: augmentation parameters (`flip_prob`, `crop_min`,
            `band_width`).

    Returns:
        The augmented image and labels, at the input size.
    """
    h, w = labels.mask.shape
    if image.shape[:2] != (h, w):
        raise ValueError(
            f"Image {image.shape[:2]} and mask {(h, w)} differ in size.")

    flip = rng.random() < config.flip_prob
    fh, fw = rng.uniform(config.crop_min, 1.0, size=2)
    ch = min(h, max(1, int(round(fh * h))))
    cw = min(w, max(1, int(round(fw * w))))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))

    mask = labels.mask
    if flip:
        image = image[:, ::-1]
        mask = mask[:, ::-1]

    image = image[top:top + ch, left:left + cw]
    mask = mask[top:top + ch, left:left + cw]

    chw = np.moveaxis(image, -1, 0)
    image = np.ascontiguousarray(
        np.moveaxis(resize(chw, (h, w), "bilinear"), 0, -1), dtype=np.float32)
    mask = np.ascontiguousarray(resize(mask, (h, w), "nearest"))

    band_width = config.band_width or default_band_width(h)
    return image, decouple(mask, band_width)


def normalize(
    image: Float[Tensor, "3 H W"]
) -> Float[Tensor, "3 H W"]:
    """Channelwise normalization with the backbone-pretraining statistics."""
    mean = torch.tensor(IMAGENET_MEAN, dtype=image.dtype).reshape(3, 1, 1)
    std = torch.tensor(IMAGENET_STD, dtype=image.dtype).reshape(3, 1, 1)
    return (image - mean) / std


def make_dual_input(
    image: Float32[np.ndarray, "H W 3"], hr_size: int, lr_size: int
) -> tuple[Float32[Tensor, "3 H2 W2"], Float32[Tensor, "3 h w"]]:
    """Build the normalized large and small network inputs.

    The large input is the image resized (if needed) to `hr_size`; the
    small input is its bilinear resize to `lr_size`.

    Args:
        image: `float32` RGB image in `[0, 1]`.
        hr_size: large input size.
        lr_size: small input size.
    """
    chw = torch.from_numpy(np.ascontiguousarray(np.moveaxis(image, -1, 0)))
    hr = resize(chw, (hr_size, hr_size), "bilinear")
    lr = resize(hr, (lr_size, lr_size), "bilinear")
    return normalize(hr), normalize(lr)
