"""Image and mask files.

Images are read as `uint8` RGB; masks are read as single-channel `float32`
arrays normalized to `[0, 1]` (8-bit masks are divided by 255, 16-bit masks
by 65535). Masks are written as 8-bit grayscale PNGs.
"""

import os

import numpy as np
from jaxtyping import Float, Shaped, UInt8
from PIL import Image, UnidentifiedImageError

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff")


def _open(path: str) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, UnidentifiedImageError) as e:
        raise ValueError(f"Cannot read image {path}: {e}") from e
    return img


def read_image(path: str) -> UInt8[np.ndarray, "H W 3"]:
    """Read an image as RGB.

    Raises:
        ValueError: if the file is missing or not an image.
    """
    return np.asarray(_open(path).convert("RGB"), dtype=np.uint8).copy()


def read_mask(path: str) -> Float[np.ndarray, "H W"]:
    """Read a single-channel mask, normalized to `[0, 1]`.

    Multi-channel files are converted to grayscale.

    Raises:
        ValueError: if the file is missing or not an image.
    """
    img = _open(path)
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
        return np.clip(arr, 0.0, 1.0).astype(np.float32)
    if img.mode == "1":
        return np.asarray(img, dtype=np.float32)
    return np.asarray(img.convert("L"), dtype=np.float32) / 255.0


def to_uint8(mask: Float[np.ndarray, "H W"]) -> UInt8[np.ndarray, "H W"]:
    """Quantize a `[0, 1]` map to 8 bits (round to nearest)."""
    return np.round(np.clip(mask, 0.0, 1.0) * 255).astype(np.uint8)


def write_mask(path: str, mask: Shaped[np.ndarray, "H W"]) -> None:
    """Write a `[0, 1]` map (or a binary mask) as an 8-bit grayscale PNG."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(to_uint8(mask.astype(np.float32))).save(path)


def write_image(path: str, image: UInt8[np.ndarray, "H W 3"]) -> None:
    """Write an RGB image."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(image).save(path)


def list_images(directory: str) -> dict[str, str]:
    """Map file stem to path for every image in a directory.

    Raises:
        ValueError: if the directory does not exist, or two files share a
            stem.
    """
    if not os.path.isdir(directory):
        raise ValueError(f"Not a directory: {directory}")
    found: dict[str, str] = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in IMAGE_EXTENSIONS:
            continue
        if stem in found:
            raise ValueError(
                f"Duplicate image id {stem!r} in {directory}: "
                f"{os.path.basename(found[stem])}, {name}")
        found[stem] = os.path.join(directory, name)
    return found
