"""Procedural dataset with trunk-heavy and structure-heavy objects.

Five object kinds cycle through the samples:

| Kind     | Content                                   |
|----------|-------------------------------------------|
| `blob`   | union of overlapping filled ellipses      |
| `ring`   | thin ring(s) around a common center       |
| `star`   | filled star polygon                       |
| `grid`   | thin lattice of horizontal/vertical bars  |
| `plate`  | filled plate with several circular holes  |

Foreground and background are filled with different random textures, so the
mask is recoverable from the image. Sample `i` only depends on
`(seed, i)`; the same seed always produces the same files.
"""

import json
import logging
import os

import numpy as np
from jaxtyping import Bool, UInt8
from PIL import Image, ImageDraw

from ..config import default_band_width
from ..labels import decouple
from .io import write_image, write_mask

KINDS = ("blob", "ring", "star", "grid", "plate")


def _canvas(size: int) -> tuple[Image.Image, ImageDraw.ImageDraw]:
    img = Image.new("L", (size, size), 0)
    return img, ImageDraw.Draw(img)


def _binary(img: Image.Image) -> Bool[np.ndarray, "H W"]:
    return np.asarray(img) > 127


def draw_blob(size: int, rng: np.random.Generator) -> Bool[np.ndarray, "H W"]:
    """Union of 2-4 overlapping ellipses near the center."""
    img, draw = _canvas(size)
    for _ in range(int(rng.integers(2, 5))):
        cx, cy = rng.uniform(0.35, 0.65, size=2) * size
        rx, ry = rng.uniform(0.1, 0.25, size=2) * size
        draw.ellipse((cx - rx, cy - ry, cx + rx, cy + ry), fill=255)
    return _binary(img)


def draw_ring(
    size: int, rng: np.random.Generator, width: int | None = None
) -> Bool[np.ndarray, "H W"]:
    """1-3 concentric thin rings."""
    img, draw = _canvas(size)
    cx, cy = rng.uniform(0.4, 0.6, size=2) * size
    radius = rng.uniform(0.3, 0.42) * size
    for _ in range(int(rng.integers(1, 4))):
        w = width or int(rng.integers(1, max(2, size // 32) + 1))
        draw.ellipse(
            (cx - radius, cy - radius, cx + radius, cy + radius),
            outline=255, width=w)
        radius *= rng.uniform(0.5, 0.75)
    return _binary(img)


def draw_star(size: int, rng: np.random.Generator) -> Bool[np.ndarray, "H W"]:
    """Filled star with 5-9 spikes."""
    img, draw = _canvas(size)
    n = int(rng.integers(5, 10))
    outer = rng.uniform(0.3, 0.45) * size
    inner = outer * rng.uniform(0.3, 0.55)
    phase = rng.uniform(0, 2 * np.pi)
    angles = phase + np.arange(2 * n) * np.pi / n
    radii = np.where(np.arange(2 * n) % 2 == 0, outer, inner)
    points = [
        (size / 2 + r * np.cos(a), size / 2 + r * np.sin(a))
        for r, a in zip(radii, angles)]
    draw.polygon(points, fill=255)
    return _binary(img)


def draw_grid(
    size: int, spacing: int, width: int = 1, offset: int = 0
) -> Bool[np.ndarray, "H W"]:
    """Lattice of `width`-pixel bars every `spacing` pixels."""
    mask = np.zeros((size, size), dtype=bool)
    for start in range(offset, size, spacing):
        mask[start:start + width, :] = True
        mask[:, start:start + width] = True
    return mask


def draw_plate(size: int, rng: np.random.Generator) -> Bool[np.ndarray, "H W"]:
    """Rectangle with 3-8 circular holes."""
    img, draw = _canvas(size)
    margin = rng.uniform(0.08, 0.2) * size
    draw.rectangle((margin, margin, size - margin, size - margin), fill=255)
    for _ in range(int(rng.integers(3, 9))):
        cx, cy = rng.uniform(margin + 0.08 * size, size - margin - 0.08 * size,
                             size=2)
        r = rng.uniform(0.02, 0.07) * size
        draw.ellipse((cx - r, cy - r, cx + r, cy + r), fill=0)
    return _binary(img)


def draw_mask(
    kind: str, size: int, rng: np.random.Generator
) -> Bool[np.ndarray, "H W"]:
    """Render one mask of the given kind.

    Raises:
        ValueError: for an unknown kind.
    """
    if kind == "blob":
        return draw_blob(size, rng)
    if kind == "ring":
        return draw_ring(size, rng)
    if kind == "star":
        return draw_star(size, rng)
    if kind == "grid":
        spacing = int(rng.integers(max(4, size // 8), max(5, size // 4)))
        width = int(rng.integers(1, 4))
        return draw_grid(size, spacing, width, int(rng.integers(0, spacing)))
    if kind == "plate":
        return draw_plate(size, rng)
    raise ValueError(f"Unknown object kind {kind!r}; expected one of {KINDS}")


def texture(
    size: int, rng: np.random.Generator
) -> UInt8[np.ndarray, "H W 3"]:
    """Random color with a linear gradient, stripes and pixel noise."""
    base = rng.uniform(0.15, 0.85, size=3)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    direction = rng.uniform(0, 2 * np.pi)
    gradient = np.cos(direction) * xx + np.sin(direction) * yy
    period = rng.uniform(4, 16)
    stripes = np.sin(2 * np.pi * (xx + yy) * size / period)
    noise = rng.normal(0, 0.04, size=(size, size, 3))
    tex = (
        base[None, None]
        + 0.15 * (gradient - 0.5)[..., None]
        + 0.05 * stripes[..., None] + noise)
    return np.round(np.clip(tex, 0, 1) * 255).astype(np.uint8)


def render_sample(
    index: int, size: int, seed: int
) -> tuple[UInt8[np.ndarray, "H W 3"], Bool[np.ndarray, "H W"], str]:
    """Render sample `index` of a synthetic dataset.

    Returns:
        Image, mask and object kind.
    """
    rng = np.random.default_rng([seed, index])
    kind = KINDS[index % len(KINDS)]
    mask = draw_mask(kind, size, rng)
    fg = texture(size, rng)
    bg = texture(size, rng)
    # Keep the two textures apart in brightness.
    if abs(float(fg.mean()) - float(bg.mean())) < 40:
        fg = (255 - fg).astype(np.uint8)
    image = np.where(mask[..., None], fg, bg).astype(np.uint8)
    return image, mask, kind


def make_synthetic(
    count: int, size: int, seed: int, out_dir: str,
    band_width: int | None = None
) -> str:
    """Write a synthetic dataset root.

    Creates `im/`, `gt/` and `labels/` in the dataset layout of
    [`discover`][udun.data.discover], and a `manifest.json` listing every
    sample and its kind. `count = 0` produces an empty, valid dataset.

    Args:
        count: number of samples.
        size: image size (square).
        seed: generation seed.
        out_dir: dataset root to write.
        band_width: structure band radius of the written labels; scaled
            from 5 px at 1024 if not given.

    Returns:
        Path of the manifest.
    """
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}.")
    band_width = band_width or default_band_width(size)
    for sub in ("im", "gt", "labels"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    samples = []
    for i in range(count):
        image, mask, kind = render_sample(i, size, seed)
        sid = f"synth_{i:05d}"
        write_image(os.path.join(out_dir, "im", f"{sid}.png"), image)
        write_mask(os.path.join(out_dir, "gt", f"{sid}.png"), mask)
        labels = decouple(mask, band_width)
        write_mask(
            os.path.join(out_dir, "labels", f"{sid}_trunk.png"), labels.trunk)
        write_mask(
            os.path.join(out_dir, "labels", f"{sid}_struct.png"),
            labels.structure)
        samples.append({"id": sid, "kind": kind})

    manifest = os.path.join(out_dir, "manifest.json")
    with open(manifest, "w") as f:
        json.dump({
            "count": count, "size": size, "seed": seed,
            "band_width": band_width, "samples": samples
        }, f, indent=2)
    logging.getLogger("udun/synthetic").info(
        f"Wrote {count} synthetic samples to {out_dir}.")
    return manifest
