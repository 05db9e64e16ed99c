"""Trunk/structure label decoupling.

A binary mask is split into two supervision targets:

- the **structure** label: every pixel within `band_width` (Euclidean) of the
  mask boundary, on either side of it;
- the **trunk** label: the remaining interior of the mask, i.e. the mask
  eroded by a disk of radius `band_width`.

Pixels outside the image are treated as unknown: an object touching the image
border keeps its trunk up to the border.

!!! info

    Masks are `(H, W)` arrays; labels are returned as `bool` arrays, and
    continuous predictions elsewhere in `udun` are `float` arrays in `[0, 1]`.
"""

from dataclasses import dataclass

import numpy as np
from jaxtyping import Bool, Shaped
from scipy.ndimage import distance_transform_edt


@dataclass
class LabelTriplet:
    """Supervision targets for one sample.

    Attributes:
        mask: binary object mask.
        trunk: binary trunk label (`trunk ⊆ mask`).
        structure: binary structure label (boundary band on both sides).
        band_width: band radius used to build the labels, in pixels.
    """

    mask: Bool[np.ndarray, "H W"]
    trunk: Bool[np.ndarray, "H W"]
    structure: Bool[np.ndarray, "H W"]
    band_width: int


def as_binary(
    mask: Shaped[np.ndarray, "H W"], name: str = "mask"
) -> Bool[np.ndarray, "H W"]:
    """Convert a `{0, 1}`-valued (or boolean) array to `bool`.

    Raises:
        ValueError: if any value is not `0` or `1`.
    """
    if mask.dtype == np.bool_:
        return mask
    if mask.size > 0:
        bad = ~np.isin(mask, (0, 1))
        if np.any(bad):
            values = np.unique(mask[bad])[:5]
            raise ValueError(
                f"{name} is not binary: found values {values.tolist()}")
    return mask.astype(bool)


def _distances(mask: Bool[np.ndarray, "H W"]) -> tuple[
    Shaped[np.ndarray, "H W"], Shaped[np.ndarray, "H W"]
]:
    """Distances to the other class, for mask and background pixels.

    Each map is zero on pixels of the other class.
    """
    inside = distance_transform_edt(mask)
    outside = distance_transform_edt(~mask)
    return np.asarray(inside), np.asarray(outside)


def decouple(
    mask: Shaped[np.ndarray, "H W"], band_width: int
) -> LabelTriplet:
    """Split a binary mask into trunk and structure labels.

    Args:
        mask: binary mask (`bool`, or numeric with values in `{0, 1}`).
        band_width: structure band radius `d`, in pixels.

    Returns:
        Label triplet; `structure` holds every pixel at distance `≤ d` from
        the boundary, and `trunk` is `mask` minus its inner band.

    Raises:
        ValueError: if `mask` is not binary or `band_width < 1`.
    """
    if band_width < 1:
        raise ValueError(f"band_width must be ≥ 1, got {band_width}")
    binary = as_binary(mask)

    if binary.all() or not binary.any():
        return LabelTriplet(
            mask=binary, trunk=binary.copy(),
            structure=np.zeros_like(binary), band_width=band_width)

    inside, outside = _distances(binary)
    structure = (binary & (inside <= band_width)) | (
        ~binary & (outside <= band_width))
    trunk = binary & (inside > band_width)
    return LabelTriplet(
        mask=binary, trunk=trunk, structure=structure, band_width=band_width)


def boundary_pixels(mask: Bool[np.ndarray, "H W"]) -> Bool[np.ndarray, "H W"]:
    """Pixels 4-adjacent to a pixel of the opposite class."""
    out = np.zeros_like(mask)
    vertical = mask[1:] != mask[:-1]
    horizontal = mask[:, 1:] != mask[:, :-1]
    out[1:] |= vertical
    out[:-1] |= vertical
    out[:, 1:] |= horizontal
    out[:, :-1] |= horizontal
    return out


def verify_triplet(t: LabelTriplet) -> bool:
    """Check the label triplet invariants.

    1. `trunk ⊆ mask`.
    2. Every boundary pixel (4-adjacency) is in `structure`.
    3. No interior pixel farther than `band_width` from the boundary is in
       both `trunk` and `structure`.
    4. `mask = trunk ∨ (structure ∧ mask)`.

    Raises:
        ValueError: if the fields do not share one shape.
    """
    shapes = {t.mask.shape, t.trunk.shape, t.structure.shape}
    if len(shapes) != 1:
        raise ValueError(f"Label shapes differ: {sorted(shapes)}")

    mask, trunk, structure = t.mask, t.trunk, t.structure
    if np.any(trunk & ~mask):
        return False
    if np.any(boundary_pixels(mask) & ~structure):
        return False
    if mask.any() and not mask.all():
        inside, _ = _distances(mask)
        if np.any((inside > t.band_width) & trunk & structure):
            return False
    return bool(np.array_equal(mask, trunk | (structure & mask)))
