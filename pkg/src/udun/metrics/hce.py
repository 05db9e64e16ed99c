"""Human correction efforts (HCE).

HCE estimates how many clicks a human annotator needs to fix a binary
prediction: every error region that cannot be explained as a small boundary
misalignment is outlined with a polygon, and the polygon vertices are
counted.

1. **Relaxation.** With a disk of radius `γ`, false negatives only count if
   they reach into the eroded ground truth (or its skeleton, so thin
   structures are never relaxed away); false positives only count if they
   reach outside the dilated ground truth.
2. **Regions.** Errors are grouped into 8-connected components; a component
   survives if it touches its relaxed error set and has at least `min_area`
   pixels.
3. **Polygons.** Each surviving component boundary is traced and simplified
   with Douglas–Peucker at tolerance `epsilon`; its vertices are the
   correction clicks.

!!! info

    Components are kept or dropped as a whole, and a larger `γ` only shrinks
    the relaxed error sets; HCE is therefore non-increasing in `γ`.
"""

from dataclasses import dataclass

import numpy as np
from jaxtyping import Bool, Shaped
from scipy.ndimage import binary_dilation, binary_erosion
from skimage.measure import approximate_polygon, find_contours, label
from skimage.morphology import disk, skeletonize

from ..labels import as_binary


@dataclass(frozen=True)
class HCEReport:
    """HCE split into its parts.

    Attributes:
        fp: vertices of surviving false-positive regions.
        fn: vertices of surviving false-negative regions.
        fp_regions: number of surviving false-positive regions.
        fn_regions: number of surviving false-negative regions.
    """

    fp: int
    fn: int
    fp_regions: int
    fn_regions: int

    @property
    def total(self) -> int:
        """HCE: total number of correction vertices."""
        return self.fp + self.fn


def polygon_vertices(
    region: Bool[np.ndarray, "H W"], epsilon: float = 2.0
) -> int:
    """Vertices needed to outline a region with simplified polygons.

    Each closed boundary (outer boundary and holes) is traced with marching
    squares, rotated to start at its point farthest from the region
    centroid, and simplified with Douglas–Peucker.

    Args:
        region: a single connected region.
        epsilon: simplification tolerance, in pixels.
    """
    if not np.any(region):
        return 0
    padded = np.pad(region, 1).astype(np.float64)
    center = np.argwhere(padded > 0).mean(axis=0)

    total = 0
    for contour in find_contours(padded, 0.5, fully_connected="high"):
        ring = contour[:-1] if np.array_equal(contour[0], contour[-1]) else contour
        start = int(np.argmax(np.sum((ring - center) ** 2, axis=1)))
        ring = np.roll(ring, -start, axis=0)
        closed = np.concatenate([ring, ring[:1]])
        simplified = approximate_polygon(closed, tolerance=epsilon)
        total += max(len(simplified) - 1, 1)
    return total


def _surviving(
    errors: Bool[np.ndarray, "H W"], relaxed: Bool[np.ndarray, "H W"],
    min_area: int, epsilon: float
) -> tuple[int, int]:
    components, n = label(errors, connectivity=2, return_num=True)
    vertices, regions = 0, 0
    for i in range(1, n + 1):
        region = components == i
        if np.count_nonzero(region) < min_area or not np.any(region & relaxed):
            continue
        vertices += polygon_vertices(region, epsilon)
        regions += 1
    return vertices, regions


def hce_report(
    pred: Shaped[np.ndarray, "H W"], gt: Shaped[np.ndarray, "H W"],
    gamma: int = 5, epsilon: float = 2.0, min_area: int | None = None
) -> HCEReport:
    """Human correction efforts, split into false positives and negatives.

    Args:
        pred: binary prediction.
        gt: binary ground truth.
        gamma: error tolerance (disk radius), in pixels.
        epsilon: polygon simplification tolerance, in pixels.
        min_area: smallest region that needs correcting; `max(γ², 1)` if not
            given.

    Raises:
        ValueError: if an input is not binary, the shapes differ, or
            `gamma < 0`.
    """
    if pred.shape != gt.shape:
        raise ValueError(
            f"Prediction {pred.shape} and ground truth {gt.shape} differ "
            f"in shape.")
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}.")
    pred = as_binary(pred, "prediction")
    gt = as_binary(gt, "ground truth")
    if min_area is None:
        min_area = max(gamma * gamma, 1)

    footprint = disk(gamma).astype(bool)
    eroded = binary_erosion(gt, structure=footprint, border_value=1)
    dilated = binary_dilation(gt, structure=footprint)
    skeleton = skeletonize(gt) if np.any(gt) else np.zeros_like(gt)

    fn_relaxed = (eroded | skeleton) & ~pred
    fp_relaxed = pred & ~dilated

    fn, fn_regions = _surviving(gt & ~pred, fn_relaxed, min_area, epsilon)
    fp, fp_regions = _surviving(pred & ~gt, fp_relaxed, min_area, epsilon)
    return HCEReport(fp=fp, fn=fn, fp_regions=fp_regions, fn_regions=fn_regions)


def hce(
    pred: Shaped[np.ndarray, "H W"], gt: Shaped[np.ndarray, "H W"],
    gamma: int = 5, epsilon: float = 2.0, min_area: int | None = None
) -> int:
    """Human correction efforts; see [`hce_report`][^.]."""
    return hce_report(pred, gt, gamma, epsilon, min_area).total
