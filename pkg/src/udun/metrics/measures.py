"""Classical saliency / segmentation measures.

All measures take a continuous prediction in `[0, 1]` and a binary ground
truth of the same `(H, W)` shape, and return a Python `float`.

| Constant            | Value                | Used by                |
|---------------------|----------------------|------------------------|
| [`NUM_THRESHOLDS`][.] | 256, `t_k = k / 256` | max-F, mean-E          |
| [`F_BETA2`][.]        | 0.3                  | max-F                  |
| [`WF_BETA`][.]        | 1.0                  | weighted-F             |
| [`WF_SIGMA`][.], [`WF_KERNEL`][.] | 5, 7×7   | weighted-F             |
| [`WF_DECAY`][.]       | 0.5 per 5 px         | weighted-F             |
| [`S_ALPHA`][.]        | 0.5                  | S-measure              |

A pixel is predicted positive at threshold `t_k` iff `pred > t_k`.
"""

import numpy as np
from jaxtyping import Bool, Float, Int, Shaped
from scipy.ndimage import convolve, distance_transform_edt

from ..labels import as_binary

NUM_THRESHOLDS = 256
F_BETA2 = 0.3
WF_BETA = 1.0
WF_SIGMA = 5.0
WF_KERNEL = 7
WF_DECAY = 0.5
S_ALPHA = 0.5

EPS = np.finfo(np.float64).eps

THRESHOLDS = np.arange(NUM_THRESHOLDS, dtype=np.float64) / NUM_THRESHOLDS


def prepare(
    pred: Shaped[np.ndarray, "H W"], gt: Shaped[np.ndarray, "H W"]
) -> tuple[Float[np.ndarray, "H W"], Bool[np.ndarray, "H W"]]:
    """Validate and convert a `(pred, gt)` pair.

    Raises:
        ValueError: if the shapes differ, `pred` leaves `[0, 1]`, or `gt` is
            not binary.
    """
    if pred.shape != gt.shape:
        raise ValueError(
            f"Prediction {pred.shape} and ground truth {gt.shape} differ "
            f"in shape.")
    pred = np.asarray(pred, dtype=np.float64)
    if pred.size > 0 and (np.min(pred) < 0 or np.max(pred) > 1):
        raise ValueError(
            f"Prediction must lie in [0, 1]; got range "
            f"[{np.min(pred)}, {np.max(pred)}].")
    return pred, as_binary(gt, "ground truth")


def threshold_counts(
    pred: Float[np.ndarray, "H W"], gt: Bool[np.ndarray, "H W"]
) -> tuple[Int[np.ndarray, "256"], Int[np.ndarray, "256"]]:
    """Positives and true positives at every threshold.

    Since `256 · pred` is exact in floating point, `pred > k / 256` iff
    `ceil(256 · pred) ≥ k + 1`; both counts are read off a histogram of
    `ceil(256 · pred)`.

    Returns:
        `(positives, true_positives)`, indexed by threshold.
    """
    bins = np.clip(np.ceil(pred * NUM_THRESHOLDS), 0, NUM_THRESHOLDS)
    bins = bins.astype(np.int64)

    def _at_least(values: np.ndarray) -> np.ndarray:
        hist = np.bincount(values, minlength=NUM_THRESHOLDS + 1)
        return np.cumsum(hist[::-1])[::-1][1:]

    return _at_least(bins.ravel()), _at_least(bins[gt])


def max_f_measure(
    pred: Shaped[np.ndarray, "H W"], gt: Shaped[np.ndarray, "H W"]
) -> float:
    """Maximal F-measure over 256 thresholds, with `β² = 0.3`.

    Thresholds without true positives score 0. An empty ground truth scores
    1 against an all-zero prediction and 0 otherwise.
    """
    pred, gt = prepare(pred, gt)
    n_gt = int(np.count_nonzero(gt))
    if n_gt == 0:
        return float(not np.any(pred > 0))

    pos, tp = threshold_counts(pred, gt)
    pos = pos.astype(np.float64)
    tp = tp.astype(np.float64)
    valid = tp > 0
    precision = np.divide(tp, pos, out=np.zeros_like(tp), where=valid)
    recall = tp / n_gt
    f = np.zeros_like(tp)
    f[valid] = (
        (1 + F_BETA2) * precision[valid] * recall[valid]
        / (F_BETA2 * precision[valid] + recall[valid]))
    return float(np.max(f))


def mae(
    pred: Shaped[np.ndarray, "H W"], gt: Shaped[np.ndarray, "H W"]
) -> float:
    """Mean absolute error."""
    pred, gt = prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def gaussian_kernel(
    size: int = WF_KERNEL, sigma: float = WF_SIGMA
) -> Float[np.ndarray, "K K"]:
    """Normalized square Gaussian kernel; negligible taps are zeroed."""
    r = (size - 1) / 2
    y, x = np.ogrid[-r:r + 1, -r:r + 1]
    h = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    h[h < EPS * h.max()] = 0
    return h / h.sum()


def nearest_error(
    error: Float[np.ndarray, "H W"], gt: Bool[np.ndarray, "H W"]
) -> Float[np.ndarray, "H W"]:
    """Error of the nearest foreground pixel, for every pixel.

    A pixel can have several foreground pixels at the same distance, and the
    distance transform picks one of them by scan order. The lookup is run
    in all four mirrored orientations and averaged, so the result mirrors
    exactly with the inputs.
    """
    total = np.zeros_like(error)
    for axes in ((), (0,), (1,), (0, 1)):
        _, (rows, cols) = distance_transform_edt(
            ~np.flip(gt, axes), return_indices=True)
        total += np.flip(np.flip(error, axes)[rows, cols], axes)
    return total / 4


def weighted_f_measure(
    pred: Shaped[np.ndarray, "H W"], gt: Shaped[np.ndarray, "H W"]
) -> float:
    """Weighted F-measure.

    Errors are spread to their dependent neighbours with a 7×7 Gaussian
    (σ = 5); false positives far from the object weigh more, decaying by
    half every 5 pixels towards a weight of 2.

    !!! info "Degenerate cases"

        An empty ground truth scores 1 against an all-zero prediction and 0
        otherwise; an all-zero prediction against a non-empty ground truth
        scores 0.
    """
    pred, gt = prepare(pred, gt)
    if not np.any(gt):
        return float(not np.any(pred > 0))
    if not np.any(pred > 0):
        return 0.0

    error = np.abs(pred - gt)
    dist = distance_transform_edt(~gt)
    # Background errors take the error of their nearest object pixel.
    spread = np.where(gt, error, nearest_error(error, gt))
    smoothed = convolve(spread, gaussian_kernel(), mode="constant", cval=0.0)
    minimum = np.where(gt & (smoothed < error), smoothed, error)
    importance = np.where(gt, 1.0, 2 - WF_DECAY ** (dist / 5))
    weighted = minimum * importance

    tp = np.sum(gt) - np.sum(weighted[gt])
    fp = np.sum(weighted[~gt])
    recall = 1 - np.mean(weighted[gt])
    precision = tp / (tp + fp + EPS)
    beta2 = WF_BETA ** 2
    q = (1 + beta2) * recall * precision / (recall + beta2 * precision + EPS)
    return float(q)


def _object_similarity(
    values: Float[np.ndarray, "N"]
) -> float:
    if values.size == 0:
        return 0.0
    mean = np.mean(values)
    std = np.std(values, ddof=1) if values.size > 1 else 0.0
    return float(2 * mean / (mean ** 2 + 1 + std + EPS))


def object_score(
    pred: Float[np.ndarray, "H W"], gt: Bool[np.ndarray, "H W"]
) -> float:
    """Object-aware similarity of foreground and background."""
    u = np.mean(gt)
    fg = _object_similarity(pred[gt])
    bg = _object_similarity(1 - pred[~gt])
    return float(u * fg + (1 - u) * bg)


def _ssim(pred: Float[np.ndarray, "h w"], gt: Float[np.ndarray, "h w"]) -> float:
    n = pred.size
    x, y = np.mean(pred), np.mean(gt)
    if n > 1:
        sigma_x = np.sum((pred - x) ** 2) / (n - 1)
        sigma_y = np.sum((gt - y) ** 2) / (n - 1)
        sigma_xy = np.sum((pred - x) * (gt - y)) / (n - 1)
    else:
        sigma_x = sigma_y = sigma_xy = 0.0

    alpha = 4 * x * y * sigma_xy
    beta = (x ** 2 + y ** 2) * (sigma_x + sigma_y)
    if alpha != 0:
        return float(alpha / (beta + EPS))
    return 1.0 if beta == 0 else 0.0


def split_points(coords: Int[np.ndarray, "N"], size: int) -> list[int]:
    """Block boundaries nearest to the centroid of `coords`.

    A boundary `k` separates pixels `k − 1` and `k`, so it sits at `k − ½`
    in pixel-center coordinates. When the centroid lies exactly between two
    boundaries both are returned. Computed in integers, so a mirrored mask
    gets exactly the mirrored boundaries.
    """
    n = coords.size
    if n == 0:
        half, odd = divmod(size, 2)
        return [half, half + 1] if odd else [half]
    q, r = divmod(2 * int(np.sum(coords)) + n, 2 * n)
    if r < n:
        return [q]
    if r > n:
        return [q + 1]
    return [q, q + 1]


def region_score(
    pred: Float[np.ndarray, "H W"], gt: Bool[np.ndarray, "H W"]
) -> float:
    """Area-weighted SSIM of the four blocks around the centroid.

    If the centroid is equidistant from two block boundaries along an axis,
    the scores of both splits are averaged.
    """
    h, w = gt.shape
    rows, cols = np.nonzero(gt)
    gtf = gt.astype(np.float64)

    def _split(y: int, x: int) -> float:
        score = 0.0
        for rs, cs in (
            (slice(0, y), slice(0, x)), (slice(0, y), slice(x, w)),
            (slice(y, h), slice(0, x)), (slice(y, h), slice(x, w))
        ):
            block = pred[rs, cs]
            if block.size == 0:
                continue
            score += block.size / (h * w) * _ssim(block, gtf[rs, cs])
        return score

    scores = [
        _split(y, x)
        for y in split_points(rows, h) for x in split_points(cols, w)]
    return float(np.mean(scores))


def s_measure(
    pred: Shaped[np.ndarray, "H W"], gt: Shaped[np.ndarray, "H W"]
) -> float:
    """Structure measure `α · S_object + (1 − α) · S_region`, `α = 0.5`.

    An empty ground truth scores `1 − mean(pred)`, a full one `mean(pred)`.
    """
    pred, gt = prepare(pred, gt)
    y = np.mean(gt)
    if y == 0:
        return float(1 - np.mean(pred))
    if y == 1:
        return float(np.mean(pred))
    score = (
        S_ALPHA * object_score(pred, gt)
        + (1 - S_ALPHA) * region_score(pred, gt))
    return max(0.0, float(score))


def enhanced_alignment(
    tp: Int[np.ndarray, "T"], pos: Int[np.ndarray, "T"], n_gt: int, n: int
) -> Float[np.ndarray, "T"]:
    """Enhanced-alignment score at each threshold, from pixel counts.

    A binarized prediction and the ground truth take two values each, so the
    alignment matrix has four distinct entries; each is weighted by how many
    pixels fall in that (prediction, ground truth) part.
    """
    tp = tp.astype(np.float64)
    pos = pos.astype(np.float64)
    if n_gt == 0:
        return (n - pos) / n
    if n_gt == n:
        return pos / n

    mean_pred = pos / n
    mean_gt = n_gt / n
    parts = (
        (tp, 1 - mean_pred, 1 - mean_gt),
        (pos - tp, 1 - mean_pred, -mean_gt),
        (n_gt - tp, -mean_pred, 1 - mean_gt),
        (n - pos - (n_gt - tp), -mean_pred, -mean_gt),
    )
    total = np.zeros_like(tp)
    for count, a, b in parts:
        align = 2 * a * b / (a ** 2 + b ** 2 + EPS)
        total += count * (align + 1) ** 2 / 4
    return total / n


def e_measure_mean(
    pred: Shaped[np.ndarray, "H W"], gt: Shaped[np.ndarray, "H W"]
) -> float:
    """Mean enhanced-alignment measure over 256 thresholds."""
    pred, gt = prepare(pred, gt)
    pos, tp = threshold_counts(pred, gt)
    scores = enhanced_alignment(
        tp, pos, int(np.count_nonzero(gt)), int(gt.size))
    return float(np.mean(scores))
