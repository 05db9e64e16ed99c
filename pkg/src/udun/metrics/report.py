"""Per-image metric reports and dataset evaluation."""

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np
from jaxtyping import Shaped

from ..data.io import list_images, read_mask
from .hce import hce_report
from .measures import e_measure_mean, mae, max_f_measure, s_measure, weighted_f_measure

METRICS = ("max_f", "weighted_f", "mae", "s_measure", "e_measure", "hce")


@dataclass(frozen=True)
class MetricReport:
    """All six measures of one prediction.

    Attributes:
        image_id: sample id.
        max_f: maximal F-measure.
        weighted_f: weighted F-measure.
        mae: mean absolute error.
        s_measure: S-measure.
        e_measure: mean E-measure.
        hce: human correction efforts (`hce_fp + hce_fn`).
        hce_fp: correction vertices of false-positive regions.
        hce_fn: correction vertices of false-negative regions.
    """

    image_id: str
    max_f: float
    weighted_f: float
    mae: float
    s_measure: float
    e_measure: float
    hce: int
    hce_fp: int
    hce_fn: int

    def as_dict(self) -> dict[str, str | float | int]:
        return asdict(self)


def evaluate_arrays(
    pred: Shaped[np.ndarray, "H W"], gt: Shaped[np.ndarray, "H W"],
    gamma: int = 5, epsilon: float = 2.0, min_area: int | None = None,
    image_id: str = ""
) -> MetricReport:
    """Evaluate a `[0, 1]` prediction against a binary ground truth.

    The prediction is binarized at 0.5 for HCE only.
    """
    pred = np.asarray(pred, dtype=np.float64)
    parts = hce_report(pred > 0.5, gt, gamma, epsilon, min_area)
    return MetricReport(
        image_id=image_id,
        max_f=max_f_measure(pred, gt),
        weighted_f=weighted_f_measure(pred, gt),
        mae=mae(pred, gt),
        s_measure=s_measure(pred, gt),
        e_measure=e_measure_mean(pred, gt),
        hce=parts.total, hce_fp=parts.fp, hce_fn=parts.fn)


def evaluate_pair(
    pred_path: str, gt_path: str, gamma: int = 5, epsilon: float = 2.0,
    min_area: int | None = None, image_id: str | None = None
) -> MetricReport:
    """Evaluate one prediction file against its ground truth file.

    Both files are read as single-channel images and normalized to `[0, 1]`;
    the ground truth is binarized at 0.5.

    Raises:
        ValueError: if a file cannot be read, or the dimensions differ.
    """
    pred = read_mask(pred_path)
    gt = read_mask(gt_path) > 0.5
    if pred.shape != gt.shape:
        raise ValueError(
            f"Prediction {pred_path} is {pred.shape[1]}×{pred.shape[0]}, but "
            f"ground truth {gt_path} is {gt.shape[1]}×{gt.shape[0]}.")
    if image_id is None:
        image_id = os.path.splitext(os.path.basename(gt_path))[0]
    return evaluate_arrays(
        pred, gt, gamma=gamma, epsilon=epsilon, min_area=min_area,
        image_id=image_id)


def evaluate_dir(
    pred_dir: str, gt_dir: str, gamma: int = 5, epsilon: float = 2.0,
    min_area: int | None = None, workers: int = 1
) -> list[MetricReport]:
    """Evaluate every ground truth in `gt_dir` against `pred_dir`.

    Predictions are matched to ground truths by file stem. Images are
    evaluated in `workers` threads; reports are sorted by image id.

    Raises:
        ValueError: if a ground truth has no prediction.
    """
    log = logging.getLogger("udun/metrics")
    preds = list_images(pred_dir)
    gts = list_images(gt_dir)
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise ValueError(
            f"{len(missing)} ground truths have no prediction in {pred_dir}: "
            f"{missing[:5]}")
    extra = sorted(set(preds) - set(gts))
    if extra:
        log.warning(f"Ignoring {len(extra)} predictions without ground truth.")

    def _one(k: str) -> MetricReport:
        return evaluate_pair(
            preds[k], gts[k], gamma=gamma, epsilon=epsilon,
            min_area=min_area, image_id=k)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        reports = list(pool.map(_one, sorted(gts)))
    log.info(f"Evaluated {len(reports)} images.")
    return sorted(reports, key=lambda r: r.image_id)


def aggregate(reports: list[MetricReport]) -> dict[str, float | int | None]:
    """Dataset-level values: per-metric means, the HCE sum, and the count.

    Metric means are `None` if there are no reports.
    """
    out: dict[str, float | int | None] = {"count": len(reports)}
    for name in (*METRICS, "hce_fp", "hce_fn"):
        values = [float(getattr(r, name)) for r in reports]
        out[name] = float(np.mean(values)) if values else None
    out["hce_sum"] = int(sum(r.hce for r in reports))
    return out


def write_report(
    path: str, reports: list[MetricReport], csv_path: str | None = None
) -> dict[str, float | int | None]:
    """Write JSON lines (one per image, then an aggregate line).

    Args:
        path: JSON lines output.
        reports: per-image reports.
        csv_path: optional CSV output with one row per image.

    Returns:
        The aggregate.
    """
    summary = aggregate(reports)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        for r in reports:
            f.write(json.dumps(r.as_dict()) + "\n")
        f.write(json.dumps({"aggregate": summary}) + "\n")

    if csv_path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(csv_path)), exist_ok=True)
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(
                f, fieldnames=[fd.name for fd in fields(MetricReport)])
            writer.writeheader()
            for r in reports:
                writer.writerow(r.as_dict())
    return summary
