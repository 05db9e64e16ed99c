"""Evaluation measures.

| Measure | Function | Range | Better |
|---------|----------|-------|--------|
| Maximal F-measure | [`max_f_measure`][.] | `[0, 1]` | higher |
| Weighted F-measure | [`weighted_f_measure`][.] | `[0, 1]` | higher |
| Mean absolute error | [`mae`][.] | `[0, 1]` | lower |
| S-measure | [`s_measure`][.] | `[0, 1]` | higher |
| Mean E-measure | [`e_measure_mean`][.] | `[0, 1]` | higher |
| Human correction efforts | [`hce`][.] | `0, 1, ...` | lower |

[`evaluate_pair`][.] and [`evaluate_dir`][.] compute all six from image
files; dataset-level values are the means of the per-image values.
"""

from jaxtyping import install_import_hook

with install_import_hook("udun.metrics", "beartype.beartype"):
    from .hce import HCEReport, hce, hce_report, polygon_vertices
    from .measures import (
        F_BETA2,
        NUM_THRESHOLDS,
        S_ALPHA,
        THRESHOLDS,
        WF_BETA,
        e_measure_mean,
        mae,
        max_f_measure,
        s_measure,
        weighted_f_measure,
    )
    from .report import (
        MetricReport,
        aggregate,
        evaluate_arrays,
        evaluate_dir,
        evaluate_pair,
        write_report,
    )

__all__ = [
    "HCEReport", "hce", "hce_report", "polygon_vertices",
    "F_BETA2", "NUM_THRESHOLDS", "S_ALPHA", "THRESHOLDS", "WF_BETA",
    "e_measure_mean", "mae", "max_f_measure", "s_measure",
    "weighted_f_measure",
    "MetricReport", "aggregate", "evaluate_arrays", "evaluate_dir",
    "evaluate_pair", "write_report",
]
