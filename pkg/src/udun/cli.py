"""Command line interface.

```
udun train --data-root <root> --out runs/udun --config udun.cfg
udun infer --source <image or dir> --checkpoint <ckpt> --out <dir>
udun eval --preds <dir> --gts <dir> --gamma 5 --out report.jsonl
udun decouple-labels --masks <dir> --out <dir> --band-width 5
udun decouple-labels --data-root <root> --size 1024
udun make-synthetic --out <root> --count 8 --size 256
udun report-model --config udun.cfg
```

`--data-root` defaults to `$UDUN_DATA`. Configuration files use the
`key = value` format of [`load_config`][udun.config.load_config];
`--overrides key=value ...` is applied on top.
"""

import json
import logging

import tyro
from rich.logging import RichHandler

from . import data, infer, metrics, model, train
from .config import load_config


def _setup_logging(verbose: int) -> logging.Logger:
    logging.basicConfig(
        level=verbose, format="%(name)-12s  %(message)s", datefmt="[%H:%M:%S]",
        handlers=[RichHandler()], force=True)
    return logging.getLogger("udun/cli")


def cmd_train(
    data_root: str | None = None, out: str = "runs/udun",
    config: str | None = None, overrides: tuple[str, ...] = (),
    resume: str | None = None, until_epoch: int | None = None,
    device: str = "cpu", verbose: int = 20
) -> None:
    """Train a model.

    Args:
        data_root: dataset root with `im/` and `gt/`; defaults to
            `$UDUN_DATA`.
        out: run directory.
        config: `key = value` configuration file.
        overrides: `key=value` entries applied after the file.
        resume: checkpoint to resume from.
        until_epoch: stop after this many finished epochs.
        device: training device.
        verbose: logging verbosity level (10-debug; 20-info; 30-warning;
            40-error).
    """
    log = _setup_logging(verbose)
    model_cfg, train_cfg = load_config(config, overrides)
    result = train.train(
        data.data_root(data_root), model_cfg, train_cfg, out, resume=resume,
        until_epoch=until_epoch, device=device)
    log.info(
        f"Finished {result.epoch} epochs ({result.step} steps); "
        f"checkpoint: {result.checkpoint}")


def cmd_infer(
    source: str, checkpoint: str, out: str, dump_aux: bool = False,
    dump_features: bool = False, device: str = "cpu", verbose: int = 20
) -> None:
    """Predict masks.

    Args:
        source: image file or directory of images.
        checkpoint: trained checkpoint.
        out: output directory.
        dump_aux: also write the trunk and structure predictions.
        dump_features: also write `T54`, `S65` and `F` heat maps.
        device: inference device.
        verbose: logging verbosity level.
    """
    _setup_logging(verbose)
    infer.infer(
        source, checkpoint, out, dump_aux=dump_aux,
        dump_features=dump_features, device=device)


def cmd_eval(
    preds: str, gts: str, out: str = "report.jsonl", gamma: int = 5,
    epsilon: float = 2.0, min_area: int | None = None,
    csv: str | None = None, workers: int = 1, verbose: int = 20
) -> None:
    """Evaluate predictions against ground truths.

    Args:
        preds: directory of predictions.
        gts: directory of ground truth masks (matched by file stem).
        out: JSON lines report (one line per image, then the aggregate).
        gamma: HCE error tolerance, in pixels.
        epsilon: HCE polygon simplification tolerance, in pixels.
        min_area: smallest HCE error region; `gamma²` by default.
        csv: optional per-image CSV report.
        workers: number of evaluation threads.
        verbose: logging verbosity level.
    """
    log = _setup_logging(verbose)
    reports = metrics.evaluate_dir(
        preds, gts, gamma=gamma, epsilon=epsilon, min_area=min_area,
        workers=workers)
    summary = metrics.write_report(out, reports, csv_path=csv)
    log.info(json.dumps(summary))


def cmd_decouple_labels(
    masks: str | None = None, out: str | None = None,
    band_width: int | None = None, data_root: str | None = None,
    size: int = 1024, overwrite: bool = False, verbose: int = 20
) -> None:
    """Write trunk and structure labels.

    With `--masks` and `--out`, every mask in a directory is decoupled at its
    own resolution. Otherwise the masks of a dataset root are decoupled at
    the training resolution into its `labels/` cache.

    Args:
        masks: directory of ground-truth masks.
        out: output directory for the labels of `masks`.
        band_width: structure band radius, in pixels; 5 for `--masks`, and
            scaled from 5 px at 1024 for a dataset root, if not given.
        data_root: dataset root; defaults to `$UDUN_DATA`.
        size: label resolution for a dataset root (the training `hr_size`).
        overwrite: recompute existing labels.
        verbose: logging verbosity level.
    """
    _setup_logging(verbose)
    if (masks is None) != (out is None):
        raise ValueError("--masks and --out must be given together.")
    if masks is not None and out is not None:
        data.decouple_dir(
            masks, out, band_width=band_width, overwrite=overwrite)
    else:
        data.prepare_labels(
            data.data_root(data_root), size=size, band_width=band_width,
            overwrite=overwrite)


def cmd_make_synthetic(
    out: str, count: int = 8, size: int = 256, seed: int = 0,
    verbose: int = 20
) -> None:
    """Generate a synthetic dataset.

    Args:
        out: dataset root to write.
        count: number of samples.
        size: image size.
        seed: generation seed.
        verbose: logging verbosity level.
    """
    _setup_logging(verbose)
    data.make_synthetic(count, size, seed, out)


def cmd_report_model(
    config: str | None = None, overrides: tuple[str, ...] = (),
    hr_size: int | None = None, lr_size: int | None = None,
    verbose: int = 20
) -> None:
    """Report parameter and operation counts.

    Operations are reported twice: as multiply-accumulates (MACs), and as
    FLOPs counting each multiply-accumulate as two operations.

    Args:
        config: `key = value` configuration file.
        overrides: `key=value` entries applied after the file.
        hr_size: large input size for the operation count.
        lr_size: small input size for the operation count.
        verbose: logging verbosity level.
    """
    log = _setup_logging(verbose)
    model_cfg, _ = load_config(config, overrides)
    for part, count in model.param_breakdown(model_cfg).items():
        log.info(f"{part:>10}: {count / 1e6:8.3f} M parameters")
    log.info(
        f"{'total':>10}: {model.count_params(model_cfg) / 1e6:8.3f} M "
        f"parameters")

    hr = hr_size or model_cfg.hr_size
    lr = lr_size or model_cfg.lr_size
    macs = model.count_flops(model_cfg, hr_size=hr, lr_size=lr)
    inputs = f"{hr} + {lr}" if model_cfg.dual_input else f"{hr}"
    log.info(f"Operations for one {inputs} px forward pass:")
    log.info(f"{'GMACs':>10}: {macs:8.2f} (multiply-accumulates)")
    log.info(f"{'GFLOPs':>10}: {2 * macs:8.2f} (2 × MACs)")


def main() -> None:
    """Entry point of the `udun` command."""
    tyro.extras.subcommand_cli_from_dict({
        "train": cmd_train,
        "infer": cmd_infer,
        "eval": cmd_eval,
        "decouple-labels": cmd_decouple_labels,
        "make-synthetic": cmd_make_synthetic,
        "report-model": cmd_report_model,
    })


if __name__ == "__main__":
    main()
