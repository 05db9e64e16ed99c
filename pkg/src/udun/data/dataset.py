"""Dataset discovery, label caching and sample loading.

A dataset root follows the DIS5K split layout:

```
<root>/
    im/             # RGB images
    gt/             # binary masks, same file stem as the image
    labels/         # cached labels (written by `prepare_labels`)
        <id>_trunk.png
        <id>_struct.png
```

!!! info "Determinism"

    The augmentation of sample `i` in epoch `e` draws from
    `np.random.default_rng([seed, e, i])`, and the epoch order is the
    permutation drawn from `np.random.default_rng([seed, e])`. Neither
    depends on the number of data loader workers.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
import torch
from jaxtyping import Bool, Float32
from torch.utils.data import Dataset, Sampler

from ..config import TrainConfig, default_band_width
from ..labels import LabelTriplet, decouple, verify_triplet
from .augment import augment, make_dual_input, resize
from .io import list_images, read_image, read_mask, write_mask

DATA_ENV = "UDUN_DATA"


@dataclass(frozen=True)
class SampleRecord:
    """Paths of one sample.

    Attributes:
        id: sample id (shared file stem).
        image_path: RGB image.
        mask_path: binary mask.
        trunk_path: cached trunk label.
        structure_path: cached structure label.
    """

    id: str
    image_path: str
    mask_path: str
    trunk_path: str
    structure_path: str


def data_root(root: str | None = None) -> str:
    """Resolve the dataset root, falling back to `$UDUN_DATA`.

    Raises:
        ValueError: if neither is set.
    """
    root = root or os.environ.get(DATA_ENV)
    if not root:
        raise ValueError(
            f"No dataset root given, and ${DATA_ENV} is not set.")
    return root


def discover(root: str) -> list[SampleRecord]:
    """List the samples of a dataset root, sorted by id.

    Raises:
        ValueError: if `im/` or `gt/` is missing, or an image has no mask
            (or vice versa).
    """
    images = list_images(os.path.join(root, "im"))
    masks = list_images(os.path.join(root, "gt"))
    unpaired = sorted(set(images) ^ set(masks))
    if unpaired:
        raise ValueError(
            f"{len(unpaired)} samples in {root} lack an image or a mask: "
            f"{unpaired[:5]}")

    labels = os.path.join(root, "labels")
    return [
        SampleRecord(
            id=k, image_path=images[k], mask_path=masks[k],
            trunk_path=os.path.join(labels, f"{k}_trunk.png"),
            structure_path=os.path.join(labels, f"{k}_struct.png"))
        for k in sorted(images)]


def load_mask(path: str, size: int | None = None) -> Bool[np.ndarray, "H W"]:
    """Read a mask, binarize it at 0.5, and optionally resize it (nearest)."""
    mask = read_mask(path) > 0.5
    if size is not None:
        mask = resize(mask, (size, size), "nearest")
    return mask


def load_image(path: str, size: int | None = None) -> Float32[np.ndarray, "H W 3"]:
    """Read an RGB image as `float32` in `[0, 1]`, optionally resized."""
    image = read_image(path).astype(np.float32) / 255.0
    if size is not None:
        chw = resize(np.moveaxis(image, -1, 0), (size, size), "bilinear")
        image = np.ascontiguousarray(np.moveaxis(chw, 0, -1))
    return image


def load_labels(
    record: SampleRecord, size: int, band_width: int
) -> LabelTriplet:
    """Get the labels of a sample at `size`.

    Cached labels are used if they exist at this size; otherwise labels are
    computed from the mask.

    Raises:
        ValueError: if the cached labels violate the label invariants.
    """
    mask = load_mask(record.mask_path, size)
    if os.path.exists(record.trunk_path) and os.path.exists(
            record.structure_path):
        trunk = read_mask(record.trunk_path) > 0.5
        structure = read_mask(record.structure_path) > 0.5
        if trunk.shape == mask.shape and structure.shape == mask.shape:
            triplet = LabelTriplet(
                mask=mask, trunk=trunk, structure=structure,
                band_width=band_width)
            if not verify_triplet(triplet):
                raise ValueError(
                    f"Cached labels of {record.id!r} are inconsistent with "
                    f"its mask; rerun decouple-labels.")
            return triplet
    return decouple(mask, band_width)


def prepare_labels(
    root: str, size: int = 1024, band_width: int | None = None,
    overwrite: bool = False
) -> int:
    """Decouple every mask of a dataset root into cached labels.

    Masks are resized to `size` before decoupling, so the cached labels
    match the training resolution.

    Args:
        root: dataset root.
        size: label resolution.
        band_width: structure band radius; scaled from 5 px at 1024 if not
            given.
        overwrite: recompute labels which already exist.

    Returns:
        Number of label pairs written.
    """
    log = logging.getLogger("udun/labels")
    band_width = band_width or default_band_width(size)
    written = 0
    for record in discover(root):
        if not overwrite and os.path.exists(record.trunk_path) and (
                os.path.exists(record.structure_path)):
            continue
        triplet = decouple(load_mask(record.mask_path, size), band_width)
        write_mask(record.trunk_path, triplet.trunk)
        write_mask(record.structure_path, triplet.structure)
        written += 1
    log.info(f"Wrote {written} label pairs to {os.path.join(root, 'labels')}.")
    return written


def decouple_dir(
    masks_dir: str, out_dir: str, band_width: int | None = None,
    overwrite: bool = False
) -> int:
    """Decouple every mask in a directory at its own resolution.

    Writes `<id>_trunk.png` and `<id>_struct.png` to `out_dir` for each mask
    `<id>.*` in `masks_dir`.

    Args:
        masks_dir: directory of ground-truth masks.
        out_dir: output directory; created if missing.
        band_width: structure band radius, in pixels; 5 if not given.
        overwrite: recompute labels which already exist.

    Returns:
        Number of label pairs written.

    Raises:
        ValueError: if `masks_dir` is not a directory or `band_width < 1`.
    """
    log = logging.getLogger("udun/labels")
    if band_width is None:
        band_width = default_band_width(1024)
    masks = list_images(masks_dir)
    os.makedirs(out_dir, exist_ok=True)
    written = 0
    for k, path in masks.items():
        trunk = os.path.join(out_dir, f"{k}_trunk.png")
        structure = os.path.join(out_dir, f"{k}_struct.png")
        if not overwrite and os.path.exists(trunk) and (
                os.path.exists(structure)):
            continue
        triplet = decouple(load_mask(path), band_width)
        write_mask(trunk, triplet.trunk)
        write_mask(structure, triplet.structure)
        written += 1
    log.info(f"Wrote {written} of {len(masks)} label pairs to {out_dir}.")
    return written


class SegmentationDataset(Dataset):
    """Training / evaluation samples at the configured input sizes.

    Each item is a dict of

    - `image_hr`, `image_lr`: normalized `(3, hr, hr)` / `(3, lr, lr)` inputs;
    - `mask`, `trunk`, `structure`: `(1, hr, hr)` float labels;
    - `index`, `id`.

    Args:
        records: samples.
        config: sizes, band width, augmentation parameters and seed.
        train: apply augmentation.
    """

    def __init__(
        self, records: list[SampleRecord], config: TrainConfig,
        train: bool = True
    ) -> None:
        self.records = records
        self.config = config
        self.train = train
        self.epoch = 0
        self.band_width = config.band_width or default_band_width(
            config.hr_size)

    def set_epoch(self, epoch: int) -> None:
        """Select the augmentation stream of an epoch."""
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.records)

    def rng(self, index: int) -> np.random.Generator:
        """Augmentation generator of a sample in the current epoch."""
        return np.random.default_rng([self.config.seed, self.epoch, index])

    def __getitem__(self, index: int) -> dict:
        cfg = self.config
        record = self.records[index]
        image = load_image(record.image_path, cfg.hr_size)
        labels = load_labels(record, cfg.hr_size, self.band_width)
        if self.train:
            image, labels = augment(image, labels, self.rng(index), cfg)

        image_hr, image_lr = make_dual_input(image, cfg.hr_size, cfg.lr_size)

        def _label(x: np.ndarray) -> torch.Tensor:
            return torch.from_numpy(x.astype(np.float32))[None]

        return {
            "image_hr": image_hr, "image_lr": image_lr,
            "mask": _label(labels.mask), "trunk": _label(labels.trunk),
            "structure": _label(labels.structure),
            "index": index, "id": record.id}


class EpochSampler(Sampler[int]):
    """Seeded per-epoch permutation of sample indices.

    Args:
        num_samples: dataset size.
        seed: run seed.
        shuffle: permute; if `False`, samples are visited in order.
    """

    def __init__(self, num_samples: int, seed: int, shuffle: bool = True) -> None:
        self.num_samples = num_samples
        self.seed = seed
        self.shuffle = shuffle
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def order(self) -> list[int]:
        """Sample order of the current epoch."""
        if not self.shuffle:
            return list(range(self.num_samples))
        rng = np.random.default_rng([self.seed, self.epoch])
        return [int(i) for i in rng.permutation(self.num_samples)]

    def __iter__(self):
        return iter(self.order())

    def __len__(self) -> int:
        return self.num_samples
