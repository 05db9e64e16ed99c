"""Datasets, augmentation and image files.

| Module | Contents |
|--------|----------|
| `io` | Reading / writing images and masks |
| `augment` | Flip + crop augmentation, resizing, dual-size input |
| `dataset` | Dataset discovery, label caching, samples and epoch order |
| `synthetic` | Procedural dataset generation |
"""

from jaxtyping import install_import_hook

with install_import_hook("udun.data", "beartype.beartype"):
    from .augment import augment, make_dual_input, normalize, resize
    from .dataset import (
        DATA_ENV,
        EpochSampler,
        SampleRecord,
        SegmentationDataset,
        data_root,
        decouple_dir,
        discover,
        load_image,
        load_labels,
        load_mask,
        prepare_labels,
    )
    from .io import (
        list_images,
        read_image,
        read_mask,
        to_uint8,
        write_image,
        write_mask,
    )
    from .synthetic import KINDS, draw_grid, draw_mask, make_synthetic, render_sample

__all__ = [
    "augment", "make_dual_input", "normalize", "resize",
    "DATA_ENV", "EpochSampler", "SampleRecord", "SegmentationDataset",
    "data_root", "decouple_dir", "discover", "load_image", "load_labels",
    "load_mask", "prepare_labels",
    "list_images", "read_image", "read_mask", "to_uint8", "write_image",
    "write_mask",
    "KINDS", "draw_grid", "draw_mask", "make_synthetic", "render_sample",
]
