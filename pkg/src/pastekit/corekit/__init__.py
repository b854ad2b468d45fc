"""Geometry, raster, and dataset model shared by all pipeline stages."""

from pastekit.corekit.coco import (
    CocoFormatError,
    load_coco,
    load_results,
    save_coco,
    save_results,
)
from pastekit.corekit.dataset import (
    KNOWN_SPLITS,
    SOURCES,
    AnnotatedObject,
    Category,
    Dataset,
    DatasetError,
    ImageRecord,
)
from pastekit.corekit.geometry import BoundingBox, full_image_box, iou
from pastekit.corekit.raster import (
    MASK_SUFFIX,
    BinaryMask,
    EmptyMaskError,
    gray_to_rgb,
    load_image,
    load_mask,
    resize_longest,
    save_image,
    save_mask,
    tight_bbox,
    to_grayscale,
)

__all__ = [
    "AnnotatedObject",
    "BinaryMask",
    "BoundingBox",
    "Category",
    "CocoFormatError",
    "Dataset",
    "DatasetError",
    "EmptyMaskError",
    "ImageRecord",
    "KNOWN_SPLITS",
    "MASK_SUFFIX",
    "SOURCES",
    "full_image_box",
    "gray_to_rgb",
    "iou",
    "load_coco",
    "load_image",
    "load_mask",
    "load_results",
    "resize_longest",
    "save_coco",
    "save_image",
    "save_mask",
    "save_results",
    "tight_bbox",
    "to_grayscale",
]
