"""Dataset model: categories, annotated objects, image records, datasets.

All types are immutable values after construction and safe to share
between worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from pastekit.corekit.geometry import BoundingBox

KNOWN_SPLITS = frozenset(
    {
        "train_b",
        "train_s",
        "train_n",
        "val",
        "test",
        "test_r",
        "test_i",
        "test_u",
        "test_l",
        "test_c",
        "negatives",
    }
)

SOURCES = frozenset({"manual", "mask-derived", "synthetic"})

COLOR_MODES = frozenset({"rgb", "gray"})


class DatasetError(ValueError):
    """Integrity violation in a dataset (duplicate ids, bad references)."""


@dataclass(frozen=True)
class Category:
    id: int
    name: str

    def __post_init__(self) -> None:
        if self.id < 1:
            raise DatasetError(f"category id must be >= 1, got {self.id}")
        if not self.name:
            raise DatasetError("category name must be non-empty")


@dataclass(frozen=True)
class AnnotatedObject:
    """One labeled object on an image."""

    category_id: int
    bbox: BoundingBox
    visible_fraction: float = 1.0
    source: str = "manual"

    def __post_init__(self) -> None:
        if not (0.0 <= self.visible_fraction <= 1.0):
            raise DatasetError(f"visible_fraction must be in [0, 1], got {self.visible_fraction}")
        if self.source not in SOURCES:
            raise DatasetError(f"unknown source {self.source!r}; expected one of {sorted(SOURCES)}")


@dataclass(frozen=True)
class ImageRecord:
    """One image with its objects and split membership."""

    id: int
    file_name: str
    width: int
    height: int
    color_mode: str = "rgb"
    objects: tuple[AnnotatedObject, ...] = ()
    split: str = "train_b"

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.width < 1 or self.height < 1:
            raise DatasetError(f"image {self.id}: non-positive dimensions")
        if self.color_mode not in COLOR_MODES:
            raise DatasetError(f"image {self.id}: unknown color mode {self.color_mode!r}")
        if self.split not in KNOWN_SPLITS:
            raise DatasetError(
                f"image {self.id}: unknown split {self.split!r}; expected one of {sorted(KNOWN_SPLITS)}"
            )


@dataclass(frozen=True)
class Dataset:
    """Split-aware image collection with a category table.

    provenance carries reproducibility metadata (master seed, config
    hash) and round-trips through serialization untouched.
    """

    categories: tuple[Category, ...]
    images: tuple[ImageRecord, ...]
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "provenance", dict(self.provenance))
        cat_ids = [c.id for c in self.categories]
        if len(set(cat_ids)) != len(cat_ids):
            raise DatasetError("duplicate category ids")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise DatasetError("duplicate category names")
        img_ids = [im.id for im in self.images]
        if len(set(img_ids)) != len(img_ids):
            raise DatasetError("duplicate image ids")
        known = set(cat_ids)
        for im in self.images:
            for obj in im.objects:
                if obj.category_id not in known:
                    raise DatasetError(
                        f"image {im.id}: object references unknown category {obj.category_id}"
                    )

    def category_by_id(self, category_id: int) -> Category:
        for c in self.categories:
            if c.id == category_id:
                return c
        raise KeyError(category_id)

    def image_by_id(self, image_id: int) -> ImageRecord:
        for im in self.images:
            if im.id == image_id:
                return im
        raise KeyError(image_id)

    def images_by_split(self, split: str) -> tuple[ImageRecord, ...]:
        return tuple(im for im in self.images if im.split == split)

    def splits(self) -> tuple[str, ...]:
        seen: list[str] = []
        for im in self.images:
            if im.split not in seen:
                seen.append(im.split)
        return tuple(seen)

    def gt_count(self, category_id: Optional[int] = None) -> int:
        if category_id is None:
            return sum(len(im.objects) for im in self.images)
        return sum(
            1 for im in self.images for obj in im.objects if obj.category_id == category_id
        )

    def subset(self, image_ids: Iterable[int]) -> "Dataset":
        wanted = set(image_ids)
        return Dataset(
            categories=self.categories,
            images=tuple(im for im in self.images if im.id in wanted),
            provenance=self.provenance,
        )
