"""Annotation derivation from segmentation masks.

Single-object photos come with one or more candidate masks from an
upstream segmenter. The rules here turn those candidates into one box
annotation per image: masks whose tight box nearly fills the frame are
background, small specks and holes are morphological noise, and the
largest surviving mask is the object.

A differencing segmenter against an empty-scene reference image is
included as a self-contained mask source for controlled captures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import cv2
import numpy as np

from pastekit.corekit.dataset import AnnotatedObject, Dataset
from pastekit.corekit.geometry import full_image_box, iou
from pastekit.corekit.raster import BinaryMask


class AllMasksBackgroundError(ValueError):
    """Every candidate mask was classified as background."""


class EmptyAfterCleaningError(ValueError):
    """No candidate mask survived morphological cleanup."""


@dataclass(frozen=True)
class AnnotRules:
    """Thresholds for mask-derived and manual annotations.

    ``speck_area_max`` / ``hole_area_max`` are pixel counts; None means
    0.1% of the image area, resolved against the mask being cleaned.
    """

    background_iou_min: float = 0.90
    visible_min: float = 0.20
    split_side_min: float = 0.10
    speck_area_max: Optional[int] = None
    hole_area_max: Optional[int] = None

    def __post_init__(self) -> None:
        for name in ("background_iou_min", "visible_min", "split_side_min"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")

    def speck_limit(self, image_area: int) -> int:
        if self.speck_area_max is not None:
            return self.speck_area_max
        return max(1, round(0.001 * image_area))

    def hole_limit(self, image_area: int) -> int:
        if self.hole_area_max is not None:
            return self.hole_area_max
        return max(1, round(0.001 * image_area))


@dataclass(frozen=True)
class MaskSet:
    """Candidate segmentation masks for one image."""

    image: str
    width: int
    height: int
    masks: tuple[BinaryMask, ...] = ()

    def __post_init__(self) -> None:
        for m in self.masks:
            if (m.width, m.height) != (self.width, self.height):
                raise ValueError(
                    f"mask {m.width}x{m.height} does not match image "
                    f"{self.width}x{self.height}"
                )


def is_background(mask: BinaryMask, rules: AnnotRules) -> bool:
    """True when the mask's tight box nearly fills the frame.

    Candidate masks are full-image rasters, so the frame is the mask's
    own extent. Raises EmptyMaskError on an empty mask.
    """
    frame = full_image_box(mask.width, mask.height)
    return iou(mask.tight_bbox(), frame) >= rules.background_iou_min


def clean_mask(mask: BinaryMask, rules: AnnotRules) -> BinaryMask:
    """Remove small isolated components, then fill small enclosed holes.

    4-connectivity throughout; both thresholds are strict (a component
    of exactly the limit survives). Idempotent.
    """
    area = mask.width * mask.height
    pixels = mask.pixels.astype(np.uint8)

    speck_max = rules.speck_limit(area)
    n, labels, stats, _ = cv2.connectedComponentsWithStats(pixels, connectivity=4)
    keep = np.zeros(n, dtype=bool)
    for lab in range(1, n):
        keep[lab] = stats[lab, cv2.CC_STAT_AREA] >= speck_max
    fg = keep[labels]

    # Holes are background components that never touch the border.
    hole_max = rules.hole_limit(area)
    bg = (~fg).astype(np.uint8)
    n, labels, stats, _ = cv2.connectedComponentsWithStats(bg, connectivity=4)
    border = np.zeros(n, dtype=bool)
    border[np.unique(labels[0, :])] = True
    border[np.unique(labels[-1, :])] = True
    border[np.unique(labels[:, 0])] = True
    border[np.unique(labels[:, -1])] = True
    fill = np.zeros(n, dtype=bool)
    for lab in range(1, n):
        fill[lab] = not border[lab] and stats[lab, cv2.CC_STAT_AREA] < hole_max
    return BinaryMask(fg | fill[labels])


def annotate_single(
    ms: MaskSet, category_id: int, rules: AnnotRules = AnnotRules()
) -> AnnotatedObject:
    """Pick the object mask for a single-object image and box it.

    Cleans every candidate, discards background masks, and returns the
    largest survivor as a fully visible mask-derived annotation. The
    result does not depend on the order of candidates.
    """
    if not ms.masks:
        raise EmptyAfterCleaningError(f"{ms.image}: no candidate masks")
    survivors = []
    any_cleaned = False
    for m in ms.masks:
        cleaned = clean_mask(m, rules)
        if cleaned.is_empty:
            continue
        any_cleaned = True
        if not is_background(cleaned, rules):
            survivors.append(cleaned)
    if not survivors:
        if any_cleaned:
            raise AllMasksBackgroundError(
                f"{ms.image}: all {len(ms.masks)} candidate masks are background"
            )
        raise EmptyAfterCleaningError(
            f"{ms.image}: no mask survived cleanup (specks/holes only)"
        )
    # Largest by pixel count; break ties by box coordinates so the
    # choice is independent of candidate order.
    best = min(survivors, key=lambda m: (-m.pixel_count, m.tight_bbox().as_xywh()))
    return AnnotatedObject(
        category_id=category_id,
        bbox=best.tight_bbox(),
        visible_fraction=1.0,
        source="mask-derived",
    )


def segment_controlled(
    image: np.ndarray,
    reference: np.ndarray,
    threshold: int = 40,
    rules: AnnotRules = AnnotRules(),
    name: str = "",
) -> MaskSet:
    """Segment objects by differencing against an empty-scene reference.

    Pixels whose absolute difference from the reference exceeds the
    threshold in any channel are foreground; after cleanup, each
    4-connected component becomes one candidate mask.
    """
    if image.shape[:2] != reference.shape[:2]:
        raise ValueError(
            f"image {image.shape[:2]} and reference {reference.shape[:2]} differ"
        )
    a = image.astype(np.int16)
    b = reference.astype(np.int16)
    diff = np.abs(a - b)
    if diff.ndim == 3:
        diff = diff.max(axis=2)
    fg = clean_mask(BinaryMask(diff >= threshold), rules)
    h, w = fg.pixels.shape
    masks: list[BinaryMask] = []
    if not fg.is_empty:
        n, labels = cv2.connectedComponents(fg.pixels.astype(np.uint8), connectivity=4)
        for lab in range(1, n):
            masks.append(BinaryMask(labels == lab))
    return MaskSet(image=name, width=w, height=h, masks=tuple(masks))


@dataclass(frozen=True)
class Violation:
    """One annotation-rule finding from validate_manual."""

    image_id: int
    kind: str
    message: str

    def as_line(self) -> str:
        return f"image {self.image_id}: {self.kind}: {self.message}"

    def as_dict(self) -> dict:
        return {"image_id": self.image_id, "kind": self.kind, "message": self.message}


def validate_manual(
    dataset: Dataset, rules: AnnotRules = AnnotRules(), merge_iou: float = 0.9
) -> list[Violation]:
    """Report annotations that break the manual-labeling rules.

    Flags visible_fraction below ``rules.visible_min`` and pairs of
    same-category boxes with IoU above ``merge_iou`` (fragments of a
    split object that should share one extrapolated box). Report only;
    nothing is modified.
    """
    violations: list[Violation] = []
    for im in dataset.images:
        for idx, obj in enumerate(im.objects):
            if obj.visible_fraction < rules.visible_min:
                violations.append(
                    Violation(
                        image_id=im.id,
                        kind="low-visibility",
                        message=(
                            f"annotation {idx} visible_fraction "
                            f"{obj.visible_fraction:.3f} < {rules.visible_min}"
                        ),
                    )
                )
        for i in range(len(im.objects)):
            for j in range(i + 1, len(im.objects)):
                a, b = im.objects[i], im.objects[j]
                if a.category_id != b.category_id:
                    continue
                overlap = iou(a.bbox, b.bbox)
                if overlap > merge_iou:
                    violations.append(
                        Violation(
                            image_id=im.id,
                            kind="merge-candidate",
                            message=(
                                f"annotations {i} and {j} (category "
                                f"{a.category_id}) overlap at IoU {overlap:.3f}"
                            ),
                        )
                    )
    return violations
