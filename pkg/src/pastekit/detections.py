"""Scored detection record shared by the COCO reader and the evaluator."""

from __future__ import annotations

from dataclasses import dataclass, field

from pastekit.corekit.geometry import BoundingBox


@dataclass(frozen=True)
class Detection:
    """One predicted box with a confidence score.

    ``image_id`` and ``category_id`` follow the ground-truth dataset the
    detection is evaluated against.
    """

    image_id: int
    category_id: int
    bbox: BoundingBox
    score: float = field(default=1.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "score", float(self.score))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
