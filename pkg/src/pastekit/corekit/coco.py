"""COCO-format annotation and results JSON, with canonical serialization.

Writers emit a fixed key order and fixed rounding (boxes to 2 decimals,
COCO convention), so saving the same dataset twice, or saving what was
just loaded, produces byte-identical files. Readers ignore unknown keys.

Toolkit extension keys (ignored by stock COCO consumers):
  - image: ``x_split``, ``x_color_mode``
  - annotation: ``x_visible_fraction``, ``x_source``
  - top level: ``x_provenance``
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from pastekit.corekit.dataset import (
    AnnotatedObject,
    Category,
    Dataset,
    DatasetError,
    ImageRecord,
)
from pastekit.corekit.geometry import BoundingBox
from pastekit.detections import Detection


class CocoFormatError(ValueError):
    """Schema violation in a COCO annotation or results file."""


def _round2(v: float) -> float:
    return round(float(v), 2)


def _bbox_json(box: BoundingBox) -> list[float]:
    return [_round2(box.x), _round2(box.y), _round2(box.w), _round2(box.h)]


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise CocoFormatError(message)


def save_coco(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset as canonical COCO annotation JSON."""
    images = [
        {
            "id": im.id,
            "file_name": im.file_name,
            "width": im.width,
            "height": im.height,
            "x_color_mode": im.color_mode,
            "x_split": im.split,
        }
        for im in dataset.images
    ]
    annotations = []
    ann_id = 1
    for im in dataset.images:
        for obj in im.objects:
            bbox = _bbox_json(obj.bbox)
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": im.id,
                    "category_id": obj.category_id,
                    "bbox": bbox,
                    "area": _round2(bbox[2] * bbox[3]),
                    "iscrowd": 0,
                    "x_visible_fraction": round(float(obj.visible_fraction), 6),
                    "x_source": obj.source,
                }
            )
            ann_id += 1
    doc: dict[str, object] = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": c.id, "name": c.name} for c in dataset.categories],
    }
    if dataset.provenance:
        doc["x_provenance"] = dict(sorted(dataset.provenance.items()))
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_coco(path: str | Path) -> Dataset:
    """Read a COCO annotation file, validating references and ids."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CocoFormatError(f"{path}: not valid JSON: {exc}") from exc
    _require(isinstance(doc, dict), f"{path}: top level must be an object")
    for key in ("images", "annotations", "categories"):
        _require(key in doc, f"{path}: missing top-level key {key!r}")
        _require(isinstance(doc[key], list), f"{path}: {key!r} must be a list")

    categories = []
    for cat in doc["categories"]:
        _require("id" in cat and "name" in cat, "category entry missing id or name")
        try:
            categories.append(Category(id=int(cat["id"]), name=str(cat["name"])))
        except DatasetError as exc:
            raise CocoFormatError(f"category {cat.get('id')}: {exc}") from exc
    cat_ids = {c.id for c in categories}
    _require(len(cat_ids) == len(categories), "duplicate category ids")

    objects_by_image: dict[int, list[AnnotatedObject]] = {}
    for ann in doc["annotations"]:
        aid = ann.get("id")
        for key in ("image_id", "category_id", "bbox"):
            _require(key in ann, f"annotation {aid}: missing {key!r}")
        _require(
            int(ann["category_id"]) in cat_ids,
            f"annotation {aid}: unknown category {ann['category_id']}",
        )
        _require(int(ann.get("iscrowd", 0)) == 0, f"annotation {aid}: crowd regions unsupported")
        bbox = ann["bbox"]
        _require(
            isinstance(bbox, list) and len(bbox) == 4,
            f"annotation {aid}: bbox must be [x, y, w, h]",
        )
        try:
            box = BoundingBox(*(float(v) for v in bbox))
        except ValueError as exc:
            raise CocoFormatError(f"annotation {aid}: {exc}") from exc
        try:
            obj = AnnotatedObject(
                category_id=int(ann["category_id"]),
                bbox=box,
                visible_fraction=float(ann.get("x_visible_fraction", 1.0)),
                source=str(ann.get("x_source", "manual")),
            )
        except DatasetError as exc:
            raise CocoFormatError(f"annotation {aid}: {exc}") from exc
        objects_by_image.setdefault(int(ann["image_id"]), []).append(obj)

    images = []
    seen_ids: set[int] = set()
    for img in doc["images"]:
        iid = img.get("id")
        for key in ("id", "file_name", "width", "height"):
            _require(key in img, f"image {iid}: missing {key!r}")
        _require(int(img["id"]) not in seen_ids, f"image {iid}: duplicate id")
        seen_ids.add(int(img["id"]))
        try:
            images.append(
                ImageRecord(
                    id=int(img["id"]),
                    file_name=str(img["file_name"]),
                    width=int(img["width"]),
                    height=int(img["height"]),
                    color_mode=str(img.get("x_color_mode", "rgb")),
                    objects=tuple(objects_by_image.pop(int(img["id"]), [])),
                    split=str(img.get("x_split", "test")),
                )
            )
        except DatasetError as exc:
            raise CocoFormatError(f"image {iid}: {exc}") from exc
    _require(
        not objects_by_image,
        f"annotations reference unknown image ids {sorted(objects_by_image)}",
    )
    try:
        return Dataset(
            categories=tuple(categories),
            images=tuple(images),
            provenance=dict(doc.get("x_provenance", {})),
        )
    except DatasetError as exc:
        raise CocoFormatError(str(exc)) from exc


def save_results(detections: Sequence[Detection], path: str | Path) -> None:
    """Write predictions as canonical COCO results JSON."""
    entries = [
        {
            "image_id": d.image_id,
            "category_id": d.category_id,
            "bbox": _bbox_json(d.bbox),
            "score": round(float(d.score), 6),
        }
        for d in detections
    ]
    Path(path).write_text(json.dumps(entries, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_results(path: str | Path) -> list[Detection]:
    """Read a COCO results file (list of scored detections)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CocoFormatError(f"{path}: not valid JSON: {exc}") from exc
    _require(isinstance(doc, list), f"{path}: results file must be a JSON list")
    detections = []
    for i, entry in enumerate(doc):
        for key in ("image_id", "category_id", "bbox", "score"):
            _require(key in entry, f"result {i}: missing {key!r}")
        score = float(entry["score"])
        _require(0.0 <= score <= 1.0, f"result {i}: score {score} outside [0, 1]")
        bbox = entry["bbox"]
        _require(
            isinstance(bbox, list) and len(bbox) == 4,
            f"result {i}: bbox must be [x, y, w, h]",
        )
        try:
            box = BoundingBox(*(float(v) for v in bbox))
        except ValueError as exc:
            raise CocoFormatError(f"result {i}: {exc}") from exc
        detections.append(
            Detection(
                image_id=int(entry["image_id"]),
                category_id=int(entry["category_id"]),
                bbox=box,
                score=score,
            )
        )
    return detections
