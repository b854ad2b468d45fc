"""Shared fixture builders: object photos, pools, and source trees."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from pastekit import composer
from pastekit.corekit.dataset import Category
from pastekit.corekit.raster import BinaryMask, save_image, save_mask


def ellipse_mask(h: int, w: int, cy: int, cx: int, ry: int, rx: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def object_photo(
    rng: np.random.Generator, h: int, w: int
) -> tuple[np.ndarray, np.ndarray]:
    """Dark scene with one bright elliptical object; returns (image, mask)."""
    img = rng.integers(25, 45, (h, w, 3)).astype(np.uint8)
    cy = h // 2 + int(rng.integers(-h // 8, h // 8 + 1))
    cx = w // 2 + int(rng.integers(-w // 8, w // 8 + 1))
    ry = int(rng.integers(h // 6, h // 3))
    rx = int(rng.integers(w // 6, w // 3))
    mask = ellipse_mask(h, w, cy, cx, ry, rx)
    color = rng.integers(120, 250, 3)
    img[mask] = color
    return img, mask


def build_pools(
    seed: int = 0, n_cutouts: int = 4, size_range: tuple[int, int] = (30, 60)
) -> composer.PoolSet:
    """Small deterministic pool set with two categories."""
    rng = np.random.default_rng(seed)
    cutouts = []
    for k in range(n_cutouts):
        h = int(rng.integers(*size_range))
        w = int(rng.integers(*size_range))
        img, mask = object_photo(rng, h, w)
        bm = BinaryMask(mask)
        tb = bm.tight_bbox()
        x, y, bw, bh = (int(v) for v in tb.as_xywh())
        cutouts.append(
            composer.Cutout(
                category_id=(k % 2) + 1,
                patch=img[y:y + bh, x:x + bw].copy(),
                mask=bm.cropped(tb),
            )
        )
    categories = (Category(1, "alpha"), Category(2, "beta"))
    tiles = [
        rng.integers(0, 255, (80, 100, 3)).astype(np.uint8) for _ in range(3)
    ]
    negatives = [
        rng.integers(10, 200, (70, 110, 3)).astype(np.uint8) for _ in range(3)
    ]
    return composer.PoolSet(
        cutouts=cutouts, categories=categories, tiles=tiles, negatives=negatives
    )


@pytest.fixture
def pools() -> composer.PoolSet:
    return build_pools()


def build_source_tree(root: Path, n_objects: int = 6, seed: int = 99) -> dict:
    """Write an on-disk cutout source: photos, masks, manifest, negatives."""
    objects_dir = root / "objects"
    negatives_dir = root / "negatives"
    objects_dir.mkdir(parents=True)
    negatives_dir.mkdir(parents=True)
    rng = np.random.default_rng(seed)
    names = ["bun", "roll", "loaf"]
    rows = []
    for i in range(n_objects):
        h = int(rng.integers(80, 130))
        w = int(rng.integers(80, 130))
        img, mask = object_photo(rng, h, w)
        stem = f"obj{i:02d}"
        save_image(img, objects_dir / f"{stem}.jpg")
        save_mask(BinaryMask(mask), objects_dir / f"{stem}.mask.png")
        rows.append((stem, names[i % len(names)]))
    manifest = objects_dir / "manifest.csv"
    manifest.write_text(
        "stem,category\n" + "\n".join(f"{s},{c}" for s, c in rows) + "\n",
        encoding="utf-8",
    )
    for j in range(3):
        neg = rng.integers(10, 220, (100, 150, 3)).astype(np.uint8)
        save_image(neg, negatives_dir / f"neg{j}.jpg")
    return {
        "objects_dir": objects_dir,
        "manifest": manifest,
        "negatives_dir": negatives_dir,
        "rows": rows,
    }


@pytest.fixture
def source_tree(tmp_path: Path) -> dict:
    return build_source_tree(tmp_path)
