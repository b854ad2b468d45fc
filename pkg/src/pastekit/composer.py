"""Copy-Paste synthesis: crowded scenes from single-object cutouts.

A composition is planned first (all random draws happen here, from one
seed) and rendered second (deterministic given the plan). Plans record
every pasted layer, so a dataset can be audited or replayed from its
manifest. Occlusion between layers is tracked per pixel; objects left
with less than ``prune_visible_min`` of their pixels visible are dropped
from the annotations, and every retained box covers the object's full
transformed extent clipped to the canvas, not just its visible pixels.

Backgrounds are either mosaics of random tile crops or real object-free
images. Additional variants of finished compositions are produced by
``derive_rotscale``, which rotates and scales an image and its boxes on
a same-size canvas.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import cv2
import numpy as np

from pastekit.corekit.dataset import (
    AnnotatedObject,
    Category,
    Dataset,
    ImageRecord,
)
from pastekit.corekit.geometry import BoundingBox
from pastekit.corekit.raster import (
    MASK_SUFFIX,
    BinaryMask,
    encode_image,
    load_image,
    load_mask,
    resize_longest,
    to_grayscale,
)
from pastekit.seeds import derive_seed, make_rng

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp")


@dataclass(eq=False)
class Cutout:
    """An object's image patch plus the binary mask of its pixels."""

    category_id: int
    patch: np.ndarray
    mask: BinaryMask

    def __post_init__(self) -> None:
        if self.patch.shape[:2] != (self.mask.height, self.mask.width):
            raise ValueError(
                f"patch {self.patch.shape[:2]} and mask "
                f"{(self.mask.height, self.mask.width)} differ"
            )
        if self.mask.is_empty:
            raise ValueError("cutout mask is empty")


@dataclass(eq=False)
class PoolSet:
    """Source material for synthesis.

    tiles feed mosaic backgrounds; negatives are object-free photos
    used both as paste backgrounds and as the negative evaluation set.
    """

    cutouts: Sequence[Cutout]
    categories: tuple[Category, ...]
    tiles: Sequence[np.ndarray] = ()
    negatives: Sequence[np.ndarray] = ()


@dataclass(frozen=True)
class BackgroundSpec:
    """Background recipe for one composition."""

    kind: str  # "mosaic" | "negative"
    grid: tuple[int, int] = (2, 2)
    seed: int = 0
    negative_index: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("mosaic", "negative"):
            raise ValueError(f"unknown background kind {self.kind!r}")
        if self.kind == "mosaic" and min(self.grid) < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.grid}")


@dataclass(frozen=True)
class PasteLayer:
    """One pasted object: which cutout, how transformed, where."""

    cutout_index: int
    rotation: float
    scale: float
    x: int
    y: int
    blur: bool
    clahe: bool
    z: int


@dataclass(frozen=True)
class CompositionPlan:
    """Everything needed to render one synthetic image, minus the pools."""

    width: int
    height: int
    background: BackgroundSpec
    layers: tuple[PasteLayer, ...]
    seed: int


@dataclass(frozen=True)
class ComposerConfig:
    objects_mean: float = 16.0
    objects_min: int = 1
    objects_max: int = 32
    prune_visible_min: float = 0.10
    blur_p: float = 0.05
    clahe_p: float = 0.05
    rotation_range: tuple[float, float] = (-180.0, 180.0)
    scale_range: tuple[float, float] = (0.5, 1.5)
    blend: bool = False
    grayscale: bool = False
    max_side: int = 640
    canvas: tuple[int, int] = (640, 640)  # (width, height)
    mosaic_grid: tuple[int, int] = (2, 2)  # (rows, cols)
    fill_value: int = 114
    jpeg_quality: int = 95

    def __post_init__(self) -> None:
        if not 0.0 < self.prune_visible_min < 1.0:
            raise ValueError(
                f"prune_visible_min must be in (0, 1), got {self.prune_visible_min}"
            )
        if not self.objects_min <= self.objects_mean <= self.objects_max:
            raise ValueError(
                f"objects_mean {self.objects_mean} outside "
                f"[{self.objects_min}, {self.objects_max}]"
            )
        for name in ("blur_p", "clahe_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.scale_range[0] <= 0:
            raise ValueError(f"scale must stay positive, got {self.scale_range}")


@dataclass(frozen=True)
class SynthCounts:
    synthetic_bg: int = 0
    negative_bg: int = 0
    derived: int = 0

    def __post_init__(self) -> None:
        if min(self.synthetic_bg, self.negative_bg, self.derived) < 0:
            raise ValueError("counts must be non-negative")
        if self.derived > 0 and self.synthetic_bg + self.negative_bg == 0:
            raise ValueError("derived images need at least one base image")


def _rot_mat(rotation: float, scale: float) -> np.ndarray:
    """2x2 linear part: rotation about the origin (y-down, so positive
    angles turn clockwise on screen) followed by uniform scaling."""
    rad = math.radians(rotation)
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c * scale, -s * scale], [s * scale, c * scale]], dtype=np.float64)


def transformed_extent(w: int, h: int, rotation: float, scale: float) -> tuple[int, int]:
    """Axis-aligned extent of a w*h patch after rotation and scaling."""
    rad = math.radians(rotation)
    ca, sa = abs(math.cos(rad)), abs(math.sin(rad))
    ew = scale * (w * ca + h * sa)
    eh = scale * (w * sa + h * ca)
    return max(1, math.ceil(ew - 1e-7)), max(1, math.ceil(eh - 1e-7))


def _is_identity(rotation: float, scale: float) -> bool:
    return rotation % 360.0 == 0.0 and scale == 1.0


def _affine_matrix(
    lin: np.ndarray, src_center: tuple[float, float], dst_center: tuple[float, float]
) -> np.ndarray:
    """warpAffine matrix for the continuous-coordinate map
    q = lin @ (p - src_center) + dst_center.

    cv2 addresses pixel centers, continuous coordinates address pixel
    corners; the half-pixel terms reconcile the two.
    """
    src = np.asarray(src_center, dtype=np.float64)
    dst = np.asarray(dst_center, dtype=np.float64)
    half = np.array([0.5, 0.5])
    t = dst - half + lin @ (half - src)
    return np.hstack([lin, t.reshape(2, 1)])


def _warp_layer(cutout: Cutout, rotation: float, scale: float) -> tuple[np.ndarray, BinaryMask]:
    """Rotate and scale a cutout onto its own axis-aligned extent."""
    if _is_identity(rotation, scale):
        return cutout.patch, cutout.mask
    h, w = cutout.patch.shape[:2]
    out_w, out_h = transformed_extent(w, h, rotation, scale)
    lin = _rot_mat(rotation, scale)
    m = _affine_matrix(lin, (w / 2.0, h / 2.0), (out_w / 2.0, out_h / 2.0))
    patch = cv2.warpAffine(
        cutout.patch, m, (out_w, out_h), flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )
    mask = cv2.warpAffine(
        cutout.mask.pixels.astype(np.uint8), m, (out_w, out_h),
        flags=cv2.INTER_NEAREST, borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )
    return patch, BinaryMask(mask > 0)


def _apply_blur(patch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    kind = int(rng.integers(0, 2))
    k = 3 + 2 * int(rng.integers(0, 3))
    if kind == 0:
        return cv2.blur(patch, (k, k))
    return cv2.GaussianBlur(patch, (k, k), 0)


def apply_clahe(patch: np.ndarray) -> np.ndarray:
    clahe = cv2.createCLAHE(clipLimit=2.0, tileGridSize=(8, 8))
    if patch.ndim == 2:
        return clahe.apply(patch)
    lab = cv2.cvtColor(patch, cv2.COLOR_RGB2LAB)
    lab[:, :, 0] = clahe.apply(lab[:, :, 0])
    return cv2.cvtColor(lab, cv2.COLOR_LAB2RGB)


def plan_composition(
    pools: PoolSet, background: BackgroundSpec, cfg: ComposerConfig, seed: int
) -> CompositionPlan:
    """Draw a full composition from one seed.

    Draw order is fixed and is part of the file-format contract (the
    manifest replays these plans): object count first, then per layer
    cutout index, rotation, scale, x, y, blur flag, clahe flag.
    """
    if not pools.cutouts:
        raise ValueError("cutout pool is empty")
    rng = make_rng(seed)
    width, height = cfg.canvas
    n = int(rng.poisson(cfg.objects_mean))
    n = max(cfg.objects_min, min(cfg.objects_max, n))
    layers = []
    for z in range(n):
        idx = int(rng.integers(0, len(pools.cutouts)))
        cut = pools.cutouts[idx]
        rotation = float(rng.uniform(*cfg.rotation_range))
        scale = float(rng.uniform(*cfg.scale_range))
        ew, eh = transformed_extent(cut.mask.width, cut.mask.height, rotation, scale)
        # Up to 30% of the extent may hang off-canvas; clamp keeps at
        # least one row/column of the extent inside.
        x = int(math.floor(rng.uniform(-0.3 * ew, width - 0.7 * ew)))
        y = int(math.floor(rng.uniform(-0.3 * eh, height - 0.7 * eh)))
        x = max(1 - ew, min(width - 1, x))
        y = max(1 - eh, min(height - 1, y))
        blur = bool(rng.random() < cfg.blur_p)
        clahe = bool(rng.random() < cfg.clahe_p)
        layers.append(
            PasteLayer(
                cutout_index=idx, rotation=rotation, scale=scale,
                x=x, y=y, blur=blur, clahe=clahe, z=z,
            )
        )
    return CompositionPlan(
        width=width, height=height, background=background,
        layers=tuple(layers), seed=seed,
    )


def mosaic_background(
    tiles: Sequence[np.ndarray], size: tuple[int, int], grid: tuple[int, int], seed: int
) -> np.ndarray:
    """Tile the canvas with random crops; every pixel written exactly once.

    Per cell, in row-major order, the draws are: tile index, crop
    fraction, crop x, crop y.
    """
    if not tiles:
        raise ValueError("tile pool is empty")
    width, height = size
    rows, cols = grid
    rng = make_rng(seed)
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    ys = [round(r * height / rows) for r in range(rows + 1)]
    xs = [round(c * width / cols) for c in range(cols + 1)]
    for r in range(rows):
        for c in range(cols):
            cw, ch = xs[c + 1] - xs[c], ys[r + 1] - ys[r]
            tile = tiles[int(rng.integers(0, len(tiles)))]
            th, tw = tile.shape[:2]
            f = float(rng.uniform(0.5, 1.0))
            crop_w = max(1, math.floor(f * min(tw, th * cw / ch)))
            crop_h = min(th, max(1, round(crop_w * ch / cw)))
            cx = int(rng.integers(0, tw - crop_w + 1))
            cy = int(rng.integers(0, th - crop_h + 1))
            crop = tile[cy:cy + crop_h, cx:cx + crop_w]
            interp = cv2.INTER_AREA if crop_w >= cw else cv2.INTER_LINEAR
            canvas[ys[r]:ys[r + 1], xs[c]:xs[c + 1]] = cv2.resize(
                crop, (cw, ch), interpolation=interp
            )
    return canvas


def _negative_background(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Cover-resize then center-crop a photo to the canvas size."""
    width, height = size
    th, tw = image.shape[:2]
    s = max(width / tw, height / th)
    nw = max(width, round(tw * s))
    nh = max(height, round(th * s))
    interp = cv2.INTER_AREA if s < 1.0 else cv2.INTER_LINEAR
    resized = cv2.resize(image, (nw, nh), interpolation=interp)
    x0 = (nw - width) // 2
    y0 = (nh - height) // 2
    return resized[y0:y0 + height, x0:x0 + width].copy()


def _render_background(plan: CompositionPlan, pools: PoolSet) -> np.ndarray:
    spec = plan.background
    if spec.kind == "mosaic":
        return mosaic_background(pools.tiles, (plan.width, plan.height), spec.grid, spec.seed)
    return _negative_background(pools.negatives[spec.negative_index], (plan.width, plan.height))


def render(
    plan: CompositionPlan, pools: PoolSet, cfg: ComposerConfig
) -> tuple[np.ndarray, list[AnnotatedObject]]:
    """Paste all layers in z-order and annotate the survivors.

    visible_fraction = (mask pixels inside the canvas and not covered
    by any later layer) / (all transformed mask pixels). Objects below
    cfg.prune_visible_min are dropped; retained boxes are the tight box
    of the full transformed mask, clipped to the canvas.
    """
    width, height = plan.width, plan.height
    canvas = _render_background(plan, pools).copy()
    top = np.full((height, width), -1, dtype=np.int32)

    totals: list[int] = []
    boxes: list[Optional[BoundingBox]] = []
    for layer in plan.layers:
        cut = pools.cutouts[layer.cutout_index]
        patch, mask = _warp_layer(cut, layer.rotation, layer.scale)
        fx = make_rng(derive_seed(plan.seed, "fx", layer.z))
        if layer.blur:
            patch = _apply_blur(patch, fx)
        if layer.clahe:
            patch = apply_clahe(patch)
        totals.append(mask.pixel_count)
        tb = mask.tight_bbox() if not mask.is_empty else None
        boxes.append(
            tb.translated(layer.x, layer.y).clipped(width, height) if tb else None
        )
        mh, mw = mask.pixels.shape
        x0, y0 = max(0, layer.x), max(0, layer.y)
        x1, y1 = min(width, layer.x + mw), min(height, layer.y + mh)
        if x1 <= x0 or y1 <= y0:
            continue
        sub = mask.pixels[y0 - layer.y:y1 - layer.y, x0 - layer.x:x1 - layer.x]
        if cfg.blend:
            alpha = cv2.GaussianBlur(sub.astype(np.float32), (5, 5), 0)[..., None]
            region = canvas[y0:y1, x0:x1]
            src = patch[y0 - layer.y:y1 - layer.y, x0 - layer.x:x1 - layer.x]
            blended = region * (1.0 - alpha) + src * alpha
            region[sub] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)[sub]
        else:
            canvas[y0:y1, x0:x1][sub] = patch[
                y0 - layer.y:y1 - layer.y, x0 - layer.x:x1 - layer.x
            ][sub]
        top[y0:y1, x0:x1][sub] = layer.z

    visible = np.bincount(top[top >= 0], minlength=len(plan.layers))
    objects: list[AnnotatedObject] = []
    for layer in plan.layers:
        total = totals[layer.z]
        vf = float(visible[layer.z]) / total if total else 0.0
        box = boxes[layer.z]
        if vf < cfg.prune_visible_min or box is None:
            continue
        cut = pools.cutouts[layer.cutout_index]
        objects.append(
            AnnotatedObject(
                category_id=cut.category_id, bbox=box,
                visible_fraction=vf, source="synthetic",
            )
        )

    if cfg.max_side and max(width, height) > cfg.max_side:
        canvas, s = resize_longest(canvas, cfg.max_side)
        nh, nw = canvas.shape[:2]
        rescaled = []
        for o in objects:
            box = o.bbox.scaled(s).clipped(nw, nh)
            if box is not None:
                rescaled.append(replace(o, bbox=box))
        objects = rescaled
    if cfg.grayscale:
        canvas = to_grayscale(canvas)
    return canvas, objects


def _polygon_area(pts: list[tuple[float, float]]) -> float:
    area = 0.0
    for i in range(len(pts)):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % len(pts)]
        area += x0 * y1 - x1 * y0
    return abs(area) / 2.0


def _clip_halfplane(
    pts: list[tuple[float, float]], inside, intersect
) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for i in range(len(pts)):
        cur, nxt = pts[i], pts[(i + 1) % len(pts)]
        if inside(cur):
            out.append(cur)
            if not inside(nxt):
                out.append(intersect(cur, nxt))
        elif inside(nxt):
            out.append(intersect(cur, nxt))
    return out


def _clip_to_rect(
    pts: list[tuple[float, float]], width: float, height: float
) -> list[tuple[float, float]]:
    def cut(p, q, axis, value):
        (x0, y0), (x1, y1) = p, q
        t = (value - (x0 if axis == 0 else y0)) / (
            (x1 - x0) if axis == 0 else (y1 - y0)
        )
        return (x0 + t * (x1 - x0), y0 + t * (y1 - y0))

    for axis, value, keep_ge in (
        (0, 0.0, True), (0, float(width), False),
        (1, 0.0, True), (1, float(height), False),
    ):
        if not pts:
            return []
        coord = lambda p: p[axis]
        if keep_ge:
            pts = _clip_halfplane(
                pts, lambda p: coord(p) >= value, lambda p, q: cut(p, q, axis, value)
            )
        else:
            pts = _clip_halfplane(
                pts, lambda p: coord(p) <= value, lambda p, q: cut(p, q, axis, value)
            )
    return pts


def derive_rotscale(
    image: np.ndarray,
    objects: Sequence[AnnotatedObject],
    rotation: Optional[float] = None,
    scale: Optional[float] = None,
    *,
    seed: Optional[int] = None,
    rotation_range: tuple[float, float] = (-180.0, 180.0),
    scale_range: tuple[float, float] = (0.5, 1.5),
    prune_visible_min: float = 0.10,
    fill: int = 114,
) -> tuple[np.ndarray, list[AnnotatedObject]]:
    """Rotate and scale an annotated image about its center, same canvas.

    rotation/scale left as None are drawn from the seeded generator
    (rotation first). Out-of-frame regions take the fill value. Boxes
    become the tight axis-aligned box of their transformed corners,
    clipped to the canvas; an object's visible_fraction is scaled by
    the in-frame share of its transformed box, and objects falling
    below prune_visible_min are dropped.
    """
    if rotation is None or scale is None:
        rng = make_rng(seed if seed is not None else 0)
        if rotation is None:
            rotation = float(rng.uniform(*rotation_range))
        if scale is None:
            scale = float(rng.uniform(*scale_range))
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")

    height, width = image.shape[:2]
    if _is_identity(rotation, scale):
        return image.copy(), list(objects)

    lin = _rot_mat(rotation, scale)
    center = (width / 2.0, height / 2.0)
    m = _affine_matrix(lin, center, center)
    border = (fill, fill, fill) if image.ndim == 3 else fill
    warped = cv2.warpAffine(
        image, m, (width, height), flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT, borderValue=border,
    )

    c = np.array(center)
    out: list[AnnotatedObject] = []
    for obj in objects:
        b = obj.bbox
        corners = [(b.x, b.y), (b.x2, b.y), (b.x2, b.y2), (b.x, b.y2)]
        poly = [tuple(lin @ (np.array(p) - c) + c) for p in corners]
        full = _polygon_area(poly)
        clipped = _clip_to_rect(list(poly), width, height)
        frac = _polygon_area(clipped) / full if full > 0 and clipped else 0.0
        vf = obj.visible_fraction * frac
        if frac <= 0.0 or vf < prune_visible_min:
            continue
        xs = [p[0] for p in poly]
        ys = [p[1] for p in poly]
        box = BoundingBox(
            min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)
        ).clipped(width, height)
        if box is None:
            continue
        out.append(replace(obj, bbox=box, visible_fraction=vf))
    return warped, out


# --- dataset-level synthesis -------------------------------------------------

@dataclass(frozen=True)
class _DerivedSpec:
    source_index: int
    rotation: float
    scale: float


def _plan_base_image(
    pools: PoolSet, cfg: ComposerConfig, counts: SynthCounts, master_seed: int, index: int
) -> tuple[CompositionPlan, str]:
    seed_i = derive_seed(master_seed, index)
    if index < counts.synthetic_bg:
        bg = BackgroundSpec(
            kind="mosaic", grid=cfg.mosaic_grid, seed=derive_seed(seed_i, "bg")
        )
        split = "train_s"
    else:
        pick = make_rng(derive_seed(seed_i, "negpick"))
        bg = BackgroundSpec(
            kind="negative",
            negative_index=int(pick.integers(0, len(pools.negatives))),
        )
        split = "train_n"
    return plan_composition(pools, bg, cfg, seed_i), split


def _derived_specs(
    cfg: ComposerConfig, counts: SynthCounts, master_seed: int
) -> list[_DerivedSpec]:
    base = counts.synthetic_bg + counts.negative_bg
    if counts.derived == 0:
        return []
    sel = make_rng(derive_seed(master_seed, "derive-select"))
    sources = sel.integers(0, base, size=counts.derived)
    specs = []
    for j in range(counts.derived):
        rng = make_rng(derive_seed(master_seed, "derived", j))
        specs.append(
            _DerivedSpec(
                source_index=int(sources[j]),
                rotation=float(rng.uniform(*cfg.rotation_range)),
                scale=float(rng.uniform(*cfg.scale_range)),
            )
        )
    return specs


_WORKER: dict = {}


def _init_worker(pools: PoolSet, cfg: ComposerConfig, counts: SynthCounts, master_seed: int) -> None:
    _WORKER.clear()
    _WORKER["args"] = (pools, cfg, counts, master_seed)


def _produce(index: int) -> tuple[int, bytes, int, int, str, list[tuple]]:
    """Render image #index to encoded JPEG plus annotation payload.

    Pure function of (pools, cfg, counts, master_seed, index), so the
    dataset is identical no matter how indices are spread over workers.
    """
    pools, cfg, counts, master_seed = _WORKER["args"]
    base = counts.synthetic_bg + counts.negative_bg
    if index < base:
        plan, split = _plan_base_image(pools, cfg, counts, master_seed, index)
        image, objects = render(plan, pools, cfg)
    else:
        if "specs" not in _WORKER:
            _WORKER["specs"] = _derived_specs(cfg, counts, master_seed)
        spec = _WORKER["specs"][index - base]
        plan, split = _plan_base_image(pools, cfg, counts, master_seed, spec.source_index)
        src_image, src_objects = render(plan, pools, cfg)
        image, objects = derive_rotscale(
            src_image, src_objects, spec.rotation, spec.scale,
            prune_visible_min=cfg.prune_visible_min, fill=cfg.fill_value,
        )
    data = encode_image(image, ".jpg", jpeg_quality=cfg.jpeg_quality)
    payload = [
        (o.category_id, o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h, o.visible_fraction, o.source)
        for o in objects
    ]
    h, w = image.shape[:2]
    mode = "gray" if image.ndim == 2 else "rgb"
    return index, data, w, h, mode, payload


def synthesize_set(
    pools: PoolSet,
    cfg: ComposerConfig,
    counts: SynthCounts,
    master_seed: int,
    on_image: Optional[Callable[[ImageRecord, bytes], None]] = None,
    jobs: int = 1,
) -> tuple[Dataset, dict]:
    """Produce the full synthetic training set.

    Emits counts.synthetic_bg mosaic-background images (split train_s),
    counts.negative_bg images pasted onto negative photos (train_n),
    and counts.derived rotated/scaled variants of randomly chosen base
    images (keeping their source's split). Every image's randomness is
    derived from (master_seed, image index), so results do not depend
    on the worker count. on_image receives each record with its encoded
    JPEG, in index order. Returns the dataset plus a replayable
    manifest of all plans.
    """
    if counts.synthetic_bg > 0 and not pools.tiles:
        raise ValueError("mosaic backgrounds need a tile pool")
    if counts.negative_bg > 0 and not pools.negatives:
        raise ValueError("negative backgrounds need a negative pool")
    base = counts.synthetic_bg + counts.negative_bg
    total = base + counts.derived
    splits = []
    manifest_images = []
    specs = _derived_specs(cfg, counts, master_seed)
    for index in range(total):
        file_name = f"img_{index:06d}.jpg"
        if index < base:
            plan, split = _plan_base_image(pools, cfg, counts, master_seed, index)
            bg = plan.background
            entry = {
                "id": index + 1,
                "file_name": file_name,
                "split": split,
                "seed": plan.seed,
                "background": {
                    "kind": bg.kind,
                    "grid": list(bg.grid),
                    "seed": bg.seed,
                    "negative_index": bg.negative_index,
                },
                "layers": [
                    {
                        "cutout": l.cutout_index,
                        "rotation": l.rotation,
                        "scale": l.scale,
                        "x": l.x,
                        "y": l.y,
                        "blur": l.blur,
                        "clahe": l.clahe,
                    }
                    for l in plan.layers
                ],
            }
        else:
            spec = specs[index - base]
            split = "train_s" if spec.source_index < counts.synthetic_bg else "train_n"
            entry = {
                "id": index + 1,
                "file_name": file_name,
                "split": split,
                "derived_from": spec.source_index + 1,
                "rotation": spec.rotation,
                "scale": spec.scale,
            }
        splits.append(split)
        manifest_images.append(entry)

    results: dict[int, tuple] = {}
    if jobs <= 1:
        _init_worker(pools, cfg, counts, master_seed)
        produced = map(_produce, range(total))
        for item in produced:
            results[item[0]] = item[1:]
    else:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(pools, cfg, counts, master_seed),
        ) as pool:
            for item in pool.map(_produce, range(total), chunksize=8):
                results[item[0]] = item[1:]

    records = []
    for index in range(total):
        data, w, h, mode, payload = results[index]
        objects = tuple(
            AnnotatedObject(
                category_id=cat, bbox=BoundingBox(x, y, bw, bh),
                visible_fraction=vf, source=source,
            )
            for cat, x, y, bw, bh, vf, source in payload
        )
        record = ImageRecord(
            id=index + 1, file_name=f"img_{index:06d}.jpg",
            width=w, height=h, color_mode=mode,
            objects=objects, split=splits[index],
        )
        records.append(record)
        if on_image is not None:
            on_image(record, data)

    dataset = Dataset(
        categories=pools.categories,
        images=tuple(records),
        provenance={
            "generator": "pastekit-synth",
            "master_seed": str(master_seed),
            "counts": f"{counts.synthetic_bg}+{counts.negative_bg}+{counts.derived}",
        },
    )
    manifest = {
        "master_seed": master_seed,
        "counts": {
            "synthetic_bg": counts.synthetic_bg,
            "negative_bg": counts.negative_bg,
            "derived": counts.derived,
        },
        "canvas": [cfg.canvas[0], cfg.canvas[1]],
        "images": manifest_images,
    }
    return dataset, manifest


# --- pool loading ------------------------------------------------------------

def _find_image(directory: Path, stem: str) -> Path:
    for ext in IMAGE_EXTENSIONS:
        candidate = directory / f"{stem}{ext}"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no image for stem {stem!r} in {directory}")


def read_manifest(path: str | Path) -> list[tuple[str, str]]:
    """Read a 'stem,category' CSV; a header row is allowed and skipped."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise ValueError(f"{path}: manifest row needs stem,category: {row}")
            stem, category = row[0].strip(), row[1].strip()
            if (stem, category) == ("stem", "category"):
                continue
            rows.append((stem, category))
    return sorted(rows)


def load_cutout_pool(
    image_dir: str | Path, manifest_path: str | Path
) -> tuple[list[Cutout], tuple[Category, ...]]:
    """Load image + mask pairs listed in the manifest as tight cutouts.

    Category ids are assigned 1..K over the sorted distinct names, so
    the mapping is stable across runs and machines.
    """
    directory = Path(image_dir)
    rows = read_manifest(manifest_path)
    if not rows:
        raise ValueError(f"{manifest_path}: empty manifest")
    names = sorted({category for _, category in rows})
    categories = tuple(Category(id=i + 1, name=n) for i, n in enumerate(names))
    by_name = {c.name: c.id for c in categories}
    cutouts = []
    for stem, category in rows:
        image = load_image(_find_image(directory, stem))
        mask = load_mask(directory / f"{stem}{MASK_SUFFIX}")
        if mask.pixels.shape != image.shape[:2]:
            raise ValueError(f"{stem}: mask and image sizes differ")
        tb = mask.tight_bbox()
        x, y, w, h = (int(v) for v in tb.as_xywh())
        cutouts.append(
            Cutout(
                category_id=by_name[category],
                patch=image[y:y + h, x:x + w].copy(),
                mask=mask.cropped(tb),
            )
        )
    return cutouts, categories


def load_image_pool(directory: str | Path) -> list[np.ndarray]:
    """Load every plain image in a directory, sorted by name."""
    root = Path(directory)
    paths = sorted(
        p for p in root.iterdir()
        if p.suffix.lower() in IMAGE_EXTENSIONS and not p.name.endswith(MASK_SUFFIX)
    )
    if not paths:
        raise ValueError(f"{directory}: no images found")
    return [load_image(p) for p in paths]
