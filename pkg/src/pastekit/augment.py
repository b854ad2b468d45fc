"""Online augmentation pipelines applied to (image, annotations) pairs.

Two presets mirror the training setup: the baseline pipeline runs
Blur, MedianBlur, ToGray and CLAHE, in that order, each firing
independently at a small probability; the dropout pipeline prepends
CoarseDropout, PixelDropout, Scale and Rotate, then runs the baseline
steps at a reduced probability.

Pixel-level steps never touch the annotations. The two spatial steps
delegate to composer.derive_rotscale so box geometry stays consistent
with offline derivation. One probability draw is consumed per step
whether or not it fires, so a pipeline run is a pure function of
(input, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import cv2
import numpy as np

from pastekit.composer import apply_clahe, derive_rotscale
from pastekit.corekit.dataset import AnnotatedObject
from pastekit.corekit.raster import gray_to_rgb, to_grayscale
from pastekit.seeds import make_rng

TRANSFORMS = (
    "blur",
    "median_blur",
    "to_gray",
    "clahe",
    "coarse_dropout",
    "pixel_dropout",
    "scale",
    "rotate",
)


@dataclass(frozen=True)
class AugStep:
    name: str
    p: float
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.name!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"probability must be in [0, 1], got {self.p}")


@dataclass(frozen=True)
class AugPipeline:
    name: str
    steps: tuple[AugStep, ...]


@dataclass(frozen=True)
class AugConfig:
    """Preset selection plus the knobs the presets expose."""

    preset: str = "bl"  # "bl" | "do"
    p: Optional[float] = None  # step probability; preset default when None
    trailing_bl_p: float = 0.005  # reduced baseline probability inside "do"
    coarse_dropout_area_max: float = 0.10
    pixel_dropout_p: float = 0.01
    scale_range: tuple[float, float] = (0.8, 1.2)
    rotation_range: tuple[float, float] = (-15.0, 15.0)
    fill_value: int = 114

    def __post_init__(self) -> None:
        if self.preset not in ("bl", "do"):
            raise ValueError(f"unknown preset {self.preset!r}")
        # Above 10% the fixed-box assumption for dropout stops holding.
        if not 0.0 < self.coarse_dropout_area_max <= 0.10:
            raise ValueError(
                f"coarse_dropout_area_max must be in (0, 0.10], "
                f"got {self.coarse_dropout_area_max}"
            )


def bl_pipeline(p: float = 0.01) -> AugPipeline:
    """Baseline: Blur, MedianBlur, ToGray, CLAHE, each at probability p."""
    return AugPipeline(
        name=f"BL_{p:g}",
        steps=(
            AugStep("blur", p),
            AugStep("median_blur", p),
            AugStep("to_gray", p),
            AugStep("clahe", p),
        ),
    )


def do_pipeline(
    p: float = 0.04,
    trailing_bl_p: float = 0.005,
    coarse_dropout_area_max: float = 0.10,
    pixel_dropout_p: float = 0.01,
    scale_range: tuple[float, float] = (0.8, 1.2),
    rotation_range: tuple[float, float] = (-15.0, 15.0),
    fill_value: int = 114,
) -> AugPipeline:
    """Dropout preset, followed by the baseline steps at a lower p."""
    return AugPipeline(
        name=f"DO_{p:g}",
        steps=(
            AugStep("coarse_dropout", p, {"area_max": coarse_dropout_area_max}),
            AugStep("pixel_dropout", p, {"drop_p": pixel_dropout_p}),
            AugStep("scale", p, {"range": scale_range, "fill": fill_value}),
            AugStep("rotate", p, {"range": rotation_range, "fill": fill_value}),
        )
        + bl_pipeline(trailing_bl_p).steps,
    )


def build_pipeline(cfg: AugConfig) -> AugPipeline:
    if cfg.preset == "bl":
        return bl_pipeline(cfg.p if cfg.p is not None else 0.01)
    return do_pipeline(
        p=cfg.p if cfg.p is not None else 0.04,
        trailing_bl_p=cfg.trailing_bl_p,
        coarse_dropout_area_max=cfg.coarse_dropout_area_max,
        pixel_dropout_p=cfg.pixel_dropout_p,
        scale_range=cfg.scale_range,
        rotation_range=cfg.rotation_range,
        fill_value=cfg.fill_value,
    )


def _coarse_dropout(
    image: np.ndarray,
    rng: np.random.Generator,
    area_max: float,
    holes: tuple[int, int] = (1, 8),
    size: tuple[int, int] = (8, 32),
    fill: int = 0,
) -> np.ndarray:
    """Cut constant-fill rectangles, never exceeding the area budget.

    A sampled hole that would blow the remaining budget is skipped, so
    the bound holds for every draw, not just in expectation.
    """
    h, w = image.shape[:2]
    budget = int(area_max * h * w)
    out = image.copy()
    n = int(rng.integers(holes[0], holes[1] + 1))
    for _ in range(n):
        hw = int(rng.integers(size[0], size[1] + 1))
        hh = int(rng.integers(size[0], size[1] + 1))
        if hw > w or hh > h or hw * hh > budget:
            continue
        x = int(rng.integers(0, w - hw + 1))
        y = int(rng.integers(0, h - hh + 1))
        out[y:y + hh, x:x + hw] = fill
        budget -= hw * hh
    return out


def coarse_dropout(
    image: np.ndarray,
    area_max: float = 0.10,
    holes: tuple[int, int] = (1, 8),
    size: tuple[int, int] = (8, 32),
    seed: int = 0,
    fill: int = 0,
) -> np.ndarray:
    """Standalone CoarseDropout; total hole area <= area_max * image area."""
    if not 0.0 < area_max <= 1.0:
        raise ValueError(f"area_max must be in (0, 1], got {area_max}")
    if holes[1] < 1 or holes[0] > holes[1]:
        return image.copy()
    return _coarse_dropout(image, make_rng(seed), area_max, holes, size, fill)


def _pixel_dropout(
    image: np.ndarray, rng: np.random.Generator, drop_p: float, fill: int = 0
) -> np.ndarray:
    drops = rng.random(image.shape[:2]) < drop_p
    out = image.copy()
    out[drops] = fill
    return out


def _blur(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    k = 3 + 2 * int(rng.integers(0, 3))
    return cv2.blur(image, (k, k))


def _median_blur(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    k = 3 + 2 * int(rng.integers(0, 2))
    return cv2.medianBlur(image, k)


def _to_gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image.copy()
    return gray_to_rgb(to_grayscale(image))


def apply(
    pipeline: AugPipeline,
    image: np.ndarray,
    objects: Sequence[AnnotatedObject],
    seed: int,
) -> tuple[np.ndarray, list[AnnotatedObject]]:
    """Run a pipeline; steps fire independently in declared order.

    Each step consumes exactly one probability draw; a firing step then
    draws its own parameters from the same generator.
    """
    rng = make_rng(seed)
    out = image
    annots = list(objects)
    for step in pipeline.steps:
        if not rng.random() < step.p:
            continue
        if step.name == "blur":
            out = _blur(out, rng)
        elif step.name == "median_blur":
            out = _median_blur(out, rng)
        elif step.name == "to_gray":
            out = _to_gray(out)
        elif step.name == "clahe":
            out = apply_clahe(out)
        elif step.name == "coarse_dropout":
            out = _coarse_dropout(out, rng, step.params.get("area_max", 0.10))
        elif step.name == "pixel_dropout":
            out = _pixel_dropout(out, rng, step.params.get("drop_p", 0.01))
        elif step.name == "scale":
            lo, hi = step.params.get("range", (0.8, 1.2))
            s = float(rng.uniform(lo, hi))
            out, annots = derive_rotscale(
                out, annots, rotation=0.0, scale=s,
                fill=step.params.get("fill", 114),
            )
        elif step.name == "rotate":
            lo, hi = step.params.get("range", (-15.0, 15.0))
            r = float(rng.uniform(lo, hi))
            out, annots = derive_rotscale(
                out, annots, rotation=r, scale=1.0,
                fill=step.params.get("fill", 114),
            )
    if out is image:
        out = image.copy()
    return out, annots
