"""Binary masks, image color/size operations, and image file I/O.

Images are numpy uint8 arrays: (H, W, 3) RGB or (H, W) grayscale.
Masks are per-pixel boolean occupancy grids stored read-only.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from pastekit.corekit.geometry import BoundingBox

MASK_SUFFIX = ".mask.png"

# Grayscale conversion uses the BT.601 luma weights throughout.
_LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class EmptyMaskError(ValueError):
    """Raised when an operation needs at least one foreground pixel."""


class BinaryMask:
    """Immutable per-pixel object mask.

    Wraps a read-only boolean array of shape (height, width), row-major.
    """

    __slots__ = ("_pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        arr = arr.astype(bool, copy=True)
        arr.flags.writeable = False
        self._pixels = arr

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def pixel_count(self) -> int:
        return int(np.count_nonzero(self._pixels))

    @property
    def is_empty(self) -> bool:
        return not self._pixels.any()

    def tight_bbox(self) -> BoundingBox:
        """Minimal box covering all true pixels; raises on an empty mask."""
        rows = np.flatnonzero(self._pixels.any(axis=1))
        if rows.size == 0:
            raise EmptyMaskError("mask has no foreground pixels")
        cols = np.flatnonzero(self._pixels.any(axis=0))
        y0, y1 = int(rows[0]), int(rows[-1])
        x0, x1 = int(cols[0]), int(cols[-1])
        return BoundingBox(float(x0), float(y0), float(x1 - x0 + 1), float(y1 - y0 + 1))

    def cropped(self, box: BoundingBox) -> "BinaryMask":
        """Submask over an integer-aligned box."""
        x, y, w, h = (int(round(v)) for v in box.as_xywh())
        return BinaryMask(self._pixels[y : y + h, x : x + w])

    def resized(self, width: int, height: int) -> "BinaryMask":
        """Nearest-neighbor resample to the given size."""
        out = cv2.resize(
            self._pixels.astype(np.uint8), (width, height), interpolation=cv2.INTER_NEAREST
        )
        return BinaryMask(out.astype(bool))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self._pixels.shape == other._pixels.shape and bool(
            np.array_equal(self._pixels, other._pixels)
        )

    def __hash__(self) -> int:
        return hash((self._pixels.shape, self._pixels.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, {self.pixel_count}px)"


def tight_bbox(mask: BinaryMask) -> BoundingBox:
    """Minimal axis-aligned box containing all true pixels of the mask."""
    return mask.tight_bbox()


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """BT.601 luma conversion to a single channel; idempotent.

    Grayscale input is returned unchanged (already single-channel).
    """
    if image.ndim == 2:
        return image
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {image.shape}")
    r, g, b = _LUMA_WEIGHTS
    luma = image[..., 0] * r + image[..., 1] * g + image[..., 2] * b
    return np.rint(luma).clip(0, 255).astype(np.uint8)


def gray_to_rgb(image: np.ndarray) -> np.ndarray:
    """Replicate a single-channel image to 3 channels; RGB passes through."""
    if image.ndim == 3:
        return image
    return np.repeat(image[..., None], 3, axis=2)


def resize_longest(image: np.ndarray, max_side: int) -> tuple[np.ndarray, float]:
    """Shrink so the longest side is at most max_side; never upscale.

    Returns (image, scale). scale is the factor to apply to any box or
    mask attached to this image; 1.0 when no resize happened.
    """
    if max_side < 1:
        raise ValueError(f"max_side must be >= 1, got {max_side}")
    h, w = image.shape[:2]
    longest = max(w, h)
    if longest <= max_side:
        return image, 1.0
    scale = max_side / longest
    new_w = max(1, int(round(w * scale)))
    new_h = max(1, int(round(h * scale)))
    out = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_AREA)
    return out, scale


def load_image(path: str | Path, color_mode: str = "rgb") -> np.ndarray:
    """Read an image file as RGB (H, W, 3) or grayscale (H, W) uint8."""
    flags = cv2.IMREAD_COLOR if color_mode == "rgb" else cv2.IMREAD_GRAYSCALE
    data = cv2.imread(str(path), flags)
    if data is None:
        raise FileNotFoundError(f"cannot read image: {path}")
    if color_mode == "rgb":
        data = cv2.cvtColor(data, cv2.COLOR_BGR2RGB)
    return data


def save_image(image: np.ndarray, path: str | Path, jpeg_quality: int = 95) -> None:
    """Write an RGB or grayscale image; format chosen by file extension."""
    out = image if image.ndim == 2 else cv2.cvtColor(image, cv2.COLOR_RGB2BGR)
    params = []
    if str(path).lower().endswith((".jpg", ".jpeg")):
        params = [cv2.IMWRITE_JPEG_QUALITY, jpeg_quality]
    if not cv2.imwrite(str(path), out, params):
        raise OSError(f"cannot write image: {path}")


def encode_image(image: np.ndarray, ext: str = ".jpg", jpeg_quality: int = 95) -> bytes:
    """Encode to file bytes without touching disk (for worker processes)."""
    out = image if image.ndim == 2 else cv2.cvtColor(image, cv2.COLOR_RGB2BGR)
    params = [cv2.IMWRITE_JPEG_QUALITY, jpeg_quality] if ext in (".jpg", ".jpeg") else []
    ok, buf = cv2.imencode(ext, out, params)
    if not ok:
        raise OSError(f"cannot encode image as {ext}")
    return buf.tobytes()


def load_mask(path: str | Path) -> BinaryMask:
    """Read a single-channel mask PNG; values > 127 are foreground."""
    data = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if data is None:
        raise FileNotFoundError(f"cannot read mask: {path}")
    return BinaryMask(data > 127)


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    """Write a mask as a 0/255 single-channel PNG."""
    if not cv2.imwrite(str(path), mask.pixels.astype(np.uint8) * 255):
        raise OSError(f"cannot write mask: {path}")
