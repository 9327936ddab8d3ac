"""Exact rectangle geometry: areas, IoU, linking rules, and mask rasters.

Boxes use continuous coordinates with half-open containment
[x1, x2) x [y1, y2); a pixel belongs to a raster region iff its center
(i + 0.5, j + 0.5) lies inside the box.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import kernels
from .errors import DegenerateBox

DEFAULT_IOU_THRESHOLD = 0.1


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left (x1, y1), bottom-right (x2, y2), in pixels."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DegenerateBox(f"box has no area: {self!r}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def to_json(self) -> dict:
        return {"x1": self.x1, "y1": self.y1, "x2": self.x2, "y2": self.y2}

    @classmethod
    def from_json(cls, obj: dict) -> "BBox":
        return cls(float(obj["x1"]), float(obj["y1"]), float(obj["x2"]), float(obj["y2"]))


@dataclass(frozen=True)
class ImageDims:
    """Image width/height in pixels."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dims must be positive: {self!r}")


@dataclass(frozen=True)
class IouThreshold:
    """Overlap threshold in [0, 1] used for linking and erasure feasibility."""

    value: float = DEFAULT_IOU_THRESHOLD

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"threshold outside [0, 1]: {self.value}")


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary raster of one box: white (255) inside, black (0) elsewhere."""

    dims: ImageDims
    pixels: np.ndarray

    def white_count(self) -> int:
        return int(np.count_nonzero(self.pixels))

    def to_png(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="L").save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png(cls, data: bytes) -> "Mask":
        img = Image.open(io.BytesIO(data)).convert("L")
        arr = np.asarray(img, dtype=np.uint8)
        if not np.all((arr == 0) | (arr == 255)):
            raise ValueError("mask PNG contains values other than 0 and 255")
        return cls(ImageDims(img.width, img.height), arr)


def area(b: BBox) -> float:
    """Rectangle area (x2-x1)*(y2-y1) in square pixels."""
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def intersect(a: BBox, b: BBox) -> BBox | None:
    """Overlap rectangle of two boxes, or None when the overlap has no area."""
    x1 = max(a.x1, b.x1)
    y1 = max(a.y1, b.y1)
    x2 = min(a.x2, b.x2)
    y2 = min(a.y2, b.y2)
    if x1 >= x2 or y1 >= y2:
        return None
    return BBox(x1, y1, x2, y2)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    inter = intersect(a, b)
    if inter is None:
        return 0.0
    inter_area = area(inter)
    return inter_area / (area(a) + area(b) - inter_area)


def is_unlinked(candidate: BBox, linked: list[BBox], t: IouThreshold) -> bool:
    """True iff the candidate's max IoU against every linked box stays below t."""
    return all(iou(candidate, region) < t.value for region in linked)


def erasure_feasible(target: BBox, remaining: list[BBox], t: IouThreshold) -> bool:
    """True iff no remaining box overlaps the target beyond t (strict >)."""
    return all(iou(target, region) <= t.value for region in remaining)


def clamp_to_image(b: BBox, dims: ImageDims) -> BBox:
    """Clip box coordinates into [0, width] x [0, height].

    Raises DegenerateBox when the clipped box has no area, which signals a
    backend returned a region entirely outside the image.
    """
    x1 = min(max(b.x1, 0.0), float(dims.width))
    y1 = min(max(b.y1, 0.0), float(dims.height))
    x2 = min(max(b.x2, 0.0), float(dims.width))
    y2 = min(max(b.y2, 0.0), float(dims.height))
    if x1 >= x2 or y1 >= y2:
        raise DegenerateBox(f"box {b.as_tuple()} degenerates on {dims.width}x{dims.height}")
    return BBox(x1, y1, x2, y2)


def render_mask(dims: ImageDims, b: BBox) -> Mask:
    """Rasterize one box into a binary mask using the pixel-center rule."""
    clamped = clamp_to_image(b, dims)
    pixels = kernels.rasterize(dims.width, dims.height, clamped.x1, clamped.y1, clamped.x2, clamped.y2)
    return Mask(dims, np.asarray(pixels, dtype=np.uint8))


def boxes_to_array(boxes: list[BBox]) -> np.ndarray:
    """Pack boxes into an (N, 4) float64 array for the batch kernels."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)
