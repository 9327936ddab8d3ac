"""Batch numeric kernels for box geometry and mask rasterization.

The hot loops carry numba ``@njit`` compilation when numba is importable.
Setting the environment variable ``VERASER_NO_NUMBA=1`` selects the pure
numpy fallback path instead; both paths produce identical results (see
``benchmarks/bench_kernels.py`` for a speed comparison).
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("VERASER_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAS_NUMBA = False

NUMBA_ENABLED = _HAS_NUMBA and not _DISABLED


def _iou_matrix_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two box arrays, shapes (N,4) and (M,4)."""
    ax1, ay1, ax2, ay2 = (a[:, i, None] for i in range(4))
    bx1, by1, bx2, by2 = (b[None, :, i] for i in range(4))
    iw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return np.where(inter > 0.0, inter / union, 0.0)


def _iou_matrix_loop(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        ax1, ay1, ax2, ay2 = a[i, 0], a[i, 1], a[i, 2], a[i, 3]
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for j in range(m):
            bx1, by1, bx2, by2 = b[j, 0], b[j, 1], b[j, 2], b[j, 3]
            iw = min(ax2, bx2) - max(ax1, bx1)
            ih = min(ay2, by2) - max(ay1, by1)
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + (bx2 - bx1) * (by2 - by1) - inter
            out[i, j] = inter / union
    return out


def _rasterize_np(width: int, height: int, x1: float, y1: float, x2: float, y2: float) -> np.ndarray:
    """Fill pixels whose centers fall inside the half-open box; 255/0 raster."""
    cx = np.arange(width, dtype=np.float64) + 0.5
    cy = np.arange(height, dtype=np.float64) + 0.5
    in_x = (cx >= x1) & (cx < x2)
    in_y = (cy >= y1) & (cy < y2)
    return (in_y[:, None] & in_x[None, :]).astype(np.uint8) * np.uint8(255)


def _rasterize_loop(width, height, x1, y1, x2, y2):
    out = np.zeros((height, width), dtype=np.uint8)
    for j in range(height):
        cy = j + 0.5
        if cy < y1 or cy >= y2:
            continue
        for i in range(width):
            cx = i + 0.5
            if x1 <= cx < x2:
                out[j, i] = 255
    return out


def _white_counts_np(width: int, height: int, boxes: np.ndarray) -> np.ndarray:
    """Per-box white-pixel counts of the center-rule raster, shape (N,)."""
    cx = np.arange(width, dtype=np.float64) + 0.5
    cy = np.arange(height, dtype=np.float64) + 0.5
    nx = ((cx[None, :] >= boxes[:, 0, None]) & (cx[None, :] < boxes[:, 2, None])).sum(axis=1)
    ny = ((cy[None, :] >= boxes[:, 1, None]) & (cy[None, :] < boxes[:, 3, None])).sum(axis=1)
    return (nx * ny).astype(np.int64)


def _white_counts_loop(width, height, boxes):
    n = boxes.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for k in range(n):
        x1, y1, x2, y2 = boxes[k, 0], boxes[k, 1], boxes[k, 2], boxes[k, 3]
        count = 0
        for j in range(height):
            cy = j + 0.5
            if cy < y1 or cy >= y2:
                continue
            for i in range(width):
                cx = i + 0.5
                if x1 <= cx < x2:
                    count += 1
        out[k] = count
    return out


if NUMBA_ENABLED:
    iou_matrix = njit(cache=True)(_iou_matrix_loop)
    rasterize = njit(cache=True)(_rasterize_loop)
    white_counts = njit(cache=True)(_white_counts_loop)
else:
    iou_matrix = _iou_matrix_np
    rasterize = _rasterize_np
    white_counts = _white_counts_np


def warmup() -> None:
    """Trigger jit compilation so later calls run at full speed."""
    boxes = np.array([[0.0, 0.0, 2.0, 2.0], [1.0, 1.0, 3.0, 3.0]])
    iou_matrix(boxes, boxes)
    rasterize(4, 4, 0.5, 0.5, 3.5, 3.5)
    white_counts(4, 4, boxes)
