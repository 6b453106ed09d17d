"""Upper/lower choroid boundary curves from a regularized mask.

Boundaries are per-column row positions over the contiguous column span of
the mask.  Geometry (tangents, normals) is evaluated in physical
micrometre coordinates, ``x = col * lateral_scale`` and
``y = row * axial_scale``, because OCT pixels are strongly anisotropic and a
perpendicular drawn in pixel space is not perpendicular on the retina.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_WINDOW = 31
DEFAULT_TANGENT_HALF_WIDTH = 15


class EmptyMaskError(ValueError):
    pass


class OutsideSpanError(ValueError):
    pass


@dataclass
class BoundaryPair:
    col_start: int
    col_end: int
    upper: np.ndarray
    lower: np.ndarray
    raw_upper: np.ndarray
    raw_lower: np.ndarray
    gaps: np.ndarray
    smoothing_window: int = DEFAULT_WINDOW

    @property
    def cols(self):
        return np.arange(self.col_start, self.col_end + 1)

    def contains(self, col):
        return self.col_start <= col <= self.col_end

    def gap_cols(self):
        return (self.cols[self.gaps]).tolist()

    def to_json(self):
        return {
            "col_start": int(self.col_start),
            "col_end": int(self.col_end),
            "smoothing_window": int(self.smoothing_window),
            "upper": [round(float(v), 6) for v in self.upper],
            "lower": [round(float(v), 6) for v in self.lower],
            "raw_upper": [float(v) for v in self.raw_upper],
            "raw_lower": [float(v) for v in self.raw_lower],
            "gap_cols": self.gap_cols(),
        }

    @classmethod
    def from_arrays(cls, upper, lower, col_start=0, window=1):
        """Wrap explicit per-column rows (already subpixel) as a boundary pair."""
        upper = np.asarray(upper, dtype=np.float64)
        lower = np.asarray(lower, dtype=np.float64)
        if upper.shape != lower.shape or upper.ndim != 1:
            raise ValueError("upper and lower must be 1-D arrays of equal length")
        if np.any(lower < upper):
            raise ValueError("lower boundary lies above the upper boundary")
        return cls(col_start, col_start + upper.size - 1,
                   smooth_boundary(upper, window), smooth_boundary(lower, window),
                   upper.copy(), lower.copy(), np.zeros(upper.size, dtype=bool), window)


def smooth_boundary(rows, window=DEFAULT_WINDOW):
    """Centred moving average; the window shrinks symmetrically near the ends.

    Shrinking symmetrically keeps affine runs unchanged everywhere.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 1")
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.size
    if window == 1 or n == 0:
        return rows.copy()
    idx = np.arange(n)
    half = np.minimum(np.minimum(idx, n - 1 - idx), window // 2)
    csum = np.concatenate(([0.0], np.cumsum(rows)))
    return (csum[idx + half + 1] - csum[idx - half]) / (2 * half + 1)


def extract_boundaries(mask, window=DEFAULT_WINDOW):
    """Per-column topmost/bottommost mask rows, gap-filled and smoothed."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    filled = mask.any(axis=0)
    if not filled.any():
        raise EmptyMaskError("mask is empty; no choroid boundaries to extract")
    cols = np.flatnonzero(filled)
    start, end = int(cols[0]), int(cols[-1])
    sub = mask[:, start:end + 1]
    present = filled[start:end + 1]
    h = mask.shape[0]
    upper = np.argmax(sub, axis=0).astype(np.float64)
    lower = (h - 1 - np.argmax(sub[::-1], axis=0)).astype(np.float64)
    gaps = ~present
    if gaps.any():
        x = np.arange(sub.shape[1])
        upper[gaps] = np.interp(x[gaps], x[present], upper[present])
        lower[gaps] = np.interp(x[gaps], x[present], lower[present])
    return BoundaryPair(start, end, smooth_boundary(upper, window), smooth_boundary(lower, window),
                        upper, lower, gaps, window)


def tangent_at(bnd, col, meta, half_width=DEFAULT_TANGENT_HALF_WIDTH):
    """Unit tangent ``(tx, ty)`` of the smoothed upper boundary, in micrometres.

    Central difference over ``col +/- half_width``; one-sided where the span
    ends sooner.  ``tx`` is always positive.
    """
    if not bnd.contains(col):
        raise OutsideSpanError(f"column {col} outside boundary span [{bnd.col_start}, {bnd.col_end}]")
    c0 = max(bnd.col_start, col - half_width)
    c1 = min(bnd.col_end, col + half_width)
    if c1 == c0:
        return np.array([1.0, 0.0])
    dx = (c1 - c0) * meta.lateral_scale
    dy = (bnd.upper[c1 - bnd.col_start] - bnd.upper[c0 - bnd.col_start]) * meta.axial_scale
    norm = math.hypot(dx, dy)
    return np.array([dx / norm, dy / norm])
