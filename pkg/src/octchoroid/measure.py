"""Choroid thickness and area from a boundary pair and a fovea anchor.

Thickness at a locus is the length of the segment that leaves the smoothed
upper boundary along its inward normal and stops at the lower boundary,
measured in micrometres.  Mean thickness averages the fovea locus and the
loci 2000 um either side.  Area integrates the vertical choroid extent over
the +/-3000 um region about the fovea.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boundary import DEFAULT_TANGENT_HALF_WIDTH, tangent_at

BISECTION_TOL_UM = 0.01


class MeasurementError(ValueError):
    pass


class RoiExceedsSegmentation(MeasurementError):
    pass


class LocusOutsideSpan(MeasurementError):
    pass


@dataclass(frozen=True)
class MeasureConfig:
    thickness_offsets: tuple = (-2000.0, 0.0, 2000.0)
    area_halfwidth: float = 3000.0
    ray_step: float = 1.0
    area_mode: str = "integrate"
    tangent_half_width: int = DEFAULT_TANGENT_HALF_WIDTH

    def __post_init__(self):
        if not all(math.isfinite(o) for o in self.thickness_offsets):
            raise ValueError("thickness offsets must be finite")
        if not self.area_halfwidth > 0:
            raise ValueError("area_halfwidth must be positive")
        if not self.ray_step > 0:
            raise ValueError("ray_step must be positive")
        if self.area_mode not in ("integrate", "pixels"):
            raise ValueError("area_mode must be 'integrate' or 'pixels'")


def offset_key(offset):
    """CSV column name for a thickness offset: -2000 -> ct_m2000, 0 -> ct_0."""
    v = int(round(offset))
    if v == 0:
        return "ct_0"
    return f"ct_{'m' if v < 0 else 'p'}{abs(v)}"


@dataclass
class Measurements:
    fovea_col: int
    thickness_um: dict
    mean_thickness_um: float
    area_mm2: float
    loci_cols: dict
    roi_cols: tuple
    warnings: list = field(default_factory=list)

    def to_json(self):
        return {
            "fovea_col": self.fovea_col,
            "thickness_um": {offset_key(k): v for k, v in self.thickness_um.items()},
            "mean_thickness_um": self.mean_thickness_um,
            "area_mm2": self.area_mm2,
            "loci_cols": {offset_key(k): v for k, v in self.loci_cols.items()},
            "roi_cols": list(self.roi_cols) if self.roi_cols else None,
            "warnings": list(self.warnings),
        }


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _lower_curve(bnd, meta):
    return bnd.cols * meta.lateral_scale, bnd.lower * meta.axial_scale


def thickness_at(bnd, locus_col, meta, cfg=MeasureConfig()):
    """Perpendicular choroid thickness (um) at ``locus_col``."""
    if not bnd.contains(locus_col):
        raise LocusOutsideSpan(
            f"locus column {locus_col} outside segmentation span [{bnd.col_start}, {bnd.col_end}]")
    i = locus_col - bnd.col_start
    px = locus_col * meta.lateral_scale
    py = bnd.upper[i] * meta.axial_scale
    tx, ty = tangent_at(bnd, locus_col, meta, cfg.tangent_half_width)
    nx, ny = -ty, tx
    xs, ys = _lower_curve(bnd, meta)
    x_lo, x_hi = xs[0], xs[-1]

    def gap(t):
        return py + t * ny - np.interp(px + t * nx, xs, ys)

    g0 = py - ys[i]
    if g0 >= 0:
        return 0.0
    # past this depth the ray is certainly below the whole lower curve
    t_max = (ys.max() - py) / ny + cfg.ray_step
    ts = np.arange(0.0, t_max + cfg.ray_step, cfg.ray_step)
    qx = px + ts * nx
    inside = (qx >= x_lo) & (qx <= x_hi)
    g = np.where(inside, py + ts * ny - np.interp(qx, xs, ys), np.nan)
    stop = np.flatnonzero(~inside | (g >= 0))
    k = int(stop[0])
    if not inside[k]:
        raise RoiExceedsSegmentation(
            f"perpendicular from column {locus_col} leaves the segmentation span before "
            "reaching the lower boundary")
    a, b = ts[k - 1], ts[k]
    ga, gb = g[k - 1], g[k]
    while b - a > BISECTION_TOL_UM:
        m = 0.5 * (a + b)
        qm = px + m * nx
        if qm < x_lo or qm > x_hi:
            raise RoiExceedsSegmentation(f"perpendicular from column {locus_col} leaves the span")
        gm = gap(m)
        if gm >= 0:
            b, gb = m, gm
        else:
            a, ga = m, gm
    # secant step inside the final bracket; exact when the bracket sees one lower segment
    return float(a - ga * (b - a) / (gb - ga)) if gb != ga else float(b)


def loci_columns(fovea_col, meta, cfg=MeasureConfig()):
    return {off: fovea_col + _round_half_up(off / meta.lateral_scale)
            for off in cfg.thickness_offsets}


def mean_thickness(bnd, fovea_col, meta, cfg=MeasureConfig()):
    """Thickness at each configured offset from the fovea and their mean.

    Returns ``(values_by_offset, mean, loci_by_offset)``.  Fails if any
    locus cannot be measured; there is no partial mean.
    """
    loci = loci_columns(fovea_col, meta, cfg)
    values, failed = {}, []
    for off, col in loci.items():
        try:
            values[off] = thickness_at(bnd, col, meta, cfg)
        except MeasurementError as exc:
            failed.append(f"{offset_key(off)} (column {col}): {exc}")
    if failed:
        raise LocusOutsideSpan("cannot measure thickness at " + "; ".join(failed))
    mean = sum(values.values()) / len(values)
    return values, mean, loci


def roi_weights(fovea_col, meta, halfwidth):
    """Columns overlapping ``[-halfwidth, +halfwidth]`` um about the fovea column centre.

    Each column covers one lateral pixel pitch; the returned weight is the
    covered fraction, so the weights sum to ``2 * halfwidth / lateral_scale``.
    Columns outside the image are included (callers warn about them).
    """
    lat = meta.lateral_scale
    reach = int(math.ceil(halfwidth / lat + 0.5))
    cols = np.arange(fovea_col - reach, fovea_col + reach + 1)
    x = (cols - fovea_col) * lat
    cover = np.minimum(x + lat / 2, halfwidth) - np.maximum(x - lat / 2, -halfwidth)
    w = np.clip(cover, 0.0, lat) / lat
    keep = w > 0
    return cols[keep], w[keep]


def choroid_area(bnd, fovea_col, meta, cfg=MeasureConfig()):
    """Choroid area (mm^2) in the ROI; returns ``(area, roi_cols, warnings)``."""
    if not 0 <= fovea_col < meta.width_px:
        raise MeasurementError(f"fovea column {fovea_col} outside image [0, {meta.width_px})")
    cols, w = roi_weights(fovea_col, meta, cfg.area_halfwidth)
    warnings = []
    lo, hi = int(cols[0]), int(cols[-1])
    if lo < 0 or hi >= meta.width_px:
        warnings.append(f"RoiTruncated: ROI columns [{lo}, {hi}] exceed image width {meta.width_px}")
    in_span = (cols >= bnd.col_start) & (cols <= bnd.col_end)
    if not in_span.all():
        warnings.append(f"RoiTruncated: ROI columns [{lo}, {hi}] extend beyond segmentation "
                        f"span [{bnd.col_start}, {bnd.col_end}]")
    idx = cols[in_span] - bnd.col_start
    if cfg.area_mode == "pixels":
        extent = bnd.raw_lower[idx] - bnd.raw_upper[idx] + 1.0
    else:
        extent = np.maximum(0.0, bnd.lower[idx] - bnd.upper[idx])
    area_um2 = float(np.sum(w[in_span] * extent)) * meta.axial_scale * meta.lateral_scale
    roi = (max(lo, 0), min(hi, meta.width_px - 1))
    return area_um2 / 1e6, roi, warnings


def measure(bnd, meta, cfg=MeasureConfig(), fovea_col=None):
    """All measurements for one scan.

    Thickness failures are reported as ``error:`` warnings with the
    thickness fields left empty; area is still computed.
    """
    fovea = meta.fovea_col if fovea_col is None else fovea_col
    if fovea is None:
        raise MeasurementError("fovea column is required (metadata or explicit argument)")
    area, roi, warnings = choroid_area(bnd, fovea, meta, cfg)
    try:
        values, mean, loci = mean_thickness(bnd, fovea, meta, cfg)
    except MeasurementError as exc:
        values, mean, loci = {}, None, loci_columns(fovea, meta, cfg)
        warnings = [f"error: {exc}"] + warnings
    if bnd.gaps.any():
        warnings.append(f"BoundaryGaps: {int(bnd.gaps.sum())} interpolated columns")
    return Measurements(int(fovea), values, mean, area, loci, roi, warnings)
