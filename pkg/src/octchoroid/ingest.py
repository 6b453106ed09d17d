"""Scan loading and model-input preprocessing.

A B-scan is cropped of black rows above and below the tissue, resampled to
the model resolution and standardized.  The crop is recorded so anything
predicted at model resolution can be mapped back onto the native grid,
where the physical pixel scales apply.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .imageio import read_grayscale

#: Heidelberg Spectralis macular B-scan: 8.7 mm across 768 columns.
DEFAULT_LATERAL_SCALE = 8700.0 / 768.0

EYES = ("right", "left", "unknown")


class MetadataError(ValueError):
    pass


@dataclass(frozen=True)
class ScanMetadata:
    lateral_scale: float
    axial_scale: float
    width_px: int
    height_px: int
    edi: bool = True
    eye: str = "unknown"
    fovea_col: Optional[int] = None

    def __post_init__(self):
        if not (self.lateral_scale > 0 and self.axial_scale > 0):
            raise MetadataError("pixel scales must be positive")
        if self.width_px <= 0 or self.height_px <= 0:
            raise MetadataError("image dimensions must be positive")
        if self.eye not in EYES:
            raise MetadataError(f"eye must be one of {EYES}, got {self.eye!r}")
        if self.fovea_col is not None and not 0 <= self.fovea_col < self.width_px:
            raise MetadataError(f"fovea_col {self.fovea_col} outside [0, {self.width_px})")

    def with_fovea(self, fovea_col):
        return ScanMetadata(**{**asdict(self), "fovea_col": fovea_col})

    def to_sidecar(self):
        return {
            "lateral_scale_um": self.lateral_scale,
            "axial_scale_um": self.axial_scale,
            "edi": self.edi,
            "eye": self.eye,
            "fovea_col": self.fovea_col,
        }


def metadata_from_sidecar(sidecar, width_px, height_px, lateral_scale=None, axial_scale=None,
                          fovea_col=None):
    """Build ScanMetadata from a sidecar dict; explicit arguments override it.

    The axial scale has no default: it must come from the sidecar or the
    caller.  The lateral scale falls back to the 8.7 mm / 768 px geometry.
    """
    sidecar = dict(sidecar or {})
    lat = lateral_scale if lateral_scale is not None else sidecar.get("lateral_scale_um")
    ax = axial_scale if axial_scale is not None else sidecar.get("axial_scale_um")
    if ax is None:
        raise MetadataError("axial scale (um/px) is required")
    if lat is None:
        lat = DEFAULT_LATERAL_SCALE
    fov = fovea_col if fovea_col is not None else sidecar.get("fovea_col")
    return ScanMetadata(
        lateral_scale=float(lat),
        axial_scale=float(ax),
        width_px=int(width_px),
        height_px=int(height_px),
        edi=bool(sidecar.get("edi", True)),
        eye=str(sidecar.get("eye", "unknown")),
        fovea_col=None if fov is None else int(fov),
    )


def read_sidecar(path):
    with open(path) as fh:
        return json.load(fh)


@dataclass
class BScan:
    pixels: np.ndarray
    meta: ScanMetadata

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (self.meta.height_px, self.meta.width_px):
            raise MetadataError(
                f"pixel grid {self.pixels.shape} does not match metadata "
                f"{self.meta.height_px}x{self.meta.width_px}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")


@dataclass(frozen=True)
class CropRecord:
    top_rows_removed: int
    bottom_rows_removed: int
    native_height: int

    def __post_init__(self):
        if self.top_rows_removed < 0 or self.bottom_rows_removed < 0:
            raise ValueError("row counts must be non-negative")
        if self.top_rows_removed + self.bottom_rows_removed >= self.native_height:
            raise ValueError("crop removes every row")

    @property
    def cropped_height(self):
        return self.native_height - self.top_rows_removed - self.bottom_rows_removed

    def to_native_row(self, row):
        return row + self.top_rows_removed


@dataclass(frozen=True)
class PreprocessConfig:
    model_height: int = 544
    model_width: int = 768
    standardize_shift: float = 0.1
    standardize_scale: float = 0.2
    black_threshold: float = 0.01

    def __post_init__(self):
        if self.model_height <= 0 or self.model_width <= 0:
            raise ValueError("model dimensions must be positive")
        if self.standardize_scale == 0:
            raise ValueError("standardize_scale must be non-zero")


def load_bscan(path, meta):
    """Load a grayscale PNG/PGM as a BScan with intensities in [0, 1]."""
    raw, maxval = read_grayscale(path)
    if raw.shape != (meta.height_px, meta.width_px):
        raise MetadataError(
            f"{path}: image is {raw.shape[0]}x{raw.shape[1]}, metadata says "
            f"{meta.height_px}x{meta.width_px}")
    return BScan(raw / maxval, meta)


def crop_black_space(scan, cfg=PreprocessConfig()):
    """Strip the black row runs touching the top and bottom edges."""
    bright = scan.pixels.max(axis=1) >= cfg.black_threshold
    if not bright.any():
        raise ValueError("every row is below the black threshold")
    rows = np.flatnonzero(bright)
    top, last = int(rows[0]), int(rows[-1])
    h = scan.meta.height_px
    record = CropRecord(top, h - 1 - last, h)
    meta = ScanMetadata(**{**asdict(scan.meta), "height_px": last - top + 1})
    return BScan(scan.pixels[top:last + 1], meta), record


def _axis_weights(n_in, n_out):
    if n_out == 1 or n_in == 1:
        src = np.zeros(n_out)
    else:
        src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(src).astype(np.intp), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear_resize(grid, height, width):
    """Corner-aligned bilinear resampling of the last two axes."""
    grid = np.asarray(grid)
    h_in, w_in = grid.shape[-2:]
    if (h_in, w_in) == (height, width):
        return grid.copy()
    r0, r1, fr = _axis_weights(h_in, height)
    c0, c1, fc = _axis_weights(w_in, width)
    fr = fr.astype(grid.dtype if grid.dtype.kind == "f" else np.float64)[:, None]
    fc = fc.astype(fr.dtype)
    rows = grid[..., r0, :] * (1 - fr) + grid[..., r1, :] * fr
    return rows[..., c0] * (1 - fc) + rows[..., c1] * fc


def nearest_resize(grid, height, width):
    """Corner-aligned nearest-neighbour resampling (keeps binary masks binary)."""
    grid = np.asarray(grid)
    h_in, w_in = grid.shape[-2:]

    def idx(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out, dtype=np.intp)
        return np.floor(np.arange(n_out) * ((n_in - 1) / (n_out - 1)) + 0.5).astype(np.intp)

    return grid[..., idx(h_in, height)[:, None], idx(w_in, width)[None, :]]


def resize_to_model(scan, cfg=PreprocessConfig()):
    out = bilinear_resize(scan.pixels, cfg.model_height, cfg.model_width)
    return np.clip(out, 0.0, 1.0)


def standardize(grid, cfg=PreprocessConfig()):
    return (np.asarray(grid) - cfg.standardize_shift) / cfg.standardize_scale


def unstandardize(grid, cfg=PreprocessConfig()):
    return np.asarray(grid) * cfg.standardize_scale + cfg.standardize_shift


def _check_crop(crop, meta):
    if crop.native_height != meta.height_px:
        raise ValueError(
            f"crop record native height {crop.native_height} != scan height {meta.height_px}")


def _repad(cropped, crop, fill=0):
    out = np.full((crop.native_height, cropped.shape[1]), fill, dtype=cropped.dtype)
    out[crop.top_rows_removed:crop.top_rows_removed + cropped.shape[0]] = cropped
    return out


def map_mask_to_native(mask, crop, meta):
    """Nearest-neighbour upsample to the cropped size, then re-pad the removed rows."""
    _check_crop(crop, meta)
    up = nearest_resize(np.asarray(mask), crop.cropped_height, meta.width_px)
    return _repad(up, crop)


def map_pmap_to_native(pmap, crop, meta):
    """Bilinear upsample of a probability map, zero-filled in the removed rows."""
    _check_crop(crop, meta)
    up = bilinear_resize(np.asarray(pmap, dtype=np.float64), crop.cropped_height, meta.width_px)
    return _repad(np.clip(up, 0.0, 1.0), crop)


@dataclass
class PreprocessResult:
    model_input: np.ndarray
    crop: CropRecord
    cropped: BScan = field(repr=False)


def preprocess(scan, cfg=PreprocessConfig()):
    """crop -> resize -> standardize."""
    cropped, record = crop_black_space(scan, cfg)
    grid = resize_to_model(cropped, cfg)
    return PreprocessResult(standardize(grid, cfg), record, cropped)
