"""Seeded image augmentations for robustness runs and perturbed phantom corpora.

Transforms are applied in a fixed order (flip, brightness/contrast, speckle,
blur, affine), each with its own probability.  Every sampled parameter is
written to a log; :func:`replay` re-applies a log through the individual
operations and reproduces the pipeline output bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

ORDER = ("flip", "brightness_contrast", "speckle", "blur", "affine")


@dataclass(frozen=True)
class AugmentConfig:
    p_flip: float = 0.5
    p_brightness_contrast: float = 0.5
    p_speckle: float = 0.5
    p_blur: float = 0.25
    p_affine: float = 0.25
    brightness_delta_range: tuple = (-0.2, 0.2)
    contrast_factor_range: tuple = (0.8, 1.25)
    speckle_gaussian_sigma: float = 0.05
    speckle_mult_sigma: float = 0.1
    blur_sigma_range: tuple = (0.5, 2.0)
    affine_max_rotate_deg: float = 10.0
    affine_max_translate_frac: float = 0.05
    affine_scale_range: tuple = (0.95, 1.05)
    seed: int = 0

    def __post_init__(self):
        for name in ("p_flip", "p_brightness_contrast", "p_speckle", "p_blur", "p_affine"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        for name in ("brightness_delta_range", "contrast_factor_range", "blur_sigma_range",
                     "affine_scale_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is empty")
        if self.speckle_gaussian_sigma <= 0 or self.speckle_mult_sigma <= 0:
            raise ValueError("speckle sigmas must be positive")
        if self.blur_sigma_range[0] <= 0:
            raise ValueError("blur sigma must be positive")
        if self.affine_max_rotate_deg < 0 or self.affine_max_translate_frac < 0:
            raise ValueError("affine magnitudes must be non-negative")


def derive_seed(master_seed, index):
    """Independent per-image seed split from a master seed."""
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def horizontal_flip(grid):
    return np.ascontiguousarray(np.asarray(grid)[..., ::-1])


def brightness_contrast(grid, delta, factor):
    return np.clip(factor * (np.asarray(grid, dtype=np.float64) - 0.5) + 0.5 + delta, 0.0, 1.0)


def speckle(grid, g_sigma, m_sigma, rng):
    """Additive then multiplicative Gaussian noise.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed.
    """
    rng = np.random.default_rng(rng)
    x = np.asarray(grid, dtype=np.float64)
    additive = rng.standard_normal(x.shape) * g_sigma
    multiplicative = rng.standard_normal(x.shape) * m_sigma
    return np.clip((x + additive) * (1.0 + multiplicative), 0.0, 1.0)


def gaussian_kernel(sigma):
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(grid, sigma):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(np.asarray(grid, dtype=np.float64), k, axis=-2, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=-1, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def random_affine(grid, rotate_deg, translate_frac_xy, scale):
    """Rotate/scale about the image centre then translate, via inverse bilinear mapping.

    Output pixels whose pre-image falls outside the input are 0.
    """
    x = np.asarray(grid, dtype=np.float64)
    h, w = x.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    tx = translate_frac_xy[0] * w
    ty = translate_frac_xy[1] * h
    theta = math.radians(rotate_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = cols - cx - tx
    dy = rows - cy - ty
    # inverse rotation, then inverse scale
    src_x = cx + (cos * dx + sin * dy) / scale
    src_y = cy + (-sin * dx + cos * dy) / scale
    out = ndimage.map_coordinates(x, [src_y, src_x], order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def _apply(grid, entry):
    name = entry["name"]
    if name == "flip":
        return horizontal_flip(grid)
    if name == "brightness_contrast":
        return brightness_contrast(grid, entry["delta"], entry["factor"])
    if name == "speckle":
        return speckle(grid, entry["g_sigma"], entry["m_sigma"], entry["seed"])
    if name == "blur":
        return gaussian_blur(grid, entry["sigma"])
    if name == "affine":
        return random_affine(grid, entry["rotate_deg"], tuple(entry["translate_frac_xy"]),
                             entry["scale"])
    raise ValueError(f"unknown transform {name!r}")


def _sample(name, cfg, rng):
    if name == "flip":
        return {"name": "flip"}
    if name == "brightness_contrast":
        return {"name": name,
                "delta": float(rng.uniform(*cfg.brightness_delta_range)),
                "factor": float(rng.uniform(*cfg.contrast_factor_range))}
    if name == "speckle":
        return {"name": name,
                "g_sigma": cfg.speckle_gaussian_sigma,
                "m_sigma": cfg.speckle_mult_sigma,
                "seed": int(rng.integers(0, 2**63 - 1))}
    if name == "blur":
        return {"name": name, "sigma": float(rng.uniform(*cfg.blur_sigma_range))}
    t = cfg.affine_max_translate_frac
    return {"name": "affine",
            "rotate_deg": float(rng.uniform(-cfg.affine_max_rotate_deg, cfg.affine_max_rotate_deg)),
            "translate_frac_xy": [float(rng.uniform(-t, t)), float(rng.uniform(-t, t))],
            "scale": float(rng.uniform(*cfg.affine_scale_range))}


def apply_pipeline(grid, cfg):
    """Apply the augmentation stack; returns ``(grid, log)``."""
    rng = np.random.default_rng(cfg.seed)
    probs = {
        "flip": cfg.p_flip,
        "brightness_contrast": cfg.p_brightness_contrast,
        "speckle": cfg.p_speckle,
        "blur": cfg.p_blur,
        "affine": cfg.p_affine,
    }
    out = np.asarray(grid, dtype=np.float64)
    log = []
    for name in ORDER:
        if rng.random() < probs[name]:
            entry = _sample(name, cfg, rng)
            out = _apply(out, entry)
            log.append(entry)
    return out, log


def replay(grid, log):
    out = np.asarray(grid, dtype=np.float64)
    for entry in log:
        out = _apply(out, entry)
    return out


def log_to_jsonl(log):
    return "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in log)


def log_from_jsonl(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]
