"""Choroid segmentation backends and mask regularization."""

from __future__ import annotations

import os

import numpy as np
from scipy import ndimage

from .imageio import read_pmap
from .ingest import PreprocessConfig, map_pmap_to_native, preprocess
from .nnexec import forward

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class BackendError(RuntimeError):
    pass


class DimensionError(BackendError, ValueError):
    pass


class EmbeddedCNN:
    """Runs a loaded :class:`~octchoroid.nnexec.Network` at model resolution."""

    name = "cnn"

    def __init__(self, network):
        self.network = network

    def predict(self, scan, prep, key=None):
        return forward(self.network, prep.model_input), "model"


class ExternalMap:
    """Reads precomputed probability maps.

    ``pattern`` is a path template with a ``{stem}`` placeholder, e.g.
    ``"maps/{stem}.pmap"``.  A map may be at model resolution (it is then
    mapped back like a CNN output) or already at native resolution.
    """

    name = "external"

    def __init__(self, pattern, cfg=PreprocessConfig()):
        self.pattern = str(pattern)
        self.cfg = cfg

    def path_for(self, key):
        return self.pattern.format(stem=key)

    def predict(self, scan, prep, key=None):
        if key is None:
            raise BackendError("external maps are looked up by file stem; no key given")
        path = self.path_for(key)
        if not os.path.exists(path):
            raise BackendError(f"external probability map not found: {path}")
        values = read_pmap(path)
        if values.shape == (self.cfg.model_height, self.cfg.model_width) and prep is not None:
            return values, "model"
        if values.shape == scan.pixels.shape:
            return values, "native"
        raise DimensionError(
            f"{path}: map is {values.shape[0]}x{values.shape[1]}, expected model "
            f"{self.cfg.model_height}x{self.cfg.model_width} or native "
            f"{scan.pixels.shape[0]}x{scan.pixels.shape[1]}")


class PhantomOracle:
    """Returns a known ground-truth mask untouched (values exactly 0 or 1).

    ``truth`` is a single array, a mapping from file stem to array, or a
    path template with a ``{stem}`` placeholder naming ``.pmap`` files.
    """

    name = "oracle"
    needs_preprocess = False

    def __init__(self, truth):
        self.truth = truth

    def predict(self, scan, prep, key=None):
        if isinstance(self.truth, str):
            path = self.truth.format(stem=key)
            if not os.path.exists(path):
                raise BackendError(f"ground-truth map not found: {path}")
            truth = read_pmap(path)
        elif isinstance(self.truth, dict):
            truth = self.truth[key]
        else:
            truth = self.truth
        truth = np.asarray(truth, dtype=np.float64)
        if truth.shape != scan.pixels.shape:
            raise DimensionError(f"ground truth is {truth.shape}, scan is {scan.pixels.shape}")
        return truth, "native"


def segment(scan, backend, cfg=PreprocessConfig(), key=None):
    """Native-resolution choroid probability map for ``scan``.

    A scan with no rows above the black threshold has no tissue to segment
    and yields an all-zero map.
    """
    prep = None
    if getattr(backend, "needs_preprocess", True):
        try:
            prep = preprocess(scan, cfg)
        except ValueError:
            return np.zeros(scan.pixels.shape)
    values, resolution = backend.predict(scan, prep, key)
    values = np.asarray(values, dtype=np.float64)
    if resolution == "native":
        return values.copy()
    if values.shape != (cfg.model_height, cfg.model_width):
        raise DimensionError(f"backend returned {values.shape}, expected model resolution "
                             f"{cfg.model_height}x{cfg.model_width}")
    return map_pmap_to_native(values, prep.crop, scan.meta)


def binarize(pmap, threshold=0.5):
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    return np.asarray(pmap) >= threshold


def largest_component(mask):
    """Keep the largest 8-connected component.

    Equal-sized components are ranked by their first pixel in raster order
    (topmost, then leftmost).
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n <= 1:
        return mask.copy()
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=n + 1)[1:]
    order = np.flatnonzero(flat)
    # first raster-order pixel of each label
    _, first = np.unique(flat[order], return_index=True)
    anchors = order[first]
    # lexsort: last key is primary
    best = np.lexsort((anchors, -sizes))[0] + 1
    return labels == best


def regularize(pmap, threshold=0.5):
    return largest_component(binarize(pmap, threshold))
