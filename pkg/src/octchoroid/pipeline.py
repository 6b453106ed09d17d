"""Per-image pipeline steps and the batch runner used by the CLI.

Workers compute; the calling process collects results and does all file
writing, in sorted input order, so output is independent of worker count.
"""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import boundary, measure, segment
from .imageio import read_grayscale, read_pmap
from .ingest import BScan, PreprocessConfig, metadata_from_sidecar, read_sidecar

IMAGE_SUFFIXES = (".png", ".pgm")
DERIVED_SUFFIXES = (".mask.png",)


def list_images(input_dir):
    """Sorted grayscale inputs in ``input_dir`` (derived mask PNGs excluded)."""
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {input_dir}")
    out = []
    for p in sorted(input_dir.iterdir()):
        name = p.name.lower()
        if p.is_file() and name.endswith(IMAGE_SUFFIXES) and not name.endswith(DERIVED_SUFFIXES):
            out.append(p)
    return out


def stem_of(path):
    return Path(path).name.rsplit(".", 1)[0]


@dataclass(frozen=True)
class ScanOverrides:
    lateral_um: float = None
    axial_um: float = None
    fovea_col: int = None
    fovea_by_stem: dict = field(default_factory=dict, hash=False)


def load_scan(path, overrides=ScanOverrides()):
    """Read an image plus its ``<stem>.json`` sidecar (if any) as a BScan."""
    path = Path(path)
    raw, maxval = read_grayscale(path)
    sidecar_path = path.with_name(stem_of(path) + ".json")
    sidecar = read_sidecar(sidecar_path) if sidecar_path.exists() else {}
    fovea = overrides.fovea_by_stem.get(stem_of(path), overrides.fovea_col)
    meta = metadata_from_sidecar(sidecar, raw.shape[1], raw.shape[0], overrides.lateral_um,
                                 overrides.axial_um, fovea)
    return BScan(raw / maxval, meta)


def read_fovea_csv(path):
    """``file,fovea_col`` CSV -> {stem: column}."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[stem_of(row["file"])] = int(row["fovea_col"])
    return out


# ---------------------------------------------------------------------------
# worker-side state

_WORKER = {}


def _init_worker(state):
    _WORKER.clear()
    _WORKER.update(state)
    _WORKER["limits"] = threadpool_limits(1)


def run_batch(fn, items, workers=1, state=None):
    """Apply ``fn(item, state)`` to every item; results come back in input order.

    With ``workers > 1`` items are processed in a process pool; every worker
    (and the serial path) is pinned to one BLAS thread.
    """
    state = state or {}
    if workers <= 1 or len(items) <= 1:
        with threadpool_limits(1):
            return [fn(item, state) for item in items]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(state,)) as pool:
        return list(pool.map(_call_in_worker, [(fn, item) for item in items]))


def _call_in_worker(job):
    fn, item = job
    return fn(item, _WORKER)


# ---------------------------------------------------------------------------
# segment


def make_backend(kind, network=None, external=None, input_dir=None, cfg=PreprocessConfig()):
    if kind == "cnn":
        if network is None:
            raise ValueError("cnn backend needs a network")
        return segment.EmbeddedCNN(network)
    if kind == "external":
        if not external:
            raise ValueError("external backend needs a map pattern (e.g. 'maps/{stem}.pmap')")
        return segment.ExternalMap(external, cfg)
    if kind == "oracle":
        return segment.PhantomOracle(os.path.join(str(input_dir), "{stem}.pmap"))
    raise ValueError(f"unknown backend {kind!r}")


@dataclass
class SegmentResult:
    name: str
    pmap: np.ndarray = None
    mask: np.ndarray = None
    seconds: float = 0.0
    error: str = None


def segment_one(path, state):
    """Load, segment and regularize one image; never raises."""
    start = time.perf_counter()
    name = Path(path).name
    try:
        scan = load_scan(path, state["overrides"])
        pmap = segment.segment(scan, state["backend"], state["preprocess"], key=stem_of(path))
        mask = segment.regularize(pmap, state["threshold"])
    except Exception as exc:  # isolate per-image failures
        return SegmentResult(name, seconds=time.perf_counter() - start,
                             error=f"{type(exc).__name__}: {exc}")
    return SegmentResult(name, pmap.astype(np.float32), mask, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# measure

MEASURE_COLUMNS = ("file", "fovea_col", "ct_m2000", "ct_0", "ct_p2000", "ct_mean_um", "area_mm2",
                   "warnings")


@dataclass
class MeasureResult:
    name: str
    measurements: measure.Measurements = None
    boundaries: dict = None
    error: str = None


def find_map(maps_dir, stem):
    for suffix in (".pmap", ".mask.png"):
        p = Path(maps_dir) / (stem + suffix)
        if p.exists():
            return p
    return None


def measure_one(path, state):
    """Boundaries and measurements for one image from its probability map; never raises."""
    name = Path(path).name
    try:
        scan = load_scan(path, state["overrides"])
        map_path = find_map(state["maps_dir"], stem_of(path))
        if map_path is None:
            raise FileNotFoundError(f"no .pmap or .mask.png for {stem_of(path)} in "
                                    f"{state['maps_dir']}")
        pmap = read_pmap(map_path)
        if pmap.shape != scan.pixels.shape:
            raise segment.DimensionError(f"map {map_path.name} is {pmap.shape}, "
                                         f"scan is {scan.pixels.shape}")
        mask = segment.regularize(pmap, state["threshold"])
        bnd = boundary.extract_boundaries(mask, state["window"])
        meas = measure.measure(bnd, scan.meta, state["measure"])
    except Exception as exc:  # isolate per-image failures
        return MeasureResult(name, error=f"{type(exc).__name__}: {exc}")
    return MeasureResult(name, meas, bnd.to_json())


def _fmt(v, digits):
    return "" if v is None else f"{v:.{digits}f}"


def measurement_row(name, meas=None, error=None, offsets=(-2000.0, 0.0, 2000.0)):
    """One CSV row; an error fills only ``file`` and ``warnings``."""
    if meas is None:
        return {"file": name, "fovea_col": "", "ct_m2000": "", "ct_0": "", "ct_p2000": "",
                "ct_mean_um": "", "area_mm2": "", "warnings": f"error: {error}"}
    row = {"file": name, "fovea_col": str(meas.fovea_col)}
    for off in offsets:
        row[measure.offset_key(off)] = _fmt(meas.thickness_um.get(off), 4)
    row["ct_mean_um"] = _fmt(meas.mean_thickness_um, 4)
    row["area_mm2"] = _fmt(meas.area_mm2, 6)
    row["warnings"] = " | ".join(meas.warnings)
    return row


def rows_to_csv(rows, columns):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore",
                            lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def read_measurements_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
