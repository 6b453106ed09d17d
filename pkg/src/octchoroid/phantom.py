"""Synthetic OCT-like B-scans with analytically known choroid geometry.

The upper choroid boundary is a quadratic depth profile in lateral
micrometres about the fovea.  The lower boundary is the upper boundary
pushed along its inward normal by a quadratic thickness profile ``T(x)``,
so ``T`` is the perpendicular thickness by construction.  Ground-truth
masks include, per column, every row from the nearest row to the upper
boundary through the nearest row to the lower boundary.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import simpson

from .augment import speckle
from .ingest import DEFAULT_LATERAL_SCALE, BScan, ScanMetadata
from .measure import MeasureConfig, Measurements, loci_columns, roi_weights

DEFAULT_AXIAL_SCALE = 3.87
SIMPSON_INTERVALS = 10_000


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    meta: ScanMetadata
    upper_poly: tuple = (1100.0, 0.0, 0.0)
    thickness_profile: tuple = (300.0, 0.0, 0.0)
    background: float = 0.08
    retina: float = 0.45
    rpe: float = 0.9
    choroid: float = 0.35
    sclera: float = 0.18
    retina_thickness_um: float = 280.0
    rpe_thickness_um: float = 25.0
    top_black_rows: int = 20
    bottom_black_rows: int = 20
    speckle_gaussian_sigma: float = 0.03
    speckle_mult_sigma: float = 0.1
    seed: int = 0

    def to_json(self):
        out = asdict(self)
        out["meta"] = asdict(self.meta)
        out["upper_poly"] = list(self.upper_poly)
        out["thickness_profile"] = list(self.thickness_profile)
        return out

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        doc["meta"] = ScanMetadata(**doc["meta"])
        doc["upper_poly"] = tuple(doc["upper_poly"])
        doc["thickness_profile"] = tuple(doc["thickness_profile"])
        return cls(**doc)


def default_meta(fovea_col=384, width=768, height=768, lateral=DEFAULT_LATERAL_SCALE,
                 axial=DEFAULT_AXIAL_SCALE):
    return ScanMetadata(lateral, axial, width, height, True, "right", fovea_col)


def flat_spec(thickness=300.0, depth=1100.0, **kwargs):
    meta = kwargs.pop("meta", None) or default_meta()
    return PhantomSpec(meta, (depth, 0.0, 0.0), (thickness, 0.0, 0.0), **kwargs)


def _poly(c, x):
    return c[0] + c[1] * x + c[2] * x * x


def _dpoly(c, x):
    return c[1] + 2.0 * c[2] * x


@dataclass
class Geometry:
    """Analytic curves of a phantom, in micrometres relative to the fovea column."""

    spec: PhantomSpec
    fovea_col: int = field(init=False)

    def __post_init__(self):
        if self.spec.meta.fovea_col is None:
            raise PhantomError("phantom metadata needs a fovea column")
        self.fovea_col = self.spec.meta.fovea_col

    def lateral(self, col):
        return (np.asarray(col, dtype=np.float64) - self.fovea_col) * self.spec.meta.lateral_scale

    def upper(self, x):
        return _poly(self.spec.upper_poly, x)

    def thickness(self, x):
        return _poly(self.spec.thickness_profile, x)

    def _normal_offset(self, u):
        s = _dpoly(self.spec.upper_poly, u)
        q = np.sqrt(1.0 + s * s)
        t = self.thickness(u)
        return u - t * s / q, self.upper(u) + t / q

    def _offset_slope(self, u):
        s = _dpoly(self.spec.upper_poly, u)
        ds = 2.0 * self.spec.upper_poly[2]
        q = np.sqrt(1.0 + s * s)
        return 1.0 - _dpoly(self.spec.thickness_profile, u) * s / q - self.thickness(u) * ds / q**3

    def lower(self, x, iters=50):
        """Depth of the lower boundary directly below lateral position ``x``."""
        x = np.asarray(x, dtype=np.float64)
        u = x.copy()
        for _ in range(iters):
            px, _ = self._normal_offset(u)
            step = (px - x) / self._offset_slope(u)
            u = u - step
            if np.all(np.abs(step) < 1e-10):
                break
        return self._normal_offset(u)[1]

    def boundary_rows(self, cols=None):
        """Continuous (upper, lower) row positions for every column."""
        if cols is None:
            cols = np.arange(self.spec.meta.width_px)
        x = self.lateral(cols)
        ax = self.spec.meta.axial_scale
        return self.upper(x) / ax, self.lower(x) / ax


def _round_half_up(v):
    return np.floor(np.asarray(v) + 0.5).astype(np.int64)


def validate(spec):
    """Raise PhantomError unless the phantom fits the image and is well posed."""
    meta = spec.meta
    geo = Geometry(spec)
    x = geo.lateral(np.linspace(0, meta.width_px - 1, 4 * meta.width_px))
    t0 = spec.thickness_profile[0]
    if not 100.0 <= t0 <= 500.0:
        raise PhantomError(f"fovea thickness {t0} um outside [100, 500]")
    if np.any(geo.thickness(x) <= 0):
        raise PhantomError("thickness profile is not positive across the image")
    if np.any(geo._offset_slope(x) <= 0.05):
        raise PhantomError("lower boundary folds over (curvature too strong for the thickness)")
    upper, lower = geo.boundary_rows()
    retina_top = (geo.upper(geo.lateral(np.arange(meta.width_px)))
                  - spec.retina_thickness_um) / meta.axial_scale
    top_ok = spec.top_black_rows + 2
    bottom_ok = meta.height_px - spec.bottom_black_rows - 3
    if retina_top.min() < top_ok or upper.min() < top_ok:
        raise PhantomError("upper boundary (or retina above it) exits the image")
    if lower.max() > bottom_ok:
        raise PhantomError("lower boundary exits the image")
    return True


def rasterize(spec):
    """Ground-truth mask: rows round(upper) .. round(lower) in every column."""
    meta = spec.meta
    upper, lower = Geometry(spec).boundary_rows()
    rows = np.arange(meta.height_px)[:, None]
    return (rows >= _round_half_up(upper)[None, :]) & (rows <= _round_half_up(lower)[None, :])


def render(spec, mask=None):
    """Noise-free layered intensity image (before speckle)."""
    meta = spec.meta
    geo = Geometry(spec)
    upper, lower = geo.boundary_rows()
    ax = meta.axial_scale
    rows = np.arange(meta.height_px, dtype=np.float64)[:, None]
    img = np.full((meta.height_px, meta.width_px), spec.background)
    retina_top = upper - spec.retina_thickness_um / ax
    rpe_top = upper - spec.rpe_thickness_um / ax
    img[(rows >= retina_top) & (rows < rpe_top)] = spec.retina
    img[(rows >= rpe_top) & (rows < upper)] = spec.rpe
    if mask is None:
        mask = rasterize(spec)
    img[mask] = spec.choroid
    img[rows > lower] = spec.sclera
    return img


def generate(spec):
    """Return ``(scan, truth_mask, truth_pmap)`` for a phantom spec."""
    validate(spec)
    meta = spec.meta
    mask = rasterize(spec)
    img = render(spec, mask)
    if spec.speckle_gaussian_sigma > 0 or spec.speckle_mult_sigma > 0:
        img = speckle(img, spec.speckle_gaussian_sigma, spec.speckle_mult_sigma, spec.seed)
    img[:spec.top_black_rows] = 0.0
    if spec.bottom_black_rows:
        img[meta.height_px - spec.bottom_black_rows:] = 0.0
    # keep tissue rows distinguishable from the black margins
    tissue = slice(spec.top_black_rows, meta.height_px - spec.bottom_black_rows)
    img[tissue] = np.maximum(img[tissue], 0.02)
    return BScan(img, meta), mask, mask.astype(np.float64)


def _simpson_area(fn, halfwidth, intervals=SIMPSON_INTERVALS):
    x = np.linspace(-halfwidth, halfwidth, intervals + 1)
    return float(simpson(fn(x), x=x))


def area_vertical_mm2(spec, halfwidth=3000.0, intervals=SIMPSON_INTERVALS):
    """Area between the curves over the lateral ROI (vertical-extent definition)."""
    geo = Geometry(spec)
    return _simpson_area(lambda x: geo.lower(x) - geo.upper(x), halfwidth, intervals) / 1e6


def area_normal_mm2(spec, halfwidth=3000.0, intervals=SIMPSON_INTERVALS):
    """Integral of T along the upper boundary's arc length over the lateral ROI."""
    geo = Geometry(spec)

    def integrand(u):
        s = _dpoly(spec.upper_poly, u)
        return geo.thickness(u) * np.sqrt(1.0 + s * s)

    return _simpson_area(integrand, halfwidth, intervals) / 1e6


def analytic_measurements(spec, fovea_col=None, cfg=MeasureConfig()):
    """Exact measurements of a phantom at the loci the pipeline would use."""
    meta = spec.meta
    fovea = meta.fovea_col if fovea_col is None else fovea_col
    if fovea != meta.fovea_col:
        spec = PhantomSpec(**{**asdict(spec), "meta": meta.with_fovea(fovea)})
    geo = Geometry(spec)
    loci = loci_columns(fovea, meta, cfg)
    bad = [c for c in loci.values() if not 0 <= c < meta.width_px]
    if bad:
        raise PhantomError(f"loci {bad} outside the phantom")
    values = {off: float(geo.thickness(geo.lateral(col))) for off, col in loci.items()}
    mean = sum(values.values()) / len(values)
    cols, _ = roi_weights(fovea, meta, cfg.area_halfwidth)
    warnings = []
    if cols[0] < 0 or cols[-1] >= meta.width_px:
        warnings.append("RoiTruncated: ROI exceeds the phantom width")
    area = area_vertical_mm2(spec, cfg.area_halfwidth)
    roi = (int(max(cols[0], 0)), int(min(cols[-1], meta.width_px - 1)))
    return Measurements(int(fovea), values, mean, area, loci, roi, warnings)


def random_spec(rng, meta=None, max_tries=1000):
    """Draw a valid phantom with tilt, curvature and a varying thickness profile."""
    rng = np.random.default_rng(rng)
    for _ in range(max_tries):
        m = meta or default_meta(fovea_col=int(rng.integers(340, 429)))
        tilt = rng.choice([-1.0, 1.0]) * rng.uniform(0.01, 0.06)
        spec = PhantomSpec(
            meta=m,
            upper_poly=(rng.uniform(900.0, 1300.0), tilt, rng.uniform(-1.5e-5, 3e-5)),
            thickness_profile=(rng.uniform(150.0, 450.0), rng.uniform(-0.02, 0.02),
                               rng.uniform(-1e-5, 1e-5)),
            top_black_rows=int(rng.integers(10, 61)),
            bottom_black_rows=int(rng.integers(10, 61)),
            seed=int(rng.integers(0, 2**31 - 1)),
        )
        try:
            validate(spec)
        except PhantomError:
            continue
        return spec
    raise PhantomError("could not draw a valid phantom spec")


def random_suite(n, seed):
    rng = np.random.default_rng(seed)
    return [random_spec(rng) for _ in range(n)]
