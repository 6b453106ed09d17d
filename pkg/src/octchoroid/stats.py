"""Method-agreement statistics: overlap, discrimination, correlation, Bland-Altman, regression.

Student-t probabilities and quantiles are computed here from the
regularized incomplete beta function (continued-fraction evaluation), so
the confidence intervals and Welch p-values do not depend on an external
distribution library.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

LOA_MULTIPLIER = 1.96


class StatsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# special functions


def _betacf(a, b, x, max_iter=500, eps=1e-16):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise StatsError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise StatsError("betainc requires a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t, dof):
    """Upper tail P(T > t) of Student's t."""
    if dof <= 0:
        raise StatsError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * betainc(dof / 2.0, 0.5, dof / (dof + t * t))
    return tail if t >= 0 else 1.0 - tail


def t_cdf(t, dof):
    return 1.0 - t_sf(t, dof) if t >= 0 else t_sf(-t, dof)


def t_ppf(q, dof, tol=1e-12):
    """Quantile of Student's t by bisection on the incomplete-beta CDF."""
    if not 0.0 < q < 1.0:
        raise StatsError("quantile level must be in (0, 1)")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_ppf(1.0 - q, dof, tol)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, dof) < q:
        lo, hi = hi, hi * 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, dof) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# segmentation agreement


def dice(a, b):
    """Dice overlap 2|A&B| / (|A|+|B|); two empty masks agree perfectly (1.0)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise StatsError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def midranks(values):
    """1-based ranks with tied values sharing the mean of their ranks."""
    values = np.asarray(values, dtype=np.float64).ravel()
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    start = np.cumsum(counts) - counts
    return (start + (counts + 1) / 2.0)[inverse.ravel()]


def auc(scores, truth):
    """ROC AUC via the Mann-Whitney rank-sum, ties at midranks."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape:
        raise StatsError(f"shapes differ: {scores.shape} vs {truth.shape}")
    pos = truth.ravel()
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise StatsError("AUC needs at least one positive and one negative pixel")
    ranks = midranks(scores)
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# paired-measurement agreement


def _paired(xs, ys, min_n):
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.size != ys.size:
        raise StatsError(f"series lengths differ: {xs.size} vs {ys.size}")
    if xs.size < min_n:
        raise StatsError(f"need at least {min_n} pairs, got {xs.size}")
    return xs, ys


def pearson(xs, ys):
    xs, ys = _paired(xs, ys, 2)
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise StatsError("Pearson correlation undefined for a constant series")
    return max(-1.0, min(1.0, float(dx @ dy) / math.sqrt(sxx * syy)))


def spearman(xs, ys):
    xs, ys = _paired(xs, ys, 2)
    return pearson(midranks(xs), midranks(ys))


def mae(xs, ys):
    xs, ys = _paired(xs, ys, 1)
    return float(np.mean(np.abs(xs - ys)))


@dataclass
class BlandAltman:
    mean_diff: float
    sd_diff: float
    loa_low: float
    loa_high: float
    outside_loa_count: int
    multiplier: float = LOA_MULTIPLIER

    def to_json(self):
        return asdict(self)


def bland_altman_points(xs, ys):
    """Per-pair ``(means, diffs)`` with ``diff = x - y``."""
    xs, ys = _paired(xs, ys, 1)
    return (xs + ys) / 2.0, xs - ys


def bland_altman(xs, ys, multiplier=LOA_MULTIPLIER):
    xs, ys = _paired(xs, ys, 2)
    d = xs - ys
    mean_d = float(d.mean())
    sd = float(np.std(d, ddof=1))
    half = multiplier * sd
    # rounding guard so a constant difference series has nothing outside
    slack = 8 * np.finfo(float).eps * max(1.0, float(np.abs(d).max()))
    outside = int(np.sum(np.abs(d - mean_d) > half + slack))
    return BlandAltman(mean_d, sd, mean_d - half, mean_d + half, outside, multiplier)


@dataclass
class LinearFit:
    slope: float
    intercept: float
    slope_ci95: tuple
    intercept_ci95: tuple
    slope_se: float
    intercept_se: float
    level: float = 0.95
    n: int = 0

    def to_json(self):
        out = asdict(self)
        out["slope_ci95"] = list(self.slope_ci95)
        out["intercept_ci95"] = list(self.intercept_ci95)
        return out


def linfit_ci(xs, ys, level=0.95):
    """Ordinary least squares ``y = slope * x + intercept`` with t-based CIs."""
    xs, ys = _paired(xs, ys, 3)
    n = xs.size
    xm, ym = xs.mean(), ys.mean()
    dx = xs - xm
    sxx = float(dx @ dx)
    if sxx == 0:
        raise StatsError("regression undefined: x has zero variance")
    slope = float(dx @ (ys - ym)) / sxx
    intercept = float(ym - slope * xm)
    resid = ys - (intercept + slope * xs)
    s2 = float(resid @ resid) / (n - 2)
    se_slope = math.sqrt(s2 / sxx)
    se_intercept = math.sqrt(s2 * (1.0 / n + xm * xm / sxx))
    tq = t_ppf(0.5 + level / 2.0, n - 2)
    return LinearFit(slope, intercept,
                     (slope - tq * se_slope, slope + tq * se_slope),
                     (intercept - tq * se_intercept, intercept + tq * se_intercept),
                     se_slope, se_intercept, level, n)


@dataclass
class WelchResult:
    t: float
    dof: float
    p: float


def ttest_welch(xs, ys):
    """Two-sided Welch t-test for independent samples."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.size < 2 or ys.size < 2:
        raise StatsError("each sample needs at least 2 observations")
    vx = float(np.var(xs, ddof=1)) / xs.size
    vy = float(np.var(ys, ddof=1)) / ys.size
    diff = float(xs.mean() - ys.mean())
    se2 = vx + vy
    if se2 == 0:
        if diff == 0:
            return WelchResult(0.0, float(xs.size + ys.size - 2), 1.0)
        return WelchResult(math.copysign(math.inf, diff), float(xs.size + ys.size - 2), 0.0)
    t = diff / math.sqrt(se2)
    dof = se2 * se2 / (vx * vx / (xs.size - 1) + vy * vy / (ys.size - 1))
    p = betainc(dof / 2.0, 0.5, dof / (dof + t * t))
    return WelchResult(t, dof, min(1.0, p))


# ---------------------------------------------------------------------------
# report


@dataclass
class AgreementReport:
    n: int
    pearson_r: float
    spearman_r: float
    mae: float
    bland_altman: BlandAltman
    linfit: Optional[LinearFit]
    dice: Optional[float] = None
    auc: Optional[float] = None

    def to_json(self):
        out = {"n": self.n}
        if self.dice is not None:
            out["dice"] = self.dice
        if self.auc is not None:
            out["auc"] = self.auc
        out.update({
            "pearson_r": self.pearson_r,
            "spearman_r": self.spearman_r,
            "mae": self.mae,
            "bland_altman": self.bland_altman.to_json(),
            "linfit": None if self.linfit is None else self.linfit.to_json(),
        })
        return out


def _safe(fn, *args):
    try:
        return fn(*args)
    except StatsError:
        return None


def agreement_report(xs, ys, dice_value=None, auc_value=None):
    """Full battery for paired measurements ``xs`` (reference) and ``ys``.

    Statistics that are undefined for the given data (e.g. correlation of a
    constant series) are reported as ``None``; identical series are treated
    as perfectly correlated.
    """
    xs, ys = _paired(xs, ys, 2)
    identical = bool(np.array_equal(xs, ys))
    r = 1.0 if identical else _safe(pearson, xs, ys)
    rho = 1.0 if identical else _safe(spearman, xs, ys)
    fit = _safe(linfit_ci, xs, ys) if xs.size >= 3 else None
    return AgreementReport(int(xs.size), r, rho, mae(xs, ys), bland_altman(xs, ys), fit,
                           dice_value, auc_value)
