import math

import mpmath
import numpy as np
import pytest

from octchoroid import stats


def roc_trapezoid(scores, labels):
    """Empirical ROC by sweeping every distinct threshold, integrated by trapezoids."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    P, N = labels.sum(), (~labels).sum()
    pts = [(0.0, 0.0)]
    for t in sorted(set(scores.tolist()), reverse=True):
        sel = scores >= t
        pts.append(((sel & ~labels).sum() / N, (sel & labels).sum() / P))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2
    return area


def pearson_two_pass(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)


def ranks_by_loop(v):
    out = []
    for x in v:
        less = sum(1 for y in v if y < x)
        equal = sum(1 for y in v if y == x)
        out.append(less + (equal + 1) / 2)
    return out


# --- dice ------------------------------------------------------------------

def test_dice_examples():
    a = np.zeros(10, dtype=bool)
    a[:4] = True
    b = np.zeros(10, dtype=bool)
    b[2:6] = True
    assert stats.dice(a, a) == 1.0
    assert stats.dice(a, ~a) == 0.0
    assert stats.dice(a, b) == 0.5
    assert stats.dice(np.zeros(3), np.zeros(3)) == 1.0
    with pytest.raises(stats.StatsError):
        stats.dice(np.zeros(3), np.zeros(4))


# --- auc -------------------------------------------------------------------

def test_auc_examples():
    truth = np.array([0, 0, 1, 1], dtype=bool)
    assert stats.auc(np.array([0.1, 0.2, 0.8, 0.9]), truth) == 1.0
    assert stats.auc(np.full(4, 0.3), truth) == 0.5
    with pytest.raises(stats.StatsError):
        stats.auc(np.ones(3), np.ones(3, dtype=bool))


def test_auc_vs_roc_sweep(rng):
    for _ in range(200):
        n = int(rng.integers(2, 200))
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        if labels.all() or not labels.any():
            continue
        assert abs(stats.auc(scores, labels) - roc_trapezoid(scores, labels)) < 1e-9


def test_midranks_loop(rng):
    v = rng.integers(0, 6, size=40).astype(float)
    np.testing.assert_array_equal(stats.midranks(v), ranks_by_loop(v.tolist()))


# --- correlation / mae -----------------------------------------------------

def test_correlation_examples(rng):
    x = rng.normal(size=30)
    assert stats.pearson(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-15)
    assert stats.spearman(x, 2 * x + 1) == 1.0
    assert stats.pearson(x, -x) == pytest.approx(-1.0, abs=1e-15)
    assert stats.spearman(x, -x) == -1.0
    with pytest.raises(stats.StatsError):
        stats.pearson(np.ones(5), x[:5])
    with pytest.raises(stats.StatsError):
        stats.pearson([1.0], [2.0])


def test_correlation_vs_definitions(rng):
    for _ in range(100):
        x = rng.normal(size=50)
        y = 0.4 * x + rng.normal(size=50)
        assert abs(stats.pearson(x, y) - pearson_two_pass(x.tolist(), y.tolist())) < 1e-12
        rho = pearson_two_pass(ranks_by_loop(x.tolist()), ranks_by_loop(y.tolist()))
        assert abs(stats.spearman(x, y) - rho) < 1e-12


def test_mae(rng):
    x = rng.normal(size=40)
    assert stats.mae(x, x) == 0.0
    assert stats.mae(x, x + 2.5) == pytest.approx(2.5)
    y = rng.normal(size=40)
    total = 0.0
    for a, b in zip(x.tolist(), y.tolist()):
        total += abs(a - b)
    assert abs(stats.mae(x, y) - total / 40) < 1e-12


# --- Bland-Altman ----------------------------------------------------------

def test_bland_altman_identical_and_offset(rng):
    x = rng.normal(300, 50, size=54)
    ba = stats.bland_altman(x, x)
    assert (ba.mean_diff, ba.sd_diff, ba.loa_low, ba.loa_high, ba.outside_loa_count) == (
        0.0, 0.0, 0.0, 0.0, 0)
    ba = stats.bland_altman(x + 3.0, x)
    assert ba.mean_diff == pytest.approx(3.0)
    assert ba.sd_diff == pytest.approx(0.0, abs=1e-12)
    assert ba.outside_loa_count == 0


def test_bland_altman_definition(rng):
    x = rng.normal(size=30)
    y = x + rng.normal(scale=0.2, size=30)
    ba = stats.bland_altman(x, y)
    d = x - y
    sd = math.sqrt(sum((v - d.mean()) ** 2 for v in d) / 29)
    assert ba.sd_diff == pytest.approx(sd, rel=1e-12)
    assert ba.loa_low == pytest.approx(d.mean() - 1.96 * sd, rel=1e-12)
    assert ba.loa_high == pytest.approx(d.mean() + 1.96 * sd, rel=1e-12)
    swapped = stats.bland_altman(y, x)
    assert swapped.mean_diff == pytest.approx(-ba.mean_diff, abs=1e-15)
    assert swapped.sd_diff == pytest.approx(ba.sd_diff, rel=1e-12)


def test_bland_altman_needs_two():
    with pytest.raises(stats.StatsError):
        stats.bland_altman([1.0], [1.0])


# --- t distribution --------------------------------------------------------

def test_t_quantile_table():
    assert abs(stats.t_ppf(0.975, 25) - 2.0595) < 1e-4
    assert abs(stats.t_ppf(0.975, 1) - 12.7062) < 1e-4
    assert abs(stats.t_ppf(0.95, 10) - 1.8125) < 1e-4
    assert stats.t_ppf(0.5, 7) == 0.0
    assert stats.t_ppf(0.025, 25) == pytest.approx(-stats.t_ppf(0.975, 25))


def test_betainc_vs_mpmath(rng):
    mpmath.mp.dps = 30
    for _ in range(300):
        a, b = rng.uniform(0.1, 60, size=2)
        x = rng.random()
        exact = float(mpmath.betainc(a, b, 0, x, regularized=True))
        assert abs(stats.betainc(a, b, x) - exact) < 1e-12


def test_t_cdf_vs_mpmath(rng):
    mpmath.mp.dps = 30
    for _ in range(100):
        dof = float(rng.uniform(1, 80))
        t = float(rng.normal(scale=3))
        x = dof / (dof + t * t)
        tail = 0.5 * mpmath.betainc(dof / 2, 0.5, 0, x, regularized=True)
        exact = float(1 - tail) if t >= 0 else float(tail)
        assert abs(stats.t_cdf(t, dof) - exact) < 1e-12


# --- regression ------------------------------------------------------------

def test_linfit_exact_line(rng):
    x = np.linspace(100, 400, 27)
    fit = stats.linfit_ci(x, x)
    assert fit.slope == pytest.approx(1.0, abs=1e-12)
    assert fit.intercept == pytest.approx(0.0, abs=1e-9)
    assert fit.slope_ci95[1] - fit.slope_ci95[0] == pytest.approx(0.0, abs=1e-9)
    x = rng.normal(size=40)
    fit = stats.linfit_ci(x, -3.25 * x + 7.5)
    assert abs(fit.slope + 3.25) < 1e-10 and abs(fit.intercept - 7.5) < 1e-10


def test_linfit_matches_textbook(rng):
    x = rng.normal(250, 60, size=27)
    y = 1.04 * x - 7 + rng.normal(scale=20, size=27)
    fit = stats.linfit_ci(x, y)
    n = 27
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    b = ((x - xm) * (y - ym)).sum() / sxx
    a = ym - b * xm
    s = math.sqrt(((y - a - b * x) ** 2).sum() / (n - 2))
    tq = float(mpmath.findroot(
        lambda t: 1 - 0.5 * mpmath.betainc(12.5, 0.5, 0, 25 / (25 + t * t), regularized=True)
        - 0.975, 2.0))
    assert fit.slope_ci95[0] == pytest.approx(b - tq * s / math.sqrt(sxx), rel=1e-9)
    assert fit.intercept_ci95[1] == pytest.approx(
        a + tq * s * math.sqrt(1 / n + xm * xm / sxx), rel=1e-9)
    with pytest.raises(stats.StatsError):
        stats.linfit_ci(np.ones(5), np.arange(5.0))


# --- Welch -----------------------------------------------------------------

def test_welch_identical_and_pooled(rng):
    x = rng.normal(size=20)
    res = stats.ttest_welch(x, x)
    assert res.t == 0.0 and res.p == pytest.approx(1.0)
    y = x[::-1] + 1.0
    assert stats.ttest_welch(x, y).dof == pytest.approx(38.0, rel=1e-12)
    with pytest.raises(stats.StatsError):
        stats.ttest_welch([1.0], [1.0, 2.0])


def test_welch_p_vs_numeric_integration(rng):
    mpmath.mp.dps = 30
    for _ in range(5):
        x = rng.normal(220, 60, size=int(rng.integers(10, 40)))
        y = rng.normal(250, 80, size=int(rng.integers(10, 40)))
        res = stats.ttest_welch(x, y)
        nu = mpmath.mpf(res.dof)
        pdf = lambda t: (mpmath.gamma((nu + 1) / 2) / (mpmath.sqrt(nu * mpmath.pi)
                         * mpmath.gamma(nu / 2)) * (1 + t * t / nu) ** (-(nu + 1) / 2))
        p = 2 * mpmath.quad(pdf, [abs(res.t), mpmath.inf])
        assert abs(res.p - float(p)) < 1e-6


# --- report ----------------------------------------------------------------

def test_report_identity_series(rng):
    x = rng.normal(300, 40, size=10)
    rep = stats.agreement_report(x, x)
    doc = rep.to_json()
    assert "dice" not in doc and "auc" not in doc
    assert rep.pearson_r == 1.0 and rep.mae == 0.0
    assert (rep.bland_altman.loa_low, rep.bland_altman.loa_high) == (0.0, 0.0)


def test_report_with_overlap(rng):
    x = rng.normal(size=10)
    doc = stats.agreement_report(x, x + 0.1, 0.97, 0.99).to_json()
    assert doc["dice"] == 0.97 and doc["auc"] == 0.99
