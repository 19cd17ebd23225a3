"""Disorder averaging and finite-size data collapse.

Curves for several system sizes are mapped onto ``x = N**(1/nu) * (h - h_c)``.
The collapse quality of a candidate ``(h_c, nu)`` is the mean squared
deviation of every point from the master curve formed by linearly
interpolating the other curves, restricted to where they overlap and to
points whose master value lies inside ``value_band`` (saturated tails carry
no information about the scaling and only add noise).
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidArgumentError, NoOverlapError, NotCrossedError

HC_GRID = (0.5, 6.0, 0.1)
NU_GRID = (0.5, 3.0, 0.05)
VALUE_BAND = (0.05, 0.95)

# (eps, nu, dnu, h_c, dh_c) from the published phase-boundary table
PAPER_TABLE = (
    (0.2, 1.5, 0.2, 1.8, 0.4),
    (0.3, 1.6, 0.2, 2.4, 0.4),
    (0.4, 1.6, 0.2, 3.0, 0.2),
    (0.5, 1.6, 0.1, 3.5, 0.2),
    (0.6, 1.5, 0.2, 3.0, 0.2),
    (0.7, 1.6, 0.2, 2.5, 0.4),
    (0.8, 1.6, 0.2, 2.2, 0.4),
)


@dataclass(frozen=True)
class CurvePoint:
    h: float
    mean: float
    std: float  # nan when fewer than two samples
    n: int

    @property
    def has_band(self) -> bool:
        return self.n >= 2


@dataclass(frozen=True)
class AveragedCurve:
    n_sites: int
    eps: float
    points: tuple

    @property
    def h(self) -> np.ndarray:
        return np.array([p.h for p in self.points])

    @property
    def mean(self) -> np.ndarray:
        return np.array([p.mean for p in self.points])

    @property
    def std(self) -> np.ndarray:
        return np.array([p.std for p in self.points])

    @classmethod
    def from_arrays(cls, n_sites, eps, h, mean, std=None, n=None):
        h = np.asarray(h, float)
        std = np.full(h.shape, math.nan) if std is None else np.asarray(std, float)
        n = np.ones(h.shape, int) if n is None else np.asarray(n, int)
        order = np.argsort(h)
        return cls(n_sites, eps, tuple(
            CurvePoint(float(h[i]), float(mean[i]), float(std[i]), int(n[i])) for i in order
        ))


def mean_and_std(values) -> tuple[float, float]:
    """Mean and ensemble standard deviation ``sqrt(sum (x - mean)^2 / (n - 1))``.

    Uses exactly rounded sums, so the result does not depend on input order.
    """
    values = [float(v) for v in values]
    n = len(values)
    if n == 0:
        raise InvalidArgumentError("no samples")
    mean = math.fsum(values) / n
    if n < 2:
        return mean, math.nan
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))


def disorder_average(samples: Iterable) -> dict:
    """Group ``(n_sites, eps, h, value)`` samples into one curve per ``(n_sites, eps)``.

    Points with a single sample carry ``std = nan`` (no error band).
    """
    groups = defaultdict(list)
    for n_sites, eps, h, value in samples:
        groups[(int(n_sites), float(eps), float(h))].append(value)
    curves = defaultdict(list)
    for (n_sites, eps, h), values in groups.items():
        mean, std = mean_and_std(values)
        curves[(n_sites, eps)].append(CurvePoint(h, mean, std, len(values)))
    return {
        key: AveragedCurve(key[0], key[1], tuple(sorted(pts, key=lambda p: p.h)))
        for key, pts in sorted(curves.items())
    }


def _canonical(curves):
    return sorted(curves, key=lambda c: (c.n_sites, tuple(c.h), tuple(c.mean)))


def collapse_quality(curves, h_c: float, nu: float, min_points: int = 3,
                     value_band=VALUE_BAND) -> float:
    """Master-curve mean squared deviation; ``inf`` when too few points overlap."""
    lo, hi = (-math.inf, math.inf) if value_band is None else value_band
    curves = _canonical(curves)
    if len(curves) < 2:
        raise InvalidArgumentError("collapse needs at least two curves")
    scaled = []
    for c in curves:
        x = c.n_sites ** (1.0 / nu) * (c.h - h_c)
        scaled.append((x, c.mean))
    devs = []
    for i, (xi, yi) in enumerate(scaled):
        total = np.zeros(len(xi))
        count = np.zeros(len(xi), int)
        for j, (xj, yj) in enumerate(scaled):
            if j == i or len(xj) < 2:
                continue
            inside = (xi >= xj[0]) & (xi <= xj[-1])
            total[inside] += np.interp(xi[inside], xj, yj)
            count[inside] += 1
        covered = count > 0
        master = total[covered] / count[covered]
        keep = (master >= lo) & (master <= hi)
        devs.extend(((yi[covered] - master)[keep] ** 2).tolist())
    if len(devs) < min_points:
        return math.inf
    return math.fsum(devs) / len(devs)


@dataclass(frozen=True)
class CollapseResult:
    h_c: float
    nu: float
    quality: float
    h_c_err: float
    nu_err: float
    eps: float | None = None
    sizes: tuple = ()
    grid: dict = field(default_factory=dict)


def _axis(spec):
    lo, hi, step = spec
    return np.round(lo + step * np.arange(int(round((hi - lo) / step)) + 1), 10)


def _half_width(f, best, q_min, lo, hi, step, factor=2.0):
    threshold = max(factor * q_min, q_min + 1e-12)
    widths = []
    for direction in (-1, 1):
        prev_d, prev_q = 0.0, q_min
        d = step
        width = None
        while True:
            x = best + direction * d
            if x < lo - 1e-12 or x > hi + 1e-12:
                width = abs((hi if direction > 0 else lo) - best)
                break
            q = f(x)
            if q > threshold:
                if math.isfinite(q) and q != prev_q:
                    width = prev_d + (d - prev_d) * (threshold - prev_q) / (q - prev_q)
                else:
                    width = d
                break
            prev_d, prev_q = d, q
            d += step
        widths.append(width)
    out = float(max(widths))
    return out if out > 0 else step


def collapse_fit(curves, hc_grid=HC_GRID, nu_grid=NU_GRID, refine: bool = True,
                 eps: float | None = None, error_factor: float = 2.0,
                 value_band=VALUE_BAND) -> CollapseResult:
    """Grid search plus local refinement for the best ``(h_c, nu)``.

    Error half-widths are the distances from the optimum at which the quality
    first exceeds ``error_factor`` times its minimum along each axis, the other
    coordinate held at its optimum (the larger of the two sides is reported;
    a side that never crosses reports the distance to the grid edge).
    """
    curves = list(curves)
    sizes = sorted({c.n_sites for c in curves})
    if len(sizes) < 2:
        raise InvalidArgumentError(f"collapse needs at least two system sizes, got {sizes}")
    hcs, nus = _axis(hc_grid), _axis(nu_grid)
    best = (math.inf, None, None)
    for hc in hcs:  # lexicographic order gives the smallest (h_c, nu) on ties
        for nu in nus:
            q = collapse_quality(curves, hc, nu, value_band=value_band)
            if q < best[0]:
                best = (q, float(hc), float(nu))
    q_min, hc_best, nu_best = best
    if not math.isfinite(q_min):
        raise NoOverlapError("curves do not overlap in scaled coordinates anywhere on the grid")

    if refine:
        bounds = [(hcs[0], hcs[-1]), (nus[0], nus[-1])]

        def objective(p):
            q = collapse_quality(curves, p[0], p[1], value_band=value_band)
            return q if math.isfinite(q) else 1e300

        res = minimize(objective, [hc_best, nu_best], method="Nelder-Mead", bounds=bounds,
                       options={"xatol": 1e-4, "fatol": 1e-12, "maxiter": 400})
        if res.fun < q_min:
            q_min, hc_best, nu_best = float(res.fun), float(res.x[0]), float(res.x[1])

    def along_hc(v):
        return collapse_quality(curves, v, nu_best, value_band=value_band)

    def along_nu(v):
        return collapse_quality(curves, hc_best, v, value_band=value_band)

    hc_err = _half_width(along_hc, hc_best, q_min, hcs[0], hcs[-1], hc_grid[2] / 10, error_factor)
    nu_err = _half_width(along_nu, nu_best, q_min, nus[0], nus[-1], nu_grid[2] / 10, error_factor)
    return CollapseResult(
        hc_best, nu_best, q_min, hc_err, nu_err, eps, tuple(sizes),
        {"h_c": tuple(hc_grid), "nu": tuple(nu_grid), "refined": refine,
         "value_band": value_band},
    )


@dataclass(frozen=True)
class BoundaryRow:
    eps: float
    nu: float
    nu_err: float
    h_c: float
    h_c_err: float
    quality: float


BOUNDARY_COLUMNS = ("eps", "nu", "dnu", "h_c", "dh_c", "quality")


def phase_boundary(results) -> list:
    """Rows ``(eps, nu, dnu, h_c, dh_c, quality)`` sorted by eps.

    ``results`` maps eps to :class:`CollapseResult` (or is an iterable of
    results carrying ``eps``).
    """
    if isinstance(results, dict):
        items = sorted(results.items())
    else:
        items = sorted((r.eps, r) for r in results)
    return [BoundaryRow(float(e), r.nu, r.nu_err, r.h_c, r.h_c_err, r.quality) for e, r in items]


def write_boundary_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUNDARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.eps), _fmt(r.nu), _fmt(r.nu_err), _fmt(r.h_c), _fmt(r.h_c_err),
                        _fmt(r.quality)])


def read_boundary_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            BoundaryRow(*(float(row[c]) for c in BOUNDARY_COLUMNS)) for row in csv.DictReader(fh)
        ]


CURVE_COLUMNS = ("n_sites", "eps", "h", "mean", "s", "n")


def _fmt(v) -> str:
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def write_curves_csv(path, curves):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for c in sorted(curves, key=lambda c: (c.n_sites, c.eps)):
            for p in c.points:
                w.writerow([c.n_sites, _fmt(c.eps), _fmt(p.h), _fmt(p.mean), _fmt(p.std), p.n])


def read_curves_csv(path) -> dict:
    pts = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            s = float(row["s"]) if row["s"] else math.nan
            pts[(int(row["n_sites"]), float(row["eps"]))].append(
                CurvePoint(float(row["h"]), float(row["mean"]), s, int(row["n"]))
            )
    return {k: AveragedCurve(k[0], k[1], tuple(sorted(v, key=lambda p: p.h)))
            for k, v in sorted(pts.items())}


def uncertainty_width(curve: AveragedCurve, band=(0.1, 0.9)) -> float:
    """Width in h of the region around the mid-band crossing where lo < mean < hi.

    Band edges are located by linear interpolation between grid points.
    """
    lo, hi = band
    h, m = curve.h, curve.mean
    mid = 0.5 * (lo + hi)
    side = np.where(m >= mid, 1, -1)
    cross = np.nonzero(side[:-1] * side[1:] < 0)[0]
    if cross.size == 0:
        raise NotCrossedError(f"curve never crosses {mid}")
    i = int(cross[0])

    def outside(j):
        return m[j] <= lo or m[j] >= hi

    def edge(a, b, out):
        level = lo if m[out] <= lo else hi
        return h[a] + (h[b] - h[a]) * (level - m[a]) / (m[b] - m[a])

    left = next((j for j in range(i, -1, -1) if outside(j)), None)
    right = next((j for j in range(i + 1, len(m)) if outside(j)), None)
    if left is None or right is None:
        raise NotCrossedError(f"curve does not leave the band {band} on both sides")
    return float(edge(right - 1, right, right) - edge(left, left + 1, left))
