"""Benchmark threshold methods: segmented regression and the curve-CI rule.

Segmented regression seeds many breakpoints per indicator and iterates the
standard linearization update, discarding non-admissible breakpoints as it
goes.  The curve-CI rule fits an additive spline exposure-response curve
and takes the lowest point above the curve minimum whose lower confidence
bound clears zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.stats

from .dataset import Dataset, NaturalSplineBasis
from .glm import QUASIPOISSON, SingularDesignError, fit_glm
from .scoring import ThresholdSet


@dataclass
class SegmentedFit:
    """Surviving breakpoints and per-segment slopes per indicator."""

    breakpoints: list[np.ndarray]
    slopes: list[np.ndarray]
    converged: bool


@dataclass
class CurveCI:
    """Relative exposure-response curve with pointwise bounds for one indicator."""

    name: str
    grid: np.ndarray
    estimate: np.ndarray  # f(x) - f(mmt)
    lower: np.ndarray
    upper: np.ndarray
    mmt: float
    threshold: float | None


def _segmented_design(
    x: np.ndarray, c: np.ndarray, psi: list[np.ndarray]
) -> tuple[np.ndarray, list[tuple[int, float, int, int]]]:
    """Design [1, x_j..., U_jb..., V_jb..., C] with (var, point, U-col, V-col) map."""
    n, p = x.shape
    cols = [np.ones(n)]
    cols.extend(x[:, j] for j in range(p))
    u_cols, v_cols, table = [], [], []
    for j in range(p):
        for point in psi[j]:
            u_cols.append(np.maximum(x[:, j] - point, 0.0))
            v_cols.append(-(x[:, j] > point).astype(float))
            table.append((j, float(point)))
    k_u = 1 + p
    k_v = k_u + len(u_cols)
    index = [(j, point, k_u + i, k_v + i) for i, (j, point) in enumerate(table)]
    parts = cols + u_cols + v_cols + ([c] if c.size else [])
    return np.column_stack(parts), index


def fit_segmented_model(
    dataset: Dataset,
    init_count: int = 10,
    family: str = QUASIPOISSON,
    max_iter: int = 50,
    t_min: float = 1.0,
) -> SegmentedFit:
    """Iterative breakpoint estimation with non-admissibility pruning.

    Breakpoints start at equal quantiles.  Each iteration refits the
    linearized model and moves every breakpoint by (gap coef)/(hinge coef);
    breakpoints leaving the open data range, colliding with a neighbour,
    or whose hinge coefficient has |t| below ``t_min`` are discarded.
    """
    x, c = dataset.x, dataset.c
    p = dataset.p
    ranges = [(float(x[:, j].min()), float(x[:, j].max())) for j in range(p)]
    psi = [
        np.unique(np.quantile(x[:, j], (np.arange(init_count) + 1.0) / (init_count + 1.0)))
        for j in range(p)
    ]
    converged = False
    for _ in range(max_iter):
        if all(len(ps) == 0 for ps in psi):
            converged = True
            break
        design, index = _segmented_design(x, c, psi)
        try:
            fit = fit_glm(design, dataset.y, family)
        except (SingularDesignError, ValueError):
            psi = [_dedupe(ps, rng) for ps, rng in zip(psi, ranges)]
            psi = [ps[:-1] if len(ps) > 0 else ps for ps in psi]
            continue
        se = fit.se()
        new_psi: list[list[float]] = [[] for _ in range(p)]
        max_shift = 0.0
        for j, old, ku, kv in index:
            beta_u = fit.coefficients[ku]
            gamma_v = fit.coefficients[kv]
            if abs(beta_u) < 1e-8:
                continue  # slope change vanished; breakpoint cannot be located
            t_u = abs(beta_u) / max(se[ku], 1e-300)
            if t_u < t_min:
                continue
            shift = gamma_v / beta_u
            new = old + shift
            lo, hi = ranges[j]
            if not lo < new < hi:
                continue
            max_shift = max(max_shift, abs(shift) / max(hi - lo, 1e-300))
            new_psi[j].append(new)
        psi = [
            _dedupe(np.sort(np.asarray(vals)), rng) for vals, rng in zip(new_psi, ranges)
        ]
        if max_shift < 1e-4:
            converged = True
            break

    slopes = _segment_slopes(dataset, psi, family)
    return SegmentedFit(breakpoints=[np.asarray(ps, dtype=float) for ps in psi], slopes=slopes, converged=converged)


def _dedupe(points: np.ndarray, rng: tuple[float, float]) -> np.ndarray:
    """Sort, clip to the open range, and drop near-collisions (crossings)."""
    lo, hi = rng
    pts = np.sort(points[(points > lo) & (points < hi)])
    if pts.size <= 1:
        return pts
    tol = 1e-8 * (hi - lo)
    keep = np.concatenate([[True], np.diff(pts) > tol])
    return pts[keep]


def _segment_slopes(dataset: Dataset, psi: list[np.ndarray], family: str) -> list[np.ndarray]:
    design, index = _segmented_design(dataset.x, dataset.c, psi)
    try:
        fit = fit_glm(design, dataset.y, family)
    except (SingularDesignError, ValueError):
        return [np.array([]) for _ in range(dataset.p)]
    out = []
    for j in range(dataset.p):
        base = fit.coefficients[1 + j]
        deltas = [fit.coefficients[ku] for (jj, _, ku, _) in index if jj == j]
        out.append(base + np.concatenate([[0.0], np.cumsum(deltas)]))
    return out


def fit_segmented(
    dataset: Dataset,
    init_count: int = 10,
    family: str = QUASIPOISSON,
) -> ThresholdSet:
    """Largest surviving breakpoint per indicator (none -> not selected)."""
    seg = fit_segmented_model(dataset, init_count=init_count, family=family)
    bounds = {
        name: (float(seg.breakpoints[j].max()) if seg.breakpoints[j].size else None)
        for j, name in enumerate(dataset.names)
    }
    return ThresholdSet(bounds=bounds, provenance="segmented")


def exposure_curves(
    dataset: Dataset,
    df: int = 4,
    family: str = QUASIPOISSON,
    level: float = 0.95,
    grid_size: int = 100,
) -> list[CurveCI]:
    """Additive spline fit with per-indicator relative curves and CI bounds.

    The threshold for an indicator is the lowest grid point above the
    curve minimum where the lower pointwise bound of f(x) - f(mmt) is
    positive (delta-method variance, dispersion-scaled).
    """
    x, c = dataset.x, dataset.c
    bases = [NaturalSplineBasis.from_data(x[:, j], df) for j in range(dataset.p)]
    blocks = [b.transform(x[:, j]) for j, b in enumerate(bases)]
    design = np.column_stack([np.ones(dataset.n), *blocks, c])
    fit = fit_glm(design, dataset.y, family)

    z = scipy.stats.norm.ppf(0.5 * (1.0 + level))
    out = []
    offset = 1
    for j, basis in enumerate(bases):
        width = blocks[j].shape[1]
        sl = slice(offset, offset + width)
        offset += width
        grid = np.linspace(x[:, j].min(), x[:, j].max(), grid_size)
        bg = basis.transform(grid)
        curve = bg @ fit.coefficients[sl]
        if curve.max() - curve.min() < 1e-8:
            out.append(CurveCI(dataset.names[j], grid, curve * 0.0, curve * 0.0, curve * 0.0, float(grid[0]), None))
            continue
        i_min = int(np.argmin(curve))
        diff = bg - bg[i_min]
        est = curve - curve[i_min]
        cov = fit.cov[sl, sl]
        var = np.einsum("ij,jk,ik->i", diff, cov, diff)
        se = np.sqrt(np.maximum(var, 0.0))
        lower, upper = est - z * se, est + z * se
        thr = None
        above = np.nonzero((grid > grid[i_min]) & (lower > 0.0))[0]
        if above.size:
            thr = float(grid[above[0]])
        out.append(CurveCI(dataset.names[j], grid, est, lower, upper, float(grid[i_min]), thr))
    return out


def curve_ci_threshold(dataset: Dataset, df: int = 4, family: str = QUASIPOISSON, level: float = 0.95) -> ThresholdSet:
    curves = exposure_curves(dataset, df=df, family=family, level=level)
    return ThresholdSet(
        bounds={c.name: c.threshold for c in curves},
        provenance="gamci",
    )
