"""Box peeling with a regression-slope objective.

The box is defined by per-indicator lower bounds.  At each step the
alpha-quantile sliver of one variable is peeled off so that the indicator
slope of the model refitted inside the box increases the most; the final
box is the step with the largest slope increase per support removed, and
its bounds are the thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .glm import QUASIPOISSON, SingularDesignError, fit_glm
from .scoring import ThresholdSet


@dataclass(frozen=True)
class PrimConfig:
    alpha: float = 0.05
    phi0: float | None = None  # min support; None = 5/n
    paste: bool = True
    paste_alpha: float = 0.01
    model_vars: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.phi0 is not None and not 0.0 < self.phi0 < 1.0:
            raise ValueError("phi0 must be in (0, 1)")


@dataclass
class Box:
    """Lower bounds per indicator; -inf means unconstrained."""

    lower: np.ndarray
    members: np.ndarray

    def copy(self) -> "Box":
        return Box(self.lower.copy(), self.members.copy())


@dataclass
class PeelStep:
    lower: np.ndarray
    support: float
    slope: float
    peeled_var: int | None
    peeled_count: int


@dataclass
class PeelingTrajectory:
    steps: list[PeelStep]
    names: tuple[str, ...]
    truncated: bool = False  # all candidates failed before reaching phi0

    @property
    def supports(self) -> np.ndarray:
        return np.array([s.support for s in self.steps])

    @property
    def slopes(self) -> np.ndarray:
        return np.array([s.slope for s in self.steps])

    def rates(self) -> np.ndarray:
        """Slope increase per support removed, Eq-style, for steps 1..K."""
        phi = self.supports
        beta = self.slopes
        return np.diff(beta) / -np.diff(phi)


def _box_slope(dataset: Dataset, members: np.ndarray, model_vars, family: str) -> float | None:
    cols = list(model_vars) if model_vars is not None else list(range(dataset.p))
    ind = dataset.x[members][:, cols].mean(axis=1)
    design = np.column_stack([np.ones(len(members)), ind, dataset.c[members]])
    try:
        fit = fit_glm(design, dataset.y[members], family)
    except (SingularDesignError, ValueError):
        return None
    return float(fit.coefficients[1])


def _peel_candidate(values: np.ndarray, alpha: float) -> float | None:
    """New lower bound after removing the bottom alpha sliver.

    All rows strictly below the bound go; the bound is the smallest
    retained value, so with ties the removed count can exceed
    ceil(alpha * m).  Returns None when no row can be removed.
    """
    m = len(values)
    k = int(np.ceil(alpha * m))
    if k >= m:
        return None
    cutoff = np.partition(values, k - 1)[k - 1]
    above = values[values > cutoff]
    if above.size == 0:
        return None
    return float(above.min())


def peel(dataset: Dataset, cfg: PrimConfig = PrimConfig(), family: str = QUASIPOISSON) -> PeelingTrajectory:
    """Left-peel the full-data box until support falls to the floor."""
    n = dataset.n
    phi0 = max(5.0 / n, cfg.phi0 if cfg.phi0 is not None else 5.0 / n)
    members = np.arange(n)
    lower = np.full(dataset.p, -np.inf)
    slope0 = _box_slope(dataset, members, cfg.model_vars, family)
    if slope0 is None:
        raise SingularDesignError("box model could not be fitted on the full data")
    steps = [PeelStep(lower.copy(), 1.0, slope0, None, 0)]
    truncated = False

    while True:
        best = None
        for var in range(dataset.p):
            bound = _peel_candidate(dataset.x[members, var], cfg.alpha)
            if bound is None:
                continue
            keep = dataset.x[members, var] >= bound
            if not keep.any():
                continue
            cand_members = members[keep]
            slope = _box_slope(dataset, cand_members, cfg.model_vars, family)
            if slope is None:
                continue
            if best is None or slope > best[0]:
                best = (slope, var, bound, cand_members)
        if best is None:
            truncated = len(members) / n > phi0
            break
        slope, var, bound, cand_members = best
        support = len(cand_members) / n
        if support < phi0:
            break
        removed = len(members) - len(cand_members)
        members = cand_members
        lower = lower.copy()
        lower[var] = bound
        steps.append(PeelStep(lower, support, slope, var, removed))

    return PeelingTrajectory(steps=steps, names=dataset.names, truncated=truncated)


def select_box(traj: PeelingTrajectory) -> ThresholdSet:
    """Pick the step with the largest slope increase per support removed.

    Ties resolve to the earliest step (largest box).  Bounds still at
    -inf mean the variable was never peeled and is not selected.
    """
    if len(traj.steps) < 2:
        raise ValueError("trajectory needs at least two steps")
    phi = traj.supports
    if np.any(np.diff(phi) >= 0):
        raise ValueError("supports must strictly decrease")
    rates = traj.rates()
    best = int(np.argmax(rates)) + 1
    lower = traj.steps[best].lower
    bounds = {
        name: (float(lower[i]) if np.isfinite(lower[i]) else None)
        for i, name in enumerate(traj.names)
    }
    return ThresholdSet(bounds=bounds, provenance="prim")


def members_of(dataset: Dataset, lower: np.ndarray) -> np.ndarray:
    mask = np.ones(dataset.n, dtype=bool)
    for j in range(dataset.p):
        if np.isfinite(lower[j]):
            mask &= dataset.x[:, j] >= lower[j]
    return np.nonzero(mask)[0]


def paste(
    box_lower: np.ndarray,
    dataset: Dataset,
    cfg: PrimConfig = PrimConfig(),
    family: str = QUASIPOISSON,
) -> np.ndarray:
    """Expand bounds downward while the in-box slope strictly increases.

    One move lowers a single bound far enough to admit about
    paste_alpha * n_box additional observations; the best strictly
    improving move is taken, repeatedly, until none improves.
    """
    lower = np.asarray(box_lower, dtype=float).copy()
    while True:
        members = members_of(dataset, lower)
        current = _box_slope(dataset, members, cfg.model_vars, family)
        if current is None:
            return lower
        n_box = len(members)
        step = max(1, int(np.ceil(cfg.paste_alpha * n_box)))
        best = None
        for var in range(dataset.p):
            if not np.isfinite(lower[var]):
                continue
            other = np.ones(dataset.n, dtype=bool)
            for j in range(dataset.p):
                if j != var and np.isfinite(lower[j]):
                    other &= dataset.x[:, j] >= lower[j]
            excluded = np.nonzero(other & (dataset.x[:, var] < lower[var]))[0]
            if excluded.size == 0:
                continue
            vals = dataset.x[excluded, var]
            take = min(step, vals.size)
            new_bound = float(np.sort(vals)[-take])
            cand = lower.copy()
            cand[var] = new_bound
            slope = _box_slope(dataset, members_of(dataset, cand), cfg.model_vars, family)
            if slope is None or slope <= current:
                continue
            if best is None or slope > best[0]:
                best = (slope, cand)
        if best is None:
            return lower
        lower = best[1]


def fit_prim(dataset: Dataset, cfg: PrimConfig = PrimConfig(), family: str = QUASIPOISSON) -> ThresholdSet:
    """Peel, select by the rate criterion, then optionally paste."""
    traj = peel(dataset, cfg, family)
    thresholds = select_box(traj)
    if cfg.paste:
        lower = np.array(
            [thresholds.bounds[name] if thresholds.bounds[name] is not None else -np.inf for name in dataset.names]
        )
        pasted = paste(lower, dataset, cfg, family)
        thresholds = ThresholdSet(
            bounds={
                name: (float(pasted[i]) if np.isfinite(pasted[i]) else None)
                for i, name in enumerate(dataset.names)
            },
            provenance="prim",
        )
    return thresholds
