"""Adaptive regression splines with hinge pairs and GCV backward pruning.

The forward pass greedily adds reflected hinge pairs (optionally crossed
with an existing term for degree-2 interactions) to a least-squares model
on the working response; the backward pass deletes terms by generalized
cross-validation.  Upward hinge knots are the threshold candidates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .glm import GAUSSIAN, QUASIPOISSON, GlmFit, SingularDesignError, fit_glm
from .scoring import ThresholdSet


@dataclass(frozen=True)
class Hinge:
    var: int
    knot: float
    rising: bool  # (x - t)+ if True, (t - x)+ otherwise

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        col = x[:, self.var]
        return np.maximum(col - self.knot, 0.0) if self.rising else np.maximum(self.knot - col, 0.0)


@dataclass(frozen=True)
class Term:
    """Product of up to ``degree`` hinges, a bare covariate column, or the intercept."""

    hinges: tuple[Hinge, ...] = ()
    covariate: int | None = None

    @property
    def degree(self) -> int:
        return len(self.hinges)

    @property
    def variables(self) -> frozenset[int]:
        return frozenset(h.var for h in self.hinges)

    def evaluate(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        if self.covariate is not None:
            return c[:, self.covariate]
        out = np.ones(x.shape[0])
        for h in self.hinges:
            out = out * h.evaluate(x)
        return out


@dataclass(frozen=True)
class MarsConfig:
    max_terms: int = 21
    degree: int = 2
    min_span: int = 5
    min_box: int = 5

    def __post_init__(self) -> None:
        if self.max_terms < 3:
            raise ValueError("max_terms must be >= 3")
        if self.degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")


@dataclass
class MarsModel:
    terms: list[Term]
    coefficients: np.ndarray
    gcv: float

    def n_knots(self) -> int:
        return len({(h.var, h.knot) for t in self.terms for h in t.hinges})

    def basis(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        return np.column_stack([t.evaluate(x, c) for t in self.terms])

    def knots_by_variable(self, names: tuple[str, ...]) -> dict[str, dict[str, list[float]]]:
        out: dict[str, dict[str, list[float]]] = {n: {"rising": [], "falling": []} for n in names}
        for term in self.terms:
            for h in term.hinges:
                out[names[h.var]]["rising" if h.rising else "falling"].append(h.knot)
        for d in out.values():
            d["rising"] = sorted(set(d["rising"]))
            d["falling"] = sorted(set(d["falling"]))
        return out


def working_response(dataset: Dataset, family: str) -> np.ndarray:
    """Response on which knots are selected (log scale for counts)."""
    return np.log(dataset.y + 0.5) if family == QUASIPOISSON else dataset.y.astype(float)


def candidate_knots(values: np.ndarray, min_span: int) -> np.ndarray:
    """Observed values spaced min_span order statistics apart, edges excluded."""
    s = np.sort(values)
    idx = np.arange(min_span, len(s) - min_span, min_span)
    return np.unique(s[idx])


def gcv(rss: float, n: int, n_terms: int, n_knots: int) -> float:
    cost = n_terms + 3.0 * n_knots
    if cost >= n:
        return np.inf
    return (rss / n) / (1.0 - cost / n) ** 2


def _lstsq_rss(basis: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    coef, _, _, _ = np.linalg.lstsq(basis, y, rcond=None)
    resid = y - basis @ coef
    return coef, float(resid @ resid)


def forward_pass(dataset: Dataset, cfg: MarsConfig = MarsConfig(), family: str = QUASIPOISSON) -> MarsModel:
    """Grow terms greedily by largest RSS reduction of the refitted model."""
    y = working_response(dataset, family)
    n = dataset.n
    if n <= cfg.max_terms:
        raise ValueError(f"need n > max_terms, got n={n}")
    x, c = dataset.x, dataset.c
    terms: list[Term] = [Term()] + [Term(covariate=q) for q in range(c.shape[1])]
    knots = [candidate_knots(x[:, v], cfg.min_span) for v in range(dataset.p)]

    basis = np.column_stack([t.evaluate(x, c) for t in terms])
    q_mat, _ = np.linalg.qr(basis)
    resid = y - q_mat @ (q_mat.T @ y)
    rss = float(resid @ resid)
    rss0 = max(rss, 1e-300)

    while len(terms) + 2 <= cfg.max_terms:
        best = None  # (reduction, parent_idx, var, knot_idx)
        for parent_idx, parent in enumerate(terms):
            if parent.covariate is not None or parent.degree >= cfg.degree:
                continue
            parent_col = basis[:, parent_idx]
            for var in range(dataset.p):
                if var in parent.variables or knots[var].size == 0:
                    continue
                found = _best_knot(q_mat, resid, parent_col, x[:, var], knots[var])
                if found is None:
                    continue
                reduction, knot_idx = found
                if best is None or reduction > best[0] + 1e-12 * rss0:
                    best = (reduction, parent_idx, var, knot_idx)
        if best is None or best[0] < 1e-10 * rss0:
            break
        _, parent_idx, var, knot_idx = best
        knot = float(knots[var][knot_idx])
        parent = terms[parent_idx]
        for rising in (True, False):
            terms.append(Term(hinges=parent.hinges + (Hinge(var, knot, rising),)))
        basis = np.column_stack([t.evaluate(x, c) for t in terms])
        q_mat, r_mat = np.linalg.qr(basis)
        resid = y - q_mat @ (q_mat.T @ y)
        rss = float(resid @ resid)

    coef, rss = _lstsq_rss(basis, y)
    model = MarsModel(terms=terms, coefficients=coef, gcv=np.nan)
    model.gcv = gcv(rss, n, len(terms), model.n_knots())
    return model


def _best_knot(
    q_mat: np.ndarray,
    resid: np.ndarray,
    parent_col: np.ndarray,
    values: np.ndarray,
    knots: np.ndarray,
) -> tuple[float, int] | None:
    """RSS reduction of the best reflected pair parent*(x-t)+, parent*(t-x)+.

    Vectorized over all candidate knots: both columns are residualized
    against the current orthonormal basis, and the joint two-column gain
    is solved in closed form per knot.  Rank-deficient pairs are skipped.
    """
    up = parent_col[:, None] * np.maximum(values[:, None] - knots[None, :], 0.0)
    dn = parent_col[:, None] * np.maximum(knots[None, :] - values[:, None], 0.0)
    scale = float(np.sum(parent_col**2) * (np.max(np.abs(values)) + 1.0) ** 2) + 1e-300

    up -= q_mat @ (q_mat.T @ up)
    dn -= q_mat @ (q_mat.T @ dn)
    aa = np.einsum("ij,ij->j", up, up)
    bb = np.einsum("ij,ij->j", dn, dn)
    ab = np.einsum("ij,ij->j", up, dn)
    ar = up.T @ resid
    br = dn.T @ resid

    det = aa * bb - ab**2
    ok = det > 1e-10 * scale * scale
    if not ok.any():
        return None
    reduction = np.where(ok, (bb * ar**2 - 2.0 * ab * ar * br + aa * br**2) / np.where(ok, det, 1.0), -np.inf)
    idx = int(np.argmax(reduction))  # ties resolve to the lowest knot
    if not np.isfinite(reduction[idx]) or reduction[idx] <= 0:
        return None
    return float(reduction[idx]), idx


def backward_pass(model: MarsModel, dataset: Dataset, cfg: MarsConfig = MarsConfig(), family: str = QUASIPOISSON) -> MarsModel:
    """Delete hinge terms one at a time, keeping the GCV-best visited model."""
    y = working_response(dataset, family)
    x, c = dataset.x, dataset.c
    n = dataset.n

    def fitted(terms: list[Term]) -> MarsModel:
        basis = np.column_stack([t.evaluate(x, c) for t in terms])
        coef, rss = _lstsq_rss(basis, y)
        m = MarsModel(terms=list(terms), coefficients=coef, gcv=np.nan)
        m.gcv = gcv(rss, n, len(terms), m.n_knots())
        return m

    current = fitted(model.terms)
    best = current
    while True:
        removable = [i for i, t in enumerate(current.terms) if t.degree > 0]
        if not removable:
            break
        trial_models = []
        for i in removable:
            trial = fitted([t for j, t in enumerate(current.terms) if j != i])
            trial_models.append(trial)
        pick = int(np.argmin([m.gcv for m in trial_models]))
        current = trial_models[pick]
        if current.gcv < best.gcv:
            best = current
    return best


def refit_response(model: MarsModel, dataset: Dataset, family: str = QUASIPOISSON) -> GlmFit:
    """Refit the selected basis on the count scale (or Gaussian) by IRLS.

    The term set is preserved; on rank loss the latest-added offending
    hinge terms are dropped one at a time until the fit succeeds.
    """
    terms = list(model.terms)
    while True:
        basis = np.column_stack([t.evaluate(dataset.x, dataset.c) for t in terms])
        try:
            return fit_glm(basis, dataset.y, family)
        except SingularDesignError:
            hinge_idx = [i for i, t in enumerate(terms) if t.degree > 0]
            if not hinge_idx:
                raise
            del terms[hinge_idx[-1]]


def extract_thresholds_mars(
    model: MarsModel,
    dataset: Dataset,
    cfg: MarsConfig = MarsConfig(),
) -> ThresholdSet:
    """Extreme upward knots per variable, with an occupancy fallback.

    The first proposal takes each selected variable's largest upward knot.
    If fewer than min_box observations exceed all proposed bounds, every
    combination over the descending knot grids is searched for the highest
    mean response among joint exceedances with occupancy >= min_box.
    Variables with no upward knot are not selected; when even the lowest
    knots cannot reach min_box jointly, the variable with the fewest knots
    is dropped and the result flagged.
    """
    per_var: dict[int, list[float]] = {}
    for term in model.terms:
        for h in term.hinges:
            if h.rising:
                per_var.setdefault(h.var, [])
                if h.knot not in per_var[h.var]:
                    per_var[h.var].append(h.knot)
    for v in per_var:
        per_var[v] = sorted(per_var[v], reverse=True)

    names = dataset.names
    relaxed = False
    active = sorted(per_var)
    while active:
        chosen = _occupancy_search(dataset, {v: per_var[v] for v in active}, cfg.min_box)
        if chosen is not None:
            bounds = {name: None for name in names}
            for v, t in chosen.items():
                bounds[names[v]] = float(t)
            return ThresholdSet(bounds=bounds, provenance="mars", relaxed=relaxed)
        drop = min(active, key=lambda v: len(per_var[v]))
        active.remove(drop)
        relaxed = True
    return ThresholdSet(bounds={name: None for name in names}, provenance="mars", relaxed=relaxed)


def _occupancy_search(dataset: Dataset, grids: dict[int, list[float]], min_box: int) -> dict[int, float] | None:
    """Best knot combination by mean response among feasible occupancies.

    The maximal-knot proposal wins outright when feasible; otherwise all
    combinations are enumerated (grids are small).  Deterministic: on mean
    ties the earlier combination in lexicographic grid order is kept.
    """
    variables = sorted(grids)
    top = {v: grids[v][0] for v in variables}
    if _occupancy(dataset, top) >= min_box:
        return top
    best: tuple[float, dict[int, float]] | None = None
    for combo in itertools.product(*(grids[v] for v in variables)):
        bounds = dict(zip(variables, combo))
        mask = np.ones(dataset.n, dtype=bool)
        for v, t in bounds.items():
            mask &= dataset.x[:, v] >= t
        if int(mask.sum()) < min_box:
            continue
        mean_y = float(dataset.y[mask].mean())
        if best is None or mean_y > best[0]:
            best = (mean_y, bounds)
    return None if best is None else best[1]


def _occupancy(dataset: Dataset, bounds: dict[int, float]) -> int:
    mask = np.ones(dataset.n, dtype=bool)
    for v, t in bounds.items():
        mask &= dataset.x[:, v] >= t
    return int(mask.sum())


def fit_mars(dataset: Dataset, cfg: MarsConfig = MarsConfig(), family: str = QUASIPOISSON) -> ThresholdSet:
    """Forward, backward, and threshold extraction in one call."""
    model = backward_pass(forward_pass(dataset, cfg, family), dataset, cfg, family)
    return extract_thresholds_mars(model, dataset, cfg)
