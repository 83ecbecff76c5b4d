"""Additive binary-rule index models.

Rules of the form 1(x_j >= t) are added greedily to maximize the squared
t-statistic of the index slope on the covariate-adjusted response; the
rule count is picked by contiguous-block cross-validation and the extreme
cut per variable becomes its threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .scoring import ThresholdSet


@dataclass(frozen=True)
class AimConfig:
    max_splits_per_var: int = 3
    folds: int = 5

    def __post_init__(self) -> None:
        if self.max_splits_per_var < 1:
            raise ValueError("max_splits_per_var must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


@dataclass
class AimModel:
    rules: tuple[tuple[int, float], ...]  # (variable, cut)
    beta0: float
    beta1: float
    k: int


def gaussian_working_response(dataset: Dataset) -> np.ndarray:
    """Residuals of a Gaussian regression of the response on the covariates."""
    design = np.column_stack([np.ones(dataset.n), dataset.c])
    coef, *_ = np.linalg.lstsq(design, dataset.y, rcond=None)
    return dataset.y - design @ coef


def rule_index(x: np.ndarray, rules: tuple[tuple[int, float], ...]) -> np.ndarray:
    """Count of satisfied exceedance rules per row (integer valued in [0, K])."""
    idx = np.zeros(x.shape[0])
    for var, cut in rules:
        idx += x[:, var] >= cut
    return idx


def _slope_fit(index: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    vi = index.var()
    if vi <= 0:
        return float(w.mean()), 0.0
    b1 = float(np.cov(index, w, bias=True)[0, 1] / vi)
    b0 = float(w.mean() - b1 * index.mean())
    return b0, b1


def _best_rule(
    x: np.ndarray,
    w: np.ndarray,
    base_index: np.ndarray,
    allowed_vars: list[int],
) -> tuple[float, int, float] | None:
    """(t^2, variable, cut) of the best single rule added to the index.

    For each variable, every observed unique value is a candidate cut;
    suffix sums over the sorted order give all squared t-statistics at
    once.  Ties resolve to the lowest variable index, then lowest cut.
    """
    n = len(w)
    w_c = w - w.mean()
    u_c = base_index - base_index.mean()
    var_w = float(w_c @ w_c) / n
    var_u = float(u_c @ u_c) / n
    cov_uw = float(u_c @ w_c) / n
    if var_w <= 0:
        return None
    best = None
    for var in allowed_vars:
        order = np.argsort(x[:, var], kind="stable")
        xv = x[order, var]
        starts = np.concatenate([[0], np.nonzero(np.diff(xv))[0] + 1])
        cuts = xv[starts]
        # suffix aggregates for the indicator d = 1(x >= cut)
        sw = np.cumsum(w_c[order][::-1])[::-1][starts] / n
        su = np.cumsum(u_c[order][::-1])[::-1][starts] / n
        m = (n - starts) / n
        var_d = m * (1.0 - m)
        cov_dw = sw  # E[d w_c]; w_c centered so no mean correction needed
        cov_du = su
        var_idx = var_u + var_d + 2.0 * cov_du
        cov_idx = cov_uw + cov_dw
        with np.errstate(divide="ignore", invalid="ignore"):
            rho2 = np.where(var_idx > 1e-12, cov_idx**2 / (var_idx * var_w), 0.0)
        rho2 = np.clip(rho2, 0.0, 1.0 - 1e-12)
        tstat2 = (n - 2) * rho2 / (1.0 - rho2)
        i = int(np.argmax(tstat2))
        if tstat2[i] <= 0:
            continue
        if best is None or tstat2[i] > best[0] + 1e-12:
            best = (float(tstat2[i]), var, float(cuts[i]))
    return best


def fit_aim_path(dataset: Dataset, cfg: AimConfig = AimConfig()) -> list[AimModel]:
    """Greedy rule path for K = 1..max_splits_per_var * p.

    Returns an empty list when no cut carries any signal (degenerate
    response).
    """
    w = gaussian_working_response(dataset)
    return _path(dataset.x, w, cfg)


def _path(x: np.ndarray, w: np.ndarray, cfg: AimConfig) -> list[AimModel]:
    p = x.shape[1]
    k_max = cfg.max_splits_per_var * p
    counts = np.zeros(p, dtype=int)
    rules: tuple[tuple[int, float], ...] = ()
    index = np.zeros(x.shape[0])
    path: list[AimModel] = []
    for _ in range(k_max):
        allowed = [v for v in range(p) if counts[v] < cfg.max_splits_per_var]
        found = _best_rule(x, w, index, allowed)
        if found is None:
            break
        _, var, cut = found
        counts[var] += 1
        rules = rules + ((var, cut),)
        index = index + (x[:, var] >= cut)
        b0, b1 = _slope_fit(index, w)
        path.append(AimModel(rules=rules, beta0=b0, beta1=b1, k=len(rules)))
    return path


def select_k_cv(dataset: Dataset, cfg: AimConfig = AimConfig()) -> AimModel | None:
    """Pick the rule count by K-fold CV on contiguous time blocks.

    Folds are contiguous to respect the time ordering.  The chosen K
    minimizes mean held-out squared error (ties to the smallest K); the
    returned model is the full-data path truncated at that K.  None marks
    a degenerate path.
    """
    full_path = fit_aim_path(dataset, cfg)
    if not full_path:
        return None
    n = dataset.n
    folds = np.array_split(np.arange(n), cfg.folds)
    k_max = len(full_path)
    errors = np.full((cfg.folds, k_max), np.nan)
    for f, test_idx in enumerate(folds):
        if len(test_idx) == 0:
            continue
        train_mask = np.ones(n, dtype=bool)
        train_mask[test_idx] = False
        design = np.column_stack([np.ones(n), dataset.c])
        coef, *_ = np.linalg.lstsq(design[train_mask], dataset.y[train_mask], rcond=None)
        w_train = dataset.y[train_mask] - design[train_mask] @ coef
        w_test = dataset.y[test_idx] - design[test_idx] @ coef
        fold_path = _path(dataset.x[train_mask], w_train, cfg)
        for k in range(1, k_max + 1):
            if not fold_path:
                errors[f, k - 1] = float(np.mean(w_test**2))
                continue
            model = fold_path[min(k, len(fold_path)) - 1]
            pred = model.beta0 + model.beta1 * rule_index(dataset.x[test_idx], model.rules)
            errors[f, k - 1] = float(np.mean((w_test - pred) ** 2))
    mean_err = np.nanmean(errors, axis=0)
    k_star = int(np.argmin(mean_err)) + 1  # argmin ties -> smallest K
    return full_path[k_star - 1]


def extract_thresholds_aim(model: AimModel, names: tuple[str, ...]) -> ThresholdSet:
    """Largest cut per variable; variables with no rule are not selected."""
    bounds: dict[str, float | None] = {name: None for name in names}
    for var, cut in model.rules:
        name = names[var]
        if bounds[name] is None or cut > bounds[name]:
            bounds[name] = float(cut)
    return ThresholdSet(bounds=bounds, provenance="aim")


def fit_aim(dataset: Dataset, cfg: AimConfig = AimConfig()) -> ThresholdSet:
    model = select_k_cv(dataset, cfg)
    if model is None:
        return ThresholdSet(bounds={name: None for name in dataset.names}, provenance="aim")
    return extract_thresholds_aim(model, dataset.names)
