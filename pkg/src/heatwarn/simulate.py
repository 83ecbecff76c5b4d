"""Simulation study, scenario calibration, and bootstrap machinery.

Synthetic data follow a linear model in the indicators plus an extra
slope on the summed excesses where every indicator clears its threshold.
Thresholds are calibrated so the joint-exceedance rate hits a target;
each method is run over many replicates and scored against the true
extreme days.  Real datasets are resampled by whole years.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator

import numpy as np
import pandas as pd
import scipy.stats

from . import aim, benchmarks, mars, mob, prim
from .dataset import Dataset
from .glm import GAUSSIAN, QUASIPOISSON
from .scoring import ThresholdSet, alerts, confusion_scores

CALIBRATION_SEED = 191123
CALIBRATION_DRAWS = 1_000_000
CALIBRATION_TOL = 5e-4


@dataclass(frozen=True)
class Scenario:
    p: int
    beta2: float
    rho: float = 0.0
    n: int = 1000
    beta1: float = 1.0
    noise_sd: float = 1.0
    target_exceedance: float = 0.015

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.p > 1 and not -1.0 / (self.p - 1) < self.rho < 1.0:
            raise ValueError("equicorrelation matrix is not positive definite")
        if not 0.0 < self.target_exceedance < 1.0:
            raise ValueError("target_exceedance must be in (0, 1)")

    @property
    def label(self) -> str:
        return f"p{self.p}_b{self.beta2:g}_r{self.rho:g}"


def paper_grid() -> list[Scenario]:
    """Full factorial grid: p in 1..4, five slope magnitudes, two correlations."""
    return [
        Scenario(p=p, beta2=b2, rho=rho)
        for p in (1, 2, 3, 4)
        for b2 in (0.1, 0.2, 0.3, 0.5, 1.0)
        for rho in (0.0, 0.5)
    ]


def acceptance_grid() -> list[Scenario]:
    """Reduced grid used by the acceptance suite."""
    return [
        Scenario(p=p, beta2=b2, rho=rho)
        for p in (1, 2)
        for b2 in (0.1, 1.0)
        for rho in (0.0, 0.5)
    ]


@dataclass
class SimReplicate:
    dataset: Dataset
    thresholds: np.ndarray
    truth: np.ndarray


@lru_cache(maxsize=None)
def calibrate_thresholds(p: int, rho: float, target: float = 0.015) -> float:
    """Common per-variable bound with joint exceedance equal to the target.

    Closed forms cover p = 1 and independent variables; otherwise the
    bound is bisected against a fixed Monte Carlo sample of row minima
    until the exceedance probability is within tolerance.
    """
    if p == 1:
        return float(scipy.stats.norm.ppf(1.0 - target))
    if rho == 0.0:
        return float(scipy.stats.norm.ppf(1.0 - target ** (1.0 / p)))
    rng = np.random.default_rng([CALIBRATION_SEED, p])
    z = rng.standard_normal((CALIBRATION_DRAWS, p)) @ _chol(p, rho).T
    row_min = z.min(axis=1)
    lo, hi = 0.0, float(scipy.stats.norm.ppf(1.0 - target))
    prob = lambda s: float(np.mean(row_min >= s))  # noqa: E731
    if prob(lo) < target or prob(hi) > target:
        raise ValueError("bisection bracket does not contain the target")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        pm = prob(mid)
        if abs(pm - target) <= CALIBRATION_TOL:
            return mid
        if pm > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9:
            break
    return 0.5 * (lo + hi)


def _chol(p: int, rho: float) -> np.ndarray:
    cov = np.full((p, p), rho)
    np.fill_diagonal(cov, 1.0)
    return np.linalg.cholesky(cov)


def generate(scenario: Scenario, seed) -> SimReplicate:
    """One synthetic replicate; identical seeds give identical data."""
    rng = np.random.default_rng(seed)
    s = calibrate_thresholds(scenario.p, scenario.rho, scenario.target_exceedance)
    x = rng.standard_normal((scenario.n, scenario.p))
    if scenario.p > 1 and scenario.rho != 0.0:
        x = x @ _chol(scenario.p, scenario.rho).T
    truth = np.all(x >= s, axis=1)
    excess = np.where(truth, (x - s).sum(axis=1), 0.0)
    y = scenario.beta1 * x.sum(axis=1) + scenario.beta2 * excess
    y = y + scenario.noise_sd * rng.standard_normal(scenario.n)
    dates = np.datetime64("2000-01-01") + np.arange(scenario.n)
    names = tuple(f"x{j + 1}" for j in range(scenario.p))
    dataset = Dataset(dates, y, x, np.empty((scenario.n, 0)), names)
    return SimReplicate(dataset=dataset, thresholds=np.full(scenario.p, s), truth=truth)


MethodFn = Callable[[Dataset, str], ThresholdSet]


def _run_mob(dataset: Dataset, family: str) -> ThresholdSet:
    return mob.extract_thresholds(mob.grow(dataset, mob.MobConfig(), family))


def _run_mars(dataset: Dataset, family: str) -> ThresholdSet:
    return mars.fit_mars(dataset, mars.MarsConfig(), family)


def _run_prim(dataset: Dataset, family: str) -> ThresholdSet:
    return prim.fit_prim(dataset, prim.PrimConfig(), family)


def _run_aim(dataset: Dataset, family: str) -> ThresholdSet:
    return aim.fit_aim(dataset, aim.AimConfig())


def _run_segmented(dataset: Dataset, family: str) -> ThresholdSet:
    return benchmarks.fit_segmented(dataset, family=family)


def _run_gamci(dataset: Dataset, family: str) -> ThresholdSet:
    return benchmarks.curve_ci_threshold(dataset, family=family)


METHODS: dict[str, MethodFn] = {
    "mob": _run_mob,
    "mars": _run_mars,
    "prim": _run_prim,
    "aim": _run_aim,
    "segmented": _run_segmented,
    "gamci": _run_gamci,
}

SCORE_COLUMNS = [
    "scenario_id",
    "p",
    "beta2",
    "rho",
    "method",
    "replicate",
    "sensitivity",
    "precision",
    "f_score",
    "status",
]


def _score_replicate(rep: SimReplicate, thresholds: ThresholdSet) -> tuple[float, float, float, str]:
    if not thresholds.any_selected:
        sc = confusion_scores(np.zeros(rep.dataset.n, dtype=bool), rep.truth)
        return sc.sensitivity, sc.precision, sc.f_score, "no_selection"
    sc = confusion_scores(alerts(rep.dataset, thresholds), rep.truth)
    return sc.sensitivity, sc.precision, sc.f_score, "ok"


def _run_one(args) -> list[tuple]:
    scenario_idx, scenario, replicate, methods, seed = args
    rep = generate(scenario, np.random.SeedSequence([seed, scenario_idx, replicate]))
    rows = []
    for name in methods:
        try:
            thresholds = METHODS[name](rep.dataset, GAUSSIAN)
            sens, prec, f, status = _score_replicate(rep, thresholds)
        except Exception:
            sens = prec = f = float("nan")
            status = "error"
        rows.append(
            (
                scenario.label,
                scenario.p,
                scenario.beta2,
                scenario.rho,
                name,
                replicate,
                sens,
                prec,
                f,
                status,
            )
        )
    return rows


def run_study(
    scenarios: list[Scenario],
    b: int,
    methods: list[str],
    seed: int,
    workers: int = 1,
) -> pd.DataFrame:
    """Score every method on every scenario over b replicates.

    Replicate data depend only on (seed, scenario index, replicate index),
    and rows are emitted in a fixed order, so results are identical for
    any worker count.
    """
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise KeyError(f"unknown methods {unknown}; available: {sorted(METHODS)}")
    tasks = [
        (si, scenario, r, tuple(methods), seed)
        for si, scenario in enumerate(scenarios)
        for r in range(b)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_one, tasks, chunksize=8))
    else:
        chunks = [_run_one(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    return pd.DataFrame(rows, columns=SCORE_COLUMNS)


def summarize_scores(scores: pd.DataFrame) -> pd.DataFrame:
    """Per scenario and method: mean and central 95% interval of the F-score.

    Error replicates are excluded (missing, not zero); no-selection
    replicates count as scored.
    """
    rows = []
    for (label, p, beta2, rho, method), grp in scores.groupby(
        ["scenario_id", "p", "beta2", "rho", "method"], sort=True
    ):
        scored = grp[grp["status"] != "error"]
        f = scored["f_score"].to_numpy()
        rows.append(
            {
                "scenario_id": label,
                "p": p,
                "beta2": beta2,
                "rho": rho,
                "method": method,
                "f_mean": f.mean() if f.size else float("nan"),
                "f_lo": np.quantile(f, 0.025) if f.size else float("nan"),
                "f_hi": np.quantile(f, 0.975) if f.size else float("nan"),
                "sens_mean": scored["sensitivity"].mean(),
                "prec_mean": scored["precision"].mean(),
                "n_scored": int(f.size),
                "n_error": int(len(grp) - len(scored)),
            }
        )
    return pd.DataFrame(rows)


def block_bootstrap(dataset: Dataset, b: int, seed: int) -> Iterator[Dataset]:
    """Resample whole years with replacement, preserving within-year order."""
    years = dataset.years
    unique_years = np.unique(years)
    blocks = {int(y): np.nonzero(years == y)[0] for y in unique_years}
    for replicate in range(b):
        rng = np.random.default_rng(np.random.SeedSequence([seed, replicate]))
        drawn = rng.choice(unique_years, size=len(unique_years), replace=True)
        idx = np.concatenate([blocks[int(y)] for y in drawn])
        yield dataset.take(idx)


def bootstrap_summary(
    method: str,
    dataset: Dataset,
    b: int,
    seed: int,
    family: str = QUASIPOISSON,
    workers: int = 1,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Bootstrap threshold quantiles and non-selection proportions.

    Returns (raw, summary): raw has one row per replicate and variable
    with the estimated threshold (empty when not selected) and a status;
    summary reports the 2.5/50/97.5% quantiles among selected replicates
    plus selection, non-selection and failure proportions.
    """
    if method not in METHODS:
        raise KeyError(f"unknown method {method!r}")
    raw_rows = []
    replicates = list(block_bootstrap(dataset, b, seed))
    tasks = [(method, ds, family) for ds in replicates]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bootstrap_one, tasks, chunksize=4))
    else:
        results = [_bootstrap_one(t) for t in tasks]
    for replicate, outcome in enumerate(results):
        status, bounds = outcome
        for name in dataset.names:
            value = bounds.get(name) if bounds is not None else None
            raw_rows.append(
                {
                    "method": method,
                    "replicate": replicate,
                    "variable": name,
                    "threshold": value if value is not None else float("nan"),
                    "status": status,
                }
            )
    raw = pd.DataFrame(raw_rows)
    summary_rows = []
    for name in dataset.names:
        sub = raw[raw["variable"] == name]
        ok = sub[sub["status"] == "ok"]
        sel = ok["threshold"].dropna().to_numpy()
        n = len(sub)
        summary_rows.append(
            {
                "method": method,
                "variable": name,
                "q025": np.quantile(sel, 0.025) if sel.size else float("nan"),
                "q50": np.quantile(sel, 0.5) if sel.size else float("nan"),
                "q975": np.quantile(sel, 0.975) if sel.size else float("nan"),
                "selected_prop": sel.size / n,
                "not_selected_prop": (len(ok) - sel.size) / n,
                "failed_prop": (n - len(ok)) / n,
            }
        )
    return raw, pd.DataFrame(summary_rows)


def _bootstrap_one(args) -> tuple[str, dict | None]:
    method, ds, family = args
    try:
        thresholds = METHODS[method](ds, family)
        return "ok", dict(thresholds.bounds)
    except Exception:
        return "error", None
