"""Alert generation and threshold assessment.

A ThresholdSet turns indicator series into a boolean alert series (all
selected indicators at or above their bounds).  Alerts are scored against
"true" adverse days with sensitivity, precision and F-score, and against
the over-mortality baseline with episode counts and coverage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, SplineSpec, build_covariates
from .glm import QUASIPOISSON, fit_glm


class NoSelectionError(ValueError):
    """Alert generation needs at least one selected indicator."""


@dataclass
class ThresholdSet:
    """Per-indicator lower alert bounds.

    ``bounds[name]`` is the alert bound for that indicator, or None when
    the method discarded the variable.  ``relaxed`` marks results where an
    occupancy fallback had to drop a variable.
    """

    bounds: dict[str, float | None]
    provenance: str = ""
    relaxed: bool = False

    def __post_init__(self) -> None:
        for name, value in self.bounds.items():
            if value is not None and not np.isfinite(value):
                raise ValueError(f"bound for {name!r} must be finite or None")

    def selected(self) -> dict[str, float]:
        return {k: v for k, v in self.bounds.items() if v is not None}

    @property
    def any_selected(self) -> bool:
        return any(v is not None for v in self.bounds.values())


@dataclass
class Scores:
    """Agreement between alerts and true adverse days, plus alert summaries."""

    sensitivity: float
    precision: float
    f_score: float
    n_alerts: int
    n_episodes: int | None = None
    mean_om: float | None = None
    coverage: float | None = None


def alerts(dataset: Dataset, thresholds: ThresholdSet) -> np.ndarray:
    """Boolean alert series: every selected indicator at or above its bound."""
    sel = thresholds.selected()
    if not sel:
        raise NoSelectionError("threshold set selects no indicator")
    unknown = [k for k in sel if k not in dataset.names]
    if unknown:
        raise KeyError(f"thresholds reference unknown indicators {unknown}")
    out = np.ones(dataset.n, dtype=bool)
    for name, bound in sel.items():
        out &= dataset.column(name) >= bound
    return out


def confusion_scores(alert_series: np.ndarray, truth: np.ndarray) -> Scores:
    """Sensitivity, precision and F-score of alerts against true days.

    Empty-denominator conventions: sensitivity is 1 when there are no true
    days, precision is 1 when there are no alerts, and F is 0 when both
    sensitivity and precision are 0.
    """
    alert_series = np.asarray(alert_series, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if alert_series.shape != truth.shape:
        raise ValueError("alert and truth series must have equal length")
    tp = int(np.sum(alert_series & truth))
    sens = tp / truth.sum() if truth.any() else 1.0
    prec = tp / alert_series.sum() if alert_series.any() else 1.0
    f = f_score(sens, prec)
    return Scores(sensitivity=sens, precision=prec, f_score=f, n_alerts=int(alert_series.sum()))


def f_score(sensitivity: float, precision: float) -> float:
    if sensitivity + precision == 0.0:
        return 0.0
    return 2.0 * sensitivity * precision / (sensitivity + precision)


def expected_mortality(dataset: Dataset, spec: SplineSpec) -> np.ndarray:
    """Smooth expected-count baseline from the seasonal/trend bases alone."""
    basis = build_covariates(dataset.dates, spec)
    design = np.column_stack([np.ones(dataset.n), basis])
    fit = fit_glm(design, dataset.y, QUASIPOISSON)
    return fit.fitted


def over_mortality(y: np.ndarray, em: np.ndarray) -> np.ndarray:
    """Percent excess of observed counts over the expected baseline."""
    y = np.asarray(y, dtype=float)
    em = np.asarray(em, dtype=float)
    if y.shape != em.shape:
        raise ValueError("y and em must have equal length")
    if np.any(em <= 0):
        raise ValueError("expected baseline must be positive")
    return 100.0 * (y - em) / em


def om_events(om: np.ndarray, cut: float) -> np.ndarray:
    """True adverse days at a cut point: OM strictly above the cut."""
    return np.asarray(om) > cut


def episodes(alert_series: np.ndarray, dates: np.ndarray, gap: int = 3) -> int:
    """Number of alert episodes.

    Alert days at most ``gap`` days apart belong to one episode; a change
    of calendar year always starts a new episode.
    """
    alert_series = np.asarray(alert_series, dtype=bool)
    dates = np.asarray(dates, dtype="datetime64[D]")
    idx = np.nonzero(alert_series)[0]
    if idx.size == 0:
        return 0
    d = dates[idx]
    years = d.astype("datetime64[Y]")
    day_gap = np.diff(d).astype(int)
    new_episode = (day_gap > gap) | (years[1:] != years[:-1])
    return int(1 + np.sum(new_episode))


def coverage(om: np.ndarray, alert_series: np.ndarray) -> float:
    """Mean OM over alert days scaled by the alert frequency."""
    alert_series = np.asarray(alert_series, dtype=bool)
    om = np.asarray(om, dtype=float)
    if om.shape != alert_series.shape:
        raise ValueError("om and alerts must have equal length")
    n_alerts = int(alert_series.sum())
    if n_alerts == 0:
        return 0.0
    return float(np.mean(om[alert_series]) * n_alerts / len(om))


def evaluate_thresholds(
    dataset: Dataset,
    thresholds: ThresholdSet,
    om: np.ndarray,
    cut: float,
    gap: int = 3,
) -> Scores:
    """Full score card of a threshold set against OM events at one cut point."""
    alert_series = (
        alerts(dataset, thresholds)
        if thresholds.any_selected
        else np.zeros(dataset.n, dtype=bool)
    )
    scores = confusion_scores(alert_series, om_events(om, cut))
    scores.n_episodes = episodes(alert_series, dataset.dates, gap=gap)
    scores.mean_om = float(np.mean(om[alert_series])) if alert_series.any() else float("nan")
    scores.coverage = coverage(om, alert_series)
    return scores
