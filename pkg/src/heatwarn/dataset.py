"""Dataset ingestion and derived regressors.

Daily series are loaded from CSV, restricted to the alert season, turned
into lagged weighted-average indicators, and augmented with seasonal and
long-term-trend spline covariates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd


class SchemaError(ValueError):
    """A mapped column is missing from the file."""


class ParseError(ValueError):
    """A cell cannot be parsed under the ingestion contract."""


class RankError(ValueError):
    """Too few distinct values to build a full-rank basis."""


DEFAULT_SEASON = ((5, 1), (9, 30))


@dataclass
class Dataset:
    """Aligned daily series used by every threshold method.

    Attributes:
        dates: daily calendar dates, numpy datetime64[D].
        y: response per day.  Counts on the data path; the simulation
            harness stores a continuous response here.
        x: n x p matrix of indicator values (the variables alerts are
            defined on).
        c: n x q covariate matrix (may have zero columns).
        names: p indicator labels matching the columns of x.
    """

    dates: np.ndarray
    y: np.ndarray
    x: np.ndarray
    c: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if self.x.shape[0] == 1 and self.y.shape[0] != 1:
            self.x = self.x.T
        self.c = np.asarray(self.c, dtype=float)
        if self.c.ndim == 1:
            self.c = self.c.reshape(len(self.c), -1) if self.c.size else np.empty((len(self.y), 0))
        self.names = tuple(self.names)
        n = len(self.y)
        if n < 1:
            raise ValueError("dataset is empty")
        if self.dates.shape[0] != n or self.x.shape[0] != n or self.c.shape[0] != n:
            raise ValueError("dates, y, x, c must share the same length")
        if self.x.shape[1] < 1:
            raise ValueError("need at least one indicator column")
        if len(self.names) != self.x.shape[1]:
            raise ValueError("names must match indicator columns")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.c))):
            raise ValueError("dataset contains non-finite values")
        # Dates must strictly increase within a year.  A strict decrease
        # marks a block restart (bootstrap replicates repeat whole years);
        # an adjacent duplicate date is always a data error.  Ingestion
        # order itself is enforced by load_csv, which sorts.
        years = self.years
        d = self.dates
        for start, stop in _runs(years):
            if stop - start > 1 and np.any(np.diff(d[start:stop]).astype(int) == 0):
                raise ValueError("duplicate dates within a year")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def years(self) -> np.ndarray:
        """Calendar year of each row."""
        return self.dates.astype("datetime64[Y]").astype(int) + 1970

    def column(self, name: str) -> np.ndarray:
        return self.x[:, self.names.index(name)]

    def take(self, idx: np.ndarray) -> "Dataset":
        """Row subset (order preserved as given)."""
        return Dataset(self.dates[idx], self.y[idx], self.x[idx], self.c[idx], self.names)


def _runs(values: np.ndarray):
    """Yield (start, stop) of maximal runs of equal values."""
    if len(values) == 0:
        return
    breaks = np.nonzero(np.diff(values) != 0)[0] + 1
    edges = np.concatenate([[0], breaks, [len(values)]])
    for a, b in zip(edges[:-1], edges[1:]):
        yield int(a), int(b)


@dataclass(frozen=True)
class LagWeights:
    """Weights for a lagged moving average, lag 0 first."""

    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d sequence")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", tuple(float(v) for v in w))

    @property
    def n_lags(self) -> int:
        return len(self.weights) - 1


@dataclass(frozen=True)
class SplineSpec:
    """Degrees of freedom for the seasonal and long-term covariate bases."""

    df_season: int = 4
    df_per_decade: float = 1.0

    def __post_init__(self) -> None:
        if self.df_season < 1:
            raise ValueError("df_season must be >= 1")
        if self.df_per_decade <= 0:
            raise ValueError("df_per_decade must be > 0")


def load_csv(
    path,
    schema: dict,
    season: tuple[tuple[int, int], tuple[int, int]] | None = DEFAULT_SEASON,
) -> Dataset:
    """Load a daily CSV into a Dataset.

    The schema maps dataset roles to file columns:
    ``{"date": col, "y": col, "x": {label: col, ...} or [col, ...],
    "c": [col, ...]}`` ("c" optional).  Rows with a missing value in any
    mapped column are dropped; rows outside the season window are dropped;
    remaining rows are sorted by date.

    Raises:
        SchemaError: a mapped column is absent.
        ParseError: non-numeric cell, negative or non-integer count
            (reported with its 1-based data row index), or nothing left
            after filtering.
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""])
    x_map = schema["x"]
    if not isinstance(x_map, dict):
        x_map = {c: c for c in x_map}
    c_cols = list(schema.get("c") or [])
    mapped = [schema["date"], schema["y"], *x_map.values(), *c_cols]
    missing = [c for c in mapped if c not in frame.columns]
    if missing:
        raise SchemaError(f"columns not found in file: {missing}")

    sub = frame[mapped].copy()
    keep = ~sub.isna().any(axis=1)
    sub = sub[keep]
    if len(sub) == 0:
        raise ParseError("no complete rows after dropping missing values")

    def parse_numeric(col: str) -> np.ndarray:
        raw = sub[col]
        vals = pd.to_numeric(raw, errors="coerce")
        bad = vals.isna()
        if bad.any():
            row = int(bad.idxmax()) + 1
            raise ParseError(f"non-numeric value {raw[bad.idxmax()]!r} in column {col!r}, row {row}")
        return vals.to_numpy(dtype=float)

    try:
        dates = pd.to_datetime(sub[schema["date"]], format="ISO8601").to_numpy()
    except (ValueError, TypeError) as exc:
        raise ParseError(f"unparseable date in column {schema['date']!r}: {exc}") from exc

    y = parse_numeric(schema["y"])
    bad = (y < 0) | (y != np.round(y))
    if bad.any():
        row = int(sub.index[np.argmax(bad)]) + 1
        raise ParseError(f"count column {schema['y']!r} must hold non-negative integers, row {row}")

    x = np.column_stack([parse_numeric(c) for c in x_map.values()])
    c = (
        np.column_stack([parse_numeric(col) for col in c_cols])
        if c_cols
        else np.empty((len(sub), 0))
    )

    dates = dates.astype("datetime64[D]")
    if season is not None:
        mask = _season_mask(dates, season)
        if not mask.any():
            raise ParseError("no rows inside the season window")
        dates, y, x, c = dates[mask], y[mask], x[mask], c[mask]

    order = np.argsort(dates, kind="stable")
    return Dataset(dates[order], y[order], x[order], c[order], tuple(x_map.keys()))


def _season_mask(dates: np.ndarray, season) -> np.ndarray:
    (m0, d0), (m1, d1) = season
    months = dates.astype("datetime64[M]").astype(int) % 12 + 1
    days = (dates - dates.astype("datetime64[M]")).astype(int) + 1
    key = months * 100 + days
    return (key >= m0 * 100 + d0) & (key <= m1 * 100 + d1)


def lagged_indicator(series: np.ndarray, w: LagWeights) -> np.ndarray:
    """Weighted moving average of a daily series over lags 0..L.

    out[t] = sum_l w[l] * series[t - l].  The first L entries have no
    history and are dropped, so the result is shorter by L.
    """
    series = np.asarray(series, dtype=float)
    weights = np.asarray(w.weights)
    lags = w.n_lags
    if series.ndim != 1:
        raise ValueError("series must be 1-d")
    if len(series) <= lags:
        raise ValueError(f"series length {len(series)} must exceed {lags} lags")
    out = np.zeros(len(series) - lags)
    for lag, wl in enumerate(weights):
        out += wl * series[lags - lag : len(series) - lag]
    return out


def apply_lag(dataset: Dataset, w: LagWeights) -> Dataset:
    """Replace indicators by their lagged averages, year by year.

    Each year's first L days lack history within the season and are
    dropped across all series, keeping rows aligned.
    """
    if w.n_lags == 0:
        return dataset
    keep_parts: list[np.ndarray] = []
    x_parts: list[np.ndarray] = []
    for start, stop in _runs(dataset.years):
        if stop - start <= w.n_lags:
            raise ValueError("a year block is shorter than the lag window")
        block = dataset.x[start:stop]
        x_parts.append(np.column_stack([lagged_indicator(block[:, j], w) for j in range(block.shape[1])]))
        keep_parts.append(np.arange(start + w.n_lags, stop))
    keep = np.concatenate(keep_parts)
    return Dataset(
        dataset.dates[keep],
        dataset.y[keep],
        np.vstack(x_parts),
        dataset.c[keep],
        dataset.names,
    )


class NaturalSplineBasis:
    """Natural cubic spline basis with fixed knots, evaluable anywhere.

    Columns are linear beyond the boundary knots.  With df columns the
    basis spans {x} for df = 1 and adds df - 1 curvature terms otherwise;
    together with an intercept it reproduces any natural cubic spline on
    the knots.
    """

    def __init__(self, knots: np.ndarray):
        knots = np.sort(np.asarray(knots, dtype=float))
        if len(knots) < 2 or len(np.unique(knots)) != len(knots):
            raise RankError("need at least two distinct knots")
        self.knots = knots

    @classmethod
    def from_data(cls, x: np.ndarray, df: int) -> "NaturalSplineBasis":
        """Boundary knots at min/max, interior knots at equally spaced quantiles."""
        x = np.asarray(x, dtype=float)
        if df < 1:
            raise ValueError("df must be >= 1")
        distinct = np.unique(x)
        if len(distinct) < df + 2:
            raise RankError(f"need at least {df + 2} distinct values for df={df}, got {len(distinct)}")
        interior = np.quantile(x, np.arange(1, df) / df) if df >= 2 else np.array([])
        knots = np.concatenate([[distinct[0]], interior, [distinct[-1]]])
        if len(np.unique(knots)) != len(knots):
            raise RankError("quantile knots collide; too few distinct values")
        return cls(knots)

    @property
    def df(self) -> int:
        return len(self.knots) - 1

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the basis at x, returning an (len(x), df) matrix."""
        x = np.asarray(x, dtype=float)
        k = self.knots
        cols = [x]
        if len(k) > 2:
            last = _scaled_cubic(x, k[-2], k[-1])
            for j in range(len(k) - 2):
                cols.append(_scaled_cubic(x, k[j], k[-1]) - last)
        return np.column_stack(cols)


def _scaled_cubic(x: np.ndarray, knot: float, boundary: float) -> np.ndarray:
    num = np.maximum(x - knot, 0.0) ** 3 - np.maximum(x - boundary, 0.0) ** 3
    return num / (boundary - knot)


def natural_spline_basis(x: np.ndarray, df: int) -> np.ndarray:
    """Natural cubic spline design (without intercept) for x with df columns."""
    return NaturalSplineBasis.from_data(x, df).transform(x)


def build_covariates(
    dates: np.ndarray,
    spec: SplineSpec,
    season_start: tuple[int, int] = DEFAULT_SEASON[0],
) -> np.ndarray:
    """Seasonal and long-term-trend covariate columns for the given dates.

    Day-of-season (1 = first day of the season window) enters through a
    natural spline with ``df_season`` columns.  Year enters with
    ceil(decades * df_per_decade) columns, linear when that is 1, and is
    omitted entirely for single-year records.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    doy = day_of_season(dates, season_start).astype(float)
    seasonal = natural_spline_basis(doy, spec.df_season)

    years = dates.astype("datetime64[Y]").astype(int).astype(float)
    n_years = int(years.max() - years.min()) + 1
    if n_years <= 1:
        return seasonal
    df_year = max(1, math.ceil(n_years / 10.0 * spec.df_per_decade))
    if df_year == 1 or len(np.unique(years)) < df_year + 2:
        trend = (years - years.mean()).reshape(-1, 1)
    else:
        trend = natural_spline_basis(years, df_year)
    return np.column_stack([seasonal, trend])


def day_of_season(dates: np.ndarray, season_start: tuple[int, int] = DEFAULT_SEASON[0]) -> np.ndarray:
    """1-based index of each date within its year's season window."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    years = dates.astype("datetime64[Y]")
    month, day = season_start
    starts = years + np.timedelta64((month - 1), "M")
    starts = starts.astype("datetime64[D]") + np.timedelta64(day - 1, "D")
    return (dates - starts).astype(int) + 1


def add_time_covariates(
    dataset: Dataset,
    spec: SplineSpec,
    season_start: tuple[int, int] = DEFAULT_SEASON[0],
) -> Dataset:
    """Append seasonal/trend covariates to the dataset's covariate matrix."""
    built = build_covariates(dataset.dates, spec, season_start)
    return replace(dataset, c=np.column_stack([dataset.c, built]) if dataset.c.size else built)
