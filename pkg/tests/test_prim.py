import numpy as np
import pytest

from heatwarn.dataset import Dataset
from heatwarn.glm import GAUSSIAN, fit_glm
from heatwarn.prim import (
    PeelingTrajectory,
    PeelStep,
    PrimConfig,
    fit_prim,
    members_of,
    paste,
    peel,
    select_box,
)


def make_dataset(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1 and x.shape[1] != 1:
        x = x.T
    n = x.shape[0]
    dates = np.datetime64("2000-01-01") + np.arange(n)
    names = tuple(f"x{j+1}" for j in range(x.shape[1]))
    return Dataset(dates, y, x, np.empty((n, 0)), names)


def test_first_peel_removes_alpha_fraction():
    rng = np.random.default_rng(0)
    x = rng.normal(size=1000)  # continuous, no ties
    y = x + rng.normal(size=1000)
    traj = peel(make_dataset(x, y), PrimConfig(), GAUSSIAN)
    assert traj.steps[1].peeled_count == 50


def test_peel_removes_all_tied_values():
    x = np.concatenate([np.full(80, 1.0), np.linspace(2, 3, 920)])
    rng = np.random.default_rng(1)
    y = x + 0.1 * rng.normal(size=1000)
    traj = peel(make_dataset(x, y), PrimConfig(), GAUSSIAN)
    # ceil(0.05*1000)=50 lands inside the tied block: the whole block goes.
    assert traj.steps[1].peeled_count == 80
    assert traj.steps[1].lower[0] == pytest.approx(x[80])


def test_trajectory_length_matches_recurrence():
    rng = np.random.default_rng(2)
    x = rng.normal(size=1000)
    y = x + rng.normal(size=1000)
    traj = peel(make_dataset(x, y), PrimConfig(), GAUSSIAN)
    # Integer-decay oracle: m -> m - ceil(0.05 m) until the next box would
    # drop below 5 observations.  Pure geometric decay (fractional rows)
    # would give ceil(ln 0.005 / ln 0.95) = 104 steps; discrete peeling
    # removes at least 5% per step and reaches the floor sooner.
    m, steps = 1000, 0
    while True:
        m_next = m - int(np.ceil(0.05 * m))
        if m_next < 5:
            break
        m, steps = m_next, steps + 1
    assert len(traj.steps) - 1 == steps
    assert steps <= np.ceil(np.log(0.005) / np.log(0.95))
    assert traj.supports[-1] >= 0.005


def test_supports_strictly_decrease_and_stay_above_floor():
    rng = np.random.default_rng(3)
    for seed in range(20):
        r = np.random.default_rng(seed)
        n = 300
        x = r.normal(size=(n, 2))
        y = x.sum(axis=1) + r.normal(size=n)
        traj = peel(make_dataset(x, y), PrimConfig(), GAUSSIAN)
        phi = traj.supports
        assert np.all(np.diff(phi) < 0)
        assert phi[-1] >= 5.0 / n - 1e-12
    assert rng is not None


def test_box_membership_nested():
    rng = np.random.default_rng(4)
    n = 400
    x = rng.normal(size=(n, 2))
    y = x.sum(axis=1) + rng.normal(size=n)
    ds = make_dataset(x, y)
    traj = peel(ds, PrimConfig(), GAUSSIAN)
    prev = None
    for st in traj.steps:
        mem = set(members_of(ds, st.lower))
        if prev is not None:
            assert mem <= prev
        prev = mem


def test_single_variable_peels_that_variable():
    rng = np.random.default_rng(5)
    x = rng.normal(size=500)
    y = x + rng.normal(size=500)
    traj = peel(make_dataset(x, y), PrimConfig(), GAUSSIAN)
    assert all(st.peeled_var == 0 for st in traj.steps[1:])


def test_select_box_rate_arithmetic():
    steps = [
        PeelStep(np.array([-np.inf]), 0.50, 1.0, None, 0),
        PeelStep(np.array([0.3]), 0.40, 1.1, 0, 10),
        PeelStep(np.array([0.7]), 0.30, 1.6, 0, 10),
    ]
    traj = PeelingTrajectory(steps=steps, names=("x1",))
    np.testing.assert_allclose(traj.rates(), [1.0, 5.0])
    thr = select_box(traj)
    assert thr.bounds["x1"] == pytest.approx(0.7)


def test_select_box_tie_takes_earliest_step():
    steps = [
        PeelStep(np.array([-np.inf]), 0.50, 1.0, None, 0),
        PeelStep(np.array([0.3]), 0.40, 1.0, 0, 10),
        PeelStep(np.array([0.7]), 0.30, 1.0, 0, 10),
    ]
    traj = PeelingTrajectory(steps=steps, names=("x1",))
    thr = select_box(traj)
    assert thr.bounds["x1"] == pytest.approx(0.3)


def test_select_box_marks_unpeeled_variables():
    steps = [
        PeelStep(np.array([-np.inf, -np.inf]), 0.50, 1.0, None, 0),
        PeelStep(np.array([0.3, -np.inf]), 0.40, 2.0, 0, 10),
    ]
    traj = PeelingTrajectory(steps=steps, names=("a", "b"))
    thr = select_box(traj)
    assert thr.bounds["a"] == pytest.approx(0.3)
    assert thr.bounds["b"] is None


def test_select_box_requires_two_steps():
    steps = [PeelStep(np.array([-np.inf]), 1.0, 1.0, None, 0)]
    with pytest.raises(ValueError):
        select_box(PeelingTrajectory(steps=steps, names=("x1",)))


def test_select_invariant_to_step_relabeling():
    rng = np.random.default_rng(6)
    x = rng.normal(size=500)
    y = x + 2.0 * np.maximum(x - 1.5, 0.0) + 0.1 * rng.normal(size=500)
    traj = peel(make_dataset(x, y), PrimConfig(), GAUSSIAN)
    t1 = select_box(traj)
    renumbered = PeelingTrajectory(steps=list(traj.steps), names=traj.names)
    t2 = select_box(renumbered)
    assert t1.bounds == t2.bounds


def test_noiseless_threshold_recovery_with_scan_oracle():
    rng = np.random.default_rng(7)
    n = 1000
    x = rng.normal(size=n)
    s = 2.17
    y = x + 5.0 * np.maximum(x - s, 0.0)  # noiseless, large extreme effect
    ds = make_dataset(x, y)
    traj = peel(ds, PrimConfig(paste=False), GAUSSIAN)
    thr = select_box(traj).bounds["x1"]
    # One peel step at that support removes about 5% of the box.
    sorted_tail = np.sort(x)[x < s].size
    granule = np.diff(np.sort(x))[max(0, sorted_tail - 25) : sorted_tail + 25].sum()
    assert abs(thr - s) <= max(granule, 0.35)
    # Exhaustive oracle: the fitted-slope-maximizing threshold over a grid
    # sits at or above s; the selected box must be consistent with it.
    grid = np.quantile(x, np.linspace(0.5, 0.99, 60))
    slopes = []
    for g in grid:
        m = x >= g
        design = np.column_stack([np.ones(m.sum()), x[m]])
        slopes.append(fit_glm(design, y[m], GAUSSIAN).coefficients[1])
    oracle = grid[int(np.argmax(slopes))]
    assert thr >= min(oracle, s) - 0.35


def test_paste_only_improves_slope_and_support():
    rng = np.random.default_rng(8)
    n = 800
    x = rng.normal(size=(n, 2))
    y = x.sum(axis=1) + 2.0 * np.where((x >= 1.0).all(axis=1), (x - 1.0).sum(axis=1), 0.0)
    y = y + 0.2 * rng.normal(size=n)
    ds = make_dataset(x, y)
    traj = peel(ds, PrimConfig(), GAUSSIAN)
    thr = select_box(traj)
    lower = np.array([thr.bounds[f"x{j+1}"] if thr.bounds[f"x{j+1}"] is not None else -np.inf for j in range(2)])
    before_members = members_of(ds, lower)
    from heatwarn.prim import _box_slope

    slope_before = _box_slope(ds, before_members, None, GAUSSIAN)
    pasted = paste(lower, ds, PrimConfig(), GAUSSIAN)
    after_members = members_of(ds, pasted)
    slope_after = _box_slope(ds, after_members, None, GAUSSIAN)
    assert slope_after >= slope_before - 1e-12
    assert len(after_members) >= len(before_members)
    assert np.all(pasted <= lower + 1e-12)


def test_fit_prim_returns_thresholds():
    rng = np.random.default_rng(9)
    x = rng.normal(size=600)
    y = x + 3.0 * np.maximum(x - 1.2, 0.0) + 0.3 * rng.normal(size=600)
    thr = fit_prim(make_dataset(x, y), PrimConfig(), GAUSSIAN)
    assert thr.provenance == "prim"
    assert thr.bounds["x1"] is not None
