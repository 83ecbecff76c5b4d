"""Model-based recursive partitioning.

A node model (intercept + a single indicator + covariates) is fitted on
the node's rows; per-observation score contributions are tested for
instability along each candidate split variable.  Significant nodes are
split at the cut minimizing the summed child deviances, and thresholds
are read off the path to the terminal node with the steepest indicator
slope.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.special
import scipy.stats

from .dataset import Dataset
from .glm import DISPERSION_FLOOR, GAUSSIAN, QUASIPOISSON, GlmFit, SingularDesignError, fit_glm
from .scoring import ThresholdSet


@dataclass(frozen=True)
class MobConfig:
    """Growth settings.

    model_vars selects the indicator columns whose mean forms the node
    model's single slope variable (None = all columns); split_vars are the
    columns searched for cuts (None = all).  trim bounds the instability
    test's evaluation window away from the ends of the ordering; the split
    scan itself only requires min_node per child.
    """

    alpha_test: float = 0.05
    min_node: int = 5
    split_vars: tuple[int, ...] | None = None
    model_vars: tuple[int, ...] | None = None
    trim: float = 0.1
    clock: str = "observation"

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha_test < 1.0:
            raise ValueError("alpha_test must be in (0, 1)")
        if self.min_node < 2:
            raise ValueError("min_node must be >= 2")
        if not 0.0 <= self.trim < 0.5:
            raise ValueError("trim must be in [0, 0.5)")
        if self.clock not in ("observation", "information"):
            raise ValueError("clock must be 'observation' or 'information'")


@dataclass
class MobNode:
    node_id: int
    rows: np.ndarray
    fit: GlmFit
    p_values: dict[int, float] = field(default_factory=dict)
    statistics: dict[int, float] = field(default_factory=dict)
    split_var: int | None = None
    split_value: float | None = None
    left: "MobNode | None" = None
    right: "MobNode | None" = None

    @property
    def is_terminal(self) -> bool:
        return self.left is None

    @property
    def slope(self) -> float:
        return float(self.fit.coefficients[1])


@dataclass
class MobTree:
    root: MobNode
    config: MobConfig
    names: tuple[str, ...]

    def terminals(self) -> list[MobNode]:
        out: list[MobNode] = []

        def walk(node: MobNode) -> None:
            if node.is_terminal:
                out.append(node)
            else:
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out

    def to_dict(self) -> dict:
        def encode(node: MobNode) -> dict:
            d = {
                "id": node.node_id,
                "n": int(len(node.rows)),
                "slope": node.slope,
                "p_values": {self.names[v]: p for v, p in node.p_values.items()},
            }
            if not node.is_terminal:
                d["split"] = {"variable": self.names[node.split_var], "value": node.split_value}
                d["left"] = encode(node.left)
                d["right"] = encode(node.right)
            return d

        return encode(self.root)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _bridge_sup_pvalue(stat: float) -> float:
    """P(sup |Brownian bridge| >= stat), the Kolmogorov crossing series."""
    return float(scipy.special.kolmogorov(stat))


def _weighted_sup_pvalue(stat: float, t_lo: float, t_hi: float) -> float:
    """Crossing probability of the variance-normalized bridge on [t_lo, t_hi].

    Uses the Miller-Siegmund approximation for
    P(sup |B(t)| / sqrt(t(1-t)) >= stat) over the admissible window.
    """
    if stat <= 1.0:
        return 1.0
    logodds = np.log(t_hi * (1.0 - t_lo) / (t_lo * (1.0 - t_hi)))
    dens = scipy.stats.norm.pdf(stat)
    p = dens * (stat - 1.0 / stat) * logodds + 4.0 * dens / stat
    return float(min(1.0, max(p, 0.0)))


def instability_test(
    scores: np.ndarray,
    order: np.ndarray,
    min_node: int,
    weighted: bool = True,
    trim: float = 0.1,
    clock: str = "observation",
) -> tuple[float, float]:
    """Cumulative-score fluctuation test along an ordering.

    Scores are decorrelated by the inverse square root of their empirical
    covariance and cumulated along ``order``; the statistic is the maximum
    of the squared-norm of the (variance-normalized, when ``weighted``)
    cumulated process over cut positions [max(min_node, trim*n),
    n - max(min_node, trim*n)].  Per-component Brownian-bridge crossing
    probabilities are combined by Bonferroni.

    ``clock`` chooses the bridge time scale.  "observation" normalizes by
    the observation fraction t(1-t) and is the form the partitioning
    literature uses; ordered by the node model's own regressor it runs hot
    near the ends of the ordering (slope information concentrates there),
    which the default trim bounds.  "information" clocks each component by
    its cumulative squared-score fraction instead, which keeps the test
    calibrated under any ordering at the price of little sensitivity to
    changes confined to the extreme tail.

    Returns:
        (statistic, p_value); p = 1 when no admissible cut exists.
    """
    scores = np.asarray(scores, dtype=float)
    n, k = scores.shape
    margin = max(min_node, int(np.ceil(trim * n)))
    if n < 2 * margin:
        return 0.0, 1.0
    z = scores[np.asarray(order)]
    z = z - z.mean(axis=0)
    cov = z.T @ z / n
    eigval, eigvec = np.linalg.eigh(cov)
    keep = eigval > 1e-12 * max(eigval.max(), 1e-300)
    if not np.all(keep):
        warnings.warn("singular score covariance; dropping degenerate components")
    if not np.any(keep):
        return 0.0, 1.0
    increments = z @ (eigvec[:, keep] / np.sqrt(eigval[keep]))
    walk = np.cumsum(increments, axis=0) / np.sqrt(n)

    j = np.arange(margin, n - margin + 1)
    seg = walk[j - 1]
    if clock == "information":
        # Each column of increments has mean square 1, so this ends at 1.
        tau = np.clip(np.cumsum(increments**2, axis=0) / n, 1e-12, 1.0 - 1e-12)[j - 1]
    else:
        tau = np.repeat((j / n)[:, None], seg.shape[1], axis=1)
    if weighted:
        norm = seg / np.sqrt(tau * (1.0 - tau))
        stat = float(np.max(np.sum(norm**2, axis=1)))
        p_each = [
            _weighted_sup_pvalue(
                float(np.max(np.abs(norm[:, i]))), float(tau[0, i]), float(tau[-1, i])
            )
            for i in range(norm.shape[1])
        ]
    else:
        stat = float(np.max(np.sum(seg**2, axis=1)))
        p_each = [
            _bridge_sup_pvalue(float(np.max(np.abs(seg[:, i]))))
            for i in range(seg.shape[1])
        ]
    p = min(1.0, len(p_each) * min(p_each))
    return stat, p


def _node_design(dataset: Dataset, rows: np.ndarray, model_vars: tuple[int, ...] | None) -> np.ndarray:
    cols = list(model_vars) if model_vars is not None else list(range(dataset.p))
    indicator = dataset.x[rows][:, cols].mean(axis=1)
    return np.column_stack([np.ones(len(rows)), indicator, dataset.c[rows]])


def _deviance_scan(
    dataset: Dataset,
    rows: np.ndarray,
    var: int,
    cfg: MobConfig,
    family: str,
) -> tuple[float, np.ndarray, np.ndarray] | None:
    """Best cut on one variable: minimize summed child deviances.

    Admissible cuts leave at least max(min_node, k+1) rows on each side.
    Returns (cut_value, left_rows, right_rows) or None when no cut is
    feasible.  The cut value is the smallest value of the right child, so
    membership is exactly ``x >= cut``.
    """
    values = dataset.x[rows, var]
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    design = _node_design(dataset, rows, cfg.model_vars)[order]
    y = dataset.y[rows][order]
    n, k = design.shape
    min_child = max(cfg.min_node, k + 1)
    if n < 2 * min_child:
        return None
    # Left-child sizes with distinct adjacent values (cut between j-1 and j).
    sizes = np.arange(min_child, n - min_child + 1)
    sizes = sizes[sorted_vals[sizes] > sorted_vals[sizes - 1]]
    if sizes.size == 0:
        return None

    if family == GAUSSIAN:
        total = _prefix_rss(design, y, sizes)
    else:
        total = np.empty(len(sizes))
        for i, m in enumerate(sizes):
            total[i] = _child_deviance(design[:m], y[:m], family) + _child_deviance(
                design[m:], y[m:], family
            )
    best = int(np.argmin(total))  # ties resolve to the lowest cut value
    m = int(sizes[best])
    cut = float(sorted_vals[m])
    local = rows[order]
    return cut, local[:m], local[m:]


def _prefix_rss(design: np.ndarray, y: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Summed child RSS for every candidate cut, via cumulative Gram matrices."""
    n, k = design.shape
    # Ridge keeps degenerate prefixes solvable; children are refit exactly later.
    ridge = 1e-9 * np.mean(np.sum(design**2, axis=1)) * np.eye(k)
    gram = np.cumsum(np.einsum("ni,nj->nij", design, design), axis=0)
    xty = np.cumsum(design * y[:, None], axis=0)
    yty = np.cumsum(y * y)
    out = np.empty(len(sizes))
    g_all, h_all, q_all = gram[-1], xty[-1], yty[-1]
    gl = gram[sizes - 1] + ridge
    hl = xty[sizes - 1]
    ql = yty[sizes - 1]
    gr = (g_all - gram[sizes - 1]) + ridge
    hr = h_all - xty[sizes - 1]
    qr = q_all - yty[sizes - 1]
    bl = np.linalg.solve(gl, hl[..., None])[..., 0]
    br = np.linalg.solve(gr, hr[..., None])[..., 0]
    out = (ql - np.sum(bl * hl, axis=1)) + (qr - np.sum(br * hr, axis=1))
    return out


def _child_deviance(design: np.ndarray, y: np.ndarray, family: str) -> float:
    try:
        return fit_glm(design, y, family).deviance
    except (SingularDesignError, ValueError):
        return np.inf


def grow(dataset: Dataset, cfg: MobConfig = MobConfig(), family: str = QUASIPOISSON) -> MobTree:
    """Grow a tree by recursive instability testing and deviance-scan splits."""
    split_vars = list(cfg.split_vars) if cfg.split_vars is not None else list(range(dataset.p))
    counter = [0]

    def make_node(rows: np.ndarray) -> MobNode | None:
        design = _node_design(dataset, rows, cfg.model_vars)
        try:
            fit = fit_glm(design, dataset.y[rows], family)
        except (SingularDesignError, ValueError):
            return None
        node = MobNode(node_id=counter[0], rows=rows, fit=fit)
        counter[0] += 1
        return node

    def split(node: MobNode) -> None:
        rows = node.rows
        if node.fit.dispersion <= DISPERSION_FLOOR:
            return  # numerically perfect fit: scores are rounding dust
        for var in split_vars:
            order = np.argsort(dataset.x[rows, var], kind="stable")
            stat, p = instability_test(
                node.fit.scores, order, cfg.min_node, trim=cfg.trim, clock=cfg.clock
            )
            node.statistics[var] = stat
            node.p_values[var] = p
        ps = np.array([node.p_values[v] for v in split_vars])
        if ps.min() >= cfg.alpha_test:
            return
        var = split_vars[int(np.argmin(ps))]  # ties resolve to the lowest index
        found = _deviance_scan(dataset, rows, var, cfg, family)
        if found is None:
            return
        cut, left_rows, right_rows = found
        left = make_node(left_rows)
        right = make_node(right_rows)
        if left is None or right is None:
            return  # child fit failure: keep this node terminal
        node.split_var = var
        node.split_value = cut
        node.left, node.right = left, right
        split(left)
        split(right)

    root = make_node(np.arange(dataset.n))
    if root is None:
        raise SingularDesignError("root model could not be fitted")
    split(root)
    return MobTree(root=root, config=cfg, names=dataset.names)


def extract_thresholds(tree: MobTree) -> ThresholdSet:
    """Thresholds from the path to the steepest-slope terminal node.

    Walking from the root to that node, every split crossed in the ">="
    direction contributes a lower bound on its variable; the innermost
    (largest) bound wins.  Variables with no such crossing are marked
    not selected.
    """
    terminals = tree.terminals()
    target = max(terminals, key=lambda node: node.slope)
    bounds: dict[int, float] = {}

    def walk(node: MobNode) -> bool:
        if node is target:
            return True
        if node.is_terminal:
            return False
        if walk(node.left):
            return True
        if walk(node.right):
            bound = bounds.get(node.split_var)
            if bound is None or node.split_value > bound:
                bounds[node.split_var] = node.split_value
            return True
        return False

    walk(tree.root)
    return ThresholdSet(
        bounds={name: bounds.get(i) for i, name in enumerate(tree.names)},
        provenance="mob",
    )
