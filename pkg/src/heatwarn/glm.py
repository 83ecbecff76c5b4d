"""Generalized linear model fitting by iteratively reweighted least squares.

Two families are supported: quasi-Poisson with log link (daily counts) and
Gaussian with identity link (continuous responses, used by the simulation
harness).  Fits expose per-observation score contributions, which the
partitioning code consumes for parameter-stability testing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

QUASIPOISSON = "quasipoisson"
GAUSSIAN = "gaussian"
FAMILIES = (QUASIPOISSON, GAUSSIAN)

# Rank tolerance relative to the largest singular value of the design.
RANK_RCOND = 1e-10
DISPERSION_FLOOR = 1e-8
MAX_ITER = 25
DEVIANCE_RTOL = 1e-8
ETA_CLIP = 30.0


class SingularDesignError(ValueError):
    """Raised when the design matrix is rank deficient at tolerance."""


@dataclass
class GlmFit:
    """Result of an IRLS fit.

    Attributes:
        family: "quasipoisson" or "gaussian".
        coefficients: estimated coefficient vector (length k).
        dispersion: Pearson chi^2 / (n - k) for quasi-Poisson, residual
            mean square for Gaussian; floored at a small positive value.
        cov: dispersion-scaled coefficient covariance, symmetric PSD.
        deviance: family deviance at the optimum (RSS for Gaussian).
        scores: n x k matrix of per-observation score contributions
            (y - mu) * x_i; columns sum to ~0 at convergence.
        fitted: fitted mean response per observation.
        converged: False when IRLS hit the iteration cap.
    """

    family: str
    coefficients: np.ndarray
    dispersion: float
    cov: np.ndarray
    deviance: float
    scores: np.ndarray
    fitted: np.ndarray
    converged: bool
    n_iter: int = field(default=0)

    @property
    def n_params(self) -> int:
        return self.coefficients.shape[0]

    def se(self) -> np.ndarray:
        """Standard errors of the coefficients."""
        return np.sqrt(np.diag(self.cov))


def _check_design(design: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if design.ndim == 1:
        design = design[:, None]
    n, k = design.shape
    if y.shape[0] != n:
        raise ValueError(f"response length {y.shape[0]} != design rows {n}")
    if n <= k:
        raise SingularDesignError(f"need n > k, got n={n}, k={k}")
    if not np.all(np.isfinite(design)) or not np.all(np.isfinite(y)):
        raise ValueError("design and response must be finite")
    return design, y


def _wls(design: np.ndarray, z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least squares via orthogonal decomposition with rank check."""
    sw = np.sqrt(w)
    coef, _, rank, _ = scipy.linalg.lstsq(
        design * sw[:, None], z * sw, cond=RANK_RCOND, lapack_driver="gelsd"
    )
    if rank < design.shape[1]:
        raise SingularDesignError(
            f"design rank {rank} < {design.shape[1]} at tolerance {RANK_RCOND}"
        )
    return coef


def _weighted_cov(design: np.ndarray, w: np.ndarray, dispersion: float) -> np.ndarray:
    xtwx = design.T @ (design * w[:, None])
    cov = dispersion * scipy.linalg.pinvh(xtwx)
    return 0.5 * (cov + cov.T)


def _poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def fit_glm(
    design: np.ndarray,
    y: np.ndarray,
    family: str = QUASIPOISSON,
    *,
    max_iter: int = MAX_ITER,
    tol: float = DEVIANCE_RTOL,
    dispersion: float | None = None,
) -> GlmFit:
    """Fit a GLM by IRLS.

    Args:
        design: n x k design matrix, full column rank.
        y: response vector. Non-negative for quasi-Poisson.
        family: "quasipoisson" (log link) or "gaussian" (identity link).
        max_iter: IRLS iteration cap; exceeded fits return converged=False.
        tol: relative deviance-change convergence threshold.
        dispersion: optional fixed dispersion overriding the estimate
            (coefficients are unaffected; only the covariance rescales).

    Raises:
        SingularDesignError: rank-deficient design.
        ValueError: unknown family, shape mismatch, or invalid response.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    design, y = _check_design(design, y)
    n, k = design.shape

    if family == GAUSSIAN:
        w = np.ones(n)
        coef = _wls(design, y, w)
        mu = design @ coef
        resid = y - mu
        rss = float(resid @ resid)
        phi = max(rss / (n - k), DISPERSION_FLOOR) if dispersion is None else dispersion
        return GlmFit(
            family=family,
            coefficients=coef,
            dispersion=phi,
            cov=_weighted_cov(design, w, phi),
            deviance=rss,
            scores=resid[:, None] * design,
            fitted=mu,
            converged=True,
            n_iter=1,
        )

    if np.any(y < 0):
        raise ValueError("quasi-Poisson response must be non-negative")
    # mu0 = y + 0.5 guards zero counts.
    mu = y + 0.5
    eta = np.log(mu)
    dev = _poisson_deviance(y, mu)
    coef = np.zeros(k)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = eta + (y - mu) / mu
        coef = _wls(design, z, mu)
        eta = np.clip(design @ coef, -ETA_CLIP, ETA_CLIP)
        mu = np.exp(eta)
        dev_new = _poisson_deviance(y, mu)
        if abs(dev_new - dev) <= tol * (abs(dev) + 1e-12):
            dev = dev_new
            converged = True
            break
        dev = dev_new
    if converged:
        # One polishing step: Newton convergence is quadratic, so this
        # drives the coefficient error far below the deviance tolerance.
        z = eta + (y - mu) / mu
        coef = _wls(design, z, mu)
        eta = np.clip(design @ coef, -ETA_CLIP, ETA_CLIP)
        mu = np.exp(eta)
        dev = _poisson_deviance(y, mu)
    pearson = float(np.sum((y - mu) ** 2 / mu))
    phi = max(pearson / (n - k), DISPERSION_FLOOR) if dispersion is None else dispersion
    return GlmFit(
        family=family,
        coefficients=coef,
        dispersion=phi,
        cov=_weighted_cov(design, mu, phi),
        deviance=dev,
        scores=(y - mu)[:, None] * design,
        fitted=mu,
        converged=converged,
        n_iter=it,
    )


def predict(fit: GlmFit, design: np.ndarray) -> np.ndarray:
    """Mean response at new design rows (inverse link of the linear predictor)."""
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[None, :]
    if design.shape[1] != fit.n_params:
        raise ValueError(
            f"design has {design.shape[1]} columns, fit expects {fit.n_params}"
        )
    eta = design @ fit.coefficients
    if fit.family == QUASIPOISSON:
        return np.exp(np.clip(eta, -ETA_CLIP, ETA_CLIP))
    return eta
