"""Gaussian-process conditioning on gridded fields and kernel hyperparameter fitting."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .grid import Grid, snap_points
from .kernels import (
    DEFAULT_JITTER,
    KernelSpec,
    canonical_family,
    covariance_and_log_gradients,
    covariance_matrix,
)

log = logging.getLogger(__name__)

SIGMA_BOUNDS = (1e-3, 1e3)
LENGTH_BOUNDS = (1e-3, 10.0)


class ConditioningError(RuntimeError):
    pass


class HyperparameterFitError(RuntimeError):
    def __init__(self, message, best_params=None, grad_norm=None):
        super().__init__(message)
        self.best_params = best_params
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class ObservationSet:
    locations: np.ndarray
    values: np.ndarray
    noise_cov: np.ndarray = field(default=None)

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        val = np.asarray(self.values, dtype=float).reshape(-1)
        n = len(val)
        if loc.shape[0] != n:
            raise ValueError(f"{loc.shape[0]} locations but {n} values")
        noise = np.zeros((n, n)) if self.noise_cov is None else np.asarray(self.noise_cov, dtype=float)
        if noise.ndim == 1:
            noise = np.diag(noise)
        if noise.shape != (n, n):
            raise ValueError(f"noise_cov has shape {noise.shape}, expected {(n, n)}")
        if not np.allclose(noise, noise.T):
            raise ValueError("noise_cov must be symmetric")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "noise_cov", noise)

    def __len__(self):
        return len(self.values)

    @classmethod
    def empty(cls) -> "ObservationSet":
        return cls(np.zeros((0, 2)), np.zeros(0))

    @classmethod
    def at_cells(cls, grid: Grid, cells, values, noise_var=0.0) -> "ObservationSet":
        cells = np.asarray(cells, dtype=int)
        noise = np.broadcast_to(np.asarray(noise_var, dtype=float), cells.shape)
        return cls(grid.centers[cells], values, np.diag(noise))

    def cells(self, grid: Grid) -> np.ndarray:
        return snap_points(grid, self.locations)

    def subset(self, idx) -> "ObservationSet":
        idx = np.asarray(idx, dtype=int)
        return ObservationSet(self.locations[idx], self.values[idx], self.noise_cov[np.ix_(idx, idx)])


@dataclass(frozen=True)
class GaussianFieldModel:
    grid: Grid
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        n = self.grid.n_cells
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if mean.shape != (n,) or cov.shape != (n, n):
            raise ValueError(f"model shapes {mean.shape}, {cov.shape} do not match grid of {n} cells")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.cov).copy()


def prior_model(grid: Grid, kernel: KernelSpec, mean=0.0) -> GaussianFieldModel:
    cov = covariance_matrix(kernel, grid.centers)
    return GaussianFieldModel(grid, np.broadcast_to(mean, (grid.n_cells,)).astype(float), cov)


def _robust_cholesky(C, scale, jitter, max_jitter):
    j = jitter
    while True:
        try:
            Cj = C.copy()
            Cj[np.diag_indices_from(Cj)] += j * scale
            return sla.cho_factor(Cj, lower=True, check_finite=False), j
        except np.linalg.LinAlgError:
            if j >= max_jitter:
                raise
            j = max(10.0 * j, 1e-14)


def _merge_duplicates(obs: ObservationSet, grid: Grid) -> ObservationSet:
    """Drop repeated noiseless observations of one cell; reject conflicting ones."""
    idx = obs.cells(grid)
    uniq, first, counts = np.unique(idx, return_index=True, return_counts=True)
    if np.all(counts == 1):
        return obs
    noiseless = np.diag(obs.noise_cov) == 0
    keep = np.ones(len(obs), dtype=bool)
    conflicts = []
    for cell in uniq[counts > 1]:
        rows = np.flatnonzero(idx == cell)
        exact = rows[noiseless[rows]]
        if exact.size > 1:
            if np.ptp(obs.values[exact]) > 1e-12 * max(1.0, np.max(np.abs(obs.values[exact]))):
                conflicts.append(int(cell))
            keep[exact[1:]] = False
    if conflicts:
        raise ConditioningError(f"conflicting noiseless observations at duplicate cells {conflicts}")
    return obs.subset(np.flatnonzero(keep))


def condition(
    model: GaussianFieldModel,
    obs: ObservationSet,
    jitter: float = 1e-10,
    max_jitter: float = 1e-4,
) -> GaussianFieldModel:
    """Condition a gridded Gaussian model on point observations.

    Observation locations are snapped to cell centers. ``jitter`` is relative to
    the mean prior variance at the observation cells and escalates tenfold up to
    ``max_jitter`` when the observation covariance is not numerically positive
    definite.
    """
    if len(obs) == 0:
        return model
    obs = _merge_duplicates(obs, model.grid)
    idx = obs.cells(model.grid)
    Cs = model.cov[np.ix_(idx, idx)] + obs.noise_cov
    scale = float(np.mean(np.diag(model.cov)[idx]))
    if scale <= 0:
        scale = 1.0
    try:
        cf, used = _robust_cholesky(Cs, scale, jitter, max_jitter)
    except np.linalg.LinAlgError:
        uniq, counts = np.unique(idx, return_counts=True)
        dups = uniq[counts > 1].tolist()
        raise ConditioningError(
            f"observation covariance is singular after jitter {max_jitter:g}; "
            f"duplicate observation cells: {dups or 'none'}"
        ) from None
    if used > jitter:
        log.debug("conditioning needed jitter %.1e", used)
    resid = obs.values - model.mean[idx]
    Cx = model.cov[idx, :]
    alpha = sla.cho_solve(cf, resid, check_finite=False)
    # iterative refinement removes the jitter bias from the mean weights
    for _ in range(3):
        alpha = alpha + sla.cho_solve(cf, resid - Cs @ alpha, check_finite=False)
    mean = model.mean + Cx.T @ alpha
    V = sla.solve_triangular(cf[0], Cx, lower=True, check_finite=False)
    cov = model.cov - V.T @ V
    cov = 0.5 * (cov + cov.T)
    return GaussianFieldModel(model.grid, mean, cov)


def log_marginal_likelihood(
    kernel: KernelSpec, obs: ObservationSet, jitter: float = DEFAULT_JITTER, with_gradient: bool = False
):
    """Zero-mean Gaussian log marginal likelihood of the observations.

    The gradient is taken with respect to (log sigma, log length).
    """
    K, dKs, dKl = covariance_and_log_gradients(kernel, obs.locations)
    n = len(obs)
    Kj = K + np.eye(n) * jitter * kernel.variance
    dKs = 2.0 * Kj
    C = Kj + obs.noise_cov
    L = sla.cholesky(C, lower=True, check_finite=False)
    alpha = sla.cho_solve((L, True), obs.values, check_finite=False)
    lml = -0.5 * obs.values @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    if not with_gradient:
        return lml
    Cinv = sla.cho_solve((L, True), np.eye(n), check_finite=False)
    inner = np.outer(alpha, alpha) - Cinv
    grad = 0.5 * np.array([np.sum(inner * dKs), np.sum(inner * dKl)])
    return lml, grad


def fit_hyperparameters(
    family: str,
    obs: ObservationSet,
    n_starts: int = 8,
    seed: int = 0,
    jitter: float = DEFAULT_JITTER,
) -> KernelSpec:
    """Maximize the marginal likelihood over (sigma, length) from several random starts."""
    family = canonical_family(family)
    if len(obs) < 3:
        raise ValueError("at least 3 observations are needed to fit kernel hyperparameters")
    lo = np.log([SIGMA_BOUNDS[0], LENGTH_BOUNDS[0]])
    hi = np.log([SIGMA_BOUNDS[1], LENGTH_BOUNDS[1]])

    def negative(theta):
        spec = KernelSpec(family, *np.exp(theta))
        try:
            val, grad = log_marginal_likelihood(spec, obs, jitter, with_gradient=True)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros(2)
        if not np.isfinite(val):
            return 1e25, np.zeros(2)
        return -val, -grad

    rng = np.random.default_rng(seed)
    starts = rng.uniform(lo, hi, size=(n_starts, 2))
    best = None
    best_any = None
    for x0 in starts:
        res = minimize(negative, x0, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)))
        if best_any is None or res.fun < best_any.fun:
            best_any = res
        if res.success and res.fun < 1e24 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        _, g = negative(best_any.x)
        raise HyperparameterFitError(
            "marginal likelihood optimization failed from every start",
            best_params=np.exp(best_any.x),
            grad_norm=float(np.linalg.norm(g)),
        )
    sigma, length = np.exp(best.x)
    return KernelSpec(family, float(sigma), float(length))
