"""Truncated (conditional) Karhunen-Loeve expansions of gridded Gaussian models."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .gpr import GaussianFieldModel
from .grid import Grid

log = logging.getLogger(__name__)


class DegenerateFieldError(ValueError):
    pass


@dataclass(frozen=True)
class CKLE:
    """Mean plus scaled modes: ``field = mean + modes @ coeffs``.

    Column i of ``modes`` is sqrt(eigenvalue_i) * phi_i at the cell centers,
    where the phi_i are orthonormal under the cell-area weighted inner product.
    """

    grid: Grid
    mean: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_terms(self) -> int:
        return self.modes.shape[1]

    @property
    def eigenfunctions(self) -> np.ndarray:
        scale = np.sqrt(self.eigenvalues)
        out = np.zeros_like(self.modes)
        ok = scale > 0
        out[:, ok] = self.modes[:, ok] / scale[ok]
        return out

    @classmethod
    def deterministic(cls, grid: Grid, mean) -> "CKLE":
        mean = np.asarray(mean, dtype=float)
        return cls(grid, mean, np.zeros((grid.n_cells, 0)), np.zeros(0))

    def truncated(self, n_terms: int) -> "CKLE":
        return CKLE(self.grid, self.mean, self.modes[:, :n_terms], self.eigenvalues[:n_terms])

    def save(self, path) -> None:
        np.savez(
            path,
            nx=self.grid.nx,
            ny=self.grid.ny,
            mean=self.mean,
            modes=self.modes,
            eigenvalues=self.eigenvalues,
        )

    @classmethod
    def load(cls, path, grid: Grid | None = None) -> "CKLE":
        from .grid import build_grid

        with np.load(path) as data:
            if grid is None:
                grid = build_grid(int(data["nx"]), int(data["ny"]))
            elif (grid.nx, grid.ny) != (int(data["nx"]), int(data["ny"])):
                raise ValueError("cached expansion was built on a different grid")
            return cls(grid, data["mean"], data["modes"], data["eigenvalues"])


def spectrum(model: GaussianFieldModel):
    """Eigenpairs of the area-weighted covariance, sorted by decreasing eigenvalue.

    Returns eigenvalues (clamped at zero) and eigenfunctions normalized so that
    ``cell_area * phi_i @ phi_j == delta_ij``.
    """
    area = model.grid.cell_area
    cov = 0.5 * (model.cov + model.cov.T)
    w, v = sla.eigh(area * cov, check_finite=False)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    w = np.clip(w, 0.0, None)
    return w, v / np.sqrt(area)


def _numerical_rank(w: np.ndarray) -> int:
    if w.size == 0 or w[0] <= 0:
        return 0
    tol = w[0] * w.size * np.finfo(float).eps
    return int(np.sum(w > tol))


def choose_truncation(
    eigenvalues, rtol: float | None = None, atol: float | None = None, max_terms: int | None = None
) -> int:
    """Smallest M meeting every requested criterion.

    ``rtol`` is a capture fraction: the retained eigenvalue sum must be at least
    ``rtol`` times the total. ``atol`` bounds the discarded tail. The result is
    capped by ``max_terms`` and by the numerical rank.
    """
    w = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    rank = _numerical_rank(w)
    total = w.sum()
    kept = np.cumsum(w)
    m = 0 if (rtol is not None or atol is not None) else rank
    if rtol is not None:
        if not 0 < rtol <= 1:
            raise ValueError("rtol must lie in (0, 1]")
        m = max(m, int(np.searchsorted(kept, rtol * total * (1 - 1e-12))) + 1)
    if atol is not None:
        if atol < 0:
            raise ValueError("atol must be nonnegative")
        tail = total - kept
        m = max(m, int(np.argmax(tail <= atol)) + 1 if np.any(tail <= atol) else w.size)
    if max_terms is not None:
        m = min(m, int(max_terms))
    return min(m, rank)


def decompose(
    model: GaussianFieldModel,
    rtol: float | None = None,
    atol: float | None = None,
    max_terms: int | None = None,
) -> CKLE:
    if rtol is None and atol is None and max_terms is None:
        raise ValueError("give at least one of rtol, atol, max_terms")
    w, phi = spectrum(model)
    rank = _numerical_rank(w)
    if rank == 0:
        raise DegenerateFieldError("covariance has no positive eigenvalues")
    m = choose_truncation(w, rtol, atol, max_terms)
    if max_terms is not None and rtol is None and atol is None and max_terms > rank:
        log.warning("requested %d terms but only %d eigenvalues are positive; truncating", max_terms, rank)
    modes = phi[:, :m] * np.sqrt(w[:m])
    return CKLE(model.grid, model.mean.copy(), modes, w[:m].copy())


def evaluate(ckle: CKLE, coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] != ckle.n_terms:
        raise ValueError(f"expected {ckle.n_terms} coefficients, got {coeffs.shape[0]}")
    if coeffs.ndim == 1:
        return ckle.mean + ckle.modes @ coeffs
    return ckle.mean[:, None] + ckle.modes @ coeffs


def sample(ckle: CKLE, rng_seed: int, count: int) -> np.ndarray:
    """Draw ``count`` fields with i.i.d. standard normal coefficients; rows are fields."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(rng_seed)
    xi = rng.standard_normal((count, ckle.n_terms))
    return ckle.mean[None, :] + xi @ ckle.modes.T


def tail_variance(model: GaussianFieldModel, ckle: CKLE) -> np.ndarray:
    """Pointwise variance left out by the truncation, sum_{i>M} lambda_i phi_i(x)^2."""
    return np.clip(np.diag(model.cov) - np.sum(ckle.modes**2, axis=1), 0.0, None)
