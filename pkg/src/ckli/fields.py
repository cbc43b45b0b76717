"""Synthetic reference fields, observation sampling and error metrics."""
from __future__ import annotations

import zlib

import numpy as np
import scipy.linalg as sla

from .gpr import ObservationSet
from .grid import Grid
from .kernels import KernelSpec, covariance_matrix


def derive_seed(seed: int, tag: str) -> int:
    """Independent child seed for a named stage of a replica."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(tag.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def cholesky_factor(cov: np.ndarray, jitter: float = 1e-10, max_jitter: float = 1e-3) -> np.ndarray:
    scale = float(np.mean(np.diag(cov)))
    j = jitter
    n = cov.shape[0]
    while True:
        try:
            return sla.cholesky(cov + j * scale * np.eye(n), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            if j >= max_jitter:
                raise
            j *= 10.0


def generate_reference(kernel: KernelSpec, grid: Grid, seed: int, jitter: float = 1e-10) -> np.ndarray:
    """One zero-mean Gaussian draw on the cell centers."""
    L = cholesky_factor(covariance_matrix(kernel, grid.centers), jitter)
    z = np.random.default_rng(seed).standard_normal(grid.n_cells)
    return L @ z


def generate_references(kernel: KernelSpec, grid: Grid, seed: int, count: int, jitter: float = 1e-10) -> np.ndarray:
    L = cholesky_factor(covariance_matrix(kernel, grid.centers), jitter)
    z = np.random.default_rng(seed).standard_normal((grid.n_cells, count))
    return (L @ z).T


def sample_observations(field, grid: Grid, count: int, seed: int) -> ObservationSet:
    field = np.asarray(field, dtype=float)
    if count > grid.n_cells:
        raise ValueError(f"cannot observe {count} distinct cells out of {grid.n_cells}")
    if count < 0:
        raise ValueError("count must be nonnegative")
    cells = np.sort(np.random.default_rng(seed).choice(grid.n_cells, size=count, replace=False))
    return ObservationSet.at_cells(grid, cells, field[cells])


def relative_lp_error(reference, estimate, p: int = 2) -> float:
    reference = np.asarray(reference, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if reference.shape != estimate.shape:
        raise ValueError("reference and estimate differ in length")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    denom = np.linalg.norm(reference, ord=p)
    if denom == 0:
        raise ValueError("reference field has zero norm")
    return float(np.linalg.norm(reference - estimate, ord=p) / denom)
