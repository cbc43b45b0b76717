"""Monte Carlo mean and covariance of the state, and its conditional expansion."""
from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import fv
from .gpr import GaussianFieldModel, ObservationSet, condition
from .kle import CKLE, DegenerateFieldError, decompose

log = logging.getLogger(__name__)

DEFAULT_N_ENS = 5000


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnsembleConfig:
    n_ens: int = DEFAULT_N_ENS
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_ens < 2:
            raise ValueError("n_ens must be at least 2")
        if self.workers < 1:
            raise ValueError("workers must be positive")


def realization_coefficients(seed: int, index: int, n_terms: int) -> np.ndarray:
    """Coefficients of realization ``index``; depends only on (seed, index)."""
    return np.random.default_rng([int(seed), int(index)]).standard_normal(n_terms)


def _solve_chunk(y_ckle, op, seed, indices, transform, out):
    for i in indices:
        xi = realization_coefficients(seed, i, y_ckle.n_terms)
        y = y_ckle.mean + y_ckle.modes @ xi
        if transform is not None:
            y = transform(y)
        try:
            out[i] = fv.solve(op, y)
        except Exception as exc:
            raise EnsembleError(f"forward solve failed for realization {i} (seed {seed})") from exc


def simulate(y_ckle: CKLE, op: fv.ResidualOperator, cfg: EnsembleConfig, transform: Optional[Callable] = None) -> np.ndarray:
    """State realizations, one row per ensemble member, in member order."""
    out = np.empty((cfg.n_ens, op.grid.n_cells))
    idx = np.arange(cfg.n_ens)
    if cfg.workers == 1:
        _solve_chunk(y_ckle, op, cfg.seed, idx, transform, out)
    else:
        chunks = np.array_split(idx, cfg.workers)
        with ThreadPoolExecutor(cfg.workers) as pool:
            for f in [pool.submit(_solve_chunk, y_ckle, op, cfg.seed, c, transform, out) for c in chunks]:
                f.result()
    return out


def ensemble_statistics(U: np.ndarray):
    """Sample mean and unbiased sample covariance of the rows of ``U``."""
    n = U.shape[0]
    mean = U.mean(axis=0)
    D = U - mean
    cov = D.T @ D / (n - 1)
    return mean, 0.5 * (cov + cov.T)


def cache_key(y_ckle: CKLE, op: fv.ResidualOperator, cfg: EnsembleConfig, tag: str = "") -> str:
    h = hashlib.sha256()
    for arr in (y_ckle.mean, y_ckle.modes):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(f"{op.grid.nx}x{op.grid.ny}|{op.u_left}|{op.u_right}|{cfg.n_ens}|{cfg.seed}|{tag}".encode())
    return h.hexdigest()[:24]


def build_u_model(
    y_ckle: CKLE,
    op: fv.ResidualOperator,
    cfg: EnsembleConfig,
    transform: Optional[Callable] = None,
    cache_dir=None,
    cache_tag: str = "",
) -> GaussianFieldModel:
    """Unconditional ensemble model of the state.

    Each member draws standard normal coefficients, evaluates the parameter
    expansion (optionally mapped through ``transform``), and solves the forward
    problem. With ``cache_dir`` the mean and covariance are stored keyed on
    the expansion, grid and ensemble settings.
    """
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"ens_{cache_key(y_ckle, op, cfg, cache_tag)}.npz"
        if path.exists():
            with np.load(path) as data:
                return GaussianFieldModel(op.grid, data["mean"], data["cov"])
    if y_ckle.n_terms == 0:
        y = y_ckle.mean if transform is None else transform(y_ckle.mean)
        u = fv.solve(op, y)
        model = GaussianFieldModel(op.grid, u, np.zeros((u.size, u.size)))
    else:
        mean, cov = ensemble_statistics(simulate(y_ckle, op, cfg, transform))
        model = GaussianFieldModel(op.grid, mean, cov)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, mean=model.mean, cov=model.cov)
        tmp.replace(path)
    return model


def build_u_ckle(u_model: GaussianFieldModel, u_obs: ObservationSet, n_eta: int) -> CKLE:
    cond = condition(u_model, u_obs)
    prior_scale = float(np.max(np.diag(u_model.cov), initial=0.0))
    if not np.max(np.diag(cond.cov), initial=0.0) > 1e-8 * prior_scale:
        raise EnsembleError("conditional state covariance vanishes; increase the ensemble size")
    try:
        return decompose(cond, max_terms=n_eta)
    except DegenerateFieldError:
        raise EnsembleError("conditional state covariance is numerically zero; increase the ensemble size") from None
