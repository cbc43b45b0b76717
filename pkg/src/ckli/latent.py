"""Two-facies log-diffusion fields through a logistic latent field.

``y = (y1 - y2) * expit(f / epsilon) + y2``. The latent field is conditioned on
facies labels with a Laplace-approximate logistic GP classifier, then inverted
with the same residual-plus-ridge objective as continuous fields.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.special import expit, log_expit

from . import fv
from .ensemble import EnsembleConfig, build_u_ckle, build_u_model
from .gpr import GaussianFieldModel, ObservationSet
from .grid import Grid
from .inverse import InversionConfig, InversionResult, Transform, invert
from .kernels import KernelSpec, covariance_matrix
from .kle import CKLE, _numerical_rank, decompose, spectrum

LABEL_TOL = 1e-6


class ClassificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BinaryFieldSpec:
    y1: float = 0.0
    y2: float = -math.log(10.0)
    epsilon: float = 1.0 / 30.0

    def __post_init__(self):
        if not self.y1 > self.y2:
            raise ValueError("y1 must exceed y2")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def to_dict(self) -> dict:
        return {"y1": self.y1, "y2": self.y2, "epsilon": self.epsilon}


def latent_to_y(spec: BinaryFieldSpec, f) -> np.ndarray:
    return (spec.y1 - spec.y2) * expit(np.asarray(f, dtype=float) / spec.epsilon) + spec.y2


def latent_to_y_derivative(spec: BinaryFieldSpec, f) -> np.ndarray:
    s = expit(np.asarray(f, dtype=float) / spec.epsilon)
    return (spec.y1 - spec.y2) * s * (1.0 - s) / spec.epsilon


def transform_for(spec: BinaryFieldSpec) -> Transform:
    return Transform(lambda f: latent_to_y(spec, f), lambda f: latent_to_y_derivative(spec, f))


def labels_from_values(spec: BinaryFieldSpec, values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    hi = np.abs(v - spec.y1) <= LABEL_TOL
    lo = np.abs(v - spec.y2) <= LABEL_TOL
    bad = ~(hi | lo)
    if np.any(bad):
        raise ClassificationError(f"observed values {v[bad][:5].tolist()} are not facies values {spec.y1}, {spec.y2}")
    return hi.astype(float)


def laplace_mode(K: np.ndarray, labels: np.ndarray, max_iters: int = 100, tol: float = 1e-12):
    """Posterior mode of the latent values at the labeled points.

    Newton iterations in the stable form of Rasmussen & Williams (Algorithm 3.1).
    Returns the mode, W = -d2 log p / df2 at the mode, and the Cholesky factor of
    I + W^1/2 K W^1/2.
    """
    n = labels.size
    f = np.zeros(n)
    obj_old = -np.inf
    for _ in range(max_iters):
        pi = expit(f)
        W = pi * (1.0 - pi)
        sw = np.sqrt(W)
        B = np.eye(n) + sw[:, None] * K * sw[None, :]
        L = sla.cholesky(B, lower=True, check_finite=False)
        grad = labels - pi
        b = W * f + grad
        c = sla.cho_solve((L, True), sw * (K @ b), check_finite=False)
        a = b - sw * c
        f_new = K @ a
        obj = -0.5 * a @ f_new + np.sum(labels * log_expit(f_new) + (1 - labels) * log_expit(-f_new))
        # Newton on a concave objective; damp if it overshoots
        step = 1.0
        while obj < obj_old - 1e-12 and step > 1e-6:
            step *= 0.5
            f_try = f + step * (f_new - f)
            a = np.linalg.lstsq(K, f_try, rcond=None)[0]
            obj = -0.5 * a @ f_try + np.sum(labels * log_expit(f_try) + (1 - labels) * log_expit(-f_try))
            f_new = f_try
        converged = abs(obj - obj_old) <= tol * max(1.0, abs(obj))
        f, obj_old = f_new, obj
        if converged:
            pi = expit(f)
            W = pi * (1.0 - pi)
            sw = np.sqrt(W)
            L = sla.cholesky(np.eye(n) + sw[:, None] * K * sw[None, :], lower=True, check_finite=False)
            return f, W, L
    raise ClassificationError(f"Laplace Newton iterations did not converge in {max_iters} steps")


def classify_latent(y_obs: ObservationSet, spec: BinaryFieldSpec, kernel: KernelSpec, grid: Grid) -> GaussianFieldModel:
    """Laplace-approximate conditional latent model on the grid cells."""
    cov = covariance_matrix(kernel, grid.centers)
    if len(y_obs) == 0:
        return GaussianFieldModel(grid, np.zeros(grid.n_cells), cov)
    labels = labels_from_values(spec, y_obs.values)
    idx = y_obs.cells(grid)
    K = cov[np.ix_(idx, idx)]
    f_hat, W, L = laplace_mode(K, labels)
    Kx = cov[idx, :]
    mean = Kx.T @ (labels - expit(f_hat))
    V = sla.solve_triangular(L, np.sqrt(W)[:, None] * Kx, lower=True, check_finite=False)
    post = cov - V.T @ V
    return GaussianFieldModel(grid, mean, 0.5 * (post + post.T))


def latent_expansion(latent_model: GaussianFieldModel, n_terms: int) -> CKLE:
    w, _ = spectrum(latent_model)
    if _numerical_rank(w) == 0:
        return CKLE.deterministic(latent_model.grid, latent_model.mean)
    return decompose(latent_model, max_terms=n_terms)


def invert_binary(
    latent_model: GaussianFieldModel,
    spec: BinaryFieldSpec,
    u_obs: ObservationSet,
    op: fv.ResidualOperator,
    cfg: InversionConfig,
    ens_cfg: EnsembleConfig,
    cache_dir=None,
    y_obs: ObservationSet | None = None,
) -> InversionResult:
    """Ensemble state model from latent realizations, then coefficient estimation through the logistic map."""
    transform = transform_for(spec)
    n_xi = cfg.n_xi if cfg.n_xi is not None else 100
    f_ckle = latent_expansion(latent_model, n_xi)
    tag = f"binary|{spec.y1}|{spec.y2}|{spec.epsilon}"
    u_model = build_u_model(f_ckle, op, ens_cfg, transform=transform.fn, cache_dir=cache_dir, cache_tag=tag)
    n_eta = cfg.n_eta if cfg.n_eta is not None else 900
    if not np.any(np.diag(u_model.cov) > 0):
        u_ckle = CKLE.deterministic(op.grid, u_model.mean)
    else:
        u_ckle = build_u_ckle(u_model, u_obs, n_eta)
    run_cfg = InversionConfig(cfg.gamma, cfg.max_iters, cfg.grad_tol, None, None, cfg.optimizer)
    # The residual alone cannot fix the facies level where no flux crosses;
    # the classified observations pin it through extra misfit rows.
    y_data = None
    if y_obs is not None and len(y_obs.values):
        y_data = (y_obs.cells(op.grid), np.asarray(y_obs.values, dtype=float))
    return invert(f_ckle, u_ckle, op, run_cfg, transform=transform, y_data=y_data)
