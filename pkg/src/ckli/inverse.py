"""Physics-informed estimation of expansion coefficients.

Minimizes ``F(xi, eta) = ||r[u(eta), y(xi)]||^2 + gamma (||xi||^2 + ||eta||^2)``
where y and u are conditional KL expansions and r is the finite-volume
residual. The data misfit is absent because the conditional expansions honor
the observations by construction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from . import fv
from .kle import CKLE

log = logging.getLogger(__name__)

OPTIMIZERS = ("GaussNewton", "LBFGS")


class InversionError(RuntimeError):
    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = None if iterate is None else np.array(iterate, dtype=float)


@dataclass(frozen=True)
class InversionConfig:
    gamma: float = 1e-6
    max_iters: int = 100
    grad_tol: float = 1e-9
    n_xi: Optional[int] = None
    n_eta: Optional[int] = None
    optimizer: str = "GaussNewton"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.max_iters < 1 or not self.grad_tol > 0:
            raise ValueError("max_iters and grad_tol must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class InversionResult:
    xi: np.ndarray
    eta: np.ndarray
    y_est: np.ndarray
    u_est: np.ndarray
    objective_history: list = field(default_factory=list)
    converged: bool = False
    final_grad_norm: float = float("nan")
    iterations: int = 0
    message: str = ""

    def summary(self) -> dict:
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "final_objective": float(self.objective_history[-1]) if self.objective_history else None,
            "final_grad_norm": float(self.final_grad_norm),
            "message": self.message,
        }


class Transform:
    """Pointwise map from expansion values to the log-diffusion field."""

    def __init__(self, fn: Callable, deriv: Callable):
        self.fn = fn
        self.deriv = deriv


class PickleProblem:
    """Residual-plus-ridge least squares in the expansion coefficients.

    ``y_data`` optionally appends misfit rows ``y[cells] - values`` for
    parameter observations that the expansion does not honor by construction
    (soft-classified latent fields).
    """

    def __init__(
        self,
        y_ckle: CKLE,
        u_ckle: CKLE,
        op: fv.ResidualOperator,
        gamma: float,
        transform: Optional[Transform] = None,
        y_data=None,
    ):
        if y_ckle.grid.n_cells != op.grid.n_cells or u_ckle.grid.n_cells != op.grid.n_cells:
            raise InversionError("expansions and residual operator live on different grids")
        self.y_ckle = y_ckle
        self.u_ckle = u_ckle
        self.op = op
        self.gamma = float(gamma)
        self.transform = transform
        self.n_xi = y_ckle.n_terms
        self.n_eta = u_ckle.n_terms
        if y_data is None:
            self.data_cells = np.zeros(0, dtype=int)
            self.data_values = np.zeros(0)
        else:
            self.data_cells = np.asarray(y_data[0], dtype=int)
            self.data_values = np.asarray(y_data[1], dtype=float)

    def split(self, z):
        return z[: self.n_xi], z[self.n_xi :]

    def fields(self, z):
        xi, eta = self.split(z)
        f = self.y_ckle.mean + self.y_ckle.modes @ xi
        y = f if self.transform is None else self.transform.fn(f)
        u = self.u_ckle.mean + self.u_ckle.modes @ eta
        return f, y, u

    def residual(self, z):
        _, y, u = self.fields(z)
        r = fv.residual(self.op, u, y)
        if self.data_cells.size:
            r = np.concatenate([r, y[self.data_cells] - self.data_values])
        return r

    def objective(self, z):
        r = self.residual(z)
        return float(r @ r + self.gamma * (z @ z))

    def residual_and_jacobian(self, z):
        f, y, u = self.fields(z)
        r, A, Jy = fv.full_residual_and_jacobians(self.op, u, y)
        rows = self.op.residual_cells
        r = r[rows]
        Psi_y = self.y_ckle.modes
        if self.transform is not None:
            Psi_y = self.transform.deriv(f)[:, None] * Psi_y
        J = np.hstack([Jy[rows] @ Psi_y, A[rows] @ self.u_ckle.modes])
        if self.data_cells.size:
            r = np.concatenate([r, y[self.data_cells] - self.data_values])
            Jd = np.hstack([Psi_y[self.data_cells], np.zeros((self.data_cells.size, self.n_eta))])
            J = np.vstack([J, Jd])
        return r, J

    def objective_and_gradient(self, z):
        r, J = self.residual_and_jacobian(z)
        F = float(r @ r + self.gamma * (z @ z))
        g = 2.0 * (J.T @ r + self.gamma * z)
        return F, g


def objective_and_gradient(y_ckle: CKLE, u_ckle: CKLE, op: fv.ResidualOperator, gamma: float, xi, eta, transform=None, y_data=None):
    prob = PickleProblem(y_ckle, u_ckle, op, gamma, transform, y_data)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if xi.shape != (prob.n_xi,) or eta.shape != (prob.n_eta,):
        raise InversionError("coefficient vector lengths do not match the expansions")
    return prob.objective_and_gradient(np.concatenate([xi, eta]))


def gauss_newton(prob, z0, max_iters, grad_tol, c1=1e-4, min_step=1e-10):
    """Damped Gauss-Newton with Armijo backtracking for residual + ridge objectives."""
    z = np.array(z0, dtype=float)
    history = []
    message = "maximum iterations reached"
    converged = False
    gnorm = float("nan")
    it = 0
    for it in range(max_iters + 1):
        try:
            r, J = prob.residual_and_jacobian(z)
            F = float(r @ r + prob.gamma * (z @ z))
        except ValueError as exc:
            raise InversionError(f"non-finite objective at iteration {it}: {exc}", z) from None
        if not np.isfinite(F):
            raise InversionError(f"non-finite objective at iteration {it}", z)
        history.append(F)
        rhs = J.T @ r + prob.gamma * z
        g = 2.0 * rhs
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol:
            converged = True
            message = "gradient tolerance reached"
            break
        if it == max_iters:
            break
        H = J.T @ J
        H[np.diag_indices_from(H)] += prob.gamma
        p = -sla.cho_solve(sla.cho_factor(H, check_finite=False), rhs, check_finite=False)
        slope = g @ p
        t = 1.0
        while True:
            zt = z + t * p
            try:
                Ft = prob.objective(zt)
            except ValueError:
                Ft = np.inf
            if np.isfinite(Ft) and Ft <= F + c1 * t * slope:
                break
            t *= 0.5
            if t < min_step:
                break
        if t < min_step:
            message = "line search could not decrease the objective"
            break
        if F - Ft <= 1e-15 * max(F, 1e-300):
            z = zt
            history.append(Ft)
            _, gz = prob.objective_and_gradient(z)
            gnorm = float(np.linalg.norm(gz))
            converged = gnorm <= grad_tol
            message = "objective stagnated"
            it += 1
            break
        z = zt
    return z, history, converged, gnorm, it, message


def lbfgs(prob, z0, max_iters, grad_tol):
    history = []

    def fun(z):
        try:
            F, g = prob.objective_and_gradient(z)
        except ValueError as exc:
            raise InversionError(f"non-finite objective during line search: {exc}", z) from None
        if not np.isfinite(F):
            raise InversionError("non-finite objective during line search", z)
        return F, g

    res = minimize(
        fun,
        z0,
        jac=True,
        method="L-BFGS-B",
        callback=lambda zk: history.append(prob.objective(zk)),
        options={"maxiter": max_iters, "gtol": grad_tol, "ftol": 1e-16, "maxcor": 30},
    )
    F, g = prob.objective_and_gradient(res.x)
    history.insert(0, prob.objective(np.asarray(z0, dtype=float)))
    gnorm = float(np.linalg.norm(g))
    return res.x, history, gnorm <= grad_tol, gnorm, int(res.nit), str(res.message)


def minimize_problem(prob, cfg: InversionConfig, z0=None):
    z0 = np.zeros(prob.n_xi + prob.n_eta) if z0 is None else np.asarray(z0, dtype=float)
    if cfg.optimizer == "GaussNewton":
        return gauss_newton(prob, z0, cfg.max_iters, cfg.grad_tol)
    return lbfgs(prob, z0, cfg.max_iters, cfg.grad_tol)


def _check_counts(y_ckle, u_ckle, cfg):
    if cfg.n_xi is not None and cfg.n_xi != y_ckle.n_terms:
        raise InversionError(f"config expects {cfg.n_xi} parameter terms, expansion has {y_ckle.n_terms}")
    if cfg.n_eta is not None and cfg.n_eta != u_ckle.n_terms:
        raise InversionError(f"config expects {cfg.n_eta} state terms, expansion has {u_ckle.n_terms}")


def invert(
    y_ckle: CKLE,
    u_ckle: CKLE,
    op: fv.ResidualOperator,
    cfg: InversionConfig,
    transform: Optional[Transform] = None,
    y_data=None,
) -> InversionResult:
    """Estimate the expansion coefficients, starting from the conditional means."""
    _check_counts(y_ckle, u_ckle, cfg)
    prob = PickleProblem(y_ckle, u_ckle, op, cfg.gamma, transform, y_data)
    z, history, converged, gnorm, iters, message = minimize_problem(prob, cfg)
    if not converged:
        log.info("inversion stopped without meeting grad_tol: %s (|g|=%.2e)", message, gnorm)
    xi, eta = prob.split(z)
    _, y, u = prob.fields(z)
    return InversionResult(xi.copy(), eta.copy(), y, u, history, converged, gnorm, iters, message)
