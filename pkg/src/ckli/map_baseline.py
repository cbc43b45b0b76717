"""H1-regularized MAP estimate with the forward problem eliminated.

Minimizes over the gridded log-diffusion field y

    ||u(y)[obs_u] - u_s||^2 + ||y[obs_y] - y_s||^2 + gamma * ||grad y||^2

where u(y) solves the finite-volume system exactly. Gradients of the state
misfit come from the discrete adjoint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import minimize

from . import fv
from .gpr import ObservationSet
from .grid import Grid

OPTIMIZERS = ("GaussNewton", "LBFGS")


class MapError(RuntimeError):
    pass


@dataclass(frozen=True)
class MapConfig:
    gamma: float = 1e-6
    max_iters: int = 200
    grad_tol: float = 1e-9
    optimizer: str = "GaussNewton"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.max_iters < 1 or not self.grad_tol > 0:
            raise ValueError("max_iters and grad_tol must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class MapResult:
    y_est: np.ndarray
    u_est: np.ndarray
    objective_history: list
    converged: bool
    final_grad_norm: float
    iterations: int
    message: str

    def summary(self) -> dict:
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "final_objective": float(self.objective_history[-1]),
            "final_grad_norm": float(self.final_grad_norm),
            "message": self.message,
        }


def gradient_operator(grid: Grid) -> sp.csr_matrix:
    """Forward differences across interior faces, scaled so ||D y||^2 approximates the integral of |grad y|^2.

    Differences that would reach outside the domain are dropped.
    """
    nx, ny = grid.nx, grid.ny
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    k = j * nx + i
    ax, bx = k[:, :-1].ravel(), k[:, 1:].ravel()
    ay, by = k[:-1, :].ravel(), k[1:, :].ravel()
    # (dy/h)^2 * area  ->  weight sqrt(area)/h per difference
    wx = np.sqrt(grid.cell_area) / grid.hx
    wy = np.sqrt(grid.cell_area) / grid.hy
    m = ax.size + ay.size
    rows = np.repeat(np.arange(m), 2)
    cols = np.column_stack([np.concatenate([ax, ay]), np.concatenate([bx, by])]).ravel()
    w = np.concatenate([np.full(ax.size, wx), np.full(ay.size, wy)])
    data = np.column_stack([-w, w]).ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(m, grid.n_cells))


class MapProblem:
    def __init__(self, y_obs: ObservationSet, u_obs: ObservationSet, op: fv.ResidualOperator, gamma: float):
        self.op = op
        grid = op.grid
        self.iy = y_obs.cells(grid)
        self.iu = u_obs.cells(grid)
        self.ys = y_obs.values
        self.us = u_obs.values
        self.gamma = float(gamma)
        self.D = gradient_operator(grid)
        self.L = (self.D.T @ self.D).tocsr()

    def _state(self, y):
        _, T, diag, b = fv._coefficients(self.op, y)
        ab = fv._banded(self.op, T, diag)
        cf = sla.cholesky_banded(ab, check_finite=False)
        u = sla.cho_solve_banded((cf, False), b, check_finite=False)
        return u, cf

    def objective(self, y):
        u, _ = self._state(y)
        eu = u[self.iu] - self.us
        ey = y[self.iy] - self.ys
        return float(eu @ eu + ey @ ey + self.gamma * (y @ (self.L @ y)))

    def objective_and_gradient(self, y):
        """Objective and its gradient; the state misfit term uses one adjoint solve."""
        y = np.asarray(y, dtype=float)
        u, cf = self._state(y)
        eu = u[self.iu] - self.us
        ey = y[self.iy] - self.ys
        Ly = self.L @ y
        F = float(eu @ eu + ey @ ey + self.gamma * (y @ Ly))
        rhs = np.zeros(y.size)
        np.add.at(rhs, self.iu, eu)
        lam = sla.cho_solve_banded((cf, False), rhs, check_finite=False)
        _, _, Jy = fv.full_residual_and_jacobians(self.op, u, y)
        g = -2.0 * (Jy.T @ lam)
        np.add.at(g, self.iy, 2.0 * ey)
        g += 2.0 * self.gamma * Ly
        return F, g

    def linearization(self, y):
        """Residual blocks and the state sensitivity at the observed cells."""
        u, cf = self._state(y)
        eu = u[self.iu] - self.us
        ey = y[self.iy] - self.ys
        n = y.size
        E = np.zeros((n, self.iu.size))
        E[self.iu, np.arange(self.iu.size)] = 1.0
        Z = sla.cho_solve_banded((cf, False), E, check_finite=False)
        _, _, Jy = fv.full_residual_and_jacobians(self.op, u, y)
        Ju = -(Jy.T @ Z).T
        return u, eu, ey, Ju


def _gauss_newton(prob: MapProblem, y0, cfg: MapConfig, c1=1e-4, min_step=1e-10):
    y = np.array(y0, dtype=float)
    n = y.size
    Lg = (prob.gamma * prob.L).toarray()
    history = []
    converged = False
    message = "maximum iterations reached"
    gnorm = float("nan")
    it = 0
    for it in range(cfg.max_iters + 1):
        u, eu, ey, Ju = prob.linearization(y)
        Ly = prob.L @ y
        F = float(eu @ eu + ey @ ey + prob.gamma * (y @ Ly))
        history.append(F)
        half_g = Ju.T @ eu + prob.gamma * Ly
        np.add.at(half_g, prob.iy, ey)
        gnorm = 2.0 * float(np.linalg.norm(half_g))
        if gnorm <= cfg.grad_tol:
            converged = True
            message = "gradient tolerance reached"
            break
        if it == cfg.max_iters:
            break
        H = Ju.T @ Ju + Lg
        H[prob.iy, prob.iy] += 1.0
        # tiny relative damping keeps the factorization well posed far from the data
        H[np.diag_indices(n)] += 1e-12 * np.max(np.diag(H))
        p = -sla.cho_solve(sla.cho_factor(H, check_finite=False), half_g, check_finite=False)
        slope = 2.0 * (half_g @ p)
        t = 1.0
        while True:
            try:
                Ft = prob.objective(y + t * p)
            except (ValueError, np.linalg.LinAlgError):
                Ft = np.inf
            if np.isfinite(Ft) and Ft <= F + c1 * t * slope:
                break
            t *= 0.5
            if t < min_step:
                break
        if t < min_step:
            message = "line search could not decrease the objective"
            break
        y = y + t * p
        if F - Ft <= 1e-15 * F:
            history.append(Ft)
            message = "objective stagnated"
            it += 1
            break
    return y, history, converged, gnorm, it, message


def _lbfgs(prob: MapProblem, y0, cfg: MapConfig):
    history = [prob.objective(y0)]
    res = minimize(
        prob.objective_and_gradient,
        y0,
        jac=True,
        method="L-BFGS-B",
        callback=lambda yk: history.append(prob.objective(yk)),
        options={"maxiter": cfg.max_iters, "gtol": cfg.grad_tol, "ftol": 1e-16, "maxcor": 30},
    )
    _, g = prob.objective_and_gradient(res.x)
    gnorm = float(np.linalg.norm(g))
    return res.x, history, gnorm <= cfg.grad_tol, gnorm, int(res.nit), str(res.message)


def map_invert(y_obs: ObservationSet, u_obs: ObservationSet, op: fv.ResidualOperator, cfg: MapConfig = MapConfig(), y0=None) -> MapResult:
    prob = MapProblem(y_obs, u_obs, op, cfg.gamma)
    y0 = np.zeros(op.grid.n_cells) if y0 is None else np.asarray(y0, dtype=float)
    try:
        if cfg.optimizer == "GaussNewton":
            y, hist, conv, gnorm, iters, msg = _gauss_newton(prob, y0, cfg)
        else:
            y, hist, conv, gnorm, iters, msg = _lbfgs(prob, y0, cfg)
    except fv.SolverError as exc:
        raise MapError(f"forward solve failed during MAP iterations: {exc}") from exc
    return MapResult(y, fv.solve(op, y), hist, conv, gnorm, iters, msg)
