"""Cell-centered two-point-flux finite volumes for div(exp(y) grad u) = 0.

Boundary conditions: u = 1 on x1 = 0, u = 0 on x1 = 1, no flux on x2 = 0, 1.
The discrete system is ``A(y) u = b(y)`` with harmonic-mean face
transmissibilities; Dirichlet faces use the half-cell distance. The PDE residual
is ``A(y) u - b(y)`` restricted to a chosen set of cells.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ResidualOperator:
    grid: Grid
    residual_cells: np.ndarray
    u_left: float = 1.0
    u_right: float = 0.0
    # interior faces: cells (a, b) and geometric factor (face length / center distance)
    face_a: np.ndarray = field(repr=False, default=None)
    face_b: np.ndarray = field(repr=False, default=None)
    face_geom: np.ndarray = field(repr=False, default=None)
    # Dirichlet faces: cell, geometric factor, boundary value
    bnd_cell: np.ndarray = field(repr=False, default=None)
    bnd_geom: np.ndarray = field(repr=False, default=None)
    bnd_value: np.ndarray = field(repr=False, default=None)

    @property
    def n_residuals(self) -> int:
        return len(self.residual_cells)

    @property
    def is_full(self) -> bool:
        return self.n_residuals == self.grid.n_cells


def _check_cells(cells, n):
    cells = np.asarray(cells, dtype=int)
    if cells.ndim != 1 or cells.size == 0:
        raise ValueError("residual_cells must be a nonempty 1-D index list")
    if np.any(cells < 0) or np.any(cells >= n):
        raise ValueError("residual cell index out of range")
    if np.any(np.diff(cells) <= 0):
        raise ValueError("residual_cells must be strictly increasing")
    return cells


def residual_operator(grid: Grid, residual_cells=None, u_left: float = 1.0, u_right: float = 0.0) -> ResidualOperator:
    nx, ny = grid.nx, grid.ny
    hx, hy = grid.hx, grid.hy
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    k = j * nx + i
    # x1-direction faces between (i, j) and (i+1, j)
    ax, bx = k[:, :-1].ravel(), k[:, 1:].ravel()
    # x2-direction faces between (i, j) and (i, j+1)
    ay, by = k[:-1, :].ravel(), k[1:, :].ravel()
    face_a = np.concatenate([ax, ay])
    face_b = np.concatenate([bx, by])
    face_geom = np.concatenate([np.full(ax.size, hy / hx), np.full(ay.size, hx / hy)])
    left, right = k[:, 0], k[:, -1]
    bnd_cell = np.concatenate([left, right])
    bnd_geom = np.full(bnd_cell.size, 2.0 * hy / hx)
    bnd_value = np.concatenate([np.full(left.size, float(u_left)), np.full(right.size, float(u_right))])
    cells = np.arange(grid.n_cells) if residual_cells is None else _check_cells(residual_cells, grid.n_cells)
    return ResidualOperator(grid, cells, float(u_left), float(u_right), face_a, face_b, face_geom, bnd_cell, bnd_geom, bnd_value)


def with_residual_cells(op: ResidualOperator, cells) -> ResidualOperator:
    return replace(op, residual_cells=_check_cells(cells, op.grid.n_cells))


def subsample_residuals(op: ResidualOperator, factor: int) -> ResidualOperator:
    """Keep residuals at cells whose (i, j) indices are both multiples of ``factor``."""
    factor = int(factor)
    g = op.grid
    if factor < 1 or g.nx % factor or g.ny % factor:
        raise ValueError(f"subsampling factor {factor} must divide nx={g.nx} and ny={g.ny}")
    i, j = np.meshgrid(np.arange(0, g.nx, factor), np.arange(0, g.ny, factor))
    return with_residual_cells(op, np.sort((j * g.nx + i).ravel()))


def _conductivity(y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("log-diffusion field has non-finite entries")
    with np.errstate(over="ignore"):
        K = np.exp(y)
    if not np.all(np.isfinite(K)):
        raise ValueError("log-diffusion field overflows exp")
    return K


def _transmissibilities(op: ResidualOperator, K):
    Ka, Kb = K[op.face_a], K[op.face_b]
    T = op.face_geom * 2.0 * Ka * Kb / (Ka + Kb)
    Tb = op.bnd_geom * K[op.bnd_cell]
    return T, Tb


def _coefficients(op: ResidualOperator, y):
    n = op.grid.n_cells
    K = _conductivity(y)
    if K.shape != (n,):
        raise ValueError(f"field has length {K.shape}, expected {n}")
    T, Tb = _transmissibilities(op, K)
    diag = np.bincount(op.face_a, T, n) + np.bincount(op.face_b, T, n) + np.bincount(op.bnd_cell, Tb, n)
    b = np.bincount(op.bnd_cell, Tb * op.bnd_value, n)
    return K, T, diag, b


def _matvec(op: ResidualOperator, T, diag, u):
    n = diag.size
    return diag * u - np.bincount(op.face_a, T * u[op.face_b], n) - np.bincount(op.face_b, T * u[op.face_a], n)


def assemble(op: ResidualOperator, y):
    """Sparse matrix A(y) (CSR) and right-hand side b(y) for the full grid."""
    _, T, diag, b = _coefficients(op, y)
    n = diag.size
    rows = np.concatenate([np.arange(n), op.face_a, op.face_b])
    cols = np.concatenate([np.arange(n), op.face_b, op.face_a])
    data = np.concatenate([diag, -T, -T])
    A = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return A, b


def _banded(op: ResidualOperator, T, diag):
    # upper banded storage for solveh_banded: ab[bw + i - j, j] = A[i, j], i <= j
    bw = op.grid.nx
    ab = np.zeros((bw + 1, diag.size))
    ab[bw] = diag
    lo = np.minimum(op.face_a, op.face_b)
    hi = np.maximum(op.face_a, op.face_b)
    ab[bw + lo - hi, hi] = -T
    return ab


def factorize(A):
    return spla.splu(sp.csc_matrix(A))


def solve(op: ResidualOperator, y) -> np.ndarray:
    _, T, diag, b = _coefficients(op, y)
    try:
        u = sla.solveh_banded(_banded(op, T, diag), b, check_finite=False)
    except np.linalg.LinAlgError:
        A, _ = assemble(op, y)
        u, info = spla.cg(A, b, rtol=1e-13, maxiter=10 * len(b))
        if info != 0:
            raise SolverError(f"CG fallback did not converge (info={info})") from None
    rel = np.linalg.norm(_matvec(op, T, diag, u) - b) / max(np.linalg.norm(b), np.finfo(float).tiny)
    if not np.isfinite(rel) or rel > 1e-10:
        A, _ = assemble(op, y)
        cond = np.linalg.cond(A.toarray()) if A.shape[0] <= 4096 else float("nan")
        raise SolverError(f"forward solve relative residual {rel:.2e} (condition number ~{cond:.2e})")
    return u


def residual(op: ResidualOperator, u, y) -> np.ndarray:
    _, T, diag, b = _coefficients(op, y)
    u = np.asarray(u, dtype=float)
    if u.shape != b.shape:
        raise ValueError(f"state has length {u.shape}, expected {b.shape}")
    return (_matvec(op, T, diag, u) - b)[op.residual_cells]


def full_residual_and_jacobians(op: ResidualOperator, u, y):
    """Residual on every cell with d r/d u and d r/d y as CSR matrices (all rows)."""
    n = op.grid.n_cells
    K = _conductivity(y)
    u = np.asarray(u, dtype=float)
    A, b = assemble(op, y)
    r = A @ u - b
    Ka, Kb = K[op.face_a], K[op.face_b]
    s = Ka + Kb
    # d/dy_a of 2 Ka Kb / (Ka + Kb) = 2 Ka Kb^2 / s^2
    dT_da = op.face_geom * 2.0 * Ka * Kb * Kb / (s * s)
    dT_db = op.face_geom * 2.0 * Kb * Ka * Ka / (s * s)
    du = u[op.face_a] - u[op.face_b]
    Tb = op.bnd_geom * K[op.bnd_cell]
    rows = np.concatenate([op.face_a, op.face_a, op.face_b, op.face_b, op.bnd_cell])
    cols = np.concatenate([op.face_a, op.face_b, op.face_a, op.face_b, op.bnd_cell])
    data = np.concatenate([dT_da * du, dT_db * du, -dT_da * du, -dT_db * du, Tb * (u[op.bnd_cell] - op.bnd_value)])
    Jy = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return r, A, Jy


def residual_jacobians(op: ResidualOperator, u, y):
    """(d r/d u, d r/d y) restricted to the residual cells, as CSR matrices."""
    _, A, Jy = full_residual_and_jacobians(op, u, y)
    rows = op.residual_cells
    return A[rows], Jy[rows]


def boundary_fluxes(op: ResidualOperator, u, y):
    """Total flux entering through x1 = 0 and leaving through x1 = 1."""
    K = _conductivity(y)
    Tb = op.bnd_geom * K[op.bnd_cell]
    flux = Tb * (op.bnd_value - np.asarray(u)[op.bnd_cell])
    nl = op.grid.ny
    return float(np.sum(flux[:nl])), float(-np.sum(flux[nl:]))
