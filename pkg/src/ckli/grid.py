"""Uniform cell-centered grid on the unit square.

Cells are indexed row-major, ``k = j * nx + i``, where ``i`` runs along x1 and
``j`` along x2. Every other module (covariance matrices, KLE modes, FV
operators) shares this layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    centers: np.ndarray = field(repr=False, compare=False)

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    def index(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    def ij(self, k):
        k = np.asarray(k)
        return k % self.nx, k // self.nx

    def as_image(self, values: np.ndarray) -> np.ndarray:
        """Reshape a cell vector to an (ny, nx) array, row j holding x2 = (j+0.5)hy."""
        return np.asarray(values).reshape(self.ny, self.nx)


def build_grid(nx: int, ny: int) -> Grid:
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise ValueError(f"grid needs at least 2 cells per direction, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    x1 = (np.arange(nx) + 0.5) / nx
    x2 = (np.arange(ny) + 0.5) / ny
    X1, X2 = np.meshgrid(x1, x2)
    centers = np.column_stack([X1.ravel(), X2.ravel()])
    centers.flags.writeable = False
    return Grid(nx, ny, centers)


def nearest_cell(grid: Grid, point) -> int:
    """Index of the cell center closest to ``point``; ties go to the smallest index."""
    p = np.asarray(point, dtype=float)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise ValueError(f"expected a coordinate pair, got {point!r}")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError(f"point {tuple(p)} lies outside the unit square")
    d2 = np.sum((grid.centers - p) ** 2, axis=1)
    # argmin returns the first minimizer, which is the smallest linear index
    return int(np.argmin(d2))


def snap_points(grid: Grid, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        return np.zeros(0, dtype=int)
    return np.array([nearest_cell(grid, p) for p in pts], dtype=int)
