"""Isotropic stationary covariance kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("Gaussian", "Matern52", "Matern32", "Exponential")

_ALIASES = {
    "gaussian": "Gaussian",
    "rbf": "Gaussian",
    "squaredexponential": "Gaussian",
    "matern52": "Matern52",
    "matern5/2": "Matern52",
    "matern32": "Matern32",
    "matern3/2": "Matern32",
    "exponential": "Exponential",
}

DEFAULT_JITTER = 1e-8


def canonical_family(name: str) -> str:
    key = name.replace(" ", "").replace("_", "").replace("-", "").lower()
    try:
        return _ALIASES[key]
    except KeyError:
        raise ValueError(f"unknown kernel family {name!r}; expected one of {FAMILIES}") from None


@dataclass(frozen=True)
class KernelSpec:
    family: str
    sigma: float
    length: float

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (self.length > 0 and np.isfinite(self.length)):
            raise ValueError(f"length must be positive, got {self.length}")

    @property
    def variance(self) -> float:
        return self.sigma**2

    def to_dict(self) -> dict:
        return {"family": self.family, "sigma": float(self.sigma), "length": float(self.length)}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["family"], float(d["sigma"]), float(d["length"]))


def _correlation(family: str, s: np.ndarray) -> np.ndarray:
    # s = r / length
    if family == "Gaussian":
        return np.exp(-0.5 * s * s)
    if family == "Matern52":
        t = np.sqrt(5.0) * s
        return (1.0 + t + t * t / 3.0) * np.exp(-t)
    if family == "Matern32":
        t = np.sqrt(3.0) * s
        return (1.0 + t) * np.exp(-t)
    if family == "Exponential":
        return np.exp(-s)
    raise ValueError(family)


def _length_derivative(family: str, s: np.ndarray) -> np.ndarray:
    """length * d(correlation)/d(length), as a function of s = r / length."""
    if family == "Gaussian":
        return s * s * np.exp(-0.5 * s * s)
    if family == "Matern52":
        t = np.sqrt(5.0) * s
        return t * t * (1.0 + t) / 3.0 * np.exp(-t)
    if family == "Matern32":
        t = np.sqrt(3.0) * s
        return t * t * np.exp(-t)
    if family == "Exponential":
        return s * np.exp(-s)
    raise ValueError(family)


def kernel_eval(spec: KernelSpec, r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distances must be nonnegative")
    return spec.variance * _correlation(spec.family, r / spec.length)


def pairwise_distances(points_a, points_b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(points_a, dtype=float))
    b = np.atleast_2d(np.asarray(points_b, dtype=float))
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def covariance_matrix(spec: KernelSpec, points_a, points_b=None) -> np.ndarray:
    """Kernel matrix between two point lists; exactly symmetric when ``points_b`` is omitted."""
    if points_b is None:
        d = pairwise_distances(points_a, points_a)
        d = 0.5 * (d + d.T)
        return kernel_eval(spec, d)
    return kernel_eval(spec, pairwise_distances(points_a, points_b))


def covariance_and_log_gradients(spec: KernelSpec, points):
    """Kernel matrix and its derivatives with respect to log(sigma) and log(length)."""
    d = pairwise_distances(points, points)
    d = 0.5 * (d + d.T)
    s = d / spec.length
    K = spec.variance * _correlation(spec.family, s)
    dK_dlogsigma = 2.0 * K
    dK_dloglength = spec.variance * _length_derivative(spec.family, s)
    return K, dK_dlogsigma, dK_dloglength


def with_jitter(K: np.ndarray, variance: float, jitter: float = DEFAULT_JITTER) -> np.ndarray:
    out = np.array(K, dtype=float, copy=True)
    out[np.diag_indices_from(out)] += jitter * variance
    return out
