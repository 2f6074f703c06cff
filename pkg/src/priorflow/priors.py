"""Diagonal Gaussian priors: densities, CDF, scaled sampling, isotropy stats."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DiagonalGaussian:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if mean.ndim != 1 or mean.shape != std.shape:
            raise ValueError(f"mean {mean.shape} and std {std.shape} must be equal-length vectors")
        if not np.all(std > 0) or not np.all(np.isfinite(std)) or not np.all(np.isfinite(mean)):
            raise ValueError("std entries must be finite and > 0, mean finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def isotropic(cls, mean, std=1.0):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(mean, np.full_like(mean, float(std)))


def gaussian_log_pdf(g: DiagonalGaussian, z):
    """Log density of ``g`` at ``z`` (shape ``(n,)`` or ``(N, n)``)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1:] != (g.dim,):
        raise ValueError(f"point of shape {z.shape} does not match prior dimension {g.dim}")
    u = (z - g.mean) / g.std
    return -0.5 * np.sum(u * u, axis=-1) - np.sum(np.log(g.std)) - 0.5 * g.dim * LOG_2PI


def normal_pdf_1d(z, mu, sigma):
    z = np.asarray(z, dtype=float)
    u = (z - mu) / sigma
    return np.exp(-0.5 * u * u) / (sigma * math.sqrt(2.0 * math.pi))


def gaussian_cdf_1d(mu: float, sigma: float, t: float) -> float:
    """P(Z <= t) for Z ~ N(mu, sigma^2).

    Uses ``erfc`` on the lower tail so small probabilities keep full relative
    precision.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    return 0.5 * math.erfc(-(t - mu) / (sigma * math.sqrt(2.0)))


def sample(g: DiagonalGaussian, lam: float, rng, size=None):
    """Draw ``mean + std * eps`` with ``eps ~ N(0, lam^2 I)``.

    ``size=None`` returns one vector; otherwise an array ``(size, n)``.
    ``lam == 0`` returns the mean exactly.
    """
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"lambda must be finite and >= 0, got {lam}")
    shape = (g.dim,) if size is None else (int(size), g.dim)
    if lam == 0:
        return np.broadcast_to(g.mean, shape).copy()
    eps = rng.normal(0.0, lam, size=shape)
    return g.mean + g.std * eps


@dataclass(frozen=True)
class IsotropyStats:
    max: float
    min: float
    avg: float
    std: float

    def row(self, name: str) -> str:
        return f"{name},{self.max:.3f},{self.min:.3f},{self.avg:.3f},{self.std:.3f}"


def isotropy_stats(g: DiagonalGaussian) -> IsotropyStats:
    # population std: sigma is a fixed parameter vector, not a sample
    s = g.std
    return IsotropyStats(float(s.max()), float(s.min()), float(s.mean()), float(s.std()))
