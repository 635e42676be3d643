"""Pair correlation and variogram estimates for choosing a truncation distance."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import PointPattern
from .errors import ConfigError, DataError

__all__ = [
    "PCFCurve",
    "VariogramCurve",
    "default_bandwidth",
    "epanechnikov",
    "pcf_estimate",
    "indicator_variogram",
    "write_curve",
]


@dataclass
class PCFCurve:
    r: np.ndarray
    g: np.ndarray
    unreliable: np.ndarray
    bandwidth: float


@dataclass
class VariogramCurve:
    h: np.ndarray
    gamma: np.ndarray
    npairs: np.ndarray
    tol: float


def epanechnikov(t, b: float):
    t = np.asarray(t, dtype=float) / b
    return np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t) / b, 0.0)


def default_bandwidth(pattern: PointPattern) -> float:
    """``0.15 * sqrt(|W| / n)``."""
    if len(pattern) == 0:
        raise DataError("empty pattern")
    return 0.15 * math.sqrt(pattern.window.area / len(pattern))


def pcf_estimate(pattern: PointPattern, intensity, bandwidth: float | None = None, rgrid=None) -> PCFCurve:
    """Kernel estimate of the inhomogeneous pair correlation function.

    ``g(r) = sum_{x != x'} k_b(|u - u'| - r) / (2 pi r zeta(x) zeta(x') |W cap W_{u-u'}|)``
    with an Epanechnikov kernel and the translation edge correction. Values at
    ``r <= bandwidth`` are returned but flagged unreliable.

    Parameters
    ----------
    pattern : PointPattern
    intensity : array_like or float
        Positive intensity at each point (a constant broadcasts).
    bandwidth : float, optional
        Defaults to :func:`default_bandwidth`.
    rgrid : array_like
        Positive distances.
    """
    n = len(pattern)
    if n < 2:
        raise DataError("pair correlation needs at least two points")
    lam = np.broadcast_to(np.asarray(intensity, dtype=float), (n,))
    if not np.all(lam > 0) or not np.all(np.isfinite(lam)):
        raise DataError("intensities must be positive and finite")
    b = default_bandwidth(pattern) if bandwidth is None else float(bandwidth)
    if not b > 0:
        raise ConfigError("bandwidth must be positive")
    if rgrid is None:
        raise ConfigError("rgrid is required")
    r = np.atleast_1d(np.asarray(rgrid, dtype=float))
    if np.any(r <= 0):
        raise ConfigError("pair correlation distances must be positive")

    w = pattern.window
    pairs = cKDTree(pattern.xy).query_pairs(float(r.max() + b), output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    dxy = pattern.xy[i] - pattern.xy[j]
    d = np.hypot(dxy[:, 0], dxy[:, 1])
    overlap = (w.width - np.abs(dxy[:, 0])) * (w.height - np.abs(dxy[:, 1]))
    # each unordered pair stands for both orderings
    weight = 2.0 / (lam[i] * lam[j] * overlap)
    g = np.array([np.sum(epanechnikov(d - rk, b) * weight) for rk in r]) / (2.0 * np.pi * r)
    return PCFCurve(r=r, g=g, unreliable=r <= b, bandwidth=b)


def indicator_variogram(points, residuals, hgrid, tol: float) -> VariogramCurve:
    """Empirical semivariogram ``(1/2) mean (r - r')^2`` over pairs with distance in ``h +- tol``.

    Bins without pairs give ``nan``.
    """
    xy = np.asarray(points.xy if isinstance(points, PointPattern) else points, dtype=float).reshape(-1, 2)
    res = np.asarray(residuals, dtype=float).reshape(-1)
    if xy.shape[0] < 2:
        raise DataError("variogram needs at least two points")
    if res.size != xy.shape[0]:
        raise DataError("need one residual per point")
    if not tol > 0:
        raise ConfigError("bin half-width must be positive")
    h = np.atleast_1d(np.asarray(hgrid, dtype=float))
    if np.any(h < 0):
        raise ConfigError("lags must be non-negative")
    pairs = cKDTree(xy).query_pairs(float(h.max() + tol), output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    d = np.hypot(*(xy[i] - xy[j]).T)
    sq = 0.5 * (res[i] - res[j]) ** 2
    gam = np.full(h.size, np.nan)
    cnt = np.zeros(h.size, dtype=np.int64)
    for k, hk in enumerate(h):
        sel = np.abs(d - hk) <= tol
        cnt[k] = int(sel.sum())
        if cnt[k]:
            gam[k] = float(sq[sel].mean())
    return VariogramCurve(h=h, gamma=gam, npairs=cnt, tol=float(tol))


def write_curve(path, x, y, names=("r", "value"), provenance: dict | None = None) -> None:
    """Two-column CSV; ``nan`` is written as an empty field."""
    with open(path, "w", newline="") as fh:
        for k, v in (provenance or {}).items():
            fh.write(f"# {k}: {v}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(names)
        for a, b in zip(np.asarray(x, dtype=float), np.asarray(y, dtype=float)):
            wr.writerow([repr(float(a)), "" if np.isnan(b) else repr(float(b))])
