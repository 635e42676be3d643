"""Influence covariates built from the previous census and design vectors.

Design layout (fixed so parameter files stay portable)::

    [intercepts (K one-hot, or 1 if common)] [mark (death model, optional)]
    [raster covariates in file order] [influence of species 1..p]

Recruit influences use the dispersal kernel or the competition index per
species (``InfluenceConfig.recruit_kernels``); death influences always use
the competition index.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import MarkedPoint, PointPattern, Window, mark_weighted_nearest
from .errors import ConfigError, DataError
from .fields import RasterField

__all__ = [
    "InfluenceConfig",
    "HistoryFrame",
    "dispersal_influence",
    "competition_index",
    "dispersal_values",
    "competition_values",
    "build_design",
    "design_matrix",
    "design_names",
    "TRUNCATION_FACTOR",
]

# competition sums ignore neighbours beyond TRUNCATION_FACTOR * kappa
TRUNCATION_FACTOR = 5.0

KERNELS = ("dispersal", "competition")


@dataclass(frozen=True)
class InfluenceConfig:
    """Ranges of the influence kernels, one entry per species.

    ``recruit_kernels`` picks the kernel for each species' influence on
    recruits. The default is dispersal for ``focal_species`` and competition
    for the others.
    """

    psi: tuple[float, ...]
    kappa: tuple[float, ...]
    divide_by_own_mark: bool = True
    recruit_kernels: tuple[str, ...] | None = None
    focal_species: int = 1

    def __post_init__(self):
        object.__setattr__(self, "psi", tuple(float(v) for v in self.psi))
        object.__setattr__(self, "kappa", tuple(float(v) for v in self.kappa))
        if len(self.psi) != len(self.kappa):
            raise ConfigError("psi and kappa need one entry per species")
        if any(v <= 0 for v in self.psi + self.kappa):
            raise ConfigError("psi and kappa must be positive")
        if self.psi and not 1 <= self.focal_species <= len(self.psi):
            raise ConfigError(f"focal species {self.focal_species} out of range")
        if self.recruit_kernels is None:
            kernels = tuple(
                "dispersal" if s == self.focal_species else "competition"
                for s in range(1, self.n_species + 1)
            )
            object.__setattr__(self, "recruit_kernels", kernels)
        else:
            object.__setattr__(self, "recruit_kernels", tuple(self.recruit_kernels))
        if len(self.recruit_kernels) != self.n_species or not set(self.recruit_kernels) <= set(KERNELS):
            raise ConfigError(f"recruit_kernels must list one of {KERNELS} per species")

    @property
    def n_species(self) -> int:
        return len(self.psi)


@dataclass(frozen=True)
class HistoryFrame:
    """Everything the census interval ``]census, census + 1]`` conditions on."""

    patterns: tuple[PointPattern, ...]
    covariates: tuple[RasterField, ...] = ()
    census: int = 0
    covariate_names: tuple[str, ...] | None = field(default=None, compare=False)
    window: Window | None = None

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(self.patterns))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        w = self.window
        if w is None:
            if self.patterns:
                w = self.patterns[0].window
            elif self.covariates:
                w = self.covariates[0].window
            else:
                raise ConfigError("history frame needs a window, a pattern or a covariate")
            object.__setattr__(self, "window", w)
        for pat in self.patterns:
            if pat.window != w:
                raise ConfigError("species patterns must share a window")
        for cov in self.covariates:
            if not cov.window.contains_window(w):
                raise ConfigError(
                    f"covariate window {cov.window.as_tuple()} does not cover {w.as_tuple()}"
                )
        if self.census < 0:
            raise ConfigError("census index must be non-negative")

    @property
    def q(self) -> int:
        return len(self.covariates)

    @property
    def p(self) -> int:
        return len(self.patterns)


def dispersal_values(xy, pattern: PointPattern, psi: float, ids=None) -> np.ndarray:
    """``exp(-(d / psi)^2)`` with ``d`` the mark-weighted nearest distance."""
    if psi <= 0:
        raise ConfigError("psi must be positive")
    d = mark_weighted_nearest(xy, pattern, ids)
    with np.errstate(over="ignore"):
        return np.exp(-((d / psi) ** 2))


def competition_values(xy, pattern: PointPattern, kappa: float, marks=None, ids=None,
                       divide_by_own_mark: bool = True, radius: float | None = None) -> np.ndarray:
    """Mark-weighted Gaussian-kernel sums over neighbours within ``radius``.

    ``radius`` defaults to ``TRUNCATION_FACTOR * kappa``. A query point is
    excluded from its own sum by id.
    """
    if kappa <= 0:
        raise ConfigError("kappa must be positive")
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    nq = xy.shape[0]
    out = np.zeros(nq)
    if nq == 0 or len(pattern) == 0:
        return out
    if radius is None:
        radius = TRUNCATION_FACTOR * kappa
    if not np.isfinite(radius):
        radius = 2.0 * max(pattern.window.diagonal, np.ptp(np.vstack([xy, pattern.xy]), axis=0).sum()) + 1.0
    recs = cKDTree(xy).sparse_distance_matrix(pattern.index.tree, radius, output_type="ndarray")
    i, j, d = recs["i"], recs["j"], recs["v"]
    if ids is not None:
        keep = pattern.ids[j] != np.asarray(ids, dtype=np.int64)[i]
        i, j, d = i[keep], j[keep], d[keep]
    w = pattern.marks[j] * np.exp(-((d / kappa) ** 2))
    # fixed-order reduction for reproducibility
    order = np.lexsort((j, i))
    out = np.bincount(i[order], weights=w[order], minlength=nq)
    if divide_by_own_mark:
        if marks is None:
            raise ConfigError("own marks are required when dividing by the own mark")
        out = out / np.asarray(marks, dtype=float).reshape(nq)
    return out


def dispersal_influence(x: MarkedPoint, pattern: PointPattern, psi: float) -> float:
    """Gaussian dispersal influence of ``pattern`` on ``x``, in [0, 1]."""
    return float(dispersal_values(np.asarray([x.u]), pattern, psi, np.asarray([x.id]))[0])


def competition_index(x: MarkedPoint, pattern: PointPattern, kappa: float,
                      divide_by_own_mark: bool = True) -> float:
    """Competition index of ``pattern`` at ``x`` (truncated at ``5 * kappa``)."""
    return float(
        competition_values(
            np.asarray([x.u]), pattern, kappa, np.asarray([x.m]), np.asarray([x.id]), divide_by_own_mark
        )[0]
    )


def design_names(model: str, K: int, q: int, p: int, *, include_mark: bool = True,
                 common_intercept: bool = False, covariate_names: Sequence[str] | None = None) -> list[str]:
    if model not in ("recruit", "death"):
        raise ConfigError(f"model must be 'recruit' or 'death', got {model!r}")
    names = ["beta0"] if common_intercept else [f"beta0[{k}]" for k in range(1, K + 1)]
    if model == "death" and include_mark:
        names.append("alpha")
    if covariate_names is not None and len(covariate_names) != q:
        raise ConfigError("need one covariate name per raster")
    names += [f"beta[{covariate_names[j]}]" if covariate_names else f"beta[{j + 1}]" for j in range(q)]
    names += [f"gamma[{l + 1}]" for l in range(p)]
    return names


def design_matrix(xy, frame: HistoryFrame, cfg: InfluenceConfig, model: str, K: int, *,
                  marks=None, ids=None, include_mark: bool = True,
                  common_intercept: bool = False) -> np.ndarray:
    """Design rows for many points evaluated against ``frame``.

    Parameters
    ----------
    xy : array_like, shape (n, 2)
    frame : HistoryFrame
        History at census ``k - 1``; row intercepts are one-hot at ``k``.
    cfg : InfluenceConfig
    model : {"recruit", "death"}
    K : int
        Number of census intervals.
    marks, ids : array_like, optional
        Own marks (needed for the mark column and for dividing competition
        sums) and ids (to exclude a tree from its own neighbourhood).
    """
    if model not in ("recruit", "death"):
        raise ConfigError(f"model must be 'recruit' or 'death', got {model!r}")
    if cfg.n_species != frame.p:
        raise ConfigError(f"influence config has {cfg.n_species} species, frame has {frame.p}")
    if not 0 <= frame.census < K:
        raise ConfigError(f"frame census {frame.census} outside 0..{K - 1}")
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    n = xy.shape[0]
    if marks is not None:
        marks = np.asarray(marks, dtype=float).reshape(n)
    cols = []

    if common_intercept:
        cols.append(np.ones((n, 1)))
    else:
        block = np.zeros((n, K))
        block[:, frame.census] = 1.0
        cols.append(block)

    if model == "death" and include_mark:
        if marks is None or np.any(np.isnan(marks)):
            raise DataError("death model with a mark term needs a mark for every tree")
        cols.append(marks[:, None])

    for cov in frame.covariates:
        cols.append(cov.sample(xy)[:, None] if n else np.zeros((0, 1)))

    for l, pat in enumerate(frame.patterns):
        kernel = cfg.recruit_kernels[l] if model == "recruit" else "competition"
        if kernel == "dispersal":
            v = dispersal_values(xy, pat, cfg.psi[l], ids)
        else:
            if cfg.divide_by_own_mark and (marks is None or np.any(np.isnan(marks))):
                raise DataError("competition index divided by own mark needs a mark for every point")
            v = competition_values(xy, pat, cfg.kappa[l], marks, ids, cfg.divide_by_own_mark)
        cols.append(v[:, None])

    return np.hstack(cols) if cols else np.zeros((n, 0))


def build_design(x: MarkedPoint, frame: HistoryFrame, cfg: InfluenceConfig, model: str, K: int, *,
                 include_mark: bool = True, common_intercept: bool = False) -> np.ndarray:
    """Design vector of a single marked point."""
    return design_matrix(
        np.asarray([x.u]), frame, cfg, model, K,
        marks=np.asarray([x.m]), ids=np.asarray([x.id]),
        include_mark=include_mark, common_intercept=common_intercept,
    )[0]
