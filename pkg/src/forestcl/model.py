"""Recruit intensity and death probability models and their composite-likelihood fits.

Recruits are fitted through the dummy-point logistic device: recruits of
census ``k`` (label 1) and a dummy Poisson pattern of intensity ``rho``
(label 0) enter a logistic regression with offset ``-log(rho)``. The mark
density ``f`` multiplies both the recruit intensity and the dummy intensity
and therefore cancels from every term of the fit; it only matters when
sampling dummy marks and when reporting :func:`recruit_intensity`.

Deaths are a plain logistic regression over the trees alive at the start
of each interval.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import logistic
from .core import CensusSeries, MarkedPoint, PointPattern, Window
from .covariates import HistoryFrame, InfluenceConfig, design_matrix, design_names
from .errors import ConfigError, ConvergenceError, DataError, NumericalError, SeparationWarning
from .fields import RasterField

log = logging.getLogger(__name__)

__all__ = [
    "RecruitParams",
    "DeathParams",
    "MarkDensity",
    "DummyConfig",
    "ModelSpec",
    "SolverConfig",
    "RecruitData",
    "DeathData",
    "FitResult",
    "recruit_intensity",
    "death_probability",
    "recruit_linear_predictor",
    "death_linear_predictor",
    "sample_dummy",
    "build_frames",
    "recruit_data",
    "death_data",
    "recruit_data_from_series",
    "death_data_from_series",
    "recruit_score",
    "recruit_census_scores",
    "death_score",
    "death_census_scores",
    "recruit_loglik",
    "death_loglik",
    "fit_recruits",
    "fit_deaths",
    "fit_at",
    "write_params",
    "read_params",
]

EXP_OVERFLOW = 709.0
ETA_CLAMP = 500.0


@dataclass(frozen=True, eq=False)
class RecruitParams:
    """Intercepts (one per census, or a single common one), covariate and influence coefficients."""

    beta0: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name in ("beta0", "beta", "gamma"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            if not np.all(np.isfinite(v)):
                raise ConfigError(f"recruit parameter {name} must be finite")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.beta0.size == 0:
            raise ConfigError("need at least one intercept")

    def intercept(self, census: int) -> float:
        return float(self.beta0[0] if self.beta0.size == 1 else self.beta0[census])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.beta0, self.beta, self.gamma])

    def __eq__(self, other):
        if not isinstance(other, RecruitParams):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ("beta0", "beta", "gamma"))

    __hash__ = None

    @classmethod
    def from_vector(cls, v, n_intercepts: int, q: int, p: int) -> "RecruitParams":
        v = np.asarray(v, dtype=float)
        if v.size != n_intercepts + q + p:
            raise ConfigError(f"expected {n_intercepts + q + p} recruit parameters, got {v.size}")
        return cls(v[:n_intercepts], v[n_intercepts:n_intercepts + q], v[n_intercepts + q:])


@dataclass(frozen=True, eq=False)
class DeathParams:
    """Intercepts, optional mark coefficient ``alpha``, covariate and influence coefficients."""

    beta0: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    alpha: float | None = None

    def __post_init__(self):
        for name in ("beta0", "beta", "gamma"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            if not np.all(np.isfinite(v)):
                raise ConfigError(f"death parameter {name} must be finite")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.alpha is not None:
            if not math.isfinite(self.alpha):
                raise ConfigError("alpha must be finite")
            object.__setattr__(self, "alpha", float(self.alpha))
        if self.beta0.size == 0:
            raise ConfigError("need at least one intercept")

    def intercept(self, census: int) -> float:
        return float(self.beta0[0] if self.beta0.size == 1 else self.beta0[census])

    def vector(self) -> np.ndarray:
        mid = [] if self.alpha is None else [self.alpha]
        return np.concatenate([self.beta0, mid, self.beta, self.gamma])

    def __eq__(self, other):
        if not isinstance(other, DeathParams):
            return NotImplemented
        return self.alpha == other.alpha and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in ("beta0", "beta", "gamma"))

    __hash__ = None

    @classmethod
    def from_vector(cls, v, n_intercepts: int, q: int, p: int, include_mark: bool) -> "DeathParams":
        v = np.asarray(v, dtype=float)
        a = int(include_mark)
        if v.size != n_intercepts + a + q + p:
            raise ConfigError(f"expected {n_intercepts + a + q + p} death parameters, got {v.size}")
        alpha = float(v[n_intercepts]) if include_mark else None
        off = n_intercepts + a
        return cls(v[:n_intercepts], v[off:off + q], v[off + q:], alpha)


@dataclass(frozen=True)
class MarkDensity:
    """Known mark density: a point mass at ``atom`` or a histogram.

    For the point mass, ``pdf`` is taken with respect to counting measure at
    the atom (so ``pdf(atom) == 1``).
    """

    atom: float | None = 1.0
    edges: tuple[float, ...] | None = None
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.edges is not None:
            edges = np.asarray(self.edges, dtype=float)
            w = np.asarray(self.weights, dtype=float)
            if edges.ndim != 1 or w.size != edges.size - 1 or np.any(np.diff(edges) <= 0):
                raise ConfigError("histogram needs increasing edges and one weight per bin")
            if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
                raise ConfigError("histogram weights must be non-negative and sum to 1")
            if edges[0] <= 0:
                raise ConfigError("marks are positive; histogram must start above 0")
            object.__setattr__(self, "edges", tuple(edges))
            object.__setattr__(self, "weights", tuple(w))
            object.__setattr__(self, "atom", None)
        elif self.atom is None or not self.atom > 0:
            raise ConfigError("point-mass mark density needs a positive atom")

    @classmethod
    def point_mass(cls, value: float = 1.0) -> "MarkDensity":
        return cls(atom=value)

    @classmethod
    def histogram(cls, edges, weights) -> "MarkDensity":
        return cls(atom=None, edges=tuple(edges), weights=tuple(weights))

    def pdf(self, m):
        m = np.asarray(m, dtype=float)
        if self.atom is not None:
            return np.where(m == self.atom, 1.0, 0.0)
        edges = np.asarray(self.edges)
        dens = np.asarray(self.weights) / np.diff(edges)
        idx = np.searchsorted(edges, m, side="right") - 1
        inside = (idx >= 0) & (idx < dens.size)
        return np.where(inside, dens[np.clip(idx, 0, dens.size - 1)], 0.0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.atom is not None:
            return np.full(n, float(self.atom))
        edges = np.asarray(self.edges)
        b = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        return rng.uniform(edges[b], edges[b + 1])


@dataclass(frozen=True)
class DummyConfig:
    """Dummy Poisson pattern: intensity ``rho`` per unit area, or ``rho_factor`` times the recruit rate."""

    rho: float | None = None
    seed: int = 0
    rho_factor: float = 4.0

    def __post_init__(self):
        if self.rho is not None and not self.rho > 0:
            raise ConfigError("dummy intensity rho must be positive")
        if not self.rho_factor > 0:
            raise ConfigError("rho_factor must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """What enters the design: influence kernels, census count and optional columns."""

    influence: InfluenceConfig
    K: int
    include_mark: bool = True
    common_intercept: bool = False
    covariate_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("need at least one census interval")

    @property
    def n_intercepts(self) -> int:
        return 1 if self.common_intercept else self.K

    def names(self, model: str, q: int) -> list[str]:
        return design_names(
            model, self.K, q, self.influence.n_species,
            include_mark=self.include_mark, common_intercept=self.common_intercept,
            covariate_names=self.covariate_names,
        )

    def design(self, xy, frame: HistoryFrame, model: str, marks=None, ids=None) -> np.ndarray:
        return design_matrix(
            xy, frame, self.influence, model, self.K, marks=marks, ids=ids,
            include_mark=self.include_mark, common_intercept=self.common_intercept,
        )


@dataclass(frozen=True)
class SolverConfig:
    method: str = "newton"
    tol: float = 1e-8
    max_iter: int = 50

    def __post_init__(self):
        if self.method not in ("newton", "irls"):
            raise ConfigError(f"unknown solver {self.method!r}")


# ---------------------------------------------------------------------------
# pointwise model evaluation


def _features(xy, frame, cfg, model, marks=None, ids=None, include_mark=True):
    """Design without the intercept block."""
    X = design_matrix(
        xy, frame, cfg, model, frame.census + 1, marks=marks, ids=ids,
        include_mark=include_mark, common_intercept=True,
    )
    return X[:, 1:]


def recruit_linear_predictor(xy, frame: HistoryFrame, theta: RecruitParams, cfg: InfluenceConfig,
                             marks=None, ids=None) -> np.ndarray:
    """``beta0_k + Z(u)'beta + c(u)'gamma`` at many locations.

    Marks are only needed when a competition index is divided by the own mark.
    """
    F = _features(xy, frame, cfg, "recruit", marks=marks, ids=ids)
    _check_dims(F.shape[1], theta.beta.size + theta.gamma.size, "recruit")
    return theta.intercept(frame.census) + F @ np.concatenate([theta.beta, theta.gamma])


def death_linear_predictor(xy, frame: HistoryFrame, theta: DeathParams, cfg: InfluenceConfig,
                           marks=None, ids=None) -> np.ndarray:
    include = theta.alpha is not None
    F = _features(xy, frame, cfg, "death", marks=marks, ids=ids, include_mark=include)
    coef = np.concatenate([[theta.alpha] if include else [], theta.beta, theta.gamma])
    _check_dims(F.shape[1], coef.size, "death")
    return theta.intercept(frame.census) + F @ coef


def _check_dims(have, want, model):
    if have != want:
        raise ConfigError(f"{model} parameters have {want} slope terms but the design has {have}")


def recruit_intensity(x: MarkedPoint, frame: HistoryFrame, theta: RecruitParams, f: MarkDensity,
                      cfg: InfluenceConfig) -> float:
    """Conditional recruit intensity ``f(m) exp(eta)`` at the marked point ``x``."""
    eta = float(recruit_linear_predictor(np.asarray([x.u]), frame, theta, cfg, np.asarray([x.m]), np.asarray([x.id]))[0])
    if eta > EXP_OVERFLOW:
        raise NumericalError(f"recruit linear predictor {eta:.6g} overflows exp")
    return float(f.pdf(x.m)) * math.exp(eta)


def death_probability(x: MarkedPoint, frame: HistoryFrame, theta: DeathParams, cfg: InfluenceConfig) -> float:
    """Logistic death probability of the tree ``x`` over the next interval."""
    eta = float(death_linear_predictor(np.asarray([x.u]), frame, theta, cfg, np.asarray([x.m]), np.asarray([x.id]))[0])
    if abs(eta) > ETA_CLAMP:
        warnings.warn(f"death linear predictor {eta:.6g} clamped to +-{ETA_CLAMP}", RuntimeWarning, stacklevel=2)
        eta = math.copysign(ETA_CLAMP, eta)
    return float(expit(eta))


def sample_dummy(window: Window, k: int, cfg: DummyConfig, f: MarkDensity, rho: float | None = None) -> PointPattern:
    """Homogeneous Poisson dummy pattern for census ``k``.

    Each census draws from its own stream derived from ``(cfg.seed, k)``.
    Dummy ids are negative so they never collide with tree ids.
    """
    rho = cfg.rho if rho is None else rho
    if rho is None or not rho > 0:
        raise ConfigError("dummy intensity must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(int(k),)))
    n = rng.poisson(rho * window.area)
    xy = np.column_stack([
        rng.uniform(window.xmin, window.xmax, n),
        rng.uniform(window.ymin, window.ymax, n),
    ])
    return PointPattern(window, xy, f.sample(rng, n), ids=-np.arange(1, n + 1, dtype=np.int64))


# ---------------------------------------------------------------------------
# assembled data


@dataclass
class RecruitData:
    """Stacked logistic-device data over all census intervals.

    Rows are recruits (``y = 1``) then dummies (``y = 0``) for each census in
    order. ``census`` holds ``k - 1``.
    """

    X: np.ndarray
    y: np.ndarray
    offset: np.ndarray
    census: np.ndarray
    xy: np.ndarray
    rho: np.ndarray
    names: list[str]
    window: Window
    K: int

    @property
    def n_params(self) -> int:
        return self.X.shape[1]

    def rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.census == k)


@dataclass
class DeathData:
    """Stacked Bernoulli data: trees alive at ``k - 1`` and their death indicators."""

    X: np.ndarray
    y: np.ndarray
    census: np.ndarray
    xy: np.ndarray
    ids: np.ndarray
    names: list[str]
    window: Window
    K: int

    @property
    def n_params(self) -> int:
        return self.X.shape[1]

    @property
    def offset(self) -> np.ndarray:
        return np.zeros(len(self.y))

    def rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.census == k)


def recruit_data(censuses: Sequence[tuple[PointPattern, PointPattern, HistoryFrame]], spec: ModelSpec,
                 rho: float | Sequence[float]) -> RecruitData:
    """Assemble ``(B_k, Y_k, H_{k-1})`` triples, ``k = 1..K``, into one design."""
    if len(censuses) != spec.K:
        raise ConfigError(f"expected {spec.K} census intervals, got {len(censuses)}")
    rhos = np.broadcast_to(np.asarray(rho, dtype=float), (spec.K,))
    if np.any(rhos <= 0):
        raise ConfigError("dummy intensity must be positive")
    Xs, ys, offs, cs, xys, rs = [], [], [], [], [], []
    window = None
    q = None
    for k, (rec, dum, frame) in enumerate(censuses):
        if frame.census != k:
            raise ConfigError(f"census interval {k + 1} paired with history frame of census {frame.census}")
        window = frame.window if window is None else window
        if frame.window != window or rec.window != window or dum.window != window:
            raise ConfigError("all censuses must share one window")
        q = frame.q
        pts = rec.union(dum) if len(dum) else rec
        X = spec.design(pts.xy, frame, "recruit", marks=pts.marks, ids=pts.ids)
        n = len(pts)
        Xs.append(X)
        ys.append(np.concatenate([np.ones(len(rec)), np.zeros(len(dum))]))
        offs.append(np.full(n, -math.log(rhos[k])))
        cs.append(np.full(n, k, dtype=np.intp))
        xys.append(pts.xy)
        rs.append(np.full(n, rhos[k]))
    return RecruitData(
        X=np.vstack(Xs), y=np.concatenate(ys), offset=np.concatenate(offs), census=np.concatenate(cs),
        xy=np.vstack(xys), rho=np.concatenate(rs), names=spec.names("recruit", q), window=window, K=spec.K,
    )


def death_data(censuses: Sequence[tuple[PointPattern, np.ndarray, HistoryFrame]], spec: ModelSpec) -> DeathData:
    """Assemble ``(X_{k-1}, I_k, H_{k-1})`` triples into one design."""
    if len(censuses) != spec.K:
        raise ConfigError(f"expected {spec.K} census intervals, got {len(censuses)}")
    Xs, ys, cs, xys, idss = [], [], [], [], []
    window = None
    q = None
    for k, (alive, died, frame) in enumerate(censuses):
        died = np.asarray(died, dtype=bool)
        if died.shape != (len(alive),):
            raise DataError(f"census {k + 1}: need one death indicator per tree")
        if frame.census != k:
            raise ConfigError(f"census interval {k + 1} paired with history frame of census {frame.census}")
        window = frame.window if window is None else window
        q = frame.q
        Xs.append(spec.design(alive.xy, frame, "death", marks=alive.marks, ids=alive.ids))
        ys.append(died.astype(float))
        cs.append(np.full(len(alive), k, dtype=np.intp))
        xys.append(alive.xy)
        idss.append(alive.ids)
    return DeathData(
        X=np.vstack(Xs), y=np.concatenate(ys), census=np.concatenate(cs), xy=np.vstack(xys),
        ids=np.concatenate(idss), names=spec.names("death", q), window=window, K=spec.K,
    )


def build_frames(series: CensusSeries, covariates: Sequence[RasterField] = (),
                 covariate_names: Sequence[str] | None = None) -> list[HistoryFrame]:
    """History frames ``H_0 .. H_{K-1}`` of a census series."""
    names = tuple(covariate_names) if covariate_names is not None else None
    return [
        HistoryFrame(series.snapshots[k], tuple(covariates), k, names, window=series.window)
        for k in range(series.K)
    ]


def default_rho(series: CensusSeries, species: int, factor: float) -> float:
    n = sum(len(series.recruits(k, species)) for k in range(1, series.K + 1))
    if n == 0:
        raise DataError("no recruits in any census; dummy intensity undefined")
    return factor * n / (series.K * series.window.area)


def recruit_data_from_series(series: CensusSeries, covariates: Sequence[RasterField], spec: ModelSpec,
                             dummy: DummyConfig, f: MarkDensity | None = None,
                             frames: Sequence[HistoryFrame] | None = None) -> RecruitData:
    """Recruit data for the focal species of ``spec`` with freshly sampled dummies."""
    s = spec.influence.focal_species
    f = MarkDensity.point_mass(1.0) if f is None else f
    rho = dummy.rho if dummy.rho is not None else default_rho(series, s, dummy.rho_factor)
    frames = build_frames(series, covariates, spec.covariate_names) if frames is None else frames
    triples = [
        (series.recruits(k, s), sample_dummy(series.window, k, dummy, f, rho), frames[k - 1])
        for k in range(1, series.K + 1)
    ]
    return recruit_data(triples, spec, rho)


def death_data_from_series(series: CensusSeries, covariates: Sequence[RasterField], spec: ModelSpec,
                           frames: Sequence[HistoryFrame] | None = None) -> DeathData:
    s = spec.influence.focal_species
    frames = build_frames(series, covariates, spec.covariate_names) if frames is None else frames
    triples = []
    for k in range(1, series.K + 1):
        alive = series.pattern(k - 1, s)
        died = ~np.isin(alive.ids, series.pattern(k, s).ids)
        triples.append((alive, died, frames[k - 1]))
    return death_data(triples, spec)


# ---------------------------------------------------------------------------
# scores and composite likelihoods


def _vec(theta) -> np.ndarray:
    return theta.vector() if hasattr(theta, "vector") else np.asarray(theta, dtype=float)


def _census_scores(theta, data) -> np.ndarray:
    th = _vec(theta)
    if th.size != data.n_params:
        raise ConfigError(f"parameter vector has {th.size} entries, design has {data.n_params}")
    resid = data.y - expit(data.X @ th + data.offset)
    out = np.zeros((data.K, data.n_params))
    for k in range(data.K):
        r = data.rows(k)
        out[k] = data.X[r].T @ resid[r]
    return out


def _accumulate(per_census: np.ndarray) -> np.ndarray:
    total = np.zeros(per_census.shape[1])
    for row in per_census:
        total = total + row
    return total


def recruit_census_scores(theta, data: RecruitData) -> np.ndarray:
    """Per-census recruit scores, shape ``(K, P)``.

    Each point of ``B_k`` and ``Y_k`` contributes
    ``z(x) * (1[x in B_k] - zeta / (zeta + rho0))``.
    """
    return _census_scores(theta, data)


def recruit_score(theta, data: RecruitData) -> np.ndarray:
    """Recruit estimating function summed over census intervals."""
    return _accumulate(recruit_census_scores(theta, data))


def death_census_scores(theta, data: DeathData) -> np.ndarray:
    return _census_scores(theta, data)


def death_score(theta, data: DeathData) -> np.ndarray:
    """Death estimating function ``sum_k sum_x z(x) (I_k(x) - p_k(x))``."""
    return _accumulate(death_census_scores(theta, data))


def recruit_loglik(theta, data: RecruitData) -> float:
    """Logistic-device composite log-likelihood (its gradient is :func:`recruit_score`)."""
    return logistic.loglik(_vec(theta), data.X, data.y, data.offset)


def death_loglik(theta, data: DeathData) -> float:
    """Bernoulli composite log-likelihood."""
    return logistic.loglik(_vec(theta), data.X, data.y, data.offset)


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitResult:
    model: str
    params: RecruitParams | DeathParams
    theta: np.ndarray
    names: list[str]
    converged: bool
    iterations: int
    score_norm: float
    census_scores: np.ndarray
    data: RecruitData | DeathData = field(repr=False)
    trace: list = field(default_factory=list, repr=False)
    method: str = "newton"

    def table(self) -> list[dict]:
        return [{"model": self.model, "parameter": n, "estimate": float(v)} for n, v in zip(self.names, self.theta)]


def _intercept_blocks(data) -> list[np.ndarray]:
    """Row sets identifying each intercept: one per census, or all rows."""
    if data.names and data.names[0] == "beta0":
        return [np.arange(len(data.y))]
    return [data.rows(k) for k in range(data.K)]


def _solve(data, start, solver: SolverConfig):
    fn = logistic.newton_logistic if solver.method == "newton" else logistic.irls_logistic
    return fn(data.X, data.y, data.offset, start=start, tol=solver.tol, max_iter=solver.max_iter)


def _check_separation(data, theta, model):
    eta = data.X @ theta + data.offset
    for label in (0.0, 1.0):
        sel = data.y == label
        if sel.any() and np.all(np.abs(eta[sel]) > 30):
            warnings.warn(
                f"{model} fit: all points with label {int(label)} have |eta| > 30 (separation)",
                SeparationWarning, stacklevel=3,
            )


def _finish(model, data, sol, solver, make_params):
    theta = sol.theta
    res = FitResult(
        model=model, params=make_params(theta), theta=theta, names=list(data.names),
        converged=sol.converged, iterations=sol.iterations, score_norm=sol.score_norm,
        census_scores=_census_scores(theta, data), data=data, trace=sol.trace, method=solver.method,
    )
    _check_separation(data, theta, model)
    if not sol.converged:
        raise ConvergenceError(
            f"{model} fit did not converge in {solver.max_iter} iterations; final score {sol.score.tolist()}",
            result=res,
        )
    return res


def fit_at(model: str, data, theta) -> FitResult:
    """A :class:`FitResult` at a supplied parameter vector (no solving)."""
    theta = np.asarray(theta, dtype=float)
    cs = _census_scores(theta, data)
    g = _accumulate(cs)
    nI = _n_intercepts(data)
    q = sum(1 for n in data.names if n.startswith("beta["))
    if model == "recruit":
        params = RecruitParams.from_vector(theta, nI, q, data.n_params - nI - q)
    else:
        include = "alpha" in data.names
        params = DeathParams.from_vector(theta, nI, q, data.n_params - nI - q - int(include), include)
    norm = float(np.max(np.abs(g), initial=0.0))
    return FitResult(model, params, theta, list(data.names), logistic._converged(g, theta, 1e-8), 0, norm, cs, data)


def _n_intercepts(data) -> int:
    return sum(1 for n in data.names if n.startswith("beta0"))


def fit_recruits(data: RecruitData, solver: SolverConfig | None = None) -> FitResult:
    """Solve the recruit estimating equation by logistic regression with offset ``-log(rho)``."""
    solver = solver or SolverConfig()
    if len(data.y) == 0:
        raise DataError("no recruit or dummy points to fit")
    start = np.zeros(data.n_params)
    blocks = _intercept_blocks(data)
    for j, rows in enumerate(blocks):
        nb = data.y[rows].sum()
        if nb == 0:
            where = "any census" if len(blocks) == 1 else f"census {j + 1}"
            raise DataError(f"no recruits in {where}: intercept not identifiable")
        n_census = data.K if len(blocks) == 1 else 1
        start[j] = math.log(nb / (n_census * data.window.area))
    sol = _solve(data, start, solver)
    nI = _n_intercepts(data)
    q = sum(1 for n in data.names if n.startswith("beta["))
    p = data.n_params - nI - q
    return _finish("recruit", data, sol, solver, lambda th: RecruitParams.from_vector(th, nI, q, p))


def fit_deaths(data: DeathData, solver: SolverConfig | None = None) -> FitResult:
    """Solve the death estimating equation (logistic regression)."""
    solver = solver or SolverConfig()
    if len(data.y) == 0:
        raise DataError("no trees at risk")
    start = np.zeros(data.n_params)
    blocks = _intercept_blocks(data)
    for j, rows in enumerate(blocks):
        if rows.size == 0:
            raise DataError(f"no trees at risk in census {j + 1}: intercept not identifiable")
        rate = data.y[rows].mean()
        if rate in (0.0, 1.0):
            where = "any census" if len(blocks) == 1 else f"census {j + 1}"
            kind = "no deaths" if rate == 0 else "no survivors"
            raise DataError(f"{kind} in {where}: intercept not identifiable")
        start[j] = math.log(rate / (1 - rate))
    sol = _solve(data, start, solver)
    nI = _n_intercepts(data)
    include = "alpha" in data.names
    q = sum(1 for n in data.names if n.startswith("beta["))
    p = data.n_params - nI - q - int(include)
    return _finish("death", data, sol, solver, lambda th: DeathParams.from_vector(th, nI, q, p, include))


# ---------------------------------------------------------------------------
# parameter files

_PARAM_HEADER = "# forestcl parameters: name index value"


def write_params(path, model: str, names: Sequence[str], theta) -> None:
    """Write ``name index value`` lines (tab separated, 17 significant digits)."""
    lines = [_PARAM_HEADER, f"# model {model}"]
    lines += [f"{n}\t{i}\t{float(v)!r}" for i, (n, v) in enumerate(zip(names, theta))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_params(path) -> tuple[str, list[str], np.ndarray]:
    model = None
    names, vals = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.startswith("# model"):
            model = line.split()[-1]
            continue
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or int(parts[1]) != len(names):
            raise DataError(f"{path}:{lineno}: expected 'name<TAB>index<TAB>value' in order")
        names.append(parts[0])
        vals.append(float(parts[2]))
    if model not in ("recruit", "death"):
        raise DataError(f"{path}: missing '# model recruit|death' line")
    return model, names, np.asarray(vals)
