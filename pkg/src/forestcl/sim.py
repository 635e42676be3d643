"""Generative simulator: LGCP recruits and spatially correlated deaths.

Each census interval draws, per species,

* recruits from a log Gaussian Cox process whose conditional mean intensity
  given the history is the log-linear recruit intensity, sampled exactly by
  thinning a piecewise-constant dominating intensity on the field grid;
* death indicators ``I(x) = 1[tau(u) <= eta(x)]`` with
  ``tau = logit(Phi(U))`` for a Gaussian field ``U``. ``Phi`` is the standard
  normal CDF, which makes ``tau`` marginally standard logistic and hence
  ``P(I = 1) = expit(eta)``.

Random streams are ``SeedSequence(seed, spawn_key=(rep, k, stream))``, so
replicates, censuses and streams never share draws. Within a stream the
species take independent fields from one circulant-embedding transform
(its real and imaginary parts), then their own point draws.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
import numpy as np
from scipy.special import log_ndtr

from .core import CensusSeries, PointPattern, Window
from .covariates import HistoryFrame, InfluenceConfig
from .errors import ConfigError
from .fields import GRFSampler, MaternParams, RasterField, grid_shape
from .model import DeathParams, RecruitParams, death_linear_predictor, recruit_linear_predictor

log = logging.getLogger(__name__)

__all__ = [
    "SimConfig",
    "SimResult",
    "W1",
    "W2",
    "W1_HALF",
    "simulate_lgcp_recruits",
    "simulate_deaths",
    "simulation_covariates",
    "run_replicate",
    "stream",
]

W1 = Window(0.0, 500.0, 0.0, 250.0)
W2 = Window(0.0, 1000.0, 0.0, 500.0)
W1_HALF = Window(0.0, 250.0, 0.0, 125.0)

MAX_EXPECTED = 1e7

# stream labels within (rep, k)
_LGCP, _DEATH, _COV = 0, 1, 2


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def _default_recruits():
    return (
        RecruitParams([-6.32], [0.0, 0.1], [0.1, -2.0]),
        RecruitParams([-6.32], [0.0, 0.1], [-2.0, 0.1]),
    )


def _default_deaths():
    d = DeathParams([-0.25], [0.25, 0.0], [-0.25, 0.25])
    return (d, d)


@dataclass(frozen=True)
class SimConfig:
    """Simulation protocol; the defaults are the two-species study setting.

    Covariate rasters are generated once on ``covariate_window`` from
    ``covariate_params`` and ``covariate_seed`` and cropped to ``window``,
    unless ``covariates`` is given.
    """

    window: Window = W1
    K: int = 10
    recruit: tuple[RecruitParams, ...] = field(default_factory=_default_recruits)
    death: tuple[DeathParams, ...] = field(default_factory=_default_deaths)
    lgcp: MaternParams = MaternParams(1.0, 1.75, 4.0)
    death_field: MaternParams = MaternParams(1.0, 0.5, 7.0)
    psi: tuple[float, ...] = (6.0, 6.0)
    kappa: tuple[float, ...] = (10.0, 10.0)
    recruit_kernels: tuple[str, ...] = ("dispersal", "dispersal")
    covariate_params: tuple[MaternParams, ...] = (
        MaternParams(1.0 / 9.0, 0.5, 28.0),
        MaternParams(1.0 / 9.0, 1.75, 16.0),
    )
    covariate_window: Window = W2
    covariate_seed: int = 20240101
    covariates: tuple[RasterField, ...] | None = None
    cellsize: float = 1.0
    seed: int = 0
    replicates: int = 1

    def __post_init__(self):
        p = len(self.recruit)
        if p < 1 or len(self.death) != p or len(self.psi) != p or len(self.kappa) != p:
            raise ConfigError("need recruit/death parameters and psi/kappa for every species")
        if self.K < 0:
            raise ConfigError("K must be non-negative")
        if self.replicates < 1:
            raise ConfigError("need at least one replicate")
        q = len(self.covariates) if self.covariates is not None else len(self.covariate_params)
        for s, (r, d) in enumerate(zip(self.recruit, self.death), 1):
            if r.beta.size != q or d.beta.size != q:
                raise ConfigError(f"species {s}: {q} covariates but beta has the wrong length")
            if r.gamma.size != p or d.gamma.size != p:
                raise ConfigError(f"species {s}: gamma needs {p} entries")
            if d.alpha is not None and d.alpha != 0.0:
                log.debug("death mark coefficient is used with simulated marks of 1")
        grid_shape(self.window, self.cellsize)

    @property
    def n_species(self) -> int:
        return len(self.recruit)

    def influence(self, species: int) -> InfluenceConfig:
        return InfluenceConfig(self.psi, self.kappa, True, self.recruit_kernels, focal_species=species)

    def with_window(self, window: Window) -> "SimConfig":
        from dataclasses import replace

        return replace(self, window=window)

    def covariate_fields(self) -> tuple[RasterField, ...]:
        if self.covariates is not None:
            return tuple(c if c.window == self.window else c.crop(self.window) for c in self.covariates)
        full = simulation_covariates(self.covariate_window, self.cellsize, self.covariate_params, self.covariate_seed)
        return tuple(c.crop(self.window) for c in full)


@dataclass
class SimResult:
    series: CensusSeries
    events: list[dict]
    covariates: tuple[RasterField, ...]
    rep: int = 0


@lru_cache(maxsize=4)
def simulation_covariates(window: Window, cellsize: float, params: tuple[MaternParams, ...],
                          seed: int) -> tuple[RasterField, ...]:
    """Covariate rasters, one zero-mean Matérn field per parameter set."""
    nrows, ncols = grid_shape(window, cellsize)
    out = []
    for j, p in enumerate(params):
        vals = GRFSampler(nrows, ncols, cellsize, p).sample(stream(seed, _COV, j))
        out.append(RasterField(window, cellsize, vals))
    return tuple(out)


@lru_cache(maxsize=8)
def _sampler(nrows: int, ncols: int, cellsize: float, params: MaternParams) -> GRFSampler:
    return GRFSampler(nrows, ncols, cellsize, params)


def _grid_sampler(window: Window, cellsize: float, params: MaternParams) -> GRFSampler:
    nrows, ncols = grid_shape(window, cellsize)
    return _sampler(nrows, ncols, float(cellsize), params)


def _cell_covariates(frame: HistoryFrame, nrows: int, ncols: int, cellsize: float) -> np.ndarray:
    """Covariate values per cell, shape ``(q, nrows, ncols)``, row 0 south."""
    w = frame.window
    xs = w.xmin + (np.arange(ncols) + 0.5) * cellsize
    ys = w.ymin + (np.arange(nrows) + 0.5) * cellsize
    X, Y = np.meshgrid(xs, ys)
    centers = np.column_stack([X.ravel(), Y.ravel()])
    out = np.empty((frame.q, nrows, ncols))
    for j, cov in enumerate(frame.covariates):
        off = np.array([w.xmin - cov.window.xmin, w.ymin - cov.window.ymin]) / cov.cellsize
        if cov.cellsize != cellsize or not np.allclose(off, np.round(off), atol=1e-9):
            raise ConfigError("LGCP grid must coincide with the covariate grid")
        out[j] = cov.sample(centers).reshape(nrows, ncols)
    return out


def simulate_lgcp_recruits(frame: HistoryFrame, theta: RecruitParams, field: MaternParams, seed,
                           cfg: InfluenceConfig, *, cellsize: float = 1.0, first_id: int = 1,
                           species: int | None = None, G: np.ndarray | None = None,
                           Zc: np.ndarray | None = None) -> PointPattern:
    """Recruits from an LGCP with ``E[Lambda(u) | H] = zeta(u | H)``.

    The random intensity is ``zeta(u) exp(G(cell(u)) - sigma2/2)`` with ``G``
    a Matérn field on the ``cellsize`` grid. Points are proposed from the
    per-cell bound ``exp(beta0 + Z'beta + sum max(gamma_l, 0) + G - sigma2/2)``
    (dispersal influences lie in [0, 1]) and kept with probability
    ``exp(eta(u) - bound)``, so no discretisation enters ``zeta``.

    Parameters
    ----------
    seed : int, SeedSequence or Generator
    G : ndarray, optional
        Pre-drawn field (row 0 south); drawn from ``seed`` otherwise.
    Zc : ndarray, optional
        Covariates per cell, ``(q, nrows, ncols)`` with row 0 south.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = frame.window
    nrows, ncols = grid_shape(w, cellsize)
    if theta.beta.size != frame.q or theta.gamma.size != frame.p:
        raise ConfigError("recruit parameters do not match the history frame")
    bound_gamma = 0.0
    for l, g in enumerate(theta.gamma):
        if g > 0:
            if cfg.recruit_kernels[l] != "dispersal":
                raise ConfigError("thinning needs non-positive coefficients on competition influences")
            bound_gamma += g
    if Zc is None:
        Zc = _cell_covariates(frame, nrows, ncols, cellsize)
    if G is None:
        G = _grid_sampler(w, cellsize, field).sample(rng)
    if G.shape != (nrows, ncols):
        raise ConfigError(f"field shape {G.shape} does not match grid {(nrows, ncols)}")
    lmax = theta.intercept(frame.census) + np.tensordot(theta.beta, Zc, axes=1) + bound_gamma
    lmax = lmax + G - 0.5 * field.sigma2
    cell_area = cellsize * cellsize
    mean = np.exp(lmax) * cell_area
    total = float(mean.sum())
    if not total < MAX_EXPECTED:
        raise ConfigError(f"expected {total:.3g} proposals exceeds {MAX_EXPECTED:.0e}; check recruit parameters")
    counts = rng.poisson(mean.ravel())
    cells = np.repeat(np.arange(counts.size), counts)
    r, c = np.divmod(cells, ncols)
    jit = rng.random((cells.size, 2))
    xy = np.column_stack([w.xmin + (c + jit[:, 0]) * cellsize, w.ymin + (r + jit[:, 1]) * cellsize])
    # guard against rounding past the far edge
    xy[:, 0] = np.minimum(xy[:, 0], w.xmax)
    xy[:, 1] = np.minimum(xy[:, 1], w.ymax)
    marks = np.ones(cells.size)
    if cells.size:
        eta = recruit_linear_predictor(xy, frame, theta, cfg, marks=marks) + G[r, c] - 0.5 * field.sigma2
        keep = rng.random(cells.size) < np.exp(eta - lmax[r, c])
    else:
        keep = np.zeros(0, bool)
    n = int(keep.sum())
    sp = cfg.focal_species if species is None else species
    return PointPattern(w, xy[keep], marks[keep], np.arange(first_id, first_id + n), sp)


def simulate_deaths(frame: HistoryFrame, theta: DeathParams, field: MaternParams, seed,
                    cfg: InfluenceConfig, *, cellsize: float = 1.0, species: int | None = None,
                    U: np.ndarray | None = None) -> np.ndarray:
    """Death indicators for the trees of ``species`` in ``frame``.

    Step 1 draws ``U`` on the grid, step 2 sets ``tau = logit(Phi(U))`` and
    step 3 returns ``tau <= eta``. Trees in the same cell share ``tau``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    s = cfg.focal_species if species is None else species
    alive = frame.patterns[s - 1]
    w = frame.window
    nrows, ncols = grid_shape(w, cellsize)
    if U is None:
        U = _grid_sampler(w, cellsize, field).sample(rng)
    if len(alive) == 0:
        return np.zeros(0, bool)
    col = np.clip(np.floor((alive.xy[:, 0] - w.xmin) / cellsize).astype(np.intp), 0, ncols - 1)
    row = np.clip(np.floor((alive.xy[:, 1] - w.ymin) / cellsize).astype(np.intp), 0, nrows - 1)
    # standardise so Phi(u) is uniform for any sigma2
    u = U[row, col] / math.sqrt(field.sigma2)
    tau = log_ndtr(u) - log_ndtr(-u)
    eta = death_linear_predictor(alive.xy, frame, theta, cfg, alive.marks, alive.ids)
    return tau <= eta


def _species_fields(cfg: SimConfig, params: MaternParams, rng) -> list[np.ndarray]:
    return _grid_sampler(cfg.window, cfg.cellsize, params).sample_many(rng, cfg.n_species)


def _event_rows(rep, k, s, kind, pat):
    return [
        {"rep": rep, "census": k, "species": s, "event": kind, "tree_id": int(i),
         "x": float(x), "y": float(y), "mark": float(m)}
        for i, (x, y), m in zip(pat.ids, pat.xy, pat.marks)
    ]


def run_replicate(cfg: SimConfig, rep: int = 0) -> SimResult:
    """One census series ``X_0..X_K`` for every species, deterministic in ``(cfg.seed, rep)``.

    ``X_k = (X_{k-1} minus D_k) union B_k`` per species. A species that dies
    out is logged and the replicate continues.
    """
    w = cfg.window
    covs = cfg.covariate_fields()
    p = cfg.n_species
    empty = tuple(PointPattern.empty(w) for _ in range(p))
    frame0 = HistoryFrame(empty, covs, 0, window=w)
    Zc = _cell_covariates(frame0, *grid_shape(w, cfg.cellsize), cfg.cellsize)
    next_id = 1
    current = []
    events: list[dict] = []
    rng = stream(cfg.seed, rep, 0, _LGCP)
    fields = _species_fields(cfg, cfg.lgcp, rng)
    for s in range(1, p + 1):
        r = cfg.recruit[s - 1]
        theta0 = RecruitParams(r.beta0, r.beta, np.zeros_like(r.gamma))
        pat = simulate_lgcp_recruits(
            frame0, theta0, cfg.lgcp, rng, cfg.influence(s), cellsize=cfg.cellsize,
            first_id=next_id, species=s, G=fields[s - 1], Zc=Zc,
        )
        next_id += len(pat)
        current.append(pat)
        events += _event_rows(rep, 0, s, "initial", pat)
    snapshots = [tuple(current)]
    for k in range(1, cfg.K + 1):
        frame = HistoryFrame(tuple(current), covs, k - 1, window=w)
        rng_b = stream(cfg.seed, rep, k, _LGCP)
        rng_d = stream(cfg.seed, rep, k, _DEATH)
        G = _species_fields(cfg, cfg.lgcp, rng_b)
        U = _species_fields(cfg, cfg.death_field, rng_d)
        new = []
        for s in range(1, p + 1):
            icfg = cfg.influence(s)
            born = simulate_lgcp_recruits(
                frame, cfg.recruit[s - 1], cfg.lgcp, rng_b, icfg,
                cellsize=cfg.cellsize, first_id=next_id, species=s, G=G[s - 1], Zc=Zc,
            )
            next_id += len(born)
            died = simulate_deaths(
                frame, cfg.death[s - 1], cfg.death_field, rng_d, icfg,
                cellsize=cfg.cellsize, species=s, U=U[s - 1],
            )
            prev = current[s - 1]
            events += _event_rows(rep, k, s, "recruit", born)
            events += _event_rows(rep, k, s, "death", prev.subset(died))
            survivors = prev.subset(~died)
            nxt = survivors.union(born) if len(born) else survivors
            if len(nxt) == 0 and len(prev) > 0:
                log.warning("replicate %d: species %d extinct at census %d", rep, s, k)
            new.append(nxt)
        current = new
        snapshots.append(tuple(current))
    series = CensusSeries(w, tuple(snapshots), {"rep": rep, "seed": cfg.seed})
    return SimResult(series, events, covs, rep)

