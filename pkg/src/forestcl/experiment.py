"""Monte Carlo study: simulate, fit and sandwich many replicates on several windows.

Each (window, replicate) job is independent and deterministic given the
master seed, so results do not depend on the number of worker processes.
"""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Window
from .errors import ConfigError, ForestCLError
from .model import (DummyConfig, ModelSpec, SolverConfig, build_frames, death_data_from_series, fit_deaths,
                    fit_recruits, recruit_data_from_series)
from .sim import W1, W1_HALF, SimConfig, run_replicate
from .variance import omega_sweep

log = logging.getLogger(__name__)

__all__ = ["ExperimentConfig", "ReplicateOutcome", "ExperimentResult", "run_experiment", "truth_vector", "window_seed"]

MODELS = ("recruit", "death")


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    windows: tuple[Window, ...] = (W1, W1_HALF)
    replicates: int = 200
    omegas: tuple[float, ...] = (5.0, 30.0, 55.0, 80.0, 105.0, 130.0, 155.0)
    level: float = 0.95
    species: int = 1
    common_intercept: bool = True
    include_mark: bool = False
    rho_factor: float = 4.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    threads: int = 0

    def __post_init__(self):
        if self.replicates < 2:
            raise ConfigError("an experiment needs at least two replicates")
        if not self.windows:
            raise ConfigError("need at least one window")
        if not 1 <= self.species <= self.sim.n_species:
            raise ConfigError(f"species {self.species} not simulated")
        if not self.omegas:
            raise ConfigError("need at least one truncation distance")


@dataclass
class ReplicateOutcome:
    window: int
    rep: int
    ok: bool
    theta: dict = field(default_factory=dict)
    se: dict = field(default_factory=dict)
    var: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    error: str = ""


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    names: dict
    truth: dict
    outcomes: list[ReplicateOutcome]

    def ok(self, window: int) -> list[ReplicateOutcome]:
        return [o for o in self.outcomes if o.window == window and o.ok]

    def failures(self, window: int | None = None) -> list[ReplicateOutcome]:
        return [o for o in self.outcomes if not o.ok and (window is None or o.window == window)]

    def estimates(self, window: int, model: str) -> np.ndarray:
        return np.array([o.theta[model] for o in self.ok(window)])

    def standard_errors(self, window: int, model: str, omega: float) -> np.ndarray:
        j = list(self.config.omegas).index(omega)
        return np.array([o.se[model][j] for o in self.ok(window)])

    def variances(self, window: int, model: str, omega: float) -> np.ndarray:
        """Signed sandwich variances ``diag(cov)``; negative where the standard error is nan."""
        j = list(self.config.omegas).index(omega)
        return np.array([o.var[model][j] for o in self.ok(window)])

    def summary_rows(self) -> list[dict]:
        rows = []
        for wi, _ in enumerate(self.config.windows):
            for m in MODELS:
                est = self.estimates(wi, m)
                if est.size == 0:
                    continue
                n = est.shape[0]
                for j, name in enumerate(self.names[m]):
                    mean = float(est[:, j].mean())
                    sd = float(est[:, j].std(ddof=1)) if n > 1 else float("nan")
                    t = self.truth[m][j]
                    rows.append({
                        "window": wi, "model": m, "parameter": name, "truth": t, "mean": mean, "sd": sd,
                        "var": sd * sd, "bias": mean - t, "bias_z": (mean - t) / (sd / np.sqrt(n)), "n": n,
                    })
        return rows

    def variance_ratio_rows(self, small: int = 1, large: int = 0) -> list[dict]:
        rows = []
        for m in MODELS:
            vs = self.estimates(small, m).var(axis=0, ddof=1)
            vl = self.estimates(large, m).var(axis=0, ddof=1)
            for j, name in enumerate(self.names[m]):
                rows.append({"model": m, "parameter": name, "var_small": float(vs[j]),
                             "var_large": float(vl[j]), "ratio": float(vs[j] / vl[j])})
        return rows

    def coverage_rows(self) -> list[dict]:
        from scipy.stats import norm

        q = norm.ppf(0.5 + self.config.level / 2.0)
        rows = []
        for wi, _ in enumerate(self.config.windows):
            for m in MODELS:
                est = self.estimates(wi, m)
                if est.size == 0:
                    continue
                t = np.asarray(self.truth[m])
                for om in self.config.omegas:
                    se = self.standard_errors(wi, m, om)
                    hit = np.abs(est - t) <= q * se
                    for j, name in enumerate(self.names[m]):
                        rows.append({"window": wi, "model": m, "parameter": name, "omega": om,
                                     "level": self.config.level, "coverage": float(hit[:, j].mean()),
                                     "n": int(est.shape[0])})
        return rows

    def calibration_rows(self) -> list[dict]:
        """Median signed sandwich variance against the empirical variance of the estimates."""
        rows = []
        for wi, _ in enumerate(self.config.windows):
            for m in MODELS:
                est = self.estimates(wi, m)
                if est.size == 0:
                    continue
                emp = est.var(axis=0, ddof=1)
                for om in self.config.omegas:
                    v = self.variances(wi, m, om)
                    med = np.median(v, axis=0)
                    for j, name in enumerate(self.names[m]):
                        rows.append({"window": wi, "model": m, "parameter": name, "omega": om,
                                     "median_sandwich_var": float(med[j]), "empirical_var": float(emp[j]),
                                     "ratio": float(med[j] / emp[j]), "n_negative": int((v[:, j] < 0).sum())})
        return rows

    def estimate_rows(self) -> list[dict]:
        rows = []
        for o in self.outcomes:
            if not o.ok:
                continue
            for m in MODELS:
                for name, v in zip(self.names[m], o.theta[m]):
                    rows.append({"window": o.window, "rep": o.rep, "model": m, "parameter": name, "estimate": v})
        return rows

    def se_rows(self) -> list[dict]:
        rows = []
        for o in self.outcomes:
            if not o.ok:
                continue
            for m in MODELS:
                for om, se in zip(self.config.omegas, o.se[m]):
                    for name, v in zip(self.names[m], se):
                        rows.append({"window": o.window, "rep": o.rep, "model": m, "parameter": name,
                                     "omega": om, "se": v})
        return rows

    def write(self, outdir, provenance: dict | None = None) -> list[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        tables = {
            "estimates.csv": self.estimate_rows(),
            "standard_errors.csv": self.se_rows(),
            "summary.csv": self.summary_rows(),
            "coverage.csv": self.coverage_rows(),
            "calibration.csv": self.calibration_rows(),
        }
        if len(self.config.windows) >= 2:
            tables["variance_ratio.csv"] = self.variance_ratio_rows()
        tables["failures.csv"] = [
            {"window": o.window, "rep": o.rep, "error": o.error} for o in self.failures()
        ]
        tables["windows.csv"] = [
            {"window": i, "xmin": w.xmin, "xmax": w.xmax, "ymin": w.ymin, "ymax": w.ymax,
             "replicates_ok": len(self.ok(i)), "replicates_failed": len(self.failures(i))}
            for i, w in enumerate(self.config.windows)
        ]
        written = []
        for name, rows in tables.items():
            p = outdir / name
            _write_rows(p, rows, provenance)
            written.append(p)
        return written


_EMPTY_COLUMNS = {"failures.csv": ["window", "rep", "error"]}


def _write_rows(path: Path, rows: list[dict], provenance: dict | None):
    cols = list(rows[0].keys()) if rows else _EMPTY_COLUMNS.get(path.name, [])
    with open(path, "w", newline="") as fh:
        for k, v in (provenance or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def window_seed(seed: int, window_index: int) -> int:
    """Independent simulation seed per window."""
    return int(np.random.SeedSequence(int(seed), spawn_key=(1_000 + window_index,)).generate_state(1, np.uint64)[0])


def _spec(cfg: ExperimentConfig) -> ModelSpec:
    return ModelSpec(cfg.sim.influence(cfg.species), cfg.sim.K, include_mark=cfg.include_mark,
                     common_intercept=cfg.common_intercept)


def truth_vector(cfg: ExperimentConfig, model: str) -> list[float]:
    """True parameter vector in the fitted layout."""
    s = cfg.species - 1
    reps = 1 if cfg.common_intercept else cfg.sim.K
    if model == "recruit":
        r = cfg.sim.recruit[s]
        b0 = [r.intercept(k) for k in range(reps)]
        return b0 + list(r.beta) + list(r.gamma)
    d = cfg.sim.death[s]
    b0 = [d.intercept(k) for k in range(reps)]
    mid = [d.alpha or 0.0] if cfg.include_mark else []
    return b0 + mid + list(d.beta) + list(d.gamma)


def _run_one(cfg: ExperimentConfig, wi: int, rep: int) -> ReplicateOutcome:
    window = cfg.windows[wi]
    scfg = replace(cfg.sim, window=window, seed=window_seed(cfg.sim.seed, wi))
    try:
        res = run_replicate(scfg, rep)
        spec = _spec(cfg)
        frames = build_frames(res.series, res.covariates)
        dummy = DummyConfig(seed=int(np.random.SeedSequence(scfg.seed, spawn_key=(rep, 99)).generate_state(1)[0]),
                            rho_factor=cfg.rho_factor)
        fr = fit_recruits(recruit_data_from_series(res.series, res.covariates, spec, dummy, frames=frames), cfg.solver)
        fd = fit_deaths(death_data_from_series(res.series, res.covariates, spec, frames=frames), cfg.solver)
        se, var = {}, {}
        for name, fit in (("recruit", fr), ("death", fd)):
            sweep = omega_sweep(fit, cfg.omegas, cfg.level)
            se[name] = [r.se.tolist() for r in sweep]
            var[name] = [np.diag(r.cov).tolist() for r in sweep]
        counts = {
            "recruits": int(fr.data.y.sum()),
            "deaths": int(fd.data.y.sum()),
            "at_risk": int(fd.data.y.size),
        }
        return ReplicateOutcome(wi, rep, True, {"recruit": fr.theta.tolist(), "death": fd.theta.tolist()}, se, var,
                                counts)
    except ForestCLError as exc:
        log.warning("window %d replicate %d failed: %s", wi, rep, exc)
        return ReplicateOutcome(wi, rep, False, error=f"{type(exc).__name__}: {exc}")


def _run_job(args):
    return _run_one(*args)


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    """Run every (window, replicate) job; failures are logged and excluded."""
    jobs = [(cfg, wi, rep) for wi in range(len(cfg.windows)) for rep in range(cfg.replicates)]
    threads = cfg.threads if cfg.threads and cfg.threads > 0 else (os.cpu_count() or 1)
    outcomes = []
    if threads == 1:
        for i, job in enumerate(jobs):
            outcomes.append(_run_job(job))
            if progress:
                progress(i + 1, len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            for i, out in enumerate(ex.map(_run_job, jobs, chunksize=4)):
                outcomes.append(out)
                if progress:
                    progress(i + 1, len(jobs))
    spec = _spec(cfg)
    q = len(cfg.sim.covariates) if cfg.sim.covariates is not None else len(cfg.sim.covariate_params)
    names = {m: spec.names(m, q) for m in MODELS}
    truth = {m: truth_vector(cfg, m) for m in MODELS}
    nfail = sum(not o.ok for o in outcomes)
    if nfail:
        log.warning("%d of %d replicate jobs failed and were excluded", nfail, len(outcomes))
    return ExperimentResult(cfg, names, truth, outcomes)
