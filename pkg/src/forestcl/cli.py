"""Command-line interface.

Subcommands: simulate, fit, variance, diagnostics, experiment, ingest-check.
Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import __version__
from .config import RunConfig, load_config
from .core import PointPattern
from .diagnostics import default_bandwidth, indicator_variogram, pcf_estimate, write_curve
from .errors import ConfigError, DataError, NumericalError
from .fields import read_ascii_grid, write_ascii_grid
from .io import count_table, read_census_csv, write_census_csv, write_events_csv
from .model import (FitResult, ModelSpec, build_frames, death_data_from_series, fit_at, fit_deaths, fit_recruits,
                    read_params, recruit_data_from_series, write_params)
from .sim import run_replicate
from .variance import omega_sweep, write_table

log = logging.getLogger("forestcl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class _Context:
    def __init__(self, args):
        overrides = {"seed": args.seed, "threads": args.threads}
        self.cfg: RunConfig = load_config(args.config, overrides)
        self.out = Path(args.out or self.cfg.get("output_dir", default="out"))
        if not self.out.is_absolute() and args.out is None:
            self.out = self.cfg.base / self.out
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = args.command

    def provenance(self, **extra) -> dict:
        p = {"command": self.command, "config_sha256": self.cfg.hash, "seed": self.cfg.seed}
        p.update(extra)
        return p


def _write_rows(path: Path, rows: list[dict], provenance: dict, columns=None):
    cols = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        for k, v in provenance.items():
            fh.write(f"# {k}: {v}\n")
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _load_data(ctx: _Context):
    cfg = ctx.cfg
    window = cfg.window
    series = read_census_csv(
        cfg.path(cfg.require("census_file")), window,
        n_species=cfg.get("n_species"), species_map=cfg.get("species_map"),
        allow_missing_marks=cfg.get("allow_missing_marks", default=True),
    )
    covs, names = [], []
    for j, c in enumerate(cfg.get("covariates", default=[])):
        p = cfg.path(c["path"])
        if not p.exists():
            raise DataError(f"covariate raster {p} not found")
        covs.append(read_ascii_grid(p))
        names.append(c.get("name", f"{j + 1}"))
    return series, tuple(covs), tuple(names) if covs else None


def _spec(ctx: _Context, series, cov_names) -> ModelSpec:
    cfg = ctx.cfg
    inf = cfg.influence()
    if inf.n_species != series.n_species:
        raise ConfigError(f"influence config lists {inf.n_species} species, data has {series.n_species}")
    return ModelSpec(
        inf, series.K,
        include_mark=cfg.get("model", "include_mark", default=True),
        common_intercept=cfg.get("model", "common_intercept", default=False),
        covariate_names=cov_names,
    )


def _fits(ctx: _Context) -> tuple[FitResult, FitResult]:
    cfg = ctx.cfg
    series, covs, names = _load_data(ctx)
    if series.K < 1:
        raise DataError("need at least two censuses to fit")
    spec = _spec(ctx, series, names)
    frames = build_frames(series, covs, names)
    rd = recruit_data_from_series(series, covs, spec, cfg.dummy(), cfg.mark_density(), frames)
    dd = death_data_from_series(series, covs, spec, frames)
    fixed = cfg.get("params", default={})
    out = []
    for model, data, fitter in (("recruit", rd, fit_recruits), ("death", dd, fit_deaths)):
        if model in fixed:
            m, pnames, theta = read_params(cfg.path(fixed[model]))
            if m != model or pnames != data.names:
                raise ConfigError(f"parameter file {fixed[model]} does not match the {model} design {data.names}")
            fit = fit_at(model, data, theta)
        else:
            fit = fitter(data, cfg.solver())
        out.append(fit)
    return out[0], out[1]


def cmd_ingest_check(ctx: _Context) -> int:
    series, covs, _ = _load_data(ctx)
    rows = count_table(series)
    _write_rows(ctx.out / "counts.csv", rows, ctx.provenance(), ["species", "census", "trees", "recruits", "deaths"])
    for r in rows:
        print(f"species {r['species']} census {r['census']}: {r['trees']} trees, "
              f"{r['recruits'] or 0} recruits, {r['deaths'] or 0} deaths")
    for c in covs:
        if not c.window.contains_window(series.window):
            raise DataError(f"covariate raster {c} does not cover the census window")
    return EXIT_OK


def cmd_fit(ctx: _Context) -> int:
    fits = _fits(ctx)
    for fit in fits:
        rows = [{"parameter": n, "estimate": float(v)} for n, v in zip(fit.names, fit.theta)]
        _write_rows(ctx.out / f"estimates_{fit.model}.csv", rows,
                    ctx.provenance(converged=fit.converged, iterations=fit.iterations, score_norm=fit.score_norm))
        write_params(ctx.out / f"params_{fit.model}.txt", fit.model, fit.names, fit.theta)
        print(f"{fit.model}: converged in {fit.iterations} iterations, |score| = {fit.score_norm:.3g}")
        for n, v in zip(fit.names, fit.theta):
            print(f"  {n:>14s} {v: .6f}")
    return EXIT_OK


def cmd_variance(ctx: _Context) -> int:
    omegas = ctx.cfg.omegas()
    level = ctx.cfg.level()
    for fit in _fits(ctx):
        for res in omega_sweep(fit, omegas, level, psd=ctx.cfg.project_psd()):
            path = ctx.out / f"variance_{fit.model}_omega{res.omega:g}.csv"
            write_table([res], path, ctx.provenance(level=level))
        print(f"{fit.model}: {len(omegas)} tables written to {ctx.out}")
    return EXIT_OK


def cmd_diagnostics(ctx: _Context) -> int:
    cfg = ctx.cfg
    fr, fd = _fits(ctx)
    rgrid = np.asarray(cfg.get("diagnostics", "rgrid", default=list(np.arange(1.0, 51.0))))
    bw = cfg.get("diagnostics", "bandwidth")
    hgrid = np.asarray(cfg.get("diagnostics", "hgrid", default=list(np.arange(2.5, 101.0, 2.5))))
    tol = cfg.get("diagnostics", "tol", default=1.25)
    rd = fr.data
    eta = rd.X @ fr.theta
    for k in range(rd.K):
        rows = rd.rows(k)
        rec = rows[rd.y[rows] == 1]
        if rec.size < 2:
            log.warning("census %d: fewer than two recruits, no pair correlation", k + 1)
            continue
        pat = PointPattern(rd.window, rd.xy[rec])
        b = bw if bw is not None else default_bandwidth(pat)
        curve = pcf_estimate(pat, np.exp(eta[rec]), b, rgrid)
        write_curve(ctx.out / f"pcf_census{k + 1}.csv", curve.r, curve.g, ("r", "g"),
                    ctx.provenance(census=k + 1, bandwidth=b, unreliable_below=b))
    dd = fd.data
    resid = dd.y - expit(dd.X @ fd.theta)
    for k in range(dd.K):
        rows = dd.rows(k)
        if rows.size < 2:
            continue
        v = indicator_variogram(dd.xy[rows], resid[rows], hgrid, tol)
        write_curve(ctx.out / f"variogram_census{k + 1}.csv", v.h, v.gamma, ("h", "gamma"),
                    ctx.provenance(census=k + 1, tol=tol))
    print(f"diagnostic curves written to {ctx.out}")
    return EXIT_OK


def cmd_simulate(ctx: _Context) -> int:
    scfg = ctx.cfg.sim_config()
    covs = scfg.covariate_fields()
    for j, c in enumerate(covs):
        write_ascii_grid(c, ctx.out / f"covariate{j + 1}.asc")
    for rep in range(scfg.replicates):
        res = run_replicate(scfg, rep)
        prov = ctx.provenance(rep=rep)
        write_census_csv(res.series, ctx.out / f"census_rep{rep}.csv", prov)
        write_events_csv(res.events, ctx.out / f"events_rep{rep}.csv", prov)
        n = [len(res.series.pattern(scfg.K, s)) for s in range(1, scfg.n_species + 1)]
        print(f"replicate {rep}: final trees per species {n}")
    return EXIT_OK


def cmd_experiment(ctx: _Context) -> int:
    ecfg = ctx.cfg.experiment_config()

    def progress(i, n):
        if i % 10 == 0 or i == n:
            log.info("%d/%d replicate jobs done", i, n)

    from .experiment import run_experiment

    res = run_experiment(ecfg, progress)
    res.write(ctx.out, ctx.provenance())
    nfail = len(res.failures())
    print(f"{len(res.outcomes) - nfail} replicate jobs ok, {nfail} failed; tables in {ctx.out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "variance": cmd_variance,
    "diagnostics": cmd_diagnostics,
    "experiment": cmd_experiment,
    "ingest-check": cmd_ingest_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="forestcl", description="Composite-likelihood inference for tree census series.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the configuration)")
        p.add_argument("--threads", type=int, help="worker processes; 0 uses every core")
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        ctx = _Context(args)
        return COMMANDS[args.command](ctx)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
