"""Run configuration: a JSON document validated against :data:`SCHEMA`.

Unknown keys are rejected at every level. Relative paths resolve against
the directory holding the configuration file. Minimal example::

    {
      "window": [0, 500, 0, 250],
      "census_file": "census.csv",
      "influence": {"psi": [6, 6], "kappa": [10, 10]},
      "variance": {"omegas": [30, 55, 80]}
    }
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .core import Window
from .covariates import InfluenceConfig
from .errors import ConfigError
from .fields import MaternParams
from .model import DeathParams, DummyConfig, RecruitParams, SolverConfig

__all__ = ["SCHEMA", "RunConfig", "load_config", "config_hash"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_numlist = {"type": "array", "items": _num}
_window = {"type": "array", "items": _num, "minItems": 4, "maxItems": 4}
_matern = {
    "type": "object",
    "additionalProperties": False,
    "required": ["sigma2", "nu", "xi"],
    "properties": {"sigma2": _pos, "nu": _pos, "xi": _pos},
}
_recruit = {
    "type": "object",
    "additionalProperties": False,
    "required": ["beta0", "beta", "gamma"],
    "properties": {"beta0": {**_numlist, "minItems": 1}, "beta": _numlist, "gamma": _numlist},
}
_death = {
    "type": "object",
    "additionalProperties": False,
    "required": ["beta0", "beta", "gamma"],
    "properties": {
        "beta0": {**_numlist, "minItems": 1}, "beta": _numlist, "gamma": _numlist,
        "alpha": {"type": ["number", "null"]},
    },
}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "window": _window,
        "census_file": {"type": "string"},
        "n_species": {"type": "integer", "minimum": 1},
        "species_map": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 1}},
        "allow_missing_marks": {"type": "boolean"},
        "covariates": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["path"],
                "properties": {"name": {"type": "string"}, "path": {"type": "string"}},
            },
        },
        "influence": {
            "type": "object",
            "additionalProperties": False,
            "required": ["psi", "kappa"],
            "properties": {
                "psi": {"type": "array", "items": _pos},
                "kappa": {"type": "array", "items": _pos},
                "divide_by_own_mark": {"type": "boolean"},
                "recruit_kernels": {"type": "array", "items": {"enum": ["dispersal", "competition"]}},
                "focal_species": {"type": "integer", "minimum": 1},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "include_mark": {"type": "boolean"},
                "common_intercept": {"type": "boolean"},
                "mark_density": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "atom": _pos,
                        "edges": _numlist,
                        "weights": _numlist,
                    },
                },
            },
        },
        "dummy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rho": {"type": ["number", "null"], "exclusiveMinimum": 0},
                           "rho_factor": _pos, "seed": {"type": "integer", "minimum": 0}},
        },
        "variance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "omegas": {"type": "array", "items": _nonneg, "minItems": 1},
                "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "project_psd": {"type": "boolean"},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["newton", "irls"]},
                "tol": _pos,
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"recruit": {"type": "string"}, "death": {"type": "string"}},
        },
        "diagnostics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rgrid": {"type": "array", "items": _pos, "minItems": 1},
                "bandwidth": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "hgrid": {"type": "array", "items": _nonneg, "minItems": 1},
                "tol": _pos,
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "window": _window,
                "K": {"type": "integer", "minimum": 0},
                "replicates": {"type": "integer", "minimum": 1},
                "recruit": {"type": "array", "items": _recruit, "minItems": 1},
                "death": {"type": "array", "items": _death, "minItems": 1},
                "lgcp": _matern,
                "death_field": _matern,
                "psi": {"type": "array", "items": _pos},
                "kappa": {"type": "array", "items": _pos},
                "recruit_kernels": {"type": "array", "items": {"enum": ["dispersal", "competition"]}},
                "covariate_params": {"type": "array", "items": _matern},
                "covariate_window": _window,
                "covariate_seed": {"type": "integer", "minimum": 0},
                "cellsize": _pos,
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "windows": {"type": "array", "items": _window, "minItems": 1},
                "replicates": {"type": "integer", "minimum": 2},
                "omegas": {"type": "array", "items": _nonneg, "minItems": 1},
                "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "species": {"type": "integer", "minimum": 1},
                "common_intercept": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "threads": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}


def config_hash(doc: dict) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _window_of(v) -> Window:
    return Window(*(float(x) for x in v))


@dataclass
class RunConfig:
    doc: dict
    base: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        try:
            jsonschema.validate(self.doc, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"configuration invalid at {where}: {exc.message}") from None

    def get(self, *keys, default=None) -> Any:
        cur: Any = self.doc
        for k in keys:
            if not isinstance(cur, dict) or k not in cur:
                return default
            cur = cur[k]
        return cur

    def require(self, *keys):
        v = self.get(*keys)
        if v is None:
            raise ConfigError(f"configuration key {'.'.join(keys)} is required for this command")
        return v

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base / q

    @property
    def hash(self) -> str:
        return config_hash(self.doc)

    @property
    def seed(self) -> int:
        return int(self.doc.get("seed", 0))

    @property
    def window(self) -> Window:
        return _window_of(self.require("window"))

    def influence(self) -> InfluenceConfig:
        inf = self.require("influence")
        return InfluenceConfig(
            tuple(inf["psi"]), tuple(inf["kappa"]), inf.get("divide_by_own_mark", True),
            tuple(inf["recruit_kernels"]) if "recruit_kernels" in inf else None,
            inf.get("focal_species", 1),
        )

    def dummy(self) -> DummyConfig:
        d = self.get("dummy", default={})
        return DummyConfig(d.get("rho"), int(d.get("seed", self.seed)), d.get("rho_factor", 4.0))

    def solver(self) -> SolverConfig:
        s = self.get("solver", default={})
        return SolverConfig(s.get("method", "newton"), s.get("tol", 1e-8), s.get("max_iter", 50))

    def omegas(self) -> list[float]:
        return [float(o) for o in self.get("variance", "omegas", default=[55.0])]

    def level(self) -> float:
        return float(self.get("variance", "level", default=0.95))

    def project_psd(self) -> bool:
        return bool(self.get("variance", "project_psd", default=False))

    def mark_density(self):
        from .model import MarkDensity

        md = self.get("model", "mark_density")
        if md is None:
            return MarkDensity.point_mass(1.0)
        if "edges" in md:
            return MarkDensity.histogram(md["edges"], md.get("weights", []))
        return MarkDensity.point_mass(md.get("atom", 1.0))

    def sim_config(self, window: Window | None = None):
        from .sim import SimConfig, W1

        s = self.get("simulation", default={})
        kw: dict = {"seed": self.seed}
        kw["window"] = window or (_window_of(s["window"]) if "window" in s else W1)
        for key in ("K", "replicates", "covariate_seed", "cellsize"):
            if key in s:
                kw[key] = s[key]
        if "recruit" in s:
            kw["recruit"] = tuple(RecruitParams(r["beta0"], r["beta"], r["gamma"]) for r in s["recruit"])
        if "death" in s:
            kw["death"] = tuple(DeathParams(d["beta0"], d["beta"], d["gamma"], d.get("alpha")) for d in s["death"])
        for key in ("lgcp", "death_field"):
            if key in s:
                kw[key] = MaternParams(**s[key])
        for key in ("psi", "kappa", "recruit_kernels"):
            if key in s:
                kw[key] = tuple(s[key])
        if "covariate_params" in s:
            kw["covariate_params"] = tuple(MaternParams(**m) for m in s["covariate_params"])
        if "covariate_window" in s:
            kw["covariate_window"] = _window_of(s["covariate_window"])
        return SimConfig(**kw)

    def experiment_config(self, threads: int | None = None):
        from .experiment import ExperimentConfig

        e = self.get("experiment", default={})
        kw: dict = {"sim": self.sim_config(), "solver": self.solver()}
        if "windows" in e:
            kw["windows"] = tuple(_window_of(w) for w in e["windows"])
        for key in ("replicates", "level", "species", "common_intercept"):
            if key in e:
                kw[key] = e[key]
        if "omegas" in e:
            kw["omegas"] = tuple(float(o) for o in e["omegas"])
        kw["rho_factor"] = self.get("dummy", "rho_factor", default=4.0)
        kw["threads"] = threads if threads is not None else int(self.doc.get("threads", 0))
        return ExperimentConfig(**kw)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read and validate a JSON configuration; ``overrides`` replace top-level keys."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"configuration file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    return RunConfig(doc, path.resolve().parent)
