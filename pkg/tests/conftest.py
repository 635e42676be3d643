from dataclasses import dataclass

import numpy as np
import pytest

from forestcl.model import (DummyConfig, ModelSpec, build_frames, death_data_from_series, fit_deaths, fit_recruits,
                            recruit_data_from_series)
from forestcl.sim import W1_HALF, SimConfig, run_replicate


@dataclass
class Small:
    cfg: SimConfig
    series: object
    covariates: tuple
    spec: ModelSpec
    frames: list
    rdata: object
    ddata: object
    rfit: object
    dfit: object


def build_small(seed=7, K=4, common_intercept=False):
    cfg = SimConfig(window=W1_HALF, K=K, seed=seed)
    res = run_replicate(cfg, 0)
    spec = ModelSpec(cfg.influence(1), K, include_mark=False, common_intercept=common_intercept)
    frames = build_frames(res.series, res.covariates)
    rd = recruit_data_from_series(res.series, res.covariates, spec, DummyConfig(seed=seed), frames=frames)
    dd = death_data_from_series(res.series, res.covariates, spec, frames=frames)
    return Small(cfg, res.series, res.covariates, spec, frames, rd, dd, fit_recruits(rd), fit_deaths(dd))


@pytest.fixture(scope="session")
def small():
    """A four-interval simulated series on the half window, fitted with census intercepts."""
    return build_small()


@pytest.fixture(scope="session")
def small_common():
    return build_small(seed=8, K=3, common_intercept=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_REPORT = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT] = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for the acceptance summary and echo it immediately."""
    lines = request.config.stash[_REPORT]
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        lines.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
