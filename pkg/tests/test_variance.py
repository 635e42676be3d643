import csv
import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import expit

from forestcl.core import PointPattern, Window
from forestcl.covariates import HistoryFrame, InfluenceConfig
from forestcl.errors import ConfigError, DataError, NumericalError, RankDeficiencyError
from forestcl.fields import MaternParams
from forestcl.model import (DeathParams, DummyConfig, MarkDensity, ModelSpec, RecruitParams, SolverConfig, death_data,
                            death_score, fit_deaths, recruit_data, recruit_score, sample_dummy)
from forestcl.sim import simulate_lgcp_recruits
from forestcl.variance import (TABLE_COLUMNS, PairCache, TruncationKernel, confidence_intervals, godambe, omega_sweep,
                               project_psd, sandwich, sensitivity_deaths, sensitivity_recruits, variability_deaths,
                               variability_recruits, write_table)

from oracles import brute_pair_sum, fd_jacobian

W = Window(0, 100, 0, 50)
NO_INF = InfluenceConfig((), ())


def residual_rows(fit):
    d = fit.data
    return d.X * (d.y - expit(d.X @ fit.theta + d.offset))[:, None]


class TestSensitivity:
    def test_one_point(self):
        spec = ModelSpec(NO_INF, 1)
        rec = PointPattern(W, [[10, 10]], ids=[1])
        data = recruit_data([(rec, PointPattern.empty(W), HistoryFrame((), (), 0, window=W))], spec, rho=0.3)
        beta = -0.7
        zeta = math.exp(beta)
        assert sensitivity_recruits([beta], data)[0, 0] == pytest.approx(zeta * 0.3 / (zeta + 0.3) ** 2, rel=1e-14)

    def test_bernoulli_information(self):
        spec = ModelSpec(NO_INF, 1, include_mark=False)
        alive = PointPattern(W, [[1, 1]], ids=[1])
        data = death_data([(alive, np.array([True]), HistoryFrame((), (), 0, window=W))], spec)
        assert sensitivity_deaths([0.0], data)[0, 0] == 0.25

    def test_saturation(self):
        spec = ModelSpec(NO_INF, 1, include_mark=False)
        alive = PointPattern(W, [[1, 1]], ids=[1])
        data = death_data([(alive, np.array([False]), HistoryFrame((), (), 0, window=W))], spec)
        with pytest.raises(RankDeficiencyError):
            sensitivity_deaths([-800.0], data)

    def test_recruits_match_fd_jacobian(self, small):
        th = small.rfit.theta
        S = sensitivity_recruits(th, small.rdata)
        J = -fd_jacobian(lambda t: recruit_score(t, small.rdata), th, h=1e-5)
        rel = np.abs(S - J) / np.maximum(np.abs(S), 1e-12 * np.abs(S).max())
        assert rel.max() < 1e-4

    def test_deaths_match_fd_jacobian(self, small):
        th = small.dfit.theta
        S = sensitivity_deaths(th, small.ddata)
        J = -fd_jacobian(lambda t: death_score(t, small.ddata), th, h=1e-5)
        rel = np.abs(S - J) / np.maximum(np.abs(S), 1e-12 * np.abs(S).max())
        assert rel.max() < 1e-6

    def test_empty(self, small):
        d = small.ddata
        empty = replace(d, X=d.X[:0], y=d.y[:0], census=d.census[:0], xy=d.xy[:0], ids=d.ids[:0])
        with pytest.raises(DataError):
            sensitivity_deaths(small.dfit.theta, empty)

    def test_rank_deficiency_names_direction(self, small):
        d = small.ddata
        X = np.column_stack([d.X, 2 * d.X[:, -1]])
        bad = replace(d, X=X, names=d.names + ["dup"])
        with pytest.raises(RankDeficiencyError, match="dup") as exc:
            sensitivity_deaths(np.append(small.dfit.theta, 0.0), bad)
        v = exc.value.null_direction
        assert np.linalg.norm(X @ v) < 1e-6 * np.linalg.norm(X)


class TestVariability:
    def test_omega_zero_recruits(self, small):
        th = small.rfit.theta
        assert np.array_equal(variability_recruits(th, small.rdata, TruncationKernel(0.0)),
                              sensitivity_recruits(th, small.rdata))

    def test_small_omega_deaths(self, small):
        A = residual_rows(small.dfit)
        d = small.ddata
        dmin = min(
            np.min(np.hypot(*(d.xy[r][:, None] - d.xy[r][None]).transpose(2, 0, 1))[np.triu_indices(r.size, 1)])
            for r in (d.rows(k) for k in range(d.K))
        )
        V = variability_deaths(small.dfit.theta, d, TruncationKernel(0.5 * dmin))
        assert np.allclose(V, A.T @ A, rtol=1e-13, atol=0)

    def test_full_diagonal_recruits(self, small):
        d = small.rdata
        A = residual_rows(small.rfit)
        V = variability_recruits(small.rfit.theta, d, TruncationKernel(d.window.diagonal))
        want = sensitivity_recruits(small.rfit.theta, d) + brute_pair_sum(A, d.xy, d.census, math.inf)
        assert np.allclose(V, want, rtol=1e-10, atol=1e-10 * np.abs(want).max())

    def test_full_diagonal_deaths(self, small):
        d = small.ddata
        A = residual_rows(small.dfit)
        V = variability_deaths(small.dfit.theta, d, TruncationKernel(d.window.diagonal))
        want = brute_pair_sum(A, d.xy, d.census, math.inf, include_diagonal=True)
        assert np.allclose(V, want, rtol=1e-10, atol=1e-10 * np.abs(want).max())

    @pytest.mark.parametrize("omega", [3.0, 17.5, 40.0])
    def test_intermediate_omega_matches_brute(self, small, omega):
        d = small.ddata
        A = residual_rows(small.dfit)
        V = variability_deaths(small.dfit.theta, d, TruncationKernel(omega))
        want = brute_pair_sum(A, d.xy, d.census, omega, include_diagonal=True)
        assert np.allclose(V, want, rtol=1e-10, atol=1e-10 * np.abs(want).max())

    def test_locality(self, small):
        # on a sub-window only pairs inside it enter
        d = small.ddata
        sub = Window(0, 120, 0, 60)
        keep = sub.contains(d.xy)
        ds = replace(d, X=d.X[keep], y=d.y[keep], census=d.census[keep], xy=d.xy[keep], ids=d.ids[keep])
        A = residual_rows(small.dfit)[keep]
        V = variability_deaths(small.dfit.theta, ds, TruncationKernel(30.0))
        want = brute_pair_sum(A, ds.xy, ds.census, 30.0, include_diagonal=True)
        assert np.allclose(V, want, rtol=1e-10, atol=1e-12)

    def test_pair_cache_prefix(self, small):
        d = small.rdata
        cache = PairCache(d.xy, d.census, 60.0)
        A = residual_rows(small.rfit)
        sums = cache.cross_sums(A, [10.0, 30.0, 60.0])
        for om, s in zip([10.0, 30.0, 60.0], sums):
            one = PairCache(d.xy, d.census, om).cross_sums(A, [om])[0]
            assert np.allclose(s, one, rtol=1e-12, atol=1e-12)
        with pytest.raises(ConfigError):
            cache.count(61.0)

    def test_negative_omega(self):
        with pytest.raises(ConfigError):
            TruncationKernel(-1.0)


class TestMonteCarloOracles:
    def test_poisson_recruit_pair_sum_centred(self):
        # g = 1: recruits are conditionally Poisson with intensity zeta; the pair sum has mean 0
        win = Window(0, 150, 0, 80)
        rng = np.random.default_rng(77)
        hist = PointPattern(win, rng.uniform([0, 0], [150, 80], (60, 2)), np.ones(60), np.arange(60), 1)
        cfg = InfluenceConfig((6.0,), (10.0,), recruit_kernels=("dispersal",))
        frame = HistoryFrame((hist,), (), 0)
        theta = RecruitParams([-4.0], [], [1.0])
        spec = ModelSpec(cfg, 1)
        flat = MaternParams(1e-300, 1.0, 1.0)
        rho = 0.02
        G = np.zeros((80, 150))
        R = 500
        sums = np.empty((R, 2, 2))
        for r in range(R):
            rec = simulate_lgcp_recruits(frame, theta, flat, np.random.default_rng([77, r]), cfg, G=G)
            dum = sample_dummy(win, r, DummyConfig(rho=rho, seed=5), MarkDensity())
            data = recruit_data([(rec, dum, frame)], spec, rho)
            p = expit(data.X @ theta.vector() + data.offset)
            A = data.X * (data.y - p)[:, None]
            sums[r] = PairCache(data.xy, data.census, 20.0).cross_sums(A, [20.0])[0]
        mean = sums.mean(axis=0)
        se = sums.std(axis=0, ddof=1) / math.sqrt(R)
        assert np.all(np.abs(mean) < 4 * se), (mean, se)

    def test_independent_deaths_variability(self):
        win = Window(0, 150, 0, 80)
        rng = np.random.default_rng(78)
        n = 300
        alive = PointPattern(win, rng.uniform([0, 0], [150, 80], (n, 2)), np.ones(n), np.arange(n), 1)
        cfg = InfluenceConfig((6.0,), (10.0,))
        frame = HistoryFrame((alive,), (), 0)
        spec = ModelSpec(cfg, 1, include_mark=False)
        theta = np.array([-0.25, -0.25])
        base = death_data([(alive, np.zeros(n, bool), frame)], spec)
        p = expit(base.X @ theta)
        target = base.X.T @ (base.X * (p * (1 - p))[:, None])
        cache = PairCache(base.xy, base.census, 5.0)
        R = 500
        vs = np.empty((R, 2, 2))
        for r in range(R):
            y = (rng.random(n) < p).astype(float)
            A = base.X * (y - p)[:, None]
            vs[r] = A.T @ A + cache.cross_sums(A, [5.0])[0]
        mean = vs.mean(axis=0)
        se = vs.std(axis=0, ddof=1) / math.sqrt(R)
        assert np.all(np.abs(mean - target) < 4 * se), (mean, target, se)


class TestGodambe:
    def test_independence_sandwich(self):
        S = np.array([[4.0, 1.0], [1.0, 3.0]])
        cov, se = godambe(S, S)
        assert np.allclose(cov, np.linalg.inv(S), rtol=1e-13)

    def test_scalar(self):
        cov, se = godambe([[2.0]], [[8.0]])
        assert cov[0, 0] == pytest.approx(2.0, rel=1e-15) and se[0] == pytest.approx(math.sqrt(2), rel=1e-15)

    def test_quantile(self):
        ci = confidence_intervals([1.0], [0.5], 0.95)
        assert ci["quantile"] == pytest.approx(1.959964, abs=1e-6)
        assert ci["lo"][0] == pytest.approx(1 - 1.959963984540054 * 0.5, rel=1e-14)
        assert ci["p"][0] == pytest.approx(0.04550026389635842, rel=1e-10)

    def test_not_pd(self):
        with pytest.raises(NumericalError):
            godambe([[1.0, 2.0], [2.0, 1.0]], np.eye(2))

    def test_negative_variance_warns(self):
        with pytest.warns(RuntimeWarning):
            _, se = godambe(np.eye(2), np.diag([1.0, -1.0]))
        assert np.isnan(se[1]) and se[0] == 1.0

    @pytest.mark.parametrize("omega", [5.0, 30.0, 55.0, 155.0])
    def test_symmetric_and_projected_psd(self, small, omega):
        for fit in (small.rfit, small.dfit):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                raw = sandwich(fit, omega)
            assert np.allclose(raw.cov, raw.cov.T, atol=1e-10 * np.abs(raw.cov).max())
            res = sandwich(fit, omega, psd=True)
            nrm = np.abs(res.cov).max()
            assert np.allclose(res.cov, res.cov.T, atol=1e-10 * nrm)
            assert np.linalg.eigvalsh(res.cov).min() >= -1e-10 * nrm
            assert np.all(np.isfinite(res.se))

    def test_raw_psd_at_short_range(self, small):
        # the truncated kernel only loses definiteness once omega is large relative to the window
        for fit in (small.rfit, small.dfit):
            for omega in (5.0, 30.0):
                cov = sandwich(fit, omega).cov
                assert np.linalg.eigvalsh(cov).min() >= -1e-10 * np.abs(cov).max()

    def test_project_psd(self):
        V = np.array([[1.0, 2.0], [2.0, 1.0]])
        P = project_psd(V)
        assert np.allclose(P, [[1.5, 1.5], [1.5, 1.5]], rtol=1e-14)
        assert np.array_equal(project_psd(np.eye(3)), np.eye(3))

    def test_covariate_scaling(self, small):
        d = small.ddata
        c = 7.5
        j = d.names.index("beta[1]")
        X = d.X.copy()
        X[:, j] *= c
        scaled = replace(d, X=X)
        tight = SolverConfig(tol=1e-13)
        a = sandwich(fit_deaths(d, tight), 30.0)
        b = sandwich(fit_deaths(scaled, tight), 30.0)
        assert b.theta[j] == pytest.approx(a.theta[j] / c, rel=1e-8)
        assert b.se[j] == pytest.approx(a.se[j] / c, rel=1e-8)
        assert np.allclose(b.z, a.z, rtol=1e-8)
        assert np.allclose(b.p, a.p, rtol=1e-8)


class TestSweep:
    def test_sweep_matches_single(self, small):
        omegas = [80.0, 5.0, 30.0]
        res = omega_sweep(small.dfit, omegas)
        for om, r in zip(omegas, res):
            one = sandwich(small.dfit, om)
            assert r.omega == om
            assert np.allclose(r.V, one.V, rtol=1e-12, atol=1e-12)
            V = variability_deaths(small.dfit.theta, small.ddata, TruncationKernel(om))
            assert np.allclose(r.V, V, rtol=1e-12, atol=1e-12)

    def test_table(self, small, tmp_path):
        res = omega_sweep(small.rfit, [30.0, 55.0])
        write_table(res, tmp_path / "t.csv", {"seed": 7})
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "# seed: 7"
        rows = list(csv.DictReader(lines[1:]))
        assert tuple(rows[0]) == TABLE_COLUMNS
        assert len(rows) == 2 * len(small.rfit.names)
        r0 = rows[0]
        assert float(r0["ci_lo"]) < float(r0["estimate"]) < float(r0["ci_hi"])
