import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forestcl import logistic
from forestcl.core import MarkedPoint, PointPattern, Window
from forestcl.covariates import HistoryFrame, InfluenceConfig
from forestcl.errors import ConfigError, ConvergenceError, DataError, NumericalError, SeparationWarning
from forestcl.model import (DeathParams, DummyConfig, MarkDensity, ModelSpec, RecruitParams, SolverConfig, death_data,
                            death_loglik, death_probability, death_score, fit_at, fit_deaths, fit_recruits,
                            read_params, recruit_census_scores, recruit_data, recruit_data_from_series,
                            recruit_intensity, recruit_loglik, recruit_score, sample_dummy, write_params)

from oracles import fd_jacobian, logistic as logistic_oracle

W = Window(0, 100, 0, 50)
NO_INF = InfluenceConfig((), ())
# exp(-6.32), the study recruit intercept
EXP_M632 = 0.0017999435062305911
# expit(-0.25), the study death intercept
EXPIT_M025 = 0.43782349911420193


def empty_frame(census=0, window=W):
    return HistoryFrame((), (), census, window=window)


class TestParams:
    def test_round_trip(self):
        r = RecruitParams([1, 2], [3.0], [4.0, 5.0])
        assert RecruitParams.from_vector(r.vector(), 2, 1, 2) == r
        assert RecruitParams.from_vector(r.vector() + 1, 2, 1, 2) != r
        d = DeathParams([1], [3.0], [4.0], alpha=0.5)
        assert d.vector().tolist() == [1, 0.5, 3, 4]
        assert DeathParams.from_vector(d.vector(), 1, 1, 1, True) == d

    def test_finite(self):
        with pytest.raises(ConfigError):
            RecruitParams([np.nan], [], [])
        with pytest.raises(ConfigError):
            DeathParams([0.0], [], [], alpha=math.inf)

    def test_wrong_length(self):
        with pytest.raises(ConfigError):
            RecruitParams.from_vector([1, 2, 3], 1, 1, 0)


class TestIntensity:
    def test_zero(self):
        x = MarkedPoint(-1, (5.0, 5.0))
        assert recruit_intensity(x, empty_frame(), RecruitParams([0.0], [], []), MarkDensity(), NO_INF) == 1.0

    def test_study_intercept(self):
        x = MarkedPoint(-1, (5.0, 5.0))
        v = recruit_intensity(x, empty_frame(), RecruitParams([-6.32], [], []), MarkDensity(), NO_INF)
        assert v == pytest.approx(EXP_M632, rel=1e-14)

    def test_log_linear_in_gamma(self):
        pat = PointPattern(W, [[5, 5]], ids=[1])
        frame = HistoryFrame((pat,), (), 0)
        cfg = InfluenceConfig((6.0,), (10.0,))
        x = MarkedPoint(-1, (5.0, 5.0))  # dispersal influence 1
        a = recruit_intensity(x, frame, RecruitParams([-1.0], [], [0.4]), MarkDensity(), cfg)
        b = recruit_intensity(x, frame, RecruitParams([-1.0], [], [0.8]), MarkDensity(), cfg)
        assert b / a == pytest.approx(math.exp(0.4), rel=1e-13)

    def test_overflow(self):
        with pytest.raises(NumericalError, match="800"):
            recruit_intensity(MarkedPoint(-1, (1.0, 1.0)), empty_frame(), RecruitParams([800.0], [], []),
                              MarkDensity(), NO_INF)

    def test_histogram_density(self):
        f = MarkDensity.histogram([1, 2, 4], [0.5, 0.5])
        x = MarkedPoint(-1, (1.0, 1.0), 3.0)
        assert recruit_intensity(x, empty_frame(), RecruitParams([0.0], [], []), f, NO_INF) == 0.25
        with pytest.raises(ConfigError):
            MarkDensity.histogram([1, 2], [0.7])


class TestDeathProbability:
    def test_half(self):
        x = MarkedPoint(1, (1.0, 1.0))
        assert death_probability(x, empty_frame(), DeathParams([0.0], [], []), NO_INF) == 0.5

    def test_study_intercept(self):
        x = MarkedPoint(1, (1.0, 1.0))
        assert death_probability(x, empty_frame(), DeathParams([-0.25], [], []), NO_INF) == pytest.approx(
            EXPIT_M025, rel=1e-14)
        assert EXPIT_M025 == pytest.approx(logistic_oracle(-0.25), rel=1e-15)

    @given(st.floats(0.01, 3), st.floats(0.1, 20), st.floats(0.1, 20))
    def test_monotone_in_alpha_m(self, alpha, m1, m2):
        th = DeathParams([-1.0], [], [], alpha=alpha)
        p1 = death_probability(MarkedPoint(1, (1.0, 1.0), m1), empty_frame(), th, NO_INF)
        p2 = death_probability(MarkedPoint(1, (1.0, 1.0), m2), empty_frame(), th, NO_INF)
        assert (p1 < p2) == (m1 < m2) or math.isclose(p1, p2, abs_tol=1e-15) or p1 == p2

    def test_clamp_warns(self):
        with pytest.warns(RuntimeWarning):
            p = death_probability(MarkedPoint(1, (1.0, 1.0)), empty_frame(), DeathParams([-900.0], [], []), NO_INF)
        assert 0 <= p < 1e-200


class TestDummy:
    def test_count_is_poisson_100(self):
        cfg = DummyConfig(rho=100 / W.area, seed=5)
        counts = np.array([len(sample_dummy(W, k, cfg, MarkDensity())) for k in range(10_000)])
        se = math.sqrt(100 / counts.size)
        assert abs(counts.mean() - 100) < 4 * se
        assert abs(counts.var(ddof=1) / 100 - 1) < 0.1

    def test_tiny_rho(self):
        assert len(sample_dummy(W, 0, DummyConfig(rho=1e-12), MarkDensity())) == 0

    def test_deterministic_and_independent(self):
        cfg = DummyConfig(rho=0.05, seed=3)
        a, b = sample_dummy(W, 2, cfg, MarkDensity()), sample_dummy(W, 2, cfg, MarkDensity())
        assert a.same_as(b)
        c = sample_dummy(W, 3, cfg, MarkDensity())
        assert not np.array_equal(a.xy[:5], c.xy[:5])
        assert np.all(a.ids < 0)

    def test_marks_from_density(self):
        f = MarkDensity.histogram([1, 2, 4], [0.25, 0.75])
        d = sample_dummy(W, 0, DummyConfig(rho=2.0, seed=1), f)
        m = d.marks
        assert m.min() >= 1 and m.max() <= 4
        assert abs((m < 2).mean() - 0.25) < 4 * math.sqrt(0.25 * 0.75 / m.size)

    def test_rho_positive(self):
        with pytest.raises(ConfigError):
            DummyConfig(rho=0.0)


def one_point_data(beta_marks=None):
    spec = ModelSpec(NO_INF, 1)
    rec = PointPattern(W, [[10, 10]], ids=[1])
    return recruit_data([(rec, PointPattern.empty(W), empty_frame())], spec, rho=0.3)


class TestRecruitScore:
    def test_one_point_formula(self):
        data = one_point_data()
        for beta in (-2.0, 0.0, 1.3):
            want = 1 - math.exp(beta) / (math.exp(beta) + 0.3)
            assert recruit_score([beta], data)[0] == pytest.approx(want, rel=1e-14)

    def test_mark_density_cancels(self):
        # zeta = f(m) exp(eta), rho0 = f(m) rho: the score is free of f
        rng = np.random.default_rng(0)
        spec = ModelSpec(NO_INF, 1)
        f = MarkDensity.histogram([1, 2, 5], [0.3, 0.7])
        rec = PointPattern(W, rng.uniform([0, 0], [100, 50], (20, 2)), f.sample(rng, 20), np.arange(20))
        dum = PointPattern(W, rng.uniform([0, 0], [100, 50], (60, 2)), f.sample(rng, 60), -np.arange(1, 61))
        data = recruit_data([(rec, dum, empty_frame())], spec, rho=0.02)
        beta = -4.0
        direct = 0.0
        for pat, label in ((rec, 1), (dum, 0)):
            for m in pat.marks:
                zeta = float(f.pdf(m)) * math.exp(beta)
                rho0 = float(f.pdf(m)) * 0.02
                direct += label - zeta / (zeta + rho0)
        assert recruit_score([beta], data)[0] == pytest.approx(direct, rel=1e-12)

    def test_root_at_fit(self, small):
        g = recruit_score(small.rfit.theta, small.rdata)
        assert np.max(np.abs(g)) <= 1e-8 * (1 + np.max(np.abs(small.rfit.theta)))
        assert small.rfit.converged

    def test_additivity_bit_exact(self, small):
        th = small.rfit.theta + 0.01
        per = recruit_census_scores(th, small.rdata)
        total = np.zeros(per.shape[1])
        for row in per:
            total = total + row
        assert np.array_equal(recruit_score(th, small.rdata), total)

    def test_gradient_of_loglik(self, small):
        th = small.rfit.theta + 0.05
        J = fd_jacobian(lambda t: [recruit_loglik(t, small.rdata)], th)[0]
        assert np.allclose(recruit_score(th, small.rdata), J, rtol=1e-6, atol=1e-6 * np.abs(J).max())


class TestDeathScore:
    def test_saturated_zero(self):
        spec = ModelSpec(NO_INF, 1, include_mark=False)
        alive = PointPattern(W, [[1, 1], [2, 2], [3, 3]], ids=[1, 2, 3])
        data = death_data([(alive, np.zeros(3, bool), empty_frame())], spec)
        assert np.allclose(death_score([-60.0], data), 0.0, atol=1e-20)

    def test_gradient_of_loglik(self, small):
        th = small.dfit.theta + 0.05
        J = fd_jacobian(lambda t: [death_loglik(t, small.ddata)], th)[0]
        g = death_score(th, small.ddata)
        assert np.allclose(g, J, rtol=1e-6, atol=1e-6 * np.abs(J).max())

    def test_intercept_only_matches_rate(self):
        spec = ModelSpec(NO_INF, 1, include_mark=False)
        rng = np.random.default_rng(1)
        alive = PointPattern(W, rng.uniform([0, 0], [100, 50], (50, 2)), ids=np.arange(50))
        died = rng.random(50) < 0.3
        fit = fit_deaths(death_data([(alive, died, empty_frame())], spec))
        assert logistic_oracle(fit.theta[0]) == pytest.approx(died.mean(), rel=1e-9)

    def test_permutation_invariance(self, small):
        d = small.ddata
        perm = np.random.default_rng(4).permutation(len(d.y))
        from dataclasses import replace

        shuffled = replace(d, X=d.X[perm], y=d.y[perm], census=d.census[perm], xy=d.xy[perm], ids=d.ids[perm])
        a = fit_deaths(d).theta
        b = fit_deaths(shuffled).theta
        assert np.allclose(a, b, rtol=1e-9, atol=1e-10)


class TestFitting:
    def test_dual_solver_recruits(self, small):
        a = fit_recruits(small.rdata, SolverConfig("newton", tol=1e-12)).theta
        b = fit_recruits(small.rdata, SolverConfig("irls", tol=1e-12)).theta
        assert np.max(np.abs(a - b)) <= 1e-8

    def test_dual_solver_deaths(self, small):
        a = fit_deaths(small.ddata, SolverConfig("newton", tol=1e-12)).theta
        b = fit_deaths(small.ddata, SolverConfig("irls", tol=1e-12)).theta
        assert np.max(np.abs(a - b)) <= 1e-8

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(30, 200))
    def test_dual_solver_random_logistic(self, seed, n):
        rng = np.random.default_rng(seed)
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        off = rng.normal(size=n) * 0.5
        y = (rng.random(n) < 1 / (1 + np.exp(-(X @ [0.2, 0.5, -0.7] + off)))).astype(float)
        if y.sum() in (0, n):
            return
        a = logistic.newton_logistic(X, y, off, tol=1e-12)
        b = logistic.irls_logistic(X, y, off, tol=1e-12)
        if a.converged and b.converged and np.max(np.abs(a.theta)) < 15:
            assert np.max(np.abs(a.theta - b.theta)) <= 1e-8

    def test_unidentifiable_census_named(self):
        spec = ModelSpec(NO_INF, 2)
        rec = PointPattern(W, [[10, 10]], ids=[1])
        dum = sample_dummy(W, 0, DummyConfig(rho=0.01), MarkDensity())
        data = recruit_data([(rec, dum, empty_frame(0)), (PointPattern.empty(W), dum, empty_frame(1))], spec, 0.01)
        with pytest.raises(DataError, match="census 2"):
            fit_recruits(data)

    def test_no_deaths_unidentifiable(self):
        spec = ModelSpec(NO_INF, 1, include_mark=False)
        alive = PointPattern(W, [[1, 1], [2, 2]], ids=[1, 2])
        with pytest.raises(DataError, match="no deaths"):
            fit_deaths(death_data([(alive, np.zeros(2, bool), empty_frame())], spec))

    def test_nonconvergence(self, small):
        with pytest.raises(ConvergenceError) as exc:
            fit_deaths(small.ddata, SolverConfig(max_iter=1, tol=1e-14))
        assert exc.value.result is not None and not exc.value.result.converged

    def test_separation_warning(self):
        spec = ModelSpec(NO_INF, 1, include_mark=False, covariate_names=None)
        alive = PointPattern(W, [[1, 1], [2, 2], [90, 40], [95, 45]], ids=[1, 2, 3, 4])
        from forestcl.fields import RasterField

        cov = RasterField(W, 50.0, [[0.0, 1.0]])
        frame = HistoryFrame((), (cov,), 0, window=W)
        data = death_data([(alive, np.array([False, False, True, True]), frame)], spec)
        with pytest.warns(SeparationWarning):
            try:
                fit_deaths(data, SolverConfig(max_iter=200, tol=1e-15))
            except ConvergenceError:
                pass

    def test_dummy_intensity_drift(self, small):
        # estimates at 4x the dummy intensity stay within 3 sd of the dummy-resampling spread
        spec = small.spec
        base = DummyConfig(seed=0).rho_factor
        draws = []
        for s in range(12):
            rd = recruit_data_from_series(small.series, small.covariates, spec, DummyConfig(seed=100 + s),
                                          frames=small.frames)
            draws.append(fit_recruits(rd).theta)
        draws = np.array(draws)
        sd = draws.std(axis=0, ddof=1)
        rd4 = recruit_data_from_series(small.series, small.covariates, spec,
                                       DummyConfig(seed=999, rho_factor=4 * base), frames=small.frames)
        hi = fit_recruits(rd4).theta
        assert np.all(np.abs(hi - draws.mean(axis=0)) < 3 * sd)

    def test_fit_at(self, small):
        res = fit_at("death", small.ddata, small.dfit.theta)
        assert res.converged and np.array_equal(res.theta, small.dfit.theta)
        assert res.params.alpha is None


class TestParamFile:
    def test_round_trip(self, tmp_path):
        names = ["beta0", "beta[1]", "gamma[1]"]
        theta = np.array([-6.32, 0.1 + 1e-17, 1 / 3])
        write_params(tmp_path / "p.txt", "recruit", names, theta)
        m, n, v = read_params(tmp_path / "p.txt")
        assert m == "recruit" and n == names and np.array_equal(v, theta)

    def test_malformed(self, tmp_path):
        (tmp_path / "p.txt").write_text("# model death\nbeta0\t3\t1.0\n")
        with pytest.raises(DataError):
            read_params(tmp_path / "p.txt")
