"""Sandwich (Godambe) covariance of the composite-likelihood estimators.

Both models share one structure. With ``p = expit(eta)`` and the residual
vector ``a(x) = z(x) (y(x) - p(x))``:

* sensitivity ``S = sum z z' p (1 - p)``;
* recruits: ``V = S + sum_{x != x', d <= omega} a(x) a(x')'``;
* deaths:   ``V = sum_{d <= omega} a(x) a(x')'`` including ``x = x'``.

Pairs are only formed within a census. For recruits ``y`` is 1 on ``B_k``
and 0 on the dummies, so ``a = z rho0/(zeta + rho0) phi`` with ``phi = 1`` on
recruits and ``phi = -zeta/rho0`` on dummies. That choice of ``phi`` makes the
pair sum an unbiased estimate of ``int int h h' (g - 1)`` under the Campbell
formulas; its expectation vanishes for conditionally Poisson recruits.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, stats
from scipy.special import expit
from scipy.spatial import cKDTree

from .errors import ConfigError, DataError, NumericalError, RankDeficiencyError
from .model import DeathData, FitResult, RecruitData

__all__ = [
    "TruncationKernel",
    "SandwichResult",
    "PairCache",
    "sensitivity_recruits",
    "sensitivity_deaths",
    "variability_recruits",
    "variability_deaths",
    "godambe",
    "confidence_intervals",
    "sandwich",
    "omega_sweep",
    "write_table",
    "project_psd",
    "TABLE_COLUMNS",
]

RANK_TOL = 1e-10
TABLE_COLUMNS = ("parameter", "estimate", "se", "z", "p", "ci_lo", "ci_hi", "omega")


@dataclass(frozen=True)
class TruncationKernel:
    """Uniform kernel ``1[d <= omega]``."""

    omega: float

    def __post_init__(self):
        if not (self.omega >= 0):
            raise ConfigError(f"truncation distance must be >= 0, got {self.omega}")


@dataclass
class SandwichResult:
    names: list[str]
    theta: np.ndarray
    S: np.ndarray
    V: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    omega: float
    level: float
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    z: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)

    @property
    def ci(self) -> list[tuple[float, float, float]]:
        return [(self.level, float(lo), float(hi)) for lo, hi in zip(self.ci_lo, self.ci_hi)]

    def rows(self) -> list[dict]:
        return [
            {
                "parameter": n, "estimate": float(t), "se": float(s), "z": float(z), "p": float(p),
                "ci_lo": float(lo), "ci_hi": float(hi), "omega": float(self.omega),
            }
            for n, t, s, z, p, lo, hi in zip(self.names, self.theta, self.se, self.z, self.p, self.ci_lo, self.ci_hi)
        ]


class PairCache:
    """Within-census point pairs up to ``max_omega``, sorted by distance.

    Built once per dataset; every smaller ``omega`` is a prefix.
    """

    def __init__(self, xy, census, max_omega: float):
        xy = np.asarray(xy, dtype=float)
        census = np.asarray(census)
        self.max_omega = float(max_omega)
        ii, jj, dd = [], [], []
        for k in np.unique(census):
            rows = np.flatnonzero(census == k)
            if rows.size < 2:
                continue
            sub = xy[rows]
            r = self.max_omega
            if not np.isfinite(r):
                r = float(np.hypot(*np.ptp(sub, axis=0))) + 1.0
            pairs = cKDTree(sub).query_pairs(r, output_type="ndarray")
            if pairs.size == 0:
                continue
            i, j = rows[pairs[:, 0]], rows[pairs[:, 1]]
            ii.append(i)
            jj.append(j)
            dd.append(np.hypot(*(xy[i] - xy[j]).T))
        if ii:
            i, j, d = np.concatenate(ii), np.concatenate(jj), np.concatenate(dd)
            order = np.lexsort((j, i, d))
            self.i, self.j, self.d = i[order], j[order], d[order]
        else:
            self.i = self.j = np.zeros(0, dtype=np.intp)
            self.d = np.zeros(0)

    def __len__(self):
        return self.d.size

    def count(self, omega: float) -> int:
        if omega > self.max_omega:
            raise ConfigError(f"omega {omega} exceeds cached range {self.max_omega}")
        return int(np.searchsorted(self.d, omega, side="right"))

    def cross_sums(self, A: np.ndarray, omegas: Sequence[float]) -> list[np.ndarray]:
        """``sum_{i<j, d <= omega} (a_i a_j' + a_j a_i')`` for each (ascending) omega."""
        P = A.shape[1]
        acc = np.zeros((P, P))
        out = []
        start = 0
        for om in omegas:
            stop = self.count(om)
            if stop > start:
                i, j = self.i[start:stop], self.j[start:stop]
                acc = acc + A[i].T @ A[j]
                start = stop
            out.append(acc + acc.T)
        return out


def _check_theta(theta, data):
    th = theta.vector() if hasattr(theta, "vector") else np.asarray(theta, dtype=float)
    if th.size != data.n_params:
        raise ConfigError(f"parameter vector has {th.size} entries, design has {data.n_params}")
    if len(data.y) == 0:
        raise DataError("no data points: sensitivity undefined")
    return th


def _probabilities(th, data):
    return expit(data.X @ th + data.offset)


def _check_rank(S, names):
    w, U = np.linalg.eigh(S)
    scale = max(abs(w[-1]), np.finfo(float).tiny)
    if w[0] <= RANK_TOL * scale:
        v = U[:, 0]
        v = v * np.sign(v[np.argmax(np.abs(v))])
        terms = ", ".join(f"{c:+.3g}*{n}" for c, n in zip(v, names) if abs(c) > 1e-3)
        raise RankDeficiencyError(
            f"sensitivity matrix is rank deficient (min/max eigenvalue {w[0] / scale:.3g}); null direction {terms}",
            null_direction=v,
        )


def _sensitivity(theta, data):
    th = _check_theta(theta, data)
    p = _probabilities(th, data)
    S = data.X.T @ ((p * (1.0 - p))[:, None] * data.X)
    S = 0.5 * (S + S.T)
    _check_rank(S, data.names)
    return S


def sensitivity_recruits(theta, data: RecruitData) -> np.ndarray:
    """``sum_{B_k u Y_k} z z' zeta rho0 / (zeta + rho0)^2`` summed over censuses."""
    return _sensitivity(theta, data)


def sensitivity_deaths(theta, data: DeathData) -> np.ndarray:
    """``sum z z' p (1 - p)`` over trees at risk, summed over censuses."""
    return _sensitivity(theta, data)


def _residual_vectors(th, data):
    return data.X * (data.y - _probabilities(th, data))[:, None]


def _pairs_for(data, omega, pairs):
    if pairs is None:
        return PairCache(data.xy, data.census, omega)
    return pairs


def variability_recruits(theta, data: RecruitData, kernel: TruncationKernel,
                         pairs: PairCache | None = None) -> np.ndarray:
    """Sensitivity plus the off-diagonal pair sum within ``omega``."""
    S = sensitivity_recruits(theta, data)
    th = _check_theta(theta, data)
    A = _residual_vectors(th, data)
    cross = _pairs_for(data, kernel.omega, pairs).cross_sums(A, [kernel.omega])[0]
    return S + cross


def variability_deaths(theta, data: DeathData, kernel: TruncationKernel,
                       pairs: PairCache | None = None) -> np.ndarray:
    """Pair sum of residual products within ``omega``, diagonal included."""
    th = _check_theta(theta, data)
    A = _residual_vectors(th, data)
    diag = A.T @ A
    cross = _pairs_for(data, kernel.omega, pairs).cross_sums(A, [kernel.omega])[0]
    return 0.5 * (diag + diag.T) + cross


def project_psd(V) -> np.ndarray:
    """Nearest positive semidefinite matrix in Frobenius norm (negative eigenvalues set to 0)."""
    V = 0.5 * (np.asarray(V, dtype=float) + np.asarray(V, dtype=float).T)
    w, U = np.linalg.eigh(V)
    out = (U * np.clip(w, 0.0, None)) @ U.T
    return 0.5 * (out + out.T)


def godambe(S, V) -> tuple[np.ndarray, np.ndarray]:
    """``cov = S^-1 V S^-1`` by Cholesky solves, and ``se = sqrt(diag(cov))``.

    Diagonal entries that come out negative (a truncated-kernel ``V`` need not
    be positive semidefinite) give ``se = nan`` with a warning.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    try:
        c = linalg.cho_factor(S)
    except linalg.LinAlgError:
        raise NumericalError("sensitivity matrix is not positive definite") from None
    left = linalg.cho_solve(c, V)
    cov = linalg.cho_solve(c, left.T)
    cov = 0.5 * (cov + cov.T)
    d = np.diag(cov).copy()
    if np.any(d < 0):
        warnings.warn("negative sandwich variance; standard error set to nan", RuntimeWarning, stacklevel=2)
    with np.errstate(invalid="ignore"):
        se = np.sqrt(np.where(d >= 0, d, np.nan))
    return cov, se


def confidence_intervals(theta, se, level: float = 0.95) -> dict:
    """Gaussian intervals ``theta +- z se``, z statistics and two-sided p-values."""
    if not 0 < level < 1:
        raise ConfigError("confidence level must lie in (0, 1)")
    theta = np.asarray(theta, dtype=float)
    se = np.asarray(se, dtype=float)
    q = stats.norm.ppf(0.5 + level / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        zstat = theta / se
    return {
        "quantile": float(q),
        "lo": theta - q * se,
        "hi": theta + q * se,
        "z": zstat,
        "p": 2.0 * stats.norm.sf(np.abs(zstat)),
    }


def _result(fit_names, theta, S, V, omega, level, psd=False):
    if psd:
        V = project_psd(V)
    cov, se = godambe(S, V)
    ci = confidence_intervals(theta, se, level)
    return SandwichResult(
        names=list(fit_names), theta=np.asarray(theta, dtype=float), S=S, V=V, cov=cov, se=se,
        omega=float(omega), level=level, ci_lo=ci["lo"], ci_hi=ci["hi"], z=ci["z"], p=ci["p"],
    )


def omega_sweep(fit: FitResult, omegas: Sequence[float], level: float = 0.95,
                pairs: PairCache | None = None, psd: bool = False) -> list[SandwichResult]:
    """Sandwich results for each truncation distance, sharing one pair enumeration.

    The truncated-kernel ``V`` need not be positive semidefinite. With
    ``psd=True`` it is replaced by :func:`project_psd` before the sandwich;
    the default keeps the unmodified estimator.
    """
    omegas = [TruncationKernel(float(o)).omega for o in omegas]
    if not omegas:
        raise ConfigError("need at least one truncation distance")
    order = np.argsort(omegas, kind="stable")
    data, th = fit.data, fit.theta
    S = _sensitivity(th, data)
    A = _residual_vectors(th, data)
    if pairs is None:
        pairs = PairCache(data.xy, data.census, max(omegas))
    cross = pairs.cross_sums(A, [omegas[i] for i in order])
    if fit.model == "recruit":
        base = S
    else:
        base = A.T @ A
        base = 0.5 * (base + base.T)
    out: list[SandwichResult | None] = [None] * len(omegas)
    for pos, idx in enumerate(order):
        out[idx] = _result(fit.names, th, S, base + cross[pos], omegas[idx], level, psd)
    return out


def sandwich(fit: FitResult, omega: float, level: float = 0.95, psd: bool = False) -> SandwichResult:
    """Godambe covariance, standard errors and intervals at one ``omega``."""
    return omega_sweep(fit, [omega], level, psd=psd)[0]


def write_table(results: Sequence[SandwichResult], path, provenance: dict | None = None) -> None:
    """CSV of (parameter, estimate, se, z, p, ci_lo, ci_hi, omega) rows.

    ``provenance`` entries are written as leading ``# key: value`` lines.
    """
    with open(path, "w", newline="") as fh:
        for k, v in (provenance or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for res in results:
            for row in res.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
