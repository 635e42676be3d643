"""Logistic regression with offsets: damped Newton and IRLS.

Both solvers maximise ``sum(y * eta - log(1 + exp(eta)))`` with
``eta = X @ theta + offset`` and stop once
``max|score| <= tol * (1 + max|theta|)``. They share nothing but the
stopping rule, so agreement between them is a meaningful check.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import NumericalError

__all__ = ["SolverResult", "loglik", "score", "newton_logistic", "irls_logistic"]


@dataclass
class SolverResult:
    theta: np.ndarray
    converged: bool
    iterations: int
    score: np.ndarray
    loglik: float
    trace: list = field(default_factory=list)

    @property
    def score_norm(self) -> float:
        return float(np.max(np.abs(self.score))) if self.score.size else 0.0


def loglik(theta, X, y, offset) -> float:
    eta = X @ theta + offset
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def score(theta, X, y, offset) -> np.ndarray:
    return X.T @ (y - expit(X @ theta + offset))


def _converged(g, theta, tol):
    return np.max(np.abs(g), initial=0.0) <= tol * (1.0 + np.max(np.abs(theta), initial=0.0))


def _newton_direction(X, w, g):
    H = X.T @ (w[:, None] * X)
    try:
        c = linalg.cho_factor(H, check_finite=True)
        return linalg.cho_solve(c, g)
    except linalg.LinAlgError:
        # information matrix numerically singular; least-squares step
        return np.linalg.lstsq(H, g, rcond=None)[0]


def newton_logistic(X, y, offset=None, start=None, tol: float = 1e-8, max_iter: int = 50,
                    max_halvings: int = 40) -> SolverResult:
    """Newton-Raphson with step halving on the log-likelihood."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    offset = np.zeros(len(y)) if offset is None else np.asarray(offset, dtype=float)
    theta = np.zeros(X.shape[1]) if start is None else np.array(start, dtype=float)
    ll = loglik(theta, X, y, offset)
    trace = []
    for it in range(max_iter + 1):
        p = expit(X @ theta + offset)
        g = X.T @ (y - p)
        trace.append({"iteration": it, "loglik": ll, "score_norm": float(np.max(np.abs(g), initial=0.0))})
        if _converged(g, theta, tol):
            return SolverResult(theta, True, it, g, ll, trace)
        if it == max_iter:
            break
        step = _newton_direction(X, p * (1.0 - p), g)
        t = 1.0
        for _ in range(max_halvings):
            cand = theta + t * step
            ll_new = loglik(cand, X, y, offset)
            # accept ties: near the optimum the gain is below rounding
            if ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            raise NumericalError(f"line search failed at iteration {it}; score norm {trace[-1]['score_norm']:.3g}")
        theta, ll = cand, ll_new
        trace[-1]["step"] = t
    g = X.T @ (y - expit(X @ theta + offset))
    return SolverResult(theta, False, max_iter, g, ll, trace)


def irls_logistic(X, y, offset=None, start=None, tol: float = 1e-8, max_iter: int = 50) -> SolverResult:
    """Iteratively reweighted least squares on the working response."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    offset = np.zeros(len(y)) if offset is None else np.asarray(offset, dtype=float)
    theta = np.zeros(X.shape[1]) if start is None else np.array(start, dtype=float)
    trace = []
    for it in range(max_iter + 1):
        eta = X @ theta + offset
        p = expit(eta)
        g = X.T @ (y - p)
        ll = loglik(theta, X, y, offset)
        trace.append({"iteration": it, "loglik": ll, "score_norm": float(np.max(np.abs(g), initial=0.0))})
        if _converged(g, theta, tol):
            return SolverResult(theta, True, it, g, ll, trace)
        if it == max_iter:
            break
        w = np.clip(p * (1.0 - p), 1e-300, None)
        z = (eta - offset) + (y - p) / w
        sw = np.sqrt(w)
        theta = np.linalg.lstsq(sw[:, None] * X, sw * z, rcond=None)[0]
    return SolverResult(theta, False, max_iter, g, ll, trace)
