"""Convex low-rank + sparse decompositions solved with inexact ALM / ADMM."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class AdmmReport:
    iterations: int
    primal_residual: float
    converged: bool
    objective: float
    residual_history: list = field(default_factory=list, repr=False)


def soft_threshold(x, tau: float):
    """sign(x) * max(|x| - tau, 0), elementwise."""
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def svt(M, tau: float):
    """Singular value thresholding: proximal operator of tau * nuclear norm."""
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    M = np.asarray(M, dtype=np.float64)
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("SVD failed inside singular value thresholding") from exc
    s = np.maximum(s - tau, 0.0)
    k = int(np.count_nonzero(s))
    return (U[:, :k] * s[:k]) @ Vt[:k]


def nuclear_norm(M) -> float:
    return float(np.linalg.svd(np.asarray(M, dtype=np.float64), compute_uv=False).sum())


def _spectral_norm(M):
    return float(np.linalg.norm(M, 2))


def rpca_two_term(
    F,
    eta: float = 0.98,
    tol: float = 1e-7,
    max_iter: int = 500,
    mu: float | None = None,
    rho: float = 1.6,
    mu_max: float = 1e7,
):
    """min ||S||_* + eta ||O||_1  s.t.  F = S + O.

    Returns ``(S, O, report)``. Stops when ||F - S - O||_F / ||F||_F <= tol
    or after ``max_iter`` iterations (report.converged is False then).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    F = np.asarray(F, dtype=np.float64)
    normF = np.linalg.norm(F)
    S = np.zeros_like(F)
    O = np.zeros_like(F)
    if normF == 0:
        return S, O, AdmmReport(0, 0.0, True, 0.0, [])
    two = _spectral_norm(F)
    if mu is None:
        mu = 1.25 / two
    # standard dual start: scaled so that both dual norms are <= 1
    Y = F / max(two, np.abs(F).max() / eta)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        S = svt(F - O + Y / mu, 1.0 / mu)
        O = soft_threshold(F - S + Y / mu, eta / mu)
        R = F - S - O
        Y = Y + mu * R
        res = float(np.linalg.norm(R) / normF)
        history.append(res)
        if res <= tol:
            converged = True
            break
        mu = min(mu * rho, mu_max)
    obj = nuclear_norm(S) + eta * float(np.abs(O).sum())
    if not converged:
        warnings.warn("rpca_two_term stopped after %d iterations (residual %.3g)" % (it, res), RuntimeWarning)
    return S, O, AdmmReport(it, history[-1], converged, obj, history)


def default_three_term_params(shape):
    xi = 1.0 / np.sqrt(max(shape))
    return xi, 100.0 * xi


def rpca_three_term(
    X,
    xi: float | None = None,
    gamma: float | None = None,
    tol: float = 1e-7,
    max_iter: int = 500,
    mu: float | None = None,
    rho: float = 1.6,
    mu_max: float = 1e7,
):
    """min ||B||_* + xi ||S||_1 + gamma ||N||_F^2  s.t.  X = B + S + N.

    Returns ``(B, S, N, report)``. The N-step is the closed-form minimizer
    N = mu / (2 gamma + mu) * (X - B - S + Y / mu).
    """
    X = np.asarray(X, dtype=np.float64)
    dxi, dgamma = default_three_term_params(X.shape)
    xi = dxi if xi is None else xi
    gamma = dgamma if gamma is None else gamma
    if xi <= 0 or gamma <= 0:
        raise ValueError("xi and gamma must be positive")
    normX = np.linalg.norm(X)
    B = np.zeros_like(X)
    S = np.zeros_like(X)
    N = np.zeros_like(X)
    if normX == 0:
        return B, S, N, AdmmReport(0, 0.0, True, 0.0, [])
    two = _spectral_norm(X)
    if mu is None:
        mu = 1.25 / two
    Y = X / max(two, np.abs(X).max() / xi)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        B = svt(X - S - N + Y / mu, 1.0 / mu)
        S = soft_threshold(X - B - N + Y / mu, xi / mu)
        N = (mu / (2.0 * gamma + mu)) * (X - B - S + Y / mu)
        R = X - B - S - N
        Y = Y + mu * R
        res = float(np.linalg.norm(R) / normX)
        history.append(res)
        if res <= tol:
            converged = True
            break
        mu = min(mu * rho, mu_max)
    obj = nuclear_norm(B) + xi * float(np.abs(S).sum()) + gamma * float(np.sum(N * N))
    if not converged:
        warnings.warn("rpca_three_term stopped after %d iterations (residual %.3g)" % (it, res), RuntimeWarning)
    return B, S, N, AdmmReport(it, history[-1], converged, obj, history)
