"""Low-rank background subspace: initialization, per-frame coefficients,
recursive per-pixel basis updates and the batch mixture-weighted fit.

Model: x_ij = u_i . v_j + eps_ij, with eps drawn from a zero-mean Gaussian
mixture. Each basis row u_i keeps the inverse of its weighted Gram matrix
(``A``) and the weighted cross-moment (``B``) so that a new frame updates it
with a rank-one Sherman-Morrison step instead of a matrix inversion.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import gmd
from .gmd import MixtureState
from .metrics import singular_value_cdf
from .videodata import VideoMatrix

log = logging.getLogger(__name__)

RIDGE = 1e-6


@dataclass
class SubspaceState:
    """Basis U (d x r) plus per-row inverse Gram A (d x r x r) and moment B (d x r)."""

    U: np.ndarray
    A: np.ndarray
    B: np.ndarray

    @property
    def r(self) -> int:
        return self.U.shape[1]

    @property
    def d(self) -> int:
        return self.U.shape[0]

    def copy(self) -> "SubspaceState":
        return SubspaceState(self.U.copy(), self.A.copy(), self.B.copy())


@dataclass
class BatchResult:
    U: np.ndarray
    V: np.ndarray
    mixture: MixtureState
    gamma: np.ndarray
    log_likelihoods: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def _split(X, mask=None):
    if isinstance(X, VideoMatrix):
        return np.array(X.data), np.array(X.mask)
    X = np.asarray(X, dtype=np.float64)
    mask = np.ones(X.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return X, mask


def mean_fill(X, mask):
    """Replace missing entries by their pixel's mean over valid frames."""
    X = np.where(mask, X, 0.0)
    counts = mask.sum(axis=1)
    overall = X[mask].mean() if mask.any() else 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        row_mean = np.where(counts > 0, X.sum(axis=1) / np.maximum(counts, 1), overall)
    return np.where(mask, X, row_mean[:, None])


def select_rank(X, mask=None, threshold: float = 0.95, max_rank: int = 10) -> int:
    """Smallest r whose top-r singular values hold ``threshold`` of the mass, capped."""
    X, mask = _split(X, mask)
    s = np.linalg.svd(mean_fill(X, mask), compute_uv=False)
    limit = min(max_rank, s.size)
    for r in range(1, limit + 1):
        if singular_value_cdf(s, r) >= threshold:
            return r
    return limit


def _batched_inv_gram(W2, V, ridge):
    """(sum_j W2_ij v_j v_j^T + ridge I)^-1 for every row i."""
    r = V.shape[1]
    G = np.einsum("ij,jk,jl->ikl", W2, V, V, optimize=True)
    G += ridge * np.eye(r)
    return np.linalg.inv(G)


def init_pca(X0, r: int, K: int = 5, ridge: float = RIDGE, mask=None):
    """Truncated-SVD subspace plus matching recursive statistics and mixture.

    Returns ``(state, V, mixture)``. The mixture has uniform weights, zero
    evidence and variances from the initial residual; the per-row
    statistics use the weight that mixture assigns under uniform
    responsibilities, and U is set to A B so the state is self-consistent.
    """
    X, mask = _split(X0, mask)
    d, n0 = X.shape
    if r < 1 or r > min(d, n0):
        raise ValueError("rank %d not in [1, min(d, n0)=%d]" % (r, min(d, n0)))
    if not np.all(mask.any(axis=0)):
        raise ValueError("init window contains a frame with no valid pixels")
    Xf = mean_fill(X, mask)
    Us, s, Vt = np.linalg.svd(Xf, full_matrices=False)
    root = np.sqrt(s[:r])
    U = Us[:, :r] * root
    V = Vt[:r].T * root
    E = np.where(mask, X - U @ V.T, 0.0)
    mixture = gmd.init_from_residuals(E, mask, K)
    # uniform responsibilities => one weight shared by every valid pixel
    w2 = float(np.sum((1.0 / K) / (2.0 * mixture.sigma2)))
    W2 = np.where(mask, w2, 0.0)
    A = _batched_inv_gram(W2, V, ridge)
    B = (W2 * np.where(mask, X, 0.0)) @ V
    U = np.einsum("ikl,il->ik", A, B)
    return SubspaceState(U, A, B), V, mixture


def solve_coefficients(x, w, U, ridge: float = RIDGE):
    """Weighted least-squares coefficients v = (U^T W^2 U)^-1 U^T W^2 x.

    Returns ``(v, ridged)``; ``ridged`` is True when the Gram matrix was
    numerically singular and the ``ridge``-regularized system was solved.
    """
    x = np.asarray(x, dtype=np.float64)
    w2 = np.square(np.asarray(w, dtype=np.float64))
    U = np.asarray(U, dtype=np.float64)
    Uw = U * w2[:, None]
    G = Uw.T @ U
    b = Uw.T @ np.where(w2 > 0, x, 0.0)
    try:
        L = np.linalg.cholesky(G)
        diag = np.diag(L)
        if diag.min() <= 1e-7 * diag.max():
            raise np.linalg.LinAlgError("ill-conditioned weighted Gram")
        y = np.linalg.solve(L, b)
        return np.linalg.solve(L.T, y), False
    except np.linalg.LinAlgError:
        G = G + ridge * np.eye(G.shape[0])
        return np.linalg.solve(G, b), True


def update_rows(x_t, w_t, v_t, state: SubspaceState) -> None:
    """Fold one frame into every basis row, in place.

    A_i <- A_i - w^2 (A_i v)(A_i v)^T / (1 + w^2 v^T A_i v)   (Sherman-Morrison)
    B_i <- B_i + w^2 x_i v
    u_i <- A_i B_i
    Rows with zero weight are left untouched.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    w2 = np.square(np.asarray(w_t, dtype=np.float64))
    v = np.asarray(v_t, dtype=np.float64)
    rows = np.flatnonzero(w2 > 0)
    if rows.size == 0:
        return
    A = state.A[rows]
    Av = A @ v
    denom = 1.0 + w2[rows] * (Av @ v)
    A = A - (w2[rows] / denom)[:, None, None] * (Av[:, :, None] * Av[:, None, :])
    B = state.B[rows] + (w2[rows] * x_t[rows])[:, None] * v
    state.A[rows] = A
    state.B[rows] = B
    state.U[rows] = np.einsum("ikl,il->ik", A, B)


def update_row(i: int, x_it: float, w_it: float, v_t, state: SubspaceState) -> np.ndarray:
    """Single-row form of :func:`update_rows`; returns the new u_i."""
    if w_it == 0:
        return state.U[i]
    w2 = w_it * w_it
    v = np.asarray(v_t, dtype=np.float64)
    A = state.A[i]
    Av = A @ v
    state.A[i] = A - (w2 / (1.0 + w2 * (v @ Av))) * np.outer(Av, Av)
    state.B[i] = state.B[i] + w2 * x_it * v
    state.U[i] = state.A[i] @ state.B[i]
    return state.U[i]


def forget(state: SubspaceState, factor: float) -> None:
    """Down-weight all accumulated statistics by ``factor`` (1 = no forgetting)."""
    if factor == 1.0:
        return
    state.A /= factor
    state.B *= factor


def foreground_residual(x_t, mask, U, v_t) -> np.ndarray:
    """x_t - U v_t with invalid pixels zeroed."""
    r = np.asarray(x_t, dtype=np.float64) - np.asarray(U) @ np.asarray(v_t)
    if mask is None:
        return r
    return np.where(mask, r, 0.0)


def _weighted_rows(Y, W2, F, ridge):
    """Solve min_g sum_j W2_ij (Y_ij - g_i . F_j)^2 for every row i."""
    G = np.einsum("ij,jk,jl->ikl", W2, F, F, optimize=True)
    G += ridge * np.eye(F.shape[1])
    b = (W2 * Y) @ F
    return np.linalg.solve(G, b[:, :, None])[:, :, 0]


def batch_gmd_lrr(
    X,
    r: int,
    K: int = 3,
    max_iter: int = 100,
    tol: float = 1e-10,
    mask=None,
    ridge: float = RIDGE,
    als_sweeps: int = 1,
) -> BatchResult:
    """Mixture-of-Gaussians weighted low-rank fit by EM.

    Each outer iteration runs the E-step, the closed-form mixture update and
    ``als_sweeps`` weighted alternating least-squares passes (coefficients V,
    then basis U). Stops when the relative change of the log-likelihood falls
    below ``tol``; otherwise returns the best iterate after ``max_iter`` and
    warns.
    """
    X, mask = _split(X, mask)
    d, n = X.shape
    if r < 1 or r > min(d, n):
        raise ValueError("rank %d not in [1, min(d, n)=%d]" % (r, min(d, n)))
    Xz = np.where(mask, X, 0.0)
    Us, s, Vt = np.linalg.svd(mean_fill(X, mask), full_matrices=False)
    root = np.sqrt(s[:r])
    U = Us[:, :r] * root
    V = Vt[:r].T * root
    E = np.where(mask, X - U @ V.T, 0.0)
    m = gmd.init_from_residuals(E, mask, K)
    ll = gmd.log_likelihood(E, mask, m)
    history = [ll]
    best = (ll, U, V, m)
    converged = False
    gamma = None
    it = 0
    for it in range(1, max_iter + 1):
        gamma = gmd.estep_responsibilities(E, mask, m)
        m = gmd.mstep_batch(E, mask, gamma)
        W2 = np.square(gmd.weight_matrix(gamma, m, mask))
        for _ in range(als_sweeps):
            V = _weighted_rows(Xz.T, W2.T, U, ridge)
            U = _weighted_rows(Xz, W2, V, ridge)
        E = np.where(mask, X - U @ V.T, 0.0)
        ll = gmd.log_likelihood(E, mask, m)
        history.append(ll)
        if ll > best[0]:
            best = (ll, U, V, m)
        if abs(ll - history[-2]) <= tol * max(abs(history[-2]), 1e-300):
            converged = True
            break
    if not converged:
        warnings.warn("batch_gmd_lrr did not converge in %d iterations" % max_iter, RuntimeWarning)
        _, U, V, m = best
        E = np.where(mask, X - U @ V.T, 0.0)
    gamma = gmd.estep_responsibilities(E, mask, m)
    return BatchResult(U, V, m, gamma, history, converged, it)
