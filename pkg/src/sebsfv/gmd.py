"""Zero-mean Gaussian mixture model of low-rank fit residuals.

E-step responsibilities, batch and online (prior-regularized) M-steps, the
per-pixel least-squares weights they induce, and the mixture log-likelihood.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

VAR_FLOOR = 1e-8
WEIGHT_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MixtureState:
    pi: np.ndarray
    sigma2: np.ndarray
    N: np.ndarray = field(default=None)

    def __post_init__(self):
        pi = np.array(self.pi, dtype=np.float64).reshape(-1)
        sigma2 = np.array(self.sigma2, dtype=np.float64).reshape(-1)
        N = np.zeros_like(pi) if self.N is None else np.array(self.N, dtype=np.float64).reshape(-1)
        if not (pi.shape == sigma2.shape == N.shape) or pi.size == 0:
            raise ValueError("pi, sigma2 and N must be non-empty and of equal length")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if np.any(sigma2 <= 0) or np.any(N < 0):
            raise ValueError("variances must be positive and evidence non-negative")
        for a in (pi, sigma2, N):
            a.flags.writeable = False
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "N", N)

    @property
    def K(self) -> int:
        return self.pi.size

    @property
    def total(self) -> float:
        return float(self.N.sum())

    @classmethod
    def uniform(cls, sigma2, N=None) -> "MixtureState":
        sigma2 = np.asarray(sigma2, dtype=np.float64)
        return cls(np.full(sigma2.size, 1.0 / sigma2.size), sigma2, N)

    def to_dict(self) -> dict:
        return {"K": self.K, "pi": self.pi.tolist(), "sigma2": self.sigma2.tolist(), "N": self.N.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj) -> "MixtureState":
        m = cls(obj["pi"], obj["sigma2"], obj["N"])
        if "K" in obj and int(obj["K"]) != m.K:
            raise ValueError("K=%s does not match %d components" % (obj["K"], m.K))
        return m

    @classmethod
    def from_json(cls, text: str) -> "MixtureState":
        return cls.from_dict(json.loads(text))


def _normalize_weights(pi, floor=WEIGHT_FLOOR):
    pi = np.maximum(np.asarray(pi, dtype=np.float64), floor)
    return pi / pi.sum()


def _component_logpdf(residuals, m: MixtureState):
    """log(pi_k * N(eps | 0, sigma2_k)), shape residuals.shape + (K,)."""
    e2 = np.square(residuals)[..., None]
    return np.log(m.pi) - 0.5 * (_LOG_2PI + np.log(m.sigma2)) - e2 / (2.0 * m.sigma2)


def _as_mask(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ValueError("mask shape %s does not match residual shape %s" % (mask.shape, shape))
    return mask


def estep_responsibilities(residuals, mask, m: MixtureState) -> np.ndarray:
    """Posterior component probabilities for each residual.

    Returns an array of shape ``residuals.shape + (K,)``; rows sum to one on
    valid entries and are all zero on invalid ones.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    mask = _as_mask(mask, residuals.shape)
    logp = _component_logpdf(np.where(mask, residuals, 0.0), m)
    gamma = np.exp(logp - logsumexp(logp, axis=-1, keepdims=True))
    gamma *= mask[..., None]
    return gamma


def log_likelihood(residuals, mask, m: MixtureState) -> float:
    residuals = np.asarray(residuals, dtype=np.float64)
    mask = _as_mask(mask, residuals.shape)
    if not mask.any():
        return 0.0
    logp = _component_logpdf(residuals[mask], m)
    return float(logsumexp(logp, axis=-1).sum())


def _sufficient_stats(residuals, mask, gamma):
    residuals = np.asarray(residuals, dtype=np.float64)
    mask = _as_mask(mask, residuals.shape)
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape[:-1] != residuals.shape:
        raise ValueError("responsibilities shape %s inconsistent with residuals %s" % (gamma.shape, residuals.shape))
    g = gamma[mask]
    e2 = np.square(residuals[mask])
    return g.sum(axis=0), g.T @ e2


def mstep_batch(residuals, mask, gamma, var_floor=VAR_FLOOR, weight_floor=WEIGHT_FLOOR) -> MixtureState:
    """Closed-form mixture M-step given responsibilities.

    pi_k = N_k / sum N, sigma2_k = sum(gamma * eps^2) / N_k with
    N_k = sum(gamma). A component with no mass keeps the variance floor.
    """
    Nk, se = _sufficient_stats(residuals, mask, gamma)
    total = Nk.sum()
    K = Nk.size
    pi = Nk / total if total > 0 else np.full(K, 1.0 / K)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma2 = np.where(Nk > 0, se / np.where(Nk > 0, Nk, 1.0), var_floor)
    sigma2 = np.maximum(sigma2, var_floor)
    return MixtureState(_normalize_weights(pi, weight_floor), sigma2, Nk)


def mstep_online(
    frame_residuals,
    mask,
    gamma,
    prior: MixtureState,
    forgetting: float = 1.0,
    var_floor=VAR_FLOOR,
    weight_floor=WEIGHT_FLOOR,
) -> MixtureState:
    """One-frame M-step regularized by the evidence accumulated so far.

    sigma2_k = (N_k' sigma2_k' + sum z_k eps^2) / (N_k' + sum z_k)
    pi_k     = (N_k' + sum z_k) / sum_k (N_k' + sum z_k)

    where primes denote the prior. The new evidence N_k' + sum z_k is then
    scaled by ``forgetting`` so old frames fade geometrically.
    """
    nk, se = _sufficient_stats(frame_residuals, mask, gamma)
    if nk.size != prior.K:
        raise ValueError("responsibilities have %d components, prior has %d" % (nk.size, prior.K))
    if not np.any(nk > 0):
        return MixtureState(prior.pi, prior.sigma2, prior.N * forgetting)
    Nk = prior.N + nk
    total = Nk.sum()  # Lagrange multiplier of the sum-to-one constraint
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma2 = np.where(Nk > 0, (prior.N * prior.sigma2 + se) / np.where(Nk > 0, Nk, 1.0), prior.sigma2)
    sigma2 = np.maximum(sigma2, var_floor)
    pi = _normalize_weights(Nk / total, weight_floor)
    return MixtureState(pi, sigma2, Nk * forgetting)


def weight_matrix(gamma, m: MixtureState, mask) -> np.ndarray:
    """Per-entry least-squares weight sqrt(sum_k gamma_k / (2 sigma2_k)); 0 off-mask."""
    gamma = np.asarray(gamma, dtype=np.float64)
    w2 = gamma @ (1.0 / (2.0 * m.sigma2))
    mask = _as_mask(mask, w2.shape)
    return np.where(mask, np.sqrt(w2), 0.0)


def init_from_residuals(residuals, mask, K: int, var_floor=VAR_FLOOR) -> MixtureState:
    """Initial mixture: uniform weights, zero evidence, quantile-spread variances.

    Residuals are ranked by magnitude and split into K equal-count groups; each
    group is given hard responsibility for one component, and the
    zero-prior online variance update then yields one variance per group.
    With identical responsibilities every component would get the same
    variance and EM could never separate them.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    mask = _as_mask(mask, residuals.shape)
    e = residuals[mask]
    if e.size == 0:
        return MixtureState.uniform(np.full(K, var_floor))
    order = np.argsort(np.abs(e), kind="stable")
    groups = np.array_split(order, K)
    gamma = np.zeros((e.size, K))
    for k, idx in enumerate(groups):
        gamma[idx, k] = 1.0
    prior = MixtureState.uniform(np.full(K, var_floor))
    m = mstep_online(e, None, gamma, prior)
    # a group can be empty when there are fewer residuals than components
    sigma2 = np.where(np.array([len(g) for g in groups]) > 0, m.sigma2, max(float(np.mean(e**2)), var_floor))
    return MixtureState.uniform(np.maximum(sigma2, var_floor))


def reseed_component(m: MixtureState, k: int, residuals, mask, weight: float = 0.01, top_fraction: float = 0.01) -> MixtureState:
    """Revive component k at the variance of the largest residuals of a frame."""
    residuals = np.asarray(residuals, dtype=np.float64)
    e = np.abs(residuals[_as_mask(mask, residuals.shape)])
    if e.size == 0:
        return m
    n_top = max(1, int(np.ceil(top_fraction * e.size)))
    top = np.partition(e, e.size - n_top)[e.size - n_top :]
    sigma2 = m.sigma2.copy()
    sigma2[k] = max(float(np.mean(top**2)), VAR_FLOOR)
    pi = m.pi.copy()
    pi[k] = weight
    pi = _normalize_weights(pi)
    N = m.N.copy()
    N[k] = weight * m.total
    return MixtureState(pi, sigma2, N)


def sort_components(m: MixtureState) -> MixtureState:
    order = np.argsort(m.sigma2, kind="stable")
    return MixtureState(m.pi[order], m.sigma2[order], m.N[order])
