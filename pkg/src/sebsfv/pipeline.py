"""Streaming shadow enhancement: chunked online mixture-weighted subspace
tracking, a per-chunk nuclear/L1 clean-up of the residual stack, and
rendering of the shadow component as bright-on-black frames.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gmd, subspace
from .admm import rpca_two_term
from .gmd import MixtureState
from .registration import register_sequence
from .videodata import VideoMatrix, chunk_boundaries, chunk_ranges

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    chunk: int = 100
    K: int = 5
    eta: float = 0.98
    rank: int | None = None  # None = pick from the singular-value CDF of each init window
    rank_threshold: float = 0.95
    max_rank: int = 10
    forgetting: float = 0.98
    inner_tol: float = 1e-6
    inner_max: int = 20
    mixture_tol: float = 1e-4
    ridge: float = subspace.RIDGE
    reseed_after: int = 50
    carry_state: bool = False
    swap_roles: bool = False
    admm_tol: float = 1e-7
    admm_max_iter: int = 500
    percentile: float = 99.5
    min_tail: int | None = None  # shorter trailing remainders join the previous chunk; None = chunk // 2
    seed: int = 0  # recorded for manifests; the algorithm itself draws no random numbers

    def validate(self) -> None:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.chunk < 2:
            raise ValueError("chunk must be >= 2")
        if self.rank is not None and not 1 <= self.rank <= self.chunk - 1:
            raise ValueError("rank must be in [1, chunk - 1]")
        if not 0.0 < self.forgetting <= 1.0:
            raise ValueError("forgetting must be in (0, 1]")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.inner_max < 1:
            raise ValueError("inner_max must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForegroundStack:
    residual: np.ndarray  # d x n, x_t - U v_t
    mask: np.ndarray  # d x n
    boundaries: list  # first frame index of each chunk
    height: int
    width: int

    @property
    def n(self) -> int:
        return self.residual.shape[1]

    def chunks(self):
        ends = list(self.boundaries[1:]) + [self.n]
        return list(zip(self.boundaries, ends))


@dataclass
class Timings:
    registration: float = 0.0
    online: float = 0.0
    admm: float = 0.0

    @property
    def total(self) -> float:
        return self.registration + self.online + self.admm

    def to_dict(self) -> dict:
        return {"registration": self.registration, "online": self.online, "admm": self.admm, "total": self.total}


@dataclass
class PipelineResult:
    enhanced: VideoMatrix
    stack: ForegroundStack
    diagnostics: list
    timings: Timings
    transforms: list = field(default_factory=list)
    ranks: list = field(default_factory=list)


def _chunk_rank(Xc: VideoMatrix, cfg: PipelineConfig) -> int:
    if cfg.rank is not None:
        r = cfg.rank
    else:
        r = subspace.select_rank(Xc, threshold=cfg.rank_threshold, max_rank=cfg.max_rank)
    # a short tail chunk cannot support the configured rank
    return max(1, min(r, Xc.n - 1 if Xc.n > 1 else 1, Xc.d))


def _track_frame(x, mask, state, prior: MixtureState, cfg: PipelineConfig):
    """Inner loop for one frame: alternate E-step, online M-step and coefficient solve.

    Returns (v, mixture, w, residual, iterations, converged, ridged).
    """
    U = state.U
    v, ridged = subspace.solve_coefficients(x, mask.astype(np.float64), U, cfg.ridge)
    m = prior
    converged = False
    it = 0
    for it in range(1, cfg.inner_max + 1):
        e = subspace.foreground_residual(x, mask, U, v)
        gamma = gmd.estep_responsibilities(e, mask, m)
        m_old = m
        m = gmd.mstep_online(e, mask, gamma, prior, forgetting=cfg.forgetting)
        w = gmd.weight_matrix(gamma, m, mask)
        v_new, r2 = subspace.solve_coefficients(x, w, U, cfg.ridge)
        ridged |= r2
        delta = np.linalg.norm(v_new - v) / (1.0 + np.linalg.norm(v_new))
        # the mixture must settle too: on the first frames (little prior
        # evidence) v converges long before pi and sigma2 do
        dm = max(np.abs(m.pi - m_old.pi).max(), np.abs(np.log(m.sigma2 / m_old.sigma2)).max())
        v = v_new
        if delta < cfg.inner_tol and dm < cfg.mixture_tol:
            converged = True
            break
    e = subspace.foreground_residual(x, mask, U, v)
    return v, m, w, e, it, converged, ridged


def se_bsfv_stream(video: VideoMatrix, cfg: PipelineConfig | None = None):
    """Online pass over a registered video.

    Returns ``(ForegroundStack, diagnostics, ranks)``; diagnostics holds one
    dict per frame.
    """
    cfg = PipelineConfig() if cfg is None else cfg
    cfg.validate()
    d, n = video.d, video.n
    R = np.zeros((d, n))
    M = np.array(video.mask, dtype=bool)
    bounds = chunk_boundaries(n, cfg.chunk, cfg.min_tail)
    diags = []
    ranks = []
    state = None
    mixture = None
    for c, (start, stop) in enumerate(chunk_ranges(n, cfg.chunk, cfg.min_tail)):
        Xc = video.columns(start, stop)
        live = Xc.mask.any(axis=0)
        if not live.all() and live.sum() >= 2:
            # frames with no valid pixels cannot seed the subspace
            Xc = VideoMatrix(Xc.data[:, live], Xc.mask[:, live], Xc.height, Xc.width)
        if state is None or not cfg.carry_state:
            r = _chunk_rank(Xc, cfg)
            state, _, mixture = subspace.init_pca(Xc, r, cfg.K, cfg.ridge)
            dead = np.zeros(cfg.K, dtype=int)
        ranks.append(state.r)
        for j in range(start, stop):
            x = video.data[:, j]
            mask = video.mask[:, j]
            rec = {"frame": j, "chunk": c}
            if not mask.any():
                M[:, j] = False
                rec.update(failed=True, error="frame has no valid pixels")
                diags.append(rec)
                continue
            try:
                v, m, w, e, iters, conv, ridged = _track_frame(x, mask, state, mixture, cfg)
                subspace.update_rows(x, w, v, state)
                e = subspace.foreground_residual(x, mask, state.U, v)
                ll = gmd.log_likelihood(e, mask, m)
            except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
                log.warning("frame %d skipped: %s", j, exc)
                M[:, j] = False
                rec.update(failed=True, error=str(exc))
                diags.append(rec)
                continue
            at_floor = m.pi <= gmd.WEIGHT_FLOOR * 1.5
            dead = np.where(at_floor, dead + 1, 0)
            for k in np.flatnonzero(dead >= cfg.reseed_after):
                m = gmd.reseed_component(m, int(k), e, mask)
                dead[k] = 0
                rec.setdefault("reseeded", []).append(int(k))
            mixture = m
            R[:, j] = e
            rec.update(
                failed=False,
                inner_iterations=iters,
                converged=conv,
                ridged=bool(ridged),
                log_likelihood=ll,
                v=v.tolist(),
                mixture=m.to_dict(),
            )
            diags.append(rec)
    stack = ForegroundStack(R, M, bounds, video.height, video.width)
    return stack, diags, ranks


def render(shadow, mask, percentile: float = 99.5) -> np.ndarray:
    """Negate (shadows are darker than background), clamp at 0, scale by a percentile to [0, 1]."""
    out = np.where(mask, np.maximum(-shadow, 0.0), 0.0)
    vals = out[mask]
    scale = float(np.percentile(vals, percentile)) if vals.size else 0.0
    if scale > 0:
        out = np.minimum(out / scale, 1.0)
    return out


def finalize(stack: ForegroundStack, cfg: PipelineConfig | None = None):
    """Per-chunk two-term decomposition of the residual stack, rendered to frames.

    Returns ``(enhanced VideoMatrix, reports)``.
    """
    cfg = PipelineConfig() if cfg is None else cfg
    out = np.zeros_like(stack.residual)
    reports = []
    for start, stop in stack.chunks():
        F = stack.residual[:, start:stop]
        mask = stack.mask[:, start:stop]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            S, O, rep = rpca_two_term(F, cfg.eta, tol=cfg.admm_tol, max_iter=cfg.admm_max_iter)
        for wmsg in caught:
            warnings.warn("chunk %d-%d: %s" % (start, stop, wmsg.message), RuntimeWarning)
        shadow = O if cfg.swap_roles else S
        out[:, start:stop] = render(shadow, mask, cfg.percentile)
        reports.append(rep)
    return VideoMatrix(out, stack.mask, stack.height, stack.width), reports


def run_pipeline(video: VideoMatrix, cfg: PipelineConfig | None = None, register: bool = False) -> PipelineResult:
    """Optional registration, online pass and clean-up, with per-stage timings."""
    cfg = PipelineConfig() if cfg is None else cfg
    cfg.validate()
    timings = Timings()
    transforms = []
    if register:
        t0 = time.perf_counter()
        video, transforms, _ = register_sequence(video, cfg.chunk, min_tail=cfg.min_tail)
        timings.registration = time.perf_counter() - t0
    t0 = time.perf_counter()
    stack, diags, ranks = se_bsfv_stream(video, cfg)
    timings.online = time.perf_counter() - t0
    t0 = time.perf_counter()
    enhanced, _ = finalize(stack, cfg)
    timings.admm = time.perf_counter() - t0
    return PipelineResult(enhanced, stack, diags, timings, transforms, ranks)
