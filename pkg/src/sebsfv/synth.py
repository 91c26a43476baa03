"""Synthetic ViSAR-like scenes with planted ground truth.

A frame is a smooth low-rank background in [0.3, 0.9], minus dark moving
rectangles (shadows), plus zero-mean Gaussian-mixture noise, clipped to
[0, 1]. An optional constant rotation rate spins the whole scene about the
frame center; it is applied last, on a canvas large enough that every output
pixel has a source.

Seeding: the background uses ``default_rng([seed, 0])`` and frame j draws
its noise from ``default_rng([seed, j + 1])``, so frames can be generated
independently and in any order.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage, special

from .metrics import Box
from .registration import RigidTransform, warp_array
from .videodata import VideoMatrix


@dataclass
class ShadowTrack:
    start: tuple = (10.0, 30.0)  # (x, y) of the top-left corner at frame 0
    velocity: tuple = (0.8, 0.1)  # pixels per frame
    size: tuple = (12, 8)  # (w, h)
    depth: float = 0.35

    def position(self, j: int) -> tuple[int, int]:
        x = math.floor(self.start[0] + self.velocity[0] * j + 0.5)
        y = math.floor(self.start[1] + self.velocity[1] * j + 0.5)
        return x, y


def _default_tracks():
    return [
        ShadowTrack((10.0, 30.0), (0.8, 0.1), (12, 8), 0.35),
        ShadowTrack((106.0, 90.0), (-0.7, -0.3), (12, 8), 0.35),
    ]


@dataclass
class SceneSpec:
    width: int = 128
    height: int = 128
    n_frames: int = 120
    rank: int = 3
    shadows: list = field(default_factory=_default_tracks)
    noise_pi: tuple = (0.85, 0.15)
    noise_sigma: tuple = (0.01, 0.05)
    rotation: float = 0.0  # degrees per frame, frame j is turned by j * rotation
    smoothness: float = 2.0  # gaussian width (px) of the background fields
    drift: float = 0.15  # amplitude of the time-varying background components
    seed: int = 0

    def __post_init__(self):
        self.shadows = [s if isinstance(s, ShadowTrack) else ShadowTrack(**s) for s in self.shadows]
        for s in self.shadows:
            s.start = tuple(float(v) for v in s.start)
            s.velocity = tuple(float(v) for v in s.velocity)
            s.size = tuple(int(v) for v in s.size)
        self.noise_pi = tuple(float(p) for p in self.noise_pi)
        self.noise_sigma = tuple(float(s) for s in self.noise_sigma)

    def validate(self) -> None:
        if self.width < 8 or self.height < 8 or self.n_frames < 1:
            raise ValueError("scene must be at least 8x8 with one frame")
        if not 1 <= self.rank <= min(self.width * self.height, self.n_frames):
            raise ValueError("background rank %d out of range" % self.rank)
        pi = np.asarray(self.noise_pi)
        if len(self.noise_pi) != len(self.noise_sigma) or pi.size == 0:
            raise ValueError("noise_pi and noise_sigma must have the same non-zero length")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9 or min(self.noise_sigma) < 0:
            raise ValueError("noise mixture weights must sum to 1 and sigmas be >= 0")
        for k, s in enumerate(self.shadows):
            if not 0.0 < s.depth <= 1.0:
                raise ValueError("shadow %d depth must be in (0, 1]" % k)
            if min(s.size) < 1:
                raise ValueError("shadow %d has empty size" % k)
            for j in range(self.n_frames):
                box = _rotated_box(self, s, j)
                if box is None:
                    raise ValueError("shadow %d leaves the frame at frame %d" % (k, j))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shadows"] = [asdict(s) for s in self.shadows]
        return d

    @classmethod
    def from_dict(cls, d) -> "SceneSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError("unknown scene fields: %s" % sorted(unknown))
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls.from_dict(json.loads(text))


@dataclass
class Scene:
    video: VideoMatrix
    boxes: list
    background: np.ndarray  # d x n, pre-rotation
    shadows: np.ndarray  # d x n, subtracted depth (>= 0), pre-rotation
    noise: np.ndarray  # d x n, pre-rotation
    angles: np.ndarray  # degrees per frame


def _canvas_size(spec: SceneSpec):
    """Square-ish canvas that still covers the frame after any rotation."""
    if spec.rotation == 0.0:
        return spec.height, spec.width
    diag = math.ceil(math.hypot(spec.width, spec.height)) + 4
    ch = diag + ((diag - spec.height) % 2)
    cw = diag + ((diag - spec.width) % 2)
    return ch, cw


def _angle(spec: SceneSpec, j: int) -> float:
    return spec.rotation * j


def _rotated_box(spec: SceneSpec, s: ShadowTrack, j: int):
    """Axis-aligned box (x, y, w, h) around the shadow footprint in frame j, or None if outside."""
    x, y = s.position(j)
    w, h = s.size
    if x < 0 or y < 0 or x + w > spec.width or y + h > spec.height:
        return None
    if _angle(spec, j) == 0.0:
        return x, y, w, h
    ys, xs = np.nonzero(_footprint(spec, j, [s]))
    if ys.size == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)


def ground_truth_boxes(spec: SceneSpec) -> list:
    """One box per shadow per frame, around the (rotated) rectangle footprint."""
    spec.validate()
    out = []
    for j in range(spec.n_frames):
        for s in spec.shadows:
            x, y, w, h = _rotated_box(spec, s, j)
            out.append(Box(j, x, y, w, h))
    return out


def _background(spec: SceneSpec, shape):
    """Smooth rank-``spec.rank`` fields scaled to [0.3, 0.9] (n frames, canvas shape)."""
    rng = np.random.default_rng([spec.seed, 0])
    h, w = shape
    r = spec.rank
    U = np.empty((h * w, r))
    for k in range(r):
        f = ndimage.gaussian_filter(rng.standard_normal((h, w)), spec.smoothness, mode="wrap")
        # uniform marginal: dark clutter as dark as the shadows, like real SAR scenes
        U[:, k] = special.ndtr(f / f.std()).reshape(-1) - 0.5
    t = np.arange(spec.n_frames) / max(spec.n_frames, 1)
    V = np.ones((spec.n_frames, r))
    for k in range(1, r):
        freq = rng.uniform(0.5, 2.0)
        phase = rng.uniform(0, 2 * np.pi)
        V[:, k] = spec.drift * np.sin(2 * np.pi * freq * t + phase)
    L = U @ V.T
    # affine map keeps rank <= r because the constant lives in span(V[:, 0] = 1)
    lo, hi = L.min(), L.max()
    return 0.3 + 0.6 * (L - lo) / (hi - lo)


def sample_noise(spec: SceneSpec, size, rng) -> np.ndarray:
    """Draws from the zero-mean mixture sum_k pi_k N(0, sigma_k^2)."""
    pi = np.asarray(spec.noise_pi)
    sig = np.asarray(spec.noise_sigma)
    z = rng.choice(pi.size, size=size, p=pi)
    return rng.standard_normal(size) * sig[z]


def _shadow_layer(spec: SceneSpec, j, background, offset):
    """Depth map subtracted in frame j (canvas coordinates)."""
    layer = np.zeros_like(background)
    oy, ox = offset
    for s in spec.shadows:
        x, y = s.position(j)
        w, h = s.size
        sl = (slice(oy + y, oy + y + h), slice(ox + x, ox + x + w))
        # never push the scene below black
        layer[sl] = np.maximum(layer[sl], np.minimum(s.depth, background[sl]))
    return layer


def generate_scene(spec: SceneSpec | None = None) -> Scene:
    spec = SceneSpec() if spec is None else spec
    spec.validate()
    H, W = spec.height, spec.width
    ch, cw = _canvas_size(spec)
    oy, ox = (ch - H) // 2, (cw - W) // 2
    crop = (slice(oy, oy + H), slice(ox, ox + W))
    L = _background(spec, (ch, cw))
    d, n = H * W, spec.n_frames
    frames = np.empty((d, n))
    bg = np.empty((d, n))
    sh = np.empty((d, n))
    nz = np.empty((d, n))
    angles = np.array([_angle(spec, j) for j in range(n)])
    for j in range(n):
        b = L[:, j].reshape(ch, cw)
        s = _shadow_layer(spec, j, b, (oy, ox))
        e = sample_noise(spec, (ch, cw), np.random.default_rng([spec.seed, j + 1]))
        img = np.clip(b - s + e, 0.0, 1.0)
        if angles[j] != 0.0:
            img, _ = warp_array(img, RigidTransform(angles[j]), order=3, out_shape=(H, W))
            img = np.clip(img, 0.0, 1.0)
        else:
            img = img[crop]
        frames[:, j] = img.reshape(-1)
        bg[:, j] = b[crop].reshape(-1)
        sh[:, j] = s[crop].reshape(-1)
        nz[:, j] = e[crop].reshape(-1)
    video = VideoMatrix(frames, None, H, W)
    return Scene(video, ground_truth_boxes(spec), bg, sh, nz, angles)


def _footprint(spec: SceneSpec, j: int, tracks) -> np.ndarray:
    """Pixels of frame j whose centers, mapped back through the rotation, fall inside a rectangle."""
    H, W = spec.height, spec.width
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    a = _angle(spec, j)
    if a != 0.0:
        cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
        t = np.deg2rad(-a)
        px, py = xs - cx, ys - cy
        xs, ys = np.cos(t) * px - np.sin(t) * py + cx, np.sin(t) * px + np.cos(t) * py + cy
    m = np.zeros((H, W), bool)
    for s in tracks:
        x, y = s.position(j)
        w, h = s.size
        m |= (xs >= x - 0.5) & (xs < x + w - 0.5) & (ys >= y - 0.5) & (ys < y + h - 0.5)
    return m


def shadow_mask(spec: SceneSpec, j: int) -> np.ndarray:
    """Boolean footprint of all shadows in frame j after rotation."""
    return _footprint(spec, j, spec.shadows)
