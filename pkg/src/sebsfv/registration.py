"""Rigid frame registration by FFT phase correlation.

Rotation is read off the polar-resampled magnitude spectra (which do not
depend on translation); translation is then found by phase correlation of
the de-rotated frame. Warping is bilinear, and anything sampled from outside
the source footprint is marked invalid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .videodata import Frame, VideoMatrix, chunk_ranges


class NoStructure(ValueError):
    """Frame has no intensity variation to register against."""


@dataclass(frozen=True)
class RigidTransform:
    """Rotate by ``rotation`` degrees about the frame center, then shift by (dx, dy).

    A source point q lands at R(rotation) (q - c) + c + (dx, dy), with (x, y)
    pixel coordinates (x to the right, y down).
    """

    rotation: float = 0.0
    dx: float = 0.0
    dy: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", normalize_angle(self.rotation))

    @property
    def translation(self) -> tuple[float, float]:
        return (self.dx, self.dy)

    def inverse(self) -> "RigidTransform":
        R = _rot(-self.rotation)
        t = -R @ np.array([self.dx, self.dy])
        return RigidTransform(-self.rotation, float(t[0]), float(t[1]))

    def then(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equivalent to applying ``self`` first and ``other`` second."""
        t = _rot(other.rotation) @ np.array([self.dx, self.dy]) + np.array([other.dx, other.dy])
        return RigidTransform(self.rotation + other.rotation, float(t[0]), float(t[1]))

    def is_identity(self) -> bool:
        return self.rotation == 0.0 and self.dx == 0.0 and self.dy == 0.0

    def to_dict(self) -> dict:
        return {"rotation": self.rotation, "dx": self.dx, "dy": self.dy}


def normalize_angle(deg: float) -> float:
    """Map an angle in degrees to (-180, 180]."""
    a = float(deg) % 360.0
    if a > 180.0:
        a -= 360.0
    return a + 0.0


IDENTITY = RigidTransform()


def _rot(deg):
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s], [s, c]])


def _center(shape):
    h, w = shape
    return np.array([(w - 1) / 2.0, (h - 1) / 2.0])


def warp_array(img, t: RigidTransform, valid=None, order: int = 1, out_shape=None):
    """Resample ``img`` under ``t``. Returns (warped, valid_out)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if out_shape is None:
        out_shape = img.shape
    oh, ow = out_shape
    c_in = _center(img.shape)
    c_out = _center(out_shape)
    ys, xs = np.mgrid[0:oh, 0:ow].astype(np.float64)
    Rinv = _rot(-t.rotation)
    px = xs - c_out[0] - t.dx
    py = ys - c_out[1] - t.dy
    sx = Rinv[0, 0] * px + Rinv[0, 1] * py + c_in[0]
    sy = Rinv[1, 0] * px + Rinv[1, 1] * py + c_in[1]
    eps = 1e-9
    inside = (sx >= -eps) & (sx <= w - 1 + eps) & (sy >= -eps) & (sy <= h - 1 + eps)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    coords = np.array([sy, sx])
    out = ndimage.map_coordinates(img, coords, order=order, mode="nearest")
    if valid is not None:
        vsrc = np.asarray(valid, dtype=np.float64)
        vout = ndimage.map_coordinates(vsrc, coords, order=1, mode="nearest")
        inside &= vout >= 1.0 - 1e-9
    out = np.where(inside, out, 0.0)
    return out, inside


def warp_frame(f: Frame, t: RigidTransform) -> Frame:
    """Bilinear warp; output pixels sampled outside the source footprint are invalid."""
    out, valid = warp_array(f.pixels, t, f.valid)
    return Frame(np.clip(out, 0.0, 1.0), valid)


# -- estimation --------------------------------------------------------------


def _prepare(img, valid):
    img = np.asarray(img, dtype=np.float64)
    valid = np.ones(img.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not valid.any():
        raise NoStructure("frame has no valid pixels")
    vals = img[valid]
    if vals.max() - vals.min() <= 1e-12:
        raise NoStructure("frame is constant")
    mean = vals.mean()
    filled = np.where(valid, img, mean) - mean
    return filled


def _hann2d(shape):
    return np.outer(np.hanning(shape[0]), np.hanning(shape[1]))


def _parabolic(cm, cz, cp):
    denom = cm - 2.0 * cz + cp
    if denom >= 0 or not np.isfinite(denom):
        return 0.0
    off = 0.5 * (cm - cp) / denom
    return float(np.clip(off, -0.5, 0.5))


def _peak(corr):
    """Integer peak with parabolic refinement along each axis (periodic)."""
    idx = np.unravel_index(np.argmax(corr), corr.shape)
    offs = []
    for axis, i in enumerate(idx):
        n = corr.shape[axis]
        lo = list(idx)
        hi = list(idx)
        lo[axis] = (i - 1) % n
        hi[axis] = (i + 1) % n
        offs.append(i + _parabolic(corr[tuple(lo)], corr[idx], corr[tuple(hi)]))
    return np.array(offs), float(corr[idx])


def phase_correlation(ref, mov):
    """Shift s (row, col) such that ref(p) ~ mov(p - s); also the peak height."""
    Fr = np.fft.fft2(ref)
    Fm = np.fft.fft2(mov)
    cross = Fr * np.conj(Fm)
    cross /= np.maximum(np.abs(cross), 1e-15)
    corr = np.real(np.fft.ifft2(cross))
    pk, height = _peak(corr)
    shape = np.array(corr.shape)
    pk = np.where(pk > shape / 2.0, pk - shape, pk)
    return pk, height


def _polar_spectrum(img, n_angles, n_radii):
    """log |FFT| of the windowed frame sampled on a (angle, radius) grid.

    Angles cover [0, 180) because the magnitude spectrum of a real image is
    point-symmetric. Rotating the frame by +a rotates the spectrum by +a.
    """
    mag = np.abs(np.fft.fftshift(np.fft.fft2(img * _hann2d(img.shape))))
    h, w = img.shape
    cy, cx = h // 2, w // 2
    r_max = min(h, w) / 2.0 - 1.0
    theta = np.arange(n_angles) * (np.pi / n_angles)
    rad = np.exp(np.linspace(np.log(2.0), np.log(r_max), n_radii))
    xs = cx + rad[None, :] * np.cos(theta)[:, None]
    ys = cy + rad[None, :] * np.sin(theta)[:, None]
    lp = np.log1p(ndimage.map_coordinates(mag, [ys, xs], order=1, mode="constant"))
    return lp - lp.mean(axis=0, keepdims=True)


def _estimate_rotation(ref, mov, n_angles):
    """Angle (deg) of the circular cross-correlation peak over the angle axis."""
    n_radii = max(32, min(ref.shape) // 2)
    a = _polar_spectrum(ref, n_angles, n_radii)
    b = _polar_spectrum(mov, n_angles, n_radii)
    corr = np.real(np.fft.ifft(np.fft.fft(a, axis=0) * np.conj(np.fft.fft(b, axis=0)), axis=0)).sum(axis=1)
    i = int(np.argmax(corr))
    shift = i + _parabolic(corr[i - 1], corr[i], corr[(i + 1) % n_angles])
    if shift > n_angles / 2.0:
        shift -= n_angles
    return shift * 180.0 / n_angles


def _estimate_translation(ref, mov, mov_valid):
    """Translation aligning ``mov`` (after rotation) to ``ref``; returns (dx, dy, score)."""
    win = _hann2d(ref.shape)
    m = _prepare(mov, mov_valid)
    shift, height = phase_correlation(ref * win, m * win)
    return float(shift[1]), float(shift[0]), height


def estimate_rigid_transform(
    reference: Frame, moving: Frame, n_angles: int = 720, refine: bool = True
) -> RigidTransform:
    """Transform t such that ``warp_frame(moving, t)`` lines up with ``reference``."""
    if reference.shape != moving.shape:
        raise ValueError("frames differ in shape: %s vs %s" % (reference.shape, moving.shape))
    if min(reference.shape) < 32:
        raise ValueError("frames must be at least 32x32")
    ref = _prepare(reference.pixels, reference.valid)
    mov = _prepare(moving.pixels, moving.valid)
    t = _estimate_once(ref, reference.pixels, reference.valid, mov, moving.pixels, moving.valid, n_angles)
    if refine:
        t = _refine_intensity(reference, moving, t)
    return t


def _refine_intensity(reference: Frame, moving: Frame, t0: RigidTransform, margin: int = 3) -> RigidTransform:
    """Polish t0 by least squares on pixel intensities over the common footprint.

    Phase correlation of smooth textures gives a broad, noisy peak, so its
    subpixel position can be off by a pixel; direct intensity alignment is
    much sharper once the coarse estimate is within a few pixels.
    """
    _, inside = warp_array(moving.pixels, t0, moving.valid)
    keep = ndimage.binary_erosion(inside, iterations=margin) & reference.valid
    if keep.sum() < 64:
        return t0
    target = reference.pixels[keep]
    src = np.asarray(moving.pixels, dtype=np.float64)
    gy, gx = np.gradient(src)
    c = _center(src.shape)
    ys, xs = np.nonzero(keep)
    ys = ys.astype(np.float64)
    xs = xs.astype(np.float64)

    def source(p):
        Rinv = _rot(-p[0])
        px = xs - c[0] - p[1]
        py = ys - c[1] - p[2]
        sx = Rinv[0, 0] * px + Rinv[0, 1] * py + c[0]
        sy = Rinv[1, 0] * px + Rinv[1, 1] * py + c[1]
        return sx, sy, px, py

    def resid(p):
        sx, sy, _, _ = source(p)
        return ndimage.map_coordinates(src, [sy, sx], order=1, mode="nearest") - target

    def jac(p):
        sx, sy, px, py = source(p)
        ix = ndimage.map_coordinates(gx, [sy, sx], order=1, mode="nearest")
        iy = ndimage.map_coordinates(gy, [sy, sx], order=1, mode="nearest")
        th = np.deg2rad(p[0])
        cs, sn = np.cos(th), np.sin(th)
        # s = R(-th) q with q = x - c - t
        dsx_dth = (-sn * px + cs * py) * np.pi / 180.0
        dsy_dth = (-cs * px - sn * py) * np.pi / 180.0
        J = np.empty((xs.size, 3))
        J[:, 0] = ix * dsx_dth + iy * dsy_dth
        J[:, 1] = -(ix * cs + iy * -sn)
        J[:, 2] = -(ix * sn + iy * cs)
        return J

    p0 = np.array([t0.rotation, t0.dx, t0.dy])
    sol = optimize.least_squares(resid, p0, jac=jac, method="lm", xtol=1e-10, ftol=1e-12)
    p = sol.x
    # keep the coarse answer if the polish wandered off (no basin)
    if not np.all(np.isfinite(p)) or np.abs(p - p0).max() > 3.0 or np.sum(sol.fun**2) > np.sum(resid(p0) ** 2):
        return t0
    return RigidTransform(float(p[0]), float(p[1]), float(p[2]))


def _overlap_ncc(ref, ref_valid, mov_pixels, mov_valid, t: RigidTransform) -> float:
    """Normalized cross-correlation of reference and warped moving frame over their common footprint."""
    w, inside = warp_array(mov_pixels, t, mov_valid)
    both = inside & ref_valid
    if both.sum() < 16:
        return -np.inf
    a = ref[both] - ref[both].mean()
    b = w[both] - w[both].mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / den) if den > 0 else -np.inf


def _estimate_once(ref, ref_pixels, ref_valid, mov, mov_pixels, mov_valid, n_angles):
    angle = _estimate_rotation(ref, mov, n_angles)
    best = None
    # magnitude spectra cannot tell a from a + 180; keep the candidate whose
    # full alignment correlates best with the reference
    for cand in (angle, angle + 180.0):
        rot = RigidTransform(cand, 0.0, 0.0)
        rmov, rvalid = warp_array(mov_pixels, rot, mov_valid)
        if not rvalid.any() or np.ptp(rmov[rvalid]) <= 1e-12:
            continue
        dx, dy, _ = _estimate_translation(ref, rmov, rvalid)
        t = RigidTransform(cand, dx, dy)
        score = _overlap_ncc(ref_pixels, ref_valid, mov_pixels, mov_valid, t)
        if best is None or score > best[0]:
            best = (score, t)
    if best is None:
        raise NoStructure("rotated frame has no structure")
    return best[1]


def register_sequence(
    video,
    chunk: int = 100,
    snap_rotation: float = 0.01,
    snap_shift: float = 0.01,
    min_tail: int | None = None,
):
    """Align every frame to the first frame of its chunk.

    ``video`` is a VideoMatrix or a sequence of Frames. Estimated
    transforms below (``snap_rotation`` degrees, ``snap_shift`` px) are treated
    as identity so aligned input passes through untouched. A trailing
    remainder shorter than ``min_tail`` (default chunk // 2) shares the
    previous reference. Returns ``(VideoMatrix, transforms, reference_indices)``.
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    frames = video.frames() if isinstance(video, VideoMatrix) else list(video)
    if not frames:
        raise ValueError("no frames")
    out = []
    transforms = []
    ranges = chunk_ranges(len(frames), chunk, min_tail)
    refs = [a for a, _ in ranges]
    for start, stop in ranges:
        ref = frames[start]
        for j in range(start, stop):
            f = frames[j]
            if j == start:
                t = IDENTITY
            else:
                t = estimate_rigid_transform(ref, f)
                if abs(t.rotation) < snap_rotation and abs(t.dx) < snap_shift and abs(t.dy) < snap_shift:
                    t = IDENTITY
            transforms.append(t)
            out.append(f if t.is_identity() else warp_frame(f, t))
    return VideoMatrix.from_frames(out), transforms, refs
