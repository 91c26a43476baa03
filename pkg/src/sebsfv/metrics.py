"""Image-quality and detection metrics."""
from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box covering pixels [x, x+w) x [y, y+h) of one frame."""

    frame: int
    x: int
    y: int
    w: int
    h: int
    score: float = 1.0

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("box width and height must be >= 1")

    @property
    def area(self) -> int:
        return self.w * self.h

    def to_dict(self, with_score: bool = True) -> dict:
        d = {"frame": self.frame, "x": self.x, "y": self.y, "w": self.w, "h": self.h}
        if with_score:
            d["score"] = self.score
        return d

    @classmethod
    def from_dict(cls, d) -> "Box":
        return cls(int(d["frame"]), int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]), float(d.get("score", 1.0)))


DetectionBox = Box
GroundTruthBox = Box


@dataclass(frozen=True)
class MatchResult:
    n_tp: int
    n_fp: int
    n_fn: int
    n_g: int

    def __post_init__(self):
        if min(self.n_tp, self.n_fp, self.n_fn, self.n_g) < 0 or self.n_tp + self.n_fn != self.n_g:
            raise ValueError("inconsistent match counts %s" % (self,))


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    undefined: bool = False


# -- image quality -----------------------------------------------------------


def _levels(img, mask=None):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError("expected an 8-bit image, got %s" % img.dtype)
    vals = img[np.asarray(mask, dtype=bool)] if mask is not None else img.reshape(-1)
    if vals.size == 0:
        raise ValueError("empty region")
    return vals


def entropy(img, mask=None) -> float:
    """Shannon entropy (bits) of the gray-level histogram over valid pixels."""
    counts = np.bincount(_levels(img, mask), minlength=256).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum()) + 0.0


def contrast(img, center=None, window: int = 60, mask=None) -> float:
    """Standard deviation of the 256-bin histogram of a window around ``center``.

    ``center`` is (x, y); the window is clipped at image borders (with a
    warning). Without a center the whole image is used.
    """
    img = np.asarray(img)
    if center is not None:
        h, w = img.shape
        cx, cy = int(round(center[0])), int(round(center[1]))
        half = window // 2
        x0, x1 = cx - half, cx - half + window
        y0, y1 = cy - half, cy - half + window
        if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
            warnings.warn("contrast window clipped at image border", RuntimeWarning)
        sl = (slice(max(y0, 0), min(y1, h)), slice(max(x0, 0), min(x1, w)))
        img = img[sl]
        mask = None if mask is None else np.asarray(mask)[sl]
    counts = np.bincount(_levels(img, mask), minlength=256).astype(np.float64)
    L = counts.size
    mu = counts.sum() / L
    return float(np.sqrt(np.sum((counts - mu) ** 2) / L))


def singular_value_cdf(s, count: int, shape=None) -> float:
    """Fraction of singular-value mass held by the ``count`` largest values.

    Values below the usual numerical-rank cutoff (max(shape) * eps * s_max,
    as in ``numpy.linalg.matrix_rank``) are SVD round-off and count as zero,
    so an exactly rank-1 matrix gives exactly 1.
    """
    s = np.sort(np.asarray(s, dtype=np.float64))[::-1]
    if s.size:
        n = max(shape) if shape is not None else s.size
        s = np.where(s > n * np.finfo(np.float64).eps * s[0], s, 0.0)
    total = s.sum()
    if total <= 0:
        return 1.0
    return float(min(s[:count].sum() / total, 1.0))


def cdf_curve(M, rho: float) -> float:
    """Cumulative singular-value fraction in the top rho percent of min(d, n)."""
    if not 0 < rho <= 100:
        raise ValueError("rho must be in (0, 100]")
    M = np.asarray(M, dtype=np.float64)
    k = min(M.shape)
    count = max(1, int(math.floor(rho / 100.0 * k + 1e-9)))
    return singular_value_cdf(np.linalg.svd(M, compute_uv=False), count, M.shape)


# -- detection ---------------------------------------------------------------


def iou(a: Box, b: Box) -> float:
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def precision(n_tp: int, n_fp: int) -> float:
    return n_tp / (n_tp + n_fp) if n_tp + n_fp > 0 else 0.0


def recall(n_tp: int, n_g: int) -> float:
    return n_tp / n_g if n_g > 0 else 0.0


def f1_score(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def scores_from_counts(n_tp: int, n_fp: int, n_g: int) -> Scores:
    undefined = (n_tp + n_fp == 0) or n_g == 0
    p = precision(n_tp, n_fp)
    r = recall(n_tp, n_g)
    return Scores(p, r, f1_score(p, r), undefined)


def table_scores(n_tp: int, n_fp: int, n_g: int, pct_decimals: int = 1, f1_decimals: int = 3):
    """Precision and recall as rounded percentages, F1 from those rounded values.

    Mirrors how detection tables are usually printed: F1 is computed from the
    displayed P and R, so 139/4265/563 gives (3.2, 24.7, 0.057) where the
    unrounded F1 would be 0.056.
    """
    s = scores_from_counts(n_tp, n_fp, n_g)
    p = round(100.0 * s.precision, pct_decimals)
    r = round(100.0 * s.recall, pct_decimals)
    f1 = round(f1_score(p / 100.0, r / 100.0), f1_decimals)
    return p, r, f1


def _by_frame(boxes):
    out = defaultdict(list)
    for b in boxes:
        out[b.frame].append(b)
    return out


def _match_flags(dets, gts, iou_thresh):
    """Greedy one-to-one matching; returns (sorted dets, tp flags).

    Detections are visited in descending score (stable for ties) and each
    takes the unmatched ground truth of highest IoU, provided that IoU is at
    least ``iou_thresh``.
    """
    order = sorted(range(len(dets)), key=lambda k: -dets[k].score)
    dets = [dets[k] for k in order]
    gt_frames = _by_frame(gts)
    used = {f: [False] * len(bs) for f, bs in gt_frames.items()}
    flags = []
    for det in dets:
        cands = gt_frames.get(det.frame, [])
        best, best_iou = -1, -1.0
        for k, g in enumerate(cands):
            if used[det.frame][k]:
                continue
            v = iou(det, g)
            if v >= iou_thresh and v > best_iou:
                best, best_iou = k, v
        if best >= 0:
            used[det.frame][best] = True
        flags.append(best >= 0)
    return dets, np.array(flags, dtype=bool)


def match_and_score(dets, gts, iou_thresh: float = 0.5):
    """Returns (MatchResult, precision, recall, f1)."""
    dets, gts = list(dets), list(gts)
    _, flags = _match_flags(dets, gts, iou_thresh)
    n_tp = int(flags.sum())
    res = MatchResult(n_tp, len(dets) - n_tp, len(gts) - n_tp, len(gts))
    s = scores_from_counts(res.n_tp, res.n_fp, res.n_g)
    return res, s.precision, s.recall, s.f1


def pr_curve_and_ap(dets, gts, iou_thresh: float = 0.5):
    """Precision/recall at every distinct score threshold and all-point AP.

    Returns ``(points, ap)`` where ``points`` is a list of
    (threshold, precision, recall). AP is the area under the monotone
    precision envelope, summed over the recall steps.
    """
    dets, gts = list(dets), list(gts)
    if not dets or not gts:
        return [], 0.0
    dets, flags = _match_flags(dets, gts, iou_thresh)
    scores = np.array([d.score for d in dets])
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    # last index of each run of equal scores = one threshold
    ends = np.flatnonzero(np.r_[scores[1:] != scores[:-1], True])
    prec = tp[ends] / (tp[ends] + fp[ends])
    rec = tp[ends] / len(gts)
    points = [(float(scores[e]), float(p), float(r)) for e, p, r in zip(ends, prec, rec)]
    env = np.maximum.accumulate(prec[::-1])[::-1]
    steps = np.diff(np.r_[0.0, rec])
    return points, float(np.sum(steps * env))
