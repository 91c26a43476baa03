"""Traditional shadow detector: Tsallis-entropy threshold, 8-connected
components, size filter, bounding boxes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .metrics import Box

MIN_AREA = 50
MAX_AREA = 300
_EIGHT = np.ones((3, 3), dtype=int)


class NoThreshold(ValueError):
    """Image has a single gray level, so there is nothing to split."""


@dataclass
class Segmentation:
    labels: np.ndarray  # int label image of the kept components (0 = background)
    boxes: list
    n_components: int  # before size filtering
    n_filtered: int


def _class_entropy(p, q):
    """Tsallis entropy of each prefix class [0, t) for t = 1..L, plus the class mass."""
    P = np.cumsum(p)
    if q == 1.0:
        # Shannon: H = log P - sum p log p / P
        plogp = np.cumsum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            H = np.log(P) - plogp / P
        return H, P
    pq = np.cumsum(np.where(p > 0, p**q, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        H = (1.0 - pq / P**q) / (q - 1.0)
    return H, P


def tsallis_threshold(img, q: float = 0.8) -> int:
    """Gray level t maximizing S_q(A) + S_q(B) + (1 - q) S_q(A) S_q(B).

    Classes are A = [0, t) and B = [t, 255]; every t in 1..255 is tried and
    both classes must be populated. Ties go to the lowest t. q = 1 uses the
    Shannon (maximum entropy) criterion S(A) + S(B).
    """
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError("expected an 8-bit image, got %s" % img.dtype)
    if q <= 0:
        raise ValueError("q must be positive")
    counts = np.bincount(img.reshape(-1), minlength=256).astype(np.float64)
    if np.count_nonzero(counts) < 2:
        raise NoThreshold("image has a single gray level")
    p = counts / counts.sum()
    Ha, Pa = _class_entropy(p, q)  # index t-1 -> class [0, t)
    Hb, Pb = _class_entropy(p[::-1], q)  # index k -> class [255 - k, 255]
    t = np.arange(1, 256)
    sa, ma = Ha[t - 1], Pa[t - 1]
    sb, mb = Hb[255 - t], Pb[255 - t]
    crit = sa + sb + (1.0 - q) * sa * sb if q != 1.0 else sa + sb
    ok = (ma > 0) & (mb > 0)
    crit = np.where(ok, crit, -np.inf)
    best = crit.max()
    tol = 1e-12 * max(1.0, abs(best))
    return int(t[np.flatnonzero(crit >= best - tol)[0]])


def binarize(img, threshold: int, polarity: str = "dark") -> np.ndarray:
    img = np.asarray(img)
    if polarity == "dark":
        return img <= threshold
    if polarity == "bright":
        return img >= threshold
    raise ValueError("polarity must be 'dark' or 'bright', got %r" % (polarity,))


def segment(img, threshold: int, polarity: str = "dark", frame: int = 0, min_area=MIN_AREA, max_area=MAX_AREA) -> Segmentation:
    """Label 8-connected foreground components and keep those with min_area <= area <= max_area.

    Each kept component yields its tight bounding box with score area / max_area.
    """
    fg = binarize(img, threshold, polarity)
    labels, n = ndimage.label(fg, structure=_EIGHT)
    if n == 0:
        return Segmentation(labels, [], 0, 0)
    areas = np.bincount(labels.reshape(-1), minlength=n + 1)[1:]
    keep = (areas >= min_area) & (areas <= max_area)
    boxes = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        if not keep[k - 1]:
            continue
        ys, xs = sl
        boxes.append(Box(frame, xs.start, ys.start, xs.stop - xs.start, ys.stop - ys.start, float(areas[k - 1]) / max_area))
    lut = np.zeros(n + 1, dtype=labels.dtype)
    lut[1:][keep] = np.arange(1, int(keep.sum()) + 1)
    return Segmentation(lut[labels], boxes, int(n), int(n - keep.sum()))


def detect_frame(img, polarity: str = "dark", q: float = 0.8, frame: int = 0) -> list:
    """Threshold + segment one 8-bit frame; a constant frame yields no boxes."""
    try:
        t = tsallis_threshold(img, q)
    except NoThreshold:
        return []
    return segment(img, t, polarity, frame).boxes


def detect_sequence(images, polarity: str = "dark", q: float = 0.8) -> list:
    """Boxes for every frame of an iterable of 8-bit images, frame index = position."""
    out = []
    for j, img in enumerate(images):
        out.extend(detect_frame(img, polarity, q, j))
    return out
