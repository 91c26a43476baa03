"""Frame and video-matrix containers, PGM / SBFV1 file I/O, 8-bit quantization.

Intensities are real values in [0, 1] everywhere inside the library; 8-bit
values only appear at file and metric boundaries.
"""
from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SBFV_MAGIC = b"SBFV1"


class FormatError(ValueError):
    """Malformed PGM or SBFV1 file."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray  # (height, width) float64
    valid: np.ndarray = None  # (height, width) bool; None = all valid

    def __post_init__(self):
        pix = _frozen(self.pixels, np.float64)
        if pix.ndim != 2:
            raise ValueError("frame pixels must be a 2-D array")
        valid = self.valid
        if valid is None:
            valid = np.ones(pix.shape, dtype=bool)
        valid = _frozen(valid, bool)
        if valid.shape != pix.shape:
            raise ValueError("mask shape %s differs from pixel shape %s" % (valid.shape, pix.shape))
        if not np.all(np.isfinite(pix)) or pix.min(initial=0.0) < 0.0 or pix.max(initial=0.0) > 1.0:
            raise ValueError("frame intensities must be finite and in [0, 1]")
        object.__setattr__(self, "pixels", pix)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, pixels, valid=None) -> "Frame":
        return cls(pixels, valid)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class VideoMatrix:
    """d x n matrix whose column j is frame j flattened row-major.

    ``mask[i, j]`` is False where pixel i of frame j is missing (outside the
    registered footprint). Column order is temporal order.
    """

    data: np.ndarray
    mask: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        if data.ndim != 2:
            raise ValueError("data must be d x n")
        mask = self.mask
        if mask is None:
            mask = np.ones(data.shape, dtype=bool)
        mask = _frozen(mask, bool)
        if mask.shape != data.shape:
            raise ValueError("mask shape differs from data shape")
        if self.height * self.width != data.shape[0]:
            raise ValueError("height*width = %d but d = %d" % (self.height * self.width, data.shape[0]))
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)

    @property
    def d(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def frame(self, j: int) -> Frame:
        return column_to_frame(self.data[:, j], self.mask[:, j], self.height, self.width)

    def frames(self) -> list[Frame]:
        return [self.frame(j) for j in range(self.n)]

    def columns(self, start: int, stop: int) -> "VideoMatrix":
        return VideoMatrix(self.data[:, start:stop], self.mask[:, start:stop], self.height, self.width)

    def as_stack(self) -> np.ndarray:
        """(n, height, width) view of the data."""
        return self.data.T.reshape(self.n, self.height, self.width)

    @classmethod
    def from_frames(cls, frames) -> "VideoMatrix":
        frames = list(frames)
        if not frames:
            raise ValueError("no frames")
        h, w = frames[0].shape
        for f in frames:
            if f.shape != (h, w):
                raise ValueError("mixed frame dimensions: %s vs %s" % (f.shape, (h, w)))
        cols = [frame_to_column(f) for f in frames]
        data = np.stack([c[0] for c in cols], axis=1)
        mask = np.stack([c[1] for c in cols], axis=1)
        return cls(data, mask, h, w)

    @classmethod
    def from_stack(cls, stack, masks=None) -> "VideoMatrix":
        stack = np.asarray(stack, dtype=np.float64)
        n, h, w = stack.shape
        data = stack.reshape(n, h * w).T
        mask = None if masks is None else np.asarray(masks, dtype=bool).reshape(n, h * w).T
        return cls(data, mask, h, w)


def frame_to_column(f: Frame) -> tuple[np.ndarray, np.ndarray]:
    """Row-major flattening of a frame into (vector, mask-vector)."""
    return f.pixels.reshape(-1).copy(), f.valid.reshape(-1).copy()


def column_to_frame(column, mask, height: int, width: int) -> Frame:
    column = np.asarray(column, dtype=np.float64)
    if column.size != height * width:
        raise ValueError("column length %d does not match %dx%d" % (column.size, height, width))
    mask = np.ones(column.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return Frame(column.reshape(height, width), mask.reshape(height, width))


def quantize_u8(x) -> np.ndarray:
    """round(255 * x), half away from zero, as uint8.

    Accepts a Frame or an array of intensities in [0, 1].
    """
    if isinstance(x, Frame):
        x = x.pixels
    x = np.asarray(x, dtype=np.float64)
    q = np.floor(255.0 * np.clip(x, 0.0, 1.0) + 0.5)
    return q.astype(np.uint8)


def chunk_boundaries(n: int, chunk: int, min_tail: int | None = None) -> list:
    """First frame of each chunk.

    A trailing remainder shorter than ``min_tail`` (default chunk // 2) is
    folded into the previous chunk: a few frames cannot tell a slow mover from
    background, since each pixel on its path is covered for most of them.
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    min_tail = chunk // 2 if min_tail is None else min_tail
    bounds = list(range(0, n, chunk))
    if len(bounds) > 1 and n - bounds[-1] < min_tail:
        bounds.pop()
    return bounds


def chunk_ranges(n: int, chunk: int, min_tail: int | None = None) -> list:
    b = chunk_boundaries(n, chunk, min_tail)
    return list(zip(b, b[1:] + [n]))


# -- PGM ---------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) file into a uint8 (height, width) array."""
    raw = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise FormatError("%s: truncated PGM header" % path)
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise FormatError("%s: not a binary PGM (magic %r)" % (path, fields[0]))
    try:
        width, height, maxval = (int(t) for t in fields[1:])
    except ValueError:
        raise FormatError("%s: non-integer PGM header field" % path) from None
    if width <= 0 or height <= 0:
        raise FormatError("%s: bad PGM dimensions %dx%d" % (path, width, height))
    if maxval != 255:
        raise FormatError("%s: only maxval 255 is supported, got %d" % (path, maxval))
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise FormatError("%s: missing whitespace after PGM header" % path)
    pos += 1
    body = raw[pos : pos + width * height]
    if len(body) != width * height:
        raise FormatError("%s: raster has %d bytes, expected %d" % (path, len(body), width * height))
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, img) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    if img.dtype != np.uint8:
        if img.min(initial=0) < 0 or img.max(initial=0) > 255:
            raise ValueError("PGM values must be in 0..255")
        img = img.astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def _frame_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError("no such directory: %s" % directory)
    return sorted(p for p in directory.iterdir() if p.suffix == ".pgm" and not p.name.endswith(".mask.pgm"))


def mask_path(frame_path) -> Path:
    frame_path = Path(frame_path)
    return frame_path.with_name(frame_path.stem + ".mask.pgm")


def load_frame_sequence(directory, with_masks: bool = False) -> VideoMatrix:
    """Load every ``*.pgm`` in ``directory`` (lexicographic order = time).

    Intensities are gray/255 and all mask entries are True, unless
    ``with_masks`` is set, in which case companion ``<stem>.mask.pgm`` files
    (nonzero = valid) are read where present.
    """
    files = _frame_files(directory)
    if not files:
        raise ValueError("no PGM frames in %s" % directory)
    imgs = []
    masks = []
    for p in files:
        img = read_pgm(p)
        if imgs and img.shape != imgs[0].shape:
            raise ValueError("mixed frame dimensions: %s is %s, expected %s" % (p.name, img.shape, imgs[0].shape))
        imgs.append(img)
        mp = mask_path(p)
        if with_masks and mp.exists():
            m = read_pgm(mp)
            if m.shape != img.shape:
                raise ValueError("mask %s does not match frame shape" % mp.name)
            masks.append(m > 0)
        else:
            masks.append(np.ones(img.shape, dtype=bool))
    stack = np.stack(imgs).astype(np.float64) / 255.0
    return VideoMatrix.from_stack(stack, np.stack(masks))


def save_frame_sequence(directory, video, names=None, write_masks: bool = False, prefix: str = "frame_") -> list[Path]:
    """Write each frame as 8-bit PGM; invalid pixels are written as 0."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(video, VideoMatrix):
        stack, masks = video.as_stack(), video.mask.T.reshape(video.n, video.height, video.width)
    else:
        stack = np.asarray(video, dtype=np.float64)
        masks = np.ones(stack.shape, dtype=bool)
    if names is None:
        names = ["%s%04d.pgm" % (prefix, j) for j in range(len(stack))]
    paths = []
    for img, m, name in zip(stack, masks, names):
        p = directory / name
        write_pgm(p, np.where(m, quantize_u8(img), 0).astype(np.uint8))
        if write_masks:
            write_pgm(mask_path(p), np.where(m, 255, 0).astype(np.uint8))
        paths.append(p)
    return paths


# -- SBFV1 binary matrix dump ------------------------------------------------


def save_matrix(path, matrix) -> None:
    """Magic ``SBFV1``, u32 LE rows, u32 LE cols, float64 LE column-major."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError("only 2-D matrices can be dumped")
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(SBFV_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(m.astype("<f8").tobytes(order="F"))


def load_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:5] != SBFV_MAGIC:
        raise FormatError("%s: bad magic %r" % (path, raw[:5]))
    if len(raw) < 13:
        raise FormatError("%s: truncated header" % path)
    rows, cols = struct.unpack("<II", raw[5:13])
    body = raw[13:]
    if len(body) != 8 * rows * cols:
        raise FormatError("%s: expected %d payload bytes, found %d" % (path, 8 * rows * cols, len(body)))
    return np.frombuffer(body, dtype="<f8").reshape((rows, cols), order="F").astype(np.float64)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def list_frame_names(directory) -> list[str]:
    return [p.name for p in _frame_files(directory)]


__all__ = [
    "Frame",
    "VideoMatrix",
    "FormatError",
    "frame_to_column",
    "column_to_frame",
    "quantize_u8",
    "read_pgm",
    "write_pgm",
    "load_frame_sequence",
    "save_frame_sequence",
    "save_matrix",
    "load_matrix",
    "file_sha256",
    "list_frame_names",
    "mask_path",
]
