"""Canny edges on temperature frames and their probabilistic version.

Each sample-frame of an output distribution (sample ``i`` of every pixel)
goes through the detector; the edge probability of a pixel is the fraction
of sample-frames marking it. Thresholding that probability strictly
removes edges that only noise produces.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from . import eeprom
from .errors import ConfigError, FormatError

SHAPE = (eeprom.ROWS, eeprom.COLS)


@dataclass(frozen=True)
class CannyConfig:
    gaussian_sigma: float = 1.0
    border_mode: str = "nearest"
    low_frac: float = 0.10
    high_frac: float = 0.20
    normalize: bool = True

    def __post_init__(self):
        if not self.gaussian_sigma > 0:
            raise ConfigError("gaussian_sigma must be positive")
        if not 0 <= self.low_frac <= self.high_frac <= 1:
            raise ConfigError("need 0 <= low_frac <= high_frac <= 1")
        if self.border_mode not in ("nearest", "reflect", "mirror", "constant", "wrap"):
            raise ConfigError(f"unknown border mode {self.border_mode!r}")


def _grid(frame) -> np.ndarray:
    a = np.asarray(frame, dtype=float)
    if a.shape == SHAPE:
        return a
    if a.size == eeprom.N_PIXELS:
        return a.reshape(SHAPE)
    if a.ndim == 2:
        return a
    raise FormatError(f"expected a {SHAPE[0]}x{SHAPE[1]} frame, got shape {a.shape}")


# neighbour offsets along the quantized gradient direction, (drow, dcol)
_DIRS = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}


def _shifted(a, dr, dc):
    """``out[r, c] = a[r + dr, c + dc]``, zero outside."""
    out = np.zeros_like(a)
    rows, cols = a.shape
    rs = slice(max(0, -dr), rows - max(0, dr))
    cs = slice(max(0, -dc), cols - max(0, dc))
    rd = slice(max(0, dr), rows + min(0, dr))
    cd = slice(max(0, dc), cols + min(0, dc))
    out[rs, cs] = a[rd, cd]
    return out


def gradients(frame, cfg: CannyConfig = CannyConfig()):
    img = _grid(frame)
    if cfg.normalize:
        lo, hi = img.min(), img.max()
        img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    smooth = ndi.gaussian_filter(img, cfg.gaussian_sigma, mode=cfg.border_mode)
    gy = ndi.sobel(smooth, axis=0, mode=cfg.border_mode)
    gx = ndi.sobel(smooth, axis=1, mode=cfg.border_mode)
    return gy, gx, np.hypot(gy, gx)


def canny(frame, cfg: CannyConfig = CannyConfig()) -> np.ndarray:
    """Boolean edge map of a temperature frame.

    Gaussian smoothing, Sobel gradients, non-maximum suppression along the
    gradient direction quantized to 45 degrees, then hysteresis with
    thresholds given as fractions of the largest gradient magnitude. On a
    plateau of equal magnitudes across the gradient the pixel on the
    positive side wins, so a sharp step yields a one-pixel-wide edge. The
    outermost pixel ring is never an edge (its gradient is border-biased).
    """
    gy, gx, mag = gradients(frame, cfg)
    peak = mag.max()
    if peak == 0:
        return np.zeros(mag.shape, dtype=bool)

    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = np.floor((angle + 22.5) / 45.0).astype(int) % 4
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (dr, dc) in _DIRS.items():
        fwd = _shifted(mag, dr, dc)
        back = _shifted(mag, -dr, -dc)
        keep |= (sector == s) & (mag > fwd) & (mag >= back)

    inner = np.zeros(mag.shape, dtype=bool)
    inner[1:-1, 1:-1] = True
    keep &= inner & (mag > 0)

    low = keep & (mag >= cfg.low_frac * peak)
    high = low & (mag >= cfg.high_frac * peak)
    labels, count = ndi.label(low, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return low
    strong = np.zeros(count + 1, dtype=bool)
    strong[np.unique(labels[high])] = True
    strong[0] = False
    return strong[labels]


def _sample_frames(dist):
    samples = dist.samples if hasattr(dist, "samples") else np.asarray(dist, dtype=float)
    if samples.ndim != 2 or samples.shape[0] != eeprom.N_PIXELS:
        raise FormatError("edge detection needs a full 768-pixel distribution")
    return samples


def edge_probability(dist, cfg: CannyConfig = CannyConfig(), m: int | None = None) -> np.ndarray:
    """Fraction of the first ``m`` aligned sample-frames in which each pixel is an edge."""
    samples = _sample_frames(dist)
    n = samples.shape[1]
    m = n if m is None else int(m)
    if m < 1:
        raise ConfigError("need at least one sample-frame")
    if m > n:
        raise ConfigError(f"asked for {m} sample-frames, the ensemble has {n}")
    counts = np.zeros(SHAPE, dtype=np.int64)
    for i in range(m):
        counts += canny(samples[:, i], cfg)
    return counts / m


def per_sample_edges(dist, cfg: CannyConfig = CannyConfig(), m: int | None = None):
    samples = _sample_frames(dist)
    m = samples.shape[1] if m is None else int(m)
    for i in range(m):
        yield canny(samples[:, i], cfg)


def filter_edges(prob, threshold: float = 0.99) -> np.ndarray:
    """Pixels whose edge probability strictly exceeds ``threshold``."""
    if not 0 <= threshold <= 1:
        raise ConfigError("threshold must lie in [0, 1]")
    p = np.asarray(prob, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise FormatError("probabilities must lie in [0, 1]")
    return p > threshold


@dataclass(frozen=True)
class FalsePositiveStats:
    mean: float
    std: float
    max: int
    fraction_of_frame: float
    counts: tuple

    def to_dict(self):
        return {"mean": self.mean, "std": self.std, "max": self.max, "fraction_of_frame": self.fraction_of_frame,
                "frames": len(self.counts)}


def false_positive_stats(per_sample_maps, reference) -> FalsePositiveStats:
    """False positives (edges absent from ``reference``) per sample map."""
    ref = np.asarray(reference, dtype=bool)
    counts = []
    for e in per_sample_maps:
        e = np.asarray(e, dtype=bool)
        if e.shape != ref.shape:
            raise FormatError(f"edge map shape {e.shape} differs from reference {ref.shape}")
        counts.append(int(np.count_nonzero(e & ~ref)))
    if not counts:
        raise ConfigError("no edge maps given")
    c = np.asarray(counts, dtype=float)
    return FalsePositiveStats(float(c.mean()), float(c.std()), int(c.max()), float(c.mean()) / ref.size,
                              tuple(counts))


# --- output ---------------------------------------------------------------


def write_pgm(path, image, maxval: int = 255) -> None:
    img = np.asarray(image)
    rows, cols = img.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n{maxval}\n".encode())
        fh.write(np.ascontiguousarray(img, dtype=dtype).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError("not a binary PGM file")
    cols, rows, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else "u1"
    body = parts[4]
    return np.frombuffer(body, dtype=dtype, count=rows * cols).reshape(rows, cols)


def write_edge_map(path, edges) -> None:
    """Edge map as an 8-bit PGM (0 or 255)."""
    write_pgm(path, np.where(np.asarray(edges, dtype=bool), 255, 0))


def write_probability_pgm(path, prob) -> None:
    """Probabilities scaled to a 16-bit PGM (1.0 -> 65535)."""
    write_pgm(path, np.round(np.asarray(prob, dtype=float) * 65535), maxval=65535)


def write_grid_csv(path, grid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(grid):
            w.writerow([repr(float(x)) for x in row])


def edge_map_json(edges) -> str:
    e = np.asarray(edges, dtype=bool)
    return json.dumps({"rows": e.shape[0], "cols": e.shape[1], "edges": e.astype(int).tolist()})
