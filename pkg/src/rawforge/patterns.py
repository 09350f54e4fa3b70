"""Calibration and evaluation patterns for display-based capture.

Frames are float32 arrays with values in [0, 1] (1 = display maximum).
Achromatic patterns are 2-D; colour patches are (H, W, 3).  Sequences are
generated lazily so full-resolution gray-code stacks need not sit in memory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError

MAX_GRAY_BITS = 23


class PatternKind(str, Enum):
    GRAY_CODE_V = "GrayCodeV"
    GRAY_CODE_H = "GrayCodeH"
    GRAY_STEPS = "GraySteps"
    COLOR_PATCHES = "ColorPatches"
    RANDOM_STRUCTURES = "RandomStructures"
    SIEMENS_GRID = "SiemensGrid"


@dataclass
class PatternSequence:
    kind: PatternKind
    width: int
    height: int
    count: int
    make: Callable[[int], np.ndarray] = field(repr=False)
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.count

    def frame(self, i: int) -> np.ndarray:
        if not 0 <= i < self.count:
            raise IndexError(i)
        return self.make(i)

    def __getitem__(self, i):
        return self.frame(i)

    def __iter__(self):
        return (self.make(i) for i in range(self.count))

    @property
    def frames(self) -> list[np.ndarray]:
        return list(self)

    def manifest(self) -> dict:
        return {"kind": self.kind.value, "width": self.width, "height": self.height, "count": self.count,
                "seed": self.seed, **self.meta}


def gray_code_bits(extent: int) -> int:
    """Number of Gray-code frames needed to address ``extent`` positions."""
    if extent < 1:
        raise ConfigError("extent must be positive")
    return min(MAX_GRAY_BITS, max(1, math.ceil(math.log2(extent))))


def gray_encode(n):
    n = np.asarray(n, dtype=np.int64)
    return n ^ (n >> 1)


def gray_decode(g):
    g = np.asarray(g, dtype=np.int64)
    n = g.copy()
    shift = g >> 1
    while np.any(shift):
        n ^= shift
        shift >>= 1
    return n


def gen_gray_code(width: int, height: int, axis: str = "x", inverse: bool = False) -> PatternSequence:
    """Binary-reflected Gray-code stripes, most significant bit first.

    ``axis="x"`` encodes columns (vertical stripes), ``axis="y"`` rows.  With
    ``inverse=True`` every bit frame is followed by its complement.
    """
    if width <= 0 or height <= 0:
        raise ConfigError("width and height must be positive")
    if axis not in ("x", "y"):
        raise ConfigError(f"axis must be 'x' or 'y', got {axis!r}")
    extent = width if axis == "x" else height
    nbits = gray_code_bits(extent)
    codes = gray_encode(np.arange(extent))

    def make(i):
        bit = nbits - 1 - (i // 2 if inverse else i)
        line = ((codes >> bit) & 1).astype(np.float32)
        if inverse and i % 2:
            line = 1.0 - line
        if axis == "x":
            return np.broadcast_to(line[None, :], (height, width)).copy()
        return np.broadcast_to(line[:, None], (height, width)).copy()

    kind = PatternKind.GRAY_CODE_V if axis == "x" else PatternKind.GRAY_CODE_H
    return PatternSequence(kind, width, height, nbits * (2 if inverse else 1), make,
                           meta={"bits": nbits, "axis": axis, "inverse": inverse, "bit_order": "msb_first"})


def gen_gray_steps(levels: int = 255, width: int = 64, height: int = 64) -> PatternSequence:
    """Uniform fields at intensities ``i / (levels - 1)``."""
    if levels < 2:
        raise ConfigError("need at least 2 gray levels")

    def make(i):
        return np.full((height, width), i / (levels - 1), dtype=np.float32)

    return PatternSequence(PatternKind.GRAY_STEPS, width, height, levels, make, meta={"levels": levels})


def srgb_encode(linear):
    linear = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(linear <= 0.0031308, 12.92 * linear, 1.055 * linear ** (1 / 2.4) - 0.055)


def colorchecker_sg() -> np.ndarray:
    """The 140 ColorChecker Digital SG patches as linear sRGB in [0, 1]."""
    text = resources.files("rawforge.data").joinpath("colorchecker_sg.json").read_text()
    return np.array([p["rgb"] for p in json.loads(text)["patches"]], dtype=np.float64)


def default_palette() -> np.ndarray:
    """Display code values (sRGB-encoded, [0, 1]) for the SG patches."""
    return srgb_encode(colorchecker_sg())


def gen_color_patches(palette=None, width: int = 64, height: int = 64) -> PatternSequence:
    pal = default_palette() if palette is None else np.asarray(palette, dtype=np.float64).reshape(-1, 3)
    if len(pal) == 0:
        raise ConfigError("palette must not be empty")

    def make(i):
        return np.broadcast_to(pal[i].astype(np.float32), (height, width, 3)).copy()

    return PatternSequence(PatternKind.COLOR_PATCHES, width, height, len(pal), make,
                           meta={"palette": pal.tolist()})


def _random_structure(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    img = np.zeros((height, width), dtype=bool)
    for _ in range(int(rng.integers(24, 48))):
        kind = rng.choice(("rect", "bars", "checker", "noise"), p=(0.35, 0.25, 0.25, 0.15))
        scale = 2 ** int(rng.integers(0, 5))
        ph = int(rng.integers(max(2, height // 16), max(3, height // 2) + 1))
        pw = int(rng.integers(max(2, width // 16), max(3, width // 2) + 1))
        r0 = int(rng.integers(-ph // 2, height))
        c0 = int(rng.integers(-pw // 2, width))
        rs, cs = slice(max(r0, 0), min(r0 + ph, height)), slice(max(c0, 0), min(c0 + pw, width))
        if rs.start >= rs.stop or cs.start >= cs.stop:
            continue
        rr, cc = np.mgrid[rs, cs]
        if kind == "rect":
            patch = np.ones(rr.shape, dtype=bool)
        elif kind == "bars":
            patch = ((cc if rng.random() < 0.5 else rr) // scale) % 2 == 0
        elif kind == "checker":
            patch = ((rr // scale) + (cc // scale)) % 2 == 0
        else:
            cells = rng.random(((rr.shape[0] + scale - 1) // scale, (rr.shape[1] + scale - 1) // scale)) < 0.5
            patch = np.kron(cells, np.ones((scale, scale), dtype=bool))[: rr.shape[0], : rr.shape[1]]
        img[rs, cs] ^= patch
    return img


def gen_random_structures(count: int, width: int, height: int, seed: int = 0) -> PatternSequence:
    """Binary multi-scale structures: XOR-composited rectangles, bars, checkers and noise.

    Frame ``i`` depends only on ``(seed, i)``.  Frames whose white fraction falls
    outside [0.2, 0.8] are redrawn.
    """
    if count < 1:
        raise ConfigError("count must be at least 1")

    def make(i):
        rng = np.random.default_rng([seed, i])
        while True:
            img = _random_structure(rng, width, height)
            if 0.2 <= img.mean() <= 0.8:
                return img.astype(np.float32)

    return PatternSequence(PatternKind.RANDOM_STRUCTURES, width, height, count, make, seed=seed)


def siemens_star(size: int, spokes: int, center=None, radius: float | None = None, supersample: int = 4,
                 background: float = 0.5) -> np.ndarray:
    """Binary Siemens star with ``spokes`` white sectors, anti-aliased by supersampling."""
    if spokes < 2 or spokes % 2:
        raise ConfigError("spokes must be even and >= 2")
    cy, cx = ((size - 1) / 2, (size - 1) / 2) if center is None else center
    radius = (size / 2 - 1) if radius is None else radius
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    acc = np.zeros((size, size))
    for dy in offs:
        for dx in offs:
            x = xx + dx - cx
            y = yy + dy - cy
            theta = np.arctan2(y, x)
            val = (np.floor(theta * spokes / np.pi) % 2 == 0).astype(np.float64)
            acc += np.where(np.hypot(x, y) <= radius, val, background)
    return (acc / supersample ** 2).astype(np.float32)


def gen_siemens_grid(rows: int = 3, cols: int = 6, spokes: int = 20, cell: int = 256, supersample: int = 4):
    """Grid of Siemens stars; returns ``(image, centers)`` with (x, y) centers."""
    if spokes < 2 or spokes % 2:
        raise ConfigError("spokes must be even and >= 2")
    img = np.full((rows * cell, cols * cell), 0.5, dtype=np.float32)
    centers = []
    star = siemens_star(cell, spokes, radius=cell * 0.45, supersample=supersample)
    for r in range(rows):
        for c in range(cols):
            img[r * cell:(r + 1) * cell, c * cell:(c + 1) * cell] = star
            centers.append((c * cell + (cell - 1) / 2, r * cell + (cell - 1) / 2))
    return np.repeat(img[..., None], 3, axis=2), centers


def capture_distance(focal_length: float, scale: float) -> float:
    """Camera-to-display distance ``d = f / s`` for the requested SR scale."""
    if focal_length <= 0 or scale <= 0:
        raise ConfigError("focal length and scale must be positive")
    return focal_length / scale
