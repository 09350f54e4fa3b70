"""Image containers, CFA sampling, bilinear demosaicking and Bayer packing.

Linear RGB images are plain ``(H, W, 3)`` float32 arrays in [0, 1].  Mosaicked
sensor data travels in :class:`RawFrame`, which carries the capture metadata
needed to normalise it.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DimensionError

RGB_INDEX = {"r": 0, "g": 1, "b": 2}


@dataclass(frozen=True)
class CfaPattern:
    """2x2 colour filter layout, e.g. ``CfaPattern("GBRG")``.

    Labels are given in raster order over the quad: (0,0), (0,1), (1,0), (1,1).
    The first green encountered is ``g1`` and the second ``g2``.
    """

    layout: str = "RGGB"

    def __post_init__(self):
        layout = self.layout.upper()
        if len(layout) != 4 or sorted(layout) != ["B", "G", "G", "R"]:
            raise ConfigError(f"invalid CFA layout {self.layout!r}: need one R, one B and two G")
        object.__setattr__(self, "layout", layout)

    @property
    def labels(self) -> tuple[str, str, str, str]:
        out, greens = [], 0
        for ch in self.layout:
            if ch == "G":
                greens += 1
                out.append(f"g{greens}")
            else:
                out.append(ch.lower())
        return tuple(out)

    def offset(self, label: str) -> tuple[int, int]:
        """(row, col) offset of ``label`` within the quad."""
        k = self.labels.index(label)
        return divmod(k, 2)

    def rgb_channel(self, row: int, col: int) -> int:
        """RGB channel index sampled at pixel (row, col)."""
        return RGB_INDEX[self.layout[2 * (row % 2) + (col % 2)].lower()]

    def channel_map(self) -> np.ndarray:
        """2x2 int array of RGB channel indices."""
        return np.array([[self.rgb_channel(i, j) for j in range(2)] for i in range(2)], dtype=np.intp)

    def masks(self, height: int, width: int) -> np.ndarray:
        """Boolean ``(3, H, W)`` site masks for r, g, b."""
        cmap = np.tile(self.channel_map(), (height // 2 + 1, width // 2 + 1))[:height, :width]
        return np.stack([cmap == c for c in range(3)])


@dataclass
class RawFrame:
    """Single mosaicked sensor plane with capture metadata.

    ``data`` is either uint16 digital numbers or float samples normalised to
    [0, 1] (see :func:`normalize_raw`).
    """

    data: np.ndarray
    cfa: CfaPattern = field(default_factory=CfaPattern)
    black_level: float = 0.0
    white_level: float = 65535.0
    iso: float = 100.0
    wb_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    exposure_time: Optional[float] = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise DimensionError(f"raw data must be 2-D, got shape {self.data.shape}")
        h, w = self.data.shape
        if h % 2 or w % 2:
            raise DimensionError(f"raw dimensions must be even, got {w}x{h}")
        if isinstance(self.cfa, str):
            self.cfa = CfaPattern(self.cfa)
        self.wb_gains = tuple(float(g) for g in self.wb_gains)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def is_normalized(self) -> bool:
        return np.issubdtype(self.data.dtype, np.floating)

    def metadata(self) -> dict:
        return {
            "cfa": self.cfa.layout,
            "black_level": self.black_level,
            "white_level": self.white_level,
            "iso": self.iso,
            "wb_gains": list(self.wb_gains),
            "exposure_time": self.exposure_time,
        }

    def with_data(self, data: np.ndarray, **changes) -> "RawFrame":
        return dataclasses.replace(self, data=data, **changes)


@dataclass
class CameraProfile:
    """Per-device sensor description."""

    name: str
    cfa: CfaPattern = field(default_factory=CfaPattern)
    black_level: float = 64.0
    white_level: float = 1023.0
    wb_gains: tuple[float, float, float] = (2.0, 1.0, 1.8)
    iso_set: tuple[float, ...] = (50, 100, 200, 400, 800, 1600, 3200)
    noise_model: Optional[str] = None
    kernel_grid: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if isinstance(self.cfa, str):
            self.cfa = CfaPattern(self.cfa)
        self.wb_gains = tuple(float(g) for g in self.wb_gains)
        self.iso_set = tuple(float(i) for i in self.iso_set)
        self.kernel_grid = tuple(int(k) for k in self.kernel_grid)
        if not self.black_level < self.white_level:
            raise ConfigError(f"{self.name}: black_level must be below white_level")
        if any(g <= 0 for g in self.wb_gains):
            raise ConfigError(f"{self.name}: white-balance gains must be positive")
        if any(b <= a for a, b in zip(self.iso_set, self.iso_set[1:])):
            raise ConfigError(f"{self.name}: iso_set must be strictly increasing")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["cfa"] = self.cfa.layout
        d["wb_gains"] = list(self.wb_gains)
        d["iso_set"] = list(self.iso_set)
        d["kernel_grid"] = list(self.kernel_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CameraProfile":
        return cls(**{k: v for k, v in d.items() if k in {f.name for f in dataclasses.fields(cls)}})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CameraProfile":
        return cls.from_dict(json.loads(text))


def check_rgb(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionError(f"expected an (H, W, 3) image, got shape {rgb.shape}")
    return rgb


def _check_even(shape):
    if shape[0] % 2 or shape[1] % 2:
        raise DimensionError(f"dimensions must be even, got {shape[1]}x{shape[0]}")


def mosaic(rgb: np.ndarray, cfa: CfaPattern | str) -> np.ndarray:
    """Sample one colour per pixel according to ``cfa``."""
    rgb = check_rgb(rgb)
    _check_even(rgb.shape)
    if isinstance(cfa, str):
        cfa = CfaPattern(cfa)
    out = np.empty(rgb.shape[:2], dtype=rgb.dtype)
    for i in range(2):
        for j in range(2):
            out[i::2, j::2] = rgb[i::2, j::2, cfa.rgb_channel(i, j)]
    return out


_GREEN_KERNEL = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0
_RB_KERNEL = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0


def demosaic_bilinear(raw: RawFrame | np.ndarray, cfa: CfaPattern | str | None = None) -> np.ndarray:
    """Bilinear demosaic of a normalised mosaic into an ``(H, W, 3)`` float32 image.

    Missing samples are weighted averages of the nearest same-colour sites,
    computed as a normalised convolution so replicate-padded borders still
    average only genuine samples.
    """
    if isinstance(raw, RawFrame):
        cfa = raw.cfa if cfa is None else cfa
        plane = raw.data
    else:
        plane = np.asarray(raw)
    if cfa is None:
        raise ConfigError("a CFA pattern is required to demosaic a bare array")
    if isinstance(cfa, str):
        cfa = CfaPattern(cfa)
    _check_even(plane.shape)
    plane = plane.astype(np.float64)
    masks = cfa.masks(*plane.shape).astype(np.float64)
    out = np.empty(plane.shape + (3,), dtype=np.float32)
    for c in range(3):
        kernel = _GREEN_KERNEL if c == 1 else _RB_KERNEL
        num = ndimage.correlate(plane * masks[c], kernel, mode="nearest")
        den = ndimage.correlate(masks[c], kernel, mode="nearest")
        est = num / den
        out[..., c] = np.where(masks[c] > 0, plane, est)
    return out


def normalize_raw(raw: RawFrame) -> RawFrame:
    """Map [black_level, white_level] to [0, 1] with clamping."""
    b, w = float(raw.black_level), float(raw.white_level)
    if not b < w:
        raise ConfigError(f"degenerate levels: black={b} white={w}")
    data = (raw.data.astype(np.float64) - b) / (w - b)
    return raw.with_data(np.clip(data, 0.0, 1.0).astype(np.float32))


def denormalize_raw(raw: RawFrame) -> RawFrame:
    """Inverse of :func:`normalize_raw`, quantised to uint16 digital numbers."""
    b, w = float(raw.black_level), float(raw.white_level)
    if not b < w:
        raise ConfigError(f"degenerate levels: black={b} white={w}")
    dn = np.rint(raw.data.astype(np.float64) * (w - b) + b)
    return raw.with_data(np.clip(dn, 0, 65535).astype(np.uint16))


def pack_bayer(raw: RawFrame | np.ndarray) -> np.ndarray:
    """Stack each 2x2 quad into 4 half-resolution channels (raster CFA order)."""
    plane = raw.data if isinstance(raw, RawFrame) else np.asarray(raw)
    _check_even(plane.shape)
    return np.stack([plane[i::2, j::2] for i in range(2) for j in range(2)])


def unpack_bayer(packed: np.ndarray) -> np.ndarray:
    packed = np.asarray(packed)
    if packed.ndim != 3 or packed.shape[0] != 4:
        raise DimensionError(f"expected a (4, h, w) packed array, got {packed.shape}")
    _, h, w = packed.shape
    out = np.empty((2 * h, 2 * w), dtype=packed.dtype)
    for k in range(4):
        i, j = divmod(k, 2)
        out[i::2, j::2] = packed[k]
    return out
