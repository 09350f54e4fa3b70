"""File formats: 16-bit PGM + JSON sidecar RAW, 16-bit linear PNG, float planar.

All writers are atomic (write to a temporary file in the target directory,
then rename).
"""

from __future__ import annotations

import contextlib
import json
import math
import os
import tempfile
from pathlib import Path

import cv2
import numpy as np

from .errors import ConfigError, DimensionError
from .image import CfaPattern, RawFrame


@contextlib.contextmanager
def atomic_open(path, mode="wb"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _sanitize(obj):
    # JSON has no infinity literal; encode non-finite floats as strings.
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_sanitize(json.loads(json.dumps(obj, default=_json_default))), indent=2, sort_keys=True)


def write_json(path, obj):
    with atomic_open(path, "w") as fh:
        fh.write(dumps_json(obj))
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


# --- 16-bit binary PGM -----------------------------------------------------


def write_pgm16(path, data: np.ndarray):
    data = np.asarray(data)
    if data.ndim != 2:
        raise DimensionError(f"PGM data must be 2-D, got shape {data.shape}")
    if data.dtype != np.uint16:
        raise ConfigError(f"PGM writer expects uint16 data, got {data.dtype}")
    h, w = data.shape
    with atomic_open(path) as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.astype(">u2").tobytes())


def _pgm_tokens(buf: bytes):
    """Yield (token, end_offset) for the PGM header, skipping comments."""
    pos = 0
    while True:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        yield buf[start:pos], pos


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens = _pgm_tokens(buf)
    magic, _ = next(tokens)
    if magic != b"P5":
        raise ConfigError(f"{path}: not a binary PGM (magic {magic!r})")
    w = int(next(tokens)[0])
    h = int(next(tokens)[0])
    maxval_tok, end = next(tokens)
    maxval = int(maxval_tok)
    offset = end + 1
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=offset).reshape(h, w)
    return data.astype(np.uint16)


def write_raw(path, raw: RawFrame, extra: dict | None = None):
    """Write a RawFrame as ``<path>.pgm`` plus ``<path>.json`` sidecar.

    Normalised float frames are quantised to DN using the frame's levels.
    """
    from .image import denormalize_raw

    frame = denormalize_raw(raw) if raw.is_normalized else raw
    write_pgm16(path, frame.data.astype(np.uint16))
    meta = frame.metadata()
    if extra:
        meta.update(extra)
    write_json(sidecar_path(path), meta)


def read_raw(path) -> RawFrame:
    data = read_pgm(path)
    side = sidecar_path(path)
    meta = read_json(side) if side.exists() else {}
    return RawFrame(
        data=data,
        cfa=CfaPattern(meta.get("cfa", "RGGB")),
        black_level=float(meta.get("black_level", 0.0)),
        white_level=float(meta.get("white_level", 65535.0)),
        iso=float(meta.get("iso", 100.0)),
        wb_gains=tuple(meta.get("wb_gains", (1.0, 1.0, 1.0))),
        exposure_time=meta.get("exposure_time"),
    )


# --- 16-bit linear PNG -------------------------------------------------------


def write_png16(path, img: np.ndarray):
    """Write a [0, 1] float image (H, W) or (H, W, 3) as 16-bit PNG, no gamma."""
    img = np.asarray(img, dtype=np.float64)
    q = np.rint(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    if q.ndim == 3:
        q = q[..., ::-1]  # OpenCV stores BGR
    ok, enc = cv2.imencode(".png", np.ascontiguousarray(q))
    if not ok:
        raise OSError(f"PNG encoding failed for {path}")
    with atomic_open(path) as fh:
        fh.write(enc.tobytes())


def read_png16(path) -> np.ndarray:
    """Read a PNG as linear float32 in [0, 1]."""
    q = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if q is None:
        raise OSError(f"cannot read image {path}")
    scale = 65535.0 if q.dtype == np.uint16 else 255.0
    if q.ndim == 3:
        q = q[..., :3][..., ::-1]
    return (q.astype(np.float64) / scale).astype(np.float32)


# --- float32 planar + JSON header ------------------------------------------


def write_planar(path, arr: np.ndarray, extra: dict | None = None):
    """Store a (C, H, W) or (H, W) float array as little-endian float32 planes."""
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionError(f"planar arrays must be 2-D or 3-D, got {arr.shape}")
    c, h, w = arr.shape
    header = {"channels": c, "height": h, "width": w, "dtype": "float32", "byte_order": "little"}
    if extra:
        header.update(extra)
    with atomic_open(path) as fh:
        fh.write(np.ascontiguousarray(arr).tobytes())
    write_json(sidecar_path(path), header)


def read_planar(path) -> np.ndarray:
    header = read_json(sidecar_path(path))
    shape = (header["channels"], header["height"], header["width"])
    return np.fromfile(path, dtype="<f4").reshape(shape).astype(np.float32)


def read_linear_rgb(path) -> np.ndarray:
    """Read an (H, W, 3) linear RGB image from PNG or float planar."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        img = read_png16(path)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        return img
    arr = read_planar(path)
    if arr.shape[0] != 3:
        raise DimensionError(f"{path}: expected 3 planes, got {arr.shape[0]}")
    return np.moveaxis(arr, 0, -1).copy()
