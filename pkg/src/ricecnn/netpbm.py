"""Binary netpbm readers/writers: P6 (PPM, color) and P5 (PGM, gray).

Only maxval 255 is supported; pixel data round-trips through float arrays in
[0, 1]. These are the only image formats the package touches: datasets are
trees of P6 files, activation dumps are written as P5 files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    """Malformed or unsupported netpbm file."""


def _read_header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace-separated tokens, skipping '#' comments.
    Returns the tokens and the offset one byte past the final separator."""
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise NetpbmError("truncated header")
        tokens.append(data[start:i])
        i += 1  # exactly one separator byte after the last header token
    return tokens, i


def _parse(path: Path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = _read_header_tokens(data, 4)
    if tokens[0] != magic:
        raise NetpbmError(f"{path}: expected {magic.decode()} magic, got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise NetpbmError(f"{path}: non-numeric header field") from exc
    if width <= 0 or height <= 0:
        raise NetpbmError(f"{path}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"{path}: unsupported maxval {maxval} (only 255)")
    expected = width * height * channels
    raster = data[offset : offset + expected]
    if len(raster) != expected:
        raise NetpbmError(f"{path}: raster truncated ({len(raster)} of {expected} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, channels)


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file into an (H, W, 3) float64 array in [0, 1]."""
    return _parse(Path(path), b"P6", 3) / 255.0


def read_ppm_header(path) -> tuple[int, int]:
    """(height, width) of a P6 file, validating the header only."""
    data = Path(path).read_bytes()[:512]
    tokens, _ = _read_header_tokens(data, 3)
    if tokens[0] != b"P6":
        raise NetpbmError(f"{path}: expected P6 magic, got {tokens[0]!r}")
    try:
        width, height = int(tokens[1]), int(tokens[2])
    except ValueError as exc:
        raise NetpbmError(f"{path}: non-numeric header field") from exc
    if width <= 0 or height <= 0:
        raise NetpbmError(f"{path}: invalid dimensions {width}x{height}")
    return height, width


def _quantize(image: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float array in [0, 1] as a binary P6 file."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise NetpbmError(f"P6 needs an (H, W, 3) array, got {image.shape}")
    h, w = image.shape[:2]
    payload = _quantize(image).tobytes()
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + payload)


def write_pgm(path, image: np.ndarray) -> None:
    """Write an (H, W) uint8 array as a binary P5 file."""
    if image.ndim != 2:
        raise NetpbmError(f"P5 needs an (H, W) array, got {image.shape}")
    if image.dtype != np.uint8:
        raise NetpbmError("P5 writer expects uint8 data")
    h, w = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + image.tobytes())
