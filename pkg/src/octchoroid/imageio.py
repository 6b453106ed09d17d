"""Readers and writers for the flat-file formats used by the pipeline.

Grayscale rasters are PNG (8/16-bit) or PGM (P2/P5).  Probability maps use
the ``.pmap`` container: one JSON header line ``{"height": H, "width": W}``
followed by ``H*W`` little-endian float32 values in row-major order.
"""

from __future__ import annotations

import json
import os
import re

import numpy as np
from PIL import Image


class ImageFormatError(ValueError):
    pass


def _read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    # header tokens may be interleaved with comments
    tokens = []
    pos = 0
    token_re = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)")
    while len(tokens) < 4:
        m = token_re.match(data, pos)
        if m is None:
            raise ImageFormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"{path}: not a grayscale PGM (magic {magic!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header") from exc
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: bad PGM maxval {maxval}")
    if magic == b"P5":
        pos += 1  # single whitespace byte before raster
        dtype = ">u1" if maxval < 256 else ">u2"
        count = width * height
        raster = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    else:
        raster = np.array(data[pos:].split(), dtype=np.int64)
        if raster.size != width * height:
            raise ImageFormatError(f"{path}: expected {width * height} samples, got {raster.size}")
    return raster.reshape(height, width).astype(np.float64), maxval


def read_grayscale(path):
    """Read a grayscale PNG or PGM and return ``(pixels, maxval)``.

    ``pixels`` are raw sample values as float64; ``maxval`` is the bit-depth
    maximum (255 or 65535 for PNG, the header maxval for PGM).
    """
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".pgm", ".pnm"):
        try:
            return _read_pgm(path)
        except (OSError, ValueError) as exc:
            if isinstance(exc, ImageFormatError):
                raise
            raise ImageFormatError(f"{path}: unreadable PGM ({exc})") from exc
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except OSError as exc:
        raise ImageFormatError(f"{path}: unreadable image ({exc})") from exc
    if mode == "L":
        return arr.astype(np.float64), 255
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        # Pillow opens 16-bit grayscale PNG as "I" or "I;16"
        return arr.astype(np.float64), 65535
    raise ImageFormatError(f"{path}: non-grayscale image mode {mode!r}")


def write_png(path, values, bits=8):
    """Write a [0,1] grid as an 8- or 16-bit grayscale PNG."""
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    if bits == 8:
        im = Image.fromarray(np.rint(values * 255).astype(np.uint8))
    elif bits == 16:
        raw = np.rint(values * 65535).astype(np.uint16)
        im = Image.fromarray(raw)
    else:
        raise ValueError("bits must be 8 or 16")
    im.save(path, format="PNG", optimize=False)


def write_pgm(path, raw, maxval=255, plain=False):
    """Write integer samples as PGM (P5 binary, or P2 when ``plain``)."""
    raw = np.asarray(raw)
    h, w = raw.shape
    header = f"{'P2' if plain else 'P5'}\n{w} {h}\n{maxval}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        if plain:
            fh.write("\n".join(" ".join(str(int(v)) for v in row) for row in raw).encode())
            fh.write(b"\n")
        else:
            fh.write(raw.astype(">u1" if maxval < 256 else ">u2").tobytes())


def write_pmap(path, values):
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ValueError("probability map must be 2-D")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(json.dumps({"height": h, "width": w}).encode() + b"\n")
        fh.write(np.ascontiguousarray(values).tobytes())


def read_pmap(path):
    """Read a ``.pmap`` file, or a 16-bit PNG interpreted as value/65535."""
    if str(path).lower().endswith(".png"):
        raw, maxval = read_grayscale(path)
        return raw / maxval
    with open(path, "rb") as fh:
        header = fh.readline()
        body = fh.read()
    try:
        meta = json.loads(header)
        h, w = int(meta["height"]), int(meta["width"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ImageFormatError(f"{path}: bad pmap header") from exc
    if len(body) != 4 * h * w:
        raise ImageFormatError(f"{path}: expected {h * w} float32 values, got {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
