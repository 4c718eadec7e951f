"""16-bit binary portable graymap (P5, maxval 65535, big-endian samples)."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAXVAL = 65535


def scale_to_uint16(values, vmin=None, vmax=None):
    """Linear map of [vmin, vmax] onto [0, 65535]; NaN becomes 0."""
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    if vmin is None:
        vmin = float(v[finite].min()) if finite.any() else 0.0
    if vmax is None:
        vmax = float(v[finite].max()) if finite.any() else 1.0
    span = vmax - vmin
    out = np.zeros(v.shape, dtype=np.uint16)
    if span > 0:
        scaled = np.clip((np.where(finite, v, vmin) - vmin) / span, 0.0, 1.0)
        out = np.rint(scaled * MAXVAL).astype(np.uint16)
    out[~finite] = 0
    return out, (vmin, vmax)


def write_pgm(path, values, vmin=None, vmax=None, comment=None):
    """Write a map with row 0 at the bottom of the image (y increasing
    upward).  Returns the (vmin, vmax) actually used for scaling."""
    img, limits = scale_to_uint16(values, vmin, vmax)
    if img.ndim != 2:
        raise ValueError("graymap needs a 2-D array")
    ny, nx = img.shape
    header = b"P5\n"
    if comment:
        for line in str(comment).splitlines():
            header += b"# " + line.encode("ascii", "replace") + b"\n"
    header += f"{nx} {ny}\n{MAXVAL}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img[::-1].astype(">u2").tobytes())
    return limits


def read_pgm(path):
    """uint16 array in map orientation (row 0 = lowest y)."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    token = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")
    while len(tokens) < 4:
        m = token.match(raw, pos)
        if m is None:
            raise ParseError("truncated graymap header", path)
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ParseError("not a binary graymap (P5)", path)
    nx, ny, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace byte before the raster
    dtype = ">u2" if maxval > 255 else "u1"
    n = nx * ny * np.dtype(dtype).itemsize
    if len(raw) - pos != n:
        raise ParseError(f"raster holds {len(raw) - pos} bytes, expected {n}", path)
    img = np.frombuffer(raw, dtype=dtype, offset=pos).reshape(ny, nx)
    return img[::-1].astype(np.uint16)
