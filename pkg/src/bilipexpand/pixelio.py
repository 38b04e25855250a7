"""Readers and writers for occupancy grids, plus the analytic shape grammar.

Grids are boolean arrays ``bits[iy, ix]`` with ``iy = 0`` the bottom row, so
``bits[iy, ix]`` covers ``[ix/N, (ix+1)/N] x [iy/N, (iy+1)/N]``.  Image files
store the top row first; readers and writers flip accordingly.

Shape descriptors::

    left-half | all | empty
    disk CX CY R
    rect X0 Y0 X1 Y1
    checkerboard K [P]      K x K board; each dark cell filled on the left
                            fraction P of its width (default 1)
    noise P SEED            i.i.d. pixels with probability P
    union(SHAPE, SHAPE, ...)
"""
import re
from pathlib import Path

import numpy as np

from .errors import ParseError

MAX_Q = 14


# ---------------------------------------------------------------------------
# shapes

def _split_top_level(body):
    parts, depth, cur = [], 0, []
    for ch in body:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ParseError("unbalanced parentheses in shape")
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth != 0:
        raise ParseError("unbalanced parentheses in shape")
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def _floats(tokens, count, name):
    if len(tokens) != count:
        raise ParseError(f"shape {name!r} expects {count} numbers, got {len(tokens)}")
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"bad number in shape {name!r}: {exc}") from None


def parse_shape(spec):
    """Parse a shape descriptor into a nested tuple ``(kind, args)``."""
    spec = spec.strip()
    m = re.fullmatch(r"union\s*\((.*)\)", spec, flags=re.S)
    if m:
        members = _split_top_level(m.group(1))
        if not members:
            raise ParseError("union() needs at least one member")
        return ("union", [parse_shape(s) for s in members])
    tokens = spec.replace(",", " ").split()
    if not tokens:
        raise ParseError("empty shape descriptor")
    kind, rest = tokens[0].lower(), tokens[1:]
    if kind in ("left-half", "all", "empty"):
        if rest:
            raise ParseError(f"shape {kind!r} takes no arguments")
        return (kind, [])
    if kind == "disk":
        cx, cy, r = _floats(rest, 3, kind)
        if r < 0:
            raise ParseError("disk radius must be non-negative")
        return (kind, [cx, cy, r])
    if kind == "rect":
        return (kind, _floats(rest, 4, kind))
    if kind == "checkerboard":
        if len(rest) not in (1, 2):
            raise ParseError("checkerboard expects K [P]")
        vals = _floats(rest, len(rest), kind)
        k = int(vals[0])
        p = vals[1] if len(vals) == 2 else 1.0
        if k < 1 or k != vals[0] or not 0.0 <= p <= 1.0:
            raise ParseError("checkerboard needs integer K >= 1 and 0 <= P <= 1")
        return (kind, [k, p])
    if kind == "noise":
        p, seed = _floats(rest, 2, kind)
        if not 0.0 <= p <= 1.0:
            raise ParseError("noise probability must lie in [0, 1]")
        return (kind, [p, int(seed)])
    raise ParseError(f"unknown shape {kind!r}")


def rasterize(shape, q):
    """Rasterise a shape (descriptor string or parsed tuple) by pixel-centre sampling."""
    if not 0 <= q <= MAX_Q:
        raise ParseError(f"resolution exponent q must be in [0, {MAX_Q}]")
    if isinstance(shape, str):
        shape = parse_shape(shape)
    n = 1 << q
    c = (np.arange(n) + 0.5) / n
    xs = c[None, :]
    ys = c[:, None]
    kind, args = shape
    if kind == "union":
        out = np.zeros((n, n), dtype=bool)
        for member in args:
            out |= rasterize(member, q)
        return out
    if kind == "all":
        return np.ones((n, n), dtype=bool)
    if kind == "empty":
        return np.zeros((n, n), dtype=bool)
    if kind == "left-half":
        return np.broadcast_to(xs < 0.5, (n, n)).copy()
    if kind == "disk":
        cx, cy, r = args
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    if kind == "rect":
        x0, y0, x1, y1 = args
        return (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
    if kind == "checkerboard":
        k, p = args
        cx = np.floor(xs * k)
        cy = np.floor(ys * k)
        dark = ((cx + cy) % 2) == 0
        band = xs < (cx + p) / k
        return np.broadcast_to(dark & band, (n, n)).copy()
    if kind == "noise":
        p, seed = args
        rng = np.random.Generator(np.random.Philox(seed))
        return rng.random((n, n)) < p
    raise ParseError(f"unknown shape {kind!r}")


# ---------------------------------------------------------------------------
# files

def _pgm_tokens(data):
    # strip comments, which run from '#' to end of line in the header
    tokens, i = [], 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i >= len(data):
            raise ParseError("truncated PGM header")
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1


def read_pgm(path):
    """Read a P2 or P5 PGM; a pixel is occupied when its value exceeds maxval/2."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _pgm_tokens(data)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ParseError("non-integer PGM header field") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise ParseError("invalid PGM dimensions or maxval")
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        raw = data[offset:offset + need]
        if len(raw) != need:
            raise ParseError("truncated PGM raster")
        vals = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    elif magic == b"P2":
        body = re.sub(rb"#[^\n]*", b"", data[offset - 1:])
        try:
            vals = np.array(body.split(), dtype=np.int64)
        except ValueError:
            raise ParseError("non-integer PGM sample") from None
        if vals.size != w * h:
            raise ParseError(f"expected {w * h} PGM samples, found {vals.size}")
        vals = vals.reshape(h, w)
    else:
        raise ParseError(f"unsupported PGM magic {magic!r}")
    return np.flipud(vals > maxval / 2)


def write_pgm(path, bits):
    """Write a binary P5 PGM (occupied = 255) with the top row first."""
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    raster = np.where(np.flipud(bits), 255, 0).astype(np.uint8)
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + raster.tobytes())


def read_ascii_grid(path_or_text):
    """Read rows of 0/1 characters (top row first); whitespace between digits is ignored."""
    p = Path(path_or_text) if "\n" not in str(path_or_text) else None
    text = p.read_text() if p is not None else str(path_or_text)
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].replace(" ", "").replace("\t", "")
        if not line:
            continue
        if set(line) - {"0", "1"}:
            raise ParseError(f"ASCII grid rows may only contain 0 and 1: {line!r}")
        rows.append([ch == "1" for ch in line])
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ParseError("ASCII grid must be a non-empty rectangle")
    return np.flipud(np.array(rows, dtype=bool))
