"""Dyadic boxes of the unit square and the density tree of a pixel set.

Level 1 is the unit square.  A box at an odd level is a square and splits
along its vertical midline into a left and a right child; a box at an even
level is twice as tall as wide and splits along its horizontal midline into
a bottom and a top child.  The *first* child is the left (odd levels) or the
bottom (even levels) one, which is the half that the level map stretches by
``1 + delta``.

Level ``n`` boxes form a grid of ``rows(n) x cols(n)`` cells with
``rows(n) = 2**((n-1)//2)`` and ``cols(n) = 2**(n//2)``; boxes are addressed
by ``(iy, ix)`` with ``iy = 0`` at the bottom.  For a pixel set at resolution
``2**q`` the finest level is ``2q + 1``, where boxes are single pixels and all
densities are exact pixel-count ratios.
"""
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError, ParseError
from .pixelio import MAX_Q, rasterize, read_ascii_grid, read_pgm
from .profile import default_profile
from .stretch import RIGHT, UP, RectFrame, seam_polyline

DELTA_LIMIT = 1.0 - 1e-6
TWIST_RADIUS = 0.1      # blown-up twist radius r1 in unit-box coordinates
SEAM_SAMPLES = 32


def level_shape(n):
    """Grid shape ``(rows, cols)`` of the level-``n`` boxes."""
    if n < 1:
        raise DomainError("levels start at 1")
    return 1 << ((n - 1) // 2), 1 << (n // 2)


def level_extent(n):
    """Width and height of a level-``n`` box."""
    rows, cols = level_shape(n)
    return 1.0 / cols, 1.0 / rows


# ---------------------------------------------------------------------------
# pixel sets

@dataclass(frozen=True, eq=False)
class PixelSet:
    """Occupancy grid ``bits[iy, ix]`` of size ``2**q x 2**q`` (row 0 at the bottom)."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        n = bits.shape[0]
        if bits.ndim != 2 or bits.shape[1] != n or n & (n - 1):
            raise ParseError(f"grid must be square with power-of-two side, got {bits.shape}")
        if n.bit_length() - 1 > MAX_Q:
            raise ParseError(f"resolution exponent exceeds {MAX_Q}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def q(self):
        return self.bits.shape[0].bit_length() - 1

    @property
    def side(self):
        return self.bits.shape[0]

    @property
    def count(self):
        return int(np.count_nonzero(self.bits))

    @property
    def measure(self):
        return self.count / float(self.bits.size)

    def contains(self, pts):
        """Membership of points in the pixel union (half-open cells, clipped to the square)."""
        pts = np.asarray(pts, dtype=float)
        n = self.side
        ix = np.clip(np.floor(pts[..., 0] * n).astype(np.int64), 0, n - 1)
        iy = np.clip(np.floor(pts[..., 1] * n).astype(np.int64), 0, n - 1)
        return self.bits[iy, ix]

    def pixel_centres(self):
        n = self.side
        c = (np.arange(n) + 0.5) / n
        xs, ys = np.meshgrid(c, c)
        return np.stack([xs, ys], -1)


def ingest(source, q=None):
    """Build a :class:`PixelSet` from an array, a file path or a shape descriptor.

    Parameters
    ----------
    source : ndarray, PixelSet, str or Path
        Boolean grid (row 0 at the bottom), ``.pgm`` / ASCII 0-1 file, or a
        shape descriptor such as ``"disk 0.5 0.5 0.25"``.
    q : int, optional
        Resolution exponent for shape descriptors (default 8).
    """
    if isinstance(source, PixelSet):
        return source
    if isinstance(source, np.ndarray):
        return PixelSet(source.astype(bool))
    if isinstance(source, Path) or (isinstance(source, str) and Path(source).is_file()):
        path = Path(source)
        head = path.read_bytes()[:2]
        bits = read_pgm(path) if head in (b"P2", b"P5") else read_ascii_grid(path)
        return PixelSet(bits)
    if isinstance(source, str):
        return PixelSet(rasterize(source, 8 if q is None else q))
    raise ParseError(f"cannot ingest object of type {type(source).__name__}")


# ---------------------------------------------------------------------------
# boxes

@dataclass(frozen=True)
class DyadicBox:
    """Box ``(iy, ix)`` of the level-``level`` grid."""

    level: int
    iy: int
    ix: int

    def __post_init__(self):
        rows, cols = level_shape(self.level)
        if not (0 <= self.iy < rows and 0 <= self.ix < cols):
            raise DomainError(f"box ({self.iy}, {self.ix}) outside level {self.level}")

    @property
    def odd(self):
        return self.level % 2 == 1

    @property
    def rect(self):
        """``(x0, y0, width, height)``."""
        w, h = level_extent(self.level)
        return self.ix * w, self.iy * h, w, h

    @property
    def area(self):
        return 2.0 ** -(self.level - 1)

    @property
    def index(self):
        """Tree-path index j in ``1..2**(level-1)``: children of j are 2j-1 and 2j."""
        j = 1
        path = []
        box = self
        while box.level > 1:
            path.append(box.child_order)
            box = box.parent()
        for order in reversed(path):
            j = 2 * j - 1 + order
        return j

    @property
    def child_order(self):
        """0 for a first child, 1 for a second child."""
        if self.level == 1:
            return 0
        return self.ix % 2 if self.level % 2 == 0 else self.iy % 2

    def parent(self):
        if self.level == 1:
            raise DomainError("the unit square has no parent")
        if self.level % 2 == 0:
            return DyadicBox(self.level - 1, self.iy, self.ix // 2)
        return DyadicBox(self.level - 1, self.iy // 2, self.ix)

    def children(self):
        if self.odd:
            return (DyadicBox(self.level + 1, self.iy, 2 * self.ix),
                    DyadicBox(self.level + 1, self.iy, 2 * self.ix + 1))
        return (DyadicBox(self.level + 1, 2 * self.iy, self.ix),
                DyadicBox(self.level + 1, 2 * self.iy + 1, self.ix))

    def ancestor(self, level):
        box = self
        while box.level > level:
            box = box.parent()
        return box

    def frame(self):
        """Stretch frame: lengthwise on squares, heightwise on tall rectangles."""
        x0, y0, w, h = self.rect
        return RectFrame((x0, y0), w, h, RIGHT if self.odd else UP)


def box_of(x, n):
    """The level-``n`` box containing the point ``x`` (cells half-open, top/right edge included)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2,) or np.any(x < 0) or np.any(x > 1):
        raise DomainError("box_of expects a single point of [0,1]^2")
    iy, ix = box_indices(x[None, :], n)
    return DyadicBox(n, int(iy[0]), int(ix[0]))


def box_indices(pts, n):
    """Vectorised ``(iy, ix)`` of the level-``n`` boxes containing ``pts``."""
    pts = np.asarray(pts, dtype=float)
    rows, cols = level_shape(n)
    ix = np.clip(np.floor(pts[..., 0] * cols).astype(np.int64), 0, cols - 1)
    iy = np.clip(np.floor(pts[..., 1] * rows).astype(np.int64), 0, rows - 1)
    return iy, ix


def ancestor_indices(iy, ix, n, i):
    """Indices of the level-``i`` ancestors of level-``n`` boxes."""
    ry = level_shape(n)[0] // level_shape(i)[0]
    rx = level_shape(n)[1] // level_shape(i)[1]
    return iy // ry, ix // rx


# ---------------------------------------------------------------------------
# density tree

class DensityTree:
    """Pixel counts of a :class:`PixelSet` on every dyadic level.

    Counts are integers, so densities ``count / pixels_per_box`` are exact
    dyadic rationals and the parent-mean property holds bit-exactly.
    """

    def __init__(self, pixelset):
        self.pixels = ingest(pixelset)
        q = self.pixels.q
        self.max_level = 2 * q + 1
        counts = [None] * (self.max_level + 1)
        counts[self.max_level] = self.pixels.bits.astype(np.int64)
        for n in range(self.max_level - 1, 0, -1):
            c = counts[n + 1]
            counts[n] = c[:, 0::2] + c[:, 1::2] if n % 2 == 1 else c[0::2, :] + c[1::2, :]
        for c in counts[1:]:
            c.setflags(write=False)
        self._counts = counts

    @property
    def measure(self):
        return self.pixels.measure

    def _check(self, n):
        if not 1 <= n <= self.max_level:
            raise DomainError(f"level {n} outside 1..{self.max_level}")

    def pixels_per_box(self, n):
        self._check(n)
        return 1 << (self.max_level - n)

    def counts(self, n):
        self._check(n)
        return self._counts[n]

    def density(self, n):
        """Densities of all level-``n`` boxes (exact)."""
        return self.counts(n) / float(self.pixels_per_box(n))

    def first_child_density(self, n):
        if n == self.max_level:
            return self.density(n)
        c = self.counts(n + 1)
        first = c[:, 0::2] if n % 2 == 1 else c[0::2, :]
        return first / float(self.pixels_per_box(n + 1))

    def increment(self, n):
        """Delta = density of the first child minus density of the box (0 at the finest level)."""
        return self.first_child_density(n) - self.density(n)

    def stretch_factor(self, n):
        """delta = Delta / rho clamped to +-(1 - 1e-6); zero on empty boxes."""
        rho = self.density(n)
        inc = self.increment(n)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(rho > 0, inc / rho, 0.0)
        return np.clip(d, -DELTA_LIMIT, DELTA_LIMIT)

    # per-box accessors
    def box_density(self, box):
        return float(self.density(box.level)[box.iy, box.ix])

    def box_increment(self, box):
        return float(self.increment(box.level)[box.iy, box.ix])

    def box_stretch_factor(self, box):
        return float(self.stretch_factor(box.level)[box.iy, box.ix])

    def summary(self):
        """Per-level statistics used by dry runs and reports."""
        rows = []
        for n in range(1, self.max_level + 1):
            inc = self.increment(n)
            rows.append({
                "level": n,
                "boxes": int(inc.size),
                "mean_abs_increment": float(np.mean(np.abs(inc))),
                "max_abs_increment": float(np.max(np.abs(inc))),
                "nonzero_increments": int(np.count_nonzero(inc)),
            })
        return {"q": self.pixels.q, "measure": self.measure, "max_level": self.max_level,
                "levels": rows}


def density(tree, box):
    """Density of ``A`` in ``box``."""
    return tree.box_density(box)


def increment(tree, box):
    """First-child density minus box density."""
    return tree.box_increment(box)


def stretch_factor(tree, box):
    """Stretch factor ``delta = Delta / rho`` of ``box``."""
    return tree.box_stretch_factor(box)


# ---------------------------------------------------------------------------
# twist and seam geometry

def twist_hits(i, anc_iy, anc_ix, n, iy, ix, radius=TWIST_RADIUS):
    """Whether level-``n`` boxes meet the blown-up twists of their level-``i`` ancestors.

    In the ancestor's unit coordinates the blown-up twists are the half
    disks of radius ``radius`` around the twist points; conjugation turns
    them into half ellipses.
    """
    aw, ah = level_extent(i)
    w, h = level_extent(n)
    ax0 = anc_ix * aw
    ay0 = anc_iy * ah
    if i % 2 == 1:
        cx = np.stack([ax0 + 0.5 * aw, ax0 + 0.5 * aw])
        cy = np.stack([ay0, ay0 + ah])
    else:
        cx = np.stack([ax0, ax0 + aw])
        cy = np.stack([ay0 + 0.5 * ah, ay0 + 0.5 * ah])
    sx, sy = radius * aw, radius * ah
    x0 = ix * w
    y0 = iy * h
    nx = np.clip(cx, x0, x0 + w)
    ny = np.clip(cy, y0, y0 + h)
    d2 = ((nx - cx) / sx) ** 2 + ((ny - cy) / sy) ** 2
    return np.any(d2 < 1.0, axis=0)


@lru_cache(maxsize=4)
def _seam_tree(samples=4097):
    prof = default_profile()
    pts = np.concatenate([seam_polyline(samples, 1, prof), seam_polyline(samples, 2, prof)])
    spacing = float(np.max(np.hypot(*np.diff(pts[:samples], axis=0).T)))
    return cKDTree(pts), spacing


def box_boundary_samples(n, iy, ix, count=SEAM_SAMPLES):
    """``count`` points evenly spread along each box boundary, shape (k, count, 2)."""
    w, h = level_extent(n)
    t = np.arange(count) * (4.0 / count)
    side = np.floor(t).astype(int)
    f = t - side
    ux = np.select([side == 0, side == 1, side == 2], [f, 1.0, 1.0 - f], 0.0)
    uy = np.select([side == 0, side == 1, side == 2], [0.0, f, 1.0], 1.0 - f)
    x0 = (np.asarray(ix) * w)[..., None]
    y0 = (np.asarray(iy) * h)[..., None]
    return np.stack([x0 + w * ux, y0 + h * uy], -1)


def seam_hits(i, anc_iy, anc_ix, pts):
    """Whether closed sample loops ``pts`` (k, S, 2) pass near the seams of ancestors.

    Points are expressed in the ancestor's stretch coordinates (the unit
    square before conjugation); a loop hits when some sample is within one
    sample spacing of a seam.
    """
    aw, ah = level_extent(i)
    u = (pts[..., 0] - (anc_ix * aw)[:, None]) / aw
    v = (pts[..., 1] - (anc_iy * ah)[:, None]) / ah
    z = np.stack([u, v], -1) if i % 2 == 1 else np.stack([v, u], -1)
    spacing = np.max(np.hypot(*(z - np.roll(z, 1, axis=1)).transpose(2, 0, 1)), axis=1)
    tree, seam_gap = _seam_tree()
    reach = spacing + seam_gap
    # far samples end the search early and come back as inf
    dist, _ = tree.query(z.reshape(-1, 2), distance_upper_bound=float(reach.max()) * (1 + 1e-12))
    near = dist.reshape(z.shape[:2]) <= reach[:, None]
    return np.any(near, axis=1)


@dataclass(frozen=True)
class TwistSeamWeights:
    """Reweighting data for the ancestors ``1..n-1`` of one box.

    Arrays are indexed by ancestor level minus one.
    """

    levels: np.ndarray
    increments: np.ndarray
    twist_depth: np.ndarray          # J, untruncated along the chain through the box centre
    twist_depth_truncated: np.ndarray  # J ^ (n - i)
    seam_depth: np.ndarray           # alpha_{i,n} as a running maximum over depths <= n
    beta: np.ndarray
    reweighted: np.ndarray           # |Delta| 2^(beta/10)
    reweighted_truncated: np.ndarray  # |Delta| 2^((beta ^ (n-i))/10)


def twist_seam_weights(tree, box, partial_map=None, seam_samples=SEAM_SAMPLES):
    """Twist depth J, seam depth alpha, beta = max(J, alpha) and reweighted increments.

    Parameters
    ----------
    tree : DensityTree
    box : DyadicBox
        Box at level ``n``; its ancestors ``i < n`` are weighted.
    partial_map : callable, optional
        ``partial_map(points, i, n)`` applies the level maps ``n-1`` down to
        ``i+1``; it positions the box relative to ancestor ``i``'s seams.
        ``None`` means the identity.
    """
    n = box.level
    levels = np.arange(1, n)
    inc = np.array([tree.box_increment(box.ancestor(i)) for i in levels])
    centre = np.array([box.rect[0] + 0.5 * box.rect[2], box.rect[1] + 0.5 * box.rect[3]])
    J = np.zeros(n - 1, dtype=np.int64)
    Jt = np.zeros(n - 1, dtype=np.int64)
    alpha = np.zeros(n - 1, dtype=np.int64)
    for k, i in enumerate(levels):
        anc = box.ancestor(i)
        a_iy, a_ix = np.array([anc.iy]), np.array([anc.ix])
        for m in range(i + 1, tree.max_level + 1):
            iy, ix = box_indices(centre[None, :], m) if m > n else ancestor_indices(
                np.array([box.iy]), np.array([box.ix]), n, m)
            if twist_hits(i, a_iy, a_ix, m, iy, ix)[0]:
                J[k] = m - i
                if m <= n:
                    Jt[k] = m - i
        if inc[k] == 0:
            continue
        for m in range(i + 1, n + 1):
            sub = box.ancestor(m)
            pts = box_boundary_samples(m, sub.iy, sub.ix, seam_samples)
            if partial_map is not None and m - 1 > i:
                pts = partial_map(pts, i, m)
            if seam_hits(i, a_iy, a_ix, pts)[0]:
                alpha[k] = m - i
    beta = np.maximum(J, alpha)
    beta_t = np.maximum(Jt, alpha)
    mag = np.abs(inc)
    return TwistSeamWeights(
        levels=levels, increments=inc, twist_depth=J, twist_depth_truncated=Jt,
        seam_depth=alpha, beta=beta,
        reweighted=mag * 2.0 ** (beta / 10.0),
        reweighted_truncated=mag * 2.0 ** (np.minimum(beta_t, n - levels) / 10.0))
