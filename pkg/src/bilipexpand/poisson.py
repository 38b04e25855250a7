"""Poisson point samples on ``[0, n]^2`` and their rough-isometric embedding.

Pipeline for a pair of samples ``X`` (sparse) and ``Y`` (dense):

1. ``A`` is the union of unit squares containing points of ``X``, rescaled
   to the unit square and rasterised at resolution ``2^q``.
2. A bi-Lipschitz, boundary-fixing map ``phi`` pushes ``A`` to measure at
   least ``1 - delta'`` (:func:`~bilipexpand.multiscale.expand_to_target`).
3. ``B`` is the union of ``kappa``-cells meeting ``phi(A)``.  The event ``E``
   asks that every cell of ``B`` holds a point of ``Y`` and no point of ``Y``
   lies outside ``B``.
4. On ``E`` each ``x`` goes to the nearest ``Y`` point in the ``kappa``-cell
   of ``n phi(x / n)``.  Boundary lattice points are pinned to themselves.

``E`` is rare at desk scale, so :func:`sample_given_event` draws ``Y``
exactly from the Poisson law conditioned on ``E``.
"""
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .dyadic import PixelSet
from .errors import ConfigError, PreconditionError
from .verify import identity_map, rng_for

SQRT2 = math.sqrt(2.0)


@dataclass
class PointSample:
    n: int
    points: np.ndarray
    occupancy: np.ndarray     # occupancy[j, i] for the square [i, i+1] x [j, j+1]
    intensity: float = float("nan")
    seed: int = None

    @property
    def k(self):
        return int(np.count_nonzero(self.occupancy))

    @classmethod
    def from_points(cls, n, points, **kw):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        occ = np.zeros((n, n), dtype=bool)
        if len(points):
            ij = np.clip(np.floor(points).astype(int), 0, n - 1)
            occ[ij[:, 1], ij[:, 0]] = True
        return cls(n, points, occ, **kw)


def sample_poisson(n, intensity, seed=0):
    """Homogeneous Poisson process of the given intensity on ``[0, n]^2``."""
    if n < 2 or int(n) != n:
        raise ConfigError("side length n must be an integer >= 2")
    if intensity < 0:
        raise ConfigError("intensity must be non-negative")
    rng = rng_for(seed)
    count = rng.poisson(intensity * n * n)
    return PointSample.from_points(int(n), rng.random((count, 2)) * n, intensity=intensity, seed=seed)


# ---------------------------------------------------------------------------
# parameters

def _cell_log(kappa):
    return math.log1p(-math.exp(-kappa * kappa)) / (kappa * kappa)


def solve_kappa(eps):
    """Smallest ``kappa`` with ``(1 - exp(-kappa^2))^(1/kappa^2) = exp(-eps)``.

    The left side increases in ``kappa``, so every larger ``kappa`` satisfies
    the strict inequality.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    return brentq(lambda k: _cell_log(k) + eps, 1e-3, 50.0, xtol=1e-14, rtol=1e-15)


def delta_prime_interval(kappa, eps):
    """Feasible ``delta'`` in ``[0, 1]`` for ``(1-e^{-k^2})^{(1-d)/k^2} e^{-d} >= e^{-eps}``.

    The log of the left side is linear in ``d``, so the feasible set is an
    interval; returns ``(lo, hi)`` or raises if it is empty.
    """
    a = _cell_log(kappa)
    # f(d) = (1 - d) a - d + eps = (a + eps) - d (a + 1)
    f0, slope = a + eps, -(a + 1.0)
    if slope == 0:
        if f0 < 0:
            raise ConfigError("no admissible delta' for this kappa and eps")
        return 0.0, 1.0
    root = -f0 / slope
    lo, hi = (max(root, 0.0), 1.0) if slope > 0 else (0.0, min(root, 1.0))
    if lo > hi:
        raise ConfigError(f"no admissible delta' in [0, 1] for kappa={kappa}, eps={eps}")
    return lo, hi


def solve_delta_prime(kappa, eps, prefer=0.2):
    """Admissible ``delta'`` closest to ``prefer``.

    When ``prefer`` is infeasible the answer is the interval endpoint, where
    the inequality holds with equality.
    """
    if not kappa > 0:
        raise ConfigError("kappa must be positive")
    if _cell_log(kappa) <= -eps:
        raise ConfigError(f"kappa={kappa} violates (1-e^-k^2)^(1/k^2) > e^-eps for eps={eps}")
    lo, hi = delta_prime_interval(kappa, eps)
    return float(min(max(prefer, lo), hi))


def event_log_bound(kappa, delta_prime, n):
    """log of ``(1-e^{-k^2})^{(1-d) n^2/k^2} e^{-d n^2}``."""
    return n * n * ((1 - delta_prime) * _cell_log(kappa) - delta_prime)


# ---------------------------------------------------------------------------
# sets and cells

def occupied_pixelset(sample, q=8):
    """``A / n`` rasterised by pixel centres at resolution ``2^q``."""
    side = 1 << q
    c = (np.arange(side) + 0.5) / side * sample.n
    idx = np.floor(c).astype(int)
    return PixelSet(sample.occupancy[np.ix_(idx, idx)])


def _cells_per_side(n, kappa):
    m = n / kappa
    if abs(m - round(m)) > 1e-9:
        raise ConfigError(f"n / kappa = {m} must be an integer")
    return int(round(m))


def cell_index(pts, n, kappa):
    m = _cells_per_side(n, kappa)
    ij = np.clip(np.floor(np.asarray(pts) / kappa).astype(int), 0, m - 1)
    return ij[..., 1], ij[..., 0]


def kappa_cells(image_pixels, n, kappa, extra_points=None):
    """Cells of side ``kappa`` meeting ``phi(A)``, given its raster (and known image points)."""
    m = _cells_per_side(n, kappa)
    bits = image_pixels.bits
    side = bits.shape[0]
    c = (np.arange(side) + 0.5) / side * n
    ci = np.clip(np.floor(c / kappa).astype(int), 0, m - 1)
    iy, ix = np.nonzero(bits)
    cells = np.zeros((m, m), dtype=bool)
    cells[ci[iy], ci[ix]] = True
    if extra_points is not None and len(extra_points):
        r, s = cell_index(extra_points, n, kappa)
        cells[r, s] = True
    return cells


def event_holds(sample_y, cells, kappa):
    """Every cell of ``B`` holds a point of ``Y`` and no point of ``Y`` lies outside ``B``."""
    m = cells.shape[0]
    counts = np.zeros((m, m), dtype=np.int64)
    if len(sample_y.points):
        r, s = cell_index(sample_y.points, sample_y.n, kappa)
        np.add.at(counts, (r, s), 1)
    return bool(np.all(counts[cells] > 0) and not np.any(counts[~cells]))


def sample_given_event(n, intensity, cells, kappa, seed=0):
    """Poisson sample of ``Y`` conditioned on the event for the cell set ``cells``.

    Cells outside ``B`` are empty; each cell of ``B`` receives a
    zero-truncated Poisson count, drawn by inverting its distribution
    function, with points uniform in the cell.
    """
    if intensity <= 0:
        raise ConfigError("conditioning on the event needs positive intensity")
    rng = rng_for(seed)
    mu = intensity * kappa * kappa
    r, s = np.nonzero(cells)
    u = rng.random(r.size)
    # P(N <= j | N >= 1) = (F(j) - e^-mu) / (1 - e^-mu)
    p0 = math.exp(-mu)
    target = p0 + u * (1.0 - p0)
    counts = np.ones(r.size, dtype=np.int64)
    term = mu * p0
    cdf = p0 + term
    j = 1
    left = cdf < target
    while np.any(left):
        j += 1
        term *= mu / j
        cdf += term
        counts[left] = j
        left &= cdf < target
        if term < 1e-300:
            break
    total = int(counts.sum())
    off = rng.random((total, 2)) * kappa
    base = np.repeat(np.stack([s, r], -1) * kappa, counts, axis=0)
    return PointSample.from_points(n, base + off, intensity=intensity, seed=seed)


def boundary_lattice(n, kappa):
    """Lattice points of spacing ``kappa`` on the boundary of ``[0, n]^2``."""
    m = _cells_per_side(n, kappa)
    t = np.arange(m) * kappa
    return np.concatenate([np.stack([t, np.zeros(m)], -1), np.stack([np.full(m, n), t], -1),
                           np.stack([n - t, np.full(m, n)], -1), np.stack([np.zeros(m), n - t], -1)])


# ---------------------------------------------------------------------------
# embedding

@dataclass
class RoughIsometryReport:
    n: int
    kappa: float
    delta_prime: float
    eps: float
    k_x: int
    k_y: int
    event: bool
    measure_a: float
    measure_image: float = float("nan")
    steps: int = 0
    c0_hat: float = 1.0
    M: float = float("nan")
    D: float = float("nan")
    C: float = float("nan")
    D_bound: float = float("nan")
    C_bound: float = float("nan")
    n_pairs: int = 0
    pairs_ok: bool = False
    surjective_ok: bool = False
    witness_pair: list = field(default_factory=list)
    witness_point: list = field(default_factory=list)
    log_event_bound: float = float("nan")
    note: str = ("the probability bound is a large-deviation estimate; this run checks "
                 "that the construction is a rough isometry whenever the event holds")

    @property
    def valid(self):
        return self.event and self.pairs_ok and self.surjective_ok

    def to_dict(self):
        d = asdict(self)
        d["valid"] = self.valid
        return d


def build_stretch(sample_x, delta, delta_prime, eta=16.0, q=8, seed=0, lipschitz_pairs=5000):
    """The map ``phi`` (as a unit-square map), its constant and the raster of ``phi(A)``."""
    from .multiscale import expand_to_target

    if sample_x.k < delta * sample_x.n ** 2:
        raise PreconditionError(
            f"k_X(n) = {sample_x.k} < delta n^2 = {delta * sample_x.n ** 2:g}")
    px = occupied_pixelset(sample_x, q)
    if px.measure >= 1.0 - delta_prime or px.measure == 0:
        return identity_map(), 1.0, px, 0
    gamma = min(delta, px.measure)
    res = expand_to_target(px, gamma, delta_prime, eta, seed=seed, lipschitz_pairs=lipschitz_pairs)
    return res.map, res.c0_hat, res.pixels, res.steps


def embed(sample_x, sample_y, delta, eps=7.0, seed=0, kappa=0.5, delta_prime=None, eta=16.0,
          q=8, n_pairs=10_000, stretch=None, require_event=True):
    """Check the rough-isometric embedding of ``X_n`` into ``Y_n`` built from the stretch map.

    Parameters
    ----------
    sample_x, sample_y : PointSample
        Samples on the same square ``[0, n]^2``.
    delta : float
        Density parameter; requires ``k_X(n) >= delta n^2``.
    eps : float
        Exponent of the target probability ``exp(-eps n^2)``.
    kappa : float or None
        Cell side; ``None`` takes :func:`solve_kappa` rounded up to divide ``n``.
    stretch : tuple, optional
        Precomputed ``(map, c0_hat, image_pixels, steps)``; the identity map
        reproduces the self-embedding check.
    require_event : bool
        When false, ``T`` is built even if the event fails; points whose
        cell holds no ``Y`` point go to the nearest ``Y`` point overall.

    Returns
    -------
    RoughIsometryReport
        ``M`` is the bi-Lipschitz constant of ``phi``; ``D`` and ``C`` are the
        smallest constants making every sampled pair and every ``Y`` point
        satisfy the rough-isometry inequalities, with the a-priori bounds
        ``2 kappa sqrt2`` and ``M sqrt2 + 2 kappa sqrt2`` alongside.
    """
    n = sample_x.n
    if sample_y.n != n:
        raise ConfigError("samples live on different squares")
    if kappa is None:
        kappa = n / math.floor(n / solve_kappa(eps))
    if delta_prime is None:
        delta_prime = solve_delta_prime(kappa, eps)
    if stretch is None:
        stretch = build_stretch(sample_x, delta, delta_prime, eta=eta, q=q, seed=seed)
    elif sample_x.k < delta * n * n:
        raise PreconditionError(f"k_X(n) = {sample_x.k} < delta n^2 = {delta * n * n:g}")
    phi, c0, image, steps = stretch
    img_x = phi.evaluate(sample_x.points / n) * n if len(sample_x.points) else np.zeros((0, 2))
    cells = kappa_cells(image, n, kappa, img_x)
    rep = RoughIsometryReport(
        n=n, kappa=kappa, delta_prime=delta_prime, eps=eps, k_x=sample_x.k, k_y=sample_y.k,
        event=event_holds(sample_y, cells, kappa), measure_a=occupied_pixelset(sample_x, q).measure,
        measure_image=image.measure, steps=steps, c0_hat=c0, M=c0,
        D_bound=2 * kappa * SQRT2, C_bound=c0 * SQRT2 + 2 * kappa * SQRT2,
        log_event_bound=event_log_bound(kappa, delta_prime, n))
    if (not rep.event and require_event) or not len(sample_y.points):
        return rep
    # T on X: nearest Y point inside the cell of the image point
    ycell = cell_index(sample_y.points, n, kappa)
    xcell = cell_index(img_x, n, kappa)
    tx = np.empty_like(img_x)
    m = _cells_per_side(n, kappa)
    ykeys = ycell[0] * m + ycell[1]
    order = np.argsort(ykeys, kind="stable")
    ykeys = ykeys[order]
    for a in range(len(img_x)):
        key = xcell[0][a] * m + xcell[1][a]
        lo, hi = np.searchsorted(ykeys, key), np.searchsorted(ykeys, key, side="right")
        cand = sample_y.points[order[lo:hi]] if hi > lo else sample_y.points
        tx[a] = cand[np.argmin(np.hypot(*(cand - img_x[a]).T))]
    pins = boundary_lattice(n, kappa)
    src = np.concatenate([sample_x.points, pins])
    dst = np.concatenate([tx, pins])
    # sampled pairs
    total = len(src) * (len(src) - 1) // 2
    if total <= n_pairs:
        i, j = np.triu_indices(len(src), 1)
    else:
        rng = rng_for(seed)
        i = rng.integers(0, len(src), n_pairs)
        j = (i + 1 + rng.integers(0, len(src) - 1, n_pairs)) % len(src)
    dx = np.hypot(*(src[i] - src[j]).T)
    dy = np.hypot(*(dst[i] - dst[j]).T)
    slack = np.maximum(dx / c0 - dy, dy - c0 * dx)
    w = int(np.argmax(slack)) if slack.size else 0
    rep.D = float(max(slack.max(), 0.0)) if slack.size else 0.0
    rep.n_pairs = int(slack.size)
    rep.witness_pair = [src[i[w]].tolist(), src[j[w]].tolist()] if slack.size else []
    rep.pairs_ok = bool(rep.D <= rep.D_bound + 1e-12)
    # every Y point (and pinned boundary point) near the image of T
    targets = np.concatenate([sample_y.points, pins])
    dist, _ = cKDTree(dst).query(targets)
    wp = int(np.argmax(dist))
    rep.C = float(dist[wp])
    rep.witness_point = targets[wp].tolist()
    rep.surjective_ok = bool(rep.C <= rep.C_bound + 1e-12)
    return rep


def sweep(n, seeds, delta=0.3, eps=7.0, kappa=0.5, intensity_x=1.0, intensity_y=10.0, eta=16.0,
          q=8, n_pairs=10_000, conditional=True):
    """Run the embedding over seeds; one row per seed.

    Each row records whether the unconditioned ``Y`` sample satisfies the
    event.  With ``conditional`` a second ``Y`` drawn given the event
    exercises the map ``T`` on every seed.
    """
    rows = []
    for seed in seeds:
        sx = sample_poisson(n, intensity_x, seed=2 * seed)
        sy = sample_poisson(n, intensity_y, seed=2 * seed + 1)
        row = {"seed": seed, "k_x": sx.k, "k_y": sy.k}
        dp = solve_delta_prime(kappa, eps)
        try:
            st = build_stretch(sx, delta, dp, eta=eta, q=q, seed=seed)
        except PreconditionError:
            row.update(precondition=False)
            rows.append(row)
            continue
        rep = embed(sx, sy, delta, eps, seed, kappa, dp, stretch=st, n_pairs=n_pairs)
        row.update(precondition=True, event=rep.event, report=rep)
        if conditional:
            cells = kappa_cells(st[2], n, kappa, st[0].evaluate(sx.points / n) * n)
            sy_e = sample_given_event(n, intensity_y, cells, kappa, seed=10**6 + seed)
            row["conditional"] = embed(sx, sy_e, delta, eps, seed, kappa, dp, stretch=st,
                                       n_pairs=n_pairs)
        rows.append(row)
    return rows
