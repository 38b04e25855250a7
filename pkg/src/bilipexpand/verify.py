"""Numerical verification oracles for maps of the unit square.

Every estimator takes a ``seed`` and draws all random numbers up front from
a counter-based generator, so results do not depend on the thread count.
A *map* is anything with ``evaluate`` and ``inverse`` methods (a
:class:`~bilipexpand.multiscale.MapStack`, a composed map, or a small
wrapper around plain functions, see :class:`FunctionMap`).
"""
from dataclasses import dataclass, field, asdict

import numpy as np

from .dyadic import ingest
from .polarmap import _kinv
from .profile import HALF, default_profile

SCALES = (1.0, 1e-1, 1e-2, 1e-3, 1e-4)


def rng_for(seed):
    return np.random.Generator(np.random.Philox(seed))


class FunctionMap:
    """Adapter turning forward/inverse callables into a map object."""

    def __init__(self, forward, inverse=None, jacobian=None):
        self._f = forward
        self._g = inverse
        self._j = jacobian

    def evaluate(self, pts):
        return np.asarray(self._f(np.asarray(pts, dtype=float)), dtype=float)

    def inverse(self, pts):
        if self._g is None:
            raise NotImplementedError("map has no inverse")
        return np.asarray(self._g(np.asarray(pts, dtype=float)), dtype=float)

    def jacobian(self, pts):
        if self._j is None:
            return finite_difference_jacobian(self.evaluate, pts)
        return self._j(np.asarray(pts, dtype=float))

    __call__ = evaluate


def identity_map():
    return FunctionMap(lambda p: p.copy(), lambda p: p.copy(),
                       lambda p: np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2)).copy())


def _stacks_of(fmap):
    if hasattr(fmap, "stacks"):
        return list(fmap.stacks)
    if hasattr(fmap, "levels"):
        return [fmap]
    return []


# ---------------------------------------------------------------------------
# sampling near singular loci

def _unit_locus_points(n, rng, profile):
    """Points of the unit square close to the crack, the seams or the twists."""
    kind = rng.integers(0, 3, n)
    width = 2.0 ** -rng.uniform(2, 14, n)
    u = rng.random(n)
    off = width * rng.uniform(-1, 1, n)
    # crack
    z1 = HALF + off
    z2 = u.copy()
    # seams: r = r0 curve, reflected for half of them
    sel = kind == 1
    th = rng.uniform(-1, 1, n)
    sx, sy = _kinv(np.full(n, profile.r0), th, profile)
    flip = rng.random(n) < 0.5
    sy = np.where(flip, 1.0 - sy, sy)
    ang = rng.uniform(0, 2 * np.pi, n)
    z1 = np.where(sel, sx + off * np.cos(ang), z1)
    z2 = np.where(sel, sy + off * np.sin(ang), z2)
    # twists
    sel = kind == 2
    tx = HALF + width * np.cos(ang)
    ty = np.where(flip, 1.0 - width * np.abs(np.sin(ang)), width * np.abs(np.sin(ang)))
    z1 = np.where(sel, tx, z1)
    z2 = np.where(sel, ty, z2)
    return np.clip(np.stack([z1, z2], -1), 0.0, 1.0)


def singular_samples(fmap, n, rng, profile=None):
    """Source points whose orbit passes close to a singular curve of some stretched box.

    For a stack, a point near the loci of a level-``L`` box is pulled back
    through the finer levels so that it is near those loci when level ``L``
    acts.  Maps without box structure use the loci of the unit square.
    """
    profile = profile or default_profile()
    stacks = _stacks_of(fmap)
    boxes = [(k, lev, iy, ix) for k, s in enumerate(stacks) for lev, iy, ix, _ in s.boxes()]
    z = _unit_locus_points(n, rng, profile)
    if not boxes:
        return z
    pick = rng.integers(0, len(boxes), n)
    sk, lev, biy, bix = (np.array(c)[pick] for c in zip(*boxes))
    w = 2.0 ** -(lev // 2)
    h = 2.0 ** -((lev - 1) // 2)
    odd = lev % 2 == 1
    u = np.where(odd, z[:, 0], z[:, 1])
    v = np.where(odd, z[:, 1], z[:, 0])
    out = np.clip(np.stack([bix * w + w * u, biy * h + h * v], -1), 0.0, 1.0)
    # pull back through the finer levels of the own stack, then through earlier stacks
    for k in range(len(stacks) - 1, -1, -1):
        later = sk > k
        if np.any(later):
            out[later] = stacks[k].inverse(out[later])
        for lv in np.unique(lev[sk == k]):
            sel = (sk == k) & (lev == lv)
            out[sel] = stacks[k].partial_inverse(out[sel], int(lv))
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Lipschitz constants

@dataclass
class LipschitzReport:
    forward: float
    inverse: float
    argmax_forward: list
    argmax_inverse: list
    n_pairs: int
    scales: list
    per_scale_forward: list
    per_scale_inverse: list
    jacobian_sup: float = float("nan")

    @property
    def constant(self):
        return max(self.forward, self.inverse)

    def to_dict(self):
        d = asdict(self)
        d["constant"] = self.constant
        return d


def estimate_lipschitz(fmap, n_pairs=20_000, scales=SCALES, seed=0, stratified=0.5,
                       jacobian_points=0):
    """Empirical forward and inverse Lipschitz ratios over sampled point pairs.

    Pairs ``(x, x + s u)`` use separations ``s`` from ``scales`` and random
    directions ``u``; a fraction ``stratified`` of base points is drawn near
    singular curves (see :func:`singular_samples`).  Optionally also reports
    the sup of ``max(|J|_2, |J^-1|_2)`` at ``jacobian_points`` points.
    """
    rng = rng_for(seed)
    scales = list(scales)
    n_strat = int(round(n_pairs * stratified))
    base = np.concatenate([rng.random((n_pairs - n_strat, 2)),
                           singular_samples(fmap, n_strat, rng)])
    s = np.array(scales)[rng.integers(0, len(scales), n_pairs)]
    ang = rng.uniform(0, 2 * np.pi, n_pairs)
    other = base + s[:, None] * np.stack([np.cos(ang), np.sin(ang)], -1)
    other = np.clip(other, 0.0, 1.0)
    sep = np.hypot(*(other - base).T)
    keep = sep > 0
    base, other, sep, s = base[keep], other[keep], sep[keep], s[keep]
    fa = fmap.evaluate(base)
    fb = fmap.evaluate(other)
    img = np.hypot(*(fa - fb).T)
    fwd = img / sep
    with np.errstate(divide="ignore"):
        inv = np.where(img > 0, sep / img, np.inf)
    i_f, i_i = int(np.argmax(fwd)), int(np.argmax(inv))
    per_f, per_i = [], []
    for sc in scales:
        sel = s == sc
        per_f.append(float(fwd[sel].max()) if np.any(sel) else float("nan"))
        per_i.append(float(inv[sel].max()) if np.any(sel) else float("nan"))
    rep = LipschitzReport(
        forward=float(fwd[i_f]), inverse=float(inv[i_i]),
        argmax_forward=[base[i_f].tolist(), other[i_f].tolist()],
        argmax_inverse=[base[i_i].tolist(), other[i_i].tolist()],
        n_pairs=int(keep.sum()), scales=scales, per_scale_forward=per_f, per_scale_inverse=per_i)
    if jacobian_points:
        pts = np.concatenate([rng.random((jacobian_points // 2, 2)),
                              singular_samples(fmap, jacobian_points - jacobian_points // 2, rng)])
        sv = np.linalg.svd(fmap.jacobian(pts), compute_uv=False)
        rep.jacobian_sup = float(np.max(np.maximum(sv[:, 0], 1.0 / sv[:, 1])))
    return rep


def stratified_unit_samples(n, seed=0, fraction=0.5):
    """Jittered grid over the square mixed with points near the unit-square loci."""
    rng = rng_for(seed)
    n_loc = int(round(n * fraction))
    side = int(np.ceil(np.sqrt(n - n_loc)))
    idx = np.stack(np.meshgrid(np.arange(side), np.arange(side)), -1).reshape(-1, 2)
    grid = (idx + rng.random(idx.shape)) / side
    grid = grid[rng.permutation(len(grid))[: n - n_loc]]
    return np.concatenate([grid, _unit_locus_points(n_loc, rng, default_profile())])


def jacobian_deviation_ratio(delta, n_samples=10_000, seed=0):
    """sup |J_Psi - I|_inf / delta over stratified samples of the unit square."""
    from .stretch import psi_jacobian

    pts = stratified_unit_samples(n_samples, seed)
    jac = psi_jacobian(pts, delta, singular="perturb")
    dev = np.max(np.sum(np.abs(jac - np.eye(2)), axis=-1), axis=-1)
    return float(dev.max() / abs(delta))


def finite_difference_jacobian(f, pts, step=1e-6):
    """Central-difference Jacobian of ``f`` at ``pts`` (shape (..., 2, 2))."""
    pts = np.asarray(pts, dtype=float)
    cols = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        cols.append((f(pts + e) - f(pts - e)) / (2 * step))
    return np.stack(cols, -1)


# ---------------------------------------------------------------------------
# measures

@dataclass
class MeasureReport:
    estimate: float
    stderr: float
    n_samples: int
    predicted: float = None
    pixel_estimate: float = None

    def within(self, value, sigmas=3.0):
        return abs(self.estimate - value) <= sigmas * max(self.stderr, 1e-300)

    def to_dict(self):
        return asdict(self)


def estimate_pushforward_measure(fmap, pixelset, n_samples=200_000, seed=0, pixel_estimate=False):
    """Monte Carlo estimate of ``lambda(map(A))`` by testing preimages of uniform points.

    When the map is a single stack the exact prediction from stretch factors
    is reported alongside.
    """
    px = ingest(pixelset)
    y = rng_for(seed).random((n_samples, 2))
    hit = px.contains(fmap.inverse(y))
    p = float(np.count_nonzero(hit)) / n_samples
    rep = MeasureReport(p, float(np.sqrt(p * (1 - p) / n_samples)), n_samples)
    stacks = _stacks_of(fmap)
    if len(stacks) == 1:
        rep.predicted = stacks[0].predicted_measure(px)
    elif not stacks and hasattr(fmap, "predicted_measure"):
        rep.predicted = fmap.predicted_measure(px)
    if pixel_estimate:
        centres = px.pixel_centres().reshape(-1, 2)
        rep.pixel_estimate = float(np.mean(px.contains(fmap.inverse(centres))))
    return rep


# ---------------------------------------------------------------------------
# boundary and bijectivity

@dataclass
class BijectionReport:
    passed: bool
    boundary_max: float
    roundtrip_max: float
    boundary_witness: list
    roundtrip_witness: list
    boundary_tol: float
    roundtrip_tol: float
    checks: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def boundary_samples(n, seed=0):
    """``n`` points on the boundary of the unit square including the four corners."""
    t = rng_for(seed).random(max(n - 4, 0)) * 4.0
    side = np.floor(t).astype(int)
    f = t - side
    x = np.select([side == 0, side == 1, side == 2], [f, 1.0, 1.0 - f], 0.0)
    y = np.select([side == 0, side == 1, side == 2], [0.0, f, 1.0], 1.0 - f)
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return np.concatenate([corners[:n], np.stack([x, y], -1)])


def check_boundary_and_bijection(fmap, n_boundary=1000, n_interior=10_000, seed=0,
                                 boundary_tol=1e-9, roundtrip_tol=1e-8):
    """Boundary displacement and forward/inverse round trips with located witnesses."""
    b = boundary_samples(n_boundary, seed)
    disp = np.max(np.abs(fmap.evaluate(b) - b), axis=-1)
    x = rng_for(seed + 1).random((n_interior, 2))
    err_f = np.max(np.abs(fmap.inverse(fmap.evaluate(x)) - x), axis=-1)
    err_b = np.max(np.abs(fmap.evaluate(fmap.inverse(x)) - x), axis=-1)
    err = np.maximum(err_f, err_b)
    ib, ir = int(np.argmax(disp)), int(np.argmax(err))
    checks = {"boundary": bool(disp[ib] <= boundary_tol), "roundtrip": bool(err[ir] <= roundtrip_tol)}
    return BijectionReport(
        passed=all(checks.values()), boundary_max=float(disp[ib]), roundtrip_max=float(err[ir]),
        boundary_witness=b[ib].tolist(), roundtrip_witness=x[ir].tolist(),
        boundary_tol=boundary_tol, roundtrip_tol=roundtrip_tol, checks=checks)
