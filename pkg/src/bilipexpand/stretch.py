"""The stretching bijection Psi_delta of the unit square and its rectangle versions.

Psi_delta moves every point along its level circle of ``r`` so that the part
of each fibre left of the crack ``x1 = 1/2`` gains a factor ``1 + delta`` of
fibre mass and the right part a factor ``1 - delta``.  Because the fibre mass
is exactly the area element, every measurable set in the left half has its
area multiplied by ``1 + delta`` (right half: ``1 - delta``).

The upper half is handled by reflection in ``x2 = 1/2`` and the midline by
an explicit piecewise-linear formula.

All functions take points as arrays of shape ``(..., 2)`` and stretch
factors broadcastable against the leading shape.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ClampError, DomainError, SingularLocusError
from .polarmap import _as_points, _chart_jacobian, _kfwd, _kinv
from .profile import HALF, default_profile

DELTA_FLOOR = 1e-6
SINGULAR_TOL = 1e-9
RIGHT = "right"
UP = "up"


# ---------------------------------------------------------------------------
# cancellation-free helpers

def _x_minus_sin(x):
    """x - sin(x) without cancellation for small |x|."""
    x = np.asarray(x, dtype=float)
    x2 = x * x
    series = x * x2 * (1.0 / 6 - x2 * (1.0 / 120 - x2 * (1.0 / 5040 - x2 / 362880)))
    return np.where(np.abs(x) < 0.1, series, x - np.sin(x))


def _sin_minus_xcos(x):
    """sin(x) - x cos(x) without cancellation for small |x|."""
    x = np.asarray(x, dtype=float)
    x2 = x * x
    series = x * x2 * (1.0 / 3 - x2 * (1.0 / 30 - x2 * (1.0 / 840 - x2 / 45360)))
    return np.where(np.abs(x) < 0.1, series, np.sin(x) - x * np.cos(x))


class _Fibre:
    """Per-radius quantities needed to evaluate H_r and its derivatives."""

    __slots__ = ("r", "h", "h1", "h2", "scale", "scale_prime", "H1")

    def __init__(self, r, profile):
        self.r = r
        self.h, self.h1, self.h2 = profile.derivatives(r)
        self.scale = profile._theta(r, self.h)
        self.scale_prime = profile._theta_prime(r, self.h, self.h1, self.scale)
        self.H1 = self.H(1.0)

    def H(self, ell):
        return ell + self.h1 * _x_minus_sin(ell * self.scale) / self.scale

    def dH(self, ell):
        s = np.sin(0.5 * ell * self.scale)
        return 1.0 + 2.0 * self.h1 * s * s

    def dH_dr(self, ell):
        x = ell * self.scale
        with np.errstate(over="ignore", invalid="ignore"):
            term1 = self.h2 * _x_minus_sin(x) / self.scale
            term2 = (self.h1 / self.scale) * (self.scale_prime / self.scale) * _sin_minus_xcos(x)
        return np.nan_to_num(term1) + np.nan_to_num(term2)

    def solve(self, target, bisect_iters=80, newton_iters=3):
        """Unique ell in [-1, 1] with H(ell) = target (H strictly increasing)."""
        target = np.clip(target, -self.H1, self.H1)
        lo = np.full(np.shape(target), -1.0)
        hi = np.full(np.shape(target), 1.0)
        for _ in range(bisect_iters):
            mid = 0.5 * (lo + hi)
            # converged lanes stay frozen so results do not depend on chunking
            live = (mid != lo) & (mid != hi)
            if not np.any(live):
                break
            up = self.H(mid) > target
            hi = np.where(live & up, mid, hi)
            lo = np.where(live & ~up, mid, lo)
        ell = 0.5 * (lo + hi)
        for _ in range(newton_iters):
            step = (self.H(ell) - target) / self.dH(ell)
            nxt = ell - step
            ell = np.where((nxt >= lo) & (nxt <= hi), nxt, ell)
        return ell


def _check_delta(delta):
    delta = np.asarray(delta, dtype=float)
    if np.any(np.abs(delta) > 1.0 - DELTA_FLOOR):
        raise ClampError(f"|delta| must not exceed {1.0 - DELTA_FLOOR}")
    return delta


# ---------------------------------------------------------------------------
# fibre maps

def antiderivative_H(r, ell, profile=None):
    """Closed-form antiderivative of the fibre density 1 + h' - h' cos(ell Theta).

    Parameters
    ----------
    r : array_like
        Radius in (0, 1/2).
    ell : array_like
        Fibre coordinate in [-1, 1].
    """
    profile = profile or default_profile()
    r = np.asarray(r, dtype=float)
    ell = np.asarray(ell, dtype=float)
    if np.any(r <= 0) or np.any(r >= HALF) or np.any(np.abs(ell) > 1):
        raise DomainError("need 0 < r < 1/2 and |ell| <= 1")
    return _Fibre(r, profile).H(ell)


def _g(fib, ell, delta):
    left = ell <= 0
    t_left = -fib.H1 + (1.0 + delta) * (fib.H(ell) + fib.H1)
    t_right = fib.H1 - (1.0 - delta) * (fib.H1 - fib.H(ell))
    g = fib.solve(np.where(left, t_left, t_right))
    return np.where(ell == -1.0, -1.0, np.where(ell == 1.0, 1.0, g))


def _g_inverse(fib, m, delta):
    # H(g(0)) = delta * H(1) separates the two branches
    hm = fib.H(m)
    left = hm <= delta * fib.H1
    t_left = -fib.H1 + (hm + fib.H1) / (1.0 + delta)
    t_right = fib.H1 - (fib.H1 - hm) / (1.0 - delta)
    ell = fib.solve(np.where(left, t_left, t_right))
    return np.where(m == -1.0, -1.0, np.where(m == 1.0, 1.0, ell))


def _g_derivatives(fib, ell, g, delta):
    """(dg/dr, dg/dell) by implicit differentiation of the defining equations."""
    left = ell <= 0
    dHg = fib.dH(g)
    d_ell = np.where(left, 1.0 + delta, 1.0 - delta) * fib.dH(ell) / dHg
    hr_ell = fib.dH_dr(ell)
    hr_g = fib.dH_dr(g)
    hr_1 = fib.dH_dr(1.0)
    # H_r is odd in ell, so d/dr H_r(-1) = -hr_1
    num_left = (1.0 + delta) * (hr_ell + hr_1) - hr_1 - hr_g
    num_right = hr_1 - hr_g - (1.0 - delta) * (hr_1 - hr_ell)
    d_r = np.where(left, num_left, num_right) / dHg
    return d_r, d_ell


def solve_g(r, ell, delta, profile=None):
    """Fibre map g_r: the increasing bijection of [-1, 1] defining Psi_delta.

    For ``ell <= 0`` it solves
    ``(1 + delta)(H_r(ell) - H_r(-1)) = H_r(g) - H_r(-1)``; for ``ell >= 0`` the
    mirrored equation with ``1 - delta`` anchored at ``+1``.
    """
    profile = profile or default_profile()
    r = np.asarray(r, dtype=float)
    ell = np.asarray(ell, dtype=float)
    delta = _check_delta(delta)
    if np.any(r <= 0) or np.any(r >= HALF) or np.any(np.abs(ell) > 1):
        raise DomainError("need 0 < r < 1/2 and |ell| <= 1")
    r, ell, delta = np.broadcast_arrays(r, ell, delta)
    out = _g(_Fibre(r, profile), ell, delta)
    return out[()] if out.ndim == 0 else out


def solve_g_inverse(r, m, delta, profile=None):
    """Inverse of ``solve_g`` in its fibre coordinate."""
    profile = profile or default_profile()
    r, m, delta = np.broadcast_arrays(
        np.asarray(r, dtype=float), np.asarray(m, dtype=float), _check_delta(delta))
    out = _g_inverse(_Fibre(r, profile), m, delta)
    return out[()] if out.ndim == 0 else out


def g_partials(r, ell, delta, profile=None):
    """Analytic (dg/dr, dg/dell) of the fibre map."""
    profile = profile or default_profile()
    r, ell, delta = np.broadcast_arrays(
        np.asarray(r, dtype=float), np.asarray(ell, dtype=float), _check_delta(delta))
    fib = _Fibre(r, profile)
    g = _g(fib, ell, delta)
    return _g_derivatives(fib, ell, g, delta)


# ---------------------------------------------------------------------------
# Psi on the unit square

def _lower(x1, x2, delta, profile, inverse):
    """Psi or its inverse on points with x2 < 1/2 and delta != 0, interior only."""
    r, th = _kfwd(x1, x2, profile)
    r = np.minimum(r, np.nextafter(HALF, 0.0))
    fib = _Fibre(r, profile)
    g = _g_inverse(fib, th, delta) if inverse else _g(fib, th, delta)
    return _kinv(r, g, profile)


def _midline(x1, delta, inverse):
    if not inverse:
        return np.where(x1 <= HALF, x1 * (1.0 + delta),
                        0.5 * (1.0 + delta) + (1.0 - delta) * (x1 - HALF))
    pivot = 0.5 * (1.0 + delta)
    return np.where(x1 <= pivot, x1 / (1.0 + delta),
                    HALF + (x1 - pivot) / (1.0 - delta))


def _psi_unit(q, delta, profile, inverse=False):
    """Unchecked vectorised Psi_delta (or inverse) on [0,1]^2."""
    q = np.asarray(q, dtype=float)
    x1 = q[..., 0]
    x2 = q[..., 1]
    delta = np.broadcast_to(np.asarray(delta, dtype=float), x1.shape)
    out1 = x1.copy()
    out2 = x2.copy()
    fixed = (delta == 0) | (x1 <= 0) | (x1 >= 1) | (x2 <= 0) | (x2 >= 1)
    mid = ~fixed & (x2 == HALF)
    if np.any(mid):
        out1[mid] = _midline(x1[mid], delta[mid], inverse)
    low = ~fixed & (x2 < HALF)
    up = ~fixed & (x2 > HALF)
    for mask, flip in ((low, False), (up, True)):
        if not np.any(mask):
            continue
        y2 = 1.0 - x2[mask] if flip else x2[mask]
        z1, z2 = _lower(x1[mask], y2, delta[mask], profile, inverse)
        out1[mask] = z1
        out2[mask] = 1.0 - z2 if flip else z2
    return np.stack([out1, out2], axis=-1)


def _check_unit(q):
    q = _as_points(q)
    if np.any(q < 0) or np.any(q > 1) or np.any(np.isnan(q)):
        raise DomainError("points must lie in [0,1]^2")
    return q


def psi(q, delta, profile=None):
    """Apply Psi_delta to points of the unit square.

    Parameters
    ----------
    q : array_like, shape (..., 2)
    delta : float or array_like
        Stretch factor(s), ``|delta| <= 1 - 1e-6``.

    Returns
    -------
    ndarray, shape (..., 2)
        Image points.  Boundary points and the twists are returned unchanged.
    """
    profile = profile or default_profile()
    q = _check_unit(q)
    return _psi_unit(q, _check_delta(delta), profile)


def psi_inverse(q, delta, profile=None):
    """Preimage of ``q`` under Psi_delta."""
    profile = profile or default_profile()
    q = _check_unit(q)
    return _psi_unit(q, _check_delta(delta), profile, inverse=True)


def _lower_jacobian(x1, x2, delta, profile):
    r, th = _kfwd(x1, x2, profile)
    r = np.minimum(r, np.nextafter(HALF, 0.0))
    fib = _Fibre(r, profile)
    g = _g(fib, th, delta)
    g_r, g_t = _g_derivatives(fib, th, g, delta)
    a, b, c, d = _chart_jacobian(r, th, profile)
    det = a * d - b * c
    # inverse of the chart Jacobian at (r, th)
    ia, ib, ic, id_ = d / det, -b / det, -c / det, a / det
    A, B, C, D = _chart_jacobian(r, g, profile)
    # JK(r, g) @ [[1, 0], [g_r, g_t]]
    m00 = A + B * g_r
    m01 = B * g_t
    m10 = C + D * g_r
    m11 = D * g_t
    j00 = m00 * ia + m01 * ic
    j01 = m00 * ib + m01 * id_
    j10 = m10 * ia + m11 * ic
    j11 = m10 * ib + m11 * id_
    return j00, j01, j10, j11, r


def _near_twist(x1, x2, tol):
    return (np.hypot(x1 - HALF, x2) < tol) | (np.hypot(x1 - HALF, 1.0 - x2) < tol)


def _psi_jacobian_unit(q, delta, profile, singular="perturb"):
    q = np.asarray(q, dtype=float)
    x1 = q[..., 0].copy()
    x2 = q[..., 1].copy()
    delta = np.broadcast_to(np.asarray(delta, dtype=float), x1.shape)
    tol = SINGULAR_TOL
    crack = np.abs(x1 - HALF) < tol
    twist = _near_twist(x1, x2, tol)
    if singular == "raise" and np.any((crack | twist) & (delta != 0)):
        raise SingularLocusError("Jacobian requested on the crack or at a twist")
    # one-sided limits from the left / below
    x1 = np.where(crack, HALF - 2 * tol, x1)
    x2 = np.where(twist & (x2 < HALF), 2 * tol, x2)
    x2 = np.where(twist & (x2 > HALF), 1.0 - 2 * tol, x2)
    x2 = np.where(x2 == HALF, HALF - 2 * tol, x2)
    x1 = np.clip(x1, 0.0, 1.0)
    x2 = np.clip(x2, 0.0, 1.0)
    shape = x1.shape
    j = np.zeros(shape + (2, 2))
    j[..., 0, 0] = 1.0
    j[..., 1, 1] = 1.0
    active = delta != 0
    for flip in (False, True):
        mask = active & ((x2 > HALF) if flip else (x2 < HALF))
        if not np.any(mask):
            continue
        y2 = 1.0 - x2[mask] if flip else x2[mask]
        j00, j01, j10, j11, r = _lower_jacobian(x1[mask], y2, delta[mask], profile)
        if singular == "raise" and np.any(np.abs(r - profile.r0) < tol):
            raise SingularLocusError("Jacobian requested on a seam")
        if flip:
            j01, j10 = -j01, -j10
        j[mask, 0, 0] = j00
        j[mask, 0, 1] = j01
        j[mask, 1, 0] = j10
        j[mask, 1, 1] = j11
    return j


def psi_jacobian(q, delta, profile=None, singular="raise"):
    """Jacobian matrix of Psi_delta, shape (..., 2, 2).

    Computed by the chain rule through the chart: the chart Jacobian at the
    image fibre coordinate, times the Jacobian of ``(r, th) -> (r, g_r(th))``,
    times the inverse chart Jacobian at the source.

    Parameters
    ----------
    singular : {"raise", "perturb"}
        Behaviour within 1e-9 of the crack, a seam or a twist.  ``"perturb"``
        returns the one-sided limit from the left / below.
    """
    profile = profile or default_profile()
    q = _check_unit(q)
    return _psi_jacobian_unit(q, _check_delta(delta), profile, singular)


# ---------------------------------------------------------------------------
# rectangles

@dataclass(frozen=True)
class RectFrame:
    """Axis-aligned rectangle ``u + [0, a] x [0, b]`` with a stretch orientation.

    ``axis = "right"`` conjugates by ``(x1, x2) -> u + (a x1, b x2)`` and
    stretches the left half; ``axis = "up"`` conjugates by
    ``(x1, x2) -> u + (a x2, b x1)`` and stretches the bottom half.
    """

    u: tuple
    a: float
    b: float
    axis: str = RIGHT

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise DomainError("rectangle sides must be positive")
        if self.axis not in (RIGHT, UP):
            raise DomainError(f"axis must be {RIGHT!r} or {UP!r}")

    def contains(self, q, tol=1e-12):
        q = np.asarray(q, dtype=float)
        u1, u2 = self.u
        return ((q[..., 0] >= u1 - tol) & (q[..., 0] <= u1 + self.a + tol)
                & (q[..., 1] >= u2 - tol) & (q[..., 1] <= u2 + self.b + tol))


def _to_unit(q, u1, u2, a, b, up):
    s = (q[..., 0] - u1) / a
    t = (q[..., 1] - u2) / b
    z1 = np.where(up, t, s)
    z2 = np.where(up, s, t)
    return np.clip(np.stack([z1, z2], -1), 0.0, 1.0)


def _from_unit(z, u1, u2, a, b, up):
    y1 = np.where(up, u1 + a * z[..., 1], u1 + a * z[..., 0])
    y2 = np.where(up, u2 + b * z[..., 0], u2 + b * z[..., 1])
    return np.stack([y1, y2], -1)


def _psi_rect_arrays(q, delta, u1, u2, a, b, up, profile, inverse=False):
    """Vectorised conjugated map; every argument broadcasts over points."""
    z = _to_unit(q, u1, u2, a, b, up)
    w = _psi_unit(z, delta, profile, inverse=inverse)
    out = _from_unit(w, u1, u2, a, b, up)
    # exact identity where nothing moves, so box boundaries stay bit-stable
    same = np.all(w == z, axis=-1)
    return np.where(same[..., None], q, out)


def _rect_jacobian_arrays(q, delta, u1, u2, a, b, up, profile):
    z = _to_unit(q, u1, u2, a, b, up)
    j = _psi_jacobian_unit(z, delta, profile, singular="perturb")
    j00, j01, j10, j11 = j[..., 0, 0], j[..., 0, 1], j[..., 1, 0], j[..., 1, 1]
    r00 = np.where(up, j11, j00)
    r11 = np.where(up, j00, j11)
    r01 = np.where(up, (a / b) * j10, (a / b) * j01)
    r10 = np.where(up, (b / a) * j01, (b / a) * j10)
    return np.stack([np.stack([r00, r01], -1), np.stack([r10, r11], -1)], -2)


def psi_rect(q, delta, frame, profile=None, inverse=False):
    """Psi_delta conjugated onto the rectangle ``frame``.

    The map is the identity on the boundary of the rectangle and multiplies
    areas in the first half (left for ``"right"``, bottom for ``"up"``) by
    ``1 + delta``.
    """
    profile = profile or default_profile()
    q = _as_points(q)
    delta = _check_delta(delta)
    if not np.all(frame.contains(q)):
        raise DomainError("points must lie in the rectangle")
    up = frame.axis == UP
    return _psi_rect_arrays(q, delta, frame.u[0], frame.u[1], frame.a, frame.b, up,
                            profile, inverse=inverse)


def psi_rect_jacobian(q, delta, frame, profile=None):
    """Jacobian of ``psi_rect`` (one-sided on singular curves)."""
    profile = profile or default_profile()
    q = _as_points(q)
    if not np.all(frame.contains(q)):
        raise DomainError("points must lie in the rectangle")
    return _rect_jacobian_arrays(q, _check_delta(delta), frame.u[0], frame.u[1],
                                 frame.a, frame.b, frame.axis == UP, profile)


# ---------------------------------------------------------------------------
# singular geometry

def seam_polyline(n=257, which=1, profile=None):
    """Sample of seam S^1 (``r = r0``) or its reflection S^2 in the unit square."""
    profile = profile or default_profile()
    th = np.linspace(-1.0, 1.0, n)
    x1, x2 = _kinv(np.full(n, profile.r0), th, profile)
    if which == 2:
        x2 = 1.0 - x2
    return np.stack([x1, x2], -1)


def twist_points():
    """The twists (1/2, 0) and (1/2, 1)."""
    return np.array([[HALF, 0.0], [HALF, 1.0]])


def blown_up_twist_mask(q, radius=None, profile=None):
    """True inside the blown-up twists ``{r < radius}`` and their reflection."""
    profile = profile or default_profile()
    radius = profile.r1 if radius is None else radius
    q = np.asarray(q, dtype=float)
    x1 = q[..., 0]
    x2 = np.where(q[..., 1] > HALF, 1.0 - q[..., 1], q[..., 1])
    # for r < r1 the level circles are centred at (1/2, 0)
    return np.hypot(x1 - HALF, x2) < radius


def chart_radius(q, profile=None):
    """Radius coordinate r of points, reflecting the upper half."""
    profile = profile or default_profile()
    q = np.asarray(q, dtype=float)
    x1 = q[..., 0]
    x2 = np.where(q[..., 1] > HALF, 1.0 - q[..., 1], q[..., 1])
    x2 = np.minimum(x2, np.nextafter(HALF, 0.0))
    r, _ = _kfwd(x1, x2, profile)
    return r


# ---------------------------------------------------------------------------
# distortion calibration

def _distortion_samples(profile, seed=0, grid=128, band=20000):
    """Jittered grid over the lower half plus a dense band around the crack/seam crossing."""
    from .polarmap import _kinv as kinv
    rng = np.random.Generator(np.random.Philox(seed))
    idx = np.stack(np.meshgrid(np.arange(grid), np.arange(grid // 2)), -1).reshape(-1, 2)
    pts = (idx + rng.random(idx.shape)) / grid
    r = rng.uniform(0.5 * profile.r0, 0.3, band)
    th = rng.uniform(-0.5, 0.5, band)
    x1, x2 = kinv(r, th, profile)
    extra = np.stack([x1, x2], -1)
    keep = (extra[:, 1] > 0) & (extra[:, 1] < HALF) & (extra[:, 0] > 0) & (extra[:, 0] < 1)
    return np.concatenate([pts, extra[keep]])


def _frame_distortion(jac, ratio):
    """max(|J|_2, |J^-1|_2) after conjugating by diag(1, ratio)."""
    k = jac.copy()
    k[..., 0, 1] /= ratio
    k[..., 1, 0] *= ratio
    sv = np.linalg.svd(k, compute_uv=False)
    return np.maximum(sv[..., 0], 1.0 / sv[..., 1])


def frame_ratio(level_parity_odd):
    """Side along the second stretch coordinate over side along the first.

    Squares (odd levels, lengthwise frame) give 1; tall boxes (even levels,
    heightwise frame) have their first stretch coordinate along the long
    side and give 1/2.
    """
    return 1.0 if level_parity_odd else 0.5


def distortion(delta, ratio=1.0, profile=None, seed=0, refine=16):
    """Sampled bi-Lipschitz constant of Psi_delta conjugated onto a box frame.

    Takes the sup of ``max(|J|_2, |J^-1|_2)`` over a stratified sample that is
    dense around the crack/seam crossing, then resamples near the worst
    points.  ``ratio`` is the frame side along the second stretch coordinate
    over the side along the first (see :func:`frame_ratio`).  The lower half
    suffices: the upper half is a mirror image with equal norms.
    """
    profile = profile or default_profile()
    pts = _distortion_samples(profile, seed)
    vals = _frame_distortion(_psi_jacobian_unit(pts, delta, profile), ratio)
    if refine:
        rng = np.random.Generator(np.random.Philox(seed + 1))
        top = pts[np.argsort(vals)[-refine:]]
        near = top[:, None, :] + rng.uniform(-2e-3, 2e-3, (refine, 256, 2))
        near = near.reshape(-1, 2)
        near = near[(near[:, 1] > 0) & (near[:, 1] < HALF) & (near[:, 0] > 0) & (near[:, 0] < 1)]
        vals = np.concatenate([vals, _frame_distortion(_psi_jacobian_unit(near, delta, profile), ratio)])
    return float(vals.max())


_CALIBRATION = {}


def calibrate_delta(eta, ratio=1.0, profile=None, margin=0.97):
    """Largest delta for which ``distortion(delta, ratio) <= 1 + margin * eta``.

    The sampled sup can only under-estimate the true one, hence the margin.
    Results are cached per process.
    """
    from scipy.optimize import brentq

    profile = profile or default_profile()
    key = (float(eta), float(ratio), profile, float(margin))
    if key in _CALIBRATION:
        return _CALIBRATION[key]
    target = 1.0 + margin * eta
    f = lambda d: distortion(d, ratio, profile) - target
    hi = 1.0 - DELTA_FLOOR
    if f(hi) <= 0:
        result = hi
    else:
        # distortion grows roughly linearly near 0; shrink until bracketed
        while hi > 1e-6 and f(hi / 4) > 0:
            hi /= 4
        result = brentq(f, hi / 4, hi, xtol=1e-7, rtol=1e-4)
    _CALIBRATION[key] = result
    return result
