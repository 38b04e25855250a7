"""The r-theta chart K on the lower half square and its inverse.

A point with chart coordinates ``(r, th)`` sits on the circle of radius
``R = r + h(r)`` centred at ``(1/2, -h(r))`` at polar angle ``th * Theta(r)``
from the vertical.  Fibres ``th = +-1`` lie on the boundary of the square.

Formulas are arranged so that no term of size ``h`` or ``h'`` is cancelled
against another; near ``r = 1/2`` those reach 1e10 and beyond.
"""
import numpy as np

from .errors import DomainError, SingularLocusError, BranchError
from .profile import HALF, default_profile

def _as_points(q):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 2:
        raise DomainError("points must have a trailing axis of length 2")
    return q


def _kinv(r, th, profile):
    """Unchecked inverse chart on arrays."""
    h = profile._h(r)
    big = r + h
    phi = th * profile._theta(r, h)
    x1 = HALF + big * np.sin(phi)
    s = np.sin(0.5 * phi)
    x2 = r * np.cos(phi) - 2.0 * h * s * s
    return x1, x2


def k_inverse(p, profile=None):
    """Map chart coordinates ``(r, th)`` to a point of the lower half square.

    Parameters
    ----------
    p : array_like, shape (..., 2)
        Pairs ``(r, th)`` with ``0 < r < 1/2`` and ``-1 <= th <= 1``.

    Returns
    -------
    ndarray, shape (..., 2)
    """
    profile = profile or default_profile()
    p = _as_points(p)
    r, th = p[..., 0], p[..., 1]
    if np.any(r <= 0) or np.any(r >= HALF) or np.any(np.abs(th) > 1):
        raise DomainError("chart coordinates must satisfy 0 < r < 1/2, |th| <= 1")
    x1, x2 = _kinv(r, th, profile)
    return np.stack([x1, x2], axis=-1)


def _solve_r(x1, x2, profile, iters=200):
    """Radius of the level circle through (x1, x2), x2 < 1/2.

    F(r) = r^2 - d^2 + 2 h(r) (r - x2) with d = |x - (1/2, 0)| is increasing
    on [x2, 1/2) and changes sign there.
    """
    dx = x1 - HALF
    d2 = dx * dx + x2 * x2
    lo = np.maximum(x2, 0.0).copy()
    hi = np.full_like(lo, HALF)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        live = (mid != lo) & (mid != hi)
        if not np.any(live):
            break
        h = profile._h(mid)
        with np.errstate(invalid="ignore", over="ignore"):
            f = mid * mid - d2 + 2.0 * h * (mid - x2)
        up = f > 0
        hi = np.where(live & up, mid, hi)
        lo = np.where(live & ~up, mid, lo)
    r = 0.5 * (lo + hi)
    # one Newton polish, kept only where it stays inside the bracket
    h, h1, _ = profile.derivatives(r)
    with np.errstate(invalid="ignore", over="ignore"):
        f = r * r - d2 + 2.0 * h * (r - x2)
        df = 2.0 * r + 2.0 * h1 * (r - x2) + 2.0 * h
        rn = r - f / df
    ok = np.isfinite(rn) & (rn >= lo) & (rn <= hi)
    return np.where(ok, rn, r)


def _kfwd(x1, x2, profile):
    """Unchecked forward chart for x2 < 1/2, excluding (1/2, 0)."""
    r = _solve_r(x1, x2, profile)
    h = profile._h(r)
    th_scale = profile._theta(r, h)
    with np.errstate(invalid="ignore", divide="ignore"):
        th = np.arctan2(x1 - HALF, x2 + h) / th_scale
    th = np.clip(np.nan_to_num(th), -1.0, 1.0)
    return r, th


def k_forward(q, profile=None):
    """Chart coordinates ``(r, th)`` of points in the lower half square.

    Raises
    ------
    SingularLocusError
        At the twist point (1/2, 0).
    DomainError
        Outside ``[0, 1] x [0, 1/2)``.
    """
    profile = profile or default_profile()
    q = _as_points(q)
    x1, x2 = q[..., 0], q[..., 1]
    if np.any(x1 < 0) or np.any(x1 > 1) or np.any(x2 < 0) or np.any(x2 >= HALF):
        raise DomainError("k_forward is defined on [0,1] x [0,1/2)")
    if np.any((x1 == HALF) & (x2 == 0)):
        raise SingularLocusError("(1/2, 0) has no chart coordinates")
    r, th = _kfwd(x1, x2, profile)
    return np.stack([r, th], axis=-1)


def _chart_jacobian(r, th, profile):
    """Entries (a, b, c, d) of d(x1, x2)/d(r, th), stable for large h."""
    h, h1, _ = profile.derivatives(r)
    big = r + h
    t_scale = profile._theta(r, h)
    rtp = profile.r_theta_prime(r, h, h1, t_scale)
    phi = th * t_scale
    sp, cp = np.sin(phi), np.cos(phi)
    s_half = np.sin(0.5 * phi)
    a = (1.0 + h1) * sp + rtp * th * cp
    c = cp - 2.0 * h1 * s_half * s_half - rtp * th * sp
    b = big * t_scale * cp
    d = -big * t_scale * sp
    return a, b, c, d


def jacobian_kinv(p, profile=None):
    """Jacobian matrix of ``k_inverse`` at chart coordinates ``(r, th)``.

    Returns an array of shape (..., 2, 2) with rows ``(dx1/dr, dx1/dth)`` and
    ``(dx2/dr, dx2/dth)``.

    Raises
    ------
    BranchError
        When ``r == r0`` where Theta' jumps.
    """
    profile = profile or default_profile()
    p = _as_points(p)
    r, th = p[..., 0], p[..., 1]
    if np.any(r <= 0) or np.any(r >= HALF) or np.any(np.abs(th) > 1):
        raise DomainError("chart coordinates must satisfy 0 < r < 1/2, |th| <= 1")
    if np.any(r == profile.r0):
        raise BranchError("Theta is not differentiable at r0")
    a, b, c, d = _chart_jacobian(r, th, profile)
    return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)


def jacobian_det(p, profile=None):
    """Closed-form |det| of the chart Jacobian: Theta (r+h) (1 + h' - h' cos(th Theta))."""
    profile = profile or default_profile()
    p = _as_points(p)
    r, th = p[..., 0], p[..., 1]
    h, h1, _ = profile.derivatives(r)
    t_scale = profile._theta(r, h)
    s_half = np.sin(0.5 * th * t_scale)
    return t_scale * (r + h) * (1.0 + 2.0 * h1 * s_half * s_half)
