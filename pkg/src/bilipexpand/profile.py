"""Profile function h shaping the level curves of the r-theta chart.

The concrete profile is

    h(r) = c * exp(-1 / (r - r1)) * (1/2 - r) ** (-p),   r1 < r < 1/2
    h(r) = 0,                                             r <= r1

with ``r1 = 1/10``, ``p = 6`` and ``c = 1`` by default.  It vanishes to all
orders at ``r1`` and blows up at ``1/2``.  Level curves of ``r`` are circle
arcs with centre ``(1/2, -h(r))`` and radius ``r + h(r)``.

All evaluators accept scalars or numpy arrays.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

HALF = 0.5


def _log_h_derivatives(r, r1, p):
    """Derivatives L', L'', L''' of log h on (r1, 1/2)."""
    t = r - r1
    s = HALF - r
    d1 = 1.0 / t**2 + p / s
    d2 = -2.0 / t**3 + p / s**2
    d3 = 6.0 / t**4 + 2.0 * p / s**3
    return d1, d2, d3


@dataclass(frozen=True)
class Profile:
    """The profile h, its derivatives, and the derived angle scale Theta.

    Parameters
    ----------
    r1 : float
        Radius below which h vanishes identically.
    exponent : float
        Blow-up exponent at r = 1/2.
    amplitude : float
        Multiplicative constant.
    """

    r1: float = 0.1
    exponent: float = 6.0
    amplitude: float = 1.0
    r0: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "r0", solve_r0(self))

    # -- h and derivatives -------------------------------------------------
    def h(self, r, order=0):
        """Evaluate the ``order``-th derivative of h at ``r`` (0 <= r < 1/2)."""
        r = np.asarray(r, dtype=float)
        if order not in (0, 1, 2, 3):
            raise DomainError(f"derivative order must be 0..3, got {order}")
        if np.any(r < 0) or np.any(r >= HALF) or np.any(np.isnan(r)):
            raise DomainError("h is defined on [0, 1/2)")
        return self._h(r, order)

    def _h(self, r, order=0):
        # unchecked; r may equal 1/2 where the result is +inf
        r = np.asarray(r, dtype=float)
        pos = r > self.r1
        rr = np.where(pos, r, 0.5 * (self.r1 + HALF))
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            base = self.amplitude * np.exp(-1.0 / (rr - self.r1)) * (HALF - rr) ** (-self.exponent)
            if order == 0:
                val = base
            else:
                d1, d2, d3 = _log_h_derivatives(rr, self.r1, self.exponent)
                if order == 1:
                    val = base * d1
                elif order == 2:
                    val = base * (d1 * d1 + d2)
                else:
                    val = base * (d1**3 + 3.0 * d1 * d2 + d3)
        val = np.where(pos, val, 0.0)
        return val[()] if val.ndim == 0 else val

    def derivatives(self, r):
        """Return (h, h', h'') in one pass, unchecked."""
        r = np.asarray(r, dtype=float)
        pos = r > self.r1
        rr = np.where(pos, r, 0.5 * (self.r1 + HALF))
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            base = self.amplitude * np.exp(-1.0 / (rr - self.r1)) * (HALF - rr) ** (-self.exponent)
            d1, d2, _ = _log_h_derivatives(rr, self.r1, self.exponent)
            h0 = np.where(pos, base, 0.0)
            h1 = np.where(pos, base * d1, 0.0)
            h2 = np.where(pos, base * (d1 * d1 + d2), 0.0)
        return h0, h1, h2

    # -- angle scale -----------------------------------------------------
    def theta(self, r):
        """Angle scale Theta(r) in (0, pi/2]; continuous across r0."""
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0) or np.any(r >= HALF):
            raise DomainError("Theta is defined on (0, 1/2)")
        out = self._theta(r, self._h(r))
        return out[()] if np.ndim(out) == 0 else out

    def _theta(self, r, h):
        big = h + r
        inner = r <= self.r0
        with np.errstate(invalid="ignore", over="ignore"):
            # arccos(h/(h+r)) written as an atan2 to stay accurate when h << r
            t_in = np.arctan2(np.sqrt(np.maximum(r * r + 2.0 * r * h, 0.0)), h)
            t_out = np.arcsin(np.minimum(0.5 / big, 1.0))
        return np.where(inner, t_in, t_out)

    def _theta_prime(self, r, h, h1, th):
        """d Theta / dr on either side of r0 (one-sided at r0 itself)."""
        big = h + r
        inner = r <= self.r0
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            root = np.sqrt(np.maximum(r * r + 2.0 * r * h, 1e-300))
            d_in = (h - r * h1) / (big * root)
            d_out = -(1.0 + h1) * np.tan(th) / big
        return np.where(inner, d_in, d_out)

    def r_theta_prime(self, r, h, h1, th):
        """(r + h) * Theta'(r), finite even when h overflows double range."""
        inner = r <= self.r0
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            root = np.sqrt(np.maximum(r * r + 2.0 * r * h, 1e-300))
            d_in = (h - r * h1) / root
            d_out = -(1.0 + h1) * np.tan(th)
        return np.where(inner, d_in, d_out)

    def growth_ratios(self, r):
        """The three growth-condition ratios (h')^2/(r+h)^3, h''h'/(r+h)^3, h'''/(r+h)^2."""
        r = np.asarray(r, dtype=float)
        h0, h1, h2 = self.derivatives(r)
        h3 = self._h(r, 3)
        big = r + h0
        return h1**2 / big**3, h2 * h1 / big**3, h3 / big**2


def h_eval(r, order=0, profile=None):
    """Evaluate h or one of its first three derivatives."""
    return (profile or default_profile()).h(r, order)


def theta(r, profile=None):
    """Angle scale Theta(r)."""
    return (profile or default_profile()).theta(r)


def solve_r0(profile, tol=1e-14):
    """Root of 2 r h(r) + r^2 = 1/4 by bisection.

    The left side is strictly increasing on (0, 1/2) and equals r^2 <= 1/100
    for r <= r1, so the root lies in (r1, 1/2).
    """
    lo, hi = profile.r1, HALF
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        val = 2.0 * mid * profile._h(mid) + mid * mid - 0.25
        if val > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


_DEFAULT = None


def default_profile():
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = Profile()
    return _DEFAULT
