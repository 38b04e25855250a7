"""Multiscale composition of box stretches, stopping rules and expansion steps.

A :class:`MapStack` holds, for each dyadic level ``L``, a sparse set of boxes
with stretch factors.  Level ``L`` acts by the rectangle-conjugated
Psi on each listed box (lengthwise on squares, heightwise on tall boxes)
and by the identity elsewhere; since each piece fixes its box boundary the
glued level map is a continuous bijection.  The stack evaluates
``phi_1 o phi_2 o ... o phi_n``, innermost (finest) level first.

Every level map has constant Jacobian determinant ``1 + delta`` on the first
half of each listed box and ``1 - delta`` on the second, so the measure of
the image of a pixel set follows exactly from the stretch factors along each
pixel's chain of boxes.
"""
import json
import math
import warnings
from dataclasses import dataclass, field, asdict
from fractions import Fraction

import numpy as np

from ._parallel import map_points
from .dyadic import (DensityTree, DyadicBox, ancestor_indices, box_boundary_samples,
                     box_indices, ingest, level_extent, level_shape, seam_hits, twist_hits,
                     SEAM_SAMPLES)
from .errors import (BudgetExhaustedError, ConfigError, NoProgressError, ParseError,
                     PreconditionError)
from .profile import default_profile
from .stretch import (_psi_rect_arrays, _rect_jacobian_arrays, calibrate_delta,
                      frame_ratio, DELTA_FLOOR)

STACK_FORMAT = "bilipexpand.mapstack"
STACK_VERSION = 1
CHAIN_FORMAT = "bilipexpand.mapchain"
REASONS = ("tau1", "tau2", "tau3", "tau4-guard", "depth")


# ---------------------------------------------------------------------------
# stacks

@dataclass(frozen=True, eq=False)
class StackLevel:
    """Boxes of one level carrying a non-zero stretch factor, keyed by ``iy * cols + ix``."""

    level: int
    keys: np.ndarray
    delta: np.ndarray

    @classmethod
    def from_boxes(cls, level, iy, ix, delta):
        iy = np.asarray(iy, dtype=np.int64).ravel()
        ix = np.asarray(ix, dtype=np.int64).ravel()
        delta = np.broadcast_to(np.asarray(delta, dtype=float), iy.shape).ravel()
        if np.any(np.abs(delta) > 1.0 - DELTA_FLOOR):
            raise ConfigError("stretch factor outside the clamp range")
        rows, cols = level_shape(level)
        if np.any((iy < 0) | (iy >= rows) | (ix < 0) | (ix >= cols)):
            raise ConfigError(f"box index outside level {level}")
        keep = delta != 0
        keys = iy[keep] * cols + ix[keep]
        order = np.argsort(keys, kind="stable")
        keys, d = keys[order], delta[keep][order]
        if np.any(np.diff(keys) == 0):
            raise ConfigError(f"duplicate box at level {level}")
        return cls(level, keys, d.copy())

    @property
    def size(self):
        return int(self.keys.size)

    def boxes(self):
        cols = level_shape(self.level)[1]
        return self.keys // cols, self.keys % cols

    def lookup(self, iy, ix):
        """Stretch factor of the boxes ``(iy, ix)`` (0 when not listed)."""
        cols = level_shape(self.level)[1]
        key = iy * cols + ix
        pos = np.searchsorted(self.keys, key)
        pos = np.minimum(pos, max(self.keys.size - 1, 0))
        if self.keys.size == 0:
            return np.zeros(np.shape(key))
        found = self.keys[pos] == key
        return np.where(found, self.delta[pos], 0.0)


def _level_apply(lv, pts, profile, inverse=False):
    iy, ix = box_indices(pts, lv.level)
    d = lv.lookup(iy, ix)
    sel = d != 0
    if not np.any(sel):
        return pts
    w, h = level_extent(lv.level)
    out = pts.copy()
    out[sel] = _psi_rect_arrays(pts[sel], d[sel], ix[sel] * w, iy[sel] * h, w, h,
                                lv.level % 2 == 0, profile, inverse=inverse)
    return out


def _level_jacobian(lv, pts, profile):
    iy, ix = box_indices(pts, lv.level)
    d = lv.lookup(iy, ix)
    jac = np.zeros(pts.shape[:-1] + (2, 2))
    jac[..., 0, 0] = 1.0
    jac[..., 1, 1] = 1.0
    sel = d != 0
    if np.any(sel):
        w, h = level_extent(lv.level)
        jac[sel] = _rect_jacobian_arrays(pts[sel], d[sel], ix[sel] * w, iy[sel] * h, w, h,
                                         lv.level % 2 == 0, profile)
    return jac


class MapStack:
    """Composition ``phi_1 o ... o phi_n`` of sparse per-level box stretches.

    Parameters
    ----------
    levels : iterable of StackLevel
    leaves : dict, optional
        Stopping antichain, ``{level: (iy, ix, reason_codes, statistics)}``.
    provenance : str
        Which construction produced the stack.
    meta : dict, optional
        Free-form JSON-serialisable metadata.
    """

    def __init__(self, levels=(), leaves=None, provenance="identity", meta=None, profile=None):
        lv = [l for l in levels if l.size > 0]
        lv.sort(key=lambda l: l.level)
        if len({l.level for l in lv}) != len(lv):
            raise ConfigError("each level may appear once in a stack")
        self.levels = tuple(lv)
        self.leaves = leaves or {}
        self.provenance = provenance
        self.meta = dict(meta or {})
        self.profile = profile or default_profile()

    @classmethod
    def single(cls, delta, box=None, **kw):
        """Stack with one stretched box (default: the unit square)."""
        box = box or DyadicBox(1, 0, 0)
        return cls([StackLevel.from_boxes(box.level, [box.iy], [box.ix], [delta])], **kw)

    @property
    def depth(self):
        return self.levels[-1].level if self.levels else 0

    @property
    def box_count(self):
        return sum(l.size for l in self.levels)

    def __len__(self):
        return len(self.levels)

    # -- evaluation --------------------------------------------------------
    def _forward(self, pts, lo=0, hi=None):
        for lv in reversed(self.levels):
            if lv.level > lo and (hi is None or lv.level < hi):
                pts = _level_apply(lv, pts, self.profile)
        return pts

    def _backward(self, pts):
        for lv in self.levels:
            pts = _level_apply(lv, pts, self.profile, inverse=True)
        return pts

    def _jac(self, pts):
        jac = np.zeros(pts.shape[:-1] + (2, 2))
        jac[..., 0, 0] = 1.0
        jac[..., 1, 1] = 1.0
        for lv in reversed(self.levels):
            jac = _level_jacobian(lv, pts, self.profile) @ jac
            pts = _level_apply(lv, pts, self.profile)
        return jac

    def evaluate(self, pts):
        """Image of points under the stack (finest level applied first)."""
        return map_points(self._forward, pts) if self.levels else np.array(pts, dtype=float)

    def inverse(self, pts):
        """Preimage of points (coarsest inverse applied first)."""
        return map_points(self._backward, pts) if self.levels else np.array(pts, dtype=float)

    def jacobian(self, pts):
        """Chain-rule Jacobian along the orbit; one-sided on singular curves."""
        pts = np.asarray(pts, dtype=float)
        if not self.levels:
            return np.broadcast_to(np.eye(2), pts.shape[:-1] + (2, 2)).copy()
        return map_points(self._jac, pts)

    def partial(self, pts, i, n):
        """Apply only the levels strictly between ``i`` and ``n``, finest first."""
        pts = np.asarray(pts, dtype=float)
        shape = pts.shape
        return self._forward(pts.reshape(-1, 2), lo=i, hi=n).reshape(shape)

    def partial_inverse(self, pts, i):
        """Undo the levels finer than ``i`` (coarsest of them first)."""
        pts = np.asarray(pts, dtype=float)
        for lv in self.levels:
            if lv.level > i:
                pts = _level_apply(lv, pts, self.profile, inverse=True)
        return pts

    def boxes(self):
        """Iterate ``(level, iy, ix, delta)`` over all stretched boxes."""
        for lv in self.levels:
            iy, ix = lv.boxes()
            for a, b, d in zip(iy, ix, lv.delta):
                yield lv.level, int(a), int(b), float(d)

    __call__ = evaluate

    # -- exact measure bookkeeping -------------------------------------------
    def volume_factor(self, pts):
        """Jacobian determinant at ``pts``: the product of ``1 +- delta`` along each chain."""
        pts = np.asarray(pts, dtype=float)
        out = np.ones(pts.shape[:-1])
        for lv in self.levels:
            iy, ix = box_indices(pts, lv.level)
            d = lv.lookup(iy, ix)
            cy, cx = box_indices(pts, lv.level + 1)
            first = (cx % 2 == 0) if lv.level % 2 == 1 else (cy % 2 == 0)
            out = out * np.where(first, 1.0 + d, 1.0 - d)
        return out

    def predicted_measure(self, pixelset):
        """Exact measure of the image of a pixel set (stack depth below the pixel level)."""
        px = ingest(pixelset)
        if self.depth >= 2 * px.q + 1:
            raise PreconditionError("stack is finer than the pixel grid")
        pts = px.pixel_centres()[px.bits]
        return float(np.sum(self.volume_factor(pts))) / px.bits.size

    # -- serialisation ---------------------------------------------------
    def to_dict(self):
        levels = []
        for lv in self.levels:
            iy, ix = lv.boxes()
            levels.append({"level": lv.level,
                           "boxes": [[int(a), int(b), float(d)] for a, b, d in zip(iy, ix, lv.delta)]})
        leaves = []
        for lev in sorted(self.leaves):
            iy, ix, code, stat = self.leaves[lev]
            leaves.append({"level": int(lev),
                           "boxes": [[int(a), int(b), REASONS[int(c)], float(s)]
                                     for a, b, c, s in zip(iy, ix, code, stat)]})
        return {"format": STACK_FORMAT, "version": STACK_VERSION, "provenance": self.provenance,
                "meta": self.meta, "levels": levels, "leaves": leaves}

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != STACK_FORMAT:
            raise ParseError("not a map stack file")
        if data.get("version") != STACK_VERSION:
            raise ParseError(f"unsupported map stack version {data.get('version')!r}")
        try:
            levels = []
            for entry in data["levels"]:
                b = np.array(entry["boxes"], dtype=float).reshape(-1, 3)
                levels.append(StackLevel.from_boxes(int(entry["level"]), b[:, 0].astype(np.int64),
                                                    b[:, 1].astype(np.int64), b[:, 2]))
            leaves = {}
            for entry in data.get("leaves", []):
                rows = entry["boxes"]
                leaves[int(entry["level"])] = (
                    np.array([r[0] for r in rows], dtype=np.int64),
                    np.array([r[1] for r in rows], dtype=np.int64),
                    np.array([REASONS.index(r[2]) for r in rows], dtype=np.int64),
                    np.array([r[3] for r in rows], dtype=float))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"malformed map stack: {exc}") from None
        return cls(levels, leaves, data.get("provenance", ""), data.get("meta", {}))

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"map stack is not valid JSON: {exc}") from None
        return cls.from_dict(data)


class ComposedMap:
    """Sequential composition of stacks; the first stack is applied first."""

    def __init__(self, stacks=()):
        self.stacks = tuple(stacks)
        self.meta = {}

    def evaluate(self, pts):
        pts = np.array(pts, dtype=float)
        for s in self.stacks:
            pts = s.evaluate(pts)
        return pts

    def inverse(self, pts):
        pts = np.array(pts, dtype=float)
        for s in reversed(self.stacks):
            pts = s.inverse(pts)
        return pts

    def jacobian(self, pts):
        pts = np.array(pts, dtype=float)
        jac = np.broadcast_to(np.eye(2), pts.shape[:-1] + (2, 2)).copy()
        for s in self.stacks:
            jac = s.jacobian(pts) @ jac
            pts = s.evaluate(pts)
        return jac

    def volume_factor(self, pts):
        pts = np.array(pts, dtype=float)
        out = np.ones(pts.shape[:-1])
        for s in self.stacks:
            out = out * s.volume_factor(pts)
            pts = s.evaluate(pts)
        return out

    __call__ = evaluate

    # -- serialisation ---------------------------------------------------
    def to_dict(self, meta=None):
        return {"format": CHAIN_FORMAT, "version": STACK_VERSION, "meta": meta or {},
                "stacks": [s.to_dict() for s in self.stacks]}

    @classmethod
    def from_dict(cls, data):
        """Read a chain, or a single stack as a chain of length one."""
        if data.get("format") == STACK_FORMAT:
            return cls([MapStack.from_dict(data)])
        if data.get("format") != CHAIN_FORMAT:
            raise ParseError("not a map stack file")
        if data.get("version") != STACK_VERSION:
            raise ParseError(f"unsupported map stack version {data.get('version')!r}")
        stacks = data.get("stacks")
        if not isinstance(stacks, list):
            raise ParseError("malformed map chain: 'stacks' must be a list")
        chain = cls([MapStack.from_dict(s) for s in stacks])
        chain.meta = data.get("meta", {})
        return chain

    def dumps(self, meta=None):
        return json.dumps(self.to_dict(meta), indent=1, sort_keys=True)

    def save(self, path, meta=None):
        with open(path, "w") as fh:
            fh.write(self.dumps(meta))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"map stack is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ParseError("map stack file must hold a JSON object")
        return cls.from_dict(data)


def compose(stack):
    """Callable map for a stack or a sequence of stacks."""
    if isinstance(stack, MapStack):
        return ComposedMap([stack])
    return ComposedMap(list(stack))


def level_map(tree, n, active=None):
    """The level-``n`` map: every (active) level-``n`` box stretched by its own delta.

    Parameters
    ----------
    active : bool ndarray, optional
        Mask over the level-``n`` grid of boxes that have not stopped; stopped
        boxes get the identity.
    """
    d = tree.stretch_factor(n)
    if active is not None:
        d = np.where(active, d, 0.0)
    iy, ix = np.nonzero(d)
    return MapStack([StackLevel.from_boxes(n, iy, ix, d[iy, ix])], provenance=f"level-{n}")


# ---------------------------------------------------------------------------
# configuration

@dataclass
class StopConfig:
    """Thresholds for the stopping rules and the expansion step.

    ``eps3`` defaults to ``min(gamma, 1 - gamma_prime) / 2``, ``eps4`` to
    ``eta / 200`` and ``eps1`` to ``eta / 100``.  ``eps2`` defaults to the
    square of the tall-box stretch factor for which Psi stays
    ``(1 + eta)``-bi-Lipschitz, see :func:`case2_deltas`.
    """

    eta: float = 0.5
    gamma: float = 0.2
    gamma_prime: float = 0.2
    eps1: float = None
    eps2: float = None
    eps3: float = None
    eps4: float = None
    max_depth: int = None
    q: int = 8
    mc_samples: int = 200_000
    seed: int = 0
    seam_samples: int = SEAM_SAMPLES
    case2_delta: tuple = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not (0 < self.gamma < 1 - self.gamma_prime < 1):
            raise ConfigError("need 0 < gamma < 1 - gamma_prime < 1")
        if self.eps1 is None:
            self.eps1 = self.eta / 100.0
        if self.eps3 is None:
            self.eps3 = 0.5 * min(self.gamma, 1.0 - self.gamma_prime)
        if self.eps4 is None:
            self.eps4 = self.eta / 200.0
        if self.case2_delta is None:
            self.case2_delta = case2_deltas(self.eta)
        self.case2_delta = tuple(float(x) for x in self.case2_delta)
        if self.eps2 is None:
            self.eps2 = min(self.case2_delta) ** 2
        if self.max_depth is None:
            self.max_depth = max(1, 2 * self.q - 2)
        if min(self.eps1, self.eps2, self.eps3, self.eps4) <= 0:
            raise ConfigError("stopping thresholds must be positive")
        if not 1 <= self.max_depth <= 2 * self.q + 1:
            raise ConfigError(f"max_depth must lie in 1..{2 * self.q + 1}")

    def to_dict(self):
        d = asdict(self)
        d["case2_delta"] = list(self.case2_delta)
        return d


def case2_deltas(eta):
    """Largest admissible stretch factors ``(square, tall box)`` for a ``(1+eta)`` bound."""
    return calibrate_delta(eta, frame_ratio(True)), calibrate_delta(eta, frame_ratio(False))


# ---------------------------------------------------------------------------
# stopping rules

@dataclass(frozen=True)
class StopVerdict:
    box: DyadicBox
    reason: str
    statistic: float
    threshold: float


@dataclass
class Antichain:
    """Result of :func:`stop_scan`: leaves with reasons and the stretch stack above them."""

    leaves: dict
    stack: MapStack
    config: StopConfig
    measure: float
    masses: dict = field(default_factory=dict)
    internal: dict = field(default_factory=dict)   # level -> (iy, ix) of non-stopped boxes

    def verdicts(self):
        thr = self.thresholds()
        out = []
        for lev in sorted(self.leaves):
            iy, ix, code, stat = self.leaves[lev]
            for a, b, c, s in zip(iy, ix, code, stat):
                reason = REASONS[int(c)]
                out.append(StopVerdict(DyadicBox(lev, int(a), int(b)), reason, float(s), thr[reason]))
        return out

    def thresholds(self):
        c = self.config
        return {"tau1": c.eps1, "tau2": c.eps2, "tau3": c.eps3, "tau4-guard": c.eps4,
                "depth": float(c.max_depth)}

    def stopped_before(self, level):
        """Probability mass of leaves at levels below ``level``."""
        return sum(lvl_mass(lev, len(v[0])) for lev, v in self.leaves.items() if lev < level)


def lvl_mass(level, count):
    return count * 2.0 ** -(level - 1)


def _guard_points(n, iy, ix):
    """Nine interior sample points per box, shape (k, 9, 2)."""
    w, h = level_extent(n)
    f = np.array([1.0 / 6, 0.5, 5.0 / 6])
    fx, fy = np.meshgrid(f, f)
    x = (ix * w)[:, None] + w * fx.ravel()[None, :]
    y = (iy * h)[:, None] + h * fy.ravel()[None, :]
    return np.stack([x, y], -1)


def stop_scan(tree, config):
    """Breadth-first descent of the density tree applying the four stopping rules.

    At each live box of level ``n`` the statistics are, in order:

    * ``tau1``: sum over ancestors ``i < n`` of reweighted squared increments
      ``(|Delta_i| 2**(w_i/10))**2`` where ``w_i = beta_i ^ (n - i)`` counts
      the levels at which the chain met ancestor ``i``'s blown-up twists or
      (after mapping through the intermediate levels) its seams;
    * ``tau2``: ``Delta_n ** 2``;
    * ``tau3``: ``|rho_n - lambda(A)|``;
    * ``tau4-guard``: max over nine points of ``|Phi_n' - I|_inf`` for the
      composition including this box's own stretch.

    The first statistic above its threshold stops the box; live boxes at
    ``max_depth`` stop with reason ``depth``.  Non-stopped boxes are stretched
    by ``delta = Delta / rho`` and make up the returned stack.
    """
    lam = tree.measure
    prof = default_profile()
    m = min(config.max_depth, tree.max_level)
    thr = (config.eps1, config.eps2, config.eps3, config.eps4)
    iy = np.zeros(1, dtype=np.int64)
    ix = np.zeros(1, dtype=np.int64)
    weights = np.zeros((1, 0))
    mags = np.zeros((1, 0))
    stack_levels = {}
    leaves = {}
    internal = {}
    for n in range(1, m + 1):
        k = iy.size
        if k == 0:
            break
        rho = tree.density(n)[iy, ix]
        inc = tree.increment(n)[iy, ix]
        dlt = tree.stretch_factor(n)[iy, ix]
        anc = [ancestor_indices(iy, ix, n, i) for i in range(1, n)]
        for i in range(1, n):
            a_iy, a_ix = anc[i - 1]
            hit = twist_hits(i, a_iy, a_ix, n, iy, ix)
            weights[:, i - 1] = np.where(hit, n - i, weights[:, i - 1])
        if config.seam_samples and n > 1 and np.any(mags > 0):
            pts = box_boundary_samples(n, iy, ix, config.seam_samples)
            for i in range(n - 1, 0, -1):
                need = mags[:, i - 1] > 0
                if np.any(need):
                    a_iy, a_ix = anc[i - 1]
                    hit = seam_hits(i, a_iy[need], a_ix[need], pts[need])
                    col = weights[need, i - 1]
                    weights[need, i - 1] = np.where(hit, n - i, col)
                if i in stack_levels:
                    pts = _level_apply(stack_levels[i], pts.reshape(-1, 2), prof).reshape(pts.shape)
        stats = np.zeros((k, 4))
        stats[:, 0] = np.sum((mags * 2.0 ** (weights / 10.0)) ** 2, axis=1)
        stats[:, 1] = inc * inc
        stats[:, 2] = np.abs(rho - lam)
        early = (stats[:, 0] > thr[0]) | (stats[:, 1] > thr[1]) | (stats[:, 2] > thr[2])
        cand = ~early
        if np.any(cand):
            stats[cand, 3] = _guard_statistic(n, iy[cand], ix[cand], dlt[cand], stack_levels, prof)
        over = stats > np.array(thr)
        code = np.where(over.any(axis=1), np.argmax(over, axis=1), -1)
        if n == m:
            code = np.where(code < 0, REASONS.index("depth"), code)
        stop = code >= 0
        if np.any(stop):
            s_code = code[stop]
            s_stat = np.where(s_code < 4, stats[stop, np.minimum(s_code, 3)], float(n))
            leaves[n] = (iy[stop], ix[stop], s_code, s_stat)
        go = ~stop
        internal[n] = (iy[go], ix[go])
        if np.any(go & (dlt != 0)):
            sel = go & (dlt != 0)
            stack_levels[n] = StackLevel.from_boxes(n, iy[sel], ix[sel], dlt[sel])
        # children of continuing boxes
        iy, ix = iy[go], ix[go]
        w_go, m_go, inc_go = weights[go], mags[go], inc[go]
        if n % 2 == 1:
            c_iy = np.repeat(iy, 2)
            c_ix = np.stack([2 * ix, 2 * ix + 1], 1).ravel()
        else:
            c_iy = np.stack([2 * iy, 2 * iy + 1], 1).ravel()
            c_ix = np.repeat(ix, 2)
        weights = np.concatenate([np.repeat(w_go, 2, axis=0), np.zeros((c_iy.size, 1))], axis=1)
        mags = np.concatenate([np.repeat(m_go, 2, axis=0), np.repeat(np.abs(inc_go), 2)[:, None]],
                              axis=1)
        iy, ix = c_iy, c_ix
    stack = MapStack(stack_levels.values(), leaves, provenance="antichain")
    masses = {r: 0.0 for r in REASONS}
    for lev, (liy, _, code, _) in leaves.items():
        for c in range(len(REASONS)):
            masses[REASONS[c]] += lvl_mass(lev, int(np.count_nonzero(code == c)))
    return Antichain(leaves, stack, config, lam, masses, internal)


def _guard_statistic(n, iy, ix, dlt, stack_levels, prof):
    """max over nine points of |Phi_n' - I|_inf including the box's own stretch."""
    pts = _guard_points(n, iy, ix)
    k = iy.size
    flat = pts.reshape(-1, 2)
    jac = np.broadcast_to(np.eye(2), (flat.shape[0], 2, 2)).copy()
    own = StackLevel.from_boxes(n, iy, ix, dlt)
    chain = [own] + [stack_levels[i] for i in range(n - 1, 0, -1) if i in stack_levels]
    for lv in chain:
        jac = _level_jacobian(lv, flat, prof) @ jac
        flat = _level_apply(lv, flat, prof)
    dev = np.max(np.sum(np.abs(jac - np.eye(2)), axis=-1), axis=-1)
    return dev.reshape(k, 9).max(axis=1)


# ---------------------------------------------------------------------------
# martingale bookkeeping

@dataclass
class MartingaleReport:
    mean: float
    second_moment: float
    variance: float
    sum_squared_increments: float
    variance_identity_gap: float
    predicted_ratio: float            # E[rho_tau^2] / lambda(A)
    predicted_measure: float          # same quantity: measure of the image of A
    leaf_mass: float

    def to_dict(self):
        return asdict(self)


def martingale_diagnostics(tree, antichain):
    """Exact moments of the stopped density martingale.

    All sums are carried out in rational arithmetic on pixel counts, so the
    variance identity ``Var(rho_tau) = E sum_{i<tau} Delta_i^2`` and the
    expansion prediction are exact before the final conversion to float.
    """
    lam = Fraction(tree.pixels.count, tree.pixels.bits.size)
    mean = Fraction(0)
    second = Fraction(0)
    mass = Fraction(0)
    for lev, (iy, ix, _, _) in antichain.leaves.items():
        per = tree.pixels_per_box(lev)
        area = Fraction(1, 2 ** (lev - 1))
        c = tree.counts(lev)[iy, ix].astype(object)
        mean += area * Fraction(int(np.sum(c)), per)
        second += area * Fraction(int(np.sum(c * c)), per * per)
        mass += area * len(iy)
    incr = Fraction(0)
    for lev, (iy, ix) in antichain.internal.items():
        if iy.size == 0:
            continue
        per = tree.pixels_per_box(lev)
        c = tree.counts(lev)[iy, ix].astype(object)
        cc = tree.counts(lev + 1)
        first = cc[iy, 2 * ix] if lev % 2 == 1 else cc[2 * iy, ix]
        # Delta = first/(per/2) - c/per = (2 first - c)/per
        d = 2 * first.astype(object) - c
        incr += Fraction(1, 2 ** (lev - 1)) * Fraction(int(np.sum(d * d)), per * per)
    var = second - mean * mean
    ratio = second / lam if lam > 0 else Fraction(0)
    return MartingaleReport(
        mean=float(mean), second_moment=float(second), variance=float(var),
        sum_squared_increments=float(incr), variance_identity_gap=float(abs(var - incr)),
        predicted_ratio=float(ratio), predicted_measure=float(ratio), leaf_mass=float(mass))


# ---------------------------------------------------------------------------
# Case 2: disjoint boxes with large increments

def select_disjoint_boxes(tree, threshold, deltas, max_depth):
    """Disjoint boxes with ``|Delta| >= threshold`` maximising the exact gain.

    The gain of stretching a box by ``sign(Delta) * delta`` is
    ``delta * area * |Delta|``; a bottom-up dynamic program over the tree picks
    the best family.  ``deltas = (odd-level delta, even-level delta)``.
    Returns ``{level: (iy, ix)}`` and the total predicted gain.
    """
    m = min(max_depth, tree.max_level - 1)
    own = {}
    best = {}
    for n in range(m, 0, -1):
        inc = np.abs(tree.increment(n))
        dn = deltas[0] if n % 2 == 1 else deltas[1]
        own[n] = np.where(inc >= threshold, dn * 2.0 ** -(n - 1) * inc, 0.0)
        if n == m:
            best[n] = own[n]
        else:
            b = best[n + 1]
            kids = b[:, 0::2] + b[:, 1::2] if n % 2 == 1 else b[0::2, :] + b[1::2, :]
            best[n] = np.maximum(own[n], kids)
    chosen = {}
    covered = np.zeros((1, 1), dtype=bool)
    for n in range(1, m + 1):
        if n > 1:
            covered = np.repeat(covered, 2, axis=1) if (n - 1) % 2 == 1 else np.repeat(covered, 2, axis=0)
        take = (~covered) & (own[n] > 0) & (own[n] >= best[n])
        if np.any(take):
            chosen[n] = np.nonzero(take)
        covered = covered | take
    total = float(best[1][0, 0]) if m >= 1 else 0.0
    return chosen, total


def case2_stack(tree, config):
    """The Case 2 map: Psi with fixed stretch on disjoint high-increment boxes."""
    thr = math.sqrt(config.eps2)
    chosen, gain = select_disjoint_boxes(tree, thr, config.case2_delta, config.max_depth)
    levels = []
    mass = 0.0
    for n, (iy, ix) in chosen.items():
        d = config.case2_delta[0] if n % 2 == 1 else config.case2_delta[1]
        sign = np.sign(tree.increment(n)[iy, ix])
        levels.append(StackLevel.from_boxes(n, iy, ix, sign * d))
        mass += lvl_mass(n, iy.size)
    stack = MapStack(levels, provenance="case2")
    return stack, {"selected_mass": mass, "selected_boxes": int(sum(len(v[0]) for v in chosen.values())),
                   "dp_gain": gain, "threshold": thr}


# ---------------------------------------------------------------------------
# expansion

def expansion_step(pixelset, config):
    """One measure-increasing bi-Lipschitz step for the set ``A``.

    Builds both candidate maps, the stopped multiscale composition
    (Cases 1 and 3) and the disjoint-box stretch (Case 2), predicts
    their exact gains, and returns the better one with its metrics.

    Raises
    ------
    PreconditionError
        If ``lambda(A)`` lies outside ``[gamma, 1 - gamma_prime]``.
    NoProgressError
        If neither construction increases the measure.
    """
    px = ingest(pixelset)
    lam = px.measure
    if not (config.gamma <= lam <= 1.0 - config.gamma_prime):
        raise PreconditionError(
            f"measure {lam:.6g} outside [gamma, 1 - gamma'] = [{config.gamma}, {1 - config.gamma_prime}]")
    tree = DensityTree(px)
    chain = stop_scan(tree, config)
    mart = martingale_diagnostics(tree, chain)
    pred_a = chain.stack.predicted_measure(px)
    stack_b, info_b = case2_stack(tree, config)
    pred_b = stack_b.predicted_measure(px)
    gains = {"antichain": pred_a - lam, "case2": pred_b - lam}
    masses = chain.masses
    if masses["depth"] > config.eps1:
        warnings.warn(f"mass {masses['depth']:.3g} reached the depth cutoff {config.max_depth} "
                      f"unstopped; raise max_depth", RuntimeWarning, stacklevel=2)
    cases = {"case1": masses["tau1"] >= 1 / 6, "case2": masses["tau2"] >= 1 / 3,
             "case3": masses["tau3"] >= 1 / 6}
    metrics = {
        "measure": lam,
        "stop_masses": masses,
        "case_conditions": cases,
        "predicted_gain": gains,
        "martingale": mart.to_dict(),
        "case2": info_b,
        "stopped_before_half_depth": chain.stopped_before(config.max_depth / 2),
        "antichain_leaves": int(sum(len(v[0]) for v in chain.leaves.values())),
        "antichain_stack_boxes": chain.stack.box_count,
    }
    if max(gains.values()) <= 0:
        raise NoProgressError("no construction increases the measure", metrics)
    choice = "case2" if gains["case2"] >= gains["antichain"] else "antichain"
    stack = stack_b if choice == "case2" else chain.stack
    stack.meta.update({"eta": config.eta, "choice": choice, "measure_before": lam,
                       "predicted_measure": lam + gains[choice]})
    metrics["choice"] = choice
    metrics["gain"] = gains[choice]
    return stack, metrics


def rasterize_image(stack, pixelset):
    """Pixel set of ``stack(A)`` by testing whether pixel-centre preimages lie in ``A``."""
    px = ingest(pixelset)
    centres = px.pixel_centres().reshape(-1, 2)
    pre = stack.inverse(centres)
    return type(px)(px.contains(pre).reshape(px.bits.shape))


@dataclass
class ExpansionResult:
    stacks: list
    trace: list
    pixels: object
    c0_hat: float = 1.0
    steps: int = 0
    lipschitz: object = None

    @property
    def map(self):
        return ComposedMap(self.stacks)


def step_budget(gamma, gamma_prime, min_gain):
    """n0 = ceil((1 - gamma' - gamma) / eps) + 1."""
    return int(math.ceil((1.0 - gamma_prime - gamma) / min_gain)) + 1


def expand_to_target(pixelset, gamma, gamma_prime, eta, min_gain=0.005, lipschitz_pairs=20_000,
                     seed=0, **overrides):
    """Iterate :func:`expansion_step` until the measure reaches ``1 - gamma_prime``.

    The image is re-rasterised after every step.  The budget is
    ``n0 = ceil((1 - gamma' - gamma) / min_gain) + 1`` steps.  The returned
    ``c0_hat`` is the empirical bi-Lipschitz constant of the composed map.

    Raises
    ------
    BudgetExhaustedError
        With the per-step trace when ``n0`` steps do not suffice.
    """
    from .verify import estimate_lipschitz

    px = ingest(pixelset)
    if px.measure < gamma:
        raise PreconditionError(f"measure {px.measure:.6g} below gamma = {gamma}")
    config = StopConfig(eta=eta, gamma=gamma, gamma_prime=gamma_prime, q=px.q, seed=seed, **overrides)
    budget = step_budget(gamma, gamma_prime, min_gain)
    stacks, trace = [], []
    target = 1.0 - gamma_prime
    while px.measure < target:
        if len(stacks) >= budget:
            raise BudgetExhaustedError(
                f"{budget} steps reached measure {px.measure:.6g} < {target}", trace,
                ExpansionResult(stacks, trace, px, steps=len(stacks)))
        stack, metrics = expansion_step(px, config)
        nxt = rasterize_image(stack, px)
        trace.append({"step": len(stacks) + 1, "measure_before": px.measure,
                      "predicted_gain": metrics["gain"], "raster_measure": nxt.measure,
                      "raster_gain": nxt.measure - px.measure, "choice": metrics["choice"],
                      "boxes": stack.box_count, "stop_masses": metrics["stop_masses"],
                      "case2_boxes": metrics["case2"]["selected_boxes"]})
        stacks.append(stack)
        px = nxt
    result = ExpansionResult(stacks, trace, px, steps=len(stacks))
    if stacks:
        rep = estimate_lipschitz(result.map, n_pairs=lipschitz_pairs, seed=seed)
        result.c0_hat = rep.constant
        result.lipschitz = rep
    return result
