"""Acceptance criteria 1-12; every test prints one PASS/FAIL line."""
import json
import math
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest

from bilipexpand import psi, psi_inverse, psi_jacobian
from bilipexpand.cli import main
from bilipexpand.dyadic import DensityTree, PixelSet, ingest
from bilipexpand.multiscale import (MapStack, StackLevel, StopConfig, compose, expand_to_target,
                                    expansion_step, martingale_diagnostics, stop_scan)
from bilipexpand.poisson import (embed, event_holds, kappa_cells, sample_given_event,
                                 sample_poisson, solve_delta_prime, build_stretch)
from bilipexpand.verify import (boundary_samples, estimate_lipschitz,
                                estimate_pushforward_measure, finite_difference_jacobian,
                                jacobian_deviation_ratio, rng_for)
from test_stretch import away_from_loci

LOOSE = dict(eps1=0.05, eps2=0.05, eps3=0.15, eps4=10.0)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_criterion_01_identity_limit(report):
    t = time.perf_counter()
    g = (np.arange(100) + 0.5) / 100
    pts = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    err = float(np.max(np.abs(psi(pts, 0.0) - pts)))
    dt = time.perf_counter() - t
    report(1, err <= 1e-9 and dt < 5, f"max |Psi_0(x) - x| = {err:.3g} on 10^4 points, {dt:.2f} s")


def test_criterion_02_boundary_fixing(report):
    b = boundary_samples(1000, seed=2)
    worst = {d: float(np.max(np.abs(psi(b, d) - b))) for d in (0.1, -0.1, 0.5, -0.5)}
    report(2, max(worst.values()) <= 1e-9, f"max boundary displacement {max(worst.values()):.3g}")


def _subsets():
    """Analytic subsets with known areas; three in each half."""
    def disk(cx, cy, r):
        return (lambda p: np.hypot(p[:, 0] - cx, p[:, 1] - cy) < r), math.pi * r * r

    def triangle(p):
        return (p[:, 0] > 0.55) & (p[:, 1] > 0.05) & (p[:, 1] < 0.05 + (p[:, 0] - 0.55) * 2)

    def annulus(p):
        d = np.hypot(p[:, 0] - 0.25, p[:, 1] - 0.3)
        return (d > 0.1) & (d < 0.2)

    def wedge(p):
        return (p[:, 0] > 0.6) & (p[:, 0] < 0.95) & (np.abs(p[:, 1] - 0.6) < 0.5 * (p[:, 0] - 0.6))

    left = [disk(0.25, 0.7, 0.2), (annulus, math.pi * 0.03),
            ((lambda p: (p[:, 0] < 0.5) & (p[:, 1] < p[:, 0])), 0.125)]
    right = [disk(0.75, 0.25, 0.2), (triangle, 0.5 * 0.45 * 0.9), (wedge, 0.35 * 0.175)]
    return left, right


def test_criterion_03_area_scaling(report):
    n = 1_000_000
    y = rng_for(33).random((n, 2))
    left, right = _subsets()
    worst = 0.0
    rows = []
    for d in (0.1, 0.3, 0.5):
        x = psi_inverse(y, d)
        cases = [((lambda p: p[:, 0] < 0.5), 0.5 * (1 + d), "left half")]
        cases += [(f, (1 + d) * a, "left subset") for f, a in left]
        cases += [(f, (1 - d) * a, "right subset") for f, a in right]
        for f, expected, _ in cases:
            p = np.count_nonzero(f(x)) / n
            sigma = math.sqrt(expected * (1 - expected) / n)
            worst = max(worst, abs(p - expected) / sigma)
        rows.append(d)
    report(3, worst <= 3, f"worst |MC - (1 +- delta) area| = {worst:.2f} sigma over 21 sets, N = 10^6")


def test_criterion_04_bijectivity(report):
    rng = np.random.default_rng(4)
    pts = rng.random((10_000, 2))
    errs = [float(np.max(np.abs(psi_inverse(psi(pts, d), d) - pts))) for d in (-0.5, 0.1, 0.5)]
    levels = []
    for lev in range(1, 7):
        rows, cols = 2 ** ((lev - 1) // 2), 2 ** (lev // 2)
        iy, ix = np.nonzero(rng.random((rows, cols)) < 0.6)
        levels.append(StackLevel.from_boxes(lev, iy, ix, rng.uniform(-0.4, 0.4, iy.size)))
    f = compose(MapStack(levels))
    errs.append(float(np.max(np.abs(f.inverse(f.evaluate(pts)) - pts))))
    report(4, max(errs) <= 1e-8, f"round trip max {max(errs):.3g} (Psi and 6-level stack)")


def test_criterion_05_jacobian_bound(report):
    ratios = {d: jacobian_deviation_ratio(d, 10_000, seed=5) for d in (0.01, 0.05, 0.1)}
    spread = max(ratios.values()) / min(ratios.values())
    rng = np.random.default_rng(55)
    pts = rng.random((4000, 2))
    pts = pts[away_from_loci(pts, 5e-3)]
    fd = max(float(np.max(np.abs(psi_jacobian(pts, d) -
                                 finite_difference_jacobian(lambda p: psi(p, d), pts, 1e-7))))
             for d in (0.01, 0.05, 0.1))
    detail = (f"sup|J - I|/delta = " + ", ".join(f"{r:.1f}" for r in ratios.values())
              + f" (spread x{spread:.2f}); analytic vs FD {fd:.2g}")
    report(5, spread <= 2 and fd <= 1e-5, detail)


def test_criterion_06_midline(report):
    out = psi(np.array([0.25, 0.5]), 0.5)
    err = float(np.max(np.abs(out - [0.375, 0.5])))
    report(6, err <= 1e-12, f"Psi_0.5(0.25, 0.5) = ({out[0]:.17g}, {out[1]:.17g})")


def _random_sets(count, seed):
    rng = np.random.default_rng(seed)
    side = 256
    c = (np.arange(side) + 0.5) / side
    xx, yy = np.meshgrid(c, c)
    for k in range(count):
        if k % 2 == 0:
            yield PixelSet(rng.random((side, side)) < rng.uniform(0.2, 0.8))
        else:
            bits = np.zeros((side, side), dtype=bool)
            for _ in range(rng.integers(3, 9)):
                cx, cy, r = rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.25)
                bits |= np.hypot(xx - cx, yy - cy) < r
            yield PixelSet(bits)


def test_criterion_07_martingale_identities(report):
    worst_var, parent_ok, sizes = 0.0, True, []
    for px in _random_sets(20, 7):
        tree = DensityTree(px)
        chain = stop_scan(tree, StopConfig(q=8, **LOOSE))
        mart = martingale_diagnostics(tree, chain)
        worst_var = max(worst_var, mart.variance_identity_gap)
        sizes.append(chain.stack.box_count)
        for lev in range(1, tree.max_level):
            c, cc = tree.counts(lev), tree.counts(lev + 1)
            kids = cc[:, 0::2] + cc[:, 1::2] if lev % 2 == 1 else cc[0::2, :] + cc[1::2, :]
            parent_ok &= bool(np.array_equal(kids, c))
        # parent mean in exact arithmetic at the root
        per = tree.pixels_per_box(2)
        c2 = tree.counts(2).ravel()
        parent_ok &= (Fraction(int(c2[0]), per) + Fraction(int(c2[1]), per)) / 2 == \
            Fraction(int(tree.counts(1)[0, 0]), tree.pixels_per_box(1))
    report(7, worst_var <= 1e-12 and parent_ok,
           f"variance identity gap {worst_var:.3g}, parent mean exact: {parent_ok}, "
           f"stack boxes {min(sizes)}..{max(sizes)} over 20 sets")


def test_criterion_08_expansion_identity(report):
    worst = 0.0
    for k, px in enumerate(_random_sets(10, 8)):
        tree = DensityTree(px)
        chain = stop_scan(tree, StopConfig(q=8, **LOOSE))
        pred = martingale_diagnostics(tree, chain).predicted_measure
        mc = estimate_pushforward_measure(compose(chain.stack), px, n_samples=200_000, seed=k)
        worst = max(worst, abs(mc.estimate - pred) / mc.stderr)
    report(8, worst <= 3, f"worst |MC - E[rho^2]/lambda| = {worst:.2f} sigma over 10 sets")


def test_criterion_09_single_step(report):
    rows, ok = [], True
    for shape in ("left-half", "disk 0.5 0.5 0.3", "checkerboard 8 0.6"):
        t = time.perf_counter()
        px = ingest(shape, q=8)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            stack, metrics = expansion_step(px, StopConfig(eta=0.5, gamma=0.2, gamma_prime=0.2, q=8))
        mc = estimate_pushforward_measure(compose(stack), px, n_samples=200_000, seed=9)
        lip = estimate_lipschitz(compose(stack), n_pairs=20_000, seed=9).constant
        dt = time.perf_counter() - t
        gain = metrics["gain"]
        ok &= gain >= 0.005 and lip <= 1.5 and dt < 60 and mc.within(px.measure + gain, 4)
        rows.append(f"{shape.split()[0]}: gain {gain:.2e}, Lip {lip:.3f}, {dt:.0f} s")
    report(9, ok, "; ".join(rows))


def test_criterion_10_expand_disk(report):
    eta = 16.0
    res = expand_to_target("disk 0.5 0.5 0.3", gamma=0.2, gamma_prime=0.2, eta=eta,
                           lipschitz_pairs=20_000)
    meas = [res.trace[0]["measure_before"]] + [t["raster_measure"] for t in res.trace]
    monotone = bool(np.all(np.diff(meas) >= 0))
    ok = res.pixels.measure >= 0.8 and res.c0_hat <= (1 + eta) ** res.steps and monotone
    report(10, ok, f"measure {meas[0]:.4f} -> {res.pixels.measure:.4f} in {res.steps} steps, "
                   f"C0_hat {res.c0_hat:.1f} <= (1+eta)^steps, monotone {monotone}")


def test_criterion_11_poisson(report):
    n, kappa, eps = 6, 0.5, 7.0
    dp = solve_delta_prime(kappa, eps)
    valid, events, runs, pairs = 0, 0, 0, []
    for s in range(100):
        x = sample_poisson(n, 1.0, seed=2 * s)
        y = sample_poisson(n, 10.0, seed=2 * s + 1)
        st = build_stretch(x, 0.3, dp, seed=s, lipschitz_pairs=5000)
        cells = kappa_cells(st[2], n, kappa, st[0].evaluate(x.points / n) * n)
        events += event_holds(y, cells, kappa)
        for sy in ([y] if event_holds(y, cells, kappa) else []) + \
                [sample_given_event(n, 10.0, cells, kappa, seed=10**6 + s)]:
            rep = embed(x, sy, 0.3, eps, s, kappa, dp, stretch=st, n_pairs=10_000)
            runs += 1
            valid += rep.valid
            pairs.append(rep.n_pairs)
    report(11, valid == runs, f"{valid}/{runs} event-E runs valid (pairs {min(pairs)}..{max(pairs)}); "
                              f"unconditional event frequency {events}/100")


def test_criterion_12_determinism(report, tmp_path, monkeypatch):
    argv = ["--shape", "disk 0.5 0.5 0.3", "--q", "6", "--gamma", "0.2", "--gamma-prime", "0.6",
            "--eta", "16", "--lipschitz-pairs", "3000"]
    blobs = []
    for threads in ("1", "8"):
        monkeypatch.setenv("BILIPEXPAND_THREADS", threads)
        (tmp_path / threads).mkdir()
        monkeypatch.chdir(tmp_path / threads)   # same relative paths in both runs
        assert main(["stretch", *argv, "--out", "s"]) == 0
        assert main(["verify", "s/map.stack", "--out", "v"]) == 0
        assert main(["poisson", "--n", "4", "--seeds", "2", "--q", "6", "--pairs", "500",
                     "--out", "p"]) == 0
        blobs.append([(tmp_path / threads / sub / "metrics.json").read_bytes() for sub in "svp"])
    same = blobs[0] == blobs[1]
    report(12, same, f"stretch/verify/poisson metrics byte-identical for threads 1 and 8: {same}")
