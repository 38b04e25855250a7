import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bilipexpand.errors import ConfigError, PreconditionError
from bilipexpand.poisson import (PointSample, _cell_log, build_stretch, delta_prime_interval,
                                 embed, event_holds, kappa_cells, occupied_pixelset,
                                 sample_given_event, sample_poisson, solve_delta_prime,
                                 solve_kappa)
from bilipexpand.verify import identity_map

KAPPA, EPS = 0.5, 7.0


def exact_event_probability(cells, intensity, kappa):
    """P(every cell of B occupied and every other cell empty)."""
    lam = intensity * kappa * kappa
    b = int(cells.sum())
    return (1 - math.exp(-lam)) ** b * math.exp(-lam * (cells.size - b))


def test_zero_intensity():
    s = sample_poisson(8, 0.0, seed=1)
    assert s.k == 0 and len(s.points) == 0


def test_bad_arguments():
    with pytest.raises(ConfigError):
        sample_poisson(1, 1.0)
    with pytest.raises(ConfigError):
        sample_poisson(4, -1.0)


def test_sample_determinism():
    a, b = sample_poisson(6, 2.0, seed=9), sample_poisson(6, 2.0, seed=9)
    np.testing.assert_array_equal(a.points, b.points)
    assert np.all((a.points >= 0) & (a.points < 6))


def test_occupied_count_and_point_count():
    ks, counts = [], []
    for seed in range(200):
        s = sample_poisson(8, 1.0, seed=seed)
        ks.append(s.k)
        counts.append(len(s.points))
    p = 1 - math.exp(-1)
    assert abs(np.mean(ks) - 64 * p) <= 3 * math.sqrt(64 * p * (1 - p) / 200)
    assert abs(np.mean(counts) - 64) <= 3 * math.sqrt(64 / 200)


def test_occupancy_matches_points():
    s = sample_poisson(5, 0.7, seed=3)
    occ = np.zeros((5, 5), dtype=bool)
    occ[s.points[:, 1].astype(int), s.points[:, 0].astype(int)] = True
    np.testing.assert_array_equal(occ, s.occupancy)
    assert occupied_pixelset(s, q=6).measure == pytest.approx(s.k / 25, abs=0.05)


def test_solvers_hold_equality():
    kappa = solve_kappa(EPS)
    assert abs(_cell_log(kappa) + EPS) <= 1e-9
    lo, hi = delta_prime_interval(KAPPA, EPS)
    assert lo == 0.0 and hi == pytest.approx(1.0)
    # kappa = 1, eps = 0.8: feasible set [0, 0.63...], the preferred 0.9 maps to the root
    d = solve_delta_prime(1.0, 0.8, prefer=0.9)
    assert 0.6 < d < 0.7
    assert abs((1 - d) * _cell_log(1.0) - d + 0.8) <= 1e-9


def test_delta_prime_infeasible():
    with pytest.raises(ConfigError):
        solve_delta_prime(0.5, 6.0)


def test_event_frequency_matches_exact_probability():
    # all 16 cells of side 1/2 on [0,2]^2 must be hit: P = (1 - e^-2.5)^16 ~ 0.25
    cells = np.ones((4, 4), dtype=bool)
    p = exact_event_probability(cells, 10.0, KAPPA)
    hits = [event_holds(sample_poisson(2, 10.0, seed=s), cells, KAPPA) for s in range(600)]
    assert abs(np.mean(hits) - p) <= 3 * math.sqrt(p * (1 - p) / 600)


def test_event_outside_b_fails():
    cells = np.zeros((4, 4), dtype=bool)
    cells[0, 0] = True
    inside = PointSample.from_points(2, np.array([[0.1, 0.1]]))
    outside = PointSample.from_points(2, np.array([[0.1, 0.1], [1.9, 1.9]]))
    assert event_holds(inside, cells, KAPPA) and not event_holds(outside, cells, KAPPA)


def test_conditional_sampler_satisfies_event():
    rng = np.random.default_rng(2)
    for s in range(20):
        cells = rng.random((12, 12)) < 0.6
        y = sample_given_event(6, 10.0, cells, KAPPA, seed=s)
        assert event_holds(y, cells, KAPPA)


def test_conditional_cell_counts_are_truncated_poisson():
    cells = np.ones((4, 4), dtype=bool)
    counts = [len(sample_given_event(2, 2.0, cells, KAPPA, seed=s).points) for s in range(400)]
    lam = 2.0 * KAPPA ** 2
    mean = 16 * lam / (1 - math.exp(-lam))
    var1 = lam * (1 + lam) / (1 - math.exp(-lam)) - (lam / (1 - math.exp(-lam))) ** 2
    assert abs(np.mean(counts) - mean) <= 3 * math.sqrt(16 * var1 / 400)


def test_self_embedding():
    x = sample_poisson(6, 3.0, seed=5)
    stretch = (identity_map(), 1.0, occupied_pixelset(x), 0)
    rep = embed(x, x, delta=0.1, stretch=stretch, require_event=False)
    assert rep.M == 1.0 and rep.D == 0.0
    assert rep.C <= KAPPA * math.sqrt(2)


def test_precondition():
    x = sample_poisson(6, 0.05, seed=0)
    with pytest.raises(PreconditionError, match="k_X"):
        build_stretch(x, delta=0.5, delta_prime=0.2)


def test_unconditional_runs_report_event_rarely():
    """At n = 6 the event is a large deviation; observed hits match its exact probability."""
    probs, hits = [], []
    dp = solve_delta_prime(KAPPA, EPS)
    for s in range(4):
        x = sample_poisson(6, 1.0, seed=2 * s)
        y = sample_poisson(6, 10.0, seed=2 * s + 1)
        st = build_stretch(x, 0.3, dp, seed=s, lipschitz_pairs=2000)
        cells = kappa_cells(st[2], 6, KAPPA, st[0].evaluate(x.points / 6) * 6)
        probs.append(exact_event_probability(cells, 10.0, KAPPA))
        hits.append(event_holds(y, cells, KAPPA))
    assert max(probs) < 1e-3
    assert sum(hits) <= 1


@pytest.fixture(scope="module")
def cross_n():
    dp = solve_delta_prime(KAPPA, EPS)
    out = {}
    for n in (4, 6, 8):
        reps = []
        for s in range(10):
            x = sample_poisson(n, 1.0, seed=2 * s)
            st = build_stretch(x, 0.3, dp, seed=s, lipschitz_pairs=3000)
            cells = kappa_cells(st[2], n, KAPPA, st[0].evaluate(x.points / n) * n)
            y = sample_given_event(n, 10.0, cells, KAPPA, seed=10**6 + s)
            reps.append(embed(x, y, 0.3, EPS, s, KAPPA, dp, stretch=st))
        out[n] = reps
    return out


def test_cross_n_valid_and_bounded(cross_n):
    for reps in cross_n.values():
        for r in reps:
            assert r.valid
            assert np.isfinite([r.M, r.D, r.C]).all()
            assert r.D <= r.D_bound and r.C <= r.C_bound


def test_cross_n_coverage_constant(cross_n):
    med = [np.median([r.C for r in reps]) for reps in cross_n.values()]
    assert max(med) <= 2 * min(med)


def test_cross_n_stretch_constant(cross_n):
    med = [np.median([r.M for r in reps]) for reps in cross_n.values()]
    assert max(med) <= 2 * min(med), f"median M per n = {med}"
