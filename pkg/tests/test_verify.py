import numpy as np
import pytest
from numpy.testing import assert_allclose

from bilipexpand import psi, psi_inverse
from bilipexpand.multiscale import MapStack, compose
from bilipexpand.verify import (FunctionMap, boundary_samples, check_boundary_and_bijection,
                                estimate_lipschitz, estimate_pushforward_measure, identity_map)


def psi_map(delta):
    return FunctionMap(lambda p: psi(p, delta), lambda p: psi_inverse(p, delta))


def midline_stretch(delta):
    """Piecewise-linear stretch of the first coordinate, as Psi acts on the midline."""
    def g(x):
        return np.where(x <= 0.5, (1 + delta) * x, 1 - (1 - delta) * (1 - x))

    def ginv(y):
        return np.where(y <= 0.5 * (1 + delta), y / (1 + delta), 1 - (1 - y) / (1 - delta))

    return FunctionMap(lambda p: np.stack([g(p[:, 0]), p[:, 1]], -1),
                       lambda p: np.stack([ginv(p[:, 0]), p[:, 1]], -1))


def test_identity_ratios():
    rep = estimate_lipschitz(identity_map(), n_pairs=5000, seed=1)
    assert_allclose([rep.forward, rep.inverse], 1.0, rtol=1e-9)


def test_midline_ratio():
    d = 0.3
    x = np.linspace(0, 1, 101)
    mid = np.stack([x, np.full_like(x, 0.5)], -1)
    assert_allclose(psi(mid, d), midline_stretch(d).evaluate(mid), atol=1e-12)
    rep = estimate_lipschitz(midline_stretch(d), n_pairs=5000, seed=2, stratified=0.0)
    # random pair directions approach the horizontal sup from below
    assert 1 + d - 1e-4 <= rep.forward <= 1 + d + 1e-12
    assert 1 / (1 - d) - 1e-4 <= rep.inverse <= 1 / (1 - d) + 1e-12


def test_psi_ratio_seed_stable():
    a = estimate_lipschitz(psi_map(0.1), n_pairs=20_000, seed=11).constant
    b = estimate_lipschitz(psi_map(0.1), n_pairs=20_000, seed=12).constant
    assert a > 1 and abs(a - b) <= 0.1 * max(a, b)


def test_report_scales():
    rep = estimate_lipschitz(psi_map(0.2), n_pairs=3000, seed=0)
    assert len(rep.per_scale_forward) == len(rep.scales)
    assert max(rep.per_scale_forward) == rep.forward
    assert rep.to_dict()["constant"] == rep.constant


def test_identity_pushforward():
    rep = estimate_pushforward_measure(identity_map(), "disk 0.4 0.4 0.3", n_samples=100_000, seed=0)
    assert rep.within(np.pi * 0.09, sigmas=3.5)       # raster error ~ 1e-3 below 3 sigma
    assert_allclose(rep.stderr, np.sqrt(rep.estimate * (1 - rep.estimate) / 100_000))


@pytest.mark.parametrize("fmap", [psi_map(0.3), compose(MapStack.single(0.3))])
def test_left_half_pushforward(fmap):
    rep = estimate_pushforward_measure(fmap, "left-half", n_samples=200_000, seed=4)
    assert rep.within(0.65)


def test_stack_prediction_reported():
    rep = estimate_pushforward_measure(compose(MapStack.single(-0.2)), "left-half", n_samples=20_000)
    assert_allclose(rep.predicted, 0.4, atol=1e-12)


def test_mc_unbiased_over_repetitions():
    f = psi_map(0.4)
    est = np.array([estimate_pushforward_measure(f, "rect 0 0 0.5 0.5", n_samples=5000, seed=s).estimate
                    for s in range(50)])
    se = np.sqrt(0.35 * 0.65 / 5000)
    # mean of 50 draws within 3 standard errors of the mean
    exact = estimate_pushforward_measure(f, "rect 0 0 0.5 0.5", n_samples=400_000, seed=999).estimate
    assert abs(est.mean() - exact) <= 3 * se / np.sqrt(50) + 3 * np.sqrt(exact * (1 - exact) / 400_000)


def test_identity_bijection():
    rep = check_boundary_and_bijection(identity_map(), n_boundary=200, n_interior=2000)
    assert rep.passed and rep.boundary_max == 0 and rep.roundtrip_max == 0


def test_psi_bijection():
    rep = check_boundary_and_bijection(psi_map(0.5), n_boundary=1000, n_interior=10_000, seed=3)
    assert rep.passed


def test_broken_map_located():
    def shifted(p):
        out = p.copy()
        on_edge = (p[:, 1] == 0.0) & (p[:, 0] > 0) & (p[:, 0] < 1)
        out[on_edge, 0] += 1e-3 * np.sin(np.pi * p[on_edge, 0])
        return out

    rep = check_boundary_and_bijection(FunctionMap(shifted, lambda p: p.copy()), n_boundary=500,
                                       n_interior=1000, seed=0)
    assert not rep.passed and not rep.checks["boundary"]
    assert rep.boundary_max > 1e-4
    x, y = rep.boundary_witness
    assert y == 0.0 and abs(x - 0.5) < 0.1


def test_boundary_samples_corners():
    b = boundary_samples(10, seed=0)
    assert_allclose(b[:4], [[0, 0], [1, 0], [1, 1], [0, 1]])
    on = (b == 0) | (b == 1)
    assert np.all(on.any(axis=1))
