import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from bilipexpand import psi
from bilipexpand.dyadic import DensityTree, DyadicBox, ingest
from bilipexpand.errors import ConfigError, PreconditionError
from bilipexpand.multiscale import (ComposedMap, MapStack, StackLevel, StopConfig, compose,
                                    expand_to_target, expansion_step, level_map,
                                    martingale_diagnostics, stop_scan)
from bilipexpand.verify import (boundary_samples, check_boundary_and_bijection,
                                estimate_lipschitz, estimate_pushforward_measure)

LOOSE = dict(eps1=0.05, eps2=0.05, eps3=0.15, eps4=10.0)


def random_stack(rng, depth=6, fill=0.5, scale=0.3):
    levels = []
    for n in range(1, depth + 1):
        rows, cols = 2 ** ((n - 1) // 2), 2 ** (n // 2)
        mask = rng.random((rows, cols)) < fill
        iy, ix = np.nonzero(mask)
        levels.append(StackLevel.from_boxes(n, iy, ix, rng.uniform(-scale, scale, iy.size)))
    return MapStack(levels, provenance="random")


def test_empty_stack_is_identity(rng):
    f = compose(MapStack())
    pts = rng.random((500, 2))
    assert_array_equal(f.evaluate(pts), pts)
    assert_array_equal(f.inverse(pts), pts)
    assert_array_equal(f.jacobian(pts), np.broadcast_to(np.eye(2), (500, 2, 2)))


def test_single_level_matches_psi(rng):
    pts = rng.random((2000, 2))
    assert_allclose(compose(MapStack.single(0.37)).evaluate(pts), psi(pts, 0.37), atol=1e-14)


def test_six_level_roundtrip(rng):
    f = compose(random_stack(rng))
    pts = rng.random((10_000, 2))
    assert np.max(np.abs(f.inverse(f.evaluate(pts)) - pts)) <= 1e-8


def test_stack_boundary_fixed(rng):
    f = compose(random_stack(rng))
    b = boundary_samples(1000, seed=3)
    assert np.max(np.abs(f.evaluate(b) - b)) <= 1e-12


def test_two_level_configuration():
    stack = MapStack([StackLevel.from_boxes(1, [0], [0], [0.5]),
                      StackLevel.from_boxes(2, [0], [0], [-0.5])])
    rep = check_boundary_and_bijection(compose(stack), n_boundary=400, n_interior=4000, seed=1)
    assert rep.passed
    # the level-2 box keeps its boundary, so its image under the root stretch is the image of the box
    x = np.array([[0.25, 0.0], [0.5, 0.5], [0.0, 0.3]])
    assert_allclose(compose(stack).evaluate(x), psi(x, 0.5), atol=1e-12)


def test_stack_serialization_roundtrip(tmp_path, rng):
    stack = random_stack(rng, depth=4)
    stack.save(tmp_path / "s.json")
    back = MapStack.load(tmp_path / "s.json")
    pts = rng.random((300, 2))
    assert_array_equal(back.evaluate(pts), stack.evaluate(pts))
    chain = ComposedMap([stack, random_stack(rng, depth=3)])
    chain.save(tmp_path / "c.json", meta={"note": "x"})
    again = ComposedMap.load(tmp_path / "c.json")
    assert again.meta["note"] == "x"
    assert_array_equal(again.evaluate(pts), chain.evaluate(pts))


def test_duplicate_level_rejected():
    lv = StackLevel.from_boxes(1, [0], [0], [0.1])
    with pytest.raises(ConfigError):
        MapStack([lv, lv])
    with pytest.raises(ConfigError):
        StackLevel.from_boxes(1, [0], [0], [1.0])


def test_uniform_level_maps_are_identity():
    tree = DensityTree(ingest("all", q=5))
    for n in range(1, 6):
        assert level_map(tree, n).box_count == 0


def test_stop_config_defaults():
    c = StopConfig(eta=0.5, gamma=0.2, gamma_prime=0.3)
    assert c.eps3 == 0.5 * min(0.2, 0.7)
    assert c.eps4 == 0.5 / 200
    with pytest.raises(ConfigError):
        StopConfig(gamma=0.6, gamma_prime=0.5)


def test_left_half_stops_at_root():
    tree = DensityTree(ingest("left-half", q=6))
    chain = stop_scan(tree, StopConfig(eta=0.5, gamma=0.4, gamma_prime=0.4))
    (verdict,) = chain.verdicts()
    assert verdict.box == DyadicBox(1, 0, 0)
    assert verdict.reason in ("tau2", "tau3")
    assert verdict.statistic > verdict.threshold
    assert chain.stack.box_count == 0


def test_uniform_runs_to_depth():
    tree = DensityTree(ingest("all", q=4))
    chain = stop_scan(tree, StopConfig(gamma=0.2, gamma_prime=0.2, q=4))
    assert {v.reason for v in chain.verdicts()} == {"depth"}
    assert chain.stack.box_count == 0
    mart = martingale_diagnostics(tree, chain)
    assert mart.variance == 0 and mart.predicted_measure == 1.0


def test_verdict_soundness_and_determinism():
    tree = DensityTree(ingest("noise 0.5 4", q=6))
    cfg = StopConfig(eta=0.5, q=6, **LOOSE)
    a, b = stop_scan(tree, cfg), stop_scan(tree, cfg)
    va, vb = a.verdicts(), b.verdicts()
    assert [(v.box, v.reason, v.statistic) for v in va] == [(v.box, v.reason, v.statistic) for v in vb]
    for v in va:
        if v.reason != "depth":
            assert v.statistic > v.threshold
    # the leaves tile the square
    assert sum(2.0 ** -(v.box.level - 1) for v in va) == 1.0


def test_left_half_two_leaf_antichain():
    tree = DensityTree(ingest("left-half", q=6))
    chain = stop_scan(tree, StopConfig(q=6, max_depth=2, eps1=1, eps2=1, eps3=1, eps4=1e9))
    assert sorted(chain.leaves) == [2]
    mart = martingale_diagnostics(tree, chain)
    assert mart.predicted_ratio == 1.0
    assert mart.variance_identity_gap == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_variance_identity_exact(seed):
    rng = np.random.default_rng(seed)
    px = ingest(rng.random((64, 64)) < rng.uniform(0.2, 0.8))
    tree = DensityTree(px)
    mart = martingale_diagnostics(tree, stop_scan(tree, StopConfig(q=6, **LOOSE)))
    assert mart.variance_identity_gap <= 1e-12
    assert abs(mart.mean - px.measure) <= 1e-12


def test_expansion_prediction_matches_mc():
    px = ingest("noise 0.5 21", q=6)
    tree = DensityTree(px)
    chain = stop_scan(tree, StopConfig(q=6, **LOOSE))
    assert chain.stack.box_count > 0
    mart = martingale_diagnostics(tree, chain)
    assert_allclose(chain.stack.predicted_measure(px), mart.predicted_measure, atol=1e-12)
    mc = estimate_pushforward_measure(compose(chain.stack), px, n_samples=100_000, seed=2)
    assert mc.within(mart.predicted_measure, sigmas=3)


def test_case2_left_half():
    cfg = StopConfig(eta=0.5, gamma=0.4, gamma_prime=0.4)
    stack, metrics = expansion_step("left-half", cfg)
    assert metrics["choice"] == "case2"
    mass = metrics["case2"]["selected_mass"]
    assert metrics["gain"] >= cfg.eps2 * mass
    assert metrics["gain"] >= cfg.eps2 / 12


def test_uniform_rejected():
    with pytest.raises(PreconditionError):
        expansion_step("all", StopConfig())


def test_noise_step_gain_and_lipschitz():
    cfg = StopConfig(eta=0.5, q=8)
    px = ingest("noise 0.5 1", q=8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        stack, metrics = expansion_step(px, cfg)
    assert metrics["gain"] > 0
    mc = estimate_pushforward_measure(compose(stack), px, n_samples=200_000, seed=5)
    assert mc.within(px.measure + metrics["gain"], sigmas=3)
    assert estimate_lipschitz(compose(stack), n_pairs=5000, seed=1).constant <= 1.5


def test_already_at_target_takes_no_steps():
    res = expand_to_target("rect 0 0 0.85 1", gamma=0.2, gamma_prime=0.2, eta=0.5)
    assert res.steps == 0 and res.c0_hat == 1.0
    pts = np.random.default_rng(0).random((50, 2))
    assert_array_equal(res.map.evaluate(pts), pts)


def test_short_expansion_bounds():
    res = expand_to_target("disk 0.5 0.5 0.3", gamma=0.2, gamma_prime=0.7, eta=16,
                           lipschitz_pairs=3000)
    assert res.pixels.measure >= 0.3
    assert res.c0_hat <= 17.0 ** res.steps
    measures = [t["raster_measure"] for t in res.trace]
    assert np.all(np.diff([res.trace[0]["measure_before"]] + measures) >= 0)
