import numpy as np
import pytest
from numpy.testing import assert_allclose

from bilipexpand.profile import HALF, Profile, default_profile, h_eval, solve_r0, theta
from conftest import H049_ORACLE, R0_ORACLE, THETA049_ORACLE


def test_h_vanishes_below_r1():
    assert h_eval(0.05, 0) == 0.0
    for k in range(4):
        assert h_eval(0.1, k) == 0.0


def test_h_closed_form_near_half():
    assert_allclose(h_eval(0.49, 0), H049_ORACLE, rtol=1e-13)


def test_h_derivatives_match_finite_differences():
    r = np.linspace(0.12, 0.45, 40)
    step = 1e-6
    for k in range(3):
        fd = (h_eval(r + step, k) - h_eval(r - step, k)) / (2 * step)
        assert_allclose(h_eval(r, k + 1), fd, rtol=2e-6)


def test_theta_values():
    assert_allclose(theta(0.05), np.pi / 2, rtol=0, atol=1e-15)
    assert_allclose(theta(0.49), THETA049_ORACLE, rtol=1e-12)


def test_theta_continuous_at_r0():
    prof = default_profile()
    below = theta(np.nextafter(prof.r0, 0.0))
    above = theta(np.nextafter(prof.r0, 1.0))
    assert abs(below - above) <= 1e-10


def test_r0_golden_and_residual():
    prof = default_profile()
    assert_allclose(prof.r0, R0_ORACLE, rtol=0, atol=1e-14)
    assert abs(2 * prof.r0 * h_eval(prof.r0) + prof.r0 ** 2 - 0.25) <= 1e-12
    assert prof.r0 > 0.1


def test_solve_r0_other_profile():
    prof = Profile(r1=0.05, exponent=4.0)
    r0 = solve_r0(prof)
    assert 0.05 < r0 < HALF
    assert abs(2 * r0 * prof.h(r0) + r0 ** 2 - 0.25) <= 1e-12


def test_theta_decreasing():
    r = np.linspace(0.01, 0.499, 500)
    th = theta(r)
    assert np.all(np.diff(th) <= 0)
    assert np.all((th > 0) & (th <= np.pi / 2))


def test_h_rejects_outside_domain():
    with pytest.raises(ValueError):
        h_eval(0.5)
