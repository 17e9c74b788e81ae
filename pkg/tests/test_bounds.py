import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdev.bounds import (bernstein_probe, cmd_envelope, lm21_bound, mdp_rate, normal_tail,
                         normal_tail_sandwich, th0_envelope)
from mdev.harness import min_prefactor

mpmath.mp.dps = 40


def mp_tail(x):
    return float(mpmath.ncdf(-mpmath.mpf(x)))


def test_normal_tail_against_high_precision():
    assert normal_tail(0.0) == 0.5
    assert normal_tail(1.0) == pytest.approx(0.1586553, abs=1e-7)
    assert normal_tail(-1.0) == pytest.approx(0.8413447, abs=1e-7)
    for x in np.linspace(-6, 6, 241):
        ref = mp_tail(x)
        assert abs(normal_tail(x) - ref) <= 1e-14
        assert abs(normal_tail(x) - ref) <= 1e-10 * ref
    assert normal_tail(20.0) == pytest.approx(mp_tail(20.0), rel=1e-12)


def test_sandwich_values_and_bracketing():
    lo, hi = normal_tail_sandwich(0.0)
    assert (lo, hi) == pytest.approx((0.3989423, 0.5641896), abs=1e-7)
    lo, hi = normal_tail_sandwich(1.0)
    assert (lo, hi) == pytest.approx((0.1209854, 0.1710991), abs=1e-7)
    x = np.linspace(0, 8, 200)
    lo, hi = normal_tail_sandwich(x)
    t = normal_tail(x)
    assert np.all(lo < t) and np.all(t < hi)
    with pytest.raises(ValueError):
        normal_tail_sandwich(-0.5)


def test_cmd_envelope():
    assert cmd_envelope(0.0, 0.01, 1.0) == pytest.approx(math.sqrt(0.01 * math.log(100)), abs=1e-15)
    # a hand-copied reference of 0.2146071 is off in the fifth digit
    assert cmd_envelope(0.0, 0.01, 1.0) == pytest.approx(0.2145966, abs=1e-7)
    assert cmd_envelope(0.0, 0.05, 3.0) == 3.0 * math.sqrt(0.05 * abs(math.log(0.05)))
    assert cmd_envelope(1.0, 0.01, 1.0) > cmd_envelope(0.0, 0.01, 1.0)
    cmd_envelope(0.01 ** -0.75, 0.01, 1.0)
    with pytest.raises(ValueError):
        cmd_envelope(1.01 * 0.01 ** -0.75, 0.01, 1.0)
    with pytest.raises(ValueError):
        cmd_envelope(-0.1, 0.01, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.001, 0.9), st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 10), st.floats(0.01, 10))
def test_cmd_envelope_monotone(eta, s, t, c1, c2):
    top = eta ** -0.75
    x1, x2 = sorted((s * top, t * top))
    assert cmd_envelope(x1, eta, c1) <= cmd_envelope(x2, eta, c1)
    lo, hi = sorted((c1, c2))
    assert cmd_envelope(x1, eta, lo) <= cmd_envelope(x1, eta, hi)


def test_lm21_values():
    assert lm21_bound(1.0, 1.0, 1.0, 1.0, 2.0) == pytest.approx(2 * math.exp(-0.25), abs=1e-15)
    assert lm21_bound(1.0, 1.0, 1.0, 1.0, 2.0) == pytest.approx(1.5576016, abs=1e-7)
    assert lm21_bound(1.0, 1.0, 1.0, 1.0, 2.0, form="derived") == pytest.approx(2 * math.exp(-0.125))
    assert lm21_bound(1e-9, 50.0, 0.5, 1.0, 3.0) == pytest.approx(3.0)
    x = np.linspace(0.1, 100, 500)
    assert np.all(np.diff(lm21_bound(x, 50.0, 0.7, 1.0, 3.0)) < 0)
    with pytest.raises(ValueError):
        lm21_bound(1.0, 0.5, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        lm21_bound(1.0, 5.0, 1.5, 1.0, 1.0)


@pytest.mark.parametrize("c", [0.5, 1.0])
@pytest.mark.parametrize("alpha", [0.5, 0.75, 1.0])
def test_lm21_piecewise_is_dominated_by_simplified(c, alpha):
    # the constant is existential: fit it on one grid, verify on a finer offset grid
    u_values = (10.0, 100.0, 1000.0)
    coarse = np.logspace(-2, 4, 300)
    c_alpha = max(min_prefactor(x * x / (u + x ** (2 - alpha)), p)
                  for u in u_values
                  for x, p in zip(coarse, lm21_bound(coarse, u, alpha, c, 1.0, form="piecewise")))
    assert c_alpha <= 1e3
    fine = np.logspace(-2.01, 4.01, 3001)
    for u in u_values:
        pw = lm21_bound(fine, u, alpha, c, 1.0, form="piecewise")
        live = pw > 1e-250  # below this both sides are subnormal noise
        assert np.all(pw[live] <= 1.05 * lm21_bound(fine[live], u, alpha, c, c_alpha))


def test_th0_envelope():
    assert th0_envelope(0.0, 0.25, 0.25, 1.0) == pytest.approx(2 * 0.25 * math.log(4), abs=1e-15)
    assert th0_envelope(0.0, 0.25, 0.25, 1.0) == pytest.approx(0.6931472, abs=1e-7)
    assert th0_envelope(2.0, 0.01, 0.01, 1.0) == pytest.approx(0.16 + 3 * 0.02 * math.log(100), abs=1e-15)
    assert th0_envelope(2.0, 0.01, 0.01, 1.0) == pytest.approx(0.4363, abs=1e-4)
    assert th0_envelope(1.3, 0.1, 0.3, 2.0) == th0_envelope(1.3, 0.3, 0.1, 2.0)
    with pytest.raises(ValueError):
        th0_envelope(1.0, 0.6, 0.1, 1.0)


def test_mdp_rate_examples():
    assert mdp_rate((1, math.inf)) == 0.5
    assert mdp_rate((-1, 1)) == 0.0
    assert mdp_rate((-math.inf, -2)) == 2.0
    with pytest.raises(ValueError):
        mdp_rate((1, 1))


def test_mdp_rate_reflection():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b = np.sort(rng.uniform(-5, 5, 2))
        assert mdp_rate((a, b)) == mdp_rate((-b, -a))


def test_bernstein_probe():
    normal = [1.0, 0.0, 3.0, 0.0, 15.0]  # orders 2..6
    assert abs(bernstein_probe(normal[:3], 0.5) - 1.0) <= 1e-12
    assert abs(bernstein_probe(normal, 0.5) - 1.0) <= 1e-12
    assert bernstein_probe([1.0, 0.0, 1.0], 0.5) == pytest.approx(1 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        bernstein_probe([1.0], 0.5)
