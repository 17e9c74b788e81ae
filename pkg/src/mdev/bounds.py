"""Closed-form tail bounds and envelopes.

The constants c, c_alpha and C in these inequalities are existential, so every
evaluator takes them as explicit arguments.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc

SQRT2 = math.sqrt(2.0)


def normal_tail(lam):
    """1 - Phi(lam), computed through erfc so deep tails keep full relative accuracy."""
    return 0.5 * erfc(np.asarray(lam, dtype=float) / SQRT2)


def normal_tail_sandwich(lam):
    """Lower and upper bounds e^{-l^2/2} / (sqrt(2 pi)(1 + l)) and e^{-l^2/2} / (sqrt(pi)(1 + l))."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("the normal tail sandwich holds for lambda >= 0 only")
    core = np.exp(-0.5 * lam * lam) / (1.0 + lam)
    return core / math.sqrt(2.0 * math.pi), core / math.sqrt(math.pi)


def cmd_envelope(x, eta: float, c: float):
    """c (x^3 eta + x^2 eta^{1/2} + (1 + x)(eta |ln eta|)^{1/2}) for 0 <= x <= eta^{-3/4}."""
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    xmax = eta ** -0.75
    if np.any(x < 0) or np.any(x > xmax * (1 + 1e-12)):
        raise ValueError(f"x must lie in [0, eta^-3/4] = [0, {xmax:.6g}]")
    return c * (x**3 * eta + x**2 * math.sqrt(eta) + (1.0 + x) * math.sqrt(eta * abs(math.log(eta))))


def lm21_bound(x, u_n: float, alpha: float, c: float, c_alpha: float, form: str = "stated"):
    """Exponential martingale tail bound for sums of differences with
    E zeta^2 exp(c |zeta|^alpha) summing to u_n.

    ``form``:
      * ``"stated"``:   c_alpha exp(-x^2 / (c_alpha (u_n + x^{2-alpha})))
      * ``"derived"``:  c_alpha exp(-x^2 / (2 c_alpha (u_n + x^{2-alpha}))), the
        relaxation at the end of the proof (a factor 2 looser in the exponent)
      * ``"piecewise"``: the two-branch bound before relaxation; uses ``c`` and
        ignores ``c_alpha``.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if u_n < 1.0:
        raise ValueError("u_n must be at least 1")
    x = np.asarray(x, dtype=float)
    if form == "piecewise":
        return _lm21_piecewise(x, u_n, alpha, c)
    k = {"stated": 1.0, "derived": 2.0}[form]
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = np.where(x > 0, x * x / (k * c_alpha * (u_n + np.abs(x) ** (2.0 - alpha))), 0.0)
    return c_alpha * np.exp(-expo)


def _lm21_piecewise(x, u_n, alpha, c):
    x = np.atleast_1d(x).astype(float)
    out = np.empty_like(x)
    thr = (c * u_n) ** (1.0 / (2.0 - alpha))
    lo = x < thr
    xl = x[lo]
    if alpha < 1.0:
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            p = 1.0 / (1.0 - alpha)
            pref = xl ** (2.0 * p) / (u_n ** ((1.0 + alpha) * p) * c ** (2.0 / (alpha * (1.0 + alpha))))
            second = pref * np.exp(-c * (c * u_n / xl) ** (alpha * p))
            second = np.where(xl > 0, second, 0.0)
    else:
        # alpha -> 1 limit: the truncation level runs off to infinity
        second = np.zeros_like(xl)
    out[lo] = np.exp(-xl * xl / (2.0 * u_n)) + second
    xh = x[~lo]
    out[~lo] = np.exp(-c * xh**alpha * (1.0 - c * u_n / (2.0 * xh ** (2.0 - alpha)))) \
        + u_n / (c ** (2.0 / alpha) * xh * xh) * np.exp(-c * xh**alpha)
    return out


def th0_envelope(x, epsilon_n: float, delta_n: float, C: float):
    """C (x^3 (eps + delta) + (1 + x)(delta |ln delta| + eps |ln eps|))."""
    for name, v in (("epsilon_n", epsilon_n), ("delta_n", delta_n)):
        if not 0.0 < v <= 0.5:
            raise ValueError(f"{name} must lie in (0, 1/2], got {v}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    logs = delta_n * abs(math.log(delta_n)) + epsilon_n * abs(math.log(epsilon_n))
    return C * (x**3 * (epsilon_n + delta_n) + (1.0 + x) * logs)


def mdp_rate(interval) -> float:
    """inf of x^2 / 2 over the interval (b_lo, b_hi)."""
    lo, hi = map(float, interval)
    if not lo < hi:
        raise ValueError(f"empty interval ({lo}, {hi})")
    if lo <= 0.0 <= hi:
        return 0.0
    edge = lo if lo > 0 else hi
    return 0.5 * edge * edge


def bernstein_probe(moments, epsilon: float) -> float:
    """Worst ratio |E zeta^k| / (k!/2 eps^{k-2} E zeta^2) over k = 3..k_max.

    ``moments[j]`` is the raw moment of order ``j + 2``; order 2 only supplies
    the normalization because its ratio is identically 1. A result <= 1 means
    the Bernstein moment condition holds at level ``epsilon`` for the probed
    orders.
    """
    moments = np.asarray(moments, dtype=float)
    if moments.size < 2:
        raise ValueError("need moments up to at least order 3")
    m2 = moments[0]
    if m2 <= 0:
        raise ValueError("second moment must be positive")
    worst = 0.0
    for j in range(1, moments.size):
        k = j + 2
        worst = max(worst, abs(moments[j]) / (0.5 * math.factorial(k) * epsilon ** (k - 2) * m2))
    return worst
