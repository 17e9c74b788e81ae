"""Per-trajectory statistics: ergodic averages, W and S, and the martingale decomposition.

Every function accepts a :class:`~mdev.integrator.Trajectory` or a
:class:`~mdev.integrator.TrajectoryBatch`; batch inputs give one value per
replication. Sums over the time index use Neumaier-compensated summation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import Model, matvec
from .stein import SteinSolution

DENOM_FLOOR = 1e-14


class DegenerateStatisticError(ValueError):
    """Raised when a normalizer vanishes (the observable has grad phi == 0)."""


def ksum(a, axis: int = -1):
    """Neumaier-compensated sum along ``axis`` (elementwise across the other axes)."""
    a = np.ascontiguousarray(np.moveaxis(np.asarray(a, dtype=float), axis, 0))
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:])
    s = a[0].copy()
    comp = np.zeros_like(s)
    for v in a[1:]:
        t = s + v
        big = np.abs(s) >= np.abs(v)
        comp += np.where(big, (s - t) + v, (v - t) + s)
        s = t
    return s + comp


def _check(traj):
    m = traj.states.shape[-2] - 1
    if m < 1:
        raise ValueError("trajectory must contain at least one step")
    if traj.noises.shape[-2] != m:
        raise ValueError(f"length mismatch: {m} steps but {traj.noises.shape[-2]} noise rows")
    return m


def _head(traj):
    return traj.states[..., :-1, :]


def _h_values(h, x):
    return np.asarray(h(x), dtype=float).reshape(x.shape[:-1])


def compute_pi_hat(traj, h):
    """Mean of h over theta_0 .. theta_{m-1} (the final state is excluded)."""
    m = traj.states.shape[-2] - 1
    if m < 1:
        raise ValueError("trajectory must contain at least one step")
    return ksum(_h_values(h, _head(traj))) / m


def compute_Y(traj, sol: SteinSolution, sigma):
    m = _check(traj)
    q = matvec(np.asarray(sigma).T, sol.grad(_head(traj)))
    return ksum(np.sum(q * q, axis=-1)) / m


def _increment_projection(traj, sol: SteinSolution, model: Model):
    x = _head(traj)
    incr = traj.states[..., 1:, :] - x - traj.eta * model.drift(x)
    return np.sum(incr * sol.grad(x), axis=-1)


def compute_V(traj, sol: SteinSolution, model: Model):
    """Self-normalizer built from observed increments and the drift only."""
    m = _check(traj)
    proj = _increment_projection(traj, sol, model)
    return ksum(proj * proj) / (traj.eta * m)


def compute_V_xi(traj, sol: SteinSolution, sigma):
    """The same normalizer written through the noise: mean of ((sigma xi)^T grad phi)^2."""
    m = _check(traj)
    proj = np.sum(matvec(np.asarray(sigma), traj.noises) * sol.grad(_head(traj)), axis=-1)
    return ksum(proj * proj) / m


def compute_W_S(traj, sol: SteinSolution, model: Model, pi_h: float, h):
    """Return (W, S) for the given trajectory or batch."""
    eta = traj.eta
    num = (compute_pi_hat(traj, h) - pi_h) / math.sqrt(eta)
    Y = compute_Y(traj, sol, model.sigma)
    V = compute_V(traj, sol, model)
    if np.any(Y <= DENOM_FLOOR) or np.any(V <= DENOM_FLOOR):
        raise DegenerateStatisticError(
            f"normalizer below {DENOM_FLOOR:g} (Y min {np.min(Y):.3e}, V min {np.min(V):.3e})")
    return num / np.sqrt(Y), num / np.sqrt(V)


def compute_psi_sum(traj, sol: SteinSolution, sigma):
    """Sum of the martingale differences ((sigma xi)^T grad phi)^2 - |sigma^T grad phi|^2."""
    _check(traj)
    sigma = np.asarray(sigma)
    grad = sol.grad(_head(traj))
    proj = np.sum(matvec(sigma, traj.noises) * grad, axis=-1)
    q = matvec(sigma.T, grad)
    return ksum(proj * proj - np.sum(q * q, axis=-1))


def compute_drift_sum(traj, model: Model):
    """eta * sum_{k<m} |g(theta_k)|^2."""
    _check(traj)
    g = model.drift(_head(traj))
    return traj.eta * ksum(np.sum(g * g, axis=-1))


def y_partial_sums(traj, sol: SteinSolution, sigma, ks):
    """sum_{i<k} |sigma^T grad phi(theta_i)|^2 for every k in ``ks``."""
    q = matvec(np.asarray(sigma).T, sol.grad(_head(traj)))
    terms = np.sum(q * q, axis=-1)
    return np.stack([ksum(terms[..., :k]) for k in ks], axis=-1)


# ---------------------------------------------------------------------------
# decomposition eta^{-1/2} (Pi - pi(h)) = H - sum_i R_i


@dataclass(frozen=True)
class Decomposition:
    H: object
    R: object  # (..., 6)
    lhs: object
    residual: object
    scale: float  # 1 / (eta^2 m); equals 1 when m = eta^-2
    quad_order: int


def _third_contract(T, u, v, w):
    return np.einsum("...ijk,...i,...j,...k->...", T, u, v, w)


def decompose(traj, sol: SteinSolution, model: Model, h, quad_order: int = 16) -> Decomposition:
    """Martingale term H and remainders R_1..R_6 of the Taylor expansion of phi.

    The third-order remainder of phi(theta_k + Delta) is integrated with the
    exact weight 3 (1 - t)^2 on [0, 1] by Gauss-Legendre quadrature, so the
    identity holds up to the Stein residual and round-off.
    """
    m = _check(traj)
    if quad_order < 5:
        raise ValueError("quad_order must be at least 5")
    eta = traj.eta
    se = math.sqrt(eta)
    sigma = model.sigma
    x = _head(traj)
    x_next = traj.states[..., 1:, :]
    delta = x_next - x
    g = model.drift(x)
    sx = matvec(sigma, traj.noises)
    grad = sol.grad(x)
    hess = sol.hess(x)
    a = sigma @ sigma.T

    H = -eta * ksum(np.sum(grad * sx, axis=-1))
    R1 = se * (sol.phi(traj.states[..., 0, :]) - sol.phi(traj.states[..., -1, :]))
    outer_ss = sx[..., :, None] * sx[..., None, :] - a
    R2 = eta**1.5 / 2 * ksum(np.sum(hess * outer_ss, axis=(-2, -1)))
    mixed = g[..., :, None] * sx[..., None, :] + sx[..., :, None] * g[..., None, :]
    R3 = eta**2 / 2 * ksum(np.sum(hess * mixed, axis=(-2, -1)))
    R5a = eta**2.5 / 2 * ksum(np.sum(hess * (g[..., :, None] * g[..., None, :]), axis=(-2, -1)))

    shape = np.shape(H)
    if sol.degree is not None and sol.degree <= 2:
        R4 = R5b = R6 = np.zeros(shape)
    else:
        if sol.third is None:
            raise ValueError("the Stein solution lacks third derivatives needed by the remainders")
        nodes, weights = np.polynomial.legendre.leggauss(quad_order)
        t = 0.5 * (nodes + 1.0)
        w = 0.5 * weights * 3.0 * (1.0 - t) ** 2
        acc4 = acc5 = acc6 = 0.0
        for tj, wj in zip(t, w):
            T = sol.third(x + tj * delta)
            acc4 = acc4 + wj * _third_contract(T, sx, sx, sx)
            acc5 = acc5 + wj * _third_contract(T, g, g, g)
            acc6 = acc6 + wj * (_third_contract(T, g, sx, sx) + se * _third_contract(T, g, g, sx))
        R4 = eta**2 / 6 * ksum(acc4)
        R5b = eta**3.5 / 6 * ksum(acc5)
        R6 = eta**2.5 / 2 * ksum(acc6)
    R = np.stack(np.broadcast_arrays(R1, R2, R3, R4, R5a + R5b, R6), axis=-1)

    lhs = (compute_pi_hat(traj, h) - sol.pi_h) / se
    scale = 1.0 / (eta * eta * m)
    residual = np.abs(lhs - scale * (H - ksum(R, axis=-1)))
    return Decomposition(H=H, R=R, lhs=lhs, residual=residual, scale=scale, quad_order=quad_order)


@dataclass(frozen=True)
class StatBundle:
    pi_hat: object
    Y: object
    V: object
    W: object
    S: object
    H: object
    R: object
    psi_sum: object
    decomposition_residual: object


def stat_bundle(traj, sol: SteinSolution, model: Model, h, quad_order: int = 16) -> StatBundle:
    W, S = compute_W_S(traj, sol, model, sol.pi_h, h)
    dec = decompose(traj, sol, model, h, quad_order)
    return StatBundle(
        pi_hat=compute_pi_hat(traj, h),
        Y=compute_Y(traj, sol, model.sigma),
        V=compute_V(traj, sol, model),
        W=W, S=S, H=dec.H, R=dec.R,
        psi_sum=compute_psi_sum(traj, sol, model.sigma),
        decomposition_residual=dec.residual,
    )
