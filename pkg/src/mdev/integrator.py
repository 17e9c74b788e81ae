"""Euler-Maruyama trajectories with counter-addressable Gaussian noise.

Noise for replication ``rep`` comes from a Philox stream keyed by
``(seed, rep)``. Draw number ``step * d + coord`` of that stream is one
64-bit word, mapped to a uniform on (0, 1) and then through the exact normal
quantile function, so every variate is addressable by its indices and the
replications can be generated in any order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .models import Model, matvec

DIVERGENCE_RADIUS = 1e12
_MASK64 = (1 << 64) - 1


class DivergenceError(RuntimeError):
    def __init__(self, step, theta, rep_index=None):
        self.step = step
        self.theta = theta
        self.rep_index = rep_index
        where = f" (replication {rep_index})" if rep_index is not None else ""
        super().__init__(f"EM iteration diverged at step {step}{where}: theta = {theta}")


@dataclass(frozen=True)
class Trajectory:
    eta: float
    m: int
    states: np.ndarray  # (m + 1, d)
    noises: np.ndarray  # (m, d); row k holds xi_{k+1}
    seed: int
    rep_index: int
    burn_in: int

    @property
    def dim(self) -> int:
        return self.states.shape[-1]


@dataclass(frozen=True)
class TrajectoryBatch:
    """Several replications stacked along a leading axis."""

    eta: float
    m: int
    states: np.ndarray  # (n, m + 1, d)
    noises: np.ndarray  # (n, m, d)
    seed: int
    rep_indices: np.ndarray
    burn_in: int

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, i) -> Trajectory:
        return Trajectory(self.eta, self.m, self.states[i], self.noises[i],
                          self.seed, int(self.rep_indices[i]), self.burn_in)


def _key(seed: int, rep_index: int) -> np.ndarray:
    return np.array([seed & _MASK64, rep_index & _MASK64], dtype=np.uint64)


def _raw_to_normal(raw: np.ndarray) -> np.ndarray:
    # top 53 bits, centered in their cell: uniform strictly inside (0, 1)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def noise_block(seed: int, rep_index: int, n_steps: int, dim: int, start_step: int = 0) -> np.ndarray:
    """Standard normal draws for steps ``start_step .. start_step + n_steps - 1``."""
    if min(seed, rep_index, n_steps, start_step) < 0:
        raise ValueError("indices must be nonnegative")
    offset = start_step * dim
    bitgen = np.random.Philox(key=_key(seed, rep_index))
    if offset:
        # Philox emits four 64-bit words per counter value
        bitgen.advance(offset // 4)
        bitgen.random_raw(offset % 4)
    raw = bitgen.random_raw(n_steps * dim)
    return _raw_to_normal(raw).reshape(n_steps, dim)


def noise_value(seed: int, rep_index: int, step: int, coord: int, dim: int = 1) -> float:
    """The standard normal variate used at ``(rep_index, step, coord)``.

    ``step`` counts from the very first (burn-in) iteration. ``dim`` fixes
    the stride between steps; it defaults to 1 for scalar models.
    """
    if coord >= dim:
        raise ValueError("coord must be < dim")
    return float(noise_block(seed, rep_index, 1, dim, start_step=step)[0, coord])


def em_step(theta, eta: float, model: Model, xi, step: int | None = None):
    """One Euler-Maruyama update theta + eta g(theta) + sqrt(eta) sigma xi.

    Works on a single state ``(d,)`` or a batch ``(n, d)``.
    """
    theta = np.asarray(theta, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = theta + eta * model.drift(theta) + math.sqrt(eta) * matvec(model.sigma, xi)
    if not np.all(np.isfinite(out)):
        raise DivergenceError(step, theta)
    return out


def default_m(eta: float) -> int:
    return int(math.floor(1.0 / eta**2 + 1e-9))


def default_burn_in(model: Model, eta: float) -> int:
    """About ten relaxation times of the contraction rate K1."""
    return int(math.ceil(10.0 / (model.K1 * eta) - 1e-9))


def run_em(model: Model, eta: float, x0, noises: np.ndarray, burn_in: int = 0,
           rep_indices: Sequence[int] | None = None):
    """Iterate EM over a noise array of shape ``(n, steps, d)``.

    Returns the recorded states ``(n, steps - burn_in + 1, d)``.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError(f"step size must lie in (0, 1), got {eta}")
    n, steps, d = noises.shape
    m = steps - burn_in
    if m < 1:
        raise ValueError("need at least one recorded step")
    theta = np.broadcast_to(np.asarray(x0, dtype=float), (n, d)).copy()
    states = np.empty((n, m + 1, d))
    if burn_in == 0:
        states[:, 0] = theta
    for k in range(steps):
        prev = theta
        try:
            theta = em_step(theta, eta, model, noises[:, k], step=k)
        except DivergenceError:
            theta = np.full_like(prev, np.inf)
        big = ~(np.max(np.abs(theta), axis=-1) <= DIVERGENCE_RADIUS)
        if big.any():
            i = int(np.flatnonzero(big)[0])
            rep = None if rep_indices is None else int(rep_indices[i])
            raise DivergenceError(k, theta[i], rep)
        j = k + 1 - burn_in
        if j >= 0:
            states[:, j] = theta
    return states


def simulate_batch(model: Model, eta: float, m: int, burn_in: int, seed: int,
                   rep_indices: Sequence[int]) -> TrajectoryBatch:
    if m < 1 or burn_in < 0:
        raise ValueError("need m >= 1 and burn_in >= 0")
    reps = np.asarray(rep_indices, dtype=np.int64)
    d = model.dim
    steps = burn_in + m
    noises = np.empty((len(reps), steps, d))
    for i, r in enumerate(reps):
        noises[i] = noise_block(seed, int(r), steps, d)
    states = run_em(model, eta, np.zeros(d), noises, burn_in, reps)
    return TrajectoryBatch(eta, m, states, noises[:, burn_in:].copy(), seed, reps, burn_in)


def simulate(model: Model, eta: float, m: int | None = None, burn_in: int | None = None,
             seed: int = 0, rep_index: int = 0) -> Trajectory:
    """Burn in from 0, then record ``m`` EM steps (defaults: floor(eta^-2), ~10/(K1 eta))."""
    if m is None:
        m = default_m(eta)
    if burn_in is None:
        burn_in = default_burn_in(model, eta)
    return simulate_batch(model, eta, m, burn_in, seed, [rep_index])[0]


def trajectory_from_noise(model: Model, eta: float, noises, x0=None, seed: int = -1,
                          rep_index: int = -1) -> Trajectory:
    """Run EM from ``x0`` (default 0) over an explicit noise sequence."""
    noises = np.atleast_2d(np.asarray(noises, dtype=float))
    if noises.shape[-1] != model.dim:
        noises = noises.reshape(-1, model.dim)
    x0 = np.zeros(model.dim) if x0 is None else x0
    states = run_em(model, eta, x0, noises[None], 0)[0]
    return Trajectory(eta, noises.shape[0], states, noises, seed, rep_index, 0)


def ou_exact_step(theta, A, sigma, delta_t: float, xi):
    """Exact transition of the scalar OU diffusion dX = -a X dt + s dB."""
    a = np.asarray(A, dtype=float)
    s = np.asarray(sigma, dtype=float)
    if a.size != 1 or s.size != 1:
        raise ValueError("closed-form OU transition is implemented for d = 1 only")
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    a = float(a.ravel()[0])
    s = float(s.ravel()[0])
    decay = math.exp(-a * delta_t)
    scale = math.sqrt(s * s * -math.expm1(-2.0 * a * delta_t) / (2.0 * a))
    return decay * np.asarray(theta, dtype=float) + scale * np.asarray(xi, dtype=float)
