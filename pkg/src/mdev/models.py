"""SDE models dX = g(X) dt + sigma dB with additive noise, plus a small catalog.

Drifts are vectorized: ``drift(x)`` accepts an array of shape ``(..., d)`` and
returns the same shape. ``drift_jacobian(x)`` returns ``(..., d, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

MAX_DIM = 10
DET_FLOOR = 1e-12

Array = np.ndarray


def matvec(M: Array, x: Array) -> Array:
    """Batched ``M @ x`` over the last axis of ``x``.

    Written as an elementwise product and a short sum so that a single state
    and a batch of states go through the same floating point operations.
    """
    return (np.asarray(x)[..., None, :] * M).sum(axis=-1)


@dataclass(frozen=True)
class AnalyticFacts:
    linear_drift_matrix: Optional[Array] = None
    invariant_mean_of: Mapping[str, float] = field(default_factory=dict)
    stationary_covariance: Optional[Array] = None


@dataclass(frozen=True)
class Model:
    dim: int
    drift: Callable[[Array], Array]
    diffusion: Array
    lipschitz_L: float
    K1: float
    K2: float
    drift_jacobian: Optional[Callable[[Array], Array]] = None
    analytic: Optional[AnalyticFacts] = None
    name: str = "custom"
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise ValueError(f"dimension must be in 1..{MAX_DIM}, got {self.dim}")
        sigma = np.array(self.diffusion, dtype=float).reshape(self.dim, self.dim)
        sigma.setflags(write=False)
        object.__setattr__(self, "diffusion", sigma)
        det = np.linalg.det(sigma)
        if not abs(det) > DET_FLOOR:
            raise ValueError(f"diffusion matrix is singular (|det| = {abs(det):.3e})")
        if self.lipschitz_L <= 0 or self.K1 <= 0 or self.K2 < 0:
            raise ValueError("need L > 0, K1 > 0, K2 >= 0")

    @property
    def sigma(self) -> Array:
        return self.diffusion

    @property
    def is_linear(self) -> bool:
        return self.analytic is not None and self.analytic.linear_drift_matrix is not None

    def describe(self) -> dict:
        """JSON-friendly identification of the model."""
        return {"name": self.name, "dim": self.dim, **{k: _jsonable(v) for k, v in self.params.items()}}


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def _frozen(a) -> Array:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def solve_lyapunov(A, Q) -> Array:
    """Solve ``A X + X A^T = Q`` by vectorizing to a d^2 x d^2 system."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = A.shape[0]
    if d > MAX_DIM:
        raise ValueError(f"dense Lyapunov solve limited to d <= {MAX_DIM}")
    eye = np.eye(d)
    # row-major vec: vec(A X) = (A kron I) vec(X), vec(X A^T) = (I kron A) vec(X)
    K = np.kron(A, eye) + np.kron(eye, A)
    if np.linalg.cond(K) > 1e12:
        raise np.linalg.LinAlgError("Lyapunov operator is singular (eigenvalue cancellation)")
    return np.linalg.solve(K, Q.ravel()).reshape(d, d)


def solve_discrete_lyapunov(F, Q) -> Array:
    """Solve ``X = F X F^T + Q``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = F.shape[0]
    K = np.eye(d * d) - np.kron(F, F)
    return np.linalg.solve(K, Q.ravel()).reshape(d, d)


def em_stationary_covariance(model: Model, eta: float) -> Array:
    """Covariance of the invariant law of the EM chain for a linear model."""
    if not model.is_linear:
        raise ValueError("EM stationary covariance is only available for linear drifts")
    A = model.analytic.linear_drift_matrix
    F = np.eye(model.dim) - eta * A
    return solve_discrete_lyapunov(F, eta * model.sigma @ model.sigma.T)


def make_linear_model(A, sigma) -> Model:
    """Ornstein-Uhlenbeck model with drift g(x) = -A x."""
    A = _frozen(np.atleast_2d(A))
    sigma = _frozen(np.atleast_2d(sigma))
    d = A.shape[0]
    if A.shape != (d, d) or sigma.shape != (d, d):
        raise ValueError("A and sigma must be square matrices of equal size")
    if abs(np.linalg.det(sigma)) <= DET_FLOOR:
        raise ValueError("diffusion matrix sigma is not invertible")
    eig = np.linalg.eigvalsh(0.5 * (A + A.T))
    if eig[0] <= 0:
        raise ValueError(
            f"symmetric part of A must be positive definite; smallest eigenvalue is {eig[0]:.6g}"
        )
    lam = float(eig[0])
    cov = _frozen(solve_lyapunov(A, sigma @ sigma.T))
    # -lam |D|^2 <= -lam |D| + lam for every real |D|
    facts = AnalyticFacts(
        linear_drift_matrix=A,
        invariant_mean_of={"x": 0.0, "x2": float(np.trace(cov))},
        stationary_covariance=cov,
    )
    minus_A = _frozen(-A)
    return Model(
        dim=d,
        drift=lambda x: matvec(minus_A, x),
        drift_jacobian=lambda x: np.broadcast_to(minus_A, np.shape(x)[:-1] + (d, d)),
        diffusion=sigma,
        lipschitz_L=float(np.linalg.norm(A, 2)),
        K1=lam,
        K2=lam,
        analytic=facts,
        name="ou" if d == 1 else "ou-matrix",
        params={"A": A, "sigma": sigma},
    )


def make_tanh_model(c: float) -> Model:
    """1D model g(x) = -x + c tanh(x), sigma = 1, for 0 <= c < 1."""
    c = float(c)
    if not 0.0 <= c < 1.0:
        raise ValueError(f"tanh model needs 0 <= c < 1, got {c}")

    def drift(x):
        x = np.asarray(x, dtype=float)
        return -x + c * np.tanh(x)

    def jac(x):
        x = np.asarray(x, dtype=float)
        return (-1.0 + c / np.cosh(x) ** 2)[..., None]

    facts = None
    if c == 0.0:
        cov = _frozen([[0.5]])
        facts = AnalyticFacts(
            linear_drift_matrix=_frozen([[1.0]]),
            invariant_mean_of={"x": 0.0, "x2": 0.5},
            stationary_covariance=cov,
        )
    return Model(
        dim=1,
        drift=drift,
        drift_jacobian=jac,
        diffusion=np.eye(1),
        lipschitz_L=1.0 + c,
        K1=1.0 - c,
        K2=1.0 - c,
        analytic=facts,
        name="tanh",
        params={"c": c},
    )


def check_dissipativity(model: Model, n_pairs: int, radius: float, seed: int) -> float:
    """Worst margin of the drift dissipativity inequality over random pairs.

    Returns ``min (-K1 |x - y| + K2 - <g(x) - g(y), x - y>)`` for pairs drawn
    uniformly from the ball of the given radius. A nonnegative value means no
    violation was found on the sample.
    """
    if n_pairs < 1 or radius <= 0:
        raise ValueError("need n_pairs >= 1 and radius > 0")
    rng = np.random.default_rng(seed)
    x = _uniform_ball(rng, n_pairs, model.dim, radius)
    y = _uniform_ball(rng, n_pairs, model.dim, radius)
    return dissipativity_margin(model, x, y)


def dissipativity_margin(model: Model, x, y) -> float:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    delta = x - y
    inner = np.sum((model.drift(x) - model.drift(y)) * delta, axis=-1)
    margin = -model.K1 * np.linalg.norm(delta, axis=-1) + model.K2 - inner
    return float(np.min(margin))


def check_lipschitz(model: Model, n_pairs: int, radius: float, seed: int) -> float:
    """Worst margin of ``L |x - y| - |g(x) - g(y)|`` over random pairs."""
    rng = np.random.default_rng(seed)
    x = _uniform_ball(rng, n_pairs, model.dim, radius)
    y = _uniform_ball(rng, n_pairs, model.dim, radius)
    lhs = np.linalg.norm(model.drift(x) - model.drift(y), axis=-1)
    return float(np.min(model.lipschitz_L * np.linalg.norm(x - y, axis=-1) - lhs))


def _uniform_ball(rng, n, d, radius):
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    return v * r[:, None]
