"""Solutions of the Stein (Poisson) equation  A phi = h - pi(h).

The generator of the diffusion is
``A phi(x) = <g(x), grad phi(x)> + 1/2 <sigma sigma^T, hess phi(x)>_HS``.

All function handles in a :class:`SteinSolution` are vectorized over leading
axes: ``phi`` maps ``(..., d) -> (...)``, ``grad`` to ``(..., d)``, ``hess``
to ``(..., d, d)`` and so on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import PPoly
from scipy.optimize import brentq

from .models import Model, matvec, solve_lyapunov

Array = np.ndarray


class SteinError(RuntimeError):
    pass


class CertificationError(SteinError):
    def __init__(self, report: "CertReport"):
        self.report = report
        super().__init__(
            f"generator residual {report.residual_sup:.3e} exceeds tolerance {report.tol:.1e} "
            f"(worst grid point {report.worst_point})"
        )


@dataclass(frozen=True)
class SteinSolution:
    phi: Callable[[Array], Array]
    grad: Callable[[Array], Array]
    hess: Callable[[Array], Array]
    pi_h: float
    third: Optional[Callable[[Array], Array]] = None
    fourth: Optional[Callable[[Array], Array]] = None
    tol: float = 1e-12
    residual_sup: float = math.nan
    derivative_bounds: Optional[tuple] = None
    kind: str = "analytic"
    domain: Optional[tuple] = None
    degree: Optional[int] = None  # polynomial degree of phi when known

    def scaled(self, factor: float) -> "SteinSolution":
        """Solution for the observable ``factor * h``."""
        def sc(f):
            return None if f is None else (lambda x: factor * f(x))
        return replace(self, phi=sc(self.phi), grad=sc(self.grad), hess=sc(self.hess),
                       third=sc(self.third), fourth=sc(self.fourth),
                       pi_h=factor * self.pi_h, residual_sup=math.nan, derivative_bounds=None)


@dataclass(frozen=True)
class CertReport:
    residual_sup: float
    worst_point: tuple
    derivative_bounds: tuple
    tol: float
    n_points: int
    solution: SteinSolution

    @property
    def passed(self) -> bool:
        return self.residual_sup <= self.tol


def apply_generator(sol: SteinSolution, model: Model, x) -> Array:
    x = np.asarray(x, dtype=float)
    drift_term = np.sum(model.drift(x) * sol.grad(x), axis=-1)
    a = model.sigma @ model.sigma.T
    diffusion_term = 0.5 * np.sum(a * sol.hess(x), axis=(-2, -1))
    return drift_term + diffusion_term


# ---------------------------------------------------------------------------
# analytic catalog (linear drift g(x) = -A x)


def _zeros_tensor(order):
    def f(x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        return np.zeros(x.shape[:-1] + (d,) * order)
    return f


def stein_linear_h(A, sigma, v) -> SteinSolution:
    """Exact solution for h(x) = <v, x>: phi(x) = -<A^{-T} v, x>, pi(h) = 0."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if np.linalg.cond(A) > 1e12:
        raise SteinError("drift matrix A is singular")
    w = np.linalg.solve(A.T, v)
    w.setflags(write=False)

    def phi(x):
        return -np.sum(np.asarray(x, dtype=float) * w, axis=-1)

    def grad(x):
        return np.broadcast_to(-w, np.shape(x)).copy()

    return SteinSolution(phi=phi, grad=grad, hess=_zeros_tensor(2), pi_h=0.0,
                         third=_zeros_tensor(3), fourth=_zeros_tensor(4), degree=1)


def stein_quadratic_h(A, sigma, M) -> SteinSolution:
    """Exact solution for h(x) = x^T M x: phi(x) = x^T Q x with A^T Q + Q A = -M."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.allclose(M, M.T):
        raise ValueError("M must be symmetric")
    try:
        Q = solve_lyapunov(A.T, -M)
    except np.linalg.LinAlgError as err:
        raise SteinError(str(err)) from err
    Q = 0.5 * (Q + Q.T)
    Q.setflags(write=False)
    H = 2.0 * Q
    pi_h = float(-np.trace(sigma @ sigma.T @ Q))

    def phi(x):
        x = np.asarray(x, dtype=float)
        return np.sum(x * matvec(Q, x), axis=-1)

    def grad(x):
        return matvec(H, x)

    def hess(x):
        return np.broadcast_to(H, np.shape(x)[:-1] + H.shape).copy()

    return SteinSolution(phi=phi, grad=grad, hess=hess, pi_h=pi_h,
                         third=_zeros_tensor(3), fourth=_zeros_tensor(4), degree=2)


# ---------------------------------------------------------------------------
# 1D quadrature solver


def default_domain(model: Model, width: float = 10.0) -> tuple:
    """[mu - width*s, mu + width*s] around the drift's zero."""
    s2 = float(model.sigma[0, 0] ** 2)
    if model.analytic is not None and model.analytic.stationary_covariance is not None:
        s = math.sqrt(float(model.analytic.stationary_covariance[0, 0]))
    else:
        s = math.sqrt(s2 / (2.0 * model.K1))
    g = lambda t: float(model.drift(np.array([t]))[0])
    lo, hi = -100.0 * s, 100.0 * s
    mu = brentq(g, lo, hi) if g(lo) > 0 > g(hi) else 0.0
    return (mu - width * s, mu + width * s)


def _scalar(f):
    """Wrap a handle taking (..., 1) arrays as a plain map of 1D arrays."""
    def wrapped(t):
        t = np.asarray(t, dtype=float)
        out = np.asarray(f(t[..., None]), dtype=float)
        return out.reshape(t.shape)
    return wrapped


def hermite_ppoly(x, y) -> PPoly:
    """Piecewise Hermite interpolant matching ``y[:, j]`` = j-th derivative at nodes ``x``.

    With r derivative slots (values included) the pieces have degree 2r - 1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = y.shape[1]
    n = 2 * r
    H = np.diff(x)
    fact = np.array([math.factorial(k) for k in range(n)], dtype=float)
    # local variable t in [0, 1]; coefficient b_k multiplies t^k
    scale = H[:, None] ** np.arange(r)
    b_lo = y[:-1] * scale / fact[:r]
    falling = np.array([[math.perm(k, j) for k in range(n)] for j in range(r)], dtype=float)
    rhs = y[1:] * scale - b_lo @ falling[:, :r].T
    b_hi = np.linalg.solve(falling[:, r:], rhs.T).T
    b = np.concatenate([b_lo, b_hi], axis=1)
    c = b / H[:, None] ** np.arange(n)
    return PPoly(c.T[::-1].copy(), x, extrapolate=False)


def _cumulative_hermite(f, df, dx):
    """Running integral on a uniform grid by the endpoint-corrected trapezoid rule."""
    inc = 0.5 * dx * (f[:-1] + f[1:]) + dx**2 / 12.0 * (df[:-1] - df[1:])
    return np.concatenate([[0.0], np.cumsum(inc)])


def stein_1d_quadrature(model: Model, h, h_prime, domain=None, n_nodes: int = 4001,
                        tol: float = 1e-6) -> SteinSolution:
    """Numerical Stein solution for a scalar model.

    With p the invariant density, u = phi' satisfies
    ``(sigma^2 / 2) (p u)' = (h - pi(h)) p``. It is integrated inward from
    whichever domain edge is nearer, so the running integrals never cancel.
    The edge values come from the large-|x| expansion of the ODE. Higher
    derivatives follow from the ODE itself, and phi is obtained from u with
    a two-point Hermite rule and anchored at the domain center.
    """
    if model.dim != 1:
        raise SteinError("quadrature solver handles scalar models only")
    if model.drift_jacobian is None:
        raise SteinError("quadrature solver needs the drift derivative")
    if n_nodes < 1000:
        raise ValueError("n_nodes must be at least 1000")
    if n_nodes % 2 == 0:
        n_nodes += 1
    a, b = default_domain(model) if domain is None else map(float, domain)
    x = np.linspace(a, b, n_nodes)
    dx = x[1] - x[0]
    s2 = float(model.sigma[0, 0] ** 2)

    g = _scalar(model.drift)(x)
    gp = _scalar(model.drift_jacobian)(x)
    hv = _scalar(h)(x)
    hp = _scalar(h_prime)(x)

    G = _cumulative_hermite(g, gp, dx)
    logp = 2.0 * G / s2
    logp -= logp.max()
    if min(logp[0], logp[-1]) < -700.0:
        raise SteinError("invariant density underflows on the domain edge; shrink the domain")
    p = np.exp(logp)
    if max(p[0], p[-1]) > 1e-12:
        raise SteinError("domain too narrow: invariant density is not negligible at the edge")
    dlogp = 2.0 * g / s2

    Z = simpson(p, x=x)
    pi_h = float(simpson(hv * p, x=x) / Z)
    c = hv - pi_h
    f = c * p
    df = (hp + c * dlogp) * p

    def edge_u(i):
        if g[i] == 0.0:
            return 0.0
        du0 = (hp[i] * g[i] - c[i] * gp[i]) / g[i] ** 2
        return (c[i] - 0.5 * s2 * du0) / g[i]

    left = _cumulative_hermite(f, df, dx)
    right = _cumulative_hermite(f[::-1], -df[::-1], dx)[::-1]
    k = int(np.argmax(p))
    u = np.empty_like(x)
    u[: k + 1] = (p[0] * edge_u(0) + (2.0 / s2) * left[: k + 1]) / p[: k + 1]
    u[k + 1:] = (p[-1] * edge_u(-1) - (2.0 / s2) * right[k + 1:]) / p[k + 1:]
    u1 = (2.0 / s2) * c - (2.0 / s2) * g * u
    u2 = (2.0 / s2) * hp - (2.0 / s2) * (gp * u + g * u1)

    inc = 0.5 * dx * (u[:-1] + u[1:]) + dx**2 / 10.0 * (u1[:-1] - u1[1:]) \
        + dx**3 / 120.0 * (u2[:-1] + u2[1:])
    phi_nodes = np.concatenate([[0.0], np.cumsum(inc)])
    phi_nodes -= phi_nodes[n_nodes // 2]

    pp = hermite_ppoly(x, np.column_stack([phi_nodes, u, u1, u2]))
    derivs = [pp] + [pp.derivative(j) for j in range(1, 5)]

    def ev(j, tail):
        def f(xx):
            xx = np.asarray(xx, dtype=float)
            t = xx[..., 0]
            out = derivs[j](t)
            if np.isnan(out).any():
                raise SteinError(f"evaluation outside the solution domain [{a:.4g}, {b:.4g}]")
            return out.reshape(t.shape + tail)
        return f

    return SteinSolution(phi=ev(0, ()), grad=ev(1, (1,)), hess=ev(2, (1, 1)),
                         third=ev(3, (1, 1, 1)), fourth=ev(4, (1, 1, 1, 1)),
                         pi_h=pi_h, tol=tol, kind="quadrature", domain=(a, b))


# ---------------------------------------------------------------------------


def certify(sol: SteinSolution, model: Model, h, grid, tol: float | None = None,
            raise_on_fail: bool = True) -> CertReport:
    """Residual of the Stein equation and derivative sups over a grid.

    ``grid`` is an array of points of shape ``(n, d)`` (a 1D array is taken
    as scalar points).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if grid.shape[0] == 0:
        raise ValueError("empty certification grid")
    tol = sol.tol if tol is None else tol
    res = np.abs(apply_generator(sol, model, grid) - (np.asarray(h(grid)) - sol.pi_h))
    i = int(np.argmax(res))
    bounds = [float(np.max(np.abs(sol.phi(grid))))]
    for f in (sol.grad, sol.hess, sol.third, sol.fourth):
        if f is None:
            bounds.append(math.nan)
            continue
        v = f(grid).reshape(grid.shape[0], -1)
        bounds.append(float(np.max(np.linalg.norm(v, axis=1))))
    filled = replace(sol, residual_sup=float(res[i]), derivative_bounds=tuple(bounds), tol=tol)
    report = CertReport(float(res[i]), tuple(grid[i]), tuple(bounds), tol, grid.shape[0], filled)
    if raise_on_fail and not report.passed:
        raise CertificationError(report)
    return report


def box_grid(lo: float, hi: float, dim: int, n_points: int = 2001) -> Array:
    """Grid with about ``n_points`` points in ``[lo, hi]^dim``."""
    if dim == 1:
        return np.linspace(lo, hi, n_points)[:, None]
    per = max(2, int(round(n_points ** (1.0 / dim))))
    axes = np.meshgrid(*[np.linspace(lo, hi, per)] * dim, indexing="ij")
    return np.stack([ax.ravel() for ax in axes], axis=-1)
