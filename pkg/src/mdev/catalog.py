"""String-addressable models and observables used by the harness and the CLI."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .models import Model, make_linear_model, make_tanh_model
from .stein import SteinSolution, box_grid, certify, stein_1d_quadrature, stein_linear_h, stein_quadratic_h

MODEL_IDS = ("ou", "ou-matrix", "tanh")
OBSERVABLE_IDS = ("x", "x2", "tanh")

DEFAULT_OU_MATRIX = [[1.0, 0.5], [-0.5, 1.5]]


@dataclass(frozen=True)
class Observable:
    name: str
    h: Callable
    h_prime: Callable | None  # scalar models only


def build_model(model_id: str, params: dict | None = None) -> Model:
    params = dict(params or {})
    if model_id == "ou":
        a = params.pop("a", 1.0)
        s = params.pop("sigma", 1.0)
        model = make_linear_model([[a]], [[s]])
    elif model_id == "ou-matrix":
        A = params.pop("A", DEFAULT_OU_MATRIX)
        sigma = params.pop("sigma", np.eye(np.shape(A)[0]).tolist())
        model = make_linear_model(A, sigma)
    elif model_id == "tanh":
        model = make_tanh_model(params.pop("c", 0.5))
    else:
        raise KeyError(f"unknown model {model_id!r}; choose from {', '.join(MODEL_IDS)}")
    if params:
        raise KeyError(f"unknown parameters for model {model_id!r}: {sorted(params)}")
    return model


def build_observable(obs_id: str, dim: int) -> Observable:
    if obs_id == "x":
        return Observable("x", lambda x: np.asarray(x)[..., 0],
                          lambda x: np.ones(np.shape(x)[:-1]))
    if obs_id == "x2":
        return Observable("x2", lambda x: np.sum(np.asarray(x) ** 2, axis=-1),
                          lambda x: 2.0 * np.asarray(x)[..., 0])
    if obs_id == "tanh":
        if dim != 1:
            raise ValueError("the tanh observable is available for scalar models only")
        return Observable("tanh", lambda x: np.tanh(np.asarray(x)[..., 0]),
                          lambda x: 1.0 / np.cosh(np.asarray(x)[..., 0]) ** 2)
    raise KeyError(f"unknown observable {obs_id!r}; choose from {', '.join(OBSERVABLE_IDS)}")


def stein_solution(model: Model, obs: Observable, n_nodes: int = 4001) -> SteinSolution:
    """Analytic solution when the drift is linear and h is x or x^2, quadrature otherwise."""
    if model.is_linear and obs.name in ("x", "x2"):
        A = model.analytic.linear_drift_matrix
        if obs.name == "x":
            v = np.zeros(model.dim)
            v[0] = 1.0
            return stein_linear_h(A, model.sigma, v)
        return stein_quadratic_h(A, model.sigma, np.eye(model.dim))
    if model.dim != 1:
        raise ValueError("numerical Stein solutions are limited to scalar models")
    return stein_1d_quadrature(model, obs.h, obs.h_prime, n_nodes=n_nodes)


def certification_grid(model: Model, sol: SteinSolution, n_points: int = 2001):
    if sol.domain is not None:
        a, b = sol.domain
        return np.linspace(a, b, n_points)[:, None]
    return box_grid(-10.0, 10.0, model.dim, n_points)


def certified_solution(model: Model, obs: Observable, n_points: int = 2001):
    """Build and certify; returns the report (its ``solution`` carries the filled bounds)."""
    sol = stein_solution(model, obs)
    return certify(sol, model, obs.h, certification_grid(model, sol, n_points))
