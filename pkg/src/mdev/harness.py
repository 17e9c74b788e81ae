"""Replicated experiments and their aggregation.

Replications are simulated in fixed chunks of consecutive replication
indices. Chunk boundaries depend only on the spec, and every per-replication
quantity is computed elementwise, so results do not depend on how many worker
threads process the chunks or in which order they finish.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, optimize, stats as sps
from scipy.special import ndtr

from . import __version__
from .bounds import cmd_envelope, lm21_bound, normal_tail
from .catalog import build_model, build_observable, certification_grid, stein_solution
from .integrator import default_burn_in, default_m, simulate_batch
from .models import Model, em_stationary_covariance
from .stats import (compute_drift_sum, compute_psi_sum, compute_W_S, y_partial_sums)
from .stein import SteinSolution, certify

STATISTICS = ("W", "S", "both")
CONCENTRATION_KINDS = ("drift_sum", "y_sum", "psi_sum")
LM21_GENERATORS = ("centered_exponential", "bounded", "gaussian_square")
X_TESTED_MAX = 2.5
CONSTANT_CAP = 1e3


def default_x_grid():
    return tuple(float(v) for v in np.round(np.arange(0.0, 2.5001, 0.25), 10))


@dataclass(frozen=True)
class ExperimentSpec:
    model: str = "ou"
    observable: str = "x"
    eta: tuple = (0.2, 0.1, 0.05)
    model_params: dict = field(default_factory=dict)
    m: int | None = None
    n_reps: int = 20000
    x_grid: tuple = field(default_factory=default_x_grid)
    a_mdp: float | None = None
    b_mdp: tuple = (1.0,)
    statistic: str = "both"
    seed: int = 0
    burn_in: int | str = "auto"
    quad_order: int = 16
    chunk_size: int = 2000
    y_points: int = 10
    lm21_generators: tuple = LM21_GENERATORS
    lm21_alpha: float = 1.0
    lm21_n: int = 1000

    def __post_init__(self):
        eta = tuple(float(e) for e in np.atleast_1d(self.eta))
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "x_grid", tuple(float(x) for x in self.x_grid))
        object.__setattr__(self, "b_mdp", tuple(float(b) for b in np.atleast_1d(self.b_mdp)))
        object.__setattr__(self, "lm21_generators", tuple(self.lm21_generators))
        if self.n_reps < 100:
            raise ValueError("n_reps must be at least 100")
        for i, e in enumerate(eta):
            if not 0.0 < e < 1.0:
                raise ValueError(f"eta[{i}] = {e} is outside (0, 1)")
        xs = self.x_grid
        if any(x < 0 for x in xs) or any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("x_grid must be nonnegative and strictly ascending")
        if self.statistic not in STATISTICS:
            raise ValueError(f"statistic must be one of {STATISTICS}")
        if not (self.burn_in == "auto" or (isinstance(self.burn_in, int) and self.burn_in >= 0)):
            raise ValueError("burn_in must be 'auto' or a nonnegative integer")
        if self.m is not None and self.m < 1:
            raise ValueError("m must be positive")
        if self.quad_order < 5:
            raise ValueError("quad_order must be at least 5")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        if self.a_mdp is not None and self.a_mdp <= 0:
            raise ValueError("a_mdp must be positive")
        for g in self.lm21_generators:
            if g not in LM21_GENERATORS:
                raise ValueError(f"unknown lm21 generator {g!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def worker_count(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("MDEV_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


# ---------------------------------------------------------------------------
# setup and replication


@dataclass(frozen=True)
class Setup:
    model: Model
    observable: object
    solution: SteinSolution

    @property
    def pi_h(self) -> float:
        return self.solution.pi_h


def prepare(spec: ExperimentSpec) -> Setup:
    """Build model, observable and a certified Stein solution."""
    model = build_model(spec.model, spec.model_params)
    obs = build_observable(spec.observable, model.dim)
    sol = stein_solution(model, obs)
    report = certify(sol, model, obs.h, certification_grid(model, sol))
    return Setup(model, obs, report.solution)


def _m_burn(spec: ExperimentSpec, model: Model, eta: float):
    m = spec.m if spec.m is not None else default_m(eta)
    burn = default_burn_in(model, eta) if spec.burn_in == "auto" else int(spec.burn_in)
    return m, burn


def _chunks(n: int, size: int):
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def replicate(spec: ExperimentSpec, setup: Setup, eta: float, quantities: Iterable[str],
              threads: int | None = None, n_reps: int | None = None) -> dict:
    """Per-replication arrays (ordered by replication index) for one step size.

    ``quantities`` is any subset of ``W``, ``S``, ``psi_sum``, ``drift_sum``,
    ``y_partial``, ``q_mean``.
    """
    want = set(quantities)
    n = spec.n_reps if n_reps is None else n_reps
    m, burn = _m_burn(spec, setup.model, eta)
    model, sol, h = setup.model, setup.solution, setup.observable.h
    ks = _y_prefixes(m)

    def work(bounds):
        lo, hi = bounds
        batch = simulate_batch(model, eta, m, burn, spec.seed, np.arange(lo, hi))
        out = {}
        if want & {"W", "S"}:
            out["W"], out["S"] = compute_W_S(batch, sol, model, sol.pi_h, h)
        if "psi_sum" in want:
            out["psi_sum"] = compute_psi_sum(batch, sol, model.sigma)
        if "drift_sum" in want:
            out["drift_sum"] = compute_drift_sum(batch, model)
        if "y_partial" in want:
            out["y_partial"] = y_partial_sums(batch, sol, model.sigma, ks)
        if "q_mean" in want:
            q = np.sum((sol.grad(batch.states[:, :-1]) @ model.sigma) ** 2, axis=-1)
            out["q_mean"] = q.mean(axis=1)
        return out

    chunks = _chunks(n, spec.chunk_size)
    workers = min(worker_count(threads), len(chunks))
    if workers == 1:
        parts = [work(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _y_prefixes(m: int):
    ks = sorted({max(1, m // 4), max(1, m // 2), m})
    return tuple(ks)


# ---------------------------------------------------------------------------
# estimators


def clopper_pearson(k: int, n: int, level: float = 0.95):
    """Exact two-sided binomial interval for a proportion."""
    alpha = 1.0 - level
    lo = 0.0 if k == 0 else float(sps.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(sps.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


@dataclass(frozen=True)
class TailRow:
    x: float
    exceed_count: int
    n: int
    p_hat: float
    normal_tail: float
    ratio: float
    ci_lo: float
    ci_hi: float
    eta: float | None = None
    statistic: str | None = None
    side: str | None = None


def estimate_tail_ratio(samples, x_grid, level: float = 0.95, **labels):
    """Exceedance frequencies P(sample > x) against 1 - Phi(x), with exact CIs."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.size
    if n == 0:
        raise ValueError("no samples")
    rows = []
    for x in x_grid:
        k = int(n - np.searchsorted(s, x, side="right"))
        p = k / n
        tail = float(normal_tail(x))
        lo, hi = clopper_pearson(k, n, level)
        rows.append(TailRow(float(x), k, n, p, tail, p / tail, lo / tail, hi / tail, **labels))
    return rows


def ks_distance(samples) -> float:
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.size
    if n < 2:
        raise ValueError("need at least two samples")
    F = ndtr(s)
    i = np.arange(1, n + 1)
    return float(max(np.max(np.abs(i / n - F)), np.max(np.abs((i - 1) / n - F))))


@dataclass(frozen=True)
class MdpRow:
    a: float
    b: float
    exceed_count: int
    n: int
    estimate: float
    target: float
    ci_lo: float
    ci_hi: float
    low_count: bool
    eta: float | None = None
    statistic: str | None = None


def mdp_estimate(samples, a: float, b: float, level: float = 0.95, **labels) -> MdpRow:
    """-(1/a^2) ln P(sample / a > b) with an exact interval, against the rate b^2 / 2."""
    if a <= 0:
        raise ValueError("a must be positive")
    s = np.asarray(samples, dtype=float)
    n = s.size
    k = int(np.count_nonzero(s / a > b))
    plo, phi = clopper_pearson(k, n, level)
    est = math.inf if k == 0 else -math.log(k / n) / a**2
    ci_lo = -math.log(phi) / a**2
    ci_hi = math.inf if plo == 0 else -math.log(plo) / a**2
    return MdpRow(float(a), float(b), k, n, est, 0.5 * b * b, ci_lo, ci_hi, k < 5, **labels)


def fit_envelope_constant(rows: Sequence[TailRow], x_max: float = X_TESTED_MAX) -> float:
    """Smallest c with CI-adjusted |ln ratio| <= cmd_envelope(x, eta, c) on all tested cells."""
    worst = 0.0
    for r in rows:
        if r.x > x_max or r.eta is None or r.exceed_count == 0:
            continue
        if r.ci_lo <= 1.0 <= r.ci_hi:
            dev = 0.0
        else:
            dev = min(abs(math.log(r.ci_lo)) if r.ci_lo > 0 else math.inf, abs(math.log(r.ci_hi)))
        worst = max(worst, dev / float(cmd_envelope(r.x, r.eta, 1.0)))
    return worst


def ks_rate_slope(etas, ks_values) -> float:
    """Least-squares slope of ln KS against ln (eta |ln eta|)^{1/2}."""
    etas = np.asarray(etas, dtype=float)
    rate = np.sqrt(etas * np.abs(np.log(etas)))
    return float(np.polyfit(np.log(rate), np.log(np.asarray(ks_values, dtype=float)), 1)[0])


# ---------------------------------------------------------------------------
# experiment driver


@dataclass
class ExperimentResult:
    kind: str
    samples: dict = field(default_factory=dict)  # eta -> {"W": sorted array, "S": ...}
    tail: list = field(default_factory=list)
    ks: list = field(default_factory=list)
    mdp: list = field(default_factory=list)
    concentration: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean({
            "kind": self.kind,
            "manifest": self.manifest,
            "fits": self.fits,
            "violations": self.violations,
            "summary": self.summary,
            "tail": [asdict(r) for r in self.tail],
            "ks": self.ks,
            "mdp": [asdict(r) for r in self.mdp],
            "concentration": [asdict(r) for r in self.concentration],
            "samples": {repr(e): {k: v.tolist() for k, v in d.items()} for e, d in self.samples.items()},
        })


def _clean(obj):
    """Replace non-finite floats by None so the payload is strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _manifest(kind: str, spec: ExperimentSpec) -> dict:
    return {"experiment": kind, "spec": spec.to_dict(), "seed": spec.seed, "version": __version__}


def _stat_names(spec: ExperimentSpec):
    return ("W", "S") if spec.statistic == "both" else (spec.statistic,)


def run_replications(spec: ExperimentSpec, threads: int | None = None, kind: str = "replications",
                     setup: Setup | None = None) -> ExperimentResult:
    """Simulate every step size in the spec and aggregate tail, KS and MDP summaries."""
    setup = setup or prepare(spec)
    names = _stat_names(spec)
    res = ExperimentResult(kind=kind, manifest=_manifest(kind, spec))
    for eta in spec.eta:
        reps = replicate(spec, setup, eta, {"W", "S"}, threads)
        res.samples[eta] = {k: np.sort(reps[k]) for k in names}
        summ = {"n": spec.n_reps, "m": _m_burn(spec, setup.model, eta)[0],
                "burn_in": _m_burn(spec, setup.model, eta)[1]}
        for k in names:
            v = reps[k]
            summ[f"mean_{k}"] = float(np.mean(v))
            summ[f"sd_{k}"] = float(np.std(v, ddof=1))
            ksd = ks_distance(v)
            res.ks.append({"eta": eta, "statistic": k, "n": int(v.size), "ks": ksd})
            res.tail += estimate_tail_ratio(v, spec.x_grid, eta=eta, statistic=k, side="upper")
            res.tail += estimate_tail_ratio(-v, spec.x_grid, eta=eta, statistic=k, side="lower")
            if spec.a_mdp is not None:
                if spec.a_mdp > 0.5 * eta ** -0.75:
                    warnings.warn(f"a = {spec.a_mdp} is large for eta = {eta} "
                                  f"(moderate range needs a << eta^-3/4)")
                for b in spec.b_mdp:
                    res.mdp.append(mdp_estimate(v, spec.a_mdp, b, eta=eta, statistic=k))
        if len(names) == 2:
            W, S = reps["W"], reps["S"]
            summ["corr_WS"] = float(np.corrcoef(W, S)[0, 1])
            summ["mean_abs_W_minus_S"] = float(np.mean(np.abs(W - S)))
        res.summary[repr(eta)] = summ
    for k in names:
        rows = [r for r in res.tail if r.statistic == k]
        res.fits[f"envelope_c_{k}"] = fit_envelope_constant(rows)
        ks_rows = [r for r in res.ks if r["statistic"] == k]
        if len(ks_rows) >= 2:
            res.fits[f"ks_slope_{k}"] = ks_rate_slope([r["eta"] for r in ks_rows], [r["ks"] for r in ks_rows])
    return res


def ks_monotone_violations(ks_rows, slack: float = 0.005):
    """Step sizes where KS grows when eta shrinks by more than ``slack``."""
    out = []
    for stat in sorted({r["statistic"] for r in ks_rows}):
        rows = sorted((r for r in ks_rows if r["statistic"] == stat), key=lambda r: -r["eta"])
        for a, b in zip(rows, rows[1:]):
            if b["ks"] > a["ks"] + slack:
                out.append(f"KS({stat}) rises from {a['ks']:.4f} at eta={a['eta']} "
                           f"to {b['ks']:.4f} at eta={b['eta']}")
    return out


def run_experiment(kind: str, spec: ExperimentSpec, threads: int | None = None) -> ExperimentResult:
    """Entry point used by the CLI; fills ``violations`` for exit-code purposes."""
    if kind in ("tail-ratio", "berry-esseen", "mdp"):
        if kind == "mdp" and spec.a_mdp is None:
            raise ValueError("the mdp experiment needs a_mdp")
        res = run_replications(spec, threads, kind=kind)
        if kind == "tail-ratio":
            for k, c in res.fits.items():
                if k.startswith("envelope_c") and c > 10.0:
                    res.violations.append(f"{k} = {c:.3g} exceeds 10")
        elif kind == "berry-esseen":
            res.violations += ks_monotone_violations(res.ks)
        else:
            for r in res.mdp:
                if r.exceed_count == 0:
                    res.violations.append(f"no exceedances for a={r.a}, b={r.b}, eta={r.eta}")
                elif r.ci_hi < r.target:
                    res.violations.append(
                        f"MDP estimate interval below rate {r.target} at a={r.a}, b={r.b}, eta={r.eta}")
        return res
    if kind == "concentration":
        res = ExperimentResult(kind=kind, manifest=_manifest(kind, spec))
        setup = prepare(spec)
        for ck in CONCENTRATION_KINDS:
            out = concentration_check(ck, spec, threads=threads, setup=setup)
            res.concentration += out.rows
            res.fits[ck] = out.constants
            if out.violation:
                res.violations.append(f"{ck}: {out.note}")
        return res
    if kind == "lm21":
        res = ExperimentResult(kind=kind, manifest=_manifest(kind, spec))
        for gen in spec.lm21_generators:
            out = lm21_falsifier(gen, spec.lm21_alpha, spec.lm21_n, spec.n_reps, None, spec.seed)
            res.concentration += out.rows
            res.fits[f"lm21_{gen}"] = out.constants
            if out.violation:
                res.violations.append(f"lm21 {gen}: {out.note}")
        return res
    raise ValueError(f"unknown experiment {kind!r}")


# ---------------------------------------------------------------------------
# concentration checks


@dataclass(frozen=True)
class ConcentrationRow:
    check: str
    y: float
    empirical_tail: float
    bound: float
    violation: bool
    k: int | None = None
    extra: float | None = None  # e.g. value of a second bound form


@dataclass
class ConcentrationOutcome:
    check: str
    rows: list
    constants: dict
    violation: bool
    note: str = ""


def _tail_grid(values, n_points: int, lo_q: float = 0.5):
    v = np.abs(np.asarray(values, dtype=float))
    if v.max() == 0.0:
        return np.linspace(0.1, 1.0, n_points)
    hi_q = 1.0 - min(0.5, 10.0 / v.size)
    lo, hi = np.quantile(v, [lo_q, hi_q])
    if hi <= lo:
        hi = v.max()
    return np.linspace(lo, hi, n_points)


def _exceed(values, y):
    v = np.sort(np.asarray(values, dtype=float))
    return np.array([(v.size - np.searchsorted(v, t, side="right")) / v.size for t in np.atleast_1d(y)])


def psi_bound(y, m: int, c1: float, c: float):
    y = np.asarray(y, dtype=float)
    return c1 * np.exp(-y * y / (c1 * (m + c * y)))


def min_prefactor(K: float, p: float) -> float:
    """Smallest c > 0 with c exp(-K / c) >= p (the left side increases in c)."""
    if p <= 0:
        return 0.0
    f = lambda lc: lc - K * math.exp(-lc) - math.log(p)
    lo, hi = -50.0, 50.0
    while f(lo) > 0:
        lo *= 2.0
    while f(hi) < 0:
        hi *= 2.0
    return math.exp(optimize.brentq(f, lo, hi, xtol=1e-14))


def fit_psi_constants(y, p, m: int, c_grid=None):
    """Smallest c1 (over a grid of c) with c1 exp(-y^2/(c1 (m + c y))) >= p everywhere."""
    c_grid = np.logspace(-3, 3, 61) if c_grid is None else c_grid
    best = (math.inf, math.nan)
    for c in c_grid:
        c1 = max(min_prefactor(yi * yi / (m + c * yi), pi) for yi, pi in zip(y, p))
        if c1 < best[0]:
            best = (c1, float(c))
    return best


def em_stationary_q_mean(model: Model, sol: SteinSolution, eta: float) -> float | None:
    """E |sigma^T grad phi|^2 under the EM invariant law, when it is Gaussian and grad phi is affine."""
    if not model.is_linear or sol.degree is None or sol.degree > 2:
        return None
    d = model.dim
    w = sol.grad(np.zeros(d))
    G = np.stack([sol.grad(np.eye(d)[j]) - w for j in range(d)], axis=-1)
    cov = em_stationary_covariance(model, eta)
    st = model.sigma.T
    return float(np.sum((st @ w) ** 2) + np.trace(st @ G @ cov @ G.T @ st.T))


def concentration_check(kind: str, spec: ExperimentSpec, y_grid=None, threads: int | None = None,
                        setup: Setup | None = None) -> ConcentrationOutcome:
    """Empirical tails of trajectory sums against fitted bounds of a prescribed shape.

    Uses the first step size of the spec.
    """
    if kind not in CONCENTRATION_KINDS:
        raise ValueError(f"kind must be one of {CONCENTRATION_KINDS}")
    if spec.n_reps < 1000:
        raise ValueError("concentration checks need at least 1000 replications")
    setup = setup or prepare(spec)
    eta = spec.eta[0]
    m, _ = _m_burn(spec, setup.model, eta)

    if kind == "psi_sum":
        stat = np.abs(replicate(spec, setup, eta, {"psi_sum"}, threads)["psi_sum"])
        y = _tail_grid(stat, spec.y_points) if y_grid is None else np.asarray(y_grid, float)
        p = _exceed(stat, y)
        c1, c = fit_psi_constants(y, p, m)
        bound = psi_bound(y, m, c1, c) if math.isfinite(c1) else np.full_like(y, math.nan)
        bad = not (c1 <= CONSTANT_CAP)
        rows = [ConcentrationRow(kind, float(a), float(b), float(u), bool(bad or b > u * (1 + 1e-9)))
                for a, b, u in zip(y, p, bound)]
        return ConcentrationOutcome(kind, rows, {"c1": c1, "c": c, "m": m}, bad,
                                    f"fitted c1 = {c1:.3g}" + (" exceeds cap" if bad else ""))

    if kind == "drift_sum":
        stat = replicate(spec, setup, eta, {"drift_sum"}, threads)["drift_sum"]
        y = _tail_grid(stat, spec.y_points) if y_grid is None else np.asarray(y_grid, float)
        p = _exceed(stat, y)
        pos = p > 0
        slope = float(np.polyfit(y[pos], np.log(p[pos]), 1)[0]) if pos.sum() >= 2 else math.nan
        rate = -slope
        pref = float(np.max(p[pos] * np.exp(rate * y[pos]))) if pos.any() else math.nan
        bound = pref * np.exp(-rate * y)
        bad = not slope < 0
        rows = [ConcentrationRow(kind, float(a), float(b), float(u), bool(bad or b > u * (1 + 1e-9)))
                for a, b, u in zip(y, p, bound)]
        return ConcentrationOutcome(kind, rows, {"rate": rate, "prefactor": pref,
                                                 "mean": float(np.mean(stat))}, bad,
                                    f"log-linear tail slope {slope:.4g}")

    # y_sum: common constant c across prefix lengths k
    reps = replicate(spec, setup, eta, {"y_partial", "q_mean"}, threads)
    ks = _y_prefixes(m)
    q_mean = em_stationary_q_mean(setup.model, setup.solution, eta)
    source = "EM stationary law"
    if q_mean is None:
        q_mean = float(np.mean(reps["q_mean"]))
        source = "replication grand mean"
    dev = np.abs(reps["y_partial"] - np.asarray(ks, dtype=float) * q_mean)
    scaled = dev / np.sqrt(np.asarray(ks, dtype=float))
    s_grid = _tail_grid(scaled.ravel(), spec.y_points) if y_grid is None else np.asarray(y_grid, float)
    cells = []
    for j, k in enumerate(ks):
        y = s_grid * math.sqrt(k)
        cells.append((k, y, _exceed(dev[:, j], y)))
    c_fit = math.inf
    for k, y, p in cells:
        for yi, pi in zip(y, p):
            if pi > 0 and yi > 0:
                c_fit = min(c_fit, k * math.log(2.0 / pi) / (yi * yi))
    rows = []
    bad = not (c_fit > 1e-3)
    for k, y, p in cells:
        bound = 2.0 * np.exp(-c_fit * y * y / k) if math.isfinite(c_fit) else np.zeros_like(y)
        for yi, pi, bi in zip(y, p, bound):
            rows.append(ConcentrationRow(kind, float(yi), float(pi), float(bi),
                                         bool(bad or pi > bi * (1 + 1e-9)), k=int(k)))
    return ConcentrationOutcome(kind, rows, {"c": c_fit, "q_mean": q_mean, "q_mean_source": source,
                                             "k": list(ks)}, bad, f"fitted c = {c_fit:.3g}")


# ---------------------------------------------------------------------------
# martingale inequality falsifier


_LM21_MOMENT_C = {"bounded": 1.0, "centered_exponential": 0.5, "gaussian_square": 0.25}


def _lm21_draws(generator_id: str, n: int, rng: np.random.Generator):
    if generator_id == "bounded":
        return 2.0 * rng.integers(0, 2, size=n) - 1.0
    if generator_id == "centered_exponential":
        return rng.standard_exponential(n) - 1.0
    if generator_id == "gaussian_square":
        return rng.standard_normal(n) ** 2 - 1.0
    raise ValueError(f"unknown generator {generator_id!r}")


def lm21_moment(generator_id: str, alpha: float, c: float | None = None) -> float:
    """E zeta^2 exp(c |zeta|^alpha) for one difference of the given law."""
    c = _LM21_MOMENT_C[generator_id] if c is None else c
    if generator_id == "bounded":
        return math.exp(c)
    if generator_id == "centered_exponential":
        f = lambda x: (x - 1.0) ** 2 * math.exp(c * abs(x - 1.0) ** alpha - x)
        return integrate.quad(f, 0, 1)[0] + integrate.quad(f, 1, np.inf)[0]
    if generator_id == "gaussian_square":
        f = lambda z: (z * z - 1.0) ** 2 * math.exp(c * abs(z * z - 1.0) ** alpha - 0.5 * z * z) \
            / math.sqrt(2 * math.pi)
        return 2.0 * (integrate.quad(f, 0, 1)[0] + integrate.quad(f, 1, np.inf)[0])
    raise ValueError(f"unknown generator {generator_id!r}")


def fit_c_alpha(x, p, u_n: float, alpha: float) -> float:
    """Smallest c_alpha with c_alpha exp(-x^2/(c_alpha (u_n + x^{2-alpha}))) >= p."""
    return max((min_prefactor(xi * xi / (u_n + xi ** (2.0 - alpha)), pi)
                for xi, pi in zip(np.atleast_1d(x), np.atleast_1d(p))), default=0.0)


def lm21_falsifier(generator_id: str, alpha: float = 1.0, n: int = 1000, n_reps: int = 10000,
                   x_grid=None, seed: int = 0) -> ConcentrationOutcome:
    """Sums of i.i.d. martingale differences against the exponential martingale bound."""
    if generator_id not in LM21_GENERATORS:
        raise ValueError(f"generator must be one of {LM21_GENERATORS}")
    c = _LM21_MOMENT_C[generator_id]
    u_n = n * lm21_moment(generator_id, alpha, c)
    sums = np.empty(n_reps)
    for r in range(n_reps):
        rng = np.random.Generator(np.random.Philox(key=np.array([seed, r], dtype=np.uint64)))
        sums[r] = np.sum(_lm21_draws(generator_id, n, rng))
    x = math.sqrt(n) * np.linspace(0.5, 4.0, 8) if x_grid is None else np.asarray(x_grid, float)
    s = np.sort(sums)
    p = np.array([(s.size - np.searchsorted(s, xi, side="left")) / s.size for xi in x])  # P(sum >= x)
    c_alpha = fit_c_alpha(x, p, u_n, alpha)
    bad = not (c_alpha <= CONSTANT_CAP)
    fitted = lm21_bound(np.maximum(x, 1e-300), u_n, alpha, c, max(c_alpha, 1e-300))
    piece = lm21_bound(np.maximum(x, 1e-300), u_n, alpha, c, 1.0, form="piecewise")
    rows = [ConcentrationRow(f"lm21:{generator_id}", float(a), float(b), float(u),
                             bool(bad or b > u * (1 + 1e-9)), extra=float(w))
            for a, b, u, w in zip(x, p, fitted, piece)]
    return ConcentrationOutcome(f"lm21:{generator_id}", rows,
                                {"c_alpha": c_alpha, "u_n": u_n, "c": c, "alpha": alpha,
                                 "piecewise_dominates": bool(np.all(p <= piece))},
                                bad, f"fitted c_alpha = {c_alpha:.3g}")
