"""Command-line entry point.

Every subcommand writes its tables into ``--out-dir`` and finishes by writing
``manifest.json`` with the config echo, seed, version, timing and a sha256
digest of every file produced. Payload files never contain timing, so reruns
with the same inputs are byte-identical.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bounds
from .catalog import (MODEL_IDS, OBSERVABLE_IDS, build_model, build_observable,
                      certification_grid, stein_solution)
from .harness import ExperimentSpec, run_experiment
from .integrator import default_burn_in, default_m, simulate, simulate_batch
from .stats import compute_psi_sum, compute_V, compute_W_S, compute_Y, decompose
from .stein import certify

EXPERIMENTS = ("tail-ratio", "berry-esseen", "mdp", "concentration", "lm21")
BOUND_FUNCTIONS = ("normal_tail", "normal_tail_sandwich", "cmd_envelope", "lm21_bound", "th0_envelope")

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_field(name, value, kind):
    if kind == "number":
        if not _is_number(value):
            raise ConfigError(f"{name}: expected a number")
    elif kind == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{name}: expected an integer")
    elif kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string")
    elif kind == "dict":
        if not isinstance(value, dict):
            raise ConfigError(f"{name}: expected an object")
    elif kind.startswith("list:"):
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list")
        for i, v in enumerate(value):
            _check_field(f"{name}[{i}]", v, kind[5:])


_SCHEMA = {
    "model": "str", "observable": "str", "eta": "list:number", "model_params": "dict",
    "m": "int", "n_reps": "int", "x_grid": "list:number", "a_mdp": "number",
    "b_mdp": "list:number", "statistic": "str", "seed": "int", "burn_in": "burn",
    "quad_order": "int", "chunk_size": "int", "y_points": "int",
    "lm21_generators": "list:str", "lm21_alpha": "number", "lm21_n": "int",
}


def spec_from_dict(cfg: dict) -> ExperimentSpec:
    unknown = sorted(set(cfg) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    for key, value in cfg.items():
        kind = _SCHEMA[key]
        if value is None and key in ("m", "a_mdp"):
            continue
        if kind == "burn":
            if value != "auto" and (not isinstance(value, int) or isinstance(value, bool) or value < 0):
                raise ConfigError("burn_in: expected 'auto' or a nonnegative integer")
            continue
        _check_field(key, value, kind)
    for i, e in enumerate(cfg.get("eta", [])):
        if not 0.0 < e < 1.0:
            raise ConfigError(f"eta[{i}]: {e} is outside (0, 1)")
    for i, x in enumerate(cfg.get("x_grid", [])):
        if x < 0:
            raise ConfigError(f"x_grid[{i}]: {x} is negative")
    if "n_reps" in cfg and cfg["n_reps"] < 100:
        raise ConfigError(f"n_reps: {cfg['n_reps']} is below 100")
    if cfg.get("model", "ou") not in MODEL_IDS:
        raise ConfigError(f"model: unknown id {cfg['model']!r}")
    if cfg.get("observable", "x") not in OBSERVABLE_IDS:
        raise ConfigError(f"observable: unknown id {cfg['observable']!r}")
    try:
        return ExperimentSpec(**cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path) -> ExperimentSpec:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("top level of the config must be an object")
    return spec_from_dict(cfg)


# ---------------------------------------------------------------------------
# output helpers


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return "" if v is None else str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(fmt(v) for v in r) + "\n")
    return buf.getvalue()


class Run:
    """Collects output files and writes the manifest last."""

    def __init__(self, out_dir, subcommand: str, config, seed):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.subcommand = subcommand
        self.config = config
        self.seed = seed
        self.files = {}
        self.t0 = time.perf_counter()

    def write(self, name: str, text: str):
        data = text.encode()
        (self.dir / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def finish(self, status: int):
        manifest = {
            "tool": "mdev", "version": __version__, "subcommand": self.subcommand,
            "config": self.config, "seed": self.seed, "exit_code": status,
            "timing": {"wall_seconds": time.perf_counter() - self.t0},
            "files": {k: {"sha256": v} for k, v in sorted(self.files.items())},
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        return status


def _json(obj) -> str:
    return json.dumps(obj, indent=None, separators=(",", ":"), allow_nan=False) + "\n"


def _params(text):
    if not text:
        return {}
    try:
        out = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--params: invalid JSON ({exc})") from exc
    if not isinstance(out, dict):
        raise ConfigError("--params must be a JSON object")
    return out


def parse_grid(text: str):
    """``a:step:b`` inclusive of both ends."""
    try:
        a, step, b = (float(t) for t in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"--grid must look like a:step:b, got {text!r}") from exc
    if step <= 0 or b < a:
        raise ConfigError("--grid needs step > 0 and b >= a")
    n = int(math.floor((b - a) / step + 1e-9)) + 1
    return a + step * np.arange(n)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    model = build_model(args.model, _params(args.params))
    m = args.m if args.m is not None else default_m(args.eta)
    burn = args.burn_in if args.burn_in is not None else default_burn_in(model, args.eta)
    config = {"model": args.model, "params": _params(args.params), "eta": args.eta, "m": m,
              "burn_in": burn, "rep_index": args.rep_index}
    run = Run(args.out_dir, "simulate", config, args.seed)
    traj = simulate(model, args.eta, m, burn, args.seed, args.rep_index)
    header = ["k"] + [f"theta{j + 1}" for j in range(model.dim)]
    rows = [[k, *traj.states[k]] for k in range(m + 1)]
    run.write("trajectory.csv", csv_text(header, rows))
    side = {"eta": args.eta, "m": m, "seed": args.seed, "rep_index": args.rep_index,
            "burn_in": burn, "model": model.describe()}
    run.write("trajectory.json", _json(side))
    return run.finish(EXIT_OK)


def cmd_stein_check(args):
    model = build_model(args.model, _params(args.params))
    obs = build_observable(args.observable, model.dim)
    config = {"model": args.model, "params": _params(args.params), "observable": args.observable}
    run = Run(args.out_dir, "stein-check", config, None)
    sol = stein_solution(model, obs)
    rep = certify(sol, model, obs.h, certification_grid(model, sol), raise_on_fail=False)
    header = ["model", "observable", "kind", "pi_h", "residual_sup", "tol", "passed", "n_points",
              *[f"sup_d{k}" for k in range(5)]]
    row = [args.model, args.observable, sol.kind, sol.pi_h, rep.residual_sup, rep.tol, rep.passed,
           rep.n_points, *rep.derivative_bounds]
    text = csv_text(header, [row])
    sys.stdout.write(text)
    run.write("stein_check.csv", text)
    if args.dump_grid:
        if model.dim != 1:
            raise ConfigError("--dump-grid is available for scalar models only")
        grid = certification_grid(model, sol)
        cols = [grid[:, 0], sol.phi(grid), sol.grad(grid)[:, 0], sol.hess(grid)[:, 0, 0]]
        run.write("stein_grid.csv", csv_text(["x", "phi", "dphi", "d2phi"], zip(*cols)))
    return run.finish(EXIT_OK if rep.passed else EXIT_VIOLATION)


def cmd_decompose(args):
    model = build_model(args.model, _params(args.params))
    obs = build_observable(args.observable, model.dim)
    m = args.m if args.m is not None else default_m(args.eta)
    burn = args.burn_in if args.burn_in is not None else default_burn_in(model, args.eta)
    config = {"model": args.model, "params": _params(args.params), "observable": args.observable,
              "eta": args.eta, "m": m, "burn_in": burn, "n_reps": args.n_reps,
              "quad_order": args.quad_order}
    run = Run(args.out_dir, "decompose", config, args.seed)
    sol = stein_solution(model, obs)
    sol = certify(sol, model, obs.h, certification_grid(model, sol)).solution
    batch = simulate_batch(model, args.eta, m, burn, args.seed, np.arange(args.n_reps))
    W, S = compute_W_S(batch, sol, model, sol.pi_h, obs.h)
    Y = compute_Y(batch, sol, model.sigma)
    V = compute_V(batch, sol, model)
    dec = decompose(batch, sol, model, obs.h, args.quad_order)
    psi = compute_psi_sum(batch, sol, model.sigma)
    header = ["rep", "W", "S", "Y", "V", "H", *[f"R{i}" for i in range(1, 7)], "residual", "psi_sum"]
    rows = [[r, W[r], S[r], Y[r], V[r], dec.H[r], *dec.R[r], dec.residual[r], psi[r]]
            for r in range(args.n_reps)]
    text = csv_text(header, rows)
    sys.stdout.write(text)
    run.write("decompose.csv", text)
    return run.finish(EXIT_OK)


def cmd_bounds(args):
    xs = parse_grid(args.grid)
    config = {k: v for k, v in vars(args).items() if k not in ("func", "out_dir", "threads", "seed")}
    run = Run(args.out_dir, "bounds eval", config, None)
    fn = args.fn
    if fn == "normal_tail":
        header, cols = ["x", "normal_tail"], [bounds.normal_tail(xs)]
    elif fn == "normal_tail_sandwich":
        lo, hi = bounds.normal_tail_sandwich(xs)
        header, cols = ["x", "lower", "normal_tail", "upper"], [lo, bounds.normal_tail(xs), hi]
    elif fn == "cmd_envelope":
        header, cols = ["x", "cmd_envelope"], [bounds.cmd_envelope(xs, args.eta, args.c)]
    elif fn == "lm21_bound":
        header = ["x", f"lm21_{args.form}"]
        cols = [bounds.lm21_bound(xs, args.u_n, args.alpha, args.c, args.c_alpha, form=args.form)]
    else:
        header, cols = ["x", "th0_envelope"], [bounds.th0_envelope(xs, args.epsilon, args.delta, args.C)]
    text = csv_text(header, zip(xs, *(np.broadcast_to(c, xs.shape) for c in cols)))
    sys.stdout.write(text)
    run.write("bounds.csv", text)
    return run.finish(EXIT_OK)


def _experiment_tables(res):
    tail = csv_text(
        ["eta", "statistic", "side", "x", "exceed_count", "n", "p_hat", "normal_tail", "ratio",
         "ratio_ci_lo", "ratio_ci_hi"],
        [[r.eta, r.statistic, r.side, r.x, r.exceed_count, r.n, r.p_hat, r.normal_tail, r.ratio,
          r.ci_lo, r.ci_hi] for r in res.tail])
    ks = csv_text(["eta", "statistic", "n", "ks"],
                  [[r["eta"], r["statistic"], r["n"], r["ks"]] for r in res.ks])
    mdp = csv_text(["eta", "statistic", "a", "b", "exceed_count", "n", "estimate", "target",
                    "ci_lo", "ci_hi", "low_count"],
                   [[r.eta, r.statistic, r.a, r.b, r.exceed_count, r.n, r.estimate, r.target,
                     r.ci_lo, r.ci_hi, r.low_count] for r in res.mdp])
    conc = csv_text(["check", "k", "y", "empirical_tail", "bound", "violation", "extra"],
                    [[r.check, r.k, r.y, r.empirical_tail, r.bound, r.violation, r.extra]
                     for r in res.concentration])
    return {"tail.csv": tail, "ks.csv": ks, "mdp.csv": mdp, "conc.csv": conc}


def cmd_experiment(args):
    spec = parse_config(args.config)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    run = Run(args.out_dir, f"experiment {args.kind}", spec.to_dict(), spec.seed)
    res = run_experiment(args.kind, spec, threads=args.threads)
    run.write("result.json", _json(res.to_dict()))
    for name, text in _experiment_tables(res).items():
        run.write(name, text)
    for v in res.violations:
        print(f"violation: {v}", file=sys.stderr)
    return run.finish(EXIT_VIOLATION if res.violations else EXIT_OK)


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--threads", type=int, default=None)

    p = _Parser(prog="mdev", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mdev {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def model_args(sp, observable=True):
        sp.add_argument("--model", choices=MODEL_IDS, default="ou")
        sp.add_argument("--params", default=None, help="model parameters as a JSON object")
        if observable:
            sp.add_argument("--observable", choices=OBSERVABLE_IDS, default="x")

    s = sub.add_parser("simulate", parents=[common], help="write one EM trajectory")
    model_args(s, observable=False)
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("--m", type=int, default=None)
    s.add_argument("--burn-in", type=int, default=None)
    s.add_argument("--rep-index", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("stein-check", parents=[common], help="certify a catalog Stein solution")
    model_args(s)
    s.add_argument("--dump-grid", action="store_true")
    s.set_defaults(func=cmd_stein_check)

    s = sub.add_parser("decompose", parents=[common], help="per-trajectory statistics and remainders")
    model_args(s)
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("--m", type=int, default=None)
    s.add_argument("--burn-in", type=int, default=None)
    s.add_argument("--n-reps", type=int, default=10)
    s.add_argument("--quad-order", type=int, default=16)
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("bounds", help="closed-form evaluators")
    bsub = s.add_subparsers(dest="bounds_command", parser_class=_Parser)
    e = bsub.add_parser("eval", parents=[common], help="tabulate an evaluator over a grid")
    e.add_argument("--fn", choices=BOUND_FUNCTIONS, required=True)
    e.add_argument("--grid", required=True, help="a:step:b")
    e.add_argument("--eta", type=float, default=0.1)
    e.add_argument("--c", type=float, default=1.0)
    e.add_argument("--u-n", type=float, default=100.0)
    e.add_argument("--alpha", type=float, default=1.0)
    e.add_argument("--c-alpha", type=float, default=1.0)
    e.add_argument("--form", choices=("stated", "derived", "piecewise"), default="stated")
    e.add_argument("--epsilon", type=float, default=0.1)
    e.add_argument("--delta", type=float, default=0.1)
    e.add_argument("--C", type=float, default=1.0)
    e.set_defaults(func=cmd_bounds)

    s = sub.add_parser("experiment", parents=[common], help="replicated experiment from a JSON config")
    s.add_argument("kind", choices=EXPERIMENTS)
    s.add_argument("-c", "--config", required=True)
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    if getattr(args, "seed", None) is None and args.func is not cmd_experiment:
        args.seed = 0
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - report and map to the error exit code
        print(f"mdev: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
