"""Command-line front end.

    twofold rho      -A 2 -B 4 --method hy
    twofold sweep    --a-range 0.25 4 21 --b-range 0.25 4 21 --methods hy,no-pde --out surf.csv
    twofold orbit    --method td -A 1 -B 2 --eps 1e-3 --y0 -0.3 --out trace.csv
    twofold compare  -A 2 -B 4
    twofold selftest

Exit codes: 0 success, 2 invalid input, 3 a result did not converge.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from ._ensemble import run_map, worker_count
from .core import (Method, PerturbationScale, RhoResult, Side, TwoFoldParams,
                   rho_hysteresis_closed_form)
from .hysteresis import (HystereticOrbitConfig, flow, rho_hysteresis_empirical,
                         simulate_hysteretic_orbit)
from .noise import McConfig, PdeGrid, rho_noise_pde, simulate_reduced_sde
from .timedelay import (DEFAULT_DEPTH, rho_timedelay, rho_timedelay_empirical,
                        simulate_delayed_orbit)

EXIT_OK, EXIT_USAGE, EXIT_UNCONVERGED = 0, 2, 3
CSV_HEADER = ("A", "B", "method", "eps", "rho", "stderr", "converged")
METHODS = tuple(m.value for m in Method)


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Method parameters and dispatch
# ---------------------------------------------------------------------------

@dataclass
class MethodParams:
    eps: Optional[float] = None
    k: Optional[int] = None
    depth: int = DEFAULT_DEPTH
    grid_du: float = 0.01
    grid_dr: float = 0.005
    u_max: Optional[float] = None
    r_min: Optional[float] = None
    r_max: Optional[float] = None
    paths: int = 100_000
    dt: float = 1e-3
    seed: int = 0
    empirical: bool = False

    def grid(self) -> PdeGrid:
        return PdeGrid(u_max=self.u_max, r_min=self.r_min, r_max=self.r_max,
                       du=self.grid_du, dr=self.grid_dr)

    def mc(self, seed: Optional[int] = None) -> McConfig:
        return McConfig(n_paths=self.paths, dt=self.dt, seed=self.seed if seed is None else seed)


def compute(method: str, p: TwoFoldParams, mp: MethodParams, *, seed: Optional[int] = None,
            workers: Optional[int] = None) -> RhoResult:
    seed = mp.seed if seed is None else seed
    if method == "hy":
        if mp.empirical:
            return rho_hysteresis_empirical(p, PerturbationScale(mp.eps or 1e-4), mp.paths,
                                            seed=seed, workers=workers)
        return rho_hysteresis_closed_form(p)
    if method == "td":
        if mp.empirical:
            return rho_timedelay_empirical(p, PerturbationScale(mp.eps or 1e-3), mp.paths,
                                           seed=seed, workers=workers)
        return rho_timedelay(p, eps=mp.eps or 1e-4, k=mp.k, depth=mp.depth)
    if method == "no-pde":
        return rho_noise_pde(p, mp.grid())
    if method == "no-mc":
        return simulate_reduced_sde(p, mp.mc(seed), workers=workers)
    raise UsageError(f"unknown method {method!r}")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _diag_text(d: dict) -> str:
    return ";".join(f"{k}={_fmt(float(v) if isinstance(v, np.floating) else v)}"
                    for k, v in sorted(d.items()))


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

_PARAM_FLAGS = {
    "eps": float, "k": int, "depth": int, "grid_du": float, "grid_dr": float,
    "u_max": float, "r_min": float, "r_max": float, "paths": int, "dt": float, "seed": int,
}


def _add_method_flags(ap: argparse.ArgumentParser) -> None:
    g = ap.add_argument_group("method parameters")
    g.add_argument("--eps", type=float, help="perturbation size (hy/td)")
    g.add_argument("--k", type=int, help="time-delay sequence index")
    g.add_argument("--depth", type=int, help="time-delay switch-pattern depth")
    g.add_argument("--grid-du", dest="grid_du", type=float)
    g.add_argument("--grid-dr", dest="grid_dr", type=float)
    g.add_argument("--u-max", dest="u_max", type=float)
    g.add_argument("--r-min", dest="r_min", type=float)
    g.add_argument("--r-max", dest="r_max", type=float)
    g.add_argument("--paths", type=int, help="Monte Carlo paths / ensemble size")
    g.add_argument("--dt", type=float, help="Monte Carlo time step")
    g.add_argument("--seed", type=int)
    g.add_argument("--empirical", action="store_true", default=None,
                   help="hy/td: estimate by simulating an ensemble of orbits")
    g.add_argument("--config", help="JSON file with defaults; flags override it")


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _merged(args: argparse.Namespace, cfg: dict, key: str, default=None):
    val = getattr(args, key, None)
    if val is not None:
        return val
    return cfg.get(key, default)


def _method_params(args: argparse.Namespace, cfg: dict) -> MethodParams:
    mp = MethodParams()
    for key, typ in _PARAM_FLAGS.items():
        val = _merged(args, cfg, key)
        if val is not None:
            try:
                setattr(mp, key, typ(val))
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad value for {key}: {val!r}") from exc
    mp.empirical = bool(_merged(args, cfg, "empirical", False))
    if mp.eps is not None and not mp.eps > 0:
        raise UsageError("--eps must be positive")
    if mp.paths < 1:
        raise UsageError("--paths must be >= 1")
    if mp.seed < 0:
        raise UsageError("--seed must be nonnegative")
    if not mp.dt > 0:
        raise UsageError("--dt must be positive")
    if mp.depth < 1:
        raise UsageError("--depth must be >= 1")
    mp.grid()  # validates
    return mp


def _params(args, cfg) -> TwoFoldParams:
    A, B = _merged(args, cfg, "A"), _merged(args, cfg, "B")
    if A is None or B is None:
        raise UsageError("-A and -B are required")
    return TwoFoldParams(float(A), float(B))


def _method(args, cfg, default="hy") -> str:
    m = _merged(args, cfg, "method", default)
    if m not in METHODS:
        raise UsageError(f"--method must be one of {', '.join(METHODS)}")
    return m


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_rho(args, out) -> int:
    cfg = _load_config(args.config)
    p, method, mp = _params(args, cfg), _method(args, cfg), _method_params(args, cfg)
    res = compute(method, p, mp)
    out.write(",".join([method, _fmt(p.A), _fmt(p.B), _fmt(res.value),
                        _fmt(res.standard_error), _diag_text(res.diagnostics)]) + "\n")
    return EXIT_OK if res.converged else EXIT_UNCONVERGED


@dataclass
class SweepSpec:
    a_range: Sequence[float] = (0.25, 4.0, 5)
    b_range: Sequence[float] = (0.25, 4.0, 5)
    spacing: str = "log"
    methods: Sequence[str] = ("hy",)
    params: MethodParams = field(default_factory=MethodParams)
    seed: int = 0
    out: Optional[str] = None
    format: str = "csv"

    def axis(self, rng) -> List[float]:
        lo, hi, n = float(rng[0]), float(rng[1]), int(rng[2])
        if n < 1 or not (lo > 0 and hi > 0):
            raise UsageError("ranges need positive bounds and count >= 1")
        if n == 1:
            return [lo]
        if self.spacing == "log":
            vals = np.geomspace(lo, hi, n)
        elif self.spacing == "linear":
            vals = np.linspace(lo, hi, n)
        else:
            raise UsageError("--spacing must be log or linear")
        return [float(v) for v in vals]

    def cells(self):
        for i, A in enumerate(self.axis(self.a_range)):
            for j, B in enumerate(self.axis(self.b_range)):
                for method in self.methods:
                    yield i, j, A, B, method


def _cell_seed(seed: int, i: int, j: int) -> int:
    # each cell owns its stream; no state is shared between cells
    return int(np.random.SeedSequence([seed, i, j]).generate_state(1, dtype=np.uint32)[0])


def run_sweep(spec: SweepSpec, workers: Optional[int] = None):
    cells = list(spec.cells())
    workers = worker_count() if workers is None else workers

    def one(cell):
        i, j, A, B, method = cell
        try:
            res = compute(method, TwoFoldParams(A, B), spec.params,
                          seed=_cell_seed(spec.seed, i, j), workers=1)
            return {"A": A, "B": B, "method": method, "eps": res.eps_used if res.eps_used else
                    (spec.params.eps if method == "td" else None),
                    "rho": res.value, "stderr": res.standard_error, "converged": res.converged,
                    "diagnostics": {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                                    for k, v in res.diagnostics.items()}}
        except Exception as exc:  # recorded per cell, the sweep goes on
            return {"A": A, "B": B, "method": method, "eps": None, "rho": None, "stderr": None,
                    "converged": False, "error": f"{type(exc).__name__}: {exc}"}

    return run_map(one, cells, workers)


def _td_eps(row, spec):
    if row["method"] == "td" and row["eps"] is None and row["rho"] is not None:
        return spec.params.eps or 1e-4
    return row["eps"]


def render_sweep(rows, spec: SweepSpec) -> str:
    if spec.format == "json":
        slim = [{k: r[k] for k in CSV_HEADER} | {"eps": _td_eps(r, spec)} for r in rows]
        return json.dumps(slim, indent=1, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(r["A"]), _fmt(r["B"]), r["method"], _fmt(_td_eps(r, spec)),
                    _fmt(r["rho"]), _fmt(r["stderr"]), _fmt(bool(r["converged"]))])
    return buf.getvalue()


def _sweep_spec(args) -> SweepSpec:
    cfg = _load_config(args.config)
    spec = SweepSpec()
    for key in ("a_range", "b_range"):
        val = _merged(args, cfg, key)
        if val is not None:
            if len(val) != 3:
                raise UsageError(f"--{key.replace('_', '-')} takes MIN MAX COUNT")
            setattr(spec, key, (float(val[0]), float(val[1]), int(val[2])))
    spec.spacing = _merged(args, cfg, "spacing", spec.spacing)
    methods = _merged(args, cfg, "methods", None)
    if methods is not None:
        if isinstance(methods, str):
            methods = [m.strip() for m in methods.split(",") if m.strip()]
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise UsageError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
        spec.methods = tuple(methods)
    spec.params = _method_params(args, cfg)
    spec.seed = spec.params.seed
    spec.out = _merged(args, cfg, "out")
    spec.format = _merged(args, cfg, "format", "csv")
    if spec.format not in ("csv", "json"):
        raise UsageError("--format must be csv or json")
    spec.axis(spec.a_range), spec.axis(spec.b_range)
    return spec


def cmd_sweep(args, out) -> int:
    spec = _sweep_spec(args)
    t0 = time.perf_counter()
    rows = run_sweep(spec)
    wall = time.perf_counter() - t0
    text = render_sweep(rows, spec)
    if spec.out:
        with open(spec.out, "w", newline="") as fh:
            fh.write(text)
        manifest = {
            "tool": "twofold", "version": __version__,
            "config": {**{k: v for k, v in asdict(spec).items() if k != "params"},
                       "params": asdict(spec.params)},
            "seed": spec.seed, "wall_clock_s": wall, "workers": worker_count(),
            "cells": [{k: r.get(k) for k in ("A", "B", "method", "converged", "diagnostics", "error")
                       if k in r} for r in rows],
        }
        with open(spec.out + ".manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True, default=str)
            fh.write("\n")
    else:
        out.write(text)
    if rows and all(r["rho"] is None for r in rows):
        return EXIT_UNCONVERGED
    return EXIT_OK


def _densify(p: TwoFoldParams, events, sample_dt: float):
    """Interleave uniform-time samples between exact event rows."""
    rows = []
    for (t0, x0, y0, side, kind), nxt in zip(events, events[1:] + [None]):
        rows.append((t0, x0, y0, side, kind))
        if nxt is None or sample_dt <= 0:
            continue
        t1 = nxt[0]
        k0 = math.floor(t0 / sample_dt) + 1
        ts = sample_dt * np.arange(k0, math.ceil(t1 / sample_dt))
        ts = ts[(ts > t0) & (ts < t1)]
        if ts.size:
            xs, ys = flow(p, side, x0, y0, ts - t0)
            rows.extend((float(t), float(x), float(y), side, "sample") for t, x, y in zip(ts, xs, ys))
    return rows


def cmd_orbit(args, out) -> int:
    cfg = _load_config(args.config)
    p = _params(args, cfg)
    method = _method(args, cfg)
    if method not in ("hy", "td"):
        raise UsageError("orbit supports --method hy or td")
    eps = float(_merged(args, cfg, "eps", 1e-3))
    y0 = float(_merged(args, cfg, "y0", -0.3))
    scale = PerturbationScale(eps)
    sample_dt = _merged(args, cfg, "sample_dt")
    sample_dt = eps if sample_dt is None else float(sample_dt)
    trace: list = []
    if method == "hy":
        res = simulate_hysteretic_orbit(p, HystereticOrbitConfig(scale, y0), trace)
        events = [(t, x, y, s, "start" if n == 0 else "switch") for n, (t, x, y, s) in enumerate(trace)]
        events.append((res.t, res.x, res.y, events[-1][3], "exit"))
    else:
        res = simulate_delayed_orbit(p, scale, y0, trace=trace)
        events = list(trace)
    rows = _densify(p, events, sample_dt)
    fmt = _merged(args, cfg, "format", "csv")
    if fmt == "json":
        text = json.dumps({"rows": [[t, x, y, s.value, k] for t, x, y, s, k in rows],
                           "outcome": res.outcome.value, "n_switches": res.n_switches},
                          indent=None) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t", "x", "y", "side", "kind"))
        for t, x, y, s, k in rows:
            w.writerow((repr(t), repr(x), repr(y), s.value, k))
        buf.write(f"# outcome={res.outcome.value} t={res.t!r} switches={res.n_switches}\n")
        text = buf.getvalue()
    else:
        raise UsageError("--format must be csv or json")
    dest = _merged(args, cfg, "out")
    if dest:
        with open(dest, "w", newline="") as fh:
            fh.write(text)
        out.write(f"{res.outcome.value}\n")
    else:
        out.write(text)
    return EXIT_OK


def cmd_compare(args, out) -> int:
    cfg = _load_config(args.config)
    p, mp = _params(args, cfg), _method_params(args, cfg)
    results = {m: compute(m, p, mp) for m in METHODS}
    fmt = _merged(args, cfg, "format", "csv")
    names = list(results)
    diffs = {f"{a}-{b}": results[a].value - results[b].value
             for i, a in enumerate(names) for b in names[i + 1:]}
    if fmt == "json":
        out.write(json.dumps({"A": p.A, "B": p.B,
                              "rho": {m: {"value": r.value, "stderr": r.standard_error,
                                          "converged": r.converged} for m, r in results.items()},
                              "differences": diffs}, indent=1) + "\n")
    else:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("method", "A", "B", "rho", "stderr", "converged"))
        for m, r in results.items():
            w.writerow((m, _fmt(p.A), _fmt(p.B), _fmt(r.value), _fmt(r.standard_error),
                        _fmt(r.converged)))
        w.writerow(())
        w.writerow(("pair", "difference"))
        for k, v in diffs.items():
            w.writerow((k, _fmt(v)))
    return EXIT_OK if all(r.converged for r in results.values()) else EXIT_UNCONVERGED


def cmd_selftest(args, out) -> int:
    from .acceptance import run_all
    checks = run_all(out, only=args.only)
    return EXIT_OK if all(c.passed for c in checks) else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twofold", description="Escape probabilities at a two-fold.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_point(sp, methods=METHODS):
        sp.add_argument("-A", type=float, dest="A")
        sp.add_argument("-B", type=float, dest="B")
        sp.add_argument("--method", choices=methods)
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--out")

    sp = sub.add_parser("rho", help="one probability")
    with_point(sp)
    _add_method_flags(sp)
    sp.set_defaults(func=cmd_rho)

    sp = sub.add_parser("sweep", help="probability surface over an (A, B) grid")
    sp.add_argument("--a-range", dest="a_range", nargs=3, metavar=("MIN", "MAX", "COUNT"))
    sp.add_argument("--b-range", dest="b_range", nargs=3, metavar=("MIN", "MAX", "COUNT"))
    sp.add_argument("--spacing", choices=("log", "linear"))
    sp.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
    sp.add_argument("--format", choices=("csv", "json"))
    sp.add_argument("--out")
    _add_method_flags(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("orbit", help="trace one hysteretic or delayed orbit")
    with_point(sp, ("hy", "td"))
    sp.add_argument("--y0", type=float)
    sp.add_argument("--sample-dt", dest="sample_dt", type=float,
                    help="spacing of uniform samples between events (default eps, 0 for none)")
    _add_method_flags(sp)
    sp.set_defaults(func=cmd_orbit)

    sp = sub.add_parser("compare", help="all four estimates side by side")
    with_point(sp)
    _add_method_flags(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("selftest", help="run the acceptance checks")
    sp.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    sp.set_defaults(func=cmd_selftest)
    return ap


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, out)
    except (UsageError, ValueError) as exc:
        print(f"twofold: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
