"""Acceptance checks with their tolerances and time budgets.

Each check returns a :class:`Check`; ``run_all`` prints one PASS/FAIL line
per check. ``tests/test_acceptance.py`` and ``twofold selftest`` both use
this module.
"""
from __future__ import annotations

import contextlib
import io
import math
import os
import tempfile
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

from .core import PerturbationScale, TwoFoldParams, dual_params
from .hysteresis import q_interval, rho_hysteresis_empirical
from .noise import (McConfig, PdeGrid, PwcDrift, check_time_symmetry_lemma, pwc_limit_weights,
                    rho_noise_pde, simulate_pwc_sde, simulate_reduced_sde, solve_Q_pde)
from .timedelay import rho_timedelay, rho_timedelay_empirical


@dataclass
class Check:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float


REGISTRY: Dict[int, "tuple[str, Callable[[], tuple[bool, str]]]"] = {}


def criterion(number: int, title: str, budget: Optional[float] = None):
    def wrap(fn):
        def run():
            t0 = time.perf_counter()
            ok, detail = fn()
            dt = time.perf_counter() - t0
            if budget is not None and dt >= budget:
                ok = False
                detail += f" | over budget {dt:.1f}s >= {budget:.0f}s"
            return Check(number, title, ok, detail, dt)
        REGISTRY[number] = (title, run)
        return fn
    return wrap


def _p(A, B):
    return TwoFoldParams(A, B)


@criterion(1, "hysteresis closed form on a 21x21 grid via the CLI", budget=1.0)
def _closed_form():
    from . import cli
    buf = io.StringIO()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "hy.csv")
        code = cli.main(["sweep", "--methods", "hy", "--a-range", "0.25", "4", "21",
                         "--b-range", "0.25", "4", "21", "--out", path], out=buf)
        with open(path) as fh:
            lines = fh.read().splitlines()[1:]
    worst = 0.0
    for line in lines:
        A, B, _, _, rho = line.split(",")[:5]
        A, B, rho = float(A), float(B), float(rho)
        worst = max(worst, abs(rho - A / (A + B)))
    ok = code == 0 and len(lines) == 441 and worst <= 1e-12
    return ok, f"cells={len(lines)} max|rho-A/(A+B)|={worst:.2e}"


@criterion(2, "hysteresis window fraction converges at (2,4)", budget=10.0)
def _window_convergence():
    p = _p(2, 4)
    errs = [abs(q_interval(p, e, -0.5, -0.1) - 1 / 3) for e in (1e-4, 1e-5, 1e-6)]
    ok = errs[0] > errs[1] > errs[2] and errs[2] <= 0.01
    return ok, "errors " + ", ".join(f"{e:.2e}" for e in errs)


@criterion(3, "hysteresis ensemble matches A/(A+B)", budget=120.0)
def _hy_ensemble():
    parts, ok = [], True
    for A, B in ((1, 1), (2, 4), (4, 1)):
        r = rho_hysteresis_empirical(_p(A, B), PerturbationScale(1e-4), 4000)
        z = abs(r.value - A / (A + B)) / r.standard_error
        ok &= z <= 3
        parts.append(f"({A},{B}) {r.value:.4f} z={z:.2f}")
    return ok, "; ".join(parts)


@criterion(4, "time-delay duality and symmetric value", budget=60.0)
def _td_symmetry():
    parts, ok = [], True
    for A, B in ((2, 4), (1, 2), (2, 1), (3, 0.5), (0.5, 3)):
        p = _p(A, B)
        s = rho_timedelay(p).value + rho_timedelay(dual_params(p)).value
        ok &= abs(s - 1) <= 0.01
        parts.append(f"({A},{B}) sum-1={s - 1:+.1e}")
    mid = rho_timedelay(_p(1, 1)).value
    ok &= abs(mid - 0.5) <= 0.01
    return ok, "; ".join(parts) + f"; rho(1,1)={mid:.5f}"


@criterion(5, "time-delay recursion vs delayed-orbit ensemble", budget=300.0)
def _td_cross():
    parts, ok = [], True
    for A, B in ((1, 2), (2, 1)):
        p = _p(A, B)
        rec = rho_timedelay(p).value
        emp = rho_timedelay_empirical(p, PerturbationScale(1e-3), 2000).value
        ok &= abs(rec - emp) <= 0.03
        parts.append(f"({A},{B}) recursion={rec:.4f} ensemble={emp:.4f}")
    return ok, "; ".join(parts)


@criterion(6, "noise special values from the PDE")
def _special_values():
    cases = [((A, A * A), 1 / (1 + A), 0.01) for A in (0.5, 1, 2, 3)]
    cases += [((A, 1), 0.5, 0.01) for A in (0.25, 1, 4)]
    cases += [((0.05, B), 0.5, 0.02) for B in (0.5, 2)]
    parts, ok = [], True
    for (A, B), want, tol in cases:
        t0 = time.perf_counter()
        got = rho_noise_pde(_p(A, B)).value
        dt = time.perf_counter() - t0
        good = abs(got - want) <= tol and dt < 30
        ok &= good
        parts.append(f"({A},{B}) {got:.4f}{'' if good else ' MISS'} [{dt:.1f}s]")
    return ok, "; ".join(parts)


@criterion(7, "Q(0,r) = 1/(1+A) for all r when B = A^2")
def _identity_all_r():
    parts, ok = [], True
    for A in (0.5, 1, 2, 3):
        p = _p(A, A * A)
        coarse = solve_Q_pde(p, PdeGrid())
        fine = solve_Q_pde(p, PdeGrid(du=0.005, dr=0.0025))
        e0 = float(abs(coarse.q0 - 1 / (1 + A)).max())
        e1 = float(abs(fine.q0 - 1 / (1 + A)).max())
        ok &= e0 <= 1e-2 and (e1 < e0 or e0 < 1e-9)
        parts.append(f"A={A} max {e0:.1e} -> {e1:.1e}")
    return ok, "; ".join(parts)


@criterion(8, "Q(0, r_max) at (2,4) is 1/3")
def _interface_value():
    q = solve_Q_pde(_p(2, 4)).q0[-1]
    return abs(q - 1 / 3) <= 0.01, f"Q={q:.5f}"


@criterion(9, "PDE and Monte Carlo agree")
def _pde_mc():
    parts, ok = [], True
    for A, B in ((1, 1), (2, 4), (1, 2)):
        p = _p(A, B)
        pde = rho_noise_pde(p).value
        mc = simulate_reduced_sde(p, McConfig(n_paths=100_000))
        gap = abs(pde - mc.value)
        ok &= gap <= max(0.01, 3 * mc.standard_error)
        parts.append(f"({A},{B}) pde={pde:.4f} mc={mc.value:.4f}")
    return ok, "; ".join(parts)


@criterion(10, "piecewise-constant drift selects 2/3")
def _pwc():
    w_left, w_right = pwc_limit_weights(PwcDrift(-1, 2))
    frac, se = simulate_pwc_sde(PwcDrift(-1, 2), 0.02, 1.0, 100_000)
    ok = abs(frac - 2 / 3) <= 0.02 and w_left == 1 / 3 and w_right == 2 / 3
    return ok, f"fraction={frac:.4f}+-{se:.4f} weights=({w_left:.6f},{w_right:.6f})"


@criterion(11, "odd-in-time drift gives 1/2")
def _odd_drift():
    parts, ok = [], True
    for A, T in ((1, 2.0), (5, 3.0)):
        prob, se = check_time_symmetry_lemma(A, T, 100_000)
        ok &= abs(prob - 0.5) <= 3 * se
        parts.append(f"A={A} {prob:.4f}+-{se:.4f}")
    return ok, "; ".join(parts)


@criterion(12, "noise probability tends to 1/2 as A grows at B=2")
def _large_a():
    vals = [rho_noise_pde(_p(A, 2)).value for A in (10, 30, 100)]
    dist = [abs(v - 0.5) for v in vals]
    ok = dist[0] > dist[1] > dist[2] and dist[2] <= 0.02
    return ok, "rho " + ", ".join(f"{v:.4f}" for v in vals)


@criterion(13, "sweep output is byte-identical across worker counts")
def _determinism():
    from . import cli
    outputs = []
    old = os.environ.get("TWOFOLD_WORKERS")
    try:
        with tempfile.TemporaryDirectory() as tmp:
            for workers in ("1", "3"):
                os.environ["TWOFOLD_WORKERS"] = workers
                path = os.path.join(tmp, f"sweep{workers}.csv")
                cli.main(["sweep", "--methods", "hy,td,no-mc", "--a-range", "0.5", "2", "2",
                          "--b-range", "0.5", "2", "2", "--paths", "5000", "--dt", "0.002",
                          "--seed", "7", "--out", path], out=io.StringIO())
                with open(path, "rb") as fh:
                    outputs.append(fh.read())
    finally:
        if old is None:
            os.environ.pop("TWOFOLD_WORKERS", None)
        else:
            os.environ["TWOFOLD_WORKERS"] = old
    ok = outputs[0] == outputs[1] and outputs[0].count(b"\n") == 13
    return ok, f"{len(outputs[0])} bytes, identical={outputs[0] == outputs[1]}"


def run_one(number: int) -> Check:
    return REGISTRY[number][1]()


def format_line(c: Check) -> str:
    tag = "PASS" if c.passed else "FAIL"
    return f"{tag}  [{c.number:2d}] {c.title:<56} {c.detail} ({c.seconds:.1f}s)"


def run_all(out=None, only: Optional[List[int]] = None) -> List[Check]:
    checks = []
    for number in sorted(REGISTRY):
        if only and number not in only:
            continue
        c = run_one(number)
        checks.append(c)
        if out is not None:
            out.write(format_line(c) + "\n")
            out.flush()
    return checks
