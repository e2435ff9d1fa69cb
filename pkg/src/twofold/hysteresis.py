"""Hysteretic regularization of the two-fold.

The switching line ``x = 0`` is replaced by a band ``|x| <= eps``: the left
half-system stays active until the orbit reaches ``x = +eps`` and the right
half-system until it reaches ``x = -eps``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from . import _ensemble
from .core import (EscapeOutcome, Method, Outcome, Perturbation, PerturbationScale, RhoResult,
                   Side, TwoFoldParams, vector_field)


class SimulationBudgetExceeded(RuntimeError):
    """Raised when an orbit keeps switching past the configured budget."""


@dataclass(frozen=True)
class CriticalSequence:
    """Intersections ``y_1 > y_2 > ...`` of the critical orbits with ``x = 0``.

    ``ys[k - 1]`` holds ``y_k``. Odd ``k`` belong to the critical orbit through
    the tangency with ``x = -eps``, even ``k`` to the one through ``x = +eps``.
    """

    eps: float
    ys: np.ndarray

    @property
    def K(self) -> int:
        return len(self.ys)

    def __getitem__(self, k: int) -> float:
        """1-based access: ``seq[k]`` is ``y_k``."""
        if not 1 <= k <= self.K:
            raise IndexError(f"k={k} outside 1..{self.K}")
        return float(self.ys[k - 1])


def _check_eps_K(eps: float, K: int) -> None:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K!r}")


def critical_sequence_recursive(p: TwoFoldParams, eps: float, K: int) -> CriticalSequence:
    """Leading-order critical sequence built by the two-step recursion."""
    _check_eps_K(eps, K)
    ratio = p.B / p.A
    ys = np.empty(K)
    ys[0] = -math.sqrt(2.0 * eps)
    if K > 1:
        ys[1] = -math.sqrt(2.0 * (1.0 + 2.0 * ratio) * eps)
    step = 4.0 * (1.0 + ratio) * eps
    for i in range(2, K):
        ys[i] = -math.sqrt(ys[i - 2] ** 2 + step)
    return CriticalSequence(eps, ys)


def _explicit_values(p: TwoFoldParams, eps: float, k: np.ndarray) -> np.ndarray:
    ratio = p.B / p.A
    k = np.asarray(k, dtype=float)
    odd = np.mod(k, 2) == 1
    inner = np.where(odd, k + (k - 1.0) * ratio, k - 1.0 + k * ratio)
    return -math.sqrt(2.0) * np.sqrt(inner) * math.sqrt(eps)


def critical_sequence_explicit(p: TwoFoldParams, eps: float, K: int) -> CriticalSequence:
    _check_eps_K(eps, K)
    return CriticalSequence(eps, _explicit_values(p, eps, np.arange(1, K + 1)))


def q_window(p: TwoFoldParams, eps: float, k: int) -> float:
    """Fraction of ``[y_k, y_{k-2}]`` whose orbits head right (``k`` odd, ``k >= 3``)."""
    if k < 3 or k % 2 == 0:
        raise ValueError(f"k must be odd and >= 3, got {k}")
    y_km2, y_km1, y_k = _explicit_values(p, eps, np.array([k - 2, k - 1, k]))
    return float((y_km1 - y_k) / (y_km2 - y_k))


def _k_for_level(p: TwoFoldParams, eps: float, level: float) -> float:
    # y_k decreases in k; largest real k with y_k >= level for the odd branch.
    ratio = p.B / p.A
    return (level * level / (2.0 * eps) + ratio) / (1.0 + ratio)


def q_interval(p: TwoFoldParams, eps: float, y_min: float, y_max: float) -> float:
    """Fraction of the fixed interval ``[y_min, y_max]`` whose orbits head right.

    Only the whole windows between the first and last odd ``k`` with
    ``y_k`` inside the interval are counted; the two ``O(eps)`` edge slivers
    are dropped.
    """
    if not y_min < y_max:
        raise ValueError(f"need y_min < y_max, got [{y_min}, {y_max}]")
    if not y_max < 0:
        raise ValueError("interval must lie strictly below the two-fold (y_max < 0)")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps!r}")

    # Odd-branch index where y_k crosses each bound, then snap to odd integers
    # and correct any off-by-one from rounding with an exact check.
    k_lo = max(1, math.ceil(_k_for_level(p, eps, y_max)) - 2)
    k_hi = math.floor(_k_for_level(p, eps, y_min)) + 2
    ks = np.arange(k_lo - k_lo % 2 + 1 if k_lo % 2 == 0 else k_lo, k_hi + 1, 2)
    ys_odd = _explicit_values(p, eps, ks)
    inside = (ys_odd >= y_min) & (ys_odd <= y_max)
    ks = ks[inside]
    if len(ks) < 2:
        raise ValueError("interval too short for eps: fewer than two odd critical points inside")
    k_min, k_max = int(ks[0]), int(ks[-1])

    k_odd = np.arange(k_min + 2, k_max + 1, 2)
    y_k = _explicit_values(p, eps, k_odd)
    y_km1 = _explicit_values(p, eps, k_odd - 1)
    num = float(np.sum(y_km1 - y_k))
    den = float(_explicit_values(p, eps, np.array([k_min]))[0] - _explicit_values(p, eps, np.array([k_max]))[0])
    return num / den


# --- exact leading-order flows -------------------------------------------------

def flow(p: TwoFoldParams, side: Side, x0, y0, t):
    """Exact solution of the leading-order half-system after time ``t``."""
    if side is Side.LEFT:
        return x0 - p.A * y0 * t - 0.5 * p.A * p.B * t * t, y0 + p.B * t
    return x0 + y0 * t + 0.5 * t * t, y0 + t


def _first_hit(b, c):
    """Smallest positive root of ``t^2 + 2 b t + c = 0`` with ``c >= 0``, or inf.

    A root exists only when ``b < 0`` and ``b^2 >= c``; the cancellation-free
    form ``c / (-b + sqrt(b^2 - c))`` is used.
    """
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    disc = b * b - c
    ok = (b < 0) & (disc >= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(ok, c / (-b + np.sqrt(np.where(ok, disc, 0.0))), np.inf)
    return t


def _exit_time(b, c):
    """Positive root of ``t^2 + 2 b t - c = 0`` with ``c > 0``."""
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    s = np.sqrt(b * b + c)
    # -b + s, evaluated without cancellation whichever sign b has
    return np.where(b >= 0, c / (b + s), s - b)


def _next_event(p: TwoFoldParams, eps: float, x_star: float, right, x, y):
    """Time to the next switch and time to the escape line for each state."""
    ab = p.A * p.B
    # right-active: x = x0 + y t + t^2/2 ; switch at -eps, escape at +x_star
    t_sw_r = _first_hit(y, 2.0 * (x + eps))
    t_ex_r = _exit_time(y, 2.0 * (x_star - x))
    # left-active: x = x0 - A y t - AB t^2/2 ; switch at +eps, escape at -x_star
    t_sw_l = _first_hit(y / p.B, 2.0 * (eps - x) / ab)
    t_ex_l = _exit_time(y / p.B, 2.0 * (x + x_star) / ab)
    t_sw = np.where(right, t_sw_r, t_sw_l)
    t_ex = np.where(right, t_ex_r, t_ex_l)
    return t_sw, t_ex


@dataclass(frozen=True)
class HystereticOrbitConfig:
    """Initial point ``(0, y0)`` and integration controls for one orbit.

    ``rtol``/``atol``/``max_step`` only apply when ``perturbation`` is set;
    the unperturbed normal form is advanced with its exact flow.
    """

    scale: PerturbationScale
    y0: float
    initial_side: Side = Side.RIGHT
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float = np.inf
    max_switches: int = 1_000_000
    perturbation: Optional[Perturbation] = None

    def __post_init__(self):
        if not -self.scale.y_star < self.y0 < 0:
            raise ValueError(f"y0={self.y0} must lie in (-y_star, 0)")
        if not (self.rtol > 0 and self.atol > 0 and self.max_step > 0):
            raise ValueError("tolerances and max_step must be positive")
        if self.max_switches < 1:
            raise ValueError("max_switches must be positive")


def simulate_hysteretic_orbit(p: TwoFoldParams, cfg: HystereticOrbitConfig,
                              trace: Optional[list] = None) -> EscapeOutcome:
    """Follow one orbit of the hysteretic system until it leaves ``|x| < x_star``.

    If ``trace`` is a list, one ``(t, x, y, side)`` row is appended at the
    start and at every switch, recording the side active from then on.
    """
    if cfg.perturbation is not None:
        return _simulate_rk(p, cfg, trace)
    eps, x_star = cfg.scale.eps, cfg.scale.x_star
    x, y, t = 0.0, float(cfg.y0), 0.0
    side = cfg.initial_side
    if trace is not None:
        trace.append((t, x, y, side))
    for n in range(cfg.max_switches + 1):
        t_sw, t_ex = _next_event(p, eps, x_star, side is Side.RIGHT, x, y)
        t_sw, t_ex = float(t_sw), float(t_ex)
        if t_ex <= t_sw:
            x, y = flow(p, side, x, y, t_ex)
            x = x_star if side is Side.RIGHT else -x_star
            outcome = Outcome.HEADS_RIGHT if side is Side.RIGHT else Outcome.HEADS_LEFT
            return EscapeOutcome(outcome, x, y, t + t_ex, n)
        x, y = flow(p, side, x, y, t_sw)
        x = -eps if side is Side.RIGHT else eps
        t += t_sw
        side = side.other()
        if trace is not None:
            trace.append((t, x, y, side))
    raise SimulationBudgetExceeded(f"orbit from y0={cfg.y0} exceeded {cfg.max_switches} switches")


def _simulate_rk(p: TwoFoldParams, cfg: HystereticOrbitConfig, trace: Optional[list]) -> EscapeOutcome:
    eps, x_star = cfg.scale.eps, cfg.scale.x_star
    state = np.array([0.0, float(cfg.y0)])
    t = 0.0
    side = cfg.initial_side
    if trace is not None:
        trace.append((t, state[0], state[1], side))
    # generous time horizon per segment: the local dynamics leave |x| < x_star in O(1) time
    horizon = 10.0 * (1.0 + cfg.scale.y_star) * max(1.0, 1.0 / p.B)
    # Event detection only sees sign changes between steps, so a long step can
    # jump over a shallow excursion past the switching line. x curves at rate
    # ~A*B, so an excursion of height ~eps lasts ~sqrt(eps/(A*B)).
    graze = 0.05 * np.sqrt(2.0 * eps / (p.A * p.B))
    max_step = min(cfg.max_step, graze)

    for n in range(cfg.max_switches + 1):
        def rhs(_t, s, side=side):
            return vector_field(p, side, s[0], s[1], cfg.perturbation)

        if side is Side.RIGHT:
            def switch(_t, s):
                return s[0] + eps
            switch.direction = -1

            def escape(_t, s):
                return s[0] - x_star
            escape.direction = 1
        else:
            def switch(_t, s):
                return s[0] - eps
            switch.direction = 1

            def escape(_t, s):
                return s[0] + x_star
            escape.direction = -1
        switch.terminal = True
        escape.terminal = True

        sol = solve_ivp(rhs, (t, t + horizon), state, method="DOP853", rtol=cfg.rtol,
                        atol=cfg.atol, max_step=max_step, events=(switch, escape))
        if sol.status == -1:
            raise RuntimeError(f"integration failed: {sol.message}")
        if sol.status == 0:
            raise RuntimeError("no switch or escape within the integration horizon")
        if len(sol.t_events[1]):
            xe, ye = sol.y_events[1][0]
            outcome = Outcome.HEADS_RIGHT if xe > 0 else Outcome.HEADS_LEFT
            return EscapeOutcome(outcome, float(xe), float(ye), float(sol.t_events[1][0]), n)
        t = float(sol.t_events[0][0])
        state = sol.y_events[0][0].copy()
        state[0] = -eps if side is Side.RIGHT else eps
        side = side.other()
        if trace is not None:
            trace.append((t, state[0], state[1], side))
    raise SimulationBudgetExceeded(f"orbit from y0={cfg.y0} exceeded {cfg.max_switches} switches")


def heads_right_exact(p: TwoFoldParams, eps: float, x_star: float, y0s: np.ndarray,
                      initial_side: Side = Side.RIGHT, max_switches: int = 1_000_000) -> np.ndarray:
    """Vectorized outcome (True = heads right) for orbits started at ``(0, y0)``."""
    y = np.array(y0s, dtype=float)
    n = len(y)
    x = np.zeros(n)
    right = np.full(n, initial_side is Side.RIGHT)
    result = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for _ in range(max_switches + 1):
        if active.size == 0:
            return result
        xa, ya, ra = x[active], y[active], right[active]
        t_sw, t_ex = _next_event(p, eps, x_star, ra, xa, ya)
        escaped = t_ex <= t_sw
        result[active[escaped]] = ra[escaped]
        keep = ~escaped
        idx = active[keep]
        ts, rk = t_sw[keep], ra[keep]
        xr, yr = flow(p, Side.RIGHT, xa[keep], ya[keep], ts)
        xl, yl = flow(p, Side.LEFT, xa[keep], ya[keep], ts)
        y[idx] = np.where(rk, yr, yl)
        x[idx] = np.where(rk, -eps, eps)
        right[idx] = ~rk
        active = idx
    raise SimulationBudgetExceeded(f"ensemble exceeded {max_switches} switches")


def stratified_points(n: int, interval: Tuple[float, float], seed: int) -> np.ndarray:
    """One uniform point per equal-width stratum; stratum ``i`` uses block-seeded draws."""
    lo, hi = interval
    u = np.empty(n)
    for sl in _ensemble.blocks(n):
        block = sl.start // _ensemble.BLOCK_SIZE
        u[sl] = _ensemble.block_rng(seed, block).random(sl.stop - sl.start)
    return lo + (np.arange(n) + u) * ((hi - lo) / n)


def _check_interval(interval: Sequence[float], scale: PerturbationScale) -> Tuple[float, float]:
    lo, hi = float(interval[0]), float(interval[1])
    if not -scale.y_star < lo < hi < 0:
        raise ValueError(f"interval {interval} must satisfy -y_star < y_min < y_max < 0")
    return lo, hi


def rho_hysteresis_empirical(p: TwoFoldParams, scale: PerturbationScale, n: int,
                             interval: Sequence[float] = (-0.5, -0.1), seed: int = 0,
                             workers: Optional[int] = None) -> RhoResult:
    """Heads-right fraction over stratified initial points on the negative y-axis.

    Orbits start on the right half-system. The reported standard error is
    the binomial one, which overstates the error of stratified sampling.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = _check_interval(interval, scale)
    y0s = stratified_points(n, (lo, hi), seed)
    parts = _ensemble.run_map(
        lambda sl: int(np.count_nonzero(heads_right_exact(p, scale.eps, scale.x_star, y0s[sl]))),
        _ensemble.blocks(n), workers)
    hits = sum(parts)
    return RhoResult(hits / n, Method.HYSTERESIS, _ensemble.binomial_stderr(hits, n),
                     eps_used=scale.eps, empirical=True,
                     diagnostics={"n": n, "heads_right": hits})
