"""Time-delayed switching: the active half-system is chosen by the sign of
``x(t - eps)``.

Near the two-fold the natural scales are ``x ~ eps**2``, ``y ~ eps`` and
``t ~ eps``. Because the normal form is polynomial, the series solutions
used below are exact for it, and every quantity here is exactly
scale-invariant: ``y1 / eps`` and ``q_k`` do not depend on ``eps``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _ensemble
from .core import (EscapeOutcome, Method, Outcome, PerturbationScale, RhoResult, Side,
                   TwoFoldParams, dual_params)
from .hysteresis import CriticalSequence, SimulationBudgetExceeded, stratified_points

DEFAULT_BRACKET = 10.0
DEFAULT_DEPTH = 12


class SwitchDomainError(ValueError):
    """The starting point switches back across ``x = 0`` before ``t = eps``."""


class BracketError(RuntimeError):
    pass


@dataclass(frozen=True)
class SwitchPointSequence:
    """Switching points ``(x_k, z_k)`` of an orbit started at ``(0, z0)``.

    ``T[k-1]`` is the time from ``(x_{k-1}, z_{k-1})`` back to ``x = 0`` and
    ``S[k-1]`` the time between switching points ``k`` and ``k + 1``.
    """

    eps: float
    z0: float
    x: np.ndarray
    z: np.ndarray
    S: np.ndarray
    T: np.ndarray
    stopped_early: bool = False

    @property
    def K(self) -> int:
        return len(self.x)


def forward_switch_sequence(p: TwoFoldParams, z0: float, eps: float, K: int,
                            bracket: float = DEFAULT_BRACKET) -> SwitchPointSequence:
    if not eps > 0:
        raise ValueError("eps must be positive")
    if K < 2:
        raise ValueError("K must be >= 2")
    if not (z0 < 0 and abs(z0) <= bracket * eps):
        raise ValueError(f"z0={z0} must satisfy -{bracket}*eps <= z0 < 0")
    seq = _build_sequence(p, z0, eps, K)
    if seq.x[0] <= 0:
        raise SwitchDomainError(f"x_1={seq.x[0]:.3e} <= 0: z0={z0} is too far below the two-fold")
    return seq


def _build_sequence(p: TwoFoldParams, z0: float, eps: float, K: int) -> SwitchPointSequence:
    rows = []
    stopped = False
    for row in _iterate(p, z0, eps, K):
        if row is None:
            stopped = True
            break
        rows.append(row)
    x, z, S, T = (np.array(col) for col in zip(*rows))
    return SwitchPointSequence(eps, z0, x, z, S, T, stopped)


def _iterate(p: TwoFoldParams, z0: float, eps: float, K: int):
    """Yield ``(x_k, z_k, S_k, T_k)`` for k = 1..K, or ``None`` once undefined."""
    A, B = p.A, p.B
    x = z0 * eps + 0.5 * eps * eps
    z = z0 + eps
    T = -2.0 * z0
    S = T
    yield x, z, S, T
    for k in range(2, K + 1):
        if k % 2 == 0:
            arg = z * z + 2.0 * B / A * x
            if arg < 0:
                yield None
                return
            T = (math.sqrt(arg) - z) / B
            x, z = x - A * z * S - 0.5 * A * B * S * S, z + B * S
        else:
            arg = z * z - 2.0 * x
            if arg < 0:
                yield None
                return
            T = math.sqrt(arg) - z
            x, z = x + z * S + 0.5 * S * S, z + S
        S = eps - S + T
        yield x, z, S, T


def classify_start(p: TwoFoldParams, z0: float, eps: float, depth: int):
    """Where alternation of the switching points first fails.

    Returns ``(direction, k)``: ``+1`` if ``x_k`` stays right of ``x = 0``,
    ``-1`` if it stays left, ``0`` if ``x_1..x_depth`` alternate in sign.
    A switching point exactly on ``x = 0`` counts as staying on the side of
    its predecessor.
    """
    prev_sign = -1
    k = 0
    for k, row in enumerate(_iterate(p, z0, eps, depth), start=1):
        if row is None:
            # the orbit no longer reaches x = 0: it stays on the previous side
            return prev_sign, k
        x = row[0]
        want = 1 if k % 2 == 1 else -1
        if x * want <= 0:
            return (prev_sign if x == 0 else (1 if x > 0 else -1)), k
        prev_sign = want
    return 0, k


def _boundary(p: TwoFoldParams, eps: float, depth: int, lo: float, hi: float, target: int) -> float:
    """Bisect for the edge of the set of starts classified ``target``."""
    tol = 1e-12 * eps
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        cls, _ = classify_start(p, mid, eps, depth)
        # target=+1: the right-heading set sits at the top of the bracket
        if (cls == target) == (target == 1):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CriticalStart:
    """Bracket ``[lower, upper]`` of starts whose switching points alternate
    through ``depth`` steps, and the estimate ``value`` inside it."""

    value: float
    lower: float
    upper: float
    depth: int

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _alternation_set(p: TwoFoldParams, eps: float, depth: int, bracket: float,
                     retries: int) -> tuple:
    c = bracket
    for _ in range(retries + 1):
        # starts below -eps/2 return to x = 0 before the first switch
        lo, hi = -min(c, 0.5) * eps, 0.0
        cls_lo, _ = classify_start(p, lo, eps, depth)
        cls_hi, _ = classify_start(p, -1e-15 * eps, eps, depth)
        if cls_lo == -1 and cls_hi == 1:
            break
        c *= 2.0
    else:
        raise BracketError(f"no sign change of the outcome in [-{c}*eps, 0) at depth {depth}")
    return _boundary(p, eps, depth, lo, hi, -1), _boundary(p, eps, depth, lo, hi, 1)


def find_y1_bracket(p: TwoFoldParams, eps: float, depth: int = DEFAULT_DEPTH,
                    bracket: float = DEFAULT_BRACKET, retries: int = 3) -> CriticalStart:
    """Alternation bracket at ``depth`` and the critical-start estimate.

    The brackets are nested and shrink geometrically with depth, so for
    ``depth >= 8`` the midpoints at ``depth - 4, depth - 2, depth`` are
    Aitken-extrapolated; the estimate is clamped into the bracket.
    """
    if depth < 4:
        raise ValueError("depth must be >= 4")
    if not eps > 0:
        raise ValueError("eps must be positive")
    lower, upper = _alternation_set(p, eps, depth, bracket, retries)
    value = 0.5 * (lower + upper)
    if depth >= 8:
        m0, m1 = (0.5 * sum(_alternation_set(p, eps, d, bracket, retries))
                  for d in (depth - 4, depth - 2))
        d1, d2 = m1 - m0, value - m1
        if d2 != d1:
            value = min(max(value - d2 * d2 / (d2 - d1), lower), upper)
    return CriticalStart(value, lower, upper, depth)


def find_y1(p: TwoFoldParams, eps: float, depth: int = DEFAULT_DEPTH,
            bracket: float = DEFAULT_BRACKET) -> float:
    """Start ``z0 = y1`` of the critical orbit that first heads left and then
    switches indefinitely."""
    return find_y1_bracket(p, eps, depth, bracket).value


def find_y1_tilde(p: TwoFoldParams, eps: float, depth: int = DEFAULT_DEPTH,
                  bracket: float = DEFAULT_BRACKET) -> float:
    """Mirror-image critical start, obtained from the dual system.

    Mirroring ``x`` and rescaling to the dual normal form stretches time by
    ``B``, so the dual system carries delay ``B * eps``; with ``y1`` linear in
    the delay this gives ``B * y1(1/A, 1/B; eps)``.
    """
    return p.B * find_y1(dual_params(p), eps, depth, bracket)


@dataclass(frozen=True)
class TimeDelayCritical:
    y1: float
    y1_tilde: float
    eps: float
    depth: int


def critical_values(p: TwoFoldParams, eps: float, depth: int = DEFAULT_DEPTH) -> TimeDelayCritical:
    return TimeDelayCritical(find_y1(p, eps, depth), find_y1_tilde(p, eps, depth), eps, depth)


def backward_sequence(p: TwoFoldParams, eps: float, crit: TimeDelayCritical, K: int) -> CriticalSequence:
    if not math.isclose(crit.eps, eps, rel_tol=1e-12):
        raise ValueError("critical values were computed for a different eps")
    if K < 1:
        raise ValueError("K must be >= 1")
    A, B = p.A, p.B
    s = A + B
    ys = np.empty(K)
    ys[0] = crit.y1
    if K > 1:
        ys[1] = -(s + math.sqrt(A * A * (crit.y1_tilde / eps) ** 2 + s * B)) * eps / A
    for i in range(2, K):
        inner = s + math.sqrt((ys[i - 2] / eps) ** 2 + A * s)
        ys[i] = -(s + math.sqrt(A * A * inner * inner + s * B)) * eps / A
    return CriticalSequence(eps, ys)


def default_k(p: TwoFoldParams, eps: float, level: float = -0.1, k_max: int = 2_000_001) -> int:
    """Smallest odd ``k`` with ``y_k`` at or below ``level``, from the
    asymptotic spacing of the backward recursion."""
    # two steps of the recursion lower y by about (A + B)(1 + A) / A * eps
    step = (p.A + p.B) * (1.0 + p.A) / p.A * eps
    k = 2 * int(math.ceil(abs(level) / step)) + 1
    return max(3, min(k, k_max))


def rho_timedelay(p: TwoFoldParams, eps: float = 1e-4, k: Optional[int] = None,
                  depth: int = DEFAULT_DEPTH) -> RhoResult:
    """``(y_{k-1} - y_k) / (y_{k-2} - y_k)`` from the backward recursion."""
    if k is None:
        k = default_k(p, eps)
    if k < 3 or k % 2 == 0:
        raise ValueError(f"k must be odd and >= 3, got {k}")
    crit = critical_values(p, eps, depth)
    seq = backward_sequence(p, eps, crit, k)
    q = (seq[k - 1] - seq[k]) / (seq[k - 2] - seq[k])
    return RhoResult(float(q), Method.TIME_DELAY, eps_used=eps,
                     diagnostics={"k": k, "depth": depth, "y1": crit.y1, "y1_tilde": crit.y1_tilde})


# --- direct simulation -----------------------------------------------------------

def _quadratic(p: TwoFoldParams, right: bool, x0: float, y0: float):
    """Coefficients ``(a, b, c)`` of ``x(t) = a t^2 + b t + c`` on the active side."""
    if right:
        return 0.5, y0, x0
    return -0.5 * p.A * p.B, -p.A * y0, x0


def _first_root(a: float, b: float, c: float) -> float:
    """Smallest strictly positive root of ``a t^2 + b t + c``, or inf."""
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return math.inf
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b))
    roots = (q / a, c / q) if q != 0 else (math.sqrt(max(-c / a, 0.0)),)
    best = math.inf
    for r in roots:
        if 0 < r < best:
            best = r
    return best


def simulate_delayed_orbit(p: TwoFoldParams, scale: PerturbationScale, y0: float,
                           max_events: int = 1_000_000,
                           trace: Optional[list] = None) -> EscapeOutcome:
    """Follow one orbit of the delayed system from ``(0, y0)``.

    The orbit is taken to have been right of ``x = 0`` on ``(-eps, 0)``, so it
    starts on the right half-system with a switch to the left pending at
    ``t = eps``. Each zero crossing of ``x`` schedules the corresponding
    switch exactly ``eps`` later. If ``trace`` is a list it receives
    ``(t, x, y, side, kind)`` rows with kind in
    ``{"start", "cross", "switch", "exit"}``.
    """
    eps, x_star = scale.eps, scale.x_star
    if not -scale.y_star < y0 < 0:
        raise ValueError(f"y0={y0} must lie in (-y_star, 0)")
    x, y, t = 0.0, float(y0), 0.0
    right = True
    pending = deque([(eps, False)])
    if trace is not None:
        trace.append((t, x, y, Side.RIGHT, "start"))
    n_switch = 0
    for _ in range(max_events):
        a, b, c = _quadratic(p, right, x, y)
        t_cross = _first_root(a, b, c)
        t_exit = min(_first_root(a, b, c - x_star), _first_root(a, b, c + x_star))
        t_switch = pending[0][0] - t if pending else math.inf
        dt = min(t_cross, t_exit, t_switch)
        if right:
            x, y = x + y * dt + 0.5 * dt * dt, y + dt
            vx = y
        else:
            x, y = x - p.A * y * dt - 0.5 * p.A * p.B * dt * dt, y + p.B * dt
            vx = -p.A * y
        side = Side.RIGHT if right else Side.LEFT
        if dt == t_exit:
            x = x_star if x > 0 else -x_star
            t += dt
            outcome = Outcome.HEADS_RIGHT if x > 0 else Outcome.HEADS_LEFT
            if trace is not None:
                trace.append((t, x, y, side, "exit"))
            return EscapeOutcome(outcome, x, y, t, n_switch)
        if dt == t_switch:
            t = pending[0][0]
            right = pending.popleft()[1]
            n_switch += 1
            if trace is not None:
                trace.append((t, x, y, Side.RIGHT if right else Side.LEFT, "switch"))
        else:
            t += dt
            x = 0.0
            pending.append((t + eps, vx > 0))
            if len(pending) > 64:
                raise SimulationBudgetExceeded("too many pending switches (chattering)")
            if trace is not None:
                trace.append((t, x, y, side, "cross"))
    raise SimulationBudgetExceeded(f"orbit from y0={y0} exceeded {max_events} events")


def rho_timedelay_empirical(p: TwoFoldParams, scale: PerturbationScale, n: int,
                            interval: Sequence[float] = (-0.5, -0.1), seed: int = 0,
                            workers: Optional[int] = None) -> RhoResult:
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = float(interval[0]), float(interval[1])
    if not -scale.y_star < lo < hi < 0:
        raise ValueError(f"interval {interval} must satisfy -y_star < y_min < y_max < 0")
    y0s = stratified_points(n, (lo, hi), seed)

    def count(sl):
        return sum(simulate_delayed_orbit(p, scale, float(y)).heads_right for y in y0s[sl])

    hits = sum(_ensemble.run_map(count, _ensemble.blocks(n, 256), workers))
    return RhoResult(hits / n, Method.TIME_DELAY, _ensemble.binomial_stderr(hits, n),
                     eps_used=scale.eps, empirical=True, diagnostics={"n": n, "heads_right": hits})
