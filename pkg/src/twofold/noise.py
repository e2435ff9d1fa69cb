"""Noise regularization.

Additive noise of amplitude ``eps`` is blown up by ``u = x/eps^(4/3)``,
``v = y/eps^(2/3)``, ``s = t/eps^(2/3)``, which leaves the eps-free system

    du = {-A v ; v} ds + dW,    dv = {B ; 1} ds        (u < 0 ; u > 0).

The probability ``Q(u0, r)`` of heading right from ``(u0, v0 = -r)`` solves a
forward parabolic problem in the pseudo-time ``r``; ``rho`` is its limit at
``u0 = 0`` as ``r`` grows. The same number is estimated by Monte Carlo of the
reduced system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, solve_banded
from scipy.special import erfc

from ._ensemble import (BLOCK_SIZE, GroupNoise, binomial_stderr, block_rng, blocks,
                        group_blocks, run_map)
from .core import (EscapeOutcome, Method, Outcome, PerturbationScale, RhoResult,
                   TwoFoldParams)

# Noise is drawn in fixed chunks of steps so that a path's stream does not
# depend on when its block finishes.
_CHUNK = 256


class SchemeError(RuntimeError):
    """The discrete PDE solve failed or produced a non-probability."""


@dataclass(frozen=True)
class BlowupExponents:
    lambda1: float = 4.0 / 3.0
    lambda2: float = 2.0 / 3.0
    lambda3: float = 2.0 / 3.0

    def __post_init__(self):
        if (self.lambda1, self.lambda2, self.lambda3) != (4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0):
            raise ValueError("blow-up exponents are fixed at (4/3, 2/3, 2/3)")


BLOWUP = BlowupExponents()


def blowup_transform(x, y, t, eps: float):
    """Map ``(x, y, t)`` to the eps-free variables ``(u, v, s)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return (x / eps ** BLOWUP.lambda1, y / eps ** BLOWUP.lambda2, t / eps ** BLOWUP.lambda3)


def blowup_inverse(u, v, s, eps: float):
    if not eps > 0:
        raise ValueError("eps must be positive")
    return (u * eps ** BLOWUP.lambda1, v * eps ** BLOWUP.lambda2, s * eps ** BLOWUP.lambda3)


# ---------------------------------------------------------------------------
# Boundary-value problem for Q
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PdeGrid:
    """Uniform grid on ``[-u_max, u_max] x [r_min, r_max]`` with a node at ``u = 0``.

    ``du`` and ``dr`` are upper bounds; the steps actually used are the
    largest that divide ``u_max`` and ``r_max - r_min`` exactly. Bounds left
    as ``None`` are chosen from the parameters (see :meth:`resolved`).
    """

    u_max: Optional[float] = None
    r_min: Optional[float] = None
    r_max: Optional[float] = None
    du: float = 0.01
    dr: float = 0.005

    def __post_init__(self):
        for name in ("u_max", "du", "dr"):
            val = getattr(self, name)
            if val is None and name == "u_max":
                continue
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be a finite positive number, got {val!r}")
        if self.u_max is not None and self.du > self.u_max / 2:
            raise ValueError("du must be at most u_max / 2")
        if self.r_min is not None and not self.r_min < 0:
            raise ValueError("r_min must be negative")
        if self.r_max is not None and not self.r_max > 0:
            raise ValueError("r_max must be positive")

    def resolved(self, p: TwoFoldParams) -> "PdeGrid":
        """Fill in missing bounds.

        The base box is ``u_max = 12``, ``r`` in ``[-8, 12]``. When ``A/B`` is
        small the inward drift on ``u < 0`` is weak: the initialization is
        forgotten slowly, ``Q(0, r)`` settles late and paths wander further
        left. All bounds are then stretched with ``sqrt(B / 2A)``.
        """
        stretch = max(1.0, math.sqrt(p.B / (2.0 * p.A)))
        u_max = self.u_max if self.u_max is not None else float(math.ceil(12.0 * max(1.0, stretch / 3)))
        r_min = self.r_min if self.r_min is not None else float(math.floor(-8.0 * stretch))
        r_max = self.r_max if self.r_max is not None else float(math.ceil(12.0 * max(1.0, stretch / 2)))
        return PdeGrid(u_max, r_min, r_max, self.du, self.dr)

    def _need_range(self):
        if self.u_max is None or self.r_min is None or self.r_max is None:
            raise ValueError("grid r range unset; call resolved(params) first")

    @property
    def half_cells(self) -> int:
        self._need_range()
        return int(math.ceil(self.u_max / self.du - 1e-9))

    @property
    def du_eff(self) -> float:
        return self.u_max / self.half_cells

    @property
    def n_u(self) -> int:
        return 2 * self.half_cells + 1

    @property
    def interface(self) -> int:
        return self.half_cells

    @property
    def n_steps(self) -> int:
        self._need_range()
        return int(math.ceil((self.r_max - self.r_min) / self.dr - 1e-9))

    @property
    def dr_eff(self) -> float:
        return (self.r_max - self.r_min) / self.n_steps

    def u(self) -> np.ndarray:
        return (np.arange(self.n_u) - self.interface) * self.du_eff

    def r(self) -> np.ndarray:
        return self.r_min + self.dr_eff * np.arange(self.n_steps + 1)


@dataclass
class QField:
    """Solution of the Q problem.

    ``values`` holds every ``stride``-th row (plus the last); the interface
    trace ``q0[j] = Q(0, r_all[j])`` is kept at every step.
    """

    grid: PdeGrid
    params: TwoFoldParams
    u: np.ndarray
    r: np.ndarray
    values: np.ndarray
    r_all: np.ndarray
    q0: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def at_interface(self, r: float) -> float:
        return float(np.interp(r, self.r_all, self.q0))

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


def _seed_row(p: TwoFoldParams, grid: PdeGrid, cells: float = 5.0) -> np.ndarray:
    # Step data diffused over a thin initial layer. On two half-lines with
    # diffusivities dL, dR and C1 matching, a step relaxes self-similarly to
    # a*erfc on the left and 1 - b*erfc on the right with a + b = 1 and
    # a*sqrt(B) = b. A bare step is not resolvable by the first implicit step.
    u = grid.u()
    d_left, d_right = 0.5 / p.B, 0.5
    delta = (cells * grid.du_eff) ** 2 / (4.0 * min(d_left, d_right))
    a = 1.0 / (1.0 + math.sqrt(p.B))
    left = a * erfc(-u / math.sqrt(4.0 * d_left * delta))
    right = 1.0 - (1.0 - a) * erfc(u / math.sqrt(4.0 * d_right * delta))
    return np.where(u < 0, left, right)


def solve_Q_pde(p: TwoFoldParams, grid: PdeGrid = PdeGrid(), *, max_rows: int = 401,
                seed_initial: bool = True, check_tol: float = 1e-8) -> QField:
    """March the backward equation for ``Q`` from ``r_min`` to ``r_max``.

    Backward Euler in ``r``. First derivatives are central where the cell
    Peclet number ``|a| du / d`` is at most 2 and upwinded otherwise; second
    derivatives are central. The interface node carries the C1 condition
    written with second-order one-sided derivatives. With ``seed_initial``
    off the initial row is the bare step ``1[u >= 0]``.
    """
    grid = grid.resolved(p)
    n, m = grid.n_u, grid.interface
    du, dr = grid.du_eff, grid.dr_eff
    left = np.arange(n) < m
    diff = np.where(left, 0.5 / p.B, 0.5)
    slope = np.where(left, p.A / p.B, -1.0)
    diff_c = diff / du ** 2

    if seed_initial:
        Q = _seed_row(p, grid)
    else:
        Q = (grid.u() >= 0).astype(float)
    Q[0], Q[-1] = 0.0, 1.0

    r_all = grid.r()
    n_steps = grid.n_steps
    stride = max(1, math.ceil(n_steps / max(1, max_rows - 1)))
    keep = list(range(0, n_steps + 1, stride))
    if keep[-1] != n_steps:
        keep.append(n_steps)
    rows = [Q.copy()]
    q0 = np.empty(n_steps + 1)
    q0[0] = Q[m]

    ab = np.zeros((5, n))
    worst_mono = 0.0
    worst_range = 0.0
    for j in range(1, n_steps + 1):
        a = slope * r_all[j]
        central = np.abs(a) * du <= 2.0 * diff
        a_pos, a_neg = np.maximum(a, 0.0), np.minimum(a, 0.0)
        lo = diff_c + np.where(central, -0.5 * a / du, -a_neg / du)
        hi = diff_c + np.where(central, 0.5 * a / du, a_pos / du)
        mid = -2.0 * diff_c + np.where(central, 0.0, (a_neg - a_pos) / du)

        ab.fill(0.0)
        ab[2] = 1.0 - dr * mid
        ab[1, 1:] = -dr * hi[:-1]
        ab[3, :-1] = -dr * lo[1:]
        rhs = Q.copy()
        ab[2, 0], ab[1, 1], rhs[0] = 1.0, 0.0, 0.0
        ab[2, -1], ab[3, -2], rhs[-1] = 1.0, 0.0, 1.0
        # (3Q_m - 4Q_{m-1} + Q_{m-2}) = (-3Q_m + 4Q_{m+1} - Q_{m+2})
        ab[2, m], rhs[m] = 6.0, 0.0
        ab[3, m - 1], ab[4, m - 2] = -4.0, 1.0
        ab[1, m + 1], ab[0, m + 2] = -4.0, 1.0
        try:
            Q = solve_banded((2, 2), ab, rhs, check_finite=False)
        except (LinAlgError, ValueError) as exc:
            raise SchemeError(f"linear solve failed at r={r_all[j]:.6g}: {exc}") from exc
        if not np.all(np.isfinite(Q)):
            raise SchemeError(f"non-finite solution at r={r_all[j]:.6g}")
        worst_mono = min(worst_mono, float(np.min(np.diff(Q))))
        worst_range = max(worst_range, float(-Q.min()), float(Q.max() - 1.0))
        q0[j] = Q[m]
        if j in keep:
            rows.append(Q.copy())

    if worst_mono < -check_tol or worst_range > check_tol:
        raise SchemeError(f"Q left [0,1] or lost monotonicity "
                          f"(min dQ={worst_mono:.3g}, overshoot={worst_range:.3g})")
    values = np.clip(np.array(rows), 0.0, 1.0)
    return QField(grid=grid, params=p, u=grid.u(), r=r_all[keep], values=values,
                  r_all=r_all, q0=q0,
                  diagnostics={"min_dQ": worst_mono, "overshoot": worst_range})


def tail_flatness(field_: QField) -> float:
    """``|Q(0, r_max) - Q(0, 0.9 r_max)|``."""
    r_max = field_.grid.r_max
    return abs(field_.q0[-1] - field_.at_interface(0.9 * r_max))


def rho_noise_pde(p: TwoFoldParams, grid: PdeGrid = PdeGrid(), *,
                  tail_tol: float = 1e-3, max_extensions: int = 3) -> RhoResult:
    """``Q(0, r_max)``, flagged unconverged if the tail is not flat.

    If ``r_max`` was left to the grid, it is doubled (at most
    ``max_extensions`` times) until ``|Q(0, r_max) - Q(0, 0.9 r_max)|``
    drops below ``tail_tol``.
    """
    auto_tail = grid.r_max is None
    current = grid.resolved(p)
    for attempt in range(max_extensions + 1):
        sol = solve_Q_pde(p, current)
        tail = tail_flatness(sol)
        if tail < tail_tol or not auto_tail or attempt == max_extensions:
            break
        current = PdeGrid(current.u_max, current.r_min, 2 * current.r_max, current.du, current.dr)
    value = float(min(1.0, max(0.0, sol.q0[-1])))
    return RhoResult(value, Method.NOISE_PDE, converged=bool(tail < tail_tol),
                     diagnostics={"tail": tail, "u_max": current.u_max, "r_min": current.r_min,
                                  "r_max": current.r_max, "du": current.du_eff,
                                  "dr": current.dr_eff})


# ---------------------------------------------------------------------------
# Monte Carlo of the reduced system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McConfig:
    """Euler-Maruyama settings for the reduced system.

    Paths start at ``(u, v) = (0, s_min)`` and are followed until ``v``
    reaches ``s_max``. With ``classify="final"`` the sign of ``u`` at that
    point decides; with ``"exit"`` the first crossing of ``|u| = u_bound``
    decides and the final sign is the fallback.

    ``substeps > 1`` integrates with step ``dt / substeps`` along the same
    Brownian path, bridged between the coarse increments, so runs that
    differ only in ``substeps`` are directly comparable.
    """

    n_paths: int = 100_000
    dt: float = 1e-3
    s_min: float = -8.0
    s_max: float = 6.0
    u_bound: float = 50.0
    seed: int = 0
    classify: str = "final"
    substeps: int = 1

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.s_min < 0 < self.s_max:
            raise ValueError("need s_min < 0 < s_max")
        if not self.u_bound > 0:
            raise ValueError("u_bound must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.classify not in ("final", "exit"):
            raise ValueError("classify must be 'final' or 'exit'")
        if self.substeps < 1 or self.substeps & (self.substeps - 1):
            raise ValueError("substeps must be a power of two")


def _bridge(dw: np.ndarray, h: float, w: np.ndarray) -> np.ndarray:
    """Split increments ``dw`` over steps of length ``h`` into ``len(w) + 1`` pieces.

    Levy construction: each interval is halved repeatedly, the midpoint
    drawn from its Brownian-bridge law with the fresh normals ``w``.
    """
    pieces = dw[None, :]
    used = 0
    while pieces.shape[0] < w.shape[0] + 1:
        n = pieces.shape[0]
        h_half = h / n / 2.0
        first = 0.5 * pieces + math.sqrt(h_half / 2.0) * w[used:used + n]
        used += n
        pieces = np.stack([first, pieces - first], axis=1).reshape(2 * n, -1)
    return pieces


def _run_groups(n: int, seed: int, workers: Optional[int], kernel, streams: int = 1) -> int:
    sizes = [c.stop - c.start for c in blocks(n, BLOCK_SIZE)]
    groups = group_blocks(len(sizes), workers)

    def one(ids):
        part = [sizes[b] for b in ids]
        noises = [GroupNoise(seed, ids, part, _CHUNK, stream=s) for s in range(streams)]
        return kernel(sum(part), *noises)

    return int(sum(run_map(one, groups, workers)))


def _reduced_kernel(p: TwoFoldParams, cfg: McConfig, size: int, noise: GroupNoise,
                    fine: Optional[GroupNoise]) -> int:
    # Every path is advanced every step; a path's verdict is fixed on the
    # step where it is decided, so later motion is irrelevant.
    m = cfg.substeps
    dt = cfg.dt / m
    u = np.zeros(size)
    v = np.full(size, float(cfg.s_min))
    verdict = np.zeros(size, dtype=np.int8)  # +1 right, -1 left, 0 open
    exit_mode = cfg.classify == "exit"
    neg = np.empty(size, dtype=bool)
    c = np.empty(size)
    w = np.empty(size)
    fresh = np.empty(size, dtype=bool)
    # v grows by at least min(B, 1) per unit s
    max_steps = int(math.ceil((cfg.s_max - cfg.s_min) / (min(p.B, 1.0) * cfg.dt))) + 1
    step = 0
    while step < max_steps:
        z = noise.next_chunk()
        z *= math.sqrt(cfg.dt)
        extra = fine.next_chunk((m - 1,)) if fine is not None else None
        for k in range(min(noise.chunk, max_steps - step)):
            incs = z[k][None, :] if extra is None else _bridge(z[k], cfg.dt, extra[k])
            for dW in incs:
                np.less(u, 0.0, out=neg)
                # drift coefficient of v: -A on the left, 1 on the right
                np.multiply(neg, -(1.0 + p.A) * dt, out=c)
                c += dt
                c *= v
                u += c
                u += dW
                np.multiply(neg, (p.B - 1.0) * dt, out=w)
                w += dt
                v += w
                if exit_mode:
                    np.greater_equal(np.abs(u), cfg.u_bound, out=fresh)
                    fresh |= v >= cfg.s_max
                else:
                    np.greater_equal(v, cfg.s_max, out=fresh)
                fresh &= verdict == 0
                if fresh.any():
                    verdict[fresh] = np.where(u[fresh] > 0, 1, -1)
                    if not (verdict == 0).any():
                        return int(np.count_nonzero(verdict > 0))
        step += noise.chunk
    verdict[verdict == 0] = np.where(u[verdict == 0] > 0, 1, -1)
    return int(np.count_nonzero(verdict > 0))


def simulate_reduced_sde(p: TwoFoldParams, cfg: McConfig = McConfig(),
                         workers: Optional[int] = None) -> RhoResult:
    if cfg.substeps == 1:
        hits = _run_groups(cfg.n_paths, cfg.seed, workers,
                           lambda size, noise: _reduced_kernel(p, cfg, size, noise, None))
    else:
        hits = _run_groups(cfg.n_paths, cfg.seed, workers,
                           lambda size, noise, fine: _reduced_kernel(p, cfg, size, noise, fine),
                           streams=2)
    return RhoResult(hits / cfg.n_paths, Method.NOISE_MC,
                     standard_error=binomial_stderr(hits, cfg.n_paths),
                     diagnostics={"n": cfg.n_paths, "dt": cfg.dt, "s_min": cfg.s_min,
                                  "s_max": cfg.s_max, "seed": cfg.seed, "classify": cfg.classify,
                                  "substeps": cfg.substeps})


# ---------------------------------------------------------------------------
# One-dimensional piecewise-constant drift
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PwcDrift:
    phi_minus: float
    phi_plus: float

    def __post_init__(self):
        if not (self.phi_minus < 0 < self.phi_plus):
            raise ValueError("need phi_minus < 0 < phi_plus")
        if not (math.isfinite(self.phi_minus) and math.isfinite(self.phi_plus)):
            raise ValueError("drift values must be finite")


def pwc_limit_weights(d: PwcDrift) -> Tuple[float, float]:
    """Zero-noise weights ``(w_left, w_right)`` of the two escaping solutions."""
    span = d.phi_plus - d.phi_minus
    return -d.phi_minus / span, d.phi_plus / span


def _pwc_kernel(d: PwcDrift, eps: float, horizon: float, dtau: float, size: int,
                noise: GroupNoise) -> int:
    # In tau = t/eps^2, X = x/eps^2 the noise has unit size. Beyond |X| = L a
    # path ever returns to 0 with probability exp(-2 |phi| L) = 1e-9, so it
    # is retired there with its current sign.
    commit = 0.5 * math.log(1e9) / min(-d.phi_minus, d.phi_plus)
    n_steps = int(math.ceil(horizon / eps ** 2 / dtau))
    x = np.zeros(size)
    idx = np.arange(size)
    right = 0
    step = 0
    while step < n_steps and idx.size:
        z = noise.next_chunk()[:, idx] * math.sqrt(dtau)
        for k in range(min(noise.chunk, n_steps - step)):
            x += np.where(x > 0, d.phi_plus * dtau, d.phi_minus * dtau)
            x += z[k]
        step += noise.chunk
        done = np.abs(x) >= commit
        right += int(np.count_nonzero(x[done] > 0))
        x, idx = x[~done], idx[~done]
    return right + int(np.count_nonzero(x > 0))


def simulate_pwc_sde(d: PwcDrift, eps: float, horizon: float = 1.0, n: int = 100_000,
                     seed: int = 0, *, dtau: float = 1e-3,
                     workers: Optional[int] = None) -> Tuple[float, float]:
    """Fraction of ``dx = phi(x) dt + eps dW``, ``x(0) = 0``, with ``x(horizon) > 0``.

    ``dtau`` is the step in the natural time ``t / eps^2``.
    """
    if not eps > 0 or not horizon > 0 or n < 1 or not dtau > 0:
        raise ValueError("need eps > 0, horizon > 0, dtau > 0, n >= 1")
    hits = _run_groups(n, seed, workers,
                       lambda size, noise: _pwc_kernel(d, eps, horizon, dtau, size, noise))
    return hits / n, binomial_stderr(hits, n)


# ---------------------------------------------------------------------------
# Time-reversal symmetry check
# ---------------------------------------------------------------------------

DRIFT_CAP = 1e6


def _symmetry_kernel(A: float, T: float, dt: float, bump: Optional[Callable[[float], float]],
                     size: int, noise: GroupNoise) -> int:
    n_steps = int(round(2 * T / dt))
    sq = math.sqrt(dt)
    u = np.zeros(size)
    step = 0
    while step < n_steps:
        z = noise.next_chunk()
        for k in range(min(noise.chunk, n_steps - step)):
            s = -T + (step + k) * dt
            g = s if bump is None else s * bump(s)
            drift = np.where(u < 0, max(-DRIFT_CAP, min(DRIFT_CAP, -A * g)),
                             max(-DRIFT_CAP, min(DRIFT_CAP, g)))
            u += drift * dt + sq * z[k]
        step += noise.chunk
    return int(np.count_nonzero(u > 0))


def check_time_symmetry_lemma(A: float, T: float, n: int = 100_000, seed: int = 0, *,
                              dt: float = 1e-3, bump: Optional[Callable[[float], float]] = None,
                              workers: Optional[int] = None) -> Tuple[float, float]:
    """Estimate ``P[u(T) > 0]`` for ``du = phi(u, s) ds + dW`` with ``u(-T) = 0``.

    ``phi = -A s`` for ``u < 0`` and ``s`` for ``u > 0``, optionally multiplied
    by an even function ``bump(s)``. The drift is odd in ``s``, so the answer
    is 1/2 for every ``A``.
    """
    if not (A > 0 and T > 0 and dt > 0 and n >= 1):
        raise ValueError("need A > 0, T > 0, dt > 0, n >= 1")
    hits = _run_groups(n, seed, workers,
                       lambda size, noise: _symmetry_kernel(A, T, dt, bump, size, noise))
    return hits / n, binomial_stderr(hits, n)


# ---------------------------------------------------------------------------
# Unreduced system (demonstration)
# ---------------------------------------------------------------------------

def simulate_unreduced_sde(p: TwoFoldParams, scale: PerturbationScale, y0: float,
                           noise_matrix=((1.0, 0.0), (0.0, 1.0)), *, dt: Optional[float] = None,
                           seed: int = 0, max_steps: int = 10_000_000,
                           trace: Optional[list] = None) -> EscapeOutcome:
    """One Euler-Maruyama path of the leading-order system with noise ``eps D dW``.

    The first row of ``D`` is rescaled to unit length; only that row matters
    to leading order. The default step resolves the inner time scale
    ``eps^(2/3)``.
    """
    if not y0 < 0:
        raise ValueError("y0 must be negative")
    D = np.asarray(noise_matrix, dtype=float)
    if D.shape != (2, 2):
        raise ValueError("noise_matrix must be 2x2")
    norm = math.hypot(D[0, 0], D[0, 1])
    if norm == 0:
        raise ValueError("noise in x must not vanish")
    D = D.copy()
    D[0] /= norm
    eps = scale.eps
    h = dt if dt is not None else 1e-3 * eps ** BLOWUP.lambda3
    sq = math.sqrt(h)
    rng = block_rng(seed, 0)
    x, y, t = 0.0, float(y0), 0.0
    if trace is not None:
        trace.append((t, x, y))
    for _ in range(max_steps):
        dw = rng.standard_normal(2) * sq
        if x < 0:
            fx, fy = -p.A * y, p.B
        else:
            fx, fy = y, 1.0
        x += fx * h + eps * (D[0, 0] * dw[0] + D[0, 1] * dw[1])
        y += fy * h + eps * (D[1, 0] * dw[0] + D[1, 1] * dw[1])
        t += h
        if trace is not None:
            trace.append((t, x, y))
        if abs(x) >= scale.x_star:
            out = Outcome.HEADS_RIGHT if x > 0 else Outcome.HEADS_LEFT
            return EscapeOutcome(out, x, y, t)
    raise RuntimeError("path did not leave |x| < x_star within max_steps")
