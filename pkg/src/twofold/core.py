"""Normal form of the planar visible-visible two-fold and shared result types.

Near the two-fold the system is, to leading order,

    x < 0 :  (dx, dy) = (-A y, B)
    x > 0 :  (dx, dy) = (y, 1)

with A, B > 0. Every regularization in this package reduces to a probability
``rho(A, B)`` of heading right, and all of them satisfy
``rho(1/A, 1/B) = 1 - rho(A, B)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

# Optional higher-order terms: (side, x, y) -> (ddx, ddy), added to the drift.
Perturbation = Callable[["Side", float, float], Tuple[float, float]]


class Side(enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    def other(self) -> "Side":
        return Side.RIGHT if self is Side.LEFT else Side.LEFT


class Method(enum.Enum):
    HYSTERESIS = "hy"
    TIME_DELAY = "td"
    NOISE_PDE = "no-pde"
    NOISE_MC = "no-mc"

    @property
    def is_monte_carlo(self) -> bool:
        return self is Method.NOISE_MC


@dataclass(frozen=True)
class TwoFoldParams:
    """Positive normal-form constants.

    ``A`` is the ratio of the tangential accelerations of the two half-systems,
    ``B`` the ratio of their vertical drifts.
    """

    A: float
    B: float

    def __post_init__(self):
        for name in ("A", "B"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be a finite positive number, got {val!r}")
        object.__setattr__(self, "A", float(self.A))
        object.__setattr__(self, "B", float(self.B))


@dataclass(frozen=True)
class PerturbationScale:
    """Perturbation size ``eps`` and the escape box ``|x| < x_star, |y| < y_star``."""

    eps: float
    x_star: float = 0.5
    y_star: float = 1.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps!r}")
        if not (self.x_star > 0 and self.y_star > 0):
            raise ValueError("x_star and y_star must be positive")
        if not self.eps < self.x_star:
            raise ValueError(f"eps={self.eps} must be much smaller than x_star={self.x_star}")


class Outcome(enum.Enum):
    HEADS_RIGHT = "HeadsRight"
    HEADS_LEFT = "HeadsLeft"


@dataclass(frozen=True)
class EscapeOutcome:
    outcome: Outcome
    x: float
    y: float
    t: float
    n_switches: int = 0

    @property
    def heads_right(self) -> bool:
        return self.outcome is Outcome.HEADS_RIGHT


@dataclass(frozen=True)
class RhoResult:
    value: float
    method: Method
    standard_error: Optional[float] = None
    eps_used: Optional[float] = None
    empirical: bool = False
    converged: bool = True
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def is_sampled(self) -> bool:
        """True for estimates that are sample fractions over an ensemble."""
        return self.method.is_monte_carlo or self.empirical

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.value!r}")
        if self.is_sampled != (self.standard_error is not None):
            raise ValueError("standard_error is required for, and only for, Monte Carlo estimates")
        if self.standard_error is not None and self.standard_error < 0:
            raise ValueError("standard_error must be nonnegative")
        if self.eps_used is not None and not self.eps_used > 0:
            raise ValueError("eps_used must be positive")


def vector_field(p: TwoFoldParams, side: Side, x: float, y: float,
                 perturbation: Optional[Perturbation] = None) -> Tuple[float, float]:
    """Leading-order drift of the selected half-system at ``(x, y)``."""
    if side is Side.LEFT:
        dx, dy = -p.A * y, p.B
    else:
        dx, dy = y, 1.0
    if perturbation is not None:
        ex, ey = perturbation(side, x, y)
        dx, dy = dx + ex, dy + ey
    return dx, dy


def dual_params(p: TwoFoldParams) -> TwoFoldParams:
    """Parameters of the mirrored system; left and right swap roles."""
    return TwoFoldParams(1.0 / p.A, 1.0 / p.B)


def rho_hysteresis_closed_form(p: TwoFoldParams) -> RhoResult:
    return RhoResult(p.A / (p.A + p.B), Method.HYSTERESIS)
