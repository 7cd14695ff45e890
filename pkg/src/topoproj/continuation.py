"""Projection-sharpness scheduling.

The automatic scheme grows beta each iteration in proportion to how far the
objective has settled, gated by the gray-level indicator.  Stepped schemes
hold beta for a fixed number of iterations and then raise it on a fixed
cadence; a constant scheme never moves it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class AutomaticScheme:
    """Objective-settling-driven growth with a per-step cap."""

    gamma: float = 1e-4
    cap_fraction: float = 0.2
    epsilon: float = 0.01
    beta_max: float = 512.0

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.cap_fraction <= 0.0:
            raise ValueError(f"cap fraction must be positive, got {self.cap_fraction}")
        if self.epsilon <= 0.0:
            raise ValueError(f"gray threshold must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class SteppedScheme:
    """Hold, then raise beta by a fixed step on a fixed interval up to a cap."""

    hold_iters: int
    step: float = 2.0
    interval: int = 25
    beta_cap: float = 25.0
    epsilon: float = 0.01
    freeze_on_gray: bool = True

    @classmethod
    def default(cls) -> "SteppedScheme":
        return cls(hold_iters=400, step=2.0, interval=25, beta_cap=25.0)

    @classmethod
    def modified(cls) -> "SteppedScheme":
        return cls(hold_iters=200, step=2.0, interval=25, beta_cap=500.0)

    def schedule(self, iteration: int) -> float:
        """Beta the schedule prescribes at a given (1-based) iteration."""
        if iteration <= self.hold_iters:
            return 1.0
        steps = math.ceil((iteration - self.hold_iters) / self.interval)
        return min(1.0 + self.step * steps, self.beta_cap)


@dataclass(frozen=True)
class ConstantScheme:
    beta: float = 1.0


SchemeConfig = AutomaticScheme | SteppedScheme | ConstantScheme


def delta_beta(f_k: float, f_km1: float, gamma: float) -> float:
    """Raw beta increase from two consecutive objective values.

    Returns +inf when the objective has fully stalled (equal values); the
    per-step cap bounds it.
    """
    if not (math.isfinite(f_k) and math.isfinite(f_km1)):
        raise ValueError("objective values must be finite")
    if f_k == f_km1:
        return math.inf
    return max(-(gamma / 2.0) * (f_k + f_km1) / (f_k - f_km1), 0.0)


@dataclass
class ContinuationState:
    """Per-run beta state machine; beta starts at 1 and never decreases."""

    scheme: SchemeConfig
    beta: float = field(init=False)
    iteration: int = field(init=False, default=0)
    f_prev: float | None = field(init=False, default=None)

    def __post_init__(self):
        if isinstance(self.scheme, ConstantScheme):
            self.beta = self.scheme.beta
        else:
            self.beta = 1.0

    def advance(self, f_k: float, gray: float) -> float:
        """Update beta for the next iteration; returns the applied increase."""
        self.iteration += 1
        applied = 0.0
        if isinstance(self.scheme, AutomaticScheme):
            s = self.scheme
            if self.iteration > 1 and gray > s.epsilon:
                raw = delta_beta(f_k, self.f_prev, s.gamma)
                applied = min(min(raw, s.cap_fraction * self.beta),
                              s.beta_max - self.beta)
                applied = max(applied, 0.0)
                self.beta += applied
        elif isinstance(self.scheme, SteppedScheme):
            s = self.scheme
            target = s.schedule(self.iteration + 1)
            if s.freeze_on_gray and gray <= s.epsilon:
                target = self.beta
            new = max(self.beta, min(target, s.beta_cap))
            applied = new - self.beta
            self.beta = new
        self.f_prev = f_k
        return applied


def should_stop(gray: float, rel_obj_change: float, constraints_satisfied: bool,
                *, gray_tol: float = 0.01, change_tol: float = 1e-5) -> bool:
    """Composite stopping test: nearly binary, settled, and feasible."""
    return gray < gray_tol and rel_obj_change < change_tol and constraints_satisfied


def relative_change(f_k: float, f_km1: float | None) -> float:
    if f_km1 is None:
        return math.inf
    return abs(f_k - f_km1) / max(abs(f_k), 1e-30)
