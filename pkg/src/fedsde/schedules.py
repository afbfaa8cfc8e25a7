"""Learning-rate schedules with closed-form integrals.

All built-in schedules are strictly positive on t >= 0 and expose exact
expressions for the running integral, the running integral of the square,
and the inverse of the running integral (used for inverse-CDF sampling of
random time points).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

KIND_CONSTANT = "constant"
KIND_POWER = "power"


@dataclass(frozen=True)
class Schedule:
    """A scalar rate eta(t), either constant or (t + 1) ** -exponent."""

    kind: str
    param: float

    def __post_init__(self) -> None:
        if self.kind not in (KIND_CONSTANT, KIND_POWER):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not math.isfinite(self.param):
            raise ValueError("schedule parameter must be finite")
        if self.kind == KIND_CONSTANT and self.param <= 0.0:
            raise ValueError("constant schedule requires a positive rate")

    @classmethod
    def constant(cls, rate: float) -> "Schedule":
        return cls(KIND_CONSTANT, float(rate))

    @classmethod
    def power_decay(cls, exponent: float) -> "Schedule":
        """eta(t) = 1 / (t + 1) ** exponent."""
        return cls(KIND_POWER, float(exponent))

    @classmethod
    def inverse_sqrt(cls) -> "Schedule":
        return cls(KIND_POWER, 0.5)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("schedules are defined for t >= 0")
        if self.kind == KIND_CONSTANT:
            out = np.full_like(t, self.param)
        else:
            out = (t + 1.0) ** (-self.param)
        return out if out.ndim else float(out)

    def integral(self, t):
        """Closed form of the running integral of eta over [0, t]."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("schedules are defined for t >= 0")
        if self.kind == KIND_CONSTANT:
            out = self.param * t
        elif self.param == 1.0:
            out = np.log1p(t)
        else:
            b = self.param
            out = ((t + 1.0) ** (1.0 - b) - 1.0) / (1.0 - b)
        return out if out.ndim else float(out)

    def square_integral(self, t):
        """Closed form of the running integral of eta ** 2 over [0, t]."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("schedules are defined for t >= 0")
        if self.kind == KIND_CONSTANT:
            out = self.param ** 2 * t
        elif self.param == 0.5:
            out = np.log1p(t)
        else:
            b = 2.0 * self.param
            out = ((t + 1.0) ** (1.0 - b) - 1.0) / (1.0 - b)
        return out if out.ndim else float(out)

    def inverse_integral(self, y):
        """Solve integral(s) == y for s >= 0."""
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise ValueError("integral values are non-negative")
        if self.kind == KIND_CONSTANT:
            out = y / self.param
        elif self.param == 1.0:
            out = np.expm1(y)
        else:
            b = self.param
            base = 1.0 + (1.0 - b) * y
            if np.any(base <= 0):
                raise ValueError("integral value outside the schedule's range")
            out = base ** (1.0 / (1.0 - b)) - 1.0
        return out if out.ndim else float(out)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "param": self.param}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Schedule":
        return cls(str(data["kind"]), float(data["param"]))
