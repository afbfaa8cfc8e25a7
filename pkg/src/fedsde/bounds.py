"""Convergence-rate bound evaluators and empirical bound comparisons.

Each evaluator returns the theoretical right-hand side of a guarantee on the
server process, as an explicit function of measured problem constants; the
comparison machinery pairs those values with Monte Carlo measurements of the
corresponding left-hand side.  All required integrals are available in
closed form for the built-in schedules; the nested-integral bound is also
evaluated by adaptive quadrature so closed forms can be cross-checked.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import quad

from .linalg import spectral_norm
from .schedules import Schedule

QUAD_OPTS = {"epsabs": 1e-13, "epsrel": 1e-10, "limit": 200}


@dataclass(frozen=True)
class BoundInputs:
    """Measured constants feeding the rate bounds.

    ``grad_bound`` and ``smoothness`` come from the smoothness-constant
    measurement over the analysis box; ``cov_bound`` is the (estimated)
    spectral bound on the schedule-unscaled covariance of update draws along
    the trajectory, a lower estimate of the true supremum.
    """

    grad_bound: float            # sup-norm gradient / Hessian-diagonal bound
    smoothness: float            # gradient Lipschitz modulus
    weights: np.ndarray          # (Q,) aggregation weights
    noise_traces: np.ndarray     # (Q,) traces of the client noise covariances
    local_steps: int
    time_step: float
    cov_bound: float
    loss_init: float
    loss_opt: float
    dist_init: float
    dim: int
    server_rate: float = 1.0
    wqc_slope: float | None = None

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float)
        traces = np.asarray(self.noise_traces, dtype=float)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "noise_traces", traces)
        for name in ("grad_bound", "smoothness", "time_step", "cov_bound", "dim"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not math.isfinite(self.cov_bound):
            raise ValueError("cov_bound must be finite")

    @property
    def loss_gap(self) -> float:
        return self.loss_init - self.loss_opt

    @property
    def drift_sum(self) -> float:
        """sum_k p_k (grad_bound + sqrt(tr noise_k)), the per-client drift scale."""
        return float((self.weights * (self.grad_bound + np.sqrt(self.noise_traces))).sum())

    @property
    def grad_drift_constant(self) -> float:
        """E^2 L mu drift_sum / 2; multiplies eta^2 in the gradient bound."""
        return self.local_steps ** 2 * self.grad_bound * self.smoothness * self.drift_sum / 2.0

    @property
    def gap_drift_constant(self) -> float:
        """mu E^2 drift_sum; multiplies the drift integrals in the gap bound."""
        return self.smoothness * self.local_steps ** 2 * self.drift_sum

    @property
    def gap_noise_constant(self) -> float:
        """dim h eta0^2 cov_bound / 2 + eta0 gap_drift_constant dist_init."""
        return (self.dim * self.time_step * self.server_rate ** 2 * self.cov_bound / 2.0
                + self.server_rate * self.gap_drift_constant * self.dist_init)


def grad_sq_bound(inputs: BoundInputs, schedule: Schedule, t: float) -> float:
    """Bound on the time-sampled expected squared gradient norm (unit server rate).

    Equals [loss gap + (C_drift + h V L / 2) * int of eta^2] / (E * int of eta);
    the stochastic factor is exact in closed form for every built-in schedule.
    """
    if t <= 0.0:
        raise ValueError("t must be positive (the normalizer vanishes at 0)")
    phi = float(schedule.integral(t))
    stochastic = (inputs.grad_drift_constant
                  + inputs.time_step * inputs.cov_bound * inputs.grad_bound / 2.0)
    return (inputs.loss_gap + stochastic * float(schedule.square_integral(t))) / (
        inputs.local_steps * phi)


@dataclass(frozen=True)
class PowerRateBound:
    """Closed-form value (where displayed) and asymptotic class for eta = (t+1)^-b."""

    value: float | None
    rate: str


def power_rate_bound(inputs: BoundInputs, exponent: float, t: float) -> PowerRateBound:
    """Displayed closed forms for b in {1/2, 1}; asymptotic class otherwise."""
    b = float(exponent)
    if not 0.0 < b <= 1.0:
        raise ValueError("exponent must lie in (0, 1]")
    stochastic = (inputs.grad_drift_constant
                  + inputs.time_step * inputs.cov_bound * inputs.grad_bound / 2.0)
    value = None
    if b == 1.0:
        rate = "1/log(t)"
        if t > 0.0:
            value = (inputs.loss_gap + stochastic) / (inputs.local_steps * math.log1p(t))
    elif b == 0.5:
        rate = "log(t)/sqrt(t)"
        if t > 0.0:
            norm = inputs.local_steps * (2.0 * math.sqrt(t + 1.0) - 2.0)
            value = inputs.loss_gap / norm + stochastic * math.log1p(t) / norm
    elif b < 0.5:
        rate = f"1/t^{b:g}"
    else:
        rate = f"1/t^{1.0 - b:g}"
    return PowerRateBound(value=value, rate=rate)


@dataclass(frozen=True)
class ConstantRateBound:
    """Bound for a constant client rate with server rate 1/(t+1).

    The ``alt`` variants carry an extra division of the non-vanishing
    neighborhood term by the local-step count, matching the alternative
    arrangement of the same derivation; both are reported, neither is
    adjudicated.
    """

    value: float
    neighborhood: float
    value_alt: float
    neighborhood_alt: float


def constant_rate_bound(inputs: BoundInputs, eta_c: float, t: float) -> ConstantRateBound:
    """Gradient bound under constant client rate; converges to a neighborhood."""
    if eta_c <= 0.0:
        raise ValueError("eta_c must be positive")
    if t <= 0.0:
        raise ValueError("t must be positive")
    first = (inputs.loss_gap
             + eta_c ** 2 * inputs.time_step * inputs.cov_bound * inputs.grad_bound / 2.0
             ) / (inputs.local_steps * eta_c * math.log1p(t))
    neighborhood = eta_c * inputs.grad_drift_constant
    return ConstantRateBound(
        value=first + neighborhood,
        neighborhood=neighborhood,
        value_alt=first + neighborhood / inputs.local_steps,
        neighborhood_alt=neighborhood / inputs.local_steps)


def _require_wqc(inputs: BoundInputs) -> float:
    if inputs.wqc_slope is None or inputs.wqc_slope <= 0.0:
        raise ValueError("a positive wqc_slope is required for the loss-gap bound")
    return inputs.wqc_slope


def loss_gap_bound(inputs: BoundInputs, schedule: Schedule, t: float) -> float:
    """Bound on the time-sampled expected loss gap (weakly quasi-convex case).

    The outer integral of eta(s)^2 (L E phi(s) + sqrt(h) V sqrt(sqint(s)))
    is evaluated by adaptive quadrature; inner integrals are closed form.
    """
    tau = _require_wqc(inputs)
    if t <= 0.0:
        raise ValueError("t must be positive")
    eta0 = inputs.server_rate
    phi = float(schedule.integral(t))
    root_h = math.sqrt(inputs.time_step)

    def integrand(s: float) -> float:
        return float(schedule(s)) ** 2 * (
            inputs.grad_bound * inputs.local_steps * float(schedule.integral(s))
            + root_h * inputs.cov_bound * math.sqrt(float(schedule.square_integral(s))))

    outer, _ = quad(integrand, 0.0, t, **QUAD_OPTS)
    norm = tau * eta0 * phi
    return (inputs.dist_init / norm
            + eta0 ** 2 * inputs.gap_drift_constant * outer / norm
            + inputs.gap_noise_constant * float(schedule.square_integral(t)) / norm)


def loss_gap_bound_log_schedule(inputs: BoundInputs, t: float) -> float:
    """Exact closed form of the loss-gap bound for eta(t) = 1/(t+1).

    For that schedule the outer integral evaluates exactly:
        int eta^2 L E phi          = L E (t - log(1+t)) / (1+t),
        int eta^2 sqrt(h) V sqrt() = sqrt(h) V (2/3) (t/(1+t))^{3/2},
    so this agrees with the quadrature evaluator to roundoff.
    """
    tau = _require_wqc(inputs)
    if t <= 0.0:
        raise ValueError("t must be positive")
    eta0 = inputs.server_rate
    phi = math.log1p(t)
    ratio = t / (t + 1.0)
    outer = (inputs.grad_bound * inputs.local_steps * (t - phi) / (t + 1.0)
             + math.sqrt(inputs.time_step) * inputs.cov_bound * (2.0 / 3.0) * ratio ** 1.5)
    norm = tau * eta0 * phi
    return (inputs.dist_init / norm
            + eta0 ** 2 * inputs.gap_drift_constant * outer / norm
            + inputs.gap_noise_constant * ratio / norm)


def loss_gap_bound_log_schedule_loose(inputs: BoundInputs, t: float) -> float:
    """Coarser two-term arrangement of the same bound (upper bounds the exact form)."""
    tau = _require_wqc(inputs)
    if t <= 0.0:
        raise ValueError("t must be positive")
    eta0 = inputs.server_rate
    phi = math.log1p(t)
    rate_term = (eta0 ** 2 * inputs.gap_drift_constant * inputs.grad_bound
                 * inputs.local_steps / (tau * eta0)) * (t - phi) / (t * phi)
    lump = (inputs.dist_init + inputs.gap_noise_constant
            + eta0 ** 2 * inputs.gap_drift_constant
            * math.sqrt(inputs.time_step) * inputs.cov_bound)
    return rate_term + lump / (tau * eta0 * phi)


def drift_bound(i: int, eta_t: float, grad_bound: float, noise_trace: float) -> float:
    """Expected client drift bound after i local steps: i eta (L + sqrt(tr))."""
    if i < 0:
        raise ValueError("step index must be >= 0")
    return i * eta_t * (grad_bound + math.sqrt(noise_trace))


def max_unscaled_cov_norm(covs_and_rates: Iterable[tuple[np.ndarray, float]]) -> float:
    """Running max of |cov / eta^2|_spectral over visited states.

    An empirical stand-in for the trajectory-wide covariance bound; adding
    states can only increase it.
    """
    best = 0.0
    count = 0
    for cov, eta in covs_and_rates:
        cov = getattr(cov, "cov", cov)
        best = max(best, spectral_norm(np.asarray(cov)) / float(eta) ** 2)
        count += 1
    if count == 0:
        raise ValueError("need at least one visited state")
    return best


@dataclass(frozen=True)
class BoundReport:
    """Measured left-hand sides versus theoretical right-hand sides."""

    times: np.ndarray
    lhs_mean: np.ndarray
    lhs_se: np.ndarray
    rhs: np.ndarray
    passed: bool

    @property
    def margins(self) -> np.ndarray:
        return self.rhs - self.lhs_mean

    def to_json_dict(self) -> dict:
        return {
            "checkpoints": [
                {
                    "t": float(t), "lhs_mean": float(m), "lhs_se": float(s),
                    "rhs": float(r), "margin": float(r - m),
                }
                for t, m, s, r in zip(self.times, self.lhs_mean, self.lhs_se, self.rhs)
            ],
            "passed": bool(self.passed),
        }

    def to_csv_text(self) -> str:
        out = io.StringIO()
        out.write("t,lhs_mean,lhs_se,rhs,margin\n")
        for t, m, s, r in zip(self.times, self.lhs_mean, self.lhs_se, self.rhs):
            out.write(",".join(format(x, ".17g") for x in (t, m, s, r, r - m)) + "\n")
        return out.getvalue()

    def to_json_text(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def compare_bound(measured: Sequence[tuple[float, float, float]],
                  rhs_evaluator: Callable[[float], float]) -> BoundReport:
    """Verdict: pass iff lhs_mean <= rhs + 3 * lhs_se at every checkpoint."""
    if not measured:
        raise ValueError("need at least one checkpoint")
    times = np.array([m[0] for m in measured], dtype=float)
    lhs = np.array([m[1] for m in measured], dtype=float)
    se = np.array([m[2] for m in measured], dtype=float)
    rhs = np.array([rhs_evaluator(t) for t in times], dtype=float)
    passed = bool(np.all(lhs <= rhs + 3.0 * se))
    return BoundReport(times=times, lhs_mean=lhs, lhs_se=se, rhs=rhs, passed=passed)
