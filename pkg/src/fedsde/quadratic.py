"""Closed forms for quadratic clients: the E-step local update distribution,
the scalar mean-reverting limit equation, and its Gaussian solution.

For one-dimensional quadratic clients with a constant client rate eta the
aggregated server weight has the linear mean-reverting limit

    dw = -drift_rate * (w - long-run mean) dt + sqrt(eta) * diffusion_scale dB,

whose solution is Gaussian with an exponentially relaxing mean.  Time in
this module is measured in the limit equation's own units; with a unit
server rate one aggregation round advances it by roughly eta.

Two conventions are implemented wherever noise terms are combined:

* ``additive``: the listed noise terms are composed by adding their
  standard-deviation coefficients (this is the form the limit equation's
  diffusion bracket displays, where the bare local-step count enters with
  no weight or noise scale attached);
* ``exact``: the covariance is propagated step by step through the linear
  local recursion.

The two disagree for more than one local step; both are exposed so the gap
is measurable.  Likewise the solution variance is reported in two forms:
the primary one solves the variance equation dv/dt = -2 A v + eta B^2 and
relaxes at rate 2A, while the alternative closed form relaxes at rate A.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import parallel, rng
from .linalg import matrix_sqrt_psd

MODES = ("additive", "exact")


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


@dataclass(frozen=True)
class QuadraticCase1D:
    """Scalar quadratic clients sharing one constant client rate."""

    weights: np.ndarray      # (Q,) aggregation weights, sum to 1
    curvatures: np.ndarray   # (Q,) positive
    centers: np.ndarray      # (Q,)
    noise_vars: np.ndarray   # (Q,) >= 0
    eta: float
    local_steps: int
    w_init: float

    def __post_init__(self) -> None:
        for name in ("weights", "curvatures", "centers", "noise_vars"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1 or not np.isfinite(arr).all():
                raise ValueError(f"{name} must be a finite vector")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        q = self.weights.size
        if any(getattr(self, n).size != q for n in ("curvatures", "centers", "noise_vars")):
            raise ValueError("per-client arrays must share one length")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if np.any(self.curvatures <= 0.0):
            raise ValueError("curvatures must be positive")
        if np.any(self.noise_vars < 0.0):
            raise ValueError("noise variances must be >= 0")
        if self.eta <= 0.0:
            raise ValueError("eta must be positive")
        if self.local_steps < 1:
            raise ValueError("local_steps must be >= 1")
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "w_init", float(self.w_init))
        factors = np.abs(1.0 - self.eta * self.curvatures)
        if np.any(factors >= 1.0):
            warnings.warn(
                "local recursion is not a contraction "
                f"(max |1 - eta * curvature| = {factors.max():.3g})",
                stacklevel=2)


def local_update_distribution(curvature, center, noise_cov, eta: float,
                              local_steps: int, w0, mode: str = "exact"
                              ) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian law of a client's weights after ``local_steps`` noisy steps.

    The mean unrolls the deterministic recursion:
        mean = w0 - eta * sum_j (I - eta U)^j U (w0 - center).
    The covariance follows the selected convention; the two coincide for a
    single local step.
    """
    _check_mode(mode)
    if local_steps < 1:
        raise ValueError("local_steps must be >= 1")
    curvature = np.atleast_2d(np.asarray(curvature, dtype=float))
    noise_cov = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    w0 = np.atleast_1d(np.asarray(w0, dtype=float))
    center = np.atleast_1d(np.asarray(center, dtype=float))
    d = w0.size
    eye = np.eye(d)
    contraction = eye - eta * curvature

    power = eye.copy()
    drift_sum = np.zeros((d, d))       # sum_j (I - eta U)^j U
    weighted_sum = np.zeros((d, d))    # sum_m (E - 1 - m) (I - eta U)^m
    exact_cov = np.zeros((d, d))
    for j in range(local_steps):
        drift_sum += power @ curvature
        exact_cov += eta ** 2 * power @ noise_cov @ power.T
        if j <= local_steps - 2:
            weighted_sum += (local_steps - 1 - j) * power
        power = contraction @ power
    mean = w0 - eta * drift_sum @ (w0 - center)
    if mode == "exact":
        cov = exact_cov
    else:
        noise_sd = matrix_sqrt_psd(noise_cov)
        sd = eta * (weighted_sum @ curvature) @ noise_sd + local_steps * eta * noise_sd
        cov = sd @ sd.T
    return mean, 0.5 * (cov + cov.T)


def _drift_terms(case: QuadraticCase1D) -> np.ndarray:
    """Per-client sum_j (1 - eta U_k)^j U_k for j < local_steps."""
    factors = 1.0 - case.eta * case.curvatures
    j = np.arange(case.local_steps)
    return (factors[:, None] ** j[None, :]).sum(axis=1) * case.curvatures


def ou_coefficients(case: QuadraticCase1D, mode: str = "additive"
                    ) -> tuple[float, float]:
    """Drift rate and diffusion scale (A, B) of the mean-reverting limit.

    The equation is dw = -A (w - long_run_mean) dt + sqrt(eta) * B dB.  In
    ``additive`` mode B is the displayed bracket
        local_steps + sum_k p_k sqrt(var_k) U_k sum over step pairs,
    in ``exact`` mode B is derived from the exactly propagated per-round
    update variance so that eta * B^2 matches it per unit of limit time.
    """
    _check_mode(mode)
    drift_rate = float(case.weights @ _drift_terms(case))
    e = case.local_steps
    if mode == "additive":
        factors = 1.0 - case.eta * case.curvatures
        m = np.arange(max(e - 1, 1))
        if e >= 2:
            pair_sums = ((e - 1 - m)[None, :] * factors[:, None] ** m[None, :]).sum(axis=1)
        else:
            pair_sums = np.zeros_like(factors)
        bracket = float(
            (case.weights * np.sqrt(case.noise_vars) * case.curvatures * pair_sums).sum())
        diffusion_scale = e + bracket
    else:
        round_var = 0.0
        for k in range(case.weights.size):
            _, cov = local_update_distribution(
                case.curvatures[k], case.centers[k], case.noise_vars[k],
                case.eta, e, 0.0, mode="exact")
            round_var += case.weights[k] ** 2 * float(cov[0, 0])
        diffusion_scale = math.sqrt(round_var) / case.eta
    return drift_rate, float(diffusion_scale)


def long_run_mean(case: QuadraticCase1D) -> float:
    """Fixed point the solution mean relaxes to."""
    terms = _drift_terms(case)
    return float((case.weights * terms * case.centers).sum() / (case.weights @ terms))


def analytic_mean(case: QuadraticCase1D, t):
    """Solution mean: long-run mean plus an exponentially decaying offset."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    rate, _ = ou_coefficients(case)
    mean_inf = long_run_mean(case)
    out = mean_inf + (case.w_init - mean_inf) * np.exp(-rate * t)
    return out if out.ndim else float(out)


def analytic_variance(case: QuadraticCase1D, t, mode: str = "additive"):
    """Solution variance from dv/dt = -2 A v + eta B^2 with v(0) = 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    rate, scale = ou_coefficients(case, mode)
    if rate <= 0.0:
        raise ValueError("drift rate must be positive for a bounded variance")
    stationary = case.eta * scale ** 2 / (2.0 * rate)
    out = stationary * -np.expm1(-2.0 * rate * t)
    return out if out.ndim else float(out)


def analytic_variance_alt(case: QuadraticCase1D, t, mode: str = "additive"):
    """Alternative closed form whose transient relaxes at rate A, not 2A.

    Kept for side-by-side comparison with :func:`analytic_variance`; the two
    agree at t = 0 and in the stationary limit.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    rate, scale = ou_coefficients(case, mode)
    if rate <= 0.0:
        raise ValueError("drift rate must be positive for a bounded variance")
    stationary = case.eta * scale ** 2 / (2.0 * rate)
    out = stationary * -np.expm1(-rate * t)
    return out if out.ndim else float(out)


def stationary_limit(case: QuadraticCase1D, mode: str = "additive") -> tuple[float, float]:
    """Long-run (mean, variance); as eta -> 0 the mean approaches the global
    minimizer and the variance vanishes linearly in eta."""
    rate, scale = ou_coefficients(case, mode)
    if rate <= 0.0:
        raise ValueError("drift rate must be positive for a stationary limit")
    return long_run_mean(case), case.eta * scale ** 2 / (2.0 * rate)


def simulate_paths(case: QuadraticCase1D, horizon: float, step: float,
                   n_paths: int, seed: int, mode: str = "additive"
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama ensemble of the limit equation itself.

    Returns (times, paths) with paths of shape (n_paths, n_steps + 1).  This
    is the Monte Carlo counterpart of the closed-form solution; path p is a
    deterministic function of (seed, p).
    """
    if step <= 0.0 or horizon < step:
        raise ValueError("need 0 < step <= horizon")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    rate, scale = ou_coefficients(case, mode)
    mean_inf = long_run_mean(case)
    n_steps = int(round(horizon / step))
    times = np.arange(n_steps + 1) * step
    noise_scale = math.sqrt(case.eta) * scale * math.sqrt(step)
    paths = np.empty((n_paths, n_steps + 1))
    paths[:, 0] = case.w_init

    def one_chunk(layout):
        index, start, stop = layout
        gen = rng.stream(seed, rng.TAG_OU_PATH, index)
        # Full-width draws keep path p a function of (seed, p) alone.
        w = np.full(rng.CHUNK, case.w_init)
        block = np.empty((stop - start, n_steps))
        for i in range(n_steps):
            z = gen.standard_normal(rng.CHUNK)
            w = w - rate * (w - mean_inf) * step + noise_scale * z
            block[:, i] = w[: stop - start]
        return start, stop, block

    for start, stop, block in parallel.map_ordered(one_chunk, rng.chunks(n_paths)):
        paths[start:stop, 1:] = block
    return times, paths


def analytic_curve_csv_text(case: QuadraticCase1D, times, mode: str = "additive") -> str:
    """CSV of t, solution mean, and both variance forms."""
    rows = ["t,mean,var_ode,var_alt"]
    for t in np.asarray(times, dtype=float):
        rows.append(",".join(format(x, ".17g") for x in (
            t, analytic_mean(case, t),
            analytic_variance(case, t, mode),
            analytic_variance_alt(case, t, mode))))
    return "\n".join(rows) + "\n"
