"""Drift/diffusion estimation for the server-weight diffusion, plus its
Euler-Maruyama integration.

The diffusion's coefficients at a state are the mean and covariance of the
aggregated update draw at that state, estimated by Monte Carlo from fresh
local rollouts.  One integration step of size ``time_step`` advances

    w <- w + eta0(t) * time_step * (drift + sqrt(cov) @ z),   z ~ N(0, I),

which reproduces one discrete aggregation round's update in both mean and
covariance, so the discrete process is exactly the step-size-``time_step``
Euler-Maruyama discretization of the integrated equation.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import parallel, rng
from .discrete import (FedAvgConfig, NonFiniteError, _rollout, _update_terms,
                       sample_server_updates)
from .linalg import matrix_sqrt_psd, spectral_norm, sqrt_psd_with_clamp
from .model import Problem

__all__ = [
    "MomentEstimate", "IntegratorConfig", "PathEnsemble",
    "estimate_moments", "integrate", "matrix_sqrt_psd", "spectral_norm",
]

# Path-ensemble block width: full blocks are simulated even for partial
# requests, so it stays small to bound the padding work.
PATH_BLOCK = 64


@dataclass(frozen=True)
class MomentEstimate:
    """Sample mean/covariance of update draws, with a PSD covariance root."""

    drift: np.ndarray      # (d,)
    cov: np.ndarray        # (d, d), unbiased estimator
    cov_sqrt: np.ndarray   # (d, d), symmetric PSD root
    n_replicates: int
    drift_se: np.ndarray   # (d,) standard error of the drift estimate
    clamped_mass: float    # total negative eigenvalue mass clamped to zero

    def __post_init__(self) -> None:
        gap = float(np.abs(self.cov - self.cov.T).max()) if self.cov.size else 0.0
        if gap > 1e-10:
            raise ValueError(f"covariance estimate is not symmetric (gap {gap:.3e})")
        recon = float(np.abs(self.cov_sqrt @ self.cov_sqrt.T - self.cov).max())
        if recon > 1e-8:
            raise ValueError(f"covariance root reconstruction error {recon:.3e}")


@dataclass(frozen=True)
class IntegratorConfig:
    """Step size, horizon, replicate counts, and seed for path ensembles."""

    time_step: float
    horizon: float
    inner_replicates: int
    n_paths: int
    seed: int

    def __post_init__(self) -> None:
        if not (self.time_step > 0.0 and math.isfinite(self.time_step)):
            raise ValueError("time_step must be positive and finite")
        if self.horizon < self.time_step:
            raise ValueError("horizon must be at least one step")
        if self.inner_replicates < 2:
            raise ValueError("inner_replicates must be >= 2 (sample covariance)")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")


def _moments_from_draws(draws: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean (d,) and unbiased covariance (d, d) of update draws (n, d)."""
    n = draws.shape[0]
    mean = draws.mean(axis=0)
    centered = draws - mean
    cov = centered.T @ centered / (n - 1)
    return mean, 0.5 * (cov + cov.T)


def estimate_moments(w0, problem: Problem, config: FedAvgConfig, t: float,
                     n_replicates: int, extra_key: tuple[int, ...] = ()
                     ) -> MomentEstimate:
    """Monte Carlo drift and covariance of the update draw at state w0."""
    if n_replicates < 2:
        raise ValueError("n_replicates must be >= 2 for a sample covariance")
    draws = sample_server_updates(w0, problem, config, t, n_replicates,
                                  extra_key=extra_key)
    mean, cov = _moments_from_draws(draws.values)
    root, clamped = sqrt_psd_with_clamp(cov, "covariance estimate")
    se = np.sqrt(np.diag(cov) / n_replicates)
    return MomentEstimate(drift=mean, cov=cov, cov_sqrt=root,
                          n_replicates=n_replicates, drift_se=se,
                          clamped_mass=clamped)


@dataclass(frozen=True)
class PathEnsemble:
    """Euler-Maruyama paths on a shared time grid."""

    times: np.ndarray  # (n_steps + 1,)
    paths: np.ndarray  # (n_paths, n_steps + 1, d)

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 + 1e-9 * abs(t):
            raise ValueError(f"t={t} is not on the integration grid")
        return i

    def mean_at(self, t: float) -> np.ndarray:
        return self.paths[:, self.index_of(t), :].mean(axis=0)

    def variance_at(self, t: float) -> np.ndarray:
        return self.paths[:, self.index_of(t), :].var(axis=0, ddof=1)

    def mean_se_at(self, t: float) -> np.ndarray:
        block = self.paths[:, self.index_of(t), :]
        return block.std(axis=0, ddof=1) / math.sqrt(block.shape[0])

    def to_csv_text(self) -> str:
        out = io.StringIO()
        d = self.paths.shape[2]
        out.write("path_id,t," + ",".join(f"w{j}" for j in range(d)) + "\n")
        for p in range(self.paths.shape[0]):
            for i, t in enumerate(self.times):
                coords = ",".join(format(x, ".17g") for x in self.paths[p, i])
                out.write(f"{p},{format(t, '.17g')},{coords}\n")
        return out.getvalue()

    def summary_json_text(self, checkpoints) -> str:
        rows = []
        for t in checkpoints:
            rows.append({
                "t": float(t),
                "mean": [float(x) for x in self.mean_at(t)],
                "variance": [float(x) for x in self.variance_at(t)],
                "se": [float(x) for x in self.mean_se_at(t)],
            })
        return json.dumps({"checkpoints": rows}, indent=2, sort_keys=True)


def integrate(problem: Problem, integrator: IntegratorConfig,
              fedavg: FedAvgConfig, w_init) -> PathEnsemble:
    """Integrate the diffusion with per-step re-estimated moments.

    Moments are re-estimated at every step from ``inner_replicates`` fresh
    rollouts at each path's current state; freezing them would silently
    change the state-dependent process.  Paths are deterministic functions
    of (seed, path index) and independent of how many paths run.
    """
    w_init = np.asarray(w_init, dtype=float)
    if w_init.shape != (problem.dim,):
        raise ValueError("w_init dimension does not match the problem")
    d = problem.dim
    n_steps = int(round(integrator.horizon / integrator.time_step))
    times = np.arange(n_steps + 1) * integrator.time_step
    h = integrator.time_step
    r_inner = integrator.inner_replicates
    paths = np.empty((integrator.n_paths, n_steps + 1, d))
    paths[:, 0, :] = w_init

    def advance_chunk(args):
        layout, step = args
        index, start, stop = layout
        n_chunk = stop - start
        # Pad to the full block width so a path's draws are a function of
        # (seed, path index, step) alone, not of the ensemble size.
        states = paths[start:stop, step, :]
        padded = np.concatenate(
            [states, np.repeat(states[:1], PATH_BLOCK - n_chunk, axis=0)])
        t = times[step]
        eta = float(fedavg.client_schedule(t))
        eta0 = float(fedavg.server_schedule(t))
        inner_gen = rng.stream(integrator.seed, rng.TAG_INNER_MOMENTS, step, index)
        tiled = np.repeat(padded, r_inner, axis=0)
        final, _, _, _ = _rollout(tiled, problem, eta, fedavg.local_steps,
                                  inner_gen, clip_norm=fedavg.clip_norm)
        draws = _update_terms(problem, tiled, final).sum(axis=1)
        draws = draws.reshape(PATH_BLOCK, r_inner, d)[:n_chunk]
        mean = draws.mean(axis=1)
        centered = draws - mean[:, None, :]
        cov = np.einsum("nri,nrj->nij", centered, centered) / (r_inner - 1)
        vals, vecs = np.linalg.eigh(0.5 * (cov + np.swapaxes(cov, 1, 2)))
        vals = np.clip(vals, 0.0, None)
        roots = np.einsum("nik,nk,njk->nij", vecs, np.sqrt(vals), vecs)
        noise_gen = rng.stream(integrator.seed, rng.TAG_PATH_NOISE, step, index)
        z = noise_gen.standard_normal((PATH_BLOCK, d))[:n_chunk]
        update = h * (mean + np.einsum("nij,nj->ni", roots, z))
        return start, stop, states + eta0 * update

    layouts = rng.chunks(integrator.n_paths, width=PATH_BLOCK)
    for step in range(n_steps):
        results = parallel.map_ordered(advance_chunk, [(lay, step) for lay in layouts])
        for start, stop, new_states in results:
            paths[start:stop, step + 1, :] = new_states
        if not np.isfinite(paths[:, step + 1, :]).all():
            bad = np.where(~np.isfinite(paths[:, step + 1, :]).all(axis=1))[0]
            raise NonFiniteError(
                f"path {bad[0]} became non-finite at t={times[step + 1]:g}",
                time=float(times[step + 1]))
    return PathEnsemble(times=times, paths=paths)
