"""Discrete federated averaging under the Gaussian gradient-noise model.

Each aggregation round broadcasts the server weights to every client, runs
``local_steps`` noisy SGD steps per client with the shared client schedule
frozen at the round's start time, and moves the server by the lift constant
times the server rate times the weighted sum of client displacements:

    w_server <- w_server + time_step * eta0(t) * sum_k p_k (w_k_final - w_server)

Round T occurs at continuous time t = T * time_step.  With
time_step * eta0 == 1 the update reduces to plain weight averaging.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from . import parallel, rng
from .model import Problem
from .schedules import Schedule


class NonFiniteError(RuntimeError):
    """A simulation state became non-finite; carries the failing round/time."""

    def __init__(self, message: str, *, round_index: int | None = None,
                 time: float | None = None):
        super().__init__(message)
        self.round_index = round_index
        self.time = time


@dataclass(frozen=True)
class FedAvgConfig:
    """Round structure, schedules, and seeding for the discrete process."""

    local_steps: int
    time_step: float
    client_schedule: Schedule
    server_schedule: Schedule
    rounds: int
    seed: int
    clip_norm: float | None = None

    def __post_init__(self) -> None:
        if self.local_steps < 1:
            raise ValueError("local_steps must be >= 1")
        if not (self.time_step > 0.0 and math.isfinite(self.time_step)):
            raise ValueError("time_step must be positive and finite")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0.0:
            raise ValueError("clip_norm must be positive when set")


@dataclass(frozen=True)
class ServerUpdateDraw:
    """One realization of the aggregated update; value == client_terms.sum(0)."""

    value: np.ndarray         # (d,)
    client_terms: np.ndarray  # (n_clients, d)


@dataclass(frozen=True)
class ServerUpdateDraws:
    """A batch of update draws at a fixed server state."""

    values: np.ndarray        # (n, d)
    client_terms: np.ndarray  # (n, n_clients, d)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, r: int) -> ServerUpdateDraw:
        return ServerUpdateDraw(self.values[r], self.client_terms[r])


def local_sgd_step(w, gradient, noise, eta: float) -> np.ndarray:
    """One local step: w - eta * (gradient + noise)."""
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    return np.asarray(w, dtype=float) - eta * (np.asarray(gradient) + np.asarray(noise))


def _rollout(states: np.ndarray, problem: Problem, eta: float, local_steps: int,
             generator: np.random.Generator, *, collect_drift: bool = False,
             collect_sums: bool = False, clip_norm: float | None = None):
    """Vectorized local rollouts from per-rollout start states (n, d).

    Every client receives the same start state within a rollout.  Draw order
    is one (n, Q, d) standard-normal block per local step.  Returns the final
    per-client states (n, Q, d) plus optional per-step drift norms (n, Q, E)
    and optional running sums of raw gradients and noises.
    """
    n, d = states.shape
    q = problem.n_clients
    w = np.repeat(states[:, None, :], q, axis=1)
    start = w.copy()
    drift = np.empty((n, q, local_steps)) if collect_drift else None
    grad_sums = np.zeros((n, q, d)) if collect_sums else None
    noise_sums = np.zeros((n, q, d)) if collect_sums else None
    for i in range(local_steps):
        grads = problem.batch_gradients(w)
        z = generator.standard_normal((n, q, d))
        noise = np.einsum("kij,nkj->nki", problem.noise_sqrts, z)
        step = grads + noise
        if clip_norm is not None:
            norms = np.linalg.norm(step, axis=2, keepdims=True)
            np.minimum(clip_norm / np.maximum(norms, 1e-300), 1.0, out=norms)
            step *= norms
        if collect_sums:
            grad_sums += grads
            noise_sums += noise
        w -= eta * step
        if collect_drift:
            drift[:, :, i] = np.linalg.norm(w - start, axis=2)
    return w, drift, grad_sums, noise_sums


def _update_terms(problem: Problem, start: np.ndarray, final: np.ndarray) -> np.ndarray:
    # p_k-weighted client displacements; their sum is the aggregated update.
    return problem.weights[None, :, None] * (final - start[:, None, :])


def sample_server_updates(w0, problem: Problem, config: FedAvgConfig, t: float,
                          n_replicates: int, extra_key: tuple[int, ...] = ()
                          ) -> ServerUpdateDraws:
    """Independent draws of the aggregated update at a fixed server state.

    Replicate r is a deterministic function of (seed, t, extra_key, r) and is
    invariant to the total number of replicates requested.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    w0 = np.asarray(w0, dtype=float)
    eta = float(config.client_schedule(t))

    def one_chunk(layout):
        index, start, stop = layout
        gen = rng.stream(config.seed, rng.TAG_UPDATE_SAMPLE, *rng.float_key(t),
                         *extra_key, index)
        # Full-width simulation keeps replicate values independent of the
        # requested count; the surplus rows are discarded.
        states = np.repeat(w0[None, :], rng.CHUNK, axis=0)
        final, _, _, _ = _rollout(states, problem, eta, config.local_steps, gen,
                                  clip_norm=config.clip_norm)
        return _update_terms(problem, states, final)[: stop - start]

    terms = np.concatenate(parallel.map_ordered(one_chunk, rng.chunks(n_replicates)))
    return ServerUpdateDraws(values=terms.sum(axis=1), client_terms=terms)


def sample_client_drift(w0, problem: Problem, config: FedAvgConfig, t: float,
                        n_replicates: int) -> np.ndarray:
    """Per-step drift norms |w0 - w_k(t, i)| for i = 1..local_steps, (n, Q, E)."""
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    w0 = np.asarray(w0, dtype=float)
    eta = float(config.client_schedule(t))

    def one_chunk(layout):
        index, start, stop = layout
        gen = rng.stream(config.seed, rng.TAG_UPDATE_SAMPLE, *rng.float_key(t), index)
        states = np.repeat(w0[None, :], rng.CHUNK, axis=0)
        _, drift, _, _ = _rollout(states, problem, eta, config.local_steps, gen,
                                  collect_drift=True, clip_norm=config.clip_norm)
        return drift[: stop - start]

    return np.concatenate(parallel.map_ordered(one_chunk, rng.chunks(n_replicates)))


def run_round(w0, problem: Problem, config: FedAvgConfig, round_index: int,
              *, collect_drift: bool = False):
    """One aggregation round from server state w0 at t = round_index * time_step.

    Returns (new server state, the update draw with per-client terms, and the
    per-client drift norms when requested).
    """
    w0 = np.asarray(w0, dtype=float)
    t = round_index * config.time_step
    eta = float(config.client_schedule(t))
    eta0 = float(config.server_schedule(t))
    gen = rng.stream(config.seed, rng.TAG_ROUND, round_index)
    states = w0[None, :]
    final, drift, _, _ = _rollout(states, problem, eta, config.local_steps, gen,
                                  collect_drift=collect_drift,
                                  clip_norm=config.clip_norm)
    terms = _update_terms(problem, states, final)[0]
    value = terms.sum(axis=0)
    w_new = w0 + config.time_step * eta0 * value
    draw = ServerUpdateDraw(value=value, client_terms=terms)
    return w_new, draw, (drift[0] if collect_drift else None)


@dataclass(frozen=True)
class Trajectory:
    """Server-side record of a full run; rounds + 1 states including the start.

    ``drifts[r]`` holds the per-client, per-local-step drift norms measured
    during the round that produced state r + 1.
    """

    times: np.ndarray     # (rounds + 1,)
    weights: np.ndarray   # (rounds + 1, d)
    losses: np.ndarray    # (rounds + 1,)
    grad_sq: np.ndarray   # (rounds + 1,)
    drifts: np.ndarray    # (rounds, n_clients, local_steps)

    @property
    def rounds(self) -> int:
        return self.times.size - 1

    def state_at(self, t: float, time_step: float) -> np.ndarray:
        """Piecewise-constant state reached by continuous time t."""
        index = min(int(np.floor(t / time_step + 1e-12)), self.rounds)
        return self.weights[index]

    def to_csv_text(self) -> str:
        _, n_clients, local_steps = self.drifts.shape
        header = ["round", "t"]
        header += [f"w{j}" for j in range(self.weights.shape[1])]
        header += ["loss", "grad_norm_sq"]
        header += [
            f"drift_client_{k}_step_{i + 1}"
            for k in range(n_clients) for i in range(local_steps)
        ]
        out = io.StringIO()
        out.write(",".join(header) + "\n")
        for r in range(self.times.size):
            row = [str(r), format(self.times[r], ".17g")]
            row += [format(x, ".17g") for x in self.weights[r]]
            row += [format(self.losses[r], ".17g"), format(self.grad_sq[r], ".17g")]
            if n_clients:
                drift_row = self.drifts[r - 1].reshape(-1) if r > 0 else np.zeros(
                    n_clients * local_steps)
                row += [format(x, ".17g") for x in drift_row]
            out.write(",".join(row) + "\n")
        return out.getvalue()


def run_fedavg(problem: Problem, config: FedAvgConfig, w_init) -> Trajectory:
    """Run the full schedule; deterministic given (problem, config, seed)."""
    w = np.asarray(w_init, dtype=float)
    if w.shape != (problem.dim,):
        raise ValueError("w_init dimension does not match the problem")
    n = config.rounds
    times = np.arange(n + 1) * config.time_step
    weights = np.empty((n + 1, problem.dim))
    losses = np.empty(n + 1)
    grad_sq = np.empty(n + 1)
    drifts = np.empty((n, problem.n_clients, config.local_steps))
    value, grad = problem.loss_and_gradient(w)
    weights[0], losses[0], grad_sq[0] = w, value, float(grad @ grad)
    for r in range(n):
        w, _, drift = run_round(w, problem, config, r, collect_drift=True)
        if not np.isfinite(w).all():
            raise NonFiniteError(
                f"server weights became non-finite during round {r}",
                round_index=r, time=times[r + 1])
        value, grad = problem.loss_and_gradient(w)
        weights[r + 1], losses[r + 1], grad_sq[r + 1] = w, value, float(grad @ grad)
        drifts[r] = drift
    return Trajectory(times=times, weights=weights, losses=losses,
                      grad_sq=grad_sq, drifts=drifts)
