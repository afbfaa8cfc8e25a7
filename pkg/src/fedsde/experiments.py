"""Experiment drivers shared by the command-line runner and the test suite.

Each driver consumes a validated configuration dictionary and returns a
mapping of artifact file names to their text content; writing (atomically)
and manifest bookkeeping belong to the CLI layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import replace
from typing import Callable

import numpy as np

from . import rng
from .bounds import (BoundInputs, compare_bound, constant_rate_bound,
                     grad_sq_bound, loss_gap_bound, max_unscaled_cov_norm)
from .discrete import FedAvgConfig, Trajectory, run_fedavg
from .model import (Box, Client, ClientLoss, Problem, global_minimizer,
                    smoothness_constants)
from .quadratic import QuadraticCase1D, analytic_curve_csv_text
from .schedules import Schedule
from .sde import IntegratorConfig, estimate_moments, integrate
from .stats import normality_report, sample_time_points

EXPERIMENT_KINDS = (
    "simulate-discrete", "simulate-sde", "analytic-quadratic",
    "check-normality", "check-bounds",
)


# ---------------------------------------------------------------------------
# Config (de)serialization


def problem_to_dict(problem: Problem) -> dict:
    return {
        "clients": [
            {
                "weight": c.weight,
                "curvature": c.loss.curvature.tolist(),
                "center": c.loss.center.tolist(),
                "sine_amplitude": c.loss.sine_amplitude,
                "noise_cov": c.noise_cov.tolist(),
            }
            for c in problem.clients
        ]
    }


def problem_from_dict(data: dict) -> Problem:
    clients = tuple(
        Client(
            weight=float(c["weight"]),
            loss=ClientLoss(
                curvature=np.asarray(c["curvature"], dtype=float),
                center=np.asarray(c["center"], dtype=float),
                sine_amplitude=float(c.get("sine_amplitude", 0.0)),
            ),
            noise_cov=np.asarray(c["noise_cov"], dtype=float),
        )
        for c in data["clients"]
    )
    return Problem(clients)


def fedavg_from_dict(data: dict, seed: int) -> FedAvgConfig:
    clip = data.get("clip_norm")
    return FedAvgConfig(
        local_steps=int(data["local_steps"]),
        time_step=float(data["time_step"]),
        client_schedule=Schedule.from_dict(data["client_schedule"]),
        server_schedule=Schedule.from_dict(data["server_schedule"]),
        rounds=int(data["rounds"]),
        seed=int(seed),
        clip_norm=None if clip is None else float(clip),
    )


def case_from_dict(data: dict) -> QuadraticCase1D:
    return QuadraticCase1D(
        weights=np.asarray(data["weights"], dtype=float),
        curvatures=np.asarray(data["curvatures"], dtype=float),
        centers=np.asarray(data["centers"], dtype=float),
        noise_vars=np.asarray(data["noise_vars"], dtype=float),
        eta=float(data["eta"]),
        local_steps=int(data["local_steps"]),
        w_init=float(data["w_init"]),
    )


def validate_config(raw: dict) -> list[str]:
    """All violations in a config dict; an empty list means runnable."""
    issues: list[str] = []
    kind = raw.get("kind")
    if kind not in EXPERIMENT_KINDS:
        issues.append(f"unknown kind {kind!r}; expected one of {EXPERIMENT_KINDS}")
        return issues
    if "seed" not in raw:
        issues.append("seed is mandatory (runs never fall back to wall-clock seeding)")
    elif not isinstance(raw["seed"], int):
        issues.append("seed must be an integer")

    def check(label: str, fn: Callable[[], object]) -> None:
        try:
            fn()
        except (KeyError, TypeError, ValueError) as exc:
            reason = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            issues.append(f"{label}: {reason}")

    seed = raw.get("seed", 0) if isinstance(raw.get("seed", 0), int) else 0
    if kind == "analytic-quadratic":
        check("case", lambda: case_from_dict(raw["case"]))
        check("times", lambda: _require_times(raw["times"]))
    elif kind == "check-normality":
        check("problem template", lambda: problem_from_dict(raw["problem"]))
        check("parameters", lambda: _require_normality_params(raw))
        if "q_values" in raw:
            check("q_values", lambda: _require_q_values(raw))
    else:
        check("problem", lambda: problem_from_dict(raw["problem"]))
        check("w_init", lambda: _require_vector(raw["w_init"]))
        check("fedavg", lambda: fedavg_from_dict(raw["fedavg"], seed))
        if kind == "simulate-sde":
            check("integrator", lambda: IntegratorConfig(
                time_step=float(raw["integrator"]["time_step"]),
                horizon=float(raw["integrator"]["horizon"]),
                inner_replicates=int(raw["integrator"]["inner_replicates"]),
                n_paths=int(raw["integrator"]["n_paths"]),
                seed=seed))
        if kind == "check-bounds":
            check("bound selection", lambda: _require_bound_params(raw))
    return issues


def _require_times(times) -> None:
    arr = np.asarray(times, dtype=float)
    if arr.ndim != 1 or arr.size == 0 or not np.isfinite(arr).all() or np.any(arr < 0):
        raise ValueError("times must be a non-empty vector of finite t >= 0")


def _require_vector(values) -> None:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0 or not np.isfinite(arr).all():
        raise ValueError("must be a non-empty finite vector")


def _require_normality_params(raw: dict) -> None:
    if int(raw["replicates"]) < 100:
        raise ValueError("replicates must be >= 100")
    if int(raw["local_steps"]) < 1:
        raise ValueError("local_steps must be >= 1")
    if float(raw["eta"]) <= 0:
        raise ValueError("eta must be positive")
    _require_vector(raw["w_init"])


def _require_q_values(raw: dict) -> None:
    values = [int(q) for q in raw["q_values"]]
    if not values or any(q < 2 for q in values):
        raise ValueError("q_values entries must be >= 2")
    if len(problem_from_dict(raw["problem"]).clients) != 1:
        raise ValueError("a client-count ladder requires a single-client template")


BOUND_NAMES = ("grad-norm", "loss-gap", "constant-client-rate")


def _require_bound_params(raw: dict) -> None:
    if raw.get("bound") not in BOUND_NAMES:
        raise ValueError(f"bound must be one of {BOUND_NAMES}")
    _require_times(raw["checkpoints"])
    if int(raw.get("n_runs", 0)) < 2:
        raise ValueError("n_runs must be >= 2")
    if int(raw.get("n_time_samples", 0)) < 2:
        raise ValueError("n_time_samples must be >= 2")
    if raw["bound"] == "constant-client-rate":
        if raw["fedavg"]["client_schedule"].get("kind") != "constant":
            raise ValueError("constant-client-rate requires a constant client schedule")


# ---------------------------------------------------------------------------
# Shared measurement machinery


def run_seed(base_seed: int, index: int) -> int:
    """Derived per-run seed for independent trajectory replicas."""
    seq = np.random.SeedSequence(int(base_seed), spawn_key=(rng.TAG_RUN, int(index)))
    return int(seq.generate_state(1, np.uint64)[0])


def trajectory_ensemble(problem: Problem, config: FedAvgConfig, w_init,
                        n_runs: int) -> list[Trajectory]:
    """Independent runs seeded from config.seed; run r uses run_seed(seed, r)."""
    return [
        run_fedavg(problem, replace(config, seed=run_seed(config.seed, r)), w_init)
        for r in range(n_runs)
    ]


def sampled_statistic(trajectories: list[Trajectory], time_step: float,
                      density_schedule: Schedule, horizon: float,
                      n_samples: int, seed: int,
                      statistic: Callable[[np.ndarray], float]
                      ) -> tuple[float, float]:
    """Monte Carlo mean of a state statistic at schedule-weighted random times.

    Random times cycle across the independent runs; the standard error is
    computed from per-run means, so within-run correlation cannot shrink it.
    """
    times = sample_time_points(density_schedule, horizon, n_samples, seed)
    n_runs = len(trajectories)
    per_run_values: list[list[float]] = [[] for _ in range(n_runs)]
    for i, t in enumerate(times):
        run = trajectories[i % n_runs]
        per_run_values[i % n_runs].append(statistic(run.state_at(t, time_step)))
    run_means = np.array([np.mean(v) for v in per_run_values if v])
    mean = float(np.concatenate([np.asarray(v) for v in per_run_values if v]).mean())
    se = float(run_means.std(ddof=1) / math.sqrt(run_means.size))
    return mean, se


def measure_cov_bound(problem: Problem, config: FedAvgConfig,
                      trajectory: Trajectory, n_states: int,
                      n_replicates: int) -> float:
    """Max over sampled trajectory states of |cov| / eta^2 (spectral norm)."""
    indices = np.unique(np.linspace(0, trajectory.rounds, n_states).astype(int))
    pairs = []
    for idx in indices:
        t = float(idx * config.time_step)
        est = estimate_moments(trajectory.weights[idx], problem, config, t,
                               n_replicates, extra_key=(int(idx),))
        pairs.append((est.cov, float(config.client_schedule(t))))
    return max_unscaled_cov_norm(pairs)


def bound_inputs_for(problem: Problem, config: FedAvgConfig, w_init, box: Box,
                     cov_bound: float, wqc_slope: float | None = None,
                     server_rate: float = 1.0) -> BoundInputs:
    """Assemble measured constants for the rate bounds on this instance."""
    constants = smoothness_constants(problem, box)
    w_init = np.asarray(w_init, dtype=float)
    w_opt = global_minimizer(problem)
    return BoundInputs(
        grad_bound=constants.grad_bound,
        smoothness=constants.smoothness,
        weights=problem.weights,
        noise_traces=problem.noise_traces,
        local_steps=config.local_steps,
        time_step=config.time_step,
        cov_bound=cov_bound,
        loss_init=problem.loss(w_init),
        loss_opt=problem.loss(w_opt),
        dist_init=float(np.linalg.norm(w_init - w_opt)),
        dim=problem.dim,
        server_rate=server_rate,
        wqc_slope=wqc_slope,
    )


# ---------------------------------------------------------------------------
# Experiment kinds


def run_simulate_discrete(raw: dict) -> dict[str, str]:
    problem = problem_from_dict(raw["problem"])
    config = fedavg_from_dict(raw["fedavg"], raw["seed"])
    trajectory = run_fedavg(problem, config, np.asarray(raw["w_init"], dtype=float))
    return {"trajectory.csv": trajectory.to_csv_text()}


def run_simulate_sde(raw: dict) -> dict[str, str]:
    problem = problem_from_dict(raw["problem"])
    fedavg = fedavg_from_dict(raw["fedavg"], raw["seed"])
    params = raw["integrator"]
    integrator = IntegratorConfig(
        time_step=float(params["time_step"]), horizon=float(params["horizon"]),
        inner_replicates=int(params["inner_replicates"]),
        n_paths=int(params["n_paths"]), seed=int(raw["seed"]))
    ensemble = integrate(problem, integrator, fedavg, np.asarray(raw["w_init"], dtype=float))
    checkpoints = raw.get("checkpoints") or [float(ensemble.times[-1])]
    return {
        "paths.csv": ensemble.to_csv_text(),
        "summary.json": ensemble.summary_json_text(checkpoints) + "\n",
    }


def run_analytic_quadratic(raw: dict) -> dict[str, str]:
    case = case_from_dict(raw["case"])
    mode = raw.get("mode", "additive")
    return {"analytic_curve.csv": analytic_curve_csv_text(case, raw["times"], mode)}


def _jittered_problem(template: Problem, q: int, heterogeneity: dict | None,
                      seed: int) -> Problem:
    """Q clients cloned from a one-client template, optionally jittered."""
    base = template.clients[0]
    gen = rng.stream(seed, rng.TAG_RUN, q, 1 if heterogeneity else 0)
    clients = []
    for _ in range(q):
        curv = np.array(base.loss.curvature)
        center = np.array(base.loss.center)
        cov = np.array(base.noise_cov)
        if heterogeneity:
            curv = curv * (1.0 + heterogeneity.get("curvature_jitter", 0.0)
                           * gen.uniform(-1.0, 1.0))
            center = center + heterogeneity.get("center_jitter", 0.0) \
                * gen.uniform(-1.0, 1.0, center.shape)
            cov = cov * (1.0 + heterogeneity.get("noise_jitter", 0.0)
                         * gen.uniform(-1.0, 1.0))
        clients.append(Client(1.0 / q, ClientLoss(curv, center, base.loss.sine_amplitude), cov))
    return Problem(tuple(clients))


def run_check_normality(raw: dict) -> dict[str, str]:
    template = problem_from_dict(raw["problem"])
    q_values = [int(q) for q in raw.get("q_values", [template.n_clients])]
    heterogeneity = raw.get("heterogeneity")
    label = "heterogeneous" if heterogeneity else "iid"
    artifacts: dict[str, str] = {}
    summary = []
    for q in q_values:
        problem = (_jittered_problem(template, q, heterogeneity, raw["seed"])
                   if template.n_clients == 1 else template)
        report = normality_report(
            problem, eta=float(raw["eta"]), local_steps=int(raw["local_steps"]),
            w0=np.asarray(raw["w_init"], dtype=float),
            n_replicates=int(raw["replicates"]), seed=int(raw["seed"]) + q)
        artifacts[f"normality_q{q}_{label}.json"] = json.dumps(
            report.to_json_dict(), indent=2, sort_keys=True) + "\n"
        summary.append({"q": q, "lyapunov_ratio": [float(x) for x in report.lyapunov],
                        "ks_distance": [float(x) for x in report.ks_distance]})
    if len(summary) >= 2:
        logq = np.log([row["q"] for row in summary])
        logr = np.log([row["lyapunov_ratio"][0] for row in summary])
        slope = float(np.polyfit(logq, logr, 1)[0])
    else:
        slope = float("nan")
    artifacts["summary.json"] = json.dumps(
        {"setting": label, "rungs": summary, "lyapunov_slope": slope},
        indent=2, sort_keys=True) + "\n"
    return artifacts


def run_check_bounds(raw: dict) -> dict[str, str]:
    problem = problem_from_dict(raw["problem"])
    config = fedavg_from_dict(raw["fedavg"], raw["seed"])
    w_init = np.asarray(raw["w_init"], dtype=float)
    checkpoints = [float(t) for t in raw["checkpoints"]]
    box_raw = raw.get("constants_box")
    box = (Box(np.asarray(box_raw["lower"], float), np.asarray(box_raw["upper"], float))
           if box_raw else Box.cube(problem.dim, 4.0))
    runs = trajectory_ensemble(problem, config, w_init, int(raw["n_runs"]))
    cov_bound = measure_cov_bound(problem, config, runs[0],
                                  int(raw.get("cov_bound_states", 8)),
                                  int(raw.get("cov_bound_replicates", 200)))
    bound = raw["bound"]
    tau = float(raw["tau"]) if "tau" in raw else None
    inputs = bound_inputs_for(problem, config, w_init, box, cov_bound,
                              wqc_slope=tau,
                              server_rate=float(raw.get("server_rate", 1.0)))

    if bound == "loss-gap":
        loss_opt = inputs.loss_opt
        statistic = lambda w: problem.loss(w) - loss_opt
        density = config.client_schedule
        rhs = lambda t: loss_gap_bound(inputs, config.client_schedule, t)
    elif bound == "grad-norm":
        statistic = lambda w: float(problem.gradient(w) @ problem.gradient(w))
        density = config.client_schedule
        rhs = lambda t: grad_sq_bound(inputs, config.client_schedule, t)
    else:  # constant-client-rate: density follows the decaying server schedule
        statistic = lambda w: float(problem.gradient(w) @ problem.gradient(w))
        density = config.server_schedule
        eta_c = float(config.client_schedule(0.0))
        rhs = lambda t: constant_rate_bound(inputs, eta_c, t).value

    measured = []
    for i, t in enumerate(checkpoints):
        mean, se = sampled_statistic(
            runs, config.time_step, density, t, int(raw["n_time_samples"]),
            int(raw["seed"]) + 1000 + i, statistic)
        measured.append((t, mean, se))
    report = compare_bound(measured, rhs)
    return {
        "bound_report.json": report.to_json_text() + "\n",
        "bound_comparison.csv": report.to_csv_text(),
    }


RUNNERS = {
    "simulate-discrete": run_simulate_discrete,
    "simulate-sde": run_simulate_sde,
    "analytic-quadratic": run_analytic_quadratic,
    "check-normality": run_check_normality,
    "check-bounds": run_check_bounds,
}


def run_experiment(raw: dict) -> dict[str, str]:
    """Dispatch a validated config to its runner; returns name -> content."""
    return RUNNERS[raw["kind"]](raw)
