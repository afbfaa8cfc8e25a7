"""Loss landscapes, gradients, and the gradient-noise model.

A problem is a weighted collection of clients.  Client k owns the loss

    F_k(w) = 0.5 * (w - center_k)' curvature_k (w - center_k)
             + amplitude_k * sum_j sin(w_j)

with symmetric PSD curvature (amplitude 0 gives a plain quadratic), plus a
PSD covariance for the Gaussian noise added to its stochastic gradients.
The global objective is the weight-averaged sum of client losses.

Smoothness constants are measured over a user-supplied bounded box: global
gradient bounds cannot exist for quadratics on all of R^d, so the box is
the domain on which the bounded-gradient assumption is checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .linalg import check_symmetric, spectral_norm, sqrt_psd_with_clamp

PSD_TOL = 1e-10
WEIGHT_TOL = 1e-12


def _frozen_vector(values, name: str) -> np.ndarray:
    v = np.array(values, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"{name} must be a one-dimensional vector")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} has non-finite entries")
    v.flags.writeable = False
    return v


def _frozen_psd(matrix, dim: int, name: str) -> np.ndarray:
    m = check_symmetric(matrix, tol=PSD_TOL, name=name)
    if m.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}, got {m.shape}")
    if m.size:
        min_eig = float(np.linalg.eigvalsh(m)[0])
        if min_eig < -PSD_TOL:
            raise ValueError(f"{name} is not PSD (min eigenvalue {min_eig:.3e})")
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class ClientLoss:
    """0.5 (w - center)' curvature (w - center) + sine_amplitude * sum(sin(w))."""

    curvature: np.ndarray
    center: np.ndarray
    sine_amplitude: float = 0.0

    def __post_init__(self) -> None:
        center = _frozen_vector(self.center, "center")
        curvature = _frozen_psd(self.curvature, center.size, "curvature")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "curvature", curvature)
        amp = float(self.sine_amplitude)
        if not math.isfinite(amp) or amp < 0.0:
            raise ValueError("sine_amplitude must be finite and >= 0")
        object.__setattr__(self, "sine_amplitude", amp)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def is_quadratic(self) -> bool:
        return self.sine_amplitude == 0.0

    def value(self, w) -> float:
        w = np.asarray(w, dtype=float)
        delta = w - self.center
        out = 0.5 * float(delta @ self.curvature @ delta)
        if self.sine_amplitude:
            out += self.sine_amplitude * float(np.sin(w).sum())
        return out

    def gradient(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        grad = self.curvature @ (w - self.center)
        if self.sine_amplitude:
            grad = grad + self.sine_amplitude * np.cos(w)
        return grad

    def hessian(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        h = np.array(self.curvature)
        if self.sine_amplitude:
            h[np.diag_indices_from(h)] -= self.sine_amplitude * np.sin(w)
        return h


@dataclass(frozen=True)
class Client:
    """One participant: aggregation weight, loss landscape, gradient-noise covariance."""

    weight: float
    loss: ClientLoss
    noise_cov: np.ndarray

    def __post_init__(self) -> None:
        weight = float(self.weight)
        if not (0.0 <= weight <= 1.0):
            raise ValueError(f"client weight must lie in [0, 1], got {weight}")
        object.__setattr__(self, "weight", weight)
        cov = _frozen_psd(self.noise_cov, self.loss.dim, "noise_cov")
        object.__setattr__(self, "noise_cov", cov)


@dataclass(frozen=True)
class Problem:
    clients: tuple[Client, ...]

    def __post_init__(self) -> None:
        clients = tuple(self.clients)
        if not clients:
            raise ValueError("a problem needs at least one client")
        dim = clients[0].loss.dim
        if any(c.loss.dim != dim for c in clients):
            raise ValueError("all clients must share the same dimension")
        total = math.fsum(c.weight for c in clients)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"client weights must sum to 1, got {total!r}")
        object.__setattr__(self, "clients", clients)

    @property
    def dim(self) -> int:
        return self.clients[0].loss.dim

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    # Stacked parameter arrays for vectorized rollouts.
    @cached_property
    def weights(self) -> np.ndarray:
        return _frozen_vector([c.weight for c in self.clients], "weights")

    @cached_property
    def curvatures(self) -> np.ndarray:
        m = np.stack([c.loss.curvature for c in self.clients])
        m.flags.writeable = False
        return m

    @cached_property
    def centers(self) -> np.ndarray:
        m = np.stack([c.loss.center for c in self.clients])
        m.flags.writeable = False
        return m

    @cached_property
    def amplitudes(self) -> np.ndarray:
        return _frozen_vector([c.loss.sine_amplitude for c in self.clients], "amplitudes")

    @cached_property
    def noise_sqrts(self) -> np.ndarray:
        roots = np.stack([sqrt_psd_with_clamp(c.noise_cov, "noise_cov")[0] for c in self.clients])
        roots.flags.writeable = False
        return roots

    @cached_property
    def noise_traces(self) -> np.ndarray:
        return _frozen_vector([np.trace(c.noise_cov) for c in self.clients], "noise_traces")

    def client_value(self, k: int, w) -> float:
        return self.clients[k].loss.value(w)

    def client_gradient(self, k: int, w) -> np.ndarray:
        """Exact gradient of client k's loss at w."""
        grad = self.clients[k].loss.gradient(w)
        if not np.isfinite(grad).all():
            raise ValueError(f"client {k} gradient is non-finite at w={w!r}")
        return grad

    def loss_and_gradient(self, w) -> tuple[float, np.ndarray]:
        """Weight-averaged global loss and gradient at w."""
        w = np.asarray(w, dtype=float)
        value = 0.0
        grad = np.zeros(self.dim)
        for client in self.clients:
            value += client.weight * client.loss.value(w)
            grad += client.weight * client.loss.gradient(w)
        return value, grad

    def loss(self, w) -> float:
        return self.loss_and_gradient(w)[0]

    def gradient(self, w) -> np.ndarray:
        return self.loss_and_gradient(w)[1]

    def batch_gradients(self, states: np.ndarray) -> np.ndarray:
        """Per-client gradients for a batch of per-client states (n, Q, d)."""
        grads = np.einsum("kij,nkj->nki", self.curvatures, states - self.centers)
        if self.amplitudes.any():
            grads = grads + self.amplitudes[None, :, None] * np.cos(states)
        return grads


@dataclass(frozen=True)
class Box:
    """Bounded axis-aligned region used as the domain for smoothness constants."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = _frozen_vector(self.lower, "lower")
        upper = _frozen_vector(self.upper, "upper")
        if lower.shape != upper.shape:
            raise ValueError("box bounds must have matching shapes")
        if np.any(lower > upper):
            raise ValueError("box lower bounds must not exceed upper bounds")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, dim: int, half_width: float) -> "Box":
        h = float(half_width)
        return cls(np.full(dim, -h), np.full(dim, h))


@dataclass(frozen=True)
class SmoothnessConstants:
    """Gradient/Hessian-diagonal sup bound and smoothness modulus over a box."""

    grad_bound: float
    smoothness: float
    box: Box


def smoothness_constants(problem: Problem, box: Box) -> SmoothnessConstants:
    """Sup-norm gradient bound and smoothness modulus over the box.

    The gradient bound is exact for quadratic clients (the affine gradient is
    extremized coordinate-wise via interval arithmetic over the box) and
    conservative by at most the sine amplitude otherwise.  The smoothness
    modulus is the largest client curvature spectral norm, shifted by the
    sine amplitude, since the sine perturbs each Hessian diagonal by at most
    that amount.
    """
    if box.lower.size != problem.dim:
        raise ValueError("box dimension does not match the problem")
    grad_bound = 0.0
    smoothness = 0.0
    for client in problem.clients:
        curv = client.loss.curvature
        amp = client.loss.sine_amplitude
        lo = box.lower - client.loss.center
        hi = box.upper - client.loss.center
        # Coordinate-wise range of the affine part of the gradient over the box.
        term_lo = np.minimum(curv * lo[None, :], curv * hi[None, :]).sum(axis=1)
        term_hi = np.maximum(curv * lo[None, :], curv * hi[None, :]).sum(axis=1)
        grad_sup = np.maximum(np.abs(term_lo - amp), np.abs(term_hi + amp)).max()
        hess_diag_sup = (np.abs(np.diag(curv)) + amp).max() if curv.size else 0.0
        grad_bound = max(grad_bound, float(grad_sup), float(hess_diag_sup))
        smoothness = max(smoothness, spectral_norm(curv) + amp)
    return SmoothnessConstants(grad_bound=grad_bound, smoothness=smoothness, box=box)


def empirical_gradient_covariance(sample_gradients: Sequence, batch_size: int) -> np.ndarray:
    """Minibatch-gradient covariance implied by sampling without replacement.

    For n_samples per-sample gradients and batch size S the covariance is
    (1/S - 1/n) * (1/(n-1)) * sum of centered outer products; S == n gives
    the zero matrix (full-batch gradients are exact).
    """
    grads = np.asarray(sample_gradients, dtype=float)
    if grads.ndim == 1:
        grads = grads[:, None]
    n = grads.shape[0]
    if n < 2:
        raise ValueError("need at least two sample gradients")
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size must lie in [1, {n}], got {batch_size}")
    centered = grads - grads.mean(axis=0)
    factor = (1.0 / batch_size - 1.0 / n) / (n - 1)
    cov = factor * (centered.T @ centered)
    return 0.5 * (cov + cov.T)


def wqc_check(problem: Problem, w_star, slope: float, probes) -> tuple[bool, float]:
    """Check weak quasi-convexity of every client loss toward w_star.

    Requires <grad F_k(w), w - w_star> >= slope * (F_k(w) - F_k(w_star)) at
    every probe for every client.  Returns (holds, worst margin), where the
    margin is the left side minus the right side.
    """
    if slope <= 0.0:
        raise ValueError("slope must be positive")
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.size == 0:
        raise ValueError("need at least one probe point")
    w_star = np.asarray(w_star, dtype=float)
    worst = math.inf
    for k in range(problem.n_clients):
        loss = problem.clients[k].loss
        value_star = loss.value(w_star)
        for w in probes:
            lhs = float(loss.gradient(w) @ (w - w_star))
            rhs = slope * (loss.value(w) - value_star)
            worst = min(worst, lhs - rhs)
    return worst >= 0.0, worst


def quadratic_global_minimizer(problem: Problem) -> np.ndarray:
    """Closed-form minimizer of the global loss when every client is quadratic."""
    if any(not c.loss.is_quadratic for c in problem.clients):
        raise ValueError("closed-form minimizer requires purely quadratic clients")
    hessian = np.einsum("k,kij->ij", problem.weights, problem.curvatures)
    rhs = np.einsum("k,kij,kj->i", problem.weights, problem.curvatures, problem.centers)
    try:
        return np.linalg.solve(hessian, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError("aggregate curvature is singular; minimizer undefined") from exc


def global_minimizer(problem: Problem, max_iter: int = 100, tol: float = 1e-12) -> np.ndarray:
    """Global minimizer; Newton refinement handles sine-perturbed clients."""
    quad = Problem(
        tuple(
            Client(c.weight, ClientLoss(c.loss.curvature, c.loss.center), c.noise_cov)
            for c in problem.clients
        )
    )
    w = quadratic_global_minimizer(quad)
    if all(c.loss.is_quadratic for c in problem.clients):
        return w
    for _ in range(max_iter):
        grad = problem.gradient(w)
        if np.linalg.norm(grad) <= tol * (1.0 + np.linalg.norm(w)):
            return w
        hessian = sum(
            c.weight * c.loss.hessian(w) for c in problem.clients
        )
        w = w - np.linalg.solve(hessian, grad)
    raise ValueError("Newton refinement did not converge; landscape may be non-convex")


def quadratic_problem(
    weights, curvatures, centers, noise_covs, sine_amplitudes=None
) -> Problem:
    """Convenience constructor from stacked per-client arrays."""
    weights = np.asarray(weights, dtype=float)
    n = weights.size
    if sine_amplitudes is None:
        sine_amplitudes = np.zeros(n)
    clients = tuple(
        Client(
            weights[k],
            ClientLoss(np.atleast_2d(curvatures[k]), np.atleast_1d(centers[k]),
                       float(sine_amplitudes[k])),
            np.atleast_2d(noise_covs[k]),
        )
        for k in range(n)
    )
    return Problem(clients)
