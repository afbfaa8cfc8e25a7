"""Shared builders for test problems."""

from __future__ import annotations

import numpy as np

from fedsde.model import Client, ClientLoss, Problem


def random_psd(gen: np.random.Generator, dim: int, lo: float, hi: float) -> np.ndarray:
    """Random symmetric matrix with eigenvalues drawn uniformly from [lo, hi]."""
    basis, _ = np.linalg.qr(gen.standard_normal((dim, dim)))
    return basis @ np.diag(gen.uniform(lo, hi, dim)) @ basis.T


def scalar_problem(curvature=1.0, center=0.0, noise_var=0.0, amplitude=0.0) -> Problem:
    """Single scalar client with full weight."""
    loss = ClientLoss(np.array([[float(curvature)]]), np.array([float(center)]),
                      float(amplitude))
    return Problem((Client(1.0, loss, np.array([[float(noise_var)]])),))


def iid_scalar_problem(n_clients: int, curvature=1.0, center=0.0, noise_var=0.0,
                       amplitude=0.0) -> Problem:
    loss = ClientLoss(np.array([[float(curvature)]]), np.array([float(center)]),
                      float(amplitude))
    cov = np.array([[float(noise_var)]])
    return Problem(tuple(Client(1.0 / n_clients, loss, cov) for _ in range(n_clients)))


def random_quadratic_problem(gen: np.random.Generator, n_clients: int, dim: int,
                             eig_lo=0.5, eig_hi=2.0, center_scale=1.0,
                             noise_var=0.01, amplitude=0.0) -> Problem:
    clients = []
    weights = gen.uniform(0.5, 1.5, n_clients)
    weights /= weights.sum()
    weights[-1] = 1.0 - weights[:-1].sum()
    for k in range(n_clients):
        loss = ClientLoss(random_psd(gen, dim, eig_lo, eig_hi),
                          gen.uniform(-center_scale, center_scale, dim), amplitude)
        clients.append(Client(weights[k], loss, noise_var * np.eye(dim)))
    return Problem(tuple(clients))
