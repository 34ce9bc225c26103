"""Adaptive-measurement feedback steering a network to ``|0...0>``.

At every step the reduced state of spin 1 is read off the conditional
state, converted to Bloch parameters ``(r, alpha, beta)``, and the measured
axis on spin 1 is rotated to ``(theta, delta) = (alpha/2, beta)``. With
that choice the expected cost ``N - Tr(J_z rho)`` has nonpositive drift.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .graphs import RootedGraph, build_hamiltonian
from .parallel import map_paths
from .quantum import (
    DEGENERACY_TOL,
    BlochParams,
    bloch_arrays,
    bloch_params,
    embed_first,
    excitation_numbers,
    maximally_mixed,
    partial_trace_keep_first,
)
from .sme import MeasurementSetup, NoisePath, euler_update, project_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptiveAngles:
    theta: float
    delta: float


def angle_arrays(r, alpha, beta, branch: int = 1):
    """Vectorised adaptive law. Degenerate states (``r <= 1e-9``) hold (0, 0)."""
    r, alpha, beta = np.asarray(r), np.asarray(alpha), np.asarray(beta)
    flat = r <= DEGENERACY_TOL
    if branch == 1:
        theta, delta = alpha / 2.0, beta
    elif branch == 2:
        theta, delta = -alpha / 2.0, beta + np.pi
    else:
        raise ValueError("branch must be 1 or 2")
    return np.where(flat, 0.0, theta), np.where(flat, 0.0, delta)


def adaptive_angles(b: BlochParams, branch: int = 1) -> AdaptiveAngles:
    theta, delta = angle_arrays(b.r, b.alpha, b.beta, branch)
    return AdaptiveAngles(float(theta), float(delta))


def local_operator(theta, delta) -> np.ndarray:
    """``[[cos t, e^{-i d} sin t], [e^{i d} sin t, -cos t]]``, batched over inputs."""
    theta, delta = np.asarray(theta, dtype=float), np.asarray(delta, dtype=float)
    ct, st = np.cos(theta), np.sin(theta)
    ph = np.exp(1j * delta)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = ct
    out[..., 0, 1] = np.conj(ph) * st
    out[..., 1, 0] = ph * st
    out[..., 1, 1] = -ct
    return out


def build_adaptive_operator(a: AdaptiveAngles, n_spins: int) -> np.ndarray:
    return embed_first(local_operator(a.theta, a.delta), n_spins)


def cost(rho: np.ndarray) -> np.ndarray | float:
    """``N - Tr(sum_j sigma_j^z rho)`` = twice the mean excitation number."""
    rho = np.asarray(rho)
    n = rho.shape[-1].bit_length() - 1
    exc = excitation_numbers(n)
    j = 2.0 * (np.diagonal(rho, axis1=-2, axis2=-1).real @ exc)
    return float(j) if np.ndim(j) == 0 else j


def cost_drift(rho2: np.ndarray, a: AdaptiveAngles, gamma: float = 1.0) -> float:
    """Drift ``dE[J]/dt`` of the expected cost under measurement angles ``a``.

    Only spin 1's reduced state enters, since the Hamiltonian conserves J_z.
    This is the exact generator value
    ``-gamma r [(cos 2t - 1) cos alpha + sin 2t sin alpha cos(d - beta)]``.
    """
    b = bloch_params(rho2)
    return -gamma * b.r * (
        (np.cos(2 * a.theta) - 1.0) * np.cos(b.alpha)
        + np.sin(2 * a.theta) * np.sin(b.alpha) * np.cos(a.delta - b.beta)
    )


@dataclass
class InitializationConfig:
    gamma: float = 1.0
    dt: float = 1e-3
    horizon: float = 10.0
    n_paths: int = 40
    seed: int = 0
    branch: int = 1
    record_every: int = 10
    batch_size: int = 64
    workers: int | None = None


@dataclass
class TrajectoryRecord:
    path: int
    seed: int
    times: np.ndarray
    fidelity: np.ndarray
    cost: np.ndarray
    theta: np.ndarray
    delta: np.ndarray
    dY: np.ndarray  # full resolution, one per integration step
    error: str | None = None

    @property
    def final_fidelity(self) -> float:
        return float(self.fidelity[-1])

    def hitting_time(self, level: float) -> float | None:
        hit = np.flatnonzero(self.fidelity >= level)
        return float(self.times[hit[0]]) if len(hit) else None


def _init_batch(args) -> list[TrajectoryRecord]:
    paths, h, rho0, cfg = args
    n = rho0.shape[-1].bit_length() - 1
    gamma, dt = cfg.gamma, cfg.dt
    if dt * gamma > 1e-2:
        raise ValueError(f"dt*gamma = {dt * gamma} exceeds 1e-2")
    sg2 = 2.0 * np.sqrt(gamma)
    n_steps = int(round(cfg.horizon / dt))
    n_rec = n_steps // cfg.record_every + 1
    P = len(paths)
    dws = np.array([NoisePath(cfg.seed, p, dt).increments(n_steps) for p in paths])

    rho = np.broadcast_to(rho0, (P,) + rho0.shape).copy()
    times = np.arange(n_rec) * (cfg.record_every * dt)
    fid = np.empty((n_rec, P))
    cst = np.empty((n_rec, P))
    th = np.empty((n_rec, P))
    de = np.empty((n_rec, P))
    dys = np.empty((n_steps, P))
    alive = np.ones(P, dtype=bool)
    errors: list[str | None] = [None] * P
    exc2 = 2.0 * excitation_numbers(n)

    for k in range(n_steps + 1):
        r, alpha, beta = bloch_arrays(partial_trace_keep_first(rho))
        theta, delta = angle_arrays(r, alpha, beta, cfg.branch)
        if k % cfg.record_every == 0:
            i = k // cfg.record_every
            diag = np.diagonal(rho, axis1=-2, axis2=-1).real
            fid[i] = diag[:, 0]
            cst[i] = diag @ exc2
            th[i] = theta
            de[i] = delta
        if k == n_steps:
            break
        m = MeasurementSetup(n, gamma, local=local_operator(theta, delta))
        dw = dws[:, k]
        dys[k] = sg2 * m.expect(rho) * dt + dw
        new, bad = project_batch(euler_update(rho, h, m, dt, dw))
        if bad.any():
            for j in np.flatnonzero(bad & alive):
                errors[j] = f"step {k}: state left the projectable region"
                log.warning("initialisation path %d aborted at step %d", paths[j], k)
            alive &= ~bad
            new[bad] = rho[bad]  # frozen; reported via ``error``
        rho = new

    return [
        TrajectoryRecord(p, cfg.seed, times, fid[:, j].copy(), cst[:, j].copy(), th[:, j].copy(),
                         de[:, j].copy(), dys[:, j].copy(), errors[j])
        for j, p in enumerate(paths)
    ]


def run_initialization(
    graph: RootedGraph,
    config: InitializationConfig,
    rho0: np.ndarray | None = None,
    n_spins: int | None = None,
    path_offset: int = 0,
) -> list[TrajectoryRecord]:
    """Closed-loop adaptive measurement on spin 1 of the known network ``graph``.

    Paths are independent; noise for path ``p`` is keyed by
    ``(config.seed, path_offset + p)``.
    """
    n = graph.n_nodes if n_spins is None else n_spins
    h = np.ascontiguousarray(build_hamiltonian(graph, n).real) if graph.edges else None  # XY is real
    rho0 = maximally_mixed(n) if rho0 is None else np.asarray(rho0, dtype=complex)
    if rho0.shape != (2**n, 2**n):
        raise ValueError("initial state does not match the number of spins")
    ids = list(range(path_offset, path_offset + config.n_paths))
    size = max(1, config.batch_size)
    jobs = [(ids[i : i + size], h, rho0, config) for i in range(0, len(ids), size)]
    out: list[TrajectoryRecord] = []
    for batch in map_paths(_init_batch, jobs, workers=config.workers):
        out.extend(batch)
    return out
