"""Multi-model Bayesian estimation of the graph class behind a measured spin.

Each nominal graph carries its own conditional state; all states and the
class probabilities are driven by one measurement record generated from the
(hidden) true network.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .graphs import GraphCatalog, RootedGraph, build_hamiltonian
from .parallel import map_paths
from .quantum import maximally_mixed
from .sme import (
    InstabilityError,
    MeasurementSetup,
    NoisePath,
    euler_update,
    project_batch,
)
from .sectors import SectorLayout

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ModelBank:
    """Stacked per-class Hamiltonians ``(m, d, d)``, states ``(m, d, d)`` and
    probabilities ``(m,)``."""

    class_ids: tuple[int, ...]
    hamiltonians: np.ndarray
    states: np.ndarray
    probs: np.ndarray

    @property
    def m(self) -> int:
        return len(self.class_ids)

    def mixture(self) -> np.ndarray:
        return np.einsum("i,ijk->jk", self.probs, self.states)

    @classmethod
    def uniform(cls, catalog: GraphCatalog, n_spins: int, lam: float = 1.0, rho0=None) -> ModelBank:
        hs = np.array([build_hamiltonian(g.with_coupling(lam), n_spins) for g in catalog.classes])
        rho0 = maximally_mixed(n_spins) if rho0 is None else np.asarray(rho0, dtype=complex)
        states = np.broadcast_to(rho0, hs.shape).copy()
        probs = np.full(catalog.m, 1.0 / catalog.m)
        return cls(tuple(range(1, catalog.m + 1)), hs, states, probs)


def _predictions(bank: ModelBank, m: MeasurementSetup) -> np.ndarray:
    """``2 sqrt(gamma) Tr(c rho_i)`` per model."""
    return 2.0 * np.sqrt(m.gamma) * m.expect(bank.states)


def filter_step(bank: ModelBank, m: MeasurementSetup, dY: float, dt: float) -> ModelBank:
    """Advance every conditional state and the class probabilities by one record increment."""
    z = _predictions(bank, m)
    raw = euler_update(bank.states, bank.hamiltonians, m, dt, dY - z * dt)
    states, bad = project_batch(raw)
    if bad.any():
        raise InstabilityError(f"model states {np.flatnonzero(bad).tolist()} left the projectable region")

    return ModelBank(bank.class_ids, bank.hamiltonians, states, update_probabilities(bank.probs, z, dY, dt))


def update_probabilities(probs: np.ndarray, z: np.ndarray, dY, dt: float) -> np.ndarray:
    """Continuous-time Bayes update of the class probabilities, floored and
    renormalised. ``z`` holds each model's ``2 sqrt(gamma) Tr(c rho_i)``.

    Models run along the last axis; leading axes (independent records, one
    ``dY`` each) broadcast.
    """
    z_mix = np.sum(probs * z, axis=-1, keepdims=True)
    innov = np.asarray(dY, dtype=float)[..., None] - z_mix * dt
    p = probs + (z - z_mix) * probs * innov
    p = np.maximum(p, PROB_FLOOR)
    total = p.sum(axis=-1, keepdims=True)
    if not np.all(np.isfinite(total)) or np.any(total <= 0):
        raise ArithmeticError("all class probabilities underflowed")
    return p / total


def bayes_discrete_oracle(bank: ModelBank, m: MeasurementSetup, dY: float, dt: float) -> np.ndarray:
    """Exact Bayes posterior over classes for one increment with Gaussian likelihoods."""
    z = _predictions(bank, m)
    loglik = -((dY - z * dt) ** 2) / (2.0 * dt)
    loglik -= loglik.max()
    post = np.exp(loglik) * bank.probs
    return post / post.sum()


@dataclass
class IdentificationConfig:
    n_max: int = 3
    nominal_lambda: float = 1.0
    gamma: float = 1.0
    dt: float = 1e-3
    horizon: float = 5.0
    n_paths: int = 50
    seed: int = 0
    record_every: int = 10
    record_expectations: bool = False
    batch_size: int = 25
    workers: int | None = None


@dataclass
class PathResult:
    path: int
    times: np.ndarray
    probs: np.ndarray  # (n_records, m)
    dY: np.ndarray
    expect_true: np.ndarray | None = None
    expect_models: np.ndarray | None = None  # (n_records, m)
    error: str | None = None


@dataclass
class IdentificationResult:
    config: IdentificationConfig
    true_graph: RootedGraph
    true_class: int | None
    catalog: GraphCatalog
    times: np.ndarray
    mean_probs: np.ndarray  # (n_records, m)
    final_probs: np.ndarray  # (n_ok_paths, m)
    decision: int
    top2: tuple[int, int]
    top2_gap: float
    excluded_paths: list[int] = field(default_factory=list)
    paths: list[PathResult] = field(default_factory=list, repr=False)

    @property
    def mean_final(self) -> np.ndarray:
        return self.mean_probs[-1]

    def rank_of(self, class_id: int) -> int:
        """1-based rank of ``class_id`` by mean final probability."""
        order = _ranking(self.mean_final)
        return order.index(class_id - 1) + 1

    def summary(self) -> dict:
        return {
            "m": self.catalog.m,
            "true_class": self.true_class,
            "class_edge_lists": [[list(e) for e in g.edges] for g in self.catalog.classes],
            "mean_final_probs": self.mean_final.tolist(),
            "decision_class": self.decision,
            "top2": list(self.top2),
            "top2_gap": self.top2_gap,
            "excluded_paths": self.excluded_paths,
        }


def _ranking(p: np.ndarray) -> list[int]:
    # descending probability, ties by lowest id
    return sorted(range(len(p)), key=lambda i: (-p[i], i))


def _identification_batch(args) -> list[PathResult]:
    """Run several independent records at once; every array carries a
    leading path axis so numpy overhead is shared across paths."""
    paths, true_h, bank_h, cfg, n_spins = args
    layout = SectorLayout(n_spins)
    gamma, dt = cfg.gamma, cfg.dt
    if dt * gamma > 1e-2:
        raise ValueError(f"dt*gamma = {dt * gamma} exceeds 1e-2")
    sg2 = 2.0 * np.sqrt(gamma)
    n_steps = int(round(cfg.horizon / dt))
    P = len(paths)
    dws = np.array([NoisePath(cfg.seed, p, dt).increments(n_steps) for p in paths])
    n_models = bank_h.shape[0]

    rho0 = maximally_mixed(n_spins)
    true_hb = layout.split_hamiltonian(true_h)
    bank_hb = layout.split_hamiltonian(bank_h)
    rho = layout.split(np.broadcast_to(rho0, (P,) + rho0.shape))
    states = layout.split(np.broadcast_to(rho0, (P, n_models) + rho0.shape))
    probs = np.full((P, n_models), 1.0 / n_models)

    n_rec = n_steps // cfg.record_every + 1
    rec_p = np.empty((n_rec, P, n_models))
    times = np.arange(n_rec) * (cfg.record_every * dt)
    ex_true = np.empty((n_rec, P)) if cfg.record_expectations else None
    ex_models = np.empty((n_rec, P, n_models)) if cfg.record_expectations else None
    dys = np.empty((n_steps, P))
    alive = np.ones(P, dtype=bool)
    errors: list[str | None] = [None] * P

    def record(i):
        rec_p[i] = probs
        if ex_true is not None:
            ex_true[i] = layout.expect_c(rho)
            ex_models[i] = layout.expect_c(states)

    def freeze(mask, k, what):
        for j in np.flatnonzero(mask & alive):
            errors[j] = f"step {k}: {what} left the projectable region"
        alive[mask] = False

    record(0)
    for k in range(n_steps):
        dw = dws[:, k]
        dy = sg2 * layout.expect_c(rho) * dt + dw
        dys[k] = dy
        new_rho, bad_true = layout.project(layout.euler_update(rho, true_hb, gamma, dt, dw))
        z = sg2 * layout.expect_c(states)
        new_states, bad_bank = layout.project(
            layout.euler_update(states, bank_hb, gamma, dt, (dy[:, None] - z * dt))
        )
        bad = bad_true | bad_bank.any(axis=-1)
        if bad.any():
            freeze(bad_true, k, "true-system state")
            freeze(bad_bank.any(axis=-1), k, "a model state")
            # failed paths keep their last valid values
            for b_new, b_old in zip(new_rho, rho):
                b_new[bad] = b_old[bad]
            for b_new, b_old in zip(new_states, states):
                b_new[bad] = b_old[bad]
        rho, states = new_rho, new_states
        probs = np.where(alive[:, None], update_probabilities(probs, z, dy, dt), probs)
        if (k + 1) % cfg.record_every == 0:
            record((k + 1) // cfg.record_every)

    out = []
    for j, p in enumerate(paths):
        out.append(
            PathResult(
                p,
                times,
                rec_p[:, j].copy(),
                dys[:, j].copy(),
                None if ex_true is None else ex_true[:, j].copy(),
                None if ex_models is None else ex_models[:, j].copy(),
                errors[j],
            )
        )
    return out


def run_identification(
    true_graph: RootedGraph,
    catalog: GraphCatalog,
    config: IdentificationConfig,
    keep_paths: bool = False,
) -> IdentificationResult:
    """Simulate ``config.n_paths`` records of ``true_graph`` and filter each
    with the uniform-coupling bank built from ``catalog``."""
    n_spins = catalog.n_max
    if true_graph.n_nodes > n_spins:
        raise ValueError("true graph has more nodes than the catalog allows")
    if config.dt * config.gamma > 1e-2:
        raise ValueError("dt*gamma must be <= 1e-2")
    true_h = build_hamiltonian(true_graph, n_spins)
    bank_h = np.array(
        [build_hamiltonian(g.with_coupling(config.nominal_lambda), n_spins) for g in catalog.classes]
    )
    ids = list(range(config.n_paths))
    size = max(1, config.batch_size)
    jobs = [(ids[i : i + size], true_h, bank_h, config, n_spins) for i in range(0, len(ids), size)]
    results = [r for batch in map_paths(_identification_batch, jobs, workers=config.workers) for r in batch]

    ok = [r for r in results if r.error is None]
    excluded = [r.path for r in results if r.error is not None]
    for r in results:
        if r.error is not None:
            log.warning("path %d excluded: %s", r.path, r.error)
    if not ok:
        raise InstabilityError("every identification path failed")

    mean_probs = np.mean([r.probs for r in ok], axis=0)
    final = np.array([r.probs[-1] for r in ok])
    order = _ranking(mean_probs[-1])
    top2 = (order[0] + 1, order[1] + 1) if len(order) > 1 else (order[0] + 1, order[0] + 1)
    gap = float(mean_probs[-1][order[0]] - mean_probs[-1][order[1]]) if len(order) > 1 else 1.0
    try:
        true_class = catalog.class_id(true_graph)
    except KeyError:
        true_class = None
    return IdentificationResult(
        config=config,
        true_graph=true_graph,
        true_class=true_class,
        catalog=catalog,
        times=ok[0].times,
        mean_probs=mean_probs,
        final_probs=final,
        decision=top2[0],
        top2=top2,
        top2_gap=gap,
        excluded_paths=excluded,
        paths=results if keep_paths else [],
    )
