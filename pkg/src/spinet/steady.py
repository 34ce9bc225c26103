"""Pure steady states of the measured network.

A pure state is stationary under continuous measurement of a Hermitian,
involutory ``c`` exactly when it is a common eigenvector of ``H`` and ``c``.
Only the ``c = +1`` eigenspace is searched: the adaptive loop rotates the
measurement away from states with ``c = -1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import (
    RootedGraph,
    SymmetryError,
    build_hamiltonian,
    is_automorphism,
    permutation_operator,
    root_fixing_automorphisms,
)
from .quantum import (
    CommutationError,
    canonical_basis,
    hermitian_eig,
    is_hermitian,
    n_spins_of,
    pauli_operator,
    total_z,
)

RANK_TOL = 1e-9


@dataclass
class SteadyState:
    vector: np.ndarray
    h_eigenvalue: float
    c_eigenvalue: float = 1.0


@dataclass
class SteadyStateReport:
    states: list[SteadyState]
    unique_target: bool
    symmetry_witness: tuple[int, ...] | None = None
    graph: RootedGraph | None = field(default=None, repr=False)

    def to_json_obj(self) -> dict:
        return {
            "graph": None if self.graph is None else self.graph.to_dict(),
            "unique_target": self.unique_target,
            "states": [
                {
                    "amplitudes": [[float(z.real), float(z.imag)] for z in s.vector],
                    "h_eigenvalue": s.h_eigenvalue,
                }
                for s in self.states
            ],
            "symmetry_witness": None if self.symmetry_witness is None else list(self.symmetry_witness),
        }


def _kernel(m: np.ndarray, scale: float) -> np.ndarray:
    """Orthonormal basis (columns) of the null space of ``m``."""
    if m.shape[1] == 0:
        return np.zeros((0, 0))
    _, s, vh = np.linalg.svd(m)
    rank = int(np.sum(s > RANK_TOL * scale))
    return vh[rank:].conj().T


def invariant_subspace(h: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Largest ``h``-invariant subspace inside ``span(v)`` (orthonormal columns).

    Repeatedly keeps the vectors ``w`` of the current subspace whose image
    ``h w`` stays inside it.
    """
    scale = max(np.linalg.norm(h, 2), 1.0)
    w = v
    for _ in range(v.shape[1] + 1):
        if w.shape[1] == 0:
            return w
        hw = h @ w
        leak = hw - w @ (w.conj().T @ hw)
        ker = _kernel(leak, scale)
        if ker.shape[1] == w.shape[1]:
            return w
        w = w @ ker
    return w


def _check_preconditions(h, c):
    if not is_hermitian(h, 1e-10) or not is_hermitian(c, 1e-10):
        raise ValueError("H and c must be Hermitian")
    if np.max(np.abs(c @ c - np.eye(c.shape[0]))) > 1e-10:
        raise ValueError("c must satisfy c^2 = I")
    jz = total_z(n_spins_of(h.shape[0]))
    if np.max(np.abs(h @ jz - jz @ h)) > 1e-10:
        raise CommutationError("H does not commute with J_z")


def pure_steady_states(h: np.ndarray, c: np.ndarray | None = None, eig_tol: float = 1e-9) -> SteadyStateReport:
    """All pure steady states with ``c = +1``: an orthonormal eigenbasis of
    ``h`` on the largest ``h``-invariant subspace of that eigenspace."""
    h = np.asarray(h, dtype=complex)
    n = n_spins_of(h.shape[0])
    c = pauli_operator("z", 1, n) if c is None else np.asarray(c, dtype=complex)
    _check_preconditions(h, c)

    wc, vc = np.linalg.eigh(c)
    plus = canonical_basis(vc[:, wc > 0])
    w = invariant_subspace(h, plus)
    states: list[SteadyState] = []
    if w.shape[1]:
        w = canonical_basis(w)
        mu, y = hermitian_eig(w.conj().T @ h @ w, eig_tol)
        vecs = w @ y
        # re-canonicalise each eigenspace in the full basis
        i = 0
        while i < len(mu):
            j = i + 1
            while j < len(mu) and abs(mu[j] - mu[i]) <= eig_tol * max(1.0, abs(mu[i])):
                j += 1
            vecs[:, i:j] = canonical_basis(vecs[:, i:j])
            i = j
        for k in range(len(mu)):
            psi = vecs[:, k]
            states.append(SteadyState(psi, float(mu[k]), float((psi.conj() @ c @ psi).real)))
    unique = len(states) == 1 and abs(abs(states[0].vector[0]) - 1.0) < 1e-9
    return SteadyStateReport(states, unique)


@dataclass
class SingleExcitationAnalysis:
    labels: list[str]  # basis of S_1: one excitation on spin 2, 3, ..., N
    P1: np.ndarray
    H1: np.ndarray
    c1: np.ndarray
    eigenvalues: np.ndarray  # of H1 on the non-symmetric part of S_1
    vectors: np.ndarray  # columns in S_1 coordinates
    full_vectors: np.ndarray  # columns in the 2^N basis


def single_excitation_analysis(g: RootedGraph, witness) -> SingleExcitationAnalysis:
    """Restrict ``P``, ``H`` and ``c = sigma_1^z`` to the single-excitation
    states with spin 1 unexcited, and diagonalise ``H1`` on the part of that
    space not fixed by ``P1`` (the ``-1`` eigenspace for an exchange)."""
    witness = tuple(witness)
    if not is_automorphism(g, witness):
        raise SymmetryError(f"{witness} is not a root-fixing automorphism of the graph")
    n = g.n_nodes
    h = build_hamiltonian(g, n)
    p = permutation_operator(witness, n)
    c = pauli_operator("z", 1, n)
    idx = np.array([1 << (n - j) for j in range(2, n + 1)])
    sub = np.ix_(idx, idx)
    p1, h1, c1 = p[sub], h[sub], c[sub]

    wp, vp = np.linalg.eig(p1)
    moved = vp[:, np.abs(wp - 1.0) > 1e-9]
    if moved.shape[1] == 0:
        return SingleExcitationAnalysis(_labels(n), p1, h1, c1, np.zeros(0), np.zeros((n - 1, 0)), np.zeros((2**n, 0)))
    basis = canonical_basis(moved)
    mu, y = hermitian_eig(basis.conj().T @ h1 @ basis)
    vecs = basis @ y
    full = np.zeros((2**n, vecs.shape[1]), dtype=complex)
    full[idx] = vecs
    return SingleExcitationAnalysis(_labels(n), p1, h1, c1, mu, vecs, full)


def _labels(n: int) -> list[str]:
    return ["".join("1" if s == j else "0" for s in range(1, n + 1)) for j in range(2, n + 1)]


@dataclass
class SymmetryCheck:
    symmetric: bool
    witness: tuple[int, ...] | None
    n_steady_states: int


def check_theorem2(g: RootedGraph) -> SymmetryCheck:
    """Whether ``g`` has a nontrivial root-fixing automorphism (preferring an
    involution as witness); if so the target cannot be the only steady state,
    which is cross-checked here."""
    autos = [a for a in root_fixing_automorphisms(g) if a != tuple(range(1, g.n_nodes + 1))]
    report = pure_steady_states(build_hamiltonian(g, g.n_nodes))
    if not autos:
        return SymmetryCheck(False, None, len(report.states))
    involutions = [a for a in autos if all(a[a[j] - 1] == j + 1 for j in range(len(a)))]
    witness = (involutions or autos)[0]
    if len(report.states) < 2:
        raise AssertionError(f"symmetric graph {g} has a unique pure steady state")
    return SymmetryCheck(True, witness, len(report.states))


def analyse_graph(g: RootedGraph) -> SteadyStateReport:
    """Steady-state report for a network measured on spin 1, with symmetry witness."""
    report = pure_steady_states(build_hamiltonian(g, g.n_nodes))
    report.graph = g
    sym = check_theorem2(g)
    report.symmetry_witness = sym.witness
    return report
