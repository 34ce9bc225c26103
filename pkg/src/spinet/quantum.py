"""Dense state and operator primitives for N-spin registers.

Basis convention: computational basis with spin 1 as the most significant
qubit, ``|0> = (1, 0)^T`` the +1 eigenvector of sigma^z. All matrices are
dense ``complex128`` arrays; functions that act on states accept a leading
batch axis wherever noted.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

HERMITIAN_TOL = 1e-12
DEGENERACY_TOL = 1e-9

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
IDENTITY2 = np.eye(2, dtype=complex)


class CommutationError(ValueError):
    """Raised when an operator fails to conserve total z-magnetization."""


def kron_all(*mats: np.ndarray) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def pauli_operator(axis: str, site: int, n_spins: int) -> np.ndarray:
    """Pauli matrix ``axis`` on spin ``site`` (1-based) of an ``n_spins`` register."""
    if axis not in PAULI:
        raise ValueError(f"unknown Pauli axis {axis!r}")
    if not 1 <= site <= n_spins:
        raise IndexError(f"site {site} outside 1..{n_spins}")
    factors = [IDENTITY2] * n_spins
    factors[site - 1] = PAULI[axis]
    return kron_all(*factors)


def embed_first(local: np.ndarray, n_spins: int) -> np.ndarray:
    """Embed a (batch of) 2x2 operator(s) on spin 1: ``local ⊗ I``."""
    local = np.asarray(local, dtype=complex)
    rest = np.eye(2 ** (n_spins - 1), dtype=complex)
    if local.ndim == 2:
        return np.kron(local, rest)
    # batched kron: (..., 2, 2) -> (..., 2^N, 2^N)
    d = rest.shape[0]
    out = local[..., :, None, :, None] * rest[None, :, None, :]
    return out.reshape(local.shape[:-2] + (2 * d, 2 * d))


def n_spins_of(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.max(np.abs(a - dagger(a)), initial=0.0) <= tol)


def check_density_matrix(rho: np.ndarray, tol: float = 1e-10) -> None:
    """Raise ``ValueError`` unless ``rho`` is Hermitian, unit-trace and positive."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {rho.shape}")
    if not is_hermitian(rho, tol):
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho)
    if abs(tr - 1) > tol:
        raise ValueError(f"density matrix has trace {tr}")
    if np.linalg.eigvalsh(rho)[0] < -1e-8:
        raise ValueError("density matrix is not positive")


def ket_to_dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def basis_ket(index: int, n_spins: int) -> np.ndarray:
    v = np.zeros(2**n_spins, dtype=complex)
    v[index] = 1.0
    return v


def bits_to_index(bits: str) -> int:
    """``"00010"`` -> basis index, spin 1 first."""
    return int(bits, 2)


def maximally_mixed(n_spins: int) -> np.ndarray:
    d = 2**n_spins
    return np.eye(d, dtype=complex) / d


def coherent_target(n_spins: int) -> np.ndarray:
    """Projector onto ``|0...0>``."""
    return ket_to_dm(basis_ket(0, n_spins))


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random full-rank (or given-rank) mixed state from a Ginibre matrix."""
    k = dim if rank is None else rank
    g = rng.normal(size=(dim, k)) + 1j * rng.normal(size=(dim, k))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def partial_trace_keep_first(rho: np.ndarray) -> np.ndarray:
    """Reduced state of spin 1; accepts a leading batch axis."""
    rho = np.asarray(rho)
    d = rho.shape[-1]
    half = d // 2
    r = rho.reshape(rho.shape[:-2] + (2, half, 2, half))
    return np.trace(r, axis1=-3, axis2=-1)


def fidelity_with_coherent_target(rho: np.ndarray) -> np.ndarray | float:
    """``<0...0|rho|0...0>``; accepts a leading batch axis."""
    f = np.asarray(rho)[..., 0, 0].real
    return float(f) if np.ndim(f) == 0 else f


@dataclass(frozen=True)
class BlochParams:
    r: float
    alpha: float
    beta: float

    def to_density(self) -> np.ndarray:
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        off = self.r * np.exp(-1j * self.beta) * sa
        return 0.5 * np.array(
            [[1 + self.r * ca, off], [np.conj(off), 1 - self.r * ca]], dtype=complex
        )


def bloch_arrays(rho2: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised (r, alpha, beta) of 2x2 states with the degeneracy conventions.

    When ``r <= 1e-9`` both angles are 0; when ``sin(alpha) <= 1e-9`` beta is 0.
    """
    rho2 = np.asarray(rho2)
    x = 2.0 * rho2[..., 1, 0].real
    y = 2.0 * rho2[..., 1, 0].imag
    z = (rho2[..., 0, 0] - rho2[..., 1, 1]).real
    r = np.sqrt(x * x + y * y + z * z)
    rho_xy = np.hypot(x, y)
    alpha = np.arctan2(rho_xy, z)
    beta = np.arctan2(y, x)
    flat = r <= DEGENERACY_TOL
    alpha = np.where(flat, 0.0, alpha)
    beta = np.where(flat | (rho_xy <= DEGENERACY_TOL * np.maximum(r, 1e-300)), 0.0, beta)
    r = np.minimum(r, 1.0)
    return r, alpha, beta


def bloch_params(rho2: np.ndarray) -> BlochParams:
    r, a, b = bloch_arrays(rho2)
    return BlochParams(float(r), float(a), float(b))


def excitation_numbers(n_spins: int) -> np.ndarray:
    """Number of ``|1>`` spins in each computational basis state."""
    idx = np.arange(2**n_spins)
    return np.array([bin(i).count("1") for i in idx])


def total_z(n_spins: int) -> np.ndarray:
    """``J_z = sum_j sigma_j^z`` (diagonal)."""
    return np.diag((n_spins - 2 * excitation_numbers(n_spins)).astype(complex))


def excitation_blocks(a: np.ndarray, n_spins: int, tol: float = 1e-10):
    """Split ``a`` into the N+1 excitation-number blocks of ``J_z``.

    Returns a list of ``(k, block, indices)`` with ``indices`` ascending, so
    ``a[np.ix_(indices, indices)] == block``.
    """
    a = np.asarray(a)
    exc = excitation_numbers(n_spins)
    jz = total_z(n_spins)
    if np.max(np.abs(a @ jz - jz @ a), initial=0.0) > tol:
        raise CommutationError("operator does not commute with J_z")
    blocks = []
    for k in range(n_spins + 1):
        idx = np.flatnonzero(exc == k)
        assert len(idx) == comb(n_spins, k)
        blocks.append((k, a[np.ix_(idx, idx)].copy(), idx))
    return blocks


def _canonical_phase(v: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > tol)
    if len(nz) == 0:
        return v
    ph = v[nz[0]] / abs(v[nz[0]])
    return v / ph


def canonical_basis(vectors: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Deterministic orthonormal basis (columns) of the span of ``vectors``.

    Gram-Schmidt over the projector's columns in basis-index order, so the
    result depends only on the subspace.
    """
    q, _ = np.linalg.qr(vectors)
    proj = q @ q.conj().T
    basis: list[np.ndarray] = []
    for col in proj.T:
        v = col.copy()
        for b in basis:
            v = v - b * (b.conj() @ v)
        nrm = np.linalg.norm(v)
        if nrm > tol:
            basis.append(_canonical_phase(v / nrm))
        if len(basis) == vectors.shape[1]:
            break
    return np.array(basis).T if basis else np.zeros((vectors.shape[0], 0), dtype=complex)


def hermitian_eig(a: np.ndarray, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenpairs with a canonical basis inside each degenerate eigenspace."""
    w, v = np.linalg.eigh(a)
    v = v.astype(complex)
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and abs(w[j] - w[i]) <= tol * max(1.0, abs(w[i])):
            j += 1
        v[:, i:j] = canonical_basis(v[:, i:j])
        i = j
    return w, v
