"""Euler-Maruyama integration of the homodyne stochastic master equation.

    d rho = -i[H, rho] dt + gamma D[c] rho dt + sqrt(gamma) H[c] rho dW
    dY    = 2 sqrt(gamma) Tr(c rho) dt + dW

for Hermitian, involutory ``c``. Every update is followed by a projection
back onto the density matrices. All state functions broadcast over leading
batch axes, so a stack of models or of paths advances in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .quantum import PAULI, dagger, embed_first, is_hermitian, n_spins_of

POSITIVITY_TOL = 1e-10


class InstabilityError(ArithmeticError):
    """The integrated state left the region the projection can repair."""


@dataclass(frozen=True, eq=False)
class MeasurementSetup:
    """Measurement operator ``c`` and strength ``gamma``.

    ``local`` holds the 2x2 factor when ``c = local ⊗ I`` acts on spin 1
    only; it may carry a leading batch axis (one operator per path), in
    which case ``c`` is materialised lazily.
    """

    n_spins: int
    gamma: float = 1.0
    local: np.ndarray | None = None
    full: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if (self.local is None) == (self.full is None):
            raise ValueError("give exactly one of local or full")
        op = self.local if self.local is not None else self.full
        if not is_hermitian(op):
            raise ValueError("measurement operator must be Hermitian")
        sq = op @ op
        eye = np.eye(op.shape[-1])
        if np.max(np.abs(sq - eye)) > 1e-12:
            raise ValueError("measurement operator must satisfy c^2 = I")
        if self.full is not None and self.full.shape[-1] != 2**self.n_spins:
            raise ValueError("operator dimension does not match n_spins")

    @classmethod
    def sigma_z_first(cls, n_spins: int, gamma: float = 1.0) -> MeasurementSetup:
        return cls(n_spins, gamma, local=PAULI["z"])

    @classmethod
    def on_first_spin(cls, local, n_spins: int, gamma: float = 1.0) -> MeasurementSetup:
        return cls(n_spins, gamma, local=np.asarray(local, dtype=complex))

    @classmethod
    def from_matrix(cls, c, gamma: float = 1.0) -> MeasurementSetup:
        c = np.asarray(c, dtype=complex)
        return cls(n_spins_of(c.shape[-1]), gamma, full=c)

    @cached_property
    def diag(self) -> np.ndarray | None:
        """Diagonal of ``c`` when ``c`` is diagonal and unbatched, else None."""
        op = self.full if self.full is not None else self.local
        if op.ndim != 2 or np.any(op - np.diag(np.diagonal(op))):
            return None
        s = np.diagonal(op).real
        if self.full is None:
            s = np.repeat(s, 2 ** (self.n_spins - 1))
        return s

    @cached_property
    def _diag_masks(self) -> tuple[np.ndarray, np.ndarray]:
        # D[c]rho = (s_i s_j - 1) rho_ij and c rho + rho c = (s_i + s_j) rho_ij
        s = self.diag
        return np.multiply.outer(s, s) - 1.0, np.add.outer(s, s)

    @property
    def c(self) -> np.ndarray:
        if self.full is not None:
            return self.full
        return embed_first(self.local, self.n_spins)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """``c @ rho`` (batched)."""
        if self.diag is not None:
            return self.diag[:, None] * rho
        if self.full is not None:
            return self.full @ rho
        d = rho.shape[-1]
        r = rho.reshape(rho.shape[:-2] + (2, (d // 2) * d))
        return np.matmul(self.local, r).reshape(rho.shape)

    def expect(self, rho: np.ndarray) -> np.ndarray:
        """``Tr(c rho)`` as a real array (batched)."""
        if self.diag is not None:
            return np.diagonal(rho, axis1=-2, axis2=-1).real @ self.diag
        if self.full is not None:
            return np.einsum("...ij,...ji->...", self.full, rho).real
        d = rho.shape[-1]
        half = d // 2
        r = rho.reshape(rho.shape[:-2] + (2, half, 2, half))
        red = np.trace(r, axis1=-3, axis2=-1)
        return np.einsum("...ij,...ji->...", self.local, red).real


def _check_dims(rho, h, m: MeasurementSetup):
    d = 2**m.n_spins
    if rho.shape[-1] != d or rho.shape[-2] != d:
        raise ValueError(f"state dimension {rho.shape[-2:]} does not match {d}")
    if h is not None and np.shape(h)[-1] != d:
        raise ValueError(f"Hamiltonian dimension {np.shape(h)[-2:]} does not match {d}")


def h_times(h: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``h @ rho``. A real ``h`` multiplies the interleaved (re, im) float
    view of ``rho`` instead, which gives the same bits at half the flops."""
    if np.isrealobj(h) and rho.dtype == np.complex128:
        # contiguous h always goes through BLAS; a strided view (e.g. ``.real``)
        # would take numpy's own loop and round differently
        h = np.ascontiguousarray(h)
        return (h @ np.ascontiguousarray(rho).view(np.float64)).view(np.complex128)
    return h @ rho


def drift(rho: np.ndarray, h: np.ndarray | None, m: MeasurementSetup) -> np.ndarray:
    """``-i[H, rho] + gamma D[c] rho``; assumes Hermitian ``rho``."""
    rho = np.asarray(rho)
    _check_dims(rho, h, m)
    if m.diag is not None:
        out = m.gamma * (m._diag_masks[0] * rho)
    else:
        # D[c] rho = c rho c - rho for c = c^dagger, c^2 = I; rho c = (c rho)^dagger
        out = m.gamma * (m.apply(dagger(m.apply(rho))) - rho)
    if h is not None:
        hr = h_times(h, rho)
        out = out - 1j * (hr - dagger(hr))
    return out


def diffusion(rho: np.ndarray, m: MeasurementSetup) -> np.ndarray:
    """``sqrt(gamma) (c rho + rho c - 2 Tr(c rho) rho)``."""
    rho = np.asarray(rho)
    _check_dims(rho, None, m)
    ex = m.expect(rho)[..., None, None]
    if m.diag is not None:
        return np.sqrt(m.gamma) * ((m._diag_masks[1] - 2.0 * ex) * rho)
    crho = m.apply(rho)
    return np.sqrt(m.gamma) * (crho + dagger(crho) - 2.0 * ex * rho)


def euler_update(rho, h, m: MeasurementSetup, dt: float, innovation) -> np.ndarray:
    """Unprojected ``rho + drift dt + diffusion * innovation``.

    ``innovation`` is ``dW`` for the physical system, or the record residual
    for a filter; it broadcasts over the batch axes.
    """
    rho = np.asarray(rho)
    innovation = np.asarray(innovation, dtype=float)[..., None, None]
    if m.diag is None:
        return rho + drift(rho, h, m) * dt + diffusion(rho, m) * innovation
    _check_dims(rho, h, m)
    dmask, amask = m._diag_masks
    ex = m.expect(rho)[..., None, None]
    sg = np.sqrt(m.gamma)
    scale = (m.gamma * dt) * dmask + sg * innovation * (amask - 2.0 * ex)
    out = rho + scale * rho
    if h is not None:
        hr = h_times(h, rho)
        hr -= dagger(hr)
        hr *= -1j * dt
        out += hr
    return out


try:
    # numpy's Cholesky gufunc marks failed matrices with NaN and only raises
    # through its error state; calling it directly gives per-matrix answers
    from numpy.linalg import _umath_linalg as _ulinalg

    _cholesky_lo = _ulinalg.cholesky_lo
except (ImportError, AttributeError):  # pragma: no cover - other numpy layouts
    _cholesky_lo = None


def positive_definite_mask(a: np.ndarray, shift: float = 0.0) -> np.ndarray:
    """Per-matrix test that ``a + shift*I`` is positive definite, for a stack
    of Hermitian matrices (one LAPACK Cholesky per matrix, no exceptions)."""
    a = np.asarray(a)
    shifted = a + shift * np.eye(a.shape[-1])
    if _cholesky_lo is not None and shifted.dtype in (np.complex128, np.float64):
        sig = "D->D" if shifted.dtype == np.complex128 else "d->d"
        with np.errstate(invalid="ignore"):
            factor = _cholesky_lo(shifted, signature=sig)
        return ~np.isnan(factor[..., 0, 0].real)
    return _bisect_mask(shifted)


def _bisect_mask(shifted: np.ndarray) -> np.ndarray:
    flat = shifted.reshape((-1,) + shifted.shape[-2:])
    ok = np.ones(len(flat), dtype=bool)

    def visit(lo, hi):
        try:
            np.linalg.cholesky(flat[lo:hi])
        except np.linalg.LinAlgError:
            if hi - lo == 1:
                ok[lo] = False
            else:
                mid = (lo + hi) // 2
                visit(lo, mid)
                visit(mid, hi)

    if len(flat):
        visit(0, len(flat))
    return ok.reshape(shifted.shape[:-2])


def project_batch(rho_raw: np.ndarray, tol: float = POSITIVITY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Hermitise, clip negative eigenvalues and renormalise a stack of states.

    Returns ``(rho, bad)`` where ``bad`` flags states whose raw trace was
    below 1/2 or non-finite; those entries are left unprojected. States
    whose smallest eigenvalue is at least ``-tol`` (checked by Cholesky
    pivots) skip the eigendecomposition.
    """
    rho = 0.5 * (rho_raw + dagger(rho_raw))
    batch = rho.shape[:-2]
    flat = rho.reshape((-1,) + rho.shape[-2:])
    tr = np.trace(flat, axis1=-2, axis2=-1).real
    bad = ~np.isfinite(flat.sum(axis=(-2, -1))) | ~(tr > 0.5)
    good = np.flatnonzero(~bad)
    if len(good):
        sub = flat[good]
        needs = ~positive_definite_mask(sub, tol)
        if needs.any():
            needs[needs] = np.linalg.eigvalsh(sub[needs])[:, 0] < -tol
        if needs.any():
            w, v = np.linalg.eigh(sub[needs])
            w = np.clip(w, 0.0, None)
            sub[needs] = (v * w[:, None, :]) @ dagger(v)
        sub /= np.trace(sub, axis1=-2, axis2=-1).real[:, None, None]
        flat[good] = sub
    return flat.reshape(rho.shape), bad.reshape(batch)


def project(rho_raw: np.ndarray, tol: float = POSITIVITY_TOL) -> np.ndarray:
    """Return the nearest valid density matrix; raise ``InstabilityError`` if
    the raw trace is below 1/2 (or not finite)."""
    rho_raw = np.asarray(rho_raw, dtype=complex)
    rho, bad = project_batch(rho_raw, tol)
    if np.any(bad):
        tr = np.trace(rho_raw, axis1=-2, axis2=-1)
        raise InstabilityError(
            f"projection failed: trace {np.atleast_1d(tr)[np.atleast_1d(bad)]} before renormalisation"
        )
    return rho


def measurement_increment(rho, m: MeasurementSetup, dt: float, dw) -> np.ndarray:
    return 2.0 * np.sqrt(m.gamma) * m.expect(rho) * dt + dw


def step_true_system(rho, h, m: MeasurementSetup, dt: float, dw):
    """One Euler-Maruyama step of the physical system.

    Returns ``(rho_next, dY)``; ``dw`` broadcasts over the batch axes.
    """
    if dt * m.gamma > 1e-2:
        raise ValueError(f"dt*gamma = {dt * m.gamma} exceeds 1e-2")
    rho = np.asarray(rho)
    dw = np.asarray(dw, dtype=float)
    dy = measurement_increment(rho, m, dt, dw)
    return project(euler_update(rho, h, m, dt, dw)), dy


@dataclass(frozen=True)
class NoisePath:
    """Wiener increments keyed by ``(seed, path)`` and counted by step.

    Uses the counter-based Philox generator: the increments of block ``b``
    (``block`` steps each) come from counter ``b``, so any step is
    reproducible without generating the ones before it.
    """

    seed: int
    path: int
    dt: float
    block: int = 4096

    def _block(self, b: int) -> np.ndarray:
        key = [self.seed & 0xFFFFFFFFFFFFFFFF, self.path & 0xFFFFFFFFFFFFFFFF]
        bitgen = np.random.Philox(key=key, counter=[0, 0, 0, b])
        return np.random.Generator(bitgen).standard_normal(self.block) * np.sqrt(self.dt)

    def increments(self, n_steps: int, start: int = 0) -> np.ndarray:
        if n_steps <= 0:
            return np.zeros(0)
        b0, b1 = start // self.block, (start + n_steps - 1) // self.block
        raw = np.concatenate([self._block(b) for b in range(b0, b1 + 1)])
        off = start - b0 * self.block
        return raw[off : off + n_steps]

    def increment(self, k: int) -> float:
        return float(self._block(k // self.block)[k % self.block])


@dataclass
class MeasurementRecord:
    times: np.ndarray
    dY: np.ndarray
    expect_c: np.ndarray


def simulate_true_system(rho0, h, m: MeasurementSetup, dt: float, n_steps: int, noise: NoisePath):
    """Integrate one trajectory; returns ``(rho_T, MeasurementRecord)``."""
    rho = np.asarray(rho0, dtype=complex)
    dws = noise.increments(n_steps)
    dys = np.empty(n_steps)
    ex = np.empty(n_steps)
    for k in range(n_steps):
        ex[k] = m.expect(rho)
        rho, dys[k] = step_true_system(rho, h, m, dt, dws[k])
    return rho, MeasurementRecord(np.arange(n_steps) * dt, dys, ex)
