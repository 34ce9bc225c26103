"""Excitation-sector representation for J_z-conserving runs.

With ``c = sigma_1^z``, an XY Hamiltonian and a J_z-diagonal initial state
(e.g. maximally mixed), every conditional state stays block diagonal in the
excitation-number sectors. Integrating the blocks directly is exact and
avoids touching the ~75% of entries that are identically zero at N=5.
"""

from __future__ import annotations

import numpy as np

from .quantum import dagger, excitation_numbers
from .sme import POSITIVITY_TOL, h_times, positive_definite_mask


class SectorLayout:
    def __init__(self, n_spins: int):
        self.n_spins = n_spins
        exc = excitation_numbers(n_spins)
        self.indices = [np.flatnonzero(exc == k) for k in range(n_spins + 1)]
        # sigma_1^z eigenvalue: +1 when spin 1 (most significant bit) is |0>
        top = 1 << (n_spins - 1)
        self.signs = [np.where(idx & top, -1.0, 1.0) for idx in self.indices]
        self.dmasks = [np.multiply.outer(s, s) - 1.0 for s in self.signs]
        self.amasks = [np.add.outer(s, s) for s in self.signs]

    def split(self, a: np.ndarray) -> list[np.ndarray]:
        a = np.asarray(a)
        return [a[..., idx[:, None], idx[None, :]].copy() for idx in self.indices]

    def split_hamiltonian(self, h: np.ndarray) -> list[np.ndarray]:
        """Blocks of ``h``, kept real when ``h`` is (the XY case), which lets
        :meth:`euler_update` use real matrix products."""
        h = np.asarray(h)
        if np.iscomplexobj(h) and not np.any(h.imag):
            h = h.real
        return [np.ascontiguousarray(b) for b in self.split(h)]

    def join(self, blocks: list[np.ndarray]) -> np.ndarray:
        d = 2**self.n_spins
        batch = blocks[0].shape[:-2]
        out = np.zeros(batch + (d, d), dtype=complex)
        for idx, b in zip(self.indices, blocks):
            out[..., idx[:, None], idx[None, :]] = b
        return out

    def expect_c(self, blocks) -> np.ndarray:
        """``Tr(sigma_1^z rho)`` (batched)."""
        return sum(np.diagonal(b, axis1=-2, axis2=-1).real @ s for b, s in zip(blocks, self.signs))

    def euler_update(self, blocks, hblocks, gamma: float, dt: float, innovation):
        innovation = np.asarray(innovation, dtype=float)[..., None, None]
        ex = self.expect_c(blocks)[..., None, None]
        coef = np.sqrt(gamma) * innovation
        out = []
        for b, h, dm, am in zip(blocks, hblocks, self.dmasks, self.amasks):
            # b * (1 + gamma dt dm + sqrt(gamma) dW (am - 2 <c>)), one temporary
            factor = am - 2.0 * ex
            factor *= coef
            factor += 1.0 + (gamma * dt) * dm
            nb = b * factor
            if b.shape[-1] > 1:
                hr = h_times(h, b)
                hr -= dagger(hr)
                hr *= -1j * dt
                nb += hr
            out.append(nb)
        return out

    def project(self, blocks, tol: float = POSITIVITY_TOL):
        """Blockwise version of :func:`spinet.sme.project_batch`.

        Blocks coming out of :meth:`euler_update` are Hermitian to the last
        bit when its input was (every term is built from conjugate-symmetric
        operations), so Hermitisation is only applied to clipped blocks.
        """
        tr = sum(np.trace(b, axis1=-2, axis2=-1).real for b in blocks)
        total = sum(b.sum(axis=(-2, -1)) for b in blocks)
        bad = ~np.isfinite(total) | ~(tr > 0.5)
        out = []
        for b in blocks:
            flat = b.reshape((-1,) + b.shape[-2:])
            ok = np.isfinite(flat.sum(axis=(-2, -1)))
            needs = ok & ~positive_definite_mask(np.where(ok[:, None, None], flat, 0.0), tol)
            if needs.any():
                sel = np.flatnonzero(needs)
                w, v = np.linalg.eigh(flat[sel])
                clip = w[:, 0] < -tol
                sel, w, v = sel[clip], w[clip], v[clip]
                flat = flat.copy()
                fixed = (v * np.clip(w, 0.0, None)[:, None, :]) @ dagger(v)
                flat[sel] = 0.5 * (fixed + dagger(fixed))
            out.append(flat.reshape(b.shape))
        tr = sum(np.trace(b, axis1=-2, axis2=-1).real for b in out)
        inv = (1.0 / np.where(bad, 1.0, tr))[..., None, None]
        return [b * inv for b in out], bad
