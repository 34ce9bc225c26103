import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from spinet.graphs import RootedGraph, build_hamiltonian, chain
from spinet.quantum import (
    PAULI,
    basis_ket,
    ket_to_dm,
    maximally_mixed,
    random_density_matrix,
)
from spinet import sme
from spinet.sectors import SectorLayout
from spinet.sme import (
    InstabilityError,
    MeasurementSetup,
    NoisePath,
    diffusion,
    drift,
    euler_update,
    h_times,
    positive_definite_mask,
    project,
    project_batch,
    simulate_true_system,
    step_true_system,
)

Z1 = MeasurementSetup.sigma_z_first(1)
PLUS = np.full((2, 2), 0.5, dtype=complex)


def ref_drift(rho, h, c, gamma):
    """Textbook form with explicit Lindblad dissipator."""
    comm = h @ rho - rho @ h
    cd = c.conj().T
    lind = c @ rho @ cd - 0.5 * (cd @ c @ rho + rho @ cd @ c)
    return -1j * comm + gamma * lind


def ref_diffusion(rho, c, gamma):
    cd = c.conj().T
    return np.sqrt(gamma) * (c @ rho + rho @ cd - np.trace((c + cd) @ rho) * rho)


def random_xy_hamiltonian(rng, n):
    edges = [(rng.integers(1, k), k) for k in range(2, n + 1)]
    return build_hamiltonian(RootedGraph.from_edges(edges, rng.uniform(0.5, 1.5, len(edges))), n)


# ---- drift and diffusion -------------------------------------------------


def test_drift_vanishes_on_ground_state():
    n = 3
    rho = ket_to_dm(basis_ket(0, n))
    h = build_hamiltonian(chain([1.0, 0.7]), n)
    assert np.max(np.abs(drift(rho, h, MeasurementSetup.sigma_z_first(n)))) == 0.0


def test_drift_vanishes_on_maximally_mixed_qubit():
    assert np.max(np.abs(drift(np.eye(2) / 2, None, Z1))) == 0.0


def test_drift_dephases_plus_state():
    assert np.allclose(drift(PLUS, None, Z1), [[0, -1], [-1, 0]], atol=1e-15)


def test_diffusion_examples():
    assert np.allclose(diffusion(np.eye(2) / 2, Z1), PAULI["z"])
    assert np.max(np.abs(diffusion(np.diag([1.0, 0.0]), Z1))) == 0.0


@pytest.mark.parametrize("kind", ["diag", "local", "full"])
def test_drift_and_diffusion_against_reference(kind):
    rng = np.random.default_rng(4)
    n, gamma = 3, 0.7
    h = random_xy_hamiltonian(rng, n)
    u = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))[0]
    local = PAULI["z"] if kind == "diag" else u @ PAULI["z"] @ u.conj().T
    m = MeasurementSetup.on_first_spin(local, n, gamma)
    if kind == "full":
        m = MeasurementSetup.from_matrix(m.c, gamma)
    c = m.c
    for _ in range(20):
        rho = random_density_matrix(2**n, rng)
        assert np.max(np.abs(drift(rho, h, m) - ref_drift(rho, h, c, gamma))) < 1e-13
        assert np.max(np.abs(diffusion(rho, m) - ref_diffusion(rho, c, gamma))) < 1e-13
        dw = rng.normal() * 0.03
        fused = euler_update(rho, h, m, 1e-3, dw)
        plain = rho + ref_drift(rho, h, c, gamma) * 1e-3 + ref_diffusion(rho, c, gamma) * dw
        assert np.max(np.abs(fused - plain)) < 1e-14


def test_traceless_generators_random_states():
    rng = np.random.default_rng(5)
    m = MeasurementSetup.sigma_z_first(2)
    h = random_xy_hamiltonian(rng, 2)
    rhos = np.array([random_density_matrix(4, rng) for _ in range(1000)])
    assert np.max(np.abs(np.trace(diffusion(rhos, m), axis1=1, axis2=2))) < 1e-12
    assert np.max(np.abs(np.trace(drift(rhos, h, m), axis1=1, axis2=2))) < 1e-12


def test_batched_matches_single():
    rng = np.random.default_rng(6)
    local = np.array([[0, 1], [1, 0]], dtype=complex)
    m = MeasurementSetup.on_first_spin(local, 2)
    rhos = np.array([random_density_matrix(4, rng) for _ in range(5)])
    dws = rng.normal(size=5) * 0.03
    batch = euler_update(rhos, None, m, 1e-3, dws)
    for r, w, b in zip(rhos, dws, batch):
        assert np.allclose(euler_update(r, None, m, 1e-3, w), b, atol=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        drift(np.eye(4) / 4, None, Z1)
    with pytest.raises(ValueError):
        drift(np.eye(2) / 2, np.eye(4), Z1)


@pytest.mark.parametrize(
    "op", [np.diag([1.0, 2.0]), np.array([[0, 1], [0, 0]]), 2 * PAULI["z"]]
)
def test_measurement_setup_rejects_bad_operators(op):
    with pytest.raises(ValueError):
        MeasurementSetup.on_first_spin(op, 1)


def test_measurement_setup_rejects_nonpositive_gamma():
    with pytest.raises(ValueError):
        MeasurementSetup.sigma_z_first(1, gamma=0.0)


# ---- projection ----------------------------------------------------------


def test_project_is_idempotent_on_valid_states():
    rng = np.random.default_rng(7)
    for _ in range(20):
        rho = random_density_matrix(8, rng)
        assert np.max(np.abs(project(rho) - rho)) <= 1e-14


def test_project_clips_negative_eigenvalue():
    assert np.allclose(project(np.diag([1.1, -0.1])), np.diag([1.0, 0.0]), atol=1e-15)


def test_project_hermitises():
    rng = np.random.default_rng(8)
    raw = random_density_matrix(4, rng) + 0.01 * rng.normal(size=(4, 4))
    out = project(raw)
    assert np.max(np.abs(out - out.conj().T)) <= 1e-12
    assert abs(np.trace(out) - 1) < 1e-14
    assert np.linalg.eigvalsh(out).min() >= -1e-14


@pytest.mark.parametrize("bad", [np.diag([0.3, 0.1]), np.diag([np.nan, 1.0])])
def test_project_failure(bad):
    with pytest.raises(InstabilityError):
        project(bad)


def test_project_batch_flags_only_bad_entries():
    stack = np.array([np.diag([0.5, 0.5]), np.diag([0.1, 0.1])], dtype=complex)
    out, bad = project_batch(stack)
    assert bad.tolist() == [False, True]
    assert np.allclose(out[0], np.eye(2) / 2)


# ---- stepping ------------------------------------------------------------


@pytest.mark.parametrize("dw", [-0.3, 0.0, 0.05, 1.7])
def test_ground_state_is_stationary(dw):
    n = 3
    rho = ket_to_dm(basis_ket(0, n))
    h = build_hamiltonian(chain([1.0, 0.4]), n)
    nxt, dy = step_true_system(rho, h, MeasurementSetup.sigma_z_first(n), 1e-3, dw)
    assert np.array_equal(nxt, rho)
    assert dy == pytest.approx(2e-3 + dw)


@settings(max_examples=50, deadline=None)
@given(p=st.floats(0.01, 0.99), dw=st.floats(-0.2, 0.2))
def test_qnd_keeps_states_diagonal(p, dw):
    nxt, _ = step_true_system(np.diag([p, 1 - p]).astype(complex), None, Z1, 1e-3, dw)
    assert nxt[0, 1] == 0 and nxt[1, 0] == 0


@pytest.mark.parametrize("k", [0, 1])
def test_eigenstates_absorbing(k):
    rho = ket_to_dm(basis_ket(k, 1))
    noise = NoisePath(11, k, 1e-3)
    out, rec = simulate_true_system(rho, None, Z1, 1e-3, 2000, noise)
    assert np.array_equal(out, rho)
    sign = 1 - 2 * k
    assert np.allclose(rec.dY, 2 * sign * 1e-3 + noise.increments(2000), atol=1e-15)


def test_dt_bound_enforced():
    with pytest.raises(ValueError, match="exceeds"):
        step_true_system(np.eye(2) / 2, None, Z1, 0.1, 0.0)


def test_record_matches_definition():
    n = 2
    h = build_hamiltonian(chain([1.0]), n)
    m = MeasurementSetup.sigma_z_first(n)
    noise = NoisePath(3, 0, 1e-3)
    rho0 = maximally_mixed(n)
    _, rec = simulate_true_system(rho0, h, m, 1e-3, 500, noise)
    assert np.array_equal(rec.dY, 2.0 * rec.expect_c * 1e-3 + noise.increments(500))


def test_trace_preserved_every_step():
    rng = np.random.default_rng(9)
    n = 3
    h = random_xy_hamiltonian(rng, n)
    m = MeasurementSetup.on_first_spin(np.array([[0, 1], [1, 0]]), n)
    rho = random_density_matrix(8, rng)
    for dw in NoisePath(1, 0, 1e-3).increments(3000):
        rho, _ = step_true_system(rho, h, m, 1e-3, dw)
        assert abs(np.trace(rho).real - 1.0) <= 1e-10


def _batched_qnd(paths, n_steps, dt, seed):
    rng = np.random.default_rng(seed)
    rho = np.broadcast_to(np.eye(2, dtype=complex) / 2, (paths, 2, 2)).copy()
    ez, pur = [], []
    for _ in range(n_steps):
        dw = rng.normal(size=paths) * np.sqrt(dt)
        rho, bad = project_batch(euler_update(rho, None, Z1, dt, dw))
        assert not bad.any()
        ez.append(Z1.expect(rho))
        pur.append(np.einsum("pij,pji->p", rho, rho).real)
    return np.array(ez), np.array(pur)


def test_unconditional_polarisation_stays_zero():
    ez, _ = _batched_qnd(10_000, 1000, 1e-3, 12)
    final = ez[-1]
    se = final.std(ddof=1) / np.sqrt(len(final))
    assert abs(final.mean()) <= 3 * se


def test_purity_nondecreasing_on_average():
    _, pur = _batched_qnd(1000, 2000, 1e-3, 13)
    mean = pur.mean(axis=1)[::100]
    diffs = np.diff(pur[::100], axis=0)
    se = diffs.std(axis=1, ddof=1) / np.sqrt(pur.shape[1])
    assert np.all(np.diff(mean) >= -2 * se)


def test_strong_convergence_rate():
    n = 2
    h = build_hamiltonian(chain([1.0]), n)
    m = MeasurementSetup.sigma_z_first(n)
    rng = np.random.default_rng(0)
    paths, horizon, fine = 400, 1.0, 1e-2 / 16
    dwf = rng.normal(size=(paths, int(round(horizon / fine)))) * np.sqrt(fine)
    rho0 = np.kron(PLUS, np.diag([0.3, 0.7])).astype(complex)

    def run(factor):
        dw = dwf.reshape(paths, -1, factor).sum(-1)
        rho = np.broadcast_to(rho0, (paths, 4, 4)).copy()
        for k in range(dw.shape[1]):
            rho, _ = project_batch(euler_update(rho, h, m, fine * factor, dw[:, k]))
        return m.expect(rho)

    ref = run(1)
    coarse = np.mean(np.abs(run(16) - ref))
    half = np.mean(np.abs(run(8) - ref))
    assert 1.3 <= coarse / half <= 2.3


# ---- noise ---------------------------------------------------------------


def test_noise_reproducible_from_index():
    noise = NoisePath(2024, 7, 1e-3)
    full = noise.increments(10_000)
    for k in [0, 1, 4095, 4096, 9999]:
        assert noise.increment(k) == full[k]
    assert np.array_equal(noise.increments(3000, start=3000), full[3000:6000])
    assert np.array_equal(NoisePath(2024, 7, 1e-3).increments(10_000), full)


def test_noise_paths_independent():
    a = NoisePath(1, 0, 1e-3).increments(5000)
    b = NoisePath(1, 1, 1e-3).increments(5000)
    c = NoisePath(2, 0, 1e-3).increments(5000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.05


def test_noise_is_gaussian_with_variance_dt():
    dt = 2.5e-4
    x = NoisePath(5, 3, dt).increments(20_000) / np.sqrt(dt)
    assert stats.kstest(x, "norm").pvalue > 1e-3


# ---- sector representation ----------------------------------------------


def test_sector_integration_matches_dense():
    n = 4
    rng = np.random.default_rng(10)
    layout = SectorLayout(n)
    hs = np.array([random_xy_hamiltonian(rng, n) for _ in range(3)])
    m = MeasurementSetup.sigma_z_first(n, gamma=0.8)
    dense = np.broadcast_to(maximally_mixed(n), hs.shape).copy()
    blocks = layout.split(dense)
    hb = layout.split_hamiltonian(hs)
    assert all(np.isrealobj(b) for b in hb)
    for dw in NoisePath(0, 0, 1e-3).increments(500):
        innov = dw + 0.01 * np.arange(3)
        dense, _ = project_batch(euler_update(dense, hs, m, 1e-3, innov))
        blocks, bad = layout.project(layout.euler_update(blocks, hb, 0.8, 1e-3, innov))
        assert not bad.any()
    assert np.max(np.abs(layout.join(blocks) - dense)) < 1e-12
    assert np.allclose(layout.expect_c(blocks), m.expect(dense), atol=1e-13)


def test_sector_split_join_roundtrip():
    layout = SectorLayout(5)
    rho = maximally_mixed(5)
    assert [b.shape[-1] for b in layout.split(rho)] == [1, 5, 10, 10, 5, 1]
    assert np.array_equal(layout.join(layout.split(rho)), rho)


# ---- positivity test and real products ----------------------------------


@pytest.mark.parametrize("use_gufunc", [True, False])
def test_positive_definite_mask_matches_eigenvalues(use_gufunc, monkeypatch):
    if not use_gufunc:
        monkeypatch.setattr(sme, "_cholesky_lo", None)
    rng = np.random.default_rng(11)
    stack = np.array([random_density_matrix(6, rng, rank=int(rng.integers(1, 7))) for _ in range(60)])
    stack[::7] -= 1e-6 * np.eye(6)
    truth = np.linalg.eigvalsh(stack)[:, 0] > -1e-10
    # skip the knife-edge cases the two methods may legitimately split on
    clear = np.abs(np.linalg.eigvalsh(stack)[:, 0] + 1e-10) > 1e-12
    got = positive_definite_mask(stack, 1e-10)
    assert got.shape == (60,)
    assert np.array_equal(got[clear], truth[clear])
    assert not got[::7].any()


def test_h_times_real_matches_complex_product():
    rng = np.random.default_rng(12)
    h = random_xy_hamiltonian(rng, 3)
    rho = np.array([random_density_matrix(8, rng) for _ in range(4)])
    hr = h.real  # strided view on purpose
    assert np.array_equal(h_times(hr, rho), h_times(np.ascontiguousarray(hr), rho))
    assert np.max(np.abs(h_times(hr, rho) - h @ rho)) <= 1e-14
