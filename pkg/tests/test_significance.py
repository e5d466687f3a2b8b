import numpy as np
import pytest

import kotmodes as km
from kotmodes.significance import FrameProjection, fix_phases


@pytest.fixture(scope="module")
def traj():
    chain = km.build_uniform_chain(1.0, 0.05, 60.0)
    return km.propagate_wavepacket(chain, 60.0, 0.02)


def test_rho_plus_zero_at_t0(traj):
    m = km.rho_plus(traj, 0.0)
    assert np.abs(m.mat).max() == 0.0


def test_single_site_occupation_grows_linearly():
    chain = km.build_uniform_chain(1.0, 0.0, 10.0)
    tr = km.propagate_wavepacket(chain, 10.0, 0.01)
    for t in (0.5, 3.0, 10.0):
        m = km.rho_plus(tr, t)
        assert m.mat.shape == (1, 1)
        assert abs(m.mat[0, 0] - t) < 1e-10


def test_hermitian_psd_and_occupation(traj):
    m = km.rho_plus(traj, 37.0)
    assert np.abs(m.mat - m.mat.conj().T).max() < 1e-12
    lam = np.linalg.eigvalsh(m.mat)
    assert lam[0] > -1e-10 * lam[-1]
    v = np.zeros(traj.n_sites, dtype=complex)
    v[0] = 1.0
    n0 = m.occupation(v)
    # site-0 occupation equals the integral of |phi_0|^2
    dt = traj.dt
    k = int(round(37.0 / dt))
    ref = np.trapezoid(np.abs(traj.phi[0, :k + 1]) ** 2, dx=dt)
    assert abs(n0 - ref) < 1e-10


def test_complementarity_machine_precision(traj):
    T = traj.horizon
    full = km.rho_plus(traj, T).mat
    for t in (0.0, 13.7, 29.0, T):
        a = km.rho_plus(traj, t).mat
        b = km.rho_minus(traj, t).mat
        assert np.abs(a + b - full).max() < 1e-12 * max(np.abs(full).max(), 1.0)


def test_rho_minus_limits(traj):
    T = traj.horizon
    assert np.abs(km.rho_minus(traj, T).mat).max() < 1e-14
    assert np.abs(km.rho_minus(traj, 0.0).mat - km.rho_plus(traj, T).mat).max() == 0.0
    with pytest.raises(ValueError):
        km.rho_plus(traj, T + 1.0)


def test_eigenvalue_monotonicity_in_time(traj):
    # Loewner monotonicity: each sorted eigenvalue nondecreasing in t
    times = np.linspace(5.0, traj.horizon, 12)
    prev = None
    proj = FrameProjection(traj)
    for t in times:
        lam = np.linalg.eigvalsh(proj.sigma_plus(t))
        if prev is not None:
            assert np.all(lam - prev > -1e-10 * max(lam[-1], 1.0))
        prev = lam


def test_significant_modes_single_site():
    chain = km.build_uniform_chain(1.0, 0.0, 10.0)
    tr = km.propagate_wavepacket(chain, 10.0, 0.01)
    ms = km.significant_modes(km.rho_plus(tr, 5.0), 1e-4)
    assert ms.count == 1
    assert abs(abs(ms.modes[0, 0]) - 1.0) < 1e-12


def test_significant_modes_scaling_invariance(traj):
    m = km.rho_plus(traj, traj.horizon)
    a = km.significant_modes(m, 1e-4)
    scaled = km.SignificanceMatrix(t=m.t, basis=None, mat=7.3 * m.mat)
    b = km.significant_modes(scaled, 1e-4)
    assert a.count == b.count
    assert np.abs(a.modes - b.modes).max() < 1e-9
    assert np.abs(7.3 * a.weights - b.weights).max() < 1e-8 * b.weights[0]


def test_significant_modes_empty_for_zero_matrix():
    z = km.SignificanceMatrix(t=0.0, basis=None, mat=np.zeros((4, 4), dtype=complex))
    ms = km.significant_modes(z, 0.5)
    assert ms.count == 0


def test_mode_orthonormality_and_phase_gauge(traj):
    ms = km.significant_modes(km.rho_plus(traj, traj.horizon), 1e-4)
    G = ms.modes.conj().T @ ms.modes
    assert np.abs(G - np.eye(ms.count)).max() < 1e-10
    for k in range(ms.count):
        i = np.argmax(np.abs(ms.modes[:, k]))
        z = ms.modes[i, k]
        assert abs(z.imag) < 1e-10 and z.real > 0
    # weights sorted descending and above the cut
    assert np.all(np.diff(ms.weights) <= 0)
    assert ms.weights[-1] / ms.weights[0] > 1e-4


def test_mode_subspace_stable_under_grid_refinement():
    chain = km.build_uniform_chain(1.0, 0.05, 60.0)
    t1 = km.propagate_wavepacket(chain, 60.0, 0.04)
    t2 = km.propagate_wavepacket(chain, 60.0, 0.02)
    m1 = km.significant_modes(km.rho_plus(t1, 60.0), 1e-4)
    m2 = km.significant_modes(km.rho_plus(t2, 60.0), 1e-4)
    assert m1.count == m2.count
    ang = km.principal_angles(m1.modes, m2.modes)
    assert ang.max() < 1e-3


def test_fix_phases_deterministic():
    rng = np.random.default_rng(7)
    V = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    V, _ = np.linalg.qr(V)
    W = fix_phases(V * np.exp(1j * rng.uniform(0, 2 * np.pi, 3)))
    W2 = fix_phases(V)
    assert np.abs(W - W2).max() < 1e-12


def test_stochastic_oracle_cross_check(traj):
    # Monte Carlo white-noise average vs the closed Gram formula
    chain = km.build_uniform_chain(1.0, 0.05, 60.0)
    est = km.stochastic_rho_plus(chain, traj, traj.horizon, 900, seed=5)
    ref = km.rho_plus(traj, traj.horizon).mat
    err = np.linalg.norm(est - ref)
    assert err <= 3.0 * np.linalg.norm(ref) / np.sqrt(900)
