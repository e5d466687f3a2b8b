import numpy as np
import pytest

import kotmodes as km
from kotmodes.exact import TruncatedChainBasis, total_excitation


def test_vacuum_rabi_against_analytic():
    # decoupled chain sites (h = 0), resonant qubit-site exchange:
    # P_e(t) = cos^2(g t) on the {|e,0>, |g,1>} pair
    g = 0.2
    sys = km.SystemSpec(eps_s=1.0, coupling=g, drive_amp=0.0)
    chain = km.ChainSpec(np.array([1.0]), np.zeros(0))
    ts = np.linspace(0.0, 20.0, 81)
    occ = km.exact_evolve(sys, chain, 1, 3, ts, psi_sys=(0.0, 1.0), dt=0.05)
    assert np.abs(occ - np.cos(g * ts) ** 2).max() < 1e-8


def test_detuned_rabi_against_analytic():
    g, eps_s, eps = 0.2, 1.3, 1.0
    delta = eps_s - eps
    sys = km.SystemSpec(eps_s=eps_s, coupling=g, drive_amp=0.0)
    chain = km.ChainSpec(np.array([eps]), np.zeros(0))
    ts = np.linspace(0.0, 15.0, 61)
    occ = km.exact_evolve(sys, chain, 1, 3, ts, psi_sys=(0.0, 1.0), dt=0.002)
    omega = np.sqrt(g ** 2 + 0.25 * delta ** 2)
    ref = 1.0 - (g ** 2 / omega ** 2) * np.sin(omega * ts) ** 2
    assert np.abs(occ - ref).max() < 1e-6


def test_excitation_conservation_undriven(small_setup):
    s = small_setup
    sys0 = km.SystemSpec(eps_s=1.0, coupling=0.3, drive_amp=0.0)
    occ, psi, basis = km.exact_evolve(sys0, s["chain"], 8, 3, [0.0, 10.0, 25.0],
                                      psi_sys=(0.0, 1.0), dt=0.05,
                                      return_state=True)
    assert abs(total_excitation(psi, basis) - 1.0) < 1e-8


def test_basis_size_guard():
    with pytest.raises(ValueError, match="exceeds the"):
        TruncatedChainBasis.build(30, 30)


def test_self_convergence_small_scenario(small_setup, exact_small_curve):
    # truncation convergence: one more site and a deeper occupation cap do
    # not move the curve (boundary reflections stay beyond the horizon)
    s = small_setup
    occ2 = km.exact_evolve(s["sys"], s["chain"], 12, 5, s["grid"],
                           psi_sys=(1.0, 0.0), dt=0.02)
    assert np.abs(exact_small_curve - occ2).max() < 1e-4


def test_dt_convergence(small_setup, exact_small_curve):
    s = small_setup
    occ2 = km.exact_evolve(s["sys"], s["chain"], 11, 4, s["grid"],
                           psi_sys=(1.0, 0.0), dt=0.01)
    assert np.abs(exact_small_curve - occ2).max() < 1e-6


def test_fig_truncation_convergence(fig_setup):
    # the pinned reference truncation against one step deeper; both curves
    # use the same step so the comparison isolates the truncation
    s = fig_setup
    occ_ref = km.exact_evolve(s["sys"], s["chain"], 7, 14, s["grid"],
                              psi_sys=(1.0, 0.0), dt=0.1)
    occ_big = km.exact_evolve(s["sys"], s["chain"], 8, 16, s["grid"],
                              psi_sys=(1.0, 0.0), dt=0.1)
    assert np.abs(occ_ref - occ_big).max() < 1e-3


def test_stochastic_rho_plus_zero_time(small_setup):
    s = small_setup
    est = km.stochastic_rho_plus(s["chain"], s["traj"], 1e-6, 200, seed=1)
    assert np.abs(est).max() < 1e-4


def test_stochastic_rho_plus_single_site_linear_growth():
    chain = km.build_uniform_chain(1.0, 0.0, 10.0)
    traj = km.propagate_wavepacket(chain, 10.0, 0.01)
    n = 2000
    est = km.stochastic_rho_plus(chain, traj, 10.0, n, seed=2)
    assert abs(est[0, 0] - 10.0) <= 3.0 * 10.0 / np.sqrt(n)


def test_stochastic_rho_plus_requires_samples(small_setup):
    with pytest.raises(ValueError):
        km.stochastic_rho_plus(small_setup["chain"], small_setup["traj"], 1.0,
                               10, seed=3)
