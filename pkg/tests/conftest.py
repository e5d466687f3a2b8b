import numpy as np
import pytest

import kotmodes as km

FIG = dict(eps=1.0, h=0.05, T=100.0, r_cut=1e-4, eps_s=1.0, drive_amp=0.1,
           drive_freq=1.0, n_max=6, dt_grid=0.02)
SMALL = dict(eps=1.0, h=0.3, T=25.0, r_cut=1e-4, eps_s=1.0, drive_amp=0.1,
             drive_freq=1.0, n_max=4, dt_grid=0.02)


def _setup(p):
    chain = km.build_uniform_chain(p["eps"], p["h"], p["T"])
    traj = km.propagate_wavepacket(chain, p["T"], p["dt_grid"])
    inc = km.extract_incoming(traj, p["T"], p["r_cut"], km.default_dt_event(p["h"]))
    streams = km.extract_outgoing(traj, inc)
    sched = km.build_effective_schedule(traj, streams)
    sysspec = km.SystemSpec(eps_s=p["eps_s"], coupling=p["h"],
                            drive_amp=p["drive_amp"], drive_freq=p["drive_freq"])
    return dict(p=p, chain=chain, traj=traj, incoming=inc, streams=streams,
                schedule=sched, sys=sysspec,
                grid=np.arange(0.0, p["T"] + 1e-9, 0.5))


@pytest.fixture(scope="session")
def small_setup():
    return _setup(SMALL)


@pytest.fixture(scope="session")
def fig_setup():
    return _setup(FIG)


@pytest.fixture(scope="session")
def exact_fig_curve(fig_setup):
    """Brute-force (n=7, N=14) reference for the driven-qubit scenario."""
    s = fig_setup
    occ = km.exact_evolve(s["sys"], s["chain"], 7, 14, s["grid"],
                          psi_sys=(1.0, 0.0), dt=0.05)
    return occ


@pytest.fixture(scope="session")
def exact_small_curve(small_setup):
    """Converged exact curve for the fast scenario (chain long enough that
    boundary reflections stay clear of the horizon)."""
    s = small_setup
    return km.exact_evolve(s["sys"], s["chain"], 11, 4, s["grid"],
                           psi_sys=(1.0, 0.0), dt=0.02)
