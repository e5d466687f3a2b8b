"""Brute-force oracles: exact truncated-chain evolution and the stochastic
white-noise average validating the closed significance formula.

exact_evolve integrates the full joint Hamiltonian (driven system + first n
chain sites, total occupation capped at N) with a Strang split: the number
diagonal is exponentiated exactly, the off-diagonal part (hops, coupling,
drive) by a Taylor-expanded exponential at the step midpoint.  The integrator
and step are exposed; correctness is established by self-convergence, not by
trusting defaults.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._kernels import csr_matvec_acc, csr_row_abs_sums, gather_acc
from .chain import ChainSpec, WavepacketTrajectory
from .dynamics import SystemSpec
from .fock import FockRegister
from .integrate import strang_evolve_block

MAX_JOINT_DIM = 4_000_000


@dataclass
class TruncatedChainBasis:
    """System x (n chain sites, total occupation <= N) enumeration."""

    n: int
    N: int
    register: FockRegister

    @classmethod
    def build(cls, n: int, N: int):
        from math import comb
        size = 2 * comb(N + n, n)          # checked before any enumeration
        if size > MAX_JOINT_DIM:
            raise ValueError(
                f"joint basis 2*C({N}+{n},{n}) = {size} exceeds the "
                f"supported limit {MAX_JOINT_DIM}")
        return cls(n=n, N=N, register=FockRegister(n, N))

    @property
    def size(self) -> int:
        return 2 * self.register.size


def _offdiag_csr(sys: SystemSpec, chain: ChainSpec, reg: FockRegister) -> sp.csr_matrix:
    """Hops plus system-environment coupling as one joint CSR (no diagonal)."""
    size = reg.size
    n = reg.n_modes
    hmat = np.zeros((n, n))
    for j in range(min(n - 1, len(chain.hopping))):
        hmat[j, j + 1] = chain.hopping[j]
        hmat[j + 1, j] = chain.hopping[j]
    hop = reg.hopping_csr(hmat.astype(complex))
    joint = sp.kron(sp.identity(2, format="csr"), hop, format="csr")
    g = sys.coupling
    asrc, aamp = reg.annihilation_map(0)
    csrc, camp = reg.creation_map(0)
    rows, cols, vals = [], [], []
    ok = asrc >= 0
    rows.append(size + np.where(ok)[0])
    cols.append(asrc[ok])
    vals.append(g * aamp[ok])
    ok = csrc >= 0
    rows.append(np.where(ok)[0])
    cols.append(size + csrc[ok])
    vals.append(g * camp[ok])
    coup = sp.csr_matrix((np.concatenate(vals).astype(complex),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(2 * size, 2 * size))
    return (joint + coup).tocsr()


def exact_evolve(sys: SystemSpec, chain: ChainSpec, n: int, N: int,
                 out_times, psi_sys=(1.0, 0.0), dt: float = 0.05,
                 return_state: bool = False):
    """Qubit occupation of the full truncated problem at the output times.

    Convergence in (n, N, dt) is the caller's responsibility; raise n and N
    until the curve stabilizes on the interval of interest.
    """
    basis = TruncatedChainBasis.build(n, N)
    reg = basis.register
    size = reg.size
    diag = np.concatenate([reg.occ @ chain.epsilon[:n],
                           sys.eps_s + reg.occ @ chain.epsilon[:n]])
    off = _offdiag_csr(sys, chain, reg)
    data = off.data.astype(complex)
    indices = off.indices.astype(np.int64)
    indptr = off.indptr.astype(np.int64)
    off_bound = float(csr_row_abs_sums(data, indptr).max()) if len(data) else 0.0
    x_src = np.concatenate([np.arange(size) + size, np.arange(size)]).astype(np.int64)
    x_amp = np.ones(2 * size)
    qubit_mask = np.concatenate([np.zeros(size), np.ones(size)])

    def apply_h1_at(t):
        f = sys.drive(t)

        def applyA(x):
            out = np.zeros_like(x)
            csr_matvec_acc(data, indices, indptr, x, out)
            if f != 0.0:
                gather_acc(out, x, x_src, x_amp, complex(f))
            return out

        return applyA, off_bound + abs(sys.drive_amp)

    psi = np.zeros(2 * size, dtype=complex)
    psi_sys = np.asarray(psi_sys, dtype=complex)
    psi_sys = psi_sys / np.linalg.norm(psi_sys)
    psi[reg.vacuum_index()] = psi_sys[0]
    psi[size + reg.vacuum_index()] = psi_sys[1]

    out_times = np.asarray(out_times, dtype=float)
    occ = np.empty(len(out_times))
    t_cur = 0.0
    for k, tt in enumerate(out_times):
        if tt > t_cur:
            span = tt - t_cur
            n_steps = max(1, int(np.ceil(span / dt - 1e-12)))
            psi = strang_evolve_block(psi, t_cur, float(tt), n_steps, diag, apply_h1_at)
            t_cur = float(tt)
        occ[k] = float((np.abs(psi) ** 2 * qubit_mask).sum())
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > 1e-6:
        raise RuntimeError(f"exact solver norm drift {abs(nrm-1.0):.2e}")
    if return_state:
        return occ, psi, basis
    return occ


def total_excitation(psi: np.ndarray, basis: TruncatedChainBasis) -> float:
    """<N_chain + n_qubit>, conserved by the undriven Hamiltonian."""
    reg = basis.register
    size = reg.size
    w = np.concatenate([reg.occ_total.astype(float), 1.0 + reg.occ_total])
    return float((np.abs(psi) ** 2 * w).sum())


def stochastic_rho_plus(chain: ChainSpec, traj: WavepacketTrajectory | None, t: float,
                        n_samples: int, seed: int, dt: float | None = None,
                        batch: int = 200) -> np.ndarray:
    """Monte Carlo estimate of rho_plus(t) from white-noise driven amplitudes.

    Euler-Maruyama accumulation of the driven one-particle amplitude
    beta(t) = -i int_0^t phi(tau) dz(tau); averaging the occupation matrix
    beta beta^dag over noise realizations reproduces the closed Gram-matrix
    formula to O(1/sqrt(n_samples)).
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    if traj is None:
        from .chain import propagate_wavepacket
        traj = propagate_wavepacket(chain, max(t, 1e-6), min(0.02, max(t, 1e-6) / 8))
    maxspec = float(np.abs(chain.epsilon).max()
                    + (2.0 * np.abs(chain.hopping).max() if len(chain.hopping) else 0.0))
    if dt is None:
        dt = 1e-3 / max(maxspec, 1e-12)
    M = int(np.ceil(t / dt))
    dt = t / M
    if not np.isfinite(dt) or dt <= 0:
        raise ValueError("unstable step size")
    tm = np.arange(M) * dt
    n = traj.n_sites
    phi_m = np.empty((M, n), dtype=complex)
    for k, tk in enumerate(tm):
        phi_m[k] = traj.at(tk)
    rng = np.random.Generator(np.random.Philox(key=[int(seed), 0]))
    acc = np.zeros((n, n), dtype=complex)
    done = 0
    while done < n_samples:
        b = min(batch, n_samples - done)
        dz = (rng.standard_normal((b, M)) + 1j * rng.standard_normal((b, M))) * np.sqrt(dt / 2.0)
        beta = -1j * (dz @ phi_m)
        acc += np.einsum("si,sj->ij", beta, beta.conj())
        done += b
    est = acc / n_samples
    return 0.5 * (est + est.conj().T)
