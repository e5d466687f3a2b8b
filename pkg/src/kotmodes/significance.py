"""Statistical-significance matrices of the white-noise-driven environment.

The retarded matrix at time t is the Gram matrix of the wavepacket history,

    rho_plus(t) = int_0^t phi(tau) phi(tau)^dag dtau,

so that the quadratic form  v^dag rho_plus(t) v  is the mean occupation a
white-noise drive deposits into the orbital v up to time t, and equals the
time integral of |chi_v|^2 for the coupling amplitude chi_v = phi(t)^dag v.
The advanced matrix is the complement rho_minus(t) = rho_plus(T) - rho_plus(t).

Modes are deemed significant relative to the largest eigenvalue; eigenmode
extraction fixes phases deterministically so mode vectors are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import WavepacketTrajectory

DEFAULT_R_CUT = 1e-4
HERMITICITY_TOL = 1e-12
PSD_TOL = 1e-10


@dataclass(frozen=True)
class SignificanceMatrix:
    t: float
    basis: np.ndarray | None     # (n, k) frame the matrix is expressed in; None = site basis
    mat: np.ndarray              # (k, k) Hermitian PSD

    def __post_init__(self):
        dev = np.abs(self.mat - self.mat.conj().T).max() if self.mat.size else 0.0
        if dev > HERMITICITY_TOL:
            raise ValueError(f"matrix not Hermitian (max dev {dev:.2e})")

    def occupation(self, v: np.ndarray) -> float:
        """Mean occupation of the trial orbital v, <v| rho |v>."""
        return float(np.real(np.vdot(v, self.mat @ v)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.mat)[0]) if self.mat.size else 0.0


@dataclass(frozen=True)
class ModeSet:
    modes: np.ndarray            # (n, m) orthonormal columns
    weights: np.ndarray          # (m,) descending
    r_cut: float

    @property
    def count(self) -> int:
        return self.modes.shape[1]


def _prefix_gram(traj: WavepacketTrajectory, frame: np.ndarray | None = None) -> np.ndarray:
    """Trapezoid prefix integrals P[m] = int_0^{tau_m} g g^dag, g = frame^dag phi."""
    g = traj.phi if frame is None else frame.conj().T @ traj.phi
    k, M1 = g.shape
    P = np.empty((M1, k, k), dtype=complex)
    P[0] = 0.0
    dt = traj.dt
    prev = np.outer(g[:, 0], g[:, 0].conj())
    for m in range(1, M1):
        cur = np.outer(g[:, m], g[:, m].conj())
        P[m] = P[m - 1] + (0.5 * dt) * (prev + cur)
        prev = cur
    return P


class FrameProjection:
    """Cumulative significance integrals projected onto a fixed frame.

    Shared by the eigen-sweeps: holds prefix Gram integrals in the frame and
    interpolates them continuously in t (linear within a grid cell, which is
    the trapezoid rule with phi held linear).
    """

    def __init__(self, traj: WavepacketTrajectory, frame: np.ndarray | None = None):
        self.traj = traj
        self.frame = frame
        self.prefix = _prefix_gram(traj, frame)
        self.total = self.prefix[-1]

    def sigma_plus(self, t: float) -> np.ndarray:
        ts = self.traj.times
        if t <= 0.0:
            return np.zeros_like(self.total)
        if t >= ts[-1]:
            return self.total.copy()
        m = min(int(t / self.traj.dt), len(ts) - 2)
        f = (t - ts[m]) / (ts[m + 1] - ts[m])
        return (1.0 - f) * self.prefix[m] + f * self.prefix[m + 1]

    def sigma_minus(self, t: float) -> np.ndarray:
        return self.total - self.sigma_plus(t)


def rho_plus(traj: WavepacketTrajectory, t: float) -> SignificanceMatrix:
    """Retarded significance matrix in the site basis at time t."""
    if t < -1e-12 or t > traj.horizon + 1e-12:
        raise ValueError(f"t={t} outside trajectory range [0, {traj.horizon}]")
    proj = FrameProjection(traj)
    return SignificanceMatrix(t=float(t), basis=None, mat=proj.sigma_plus(t))


def rho_minus(traj: WavepacketTrajectory, t: float, T: float | None = None) -> SignificanceMatrix:
    """Advanced significance matrix, the exact complement of rho_plus."""
    T = traj.horizon if T is None else T
    if abs(T - traj.horizon) > 1e-12:
        raise ValueError("T must match the trajectory horizon")
    if t < -1e-12 or t > T + 1e-12:
        raise ValueError(f"t={t} outside trajectory range [0, {T}]")
    proj = FrameProjection(traj)
    return SignificanceMatrix(t=float(t), basis=None, mat=proj.sigma_minus(t))


def fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Deterministic gauge: largest-magnitude component made real positive.

    Ties in magnitude break towards the lowest index, so mode vectors are
    reproducible across runs and platforms.
    """
    out = vectors.copy()
    for k in range(out.shape[1]):
        v = out[:, k]
        mags = np.abs(v)
        i = int(np.argmax(mags - 1e-15 * np.arange(len(v))))
        if mags[i] > 0:
            out[:, k] = v * (np.conj(v[i]) / mags[i])
    return out


def significant_modes(rho: SignificanceMatrix, r_cut: float = DEFAULT_R_CUT) -> ModeSet:
    """Eigenmodes of rho above the relative threshold r_cut.

    Eigenvalues sorted descending; modes kept while pi_k / pi_1 > r_cut.
    A numerically zero matrix yields an empty ModeSet.
    """
    if not (0.0 < r_cut < 1.0):
        raise ValueError("r_cut must lie in (0, 1)")
    lam, vec = np.linalg.eigh(rho.mat)
    lam = lam[::-1]
    vec = vec[:, ::-1]
    scale = abs(lam[0]) if lam.size else 0.0
    if scale <= 0.0:
        n = rho.mat.shape[0]
        return ModeSet(np.zeros((n, 0), dtype=complex), np.zeros(0), r_cut)
    if lam[-1] < -PSD_TOL * scale:
        raise ValueError(f"matrix not PSD (min eigenvalue {lam[-1]:.2e})")
    keep = lam / lam[0] > r_cut
    m = int(keep.sum())
    modes = fix_phases(vec[:, :m])
    if rho.basis is not None:
        modes = rho.basis @ modes
    return ModeSet(modes, lam[:m].copy(), r_cut)


def principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Principal angles between the column spans of A and B (orthonormalized)."""
    Qa, _ = np.linalg.qr(A)
    Qb, _ = np.linalg.qr(B)
    sv = np.clip(np.linalg.svd(Qa.conj().T @ Qb, compute_uv=False), -1.0, 1.0)
    k = min(Qa.shape[1], Qb.shape[1])
    return np.arccos(sv[:k])
