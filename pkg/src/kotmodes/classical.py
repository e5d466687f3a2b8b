"""Classical bandlimited sampling as a covariance eigenproblem.

The ideal stationary bandlimited ensemble with flat spectrum on [-B, B]
(B in cycles per unit time) has the covariance kernel sinc(2 pi B (t - t')).
Restricted to a window [0, T] and discretized with trapezoid quadrature
(Nystrom, weights folded symmetrically so the problem stays Hermitian), its
eigenvalue ladder is flat up to roughly 2BT modes and then plunges; the
half-level count realizes the "2BT samples" law, while a deep relative
threshold also picks up the soft knee below the plateau.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PLATEAU_LEVEL = 0.5     # eigenvalue level whose count realizes the 2BT law
KNEE_LEVEL = 0.9        # modes above this sit on the flat plateau


def _sinc(x: np.ndarray) -> np.ndarray:
    out = np.ones_like(x)
    m = np.abs(x) > 1e-12
    out[m] = np.sin(x[m]) / x[m]
    return out


@dataclass
class ClassicalKernel:
    T: float
    B: float
    grid: np.ndarray
    weights: np.ndarray
    kernel: np.ndarray            # raw covariance K(t_i, t_j)
    weighted: np.ndarray          # sqrt(w) K sqrt(w), Hermitian Nystrom form

    def eigensystem(self):
        lam, V = np.linalg.eigh(self.weighted)
        return lam[::-1], V[:, ::-1]


def bandlimited_kernel(B: float, T: float, n_grid: int) -> ClassicalKernel:
    """Discretized flat-band covariance kernel on [0, T]."""
    if n_grid < 8 * B * T:
        raise ValueError(f"n_grid={n_grid} under-resolves the band (need >= {8*B*T:.0f})")
    t = np.linspace(0.0, T, int(n_grid))
    w = np.full(len(t), T / (len(t) - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    K = _sinc(2.0 * np.pi * B * (t[:, None] - t[None, :]))
    sw = np.sqrt(w)
    return ClassicalKernel(T=T, B=B, grid=t, weights=w, kernel=K,
                           weighted=sw[:, None] * K * sw[None, :])


def kotelnikov_mode_count(kernel: ClassicalKernel, r_cut: float):
    """Count and eigenmodes with pi_k / pi_1 > r_cut.

    Returned mode columns are grid samples of the continuous eigenfunctions,
    orthonormal under the quadrature inner product sum_i w_i conj(f_i) g_i.
    """
    if not (0.0 < r_cut < 1.0):
        raise ValueError("r_cut must lie in (0, 1)")
    lam, V = kernel.eigensystem()
    m = int((lam / lam[0] > r_cut).sum())
    funcs = V[:, :m] / np.sqrt(kernel.weights)[:, None]
    return m, funcs, lam


def plateau_count(kernel: ClassicalKernel, level: float = PLATEAU_LEVEL) -> int:
    """Number of eigenvalues above level * pi_1 (the half-level 2BT count)."""
    lam, _ = kernel.eigensystem()
    return int((lam / lam[0] > level).sum())


def sinc_basis(kernel: ClassicalKernel) -> np.ndarray:
    """Grid samples of sinc(2 pi B (t - t_k)) for t_k = k/(2B) inside [0, T]."""
    B, T, t = kernel.B, kernel.T, kernel.grid
    ks = np.arange(0, int(np.floor(2 * B * T)) + 1)
    cols = [_sinc(2.0 * np.pi * B * (t - k / (2.0 * B))) for k in ks]
    return np.stack(cols, axis=1)


def sinc_subspace_overlap(modes: np.ndarray, kernel: ClassicalKernel):
    """Principal angles between eigenmode and sinc subspaces.

    Both sets are orthonormalized under the quadrature inner product; when the
    dimensions differ the comparison runs on the smaller one.
    """
    sw = np.sqrt(kernel.weights)[:, None]
    Qm, _ = np.linalg.qr(sw * modes)
    S = sinc_basis(kernel)
    Qs, R = np.linalg.qr(sw * S)
    ortho_dev = np.abs(Qs.conj().T @ Qs - np.eye(Qs.shape[1])).max()
    if ortho_dev > 1e-10:
        raise RuntimeError("sinc basis orthonormalization failed")
    sv = np.clip(np.linalg.svd(Qm.conj().T @ Qs, compute_uv=False), -1.0, 1.0)
    k = min(Qm.shape[1], Qs.shape[1])
    return np.arccos(sv[:k])


def forward_sampling_counts(kernel: ClassicalKernel, r_cut: float, t_grid) -> np.ndarray:
    """Causal variant: significant-mode count of the kernel restricted to [0, t].

    Classical analog of the backward significance sweep; thresholds are
    relative to the top eigenvalue of the full-window kernel.
    """
    lam_full, _ = kernel.eigensystem()
    pi_ref = lam_full[0]
    counts = np.zeros(len(t_grid), dtype=int)
    for i, t in enumerate(np.asarray(t_grid, dtype=float)):
        sel = kernel.grid <= t + 1e-12
        if sel.sum() < 2:
            counts[i] = 0
            continue
        tt = kernel.grid[sel]
        w = np.full(sel.sum(), tt[-1] / max(sel.sum() - 1, 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        sw = np.sqrt(w)
        Kt = sw[:, None] * kernel.kernel[np.ix_(sel, sel)] * sw[None, :]
        lam = np.linalg.eigvalsh(Kt)[::-1]
        counts[i] = int((lam / pi_ref > r_cut).sum())
    return counts
