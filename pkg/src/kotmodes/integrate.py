"""Time steppers shared by the dynamics and reference solvers.

Two families:

* fixed-step RK4 with the step rule dt = min(interval/50, 0.02/maxspec) --
  the default for single-state Hilbert evolutions;
* Strang splitting, exact diagonal phases around a Taylor-expanded
  off-diagonal exponential -- used to compose dense interval propagators for
  the ensemble/density paths, and (with a Lanczos variant) by the exact
  reference solver.  These are norm-stable for arbitrarily short rotation
  intervals, where the frame generator D is large.
"""

from __future__ import annotations

import numpy as np

RK4_INTERVAL_DIVISOR = 50
RK4_SPEC_FACTOR = 0.02
TAYLOR_THETA = 0.5          # max ||H1|| * dt per Strang step
TAYLOR_TOL = 1e-10


def rk4_step_count(t0: float, t1: float, maxspec: float, dt_cap: float | None = None) -> int:
    span = t1 - t0
    if span <= 0:
        return 0
    dt = min(span / RK4_INTERVAL_DIVISOR, RK4_SPEC_FACTOR / max(maxspec, 1e-12))
    if dt_cap is not None:
        dt = min(dt, dt_cap)
    return max(1, int(np.ceil(span / dt - 1e-12)))


def rk4_evolve(apply_h, psi: np.ndarray, t0: float, t1: float, n_steps: int) -> np.ndarray:
    """Classic RK4 for i dpsi/dt = H(t) psi with n_steps fixed steps."""
    if n_steps == 0:
        return psi
    dt = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        k1 = -1j * apply_h(t, psi)
        k2 = -1j * apply_h(t + 0.5 * dt, psi + (0.5 * dt) * k1)
        k3 = -1j * apply_h(t + 0.5 * dt, psi + (0.5 * dt) * k2)
        k4 = -1j * apply_h(t + dt, psi + dt * k3)
        psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += dt
    return psi


def taylor_order(theta: float, tol: float = TAYLOR_TOL) -> int:
    """Smallest k with theta^k / k! below tol (series tail bound)."""
    k, term = 1, theta
    while term > tol and k < 60:
        k += 1
        term *= theta / k
    return k


def taylor_expm_block(apply_a, block: np.ndarray, scale: complex, order: int) -> np.ndarray:
    """exp(scale * A) applied to a vector or column block via Taylor series."""
    out = block.copy()
    term = block
    for k in range(1, order + 1):
        term = (scale / k) * apply_a(term)
        out = out + term
    return out


def strang_evolve_block(block, t0, t1, n_steps, diag, apply_h1_at):
    """Strang split exp steps: phases(dt/2) o expm(-i dt H1(t_mid)) o phases(dt/2).

    diag is the (real) diagonal part, constant over [t0, t1]; apply_h1_at(t)
    returns a closure applying the off-diagonal part frozen at time t.
    The Taylor order per step is chosen by the caller through n_steps so that
    ||H1|| * dt <= TAYLOR_THETA.
    """
    if n_steps == 0:
        return block
    dt = (t1 - t0) / n_steps
    half = np.exp(-0.5j * dt * diag)
    phase_shape = half[:, None] if block.ndim == 2 else half
    t = t0
    for _ in range(n_steps):
        applyA, theta = apply_h1_at(t + 0.5 * dt)
        order = taylor_order(max(theta * dt, 1e-6))
        block = phase_shape * block
        block = taylor_expm_block(applyA, block, -1j * dt, order)
        block = phase_shape * block
        t += dt
    return block


def lanczos_expm(apply_h, psi: np.ndarray, dt: float, m: int = 16) -> np.ndarray:
    """exp(-i dt H) psi for Hermitian H via an m-step Lanczos recursion.

    Early breakdown (beta ~ 0) truncates the basis, which makes near-eigenstate
    inputs exact.
    """
    nrm = np.linalg.norm(psi)
    if nrm == 0.0:
        return psi
    V = [psi / nrm]
    alpha, beta = [], []
    for j in range(m):
        w = apply_h(V[j])
        a = np.real(np.vdot(V[j], w))
        alpha.append(a)
        w = w - a * V[j]
        if j > 0:
            w = w - beta[-1] * V[j - 1]
        # one reorthogonalization pass keeps the small basis clean
        for u in V[-2:]:
            w = w - np.vdot(u, w) * u
        b = np.linalg.norm(w)
        if b < 1e-13 * max(abs(a), 1.0):
            break
        beta.append(b)
        V.append(w / b)
    k = len(alpha)
    T = np.diag(np.array(alpha, dtype=float))
    if k > 1:
        off = np.array(beta[:k - 1], dtype=float)
        T += np.diag(off, 1) + np.diag(off, -1)
    w, Q = np.linalg.eigh(T)
    coef = Q @ (np.exp(-1j * dt * w) * Q[0, :].conj())
    out = np.zeros_like(psi)
    for j in range(k):
        out += coef[j] * V[j]
    return nrm * out
