"""Joint evolution of the driven system and the relevant-mode register.

The register layout follows the schedule: a vacuum slot is appended at every
coupling event, and after the rotation generator has acted across a
decoupling interval, slot 0 of the register holds the outgoing mode and is
detached (measured, sampled, or traced out by the caller's handler).
Remaining slots shift down, preserving order.

The Hamiltonian action is assembled from gather tables (ladder operators
move basis states to unique partners) plus one CSR block for the rotation
generator, so no dense matrix is materialized on the single-state paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._kernels import csr_matvec_acc, csr_row_abs_sums, gather_acc, gather_acc_block
from .chain import WavepacketTrajectory
from .fock import FockRegister
from .integrate import (rk4_evolve, rk4_step_count, strang_evolve_block,
                        TAYLOR_THETA)
from .schedule import EffectiveSchedule, Interval, MIN_ROTATION_DT
from .streams import ModeStreams

NORM_TOL = 1e-6


@dataclass(frozen=True)
class SystemSpec:
    """Driven qubit coupled through V = coupling * sigma_minus."""

    eps_s: float
    coupling: float
    drive_amp: float = 0.0
    drive_freq: float = 1.0

    @property
    def dim(self) -> int:
        return 2

    def drive(self, t: float) -> float:
        return self.drive_amp * np.cos(self.drive_freq * t)

    def h_s(self, t: float) -> np.ndarray:
        """Dense 2x2 system Hamiltonian (basis: ground, excited)."""
        f = self.drive(t)
        return np.array([[0.0, f], [f, self.eps_s]], dtype=complex)


@dataclass
class JointState:
    amps: np.ndarray
    t: float
    n_modes: int
    n_max: int

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def to_text(self) -> str:
        lines = [f"kotmodes-state v1 t {float(self.t)!r} "
                 f"n_modes {self.n_modes} n_max {self.n_max} dim {len(self.amps)}"]
        lines += [f"{float(z.real)!r} {float(z.imag)!r}" for z in self.amps]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "JointState":
        lines = text.splitlines()
        head = lines[0].split()
        if head[0] != "kotmodes-state":
            raise ValueError("not a kotmodes state checkpoint")
        t, n_modes, n_max, dim = float(head[3]), int(head[5]), int(head[7]), int(head[9])
        amps = np.zeros(dim, dtype=complex)
        for i in range(dim):
            re, im = lines[1 + i].split()
            amps[i] = complex(float(re), float(im))
        return cls(amps=amps, t=t, n_modes=n_modes, n_max=n_max)


@dataclass
class RelevantDensity:
    rho: np.ndarray
    t: float
    n_modes: int
    n_max: int

    def validate(self, tol: float = 1e-8):
        if abs(np.trace(self.rho).real - 1.0) > tol:
            raise RuntimeError("density matrix trace drifted")
        dev = np.abs(self.rho - self.rho.conj().T).max()
        if dev > tol:
            raise RuntimeError("density matrix not Hermitian")
        return self


class ChiTable:
    """Linear-in-time interpolation of sampled coupling amplitudes."""

    def __init__(self, times: np.ndarray, values: np.ndarray):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=complex)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def at(self, t: float) -> np.ndarray:
        ts = self.times
        if len(ts) == 1 or t <= ts[0]:
            return self.values[0]
        if t >= ts[-1]:
            return self.values[-1]
        i = min(max(int(np.searchsorted(ts, t, side="right")) - 1, 0), len(ts) - 2)
        f = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1.0 - f) * self.values[i] + f * self.values[i + 1]

    def abs_max(self) -> np.ndarray:
        if self.values.size == 0:
            return np.zeros(self.n_channels)
        return np.abs(self.values).max(axis=0)


class LayoutOps:
    """Joint (system x register) operator tables for a fixed slot count."""

    def __init__(self, sys: SystemSpec, n_modes: int, n_max: int):
        self.sys = sys
        self.reg = FockRegister(n_modes, n_max)
        size = self.reg.size
        self.size = size
        self.dim = 2 * size
        self.diag_base = np.concatenate([np.zeros(size), np.full(size, sys.eps_s)])
        self.occ_joint = np.concatenate([self.reg.occ_total, self.reg.occ_total]).astype(float)
        self.qubit_mask = np.concatenate([np.zeros(size), np.ones(size)])
        # sigma_x drive: swaps system blocks
        self.x_src = np.concatenate([np.arange(size) + size, np.arange(size)]).astype(np.int64)
        self.x_amp = np.ones(self.dim)
        g = sys.coupling
        self.a_src, self.a_amp = [], []      # V^dag kappa_l = g sigma_+ a_l
        self.ad_src, self.ad_amp = [], []    # V kappa_l^dag = g sigma_- a_l^dag
        for l in range(n_modes):
            asrc, aamp = self.reg.annihilation_map(l)
            csrc, camp = self.reg.creation_map(l)
            src = np.full(self.dim, -1, dtype=np.int64)
            amp = np.zeros(self.dim)
            ok = asrc >= 0
            src[size + np.where(ok)[0]] = asrc[ok]
            amp[size + np.where(ok)[0]] = g * aamp[ok]
            self.a_src.append(src)
            self.a_amp.append(amp)
            src = np.full(self.dim, -1, dtype=np.int64)
            amp = np.zeros(self.dim)
            ok = csrc >= 0
            src[np.where(ok)[0]] = size + csrc[ok]
            amp[np.where(ok)[0]] = g * camp[ok]
            self.ad_src.append(src)
            self.ad_amp.append(amp)

    def vacuum_joint(self, psi_sys: np.ndarray) -> np.ndarray:
        amps = np.zeros(self.dim, dtype=complex)
        v = self.reg.vacuum_index()
        amps[v] = psi_sys[0]
        amps[self.size + v] = psi_sys[1]
        return amps

    def qubit_occupation(self, amps: np.ndarray) -> float:
        return float((np.abs(amps) ** 2 * self.qubit_mask).sum())

    def relevant_occupation(self, amps: np.ndarray) -> float:
        return float((np.abs(amps) ** 2 * self.occ_joint).sum())

    def rotation_hamiltonian(self, D: np.ndarray):
        """(diagonal vector, joint CSR) of -sum_lk D_lk kappa_k^dag kappa_l.

        The one-particle matrix entering dGamma is h = -D^T; its diagonal
        joins the phase diagonal, the rest becomes a CSR block.
        """
        h = -D.T
        ddiag = np.real(np.diag(h))
        diag = np.concatenate([self.reg.occ @ ddiag] * 2)
        h_off = h - np.diag(np.diag(h))
        hop = self.reg.hopping_csr(h_off)
        joint = sp.kron(sp.identity(2, format="csr"), hop, format="csr")
        return diag, (joint.data.astype(complex), joint.indices.astype(np.int64),
                      joint.indptr.astype(np.int64))


_layout_cache: dict = {}


def get_layout(sys: SystemSpec, n_modes: int, n_max: int) -> LayoutOps:
    key = (sys.eps_s, sys.coupling, n_modes, n_max)
    if key not in _layout_cache:
        _layout_cache[key] = LayoutOps(sys, n_modes, n_max)
    return _layout_cache[key]


class HEffAction:
    """Action of the moving-frame Hamiltonian on one interval."""

    def __init__(self, sys: SystemSpec, layout: LayoutOps, chi: ChiTable,
                 D: np.ndarray | None = None):
        if chi.n_channels != layout.reg.n_modes:
            raise ValueError("chi channel count does not match the register layout")
        self.sys = sys
        self.layout = layout
        self.chi = chi
        self.D = D
        self.diag = layout.diag_base.copy()
        self.hop = None
        if D is not None and layout.reg.n_modes > 0:
            ddiag, hop = layout.rotation_hamiltonian(D)
            self.diag = self.diag + ddiag
            if len(hop[0]):
                self.hop = hop
        self._hop_rowsum = 0.0
        if self.hop is not None:
            data, indices, indptr = self.hop
            self._hop_rowsum = float(csr_row_abs_sums(data, indptr).max())

    def coefficients(self, t: float):
        return self.sys.drive(t), self.chi.at(t)

    def apply(self, t: float, x: np.ndarray) -> np.ndarray:
        """H(t) x including the diagonal."""
        out = self.diag * x
        self._accumulate_offdiag(t, x, out)
        return out

    def _accumulate_offdiag(self, t, x, out):
        f, chi = self.coefficients(t)
        if f != 0.0:
            gather_acc(out, x, self.layout.x_src, self.layout.x_amp, complex(f))
        for l in range(self.layout.reg.n_modes):
            c = complex(chi[l])
            if c != 0.0:
                gather_acc(out, x, self.layout.a_src[l], self.layout.a_amp[l], c)
                gather_acc(out, x, self.layout.ad_src[l], self.layout.ad_amp[l], np.conj(c))
        if self.hop is not None:
            data, indices, indptr = self.hop
            csr_matvec_acc(data, indices, indptr, x, out)

    def offdiag_bound(self) -> float:
        """Row-sum bound on the off-diagonal part (Taylor step control)."""
        g_amp = np.sqrt(self.layout.reg.n_max) if self.layout.reg.n_modes else 0.0
        chi_sum = float(self.chi.abs_max().sum()) * abs(self.sys.coupling) * max(g_amp, 1.0)
        return abs(self.sys.drive_amp) + chi_sum + self._hop_rowsum

    def maxspec(self) -> float:
        return float(np.abs(self.diag).max() + self.offdiag_bound())

    # --- block interface (ensemble and density paths) ---

    def apply_h1_block(self, t: float):
        f, chi = self.coefficients(t)
        lay = self.layout

        def applyA(B):
            out = np.zeros_like(B)
            if f != 0.0:
                gather_acc_block(out, B, lay.x_src, lay.x_amp, complex(f))
            for l in range(lay.reg.n_modes):
                c = complex(chi[l])
                if c != 0.0:
                    gather_acc_block(out, B, lay.a_src[l], lay.a_amp[l], c)
                    gather_acc_block(out, B, lay.ad_src[l], lay.ad_amp[l], np.conj(c))
            if self.hop is not None:
                data, indices, indptr = self.hop
                for j in range(B.shape[1]):
                    csr_matvec_acc(data, indices, indptr,
                                   np.ascontiguousarray(B[:, j]), out[:, j])
            return out

        return applyA, self.offdiag_bound()

    def strang_block(self, block: np.ndarray, t0: float, t1: float,
                     dt_target: float) -> np.ndarray:
        span = t1 - t0
        if span <= 0:
            return block
        theta = max(self.offdiag_bound(), 1e-12)
        dt = min(dt_target, TAYLOR_THETA / theta, span)
        n = max(1, int(np.ceil(span / dt - 1e-12)))
        return strang_evolve_block(block, t0, t1, n, self.diag, self.apply_h1_block)

    def gap_propagator(self, t0: float, t1: float, dt_target: float) -> np.ndarray:
        eye = np.eye(self.layout.dim, dtype=complex)
        return self.strang_block(eye, t0, t1, dt_target)


def apply_h_eff(t: float, schedule: EffectiveSchedule, sys: SystemSpec,
                state: JointState) -> np.ndarray:
    """H_eff(t) |state> for the schedule interval containing t."""
    iv = schedule.interval_at(t)
    if iv.r != state.n_modes:
        raise ValueError(f"register layout mismatch: interval r={iv.r}, "
                         f"state has {state.n_modes} slots")
    layout = get_layout(sys, iv.r, state.n_max)
    act = HEffAction(sys, layout, ChiTable(iv.chi_times, iv.chi), iv.D)
    return act.apply(t, state.amps)


def frame_rotation_unitary(layout: LayoutOps, U: np.ndarray) -> np.ndarray:
    """Dense register unitary of an instantaneous frame rotation U.

    Equals the zero-length limit of evolving the rotation generator; used
    only when a decoupling interval has (numerically) no duration.
    """
    import scipy.linalg
    Tmat, Q = scipy.linalg.schur(U, output="complex")
    D1 = Q @ np.diag(-np.angle(np.diag(Tmat))) @ Q.conj().T
    D1 = 0.5 * (D1 + D1.conj().T)
    ddiag, (data, indices, indptr) = layout.rotation_hamiltonian(D1)
    H = np.diag(ddiag.astype(complex))
    H += sp.csr_matrix((data, indices, indptr), shape=(layout.dim, layout.dim)).toarray()
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * w)) @ V.conj().T


@dataclass
class ObservableSeries:
    t: np.ndarray
    qubit: np.ndarray
    relevant: np.ndarray
    detached: np.ndarray
    m_in: np.ndarray
    m_out: np.ndarray
    r: np.ndarray


def observables(state, layout: LayoutOps) -> dict:
    """Occupation observables of a JointState or RelevantDensity."""
    if isinstance(state, JointState):
        return {
            "qubit_occupation": layout.qubit_occupation(state.amps),
            "relevant_occupation": layout.relevant_occupation(state.amps),
        }
    rho = state.rho
    diag = np.real(np.diag(rho))
    return {
        "qubit_occupation": float((diag * layout.qubit_mask).sum()),
        "relevant_occupation": float((diag * layout.occ_joint).sum()),
    }


def grow_state(amps: np.ndarray, layout: LayoutOps, layout_big: LayoutOps) -> np.ndarray:
    """Append a vacuum slot: embed amplitudes into the r+1 register."""
    gmap = layout.reg.grow_map()
    out = np.zeros(layout_big.dim, dtype=complex)
    out[gmap] = amps[:layout.size]
    out[layout_big.size + gmap] = amps[layout.size:]
    return out


def detach_permutation(layout: LayoutOps, layout_red: LayoutOps):
    """Joint index tables splitting slot 0 out of the register.

    Returns (rows, cols): joint index i maps to matrix entry
    (rows[i], cols[i]) of the (2*rest_size, n_max+1) bipartite unfolding.
    """
    rest, rest_idx, n0 = layout.reg.detach_maps()
    if rest.size != layout_red.size:
        raise ValueError("reduced layout does not match")
    size = layout.size
    rows = np.concatenate([rest_idx, layout_red.size + rest_idx])
    cols = np.concatenate([n0, n0])
    return rows, cols


def unfold_for_detach(amps: np.ndarray, layout: LayoutOps, layout_red: LayoutOps) -> np.ndarray:
    """(2*rest_size) x (n_max+1) matrix whose SVD is the detachment Schmidt split."""
    rows, cols = detach_permutation(layout, layout_red)
    M = np.zeros((2 * layout_red.size, layout.reg.n_max + 1), dtype=complex)
    M[rows, cols] = amps
    return M


def trace_out_detached(state: JointState, sys: SystemSpec, slot: int = 0) -> RelevantDensity:
    """Partial trace over the detaching slot (mixed-state path).

    After the rotation generator has acted, the outgoing mode always sits in
    slot 0; other slots are not detachable.
    """
    if slot != 0:
        raise ValueError("only slot 0 detaches (the rotated outgoing mode)")
    layout = get_layout(sys, state.n_modes, state.n_max)
    layout_red = get_layout(sys, state.n_modes - 1, state.n_max)
    M = unfold_for_detach(state.amps, layout, layout_red)
    rho = M @ M.conj().T
    return RelevantDensity(rho=rho, t=state.t, n_modes=state.n_modes - 1,
                           n_max=state.n_max)


def trace_out_detached_density(rho: np.ndarray, layout: LayoutOps,
                               layout_red: LayoutOps) -> np.ndarray:
    rows, cols = detach_permutation(layout, layout_red)
    K = layout.reg.n_max + 1
    big = np.zeros((2 * layout_red.size, K, 2 * layout_red.size, K), dtype=complex)
    big[rows[:, None], cols[:, None], rows[None, :], cols[None, :]] = rho
    return np.einsum("akbk->ab", big)


def grow_density(rho: np.ndarray, layout: LayoutOps, layout_big: LayoutOps) -> np.ndarray:
    gmap = layout.reg.grow_map()
    jmap = np.concatenate([gmap, layout_big.size + gmap])
    out = np.zeros((layout_big.dim, layout_big.dim), dtype=complex)
    out[np.ix_(jmap, jmap)] = rho
    return out


def _interval_action(sys, iv: Interval, n_max: int) -> HEffAction:
    layout = get_layout(sys, iv.r, n_max)
    return HEffAction(sys, layout, ChiTable(iv.chi_times, iv.chi), iv.D)


def evolve_moving_frame(sys: SystemSpec, schedule: EffectiveSchedule,
                        psi_sys: np.ndarray, n_max: int, out_times,
                        detach_handler=None, dt_cap: float | None = None,
                        collect_states: bool = False):
    """Integrate the moving-frame dynamics across the whole schedule.

    detach_handler(amps, layout, layout_red, t, k_out) -> (amps_red, n_detached, info)
    decides what happens to the detaching slot; callers pick Monte Carlo
    sampling (jumps module) or the density path (evolve_density) explicitly.

    If the weight sitting on the full-occupation shell of the register grows
    beyond overflow_tol, the occupation truncation is exceeded and the run
    aborts reporting the leaked weight.
    """
    if detach_handler is None:
        raise ValueError("evolve_moving_frame needs a detach handler "
                         "(Monte Carlo sampling or the density path)")
    overflow_tol = 0.05
    out_times = np.asarray(out_times, dtype=float)
    psi_sys = np.asarray(psi_sys, dtype=complex)
    psi_sys = psi_sys / np.linalg.norm(psi_sys)

    layout = get_layout(sys, schedule.intervals[0].r, n_max)
    amps = layout.vacuum_joint(psi_sys) if layout.reg.n_modes == 0 else None
    if amps is None:
        # schedules normally start with r = 0; handle nonzero starts anyway
        amps = np.zeros(layout.dim, dtype=complex)
        amps[layout.reg.vacuum_index()] = psi_sys[0]
        amps[layout.size + layout.reg.vacuum_index()] = psi_sys[1]

    detached = 0.0
    k_out = 0
    infos = []
    states = []
    rec = {"t": [], "qubit": [], "relevant": [], "detached": [],
           "m_in": [], "m_out": [], "r": []}
    m_in_now = schedule.intervals[0].r
    m_out_now = 0
    io_idx = 0

    def record(t):
        rec["t"].append(t)
        rec["qubit"].append(layout.qubit_occupation(amps))
        rec["relevant"].append(layout.relevant_occupation(amps))
        rec["detached"].append(detached)
        rec["m_in"].append(m_in_now)
        rec["m_out"].append(m_out_now)
        rec["r"].append(layout.reg.n_modes)
        if collect_states:
            states.append(JointState(amps.copy(), t, layout.reg.n_modes, n_max))

    while io_idx < len(out_times) and out_times[io_idx] <= schedule.intervals[0].t0 + 1e-12:
        record(float(out_times[io_idx]))
        io_idx += 1

    for iv in schedule.intervals:
        act = _interval_action(sys, iv, n_max)
        t_cur = iv.t0
        targets = [float(x) for x in out_times[io_idx:] if iv.t0 < x < iv.t1 - 1e-12]
        for tt in targets + [iv.t1]:
            n = rk4_step_count(t_cur, tt, act.maxspec(), dt_cap)
            amps = rk4_evolve(act.apply, amps, t_cur, tt, n)
            top = layout.reg.occ_total == n_max
            leak = float((np.abs(amps[:layout.size][top]) ** 2).sum()
                         + (np.abs(amps[layout.size:][top]) ** 2).sum())
            if leak > overflow_tol:
                raise RuntimeError(
                    f"register overflow at t={tt:.3f}: weight {leak:.3e} on the "
                    f"occupation cap n_max={n_max}; raise n_max")
            t_cur = tt
            if tt != iv.t1:
                record(tt)
                io_idx += 1
        # interval end
        if iv.end_kind == "coupling":
            layout_big = get_layout(sys, iv.r + 1, n_max)
            amps = grow_state(amps, layout, layout_big)
            layout = layout_big
            m_in_now += 1
        elif iv.end_kind == "decoupling":
            if iv.D is None and iv.U_end is not None and iv.length <= MIN_ROTATION_DT:
                amps = frame_rotation_unitary(layout, iv.U_end) @ amps
            nrm = np.linalg.norm(amps)
            if abs(nrm - 1.0) > NORM_TOL:
                raise RuntimeError(f"norm drift {abs(nrm-1):.2e} before detachment")
            layout_red = get_layout(sys, iv.r - 1, n_max)
            amps, n_det, info = detach_handler(amps, layout, layout_red, iv.t1, k_out)
            detached += n_det
            infos.append(info)
            layout = layout_red
            m_out_now += 1
            k_out += 1
        while io_idx < len(out_times) and out_times[io_idx] <= iv.t1 + 1e-12:
            record(float(out_times[io_idx]))
            io_idx += 1

    series = ObservableSeries(**{k: np.asarray(v) for k, v in rec.items()})
    final = JointState(amps, schedule.horizon, layout.reg.n_modes, n_max)
    return series, final, infos, states


def evolve_forward_frame(sys: SystemSpec, traj: WavepacketTrajectory,
                         incoming: ModeStreams, psi_sys: np.ndarray, n_max: int,
                         out_times, dt_cap: float | None = None,
                         collect_states: bool = False):
    """Incoming-frame evolution: all modes present, no rotations.

    The register is sized to m_in(T) from the start; couplings to modes that
    have not yet coupled are below the significance cut by construction.
    """
    V_in = incoming.incoming_modes()
    m = V_in.shape[1]
    chi_grid = np.conj(traj.phi.T) @ V_in          # (M+1, m)
    chi = ChiTable(traj.times, chi_grid)
    layout = get_layout(sys, m, n_max)
    act = HEffAction(sys, layout, chi, None)
    psi_sys = np.asarray(psi_sys, dtype=complex)
    psi_sys = psi_sys / np.linalg.norm(psi_sys)
    amps = layout.vacuum_joint(psi_sys)
    out_times = np.asarray(out_times, dtype=float)
    rec_t, rec_q, rec_rel = [], [], []
    states = []
    t_cur = 0.0
    maxspec = act.maxspec()
    for tt in out_times:
        if tt > t_cur:
            n = rk4_step_count(t_cur, tt, maxspec, dt_cap)
            amps = rk4_evolve(act.apply, amps, t_cur, float(tt), n)
            t_cur = float(tt)
        rec_t.append(t_cur)
        rec_q.append(layout.qubit_occupation(amps))
        rec_rel.append(layout.relevant_occupation(amps))
        if collect_states:
            states.append(JointState(amps.copy(), t_cur, m, n_max))
        nrm = np.linalg.norm(amps)
        if abs(nrm - 1.0) > NORM_TOL:
            raise RuntimeError(f"norm drift {abs(nrm-1.0):.2e} at t={t_cur}")
    series = ObservableSeries(t=np.asarray(rec_t), qubit=np.asarray(rec_q),
                              relevant=np.asarray(rec_rel),
                              detached=np.zeros(len(rec_t)),
                              m_in=np.array([incoming.m_in(t) for t in rec_t]),
                              m_out=np.zeros(len(rec_t), dtype=int),
                              r=np.array([incoming.m_in(t) for t in rec_t]))
    return series, JointState(amps, t_cur, m, n_max), states


def evolve_density(sys: SystemSpec, schedule: EffectiveSchedule,
                   psi_sys: np.ndarray, n_max: int, out_times,
                   dt_target: float = 0.05):
    """Mixed-state path: detached modes are traced out as they appear.

    Propagates rho across each interval with dense gap propagators (the von
    Neumann equation conjugates rho by the interval propagator), which is
    exactly the unitary interval evolution of the pure path.
    """
    psi_sys = np.asarray(psi_sys, dtype=complex)
    psi_sys = psi_sys / np.linalg.norm(psi_sys)
    layout = get_layout(sys, schedule.intervals[0].r, n_max)
    amps = layout.vacuum_joint(psi_sys)
    rho = np.outer(amps, amps.conj())
    out_times = np.asarray(out_times, dtype=float)
    detached = 0.0
    rec = {"t": [], "qubit": [], "relevant": [], "detached": []}
    checkpoints = []
    io_idx = 0

    def record(t):
        diag = np.real(np.diag(rho))
        rec["t"].append(t)
        rec["qubit"].append(float((diag * layout.qubit_mask).sum()))
        rec["relevant"].append(float((diag * layout.occ_joint).sum()))
        rec["detached"].append(detached)
        checkpoints.append(RelevantDensity(rho.copy(), t, layout.reg.n_modes, n_max))

    while io_idx < len(out_times) and out_times[io_idx] <= schedule.intervals[0].t0 + 1e-12:
        record(float(out_times[io_idx]))
        io_idx += 1

    for iv in schedule.intervals:
        act = _interval_action(sys, iv, n_max)
        t_cur = iv.t0
        targets = [float(x) for x in out_times[io_idx:] if iv.t0 < x < iv.t1 - 1e-12]
        for tt in targets + [iv.t1]:
            if tt > t_cur:
                P = act.gap_propagator(t_cur, tt, dt_target)
                rho = P @ rho @ P.conj().T
            t_cur = tt
            if tt != iv.t1:
                record(tt)
                io_idx += 1
        if iv.end_kind == "coupling":
            layout_big = get_layout(sys, iv.r + 1, n_max)
            rho = grow_density(rho, layout, layout_big)
            layout = layout_big
        elif iv.end_kind == "decoupling":
            if iv.D is None and iv.U_end is not None and iv.length <= MIN_ROTATION_DT:
                U_F = frame_rotation_unitary(layout, iv.U_end)
                rho = U_F @ rho @ U_F.conj().T
            layout_red = get_layout(sys, iv.r - 1, n_max)
            diag = np.real(np.diag(rho))
            occ0 = np.concatenate([layout.reg.occ[:, 0], layout.reg.occ[:, 0]]).astype(float)
            detached += float((diag * occ0).sum())
            rho = trace_out_detached_density(rho, layout, layout_red)
            layout = layout_red
        while io_idx < len(out_times) and out_times[io_idx] <= iv.t1 + 1e-12:
            record(float(out_times[io_idx]))
            io_idx += 1

    return rec, checkpoints
