"""Piecewise model constants chi(t) and D(t) of the moving-frame Hamiltonian.

Every interval between consecutive events carries the relevant-frame
orbitals at its start, the absorption amplitudes chi_l(t) sampled on the
trajectory grid (rotated continuously into the instantaneous frame on
decoupling intervals), and on decoupling intervals the Hermitian generator

    D = i ln(U_k) / (t_k_out - t_k_star)

whose Hamiltonian term  -sum_lk D_lk kappa_k^dag kappa_l  enacts the frame
rotation U_k over the interval, so that at the decoupling time slot 0 of the
register is the outgoing mode.  Intervals ending in a coupling event carry
D = 0 and a frozen frame.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .chain import WavepacketTrajectory
from .streams import ModeStreams

LOG_BRANCH_TOL = 1e-9     # eigenphase distance to +-pi flagged as ambiguous
MIN_ROTATION_DT = 1e-9    # below this the rotation is applied instantaneously


@dataclass
class Interval:
    t0: float
    t1: float
    r: int
    frame0: np.ndarray            # (m, r) slot orbitals at t0, eigenframe coords
    end_kind: str                 # "coupling" | "decoupling" | "horizon"
    D: np.ndarray | None = None   # (r, r) Hermitian generator, decoupling ends only
    U_end: np.ndarray | None = None
    chi_times: np.ndarray | None = None
    chi: np.ndarray | None = None  # (len(chi_times), r) rotated couplings
    branch_flag: bool = False      # eigenphase at +-pi within tolerance

    @property
    def length(self) -> float:
        return self.t1 - self.t0

    def chi_at(self, t: float) -> np.ndarray:
        """Linear interpolation of the sampled couplings."""
        ts, ch = self.chi_times, self.chi
        if self.r == 0:
            return np.zeros(0, dtype=complex)
        if len(ts) == 1 or t <= ts[0]:
            return ch[0]
        if t >= ts[-1]:
            return ch[-1]
        i = int(np.searchsorted(ts, t, side="right")) - 1
        i = min(max(i, 0), len(ts) - 2)
        f = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1.0 - f) * ch[i] + f * ch[i + 1]


@dataclass
class EffectiveSchedule:
    intervals: list
    eigenframe: np.ndarray        # (n_sites, m)
    horizon: float
    r_cut: float
    pi_ref: float
    config_hash: str = ""

    def interval_at(self, t: float) -> Interval:
        for iv in self.intervals:
            if iv.t0 - 1e-12 <= t <= iv.t1 + 1e-12:
                return iv
        raise ValueError(f"t={t} outside schedule range")

    @property
    def r_max(self) -> int:
        return max(iv.r for iv in self.intervals)

    def event_boundaries(self):
        return [(iv.t1, iv.end_kind) for iv in self.intervals]


def _principal_log_generator(U: np.ndarray, delta: float):
    """Hermitian D with exp(-i delta D) = U, eigenphases folded to (-pi, pi]."""
    Tmat, Q = scipy.linalg.schur(U, output="complex")
    phases = np.angle(np.diag(Tmat))        # U = Q diag(e^{i theta}) Q^dag
    flag = bool(np.min(np.abs(np.abs(phases) - np.pi)) < LOG_BRANCH_TOL)
    D = Q @ np.diag(-phases / delta) @ Q.conj().T
    D = 0.5 * (D + D.conj().T)
    return D, flag


def frame_generators(streams: ModeStreams) -> EffectiveSchedule:
    """Interval skeleton with frames and rotation generators (chi not sampled)."""
    if not streams.complete:
        raise ValueError("frame_generators needs a complete (outgoing-swept) stream")
    m = streams.eigenframe.shape[1]
    T = streams.horizon
    intervals = []
    frame = np.zeros((m, 0), dtype=complex)
    t0 = 0.0
    k_in = 0
    for e in streams.events:
        iv = Interval(t0=t0, t1=float(e.time), r=frame.shape[1], frame0=frame.copy(),
                      end_kind="coupling" if e.kind == "coupling" else "decoupling")
        if e.kind == "decoupling":
            iv.U_end = e.rotation.copy()
            delta = iv.length
            if delta > MIN_ROTATION_DT and iv.r > 0:
                iv.D, iv.branch_flag = _principal_log_generator(e.rotation, delta)
        intervals.append(iv)
        if e.kind == "coupling":
            v = streams.incoming_coords[:, k_in].copy()
            if frame.shape[1]:
                v = v - frame @ (frame.conj().T @ v)
            frame = np.hstack([frame, (v / np.linalg.norm(v))[:, None]])
            k_in += 1
        else:
            frame = (frame @ e.rotation.T)[:, 1:]
        t0 = float(e.time)
    if t0 < T - 1e-12 or not intervals:
        intervals.append(Interval(t0=t0, t1=T, r=frame.shape[1], frame0=frame.copy(),
                                  end_kind="horizon"))
    return EffectiveSchedule(intervals=intervals, eigenframe=streams.eigenframe,
                             horizon=T, r_cut=streams.r_cut, pi_ref=streams.pi_ref)


def coupling_amplitudes(traj: WavepacketTrajectory, streams: ModeStreams,
                        schedule: EffectiveSchedule | None = None) -> EffectiveSchedule:
    """Sample chi_l(t) on every interval, rotated into the moving frame.

    chi against the frozen start-of-interval frame is phi(t)^dag v_l; on
    decoupling intervals the frame rotates as U(t) = exp(-i (t - t0) D), so
    the stored samples are U(t) applied to the frozen-frame couplings.
    """
    if schedule is None:
        schedule = frame_generators(streams)
    F = schedule.eigenframe
    g = F.conj().T @ traj.phi                  # (m, M+1) frame components of phi
    ts = traj.times
    for iv in schedule.intervals:
        lo = int(np.searchsorted(ts, iv.t0, side="right"))
        hi = int(np.searchsorted(ts, iv.t1, side="left"))
        times = np.concatenate([[iv.t0], ts[lo:hi], [iv.t1]])
        keep = np.concatenate([[True], np.diff(times) > 1e-13])
        times = times[keep]
        if iv.r == 0:
            iv.chi_times = times
            iv.chi = np.zeros((len(times), 0), dtype=complex)
            continue
        g_at = np.empty((len(times), g.shape[0]), dtype=complex)
        for i, t in enumerate(times):
            mcell = min(max(int(t / traj.dt), 0), len(ts) - 2)
            f = (t - ts[mcell]) / traj.dt
            g_at[i] = (1.0 - f) * g[:, mcell] + f * g[:, mcell + 1]
        chi_static = np.conj(g_at) @ iv.frame0          # (len, r)
        if iv.D is not None:
            w, Q = np.linalg.eigh(iv.D)
            ph = np.exp(-1j * np.outer(times - iv.t0, w))          # (len, r)
            chi = np.einsum("ab,tb,cb,tc->ta", Q, ph, Q.conj(), chi_static)
        else:
            chi = chi_static
        iv.chi_times = times
        iv.chi = np.ascontiguousarray(chi)
    return schedule


def build_effective_schedule(traj: WavepacketTrajectory,
                             streams: ModeStreams) -> EffectiveSchedule:
    """Full schedule: rotation generators plus sampled couplings."""
    return coupling_amplitudes(traj, streams, frame_generators(streams))


# ------------------------------------------------------------- serialization

def _write_cmat(out, name, A):
    out.write(f"{name} {A.shape[0]} {A.shape[1]}\n")
    for row in A:
        out.write(" ".join(f"{float(z.real)!r} {float(z.imag)!r}" for z in row) + "\n")


def _read_cmat(lines, name):
    head = next(lines).split()
    if head[0] != name:
        raise ValueError(f"expected {name} block, got {head[0]}")
    rows, cols = int(head[1]), int(head[2])
    A = np.zeros((rows, cols), dtype=complex)
    for i in range(rows):
        vals = [float(x) for x in next(lines).split()]
        A[i].real = vals[0::2]
        A[i].imag = vals[1::2]   # assignment keeps signed zeros intact
    return A


def schedule_to_text(s: EffectiveSchedule) -> str:
    out = io.StringIO()
    out.write("kotmodes-schedule v1\n")
    out.write(f"config_hash {s.config_hash or '-'}\n")
    out.write(f"meta horizon {float(s.horizon)!r} r_cut {float(s.r_cut)!r} pi_ref {float(s.pi_ref)!r} "
              f"n_intervals {len(s.intervals)}\n")
    _write_cmat(out, "eigenframe", s.eigenframe)
    for k, iv in enumerate(s.intervals):
        out.write(f"interval {k} t0 {float(iv.t0)!r} t1 {float(iv.t1)!r} r {iv.r} end {iv.end_kind} "
                  f"branch_flag {int(iv.branch_flag)}\n")
        _write_cmat(out, "frame0", iv.frame0)
        if iv.D is not None:
            _write_cmat(out, "D", iv.D)
        else:
            out.write("D none\n")
        if iv.U_end is not None:
            _write_cmat(out, "U", iv.U_end)
        else:
            out.write("U none\n")
        out.write("chi_times " + " ".join(repr(float(t)) for t in iv.chi_times) + "\n")
        _write_cmat(out, "chi", iv.chi)
    out.write("end\n")
    return out.getvalue()


def schedule_from_text(text: str) -> EffectiveSchedule:
    lines = iter(text.splitlines())
    if next(lines).strip() != "kotmodes-schedule v1":
        raise ValueError("not a kotmodes schedule file")
    cfg = next(lines).split()
    config_hash = "" if cfg[1] == "-" else cfg[1]
    meta = next(lines).split()
    horizon, r_cut, pi_ref = float(meta[2]), float(meta[4]), float(meta[6])
    n_iv = int(meta[8])
    F = _read_cmat(lines, "eigenframe")
    intervals = []
    for _ in range(n_iv):
        head = next(lines).split()
        iv = Interval(t0=float(head[3]), t1=float(head[5]), r=int(head[7]),
                      frame0=None, end_kind=head[9], branch_flag=bool(int(head[11])))
        iv.frame0 = _read_cmat(lines, "frame0")
        probe = next(lines)
        if probe.startswith("D none"):
            iv.D = None
        else:
            lines = _pushback(probe, lines)
            iv.D = _read_cmat(lines, "D")
        probe = next(lines)
        if probe.startswith("U none"):
            iv.U_end = None
        else:
            lines = _pushback(probe, lines)
            iv.U_end = _read_cmat(lines, "U")
        ct = next(lines).split()
        iv.chi_times = np.array([float(x) for x in ct[1:]])
        iv.chi = _read_cmat(lines, "chi")
        intervals.append(iv)
    return EffectiveSchedule(intervals=intervals, eigenframe=F, horizon=horizon,
                             r_cut=r_cut, pi_ref=pi_ref, config_hash=config_hash)


def _pushback(line, it):
    yield line
    yield from it
