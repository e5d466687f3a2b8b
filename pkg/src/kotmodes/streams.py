"""Streams of incoming and outgoing modes via backward/forward eigen-sweeps.

Incoming modes: sweep t = T -> 0 in the frame of the significant eigenmodes
of rho_plus(T).  Whenever the smallest eigenvalue of the projected rho_plus
drops below the significance threshold, the corresponding eigenvector is
recorded as the mode that couples at that time and is removed from the frame.

Outgoing modes: sweep t = 0 -> T maintaining rho_minus projected onto the
currently relevant subspace (modes coupled so far minus modes already
extracted).  A threshold crossing of the smallest eigenvalue emits an
outgoing mode together with the full diagonalizing rotation of the relevant
frame, which downstream becomes the frame-rotation generator of the moving
Hamiltonian.

All thresholds are relative to pi_ref, the largest eigenvalue of rho_plus(T).
Event times are refined by bisection to dt_event/16.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import WavepacketTrajectory
from .significance import (DEFAULT_R_CUT, FrameProjection, SignificanceMatrix,
                           fix_phases, significant_modes)

BISECT_FRACTION = 16  # refine event times to dt_event / 16


@dataclass(frozen=True)
class ModeEvent:
    kind: str                     # "coupling" | "decoupling"
    time: float
    mode: np.ndarray              # unit site-basis vector (kappa_in or kappa_out)
    rotation: np.ndarray | None   # U_k for decoupling: rows = new frame in old frame coords
    slot: int                     # slot appended (coupling) or detached (decoupling, always 0)

    def __post_init__(self):
        if self.kind not in ("coupling", "decoupling"):
            raise ValueError(f"bad event kind {self.kind!r}")
        nrm = np.linalg.norm(self.mode)
        if abs(nrm - 1.0) > 1e-8:
            raise ValueError(f"event mode not unit norm ({nrm})")
        if self.kind == "decoupling":
            U = self.rotation
            if U is None:
                raise ValueError("decoupling event requires a rotation")
            dev = np.abs(U @ U.conj().T - np.eye(len(U))).max()
            if dev > 1e-10:
                raise ValueError(f"rotation not unitary (dev {dev:.2e})")


@dataclass
class ModeStreams:
    """Time-ordered coupling/decoupling events plus frame bookkeeping."""

    events: list                        # ModeEvent, time-ordered
    eigenframe: np.ndarray              # (n, m) significant eigenmodes of rho_plus(T)
    pi_ref: float                       # largest eigenvalue of rho_plus(T)
    r_cut: float
    dt_event: float
    horizon: float
    incoming_coords: np.ndarray         # (m, m_in) incoming modes in eigenframe coords
    complete: bool = False              # True once the outgoing sweep ran

    def m_in(self, t: float) -> int:
        return sum(1 for e in self.events if e.kind == "coupling" and e.time <= t)

    def m_out(self, t: float) -> int:
        return sum(1 for e in self.events if e.kind == "decoupling" and e.time <= t)

    def r(self, t: float) -> int:
        return self.m_in(t) - self.m_out(t)

    def coupling_times(self) -> np.ndarray:
        return np.array([e.time for e in self.events if e.kind == "coupling"])

    def decoupling_times(self) -> np.ndarray:
        return np.array([e.time for e in self.events if e.kind == "decoupling"])

    def incoming_modes(self) -> np.ndarray:
        """Site-basis incoming mode vectors, columns ordered by coupling time."""
        return self.eigenframe @ self.incoming_coords

    def relevant_coords(self, t: float) -> np.ndarray:
        """Relevant-mode frame just after time t, in eigenframe coords."""
        m = self.eigenframe.shape[1]
        cols = np.zeros((m, 0), dtype=complex)
        k_in = 0
        for e in self.events:
            if e.time > t:
                break
            if e.kind == "coupling":
                v = self.incoming_coords[:, k_in].copy()
                if cols.shape[1]:
                    v = v - cols @ (cols.conj().T @ v)
                cols = np.hstack([cols, (v / np.linalg.norm(v))[:, None]])
                k_in += 1
            else:
                cols = (cols @ e.rotation.T)[:, 1:]
        return cols

    def relevant_frame(self, t: float) -> np.ndarray:
        """Orthonormal site-basis frame of relevant modes valid just after t."""
        return self.eigenframe @ self.relevant_coords(t)

    def staircase_rows(self, t_grid) -> list:
        """(t, m_in, m_out, r) rows for CSV export."""
        return [(float(t), self.m_in(t), self.m_out(t), self.r(t)) for t in t_grid]


def staircase_slope(event_times, T: float, lo_frac: float = 0.5, n_samples: int = 400) -> float:
    """Least-squares slope of the event staircase on [lo_frac*T, T]."""
    tg = np.linspace(lo_frac * T, T, n_samples)
    m = np.searchsorted(np.sort(np.asarray(event_times)), tg, side="right")
    A = np.vstack([tg, np.ones_like(tg)]).T
    sol, *_ = np.linalg.lstsq(A, m, rcond=None)
    return float(sol[0])


def default_dt_event(h: float) -> float:
    """Sweep step resolving the expected event spacing, tau_B/20 with tau_B = 1/(4h)."""
    if h <= 0:
        raise ValueError("dt_event default needs a positive bandwidth (h > 0)")
    return 1.0 / (4.0 * h) / 20.0


def _bisect(lam_min_of, t_below, t_above, cut, tol):
    """Crossing time of lam_min(t) = cut given lam_min(t_below) < cut <= lam_min(t_above).

    t_below / t_above are times where the eigenvalue is below/above the cut;
    either may be the earlier one (works for both sweep directions).
    """
    lo, hi = t_below, t_above
    while abs(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        if lam_min_of(mid) < cut:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def extract_incoming(traj: WavepacketTrajectory, T: float | None = None,
                     r_cut: float = DEFAULT_R_CUT,
                     dt_event: float | None = None) -> ModeStreams:
    """Backward eigen-sweep producing the stream of coupling events."""
    T = traj.horizon if T is None else float(T)
    if abs(T - traj.horizon) > 1e-12:
        raise ValueError("T must match the trajectory horizon")
    if dt_event is None or dt_event <= 0:
        raise ValueError("dt_event must be positive (tau_B/20 is the uniform-chain default)")
    proj_site = FrameProjection(traj)
    sigT = SignificanceMatrix(t=T, basis=None, mat=proj_site.total)
    mset = significant_modes(sigT, r_cut)
    F = mset.modes
    m = mset.count
    pi_ref = float(mset.weights[0]) if m else 0.0
    streams = ModeStreams(events=[], eigenframe=F, pi_ref=pi_ref, r_cut=r_cut,
                          dt_event=float(dt_event), horizon=T,
                          incoming_coords=np.zeros((m, 0), dtype=complex))
    if m == 0:
        return streams
    proj = FrameProjection(traj, F)
    cut = r_cut * pi_ref
    tol = dt_event / BISECT_FRACTION

    active = np.eye(m, dtype=complex)      # columns: active modes in eigenframe coords
    found = []                             # (t_in, coords), latest coupling extracted first

    def lam_min(t, A):
        S = A.conj().T @ proj.sigma_plus(t) @ A
        return float(np.linalg.eigvalsh(S)[0])

    grid = np.arange(T, -dt_event * 0.5, -dt_event)
    if grid[-1] > 0.0:
        grid = np.append(grid, 0.0)
    grid[-1] = 0.0
    t_above = grid[0]
    for t in grid[1:]:
        while active.shape[1] > 0 and lam_min(t, active) < cut:
            if lam_min(t_above, active) < cut:
                te = t_above          # crossing masked by a previous extraction
            else:
                te = _bisect(lambda x: lam_min(x, active), t, t_above, cut, tol)
            S = active.conj().T @ proj.sigma_plus(te) @ active
            lam, W = np.linalg.eigh(S)
            coords = fix_phases(active @ W[:, :1])
            found.append((te, coords[:, 0]))
            active = active @ W[:, 1:]
            t_above = te
        if active.shape[1] == 0:
            break
        t_above = t
    found.sort(key=lambda p: p[0])
    coords = np.stack([v for _, v in found], axis=1) if found \
        else np.zeros((m, 0), dtype=complex)
    events = [ModeEvent("coupling", float(t), np.asarray(F @ v), None, slot=k)
              for k, (t, v) in enumerate(found)]
    streams.events = events
    streams.incoming_coords = coords
    return streams


def extract_outgoing(traj: WavepacketTrajectory, incoming: ModeStreams,
                     T: float | None = None, r_cut: float | None = None,
                     dt_event: float | None = None) -> ModeStreams:
    """Forward eigen-sweep merging decoupling events into a complete stream.

    Simultaneous events within a grid step are ordered coupling first: a
    just-coupled mode must be eligible for the outgoing linear combination.
    """
    T = incoming.horizon if T is None else float(T)
    r_cut = incoming.r_cut if r_cut is None else r_cut
    dt_event = incoming.dt_event if dt_event is None else float(dt_event)
    F = incoming.eigenframe
    m = F.shape[1]
    merged = ModeStreams(events=[], eigenframe=F, pi_ref=incoming.pi_ref, r_cut=r_cut,
                         dt_event=dt_event, horizon=T,
                         incoming_coords=incoming.incoming_coords, complete=True)
    if m == 0:
        return merged
    proj = FrameProjection(traj, F)
    cut = r_cut * incoming.pi_ref
    tol = dt_event / BISECT_FRACTION

    in_times = incoming.coupling_times()
    in_coords = incoming.incoming_coords
    state = {"frame": np.zeros((m, 0), dtype=complex), "k_in": 0, "events": []}

    def lam_min(t, A=None):
        A = state["frame"] if A is None else A
        S = A.conj().T @ proj.sigma_minus(t) @ A
        return float(np.linalg.eigvalsh(S)[0])

    def couple(t_c):
        fr = state["frame"]
        v = in_coords[:, state["k_in"]].copy()
        if fr.shape[1]:
            v = v - fr @ (fr.conj().T @ v)
        v = v / np.linalg.norm(v)
        state["events"].append(ModeEvent("coupling", float(t_c),
                                         np.asarray(F @ in_coords[:, state["k_in"]]),
                                         None, slot=fr.shape[1]))
        state["frame"] = np.hstack([fr, v[:, None]])
        state["k_in"] += 1

    def decouple_until(t_lo, t_hi):
        # emit every threshold crossing inside (t_lo, t_hi]
        while state["frame"].shape[1] > 0 and lam_min(t_hi) < cut:
            if lam_min(t_lo) < cut:
                te = t_lo             # crossing masked by a previous event at t_lo
            else:
                te = _bisect(lam_min, t_hi, t_lo, cut, tol)
            fr = state["frame"]
            S = fr.conj().T @ proj.sigma_minus(te) @ fr
            lam, W = np.linalg.eigh(S)
            order = [0] + list(1 + np.argsort(lam[1:])[::-1])
            Wo = fix_phases(W[:, order])       # cols: [outgoing, relevants desc]
            U_k = Wo.T.copy()                  # rows = new frame in old frame coords
            out_vec = (fr @ Wo[:, 0])
            state["events"].append(ModeEvent("decoupling", float(te),
                                             np.asarray(F @ out_vec), U_k, slot=0))
            state["frame"] = (fr @ Wo)[:, 1:]
            t_lo = te

    grid = np.arange(0.0, T + dt_event * 0.5, dt_event)
    grid[-1] = T
    t_prev = 0.0
    for t in grid[1:]:
        while state["k_in"] < len(in_times) and in_times[state["k_in"]] <= t + 1e-15:
            t_c = in_times[state["k_in"]]
            decouple_until(t_prev, max(t_c, t_prev))
            couple(t_c)
            t_prev = max(t_c, t_prev)
        decouple_until(t_prev, t)
        t_prev = t
    merged.events = sorted(state["events"],
                           key=lambda e: (e.time, 0 if e.kind == "coupling" else 1))
    return merged


def reversed_trajectory(traj: WavepacketTrajectory) -> WavepacketTrajectory:
    """Time-reversed wavepacket conj(phi(T - t)), for the mirror diagnostic.

    The result does not satisfy the delta-start invariant, so it must not be
    validate()d; the sweeps only consume the raw grid data.
    """
    return WavepacketTrajectory(traj.times.copy(), np.conj(traj.phi[:, ::-1]).copy(),
                                leak_tol=traj.leak_tol)
