"""Quantum-jump unraveling of detachments and ensemble statistics.

At every decoupling the joint state is Schmidt-split across the bipartition
(system + remaining slots) x (detaching slot); a branch is drawn with the
squared Schmidt coefficient as probability, the state collapses onto it, and
the detached quanta of that branch are recorded.  Histories are independent
Monte Carlo tasks; each history i draws from its own counter-based stream
Philox4x64 keyed by (seed, i), so results are reproducible regardless of
worker scheduling.

The ensemble runner propagates all histories as one amplitude block through
dense per-gap propagators (interval evolution is history-independent), which
is arithmetically the Strang-split integrator; single histories replayed
through sample_history use the fixed-step RK4 path and agree to integrator
tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (ChiTable, HEffAction, JointState, ObservableSeries,
                       SystemSpec, evolve_moving_frame, frame_rotation_unitary,
                       get_layout, unfold_for_detach)
from .schedule import EffectiveSchedule, MIN_ROTATION_DT

RNG_ALGORITHM = "philox4x64"
BRANCH_EPS = 1e-12        # discard Schmidt branches below this weight


def history_rng(seed: int, history_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed), int(history_index)]))


@dataclass(frozen=True)
class JumpRecord:
    t_out: float
    branch: int
    probability: float
    ladder: np.ndarray            # |c_p|^2, descending, truncated at BRANCH_EPS
    n_detached: float             # outgoing-mode occupation of the chosen branch

    def __post_init__(self):
        s = float(self.ladder.sum())
        if abs(s - 1.0) > 1e-8:
            raise ValueError(f"Schmidt ladder not normalized (sum {s})")


@dataclass
class JumpHistory:
    seed: int
    index: int
    records: list
    series: ObservableSeries
    final_state: JointState | None = None

    def probability(self) -> float:
        p = 1.0
        for r in self.records:
            p *= r.probability
        return p


def schmidt_split(state: JointState, sys: SystemSpec, slot: int = 0):
    """Schmidt decomposition across (system + kept slots) x (detaching slot).

    Returns (coeffs, collapsed, outgoing): descending Schmidt coefficients
    (after discarding branches below BRANCH_EPS and renormalizing), the
    renormalized collapsed states over the reduced register, and the
    occupation-basis outgoing-mode states, one per branch.
    """
    if slot != 0:
        raise ValueError("only slot 0 detaches (the rotated outgoing mode)")
    nrm = np.linalg.norm(state.amps)
    if nrm < 1e-12:
        raise ValueError("cannot Schmidt-split a numerically zero state")
    layout = get_layout(sys, state.n_modes, state.n_max)
    layout_red = get_layout(sys, state.n_modes - 1, state.n_max)
    M = unfold_for_detach(state.amps / nrm, layout, layout_red)
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    keep = (s ** 2) > BRANCH_EPS
    s = s[keep]
    U = U[:, keep]
    Vh = Vh[keep, :]
    s = s / np.linalg.norm(s)
    collapsed = [JointState(np.ascontiguousarray(U[:, p]), state.t,
                            state.n_modes - 1, state.n_max)
                 for p in range(len(s))]
    outgoing = [np.conj(Vh[p, :]) for p in range(len(s))]
    return s, collapsed, outgoing


def draw_branch(rng: np.random.Generator, probs: np.ndarray) -> int:
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(probs), u, side="right"), len(probs) - 1))


def _mean_occupation(number_state: np.ndarray) -> float:
    n = np.arange(len(number_state))
    return float((n * np.abs(number_state) ** 2).sum())


def sample_history(seed: int, sys: SystemSpec, schedule: EffectiveSchedule,
                   psi_sys, n_max: int, out_times, history_index: int = 0,
                   collect_states: bool = False) -> JumpHistory:
    """One jump history on the RK4 single-state path, fully seeded."""
    rng = history_rng(seed, history_index)
    records = []

    def handler(amps, layout, layout_red, t, k_out):
        st = JointState(amps, t, layout.reg.n_modes, n_max)
        coeffs, collapsed, outgoing = schmidt_split(st, sys)
        probs = coeffs ** 2
        p = draw_branch(rng, probs)
        n_det = _mean_occupation(outgoing[p])
        records.append(JumpRecord(t_out=t, branch=p, probability=float(probs[p]),
                                  ladder=probs.copy(), n_detached=n_det))
        return collapsed[p].amps, n_det, records[-1]

    series, final, _, states = evolve_moving_frame(
        sys, schedule, psi_sys, n_max, out_times, detach_handler=handler,
        collect_states=collect_states)
    return JumpHistory(seed=seed, index=history_index, records=records,
                       series=series, final_state=final)


@dataclass
class EnsembleResult:
    t: np.ndarray
    qubit_mean: np.ndarray
    qubit_stderr: np.ndarray
    relevant_mean: np.ndarray
    detached_mean: np.ndarray
    n_histories: int
    seed: int
    rng_algorithm: str = RNG_ALGORITHM
    densities: dict = field(default_factory=dict)    # t -> ensemble rho_rel
    branch_log: list = field(default_factory=list)   # (t, branches (N,), probs (N,))


def run_ensemble(sys: SystemSpec, schedule: EffectiveSchedule, psi_sys, n_max: int,
                 out_times, n_histories: int, seed: int,
                 history_offset: int = 0, dt_target: float = 0.05,
                 density_times=(), keep_block_final: bool = False) -> EnsembleResult:
    """Propagate n_histories jump trajectories as one amplitude block.

    Interval evolution is a history-independent unitary, so it is composed
    once per output gap as a dense propagator and applied to the block with
    one matrix product; only the jumps at decouplings act per history.
    """
    out_times = np.asarray(out_times, dtype=float)
    density_times = set(float(t) for t in density_times)
    psi_sys = np.asarray(psi_sys, dtype=complex)
    psi_sys = psi_sys / np.linalg.norm(psi_sys)
    N = int(n_histories)
    rngs = [history_rng(seed, history_offset + i) for i in range(N)]

    layout = get_layout(sys, schedule.intervals[0].r, n_max)
    block = np.zeros((layout.dim, N), dtype=complex)
    block[layout.reg.vacuum_index(), :] = psi_sys[0]
    block[layout.size + layout.reg.vacuum_index(), :] = psi_sys[1]

    detached = np.zeros(N)
    qubit = []
    rel_mean = []
    det_mean = []
    rec_t = []
    densities = {}
    branch_log = []
    io_idx = 0

    def record(t):
        prob = np.abs(block) ** 2
        qubit.append((prob * layout.qubit_mask[:, None]).sum(axis=0))
        rel_mean.append(float((prob * layout.occ_joint[:, None]).sum(axis=0).mean()))
        det_mean.append(float(detached.mean()))
        rec_t.append(t)
        if t in density_times:
            densities[t] = (block @ block.conj().T) / N

    while io_idx < len(out_times) and out_times[io_idx] <= schedule.intervals[0].t0 + 1e-12:
        record(float(out_times[io_idx]))
        io_idx += 1

    for iv in schedule.intervals:
        act = HEffAction(sys, layout, ChiTable(iv.chi_times, iv.chi), iv.D)
        t_cur = iv.t0
        targets = [float(x) for x in out_times[io_idx:] if iv.t0 < x < iv.t1 - 1e-12]
        for tt in targets + [iv.t1]:
            if tt > t_cur:
                P = act.gap_propagator(t_cur, tt, dt_target)
                block = P @ block
            t_cur = tt
            if tt != iv.t1:
                record(tt)
                io_idx += 1
        if iv.end_kind == "coupling":
            layout_big = get_layout(sys, iv.r + 1, n_max)
            gmap = layout.reg.grow_map()
            nb = np.zeros((layout_big.dim, N), dtype=complex)
            nb[gmap, :] = block[:layout.size, :]
            nb[layout_big.size + gmap, :] = block[layout.size:, :]
            block = nb
            layout = layout_big
        elif iv.end_kind == "decoupling":
            if iv.D is None and iv.U_end is not None and iv.length <= MIN_ROTATION_DT:
                block = frame_rotation_unitary(layout, iv.U_end) @ block
            layout_red = get_layout(sys, iv.r - 1, n_max)
            nb = np.zeros((layout_red.dim, N), dtype=complex)
            branches = np.empty(N, dtype=np.int64)
            bprobs = np.empty(N)
            for i in range(N):
                st = JointState(np.ascontiguousarray(block[:, i]), iv.t1,
                                layout.reg.n_modes, n_max)
                coeffs, collapsed, outgoing = schmidt_split(st, sys)
                probs = coeffs ** 2
                p = draw_branch(rngs[i], probs)
                branches[i] = p
                bprobs[i] = probs[p]
                detached[i] += _mean_occupation(outgoing[p])
                nb[:, i] = collapsed[p].amps
            block = nb
            layout = layout_red
            branch_log.append((iv.t1, branches, bprobs))
        while io_idx < len(out_times) and out_times[io_idx] <= iv.t1 + 1e-12:
            record(float(out_times[io_idx]))
            io_idx += 1

    qubit = np.asarray(qubit)                     # (n_times, N)
    res = EnsembleResult(
        t=np.asarray(rec_t),
        qubit_mean=qubit.mean(axis=1),
        qubit_stderr=qubit.std(axis=1, ddof=1) / np.sqrt(N) if N > 1 else np.zeros(len(rec_t)),
        relevant_mean=np.asarray(rel_mean),
        detached_mean=np.asarray(det_mean),
        n_histories=N, seed=seed,
        densities=densities, branch_log=branch_log)
    if keep_block_final:
        res.final_block = block
    return res


def _ensemble_worker(args):
    (sys, schedule, psi_sys, n_max, out_times, n, seed, offset, dt_target,
     density_times) = args
    res = run_ensemble(sys, schedule, psi_sys, n_max, out_times, n, seed,
                       history_offset=offset, dt_target=dt_target,
                       density_times=density_times)
    return res


def run_ensemble_parallel(sys: SystemSpec, schedule: EffectiveSchedule, psi_sys,
                          n_max: int, out_times, n_histories: int, seed: int,
                          workers: int = 1, dt_target: float = 0.05,
                          density_times=()) -> EnsembleResult:
    """Fan histories over a worker pool; per-history streams keep results
    independent of the chunking, up to floating-point reduction order."""
    if workers <= 1 or n_histories < 2 * workers:
        return run_ensemble(sys, schedule, psi_sys, n_max, out_times,
                            n_histories, seed, dt_target=dt_target,
                            density_times=density_times)
    import multiprocessing as mp
    base = n_histories // workers
    sizes = [base + (1 if i < n_histories % workers else 0) for i in range(workers)]
    offsets = np.concatenate([[0], np.cumsum(sizes[:-1])]).astype(int)
    args = [(sys, schedule, psi_sys, n_max, out_times, sizes[i], seed,
             int(offsets[i]), dt_target, density_times)
            for i in range(workers) if sizes[i] > 0]
    with mp.get_context("fork").Pool(processes=workers) as pool:
        parts = pool.map(_ensemble_worker, args)
    N = sum(p.n_histories for p in parts)
    t = parts[0].t
    qsum = sum(p.qubit_mean * p.n_histories for p in parts)
    q2sum = sum((p.qubit_stderr ** 2 * p.n_histories * (p.n_histories - 1)
                 + p.n_histories * p.qubit_mean ** 2) for p in parts)
    mean = qsum / N
    var = np.maximum(q2sum / N - mean ** 2, 0.0) * N / max(N - 1, 1)
    densities = {}
    for key in parts[0].densities:
        densities[key] = sum(p.densities[key] * p.n_histories for p in parts) / N
    branch_log = []
    for ev in range(len(parts[0].branch_log)):
        tev = parts[0].branch_log[ev][0]
        branch_log.append((tev,
                           np.concatenate([p.branch_log[ev][1] for p in parts]),
                           np.concatenate([p.branch_log[ev][2] for p in parts])))
    return EnsembleResult(
        t=t, qubit_mean=mean,
        qubit_stderr=np.sqrt(var / N),
        relevant_mean=sum(p.relevant_mean * p.n_histories for p in parts) / N,
        detached_mean=sum(p.detached_mean * p.n_histories for p in parts) / N,
        n_histories=N, seed=seed, densities=densities, branch_log=branch_log)


def ensemble_average(histories) -> dict:
    """Unweighted mean and standard error over sampled histories."""
    if len(histories) < 2:
        raise ValueError("ensemble_average needs at least 2 histories")
    t = histories[0].series.t
    Q = np.stack([h.series.qubit for h in histories], axis=1)
    return {
        "t": t,
        "qubit_mean": Q.mean(axis=1),
        "qubit_stderr": Q.std(axis=1, ddof=1) / np.sqrt(Q.shape[1]),
        "relevant_mean": np.stack([h.series.relevant for h in histories], axis=1).mean(axis=1),
        "detached_mean": np.stack([h.series.detached for h in histories], axis=1).mean(axis=1),
        "n_histories": len(histories),
    }


def jump_entropy(ladders) -> float:
    """Entropy of the jump-history ensemble from per-event Schmidt ladders.

    The history measure factorizes over events, so the entropy is the sum of
    the per-event Shannon entropies.
    """
    S = 0.0
    for lad in ladders:
        lad = np.asarray(lad, dtype=float)
        s = lad.sum()
        if abs(s - 1.0) > 1e-8:
            raise ValueError("unnormalized Schmidt ladder")
        nz = lad[lad > 0]
        S += float(-(nz * np.log(nz)).sum())
    return S
