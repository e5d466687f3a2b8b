import numpy as np
import pytest
import scipy.linalg

import kotmodes as km
from kotmodes.schedule import frame_generators
from kotmodes.significance import FrameProjection


def test_zero_hopping_single_coupling_event():
    # 1x1 significance matrix [t]: crossing of r_cut * pi_ref = r_cut * T
    chain = km.build_uniform_chain(1.0, 0.0, 1.0)
    traj = km.propagate_wavepacket(chain, 1.0, 1e-4)
    inc = km.extract_incoming(traj, 1.0, 1e-4, dt_event=0.01)
    assert inc.m_in(1.0) == 1
    t_in = inc.coupling_times()[0]
    assert abs(t_in - 1e-4) <= 0.01 / 16  # bisection refines to dt_event/16
    # the single mode stays coupled over essentially the whole horizon;
    # the finite window forces decoupling only at t > T (1 - r_cut)
    streams = km.extract_outgoing(traj, inc)
    outs = streams.decoupling_times()
    assert len(outs) == 1
    assert outs[0] > 1.0 - 1e-3
    assert streams.r(0.5) == 1


def test_counting_identity_and_monotone_staircases(fig_setup):
    streams = fig_setup["streams"]
    T = fig_setup["p"]["T"]
    for t in np.linspace(0, T, 57):
        assert streams.r(t) == streams.m_in(t) - streams.m_out(t)
    times = [e.time for e in streams.events]
    assert times == sorted(times)
    assert streams.m_in(T) == len(streams.coupling_times())
    assert streams.m_out(T) == len(streams.decoupling_times())


def test_initial_burst_gaps_shorter_than_asymptotic(fig_setup):
    t_in = fig_setup["incoming"].coupling_times()
    gaps = np.diff(t_in)
    assert gaps[0] < 0.5 * gaps[-1]


def test_slope_ratio_proportional_to_bandwidth():
    slopes = {}
    T = 200.0
    for h in (0.05, 0.1):
        chain = km.build_uniform_chain(1.0, h, T)
        traj = km.propagate_wavepacket(chain, T, 0.05)
        inc = km.extract_incoming(traj, T, 1e-4, km.default_dt_event(h))
        slopes[h] = km.staircase_slope(inc.coupling_times(), T)
    ratio = slopes[0.1] / slopes[0.05]
    assert 2.0 * 0.85 <= ratio <= 2.0 * 1.15


def test_outgoing_modes_in_coupled_span(fig_setup):
    # constraint: every outgoing mode lies in span of modes coupled by then
    streams = fig_setup["streams"]
    inc_modes = streams.incoming_modes()
    t_in = streams.coupling_times()
    for e in streams.events:
        if e.kind != "decoupling":
            continue
        span = inc_modes[:, t_in <= e.time + 1e-9]
        resid = e.mode - span @ (span.conj().T @ e.mode)
        assert np.linalg.norm(resid) < 1e-8


def test_relevant_frame_subspace_consistency(fig_setup):
    # span(relevant frame + extracted outgoing) == span(coupled incoming)
    streams = fig_setup["streams"]
    inc_modes = streams.incoming_modes()
    t_in = streams.coupling_times()
    for t in (30.0, 60.0, 90.0):
        frame = streams.relevant_frame(t)
        outs = [e.mode for e in streams.events
                if e.kind == "decoupling" and e.time <= t]
        lhs = np.hstack([frame] + [o[:, None] for o in outs])
        rhs = inc_modes[:, t_in <= t]
        assert lhs.shape[1] == rhs.shape[1]
        ang = km.principal_angles(lhs, rhs)
        assert ang.max() < 1e-6
        G = frame.conj().T @ frame
        assert np.abs(G - np.eye(frame.shape[1])).max() < 1e-10


def test_saturation_of_relevant_count(fig_setup):
    streams = fig_setup["streams"]
    T = fig_setup["p"]["T"]
    grid = np.linspace(0, T, 401)
    r = np.array([streams.r(t) for t in grid])
    rmax = r.max()
    first = grid[np.argmax(r == rmax)]
    assert first < 0.75 * T
    assert np.all(r <= rmax)


def test_threshold_robustness(fig_setup):
    # tightening the cut keeps every event (counts grow), couples matched
    # modes earlier, and any fixed direction decouples later
    traj = fig_setup["traj"]
    T = fig_setup["p"]["T"]
    dt_ev = km.default_dt_event(0.05)
    inc4 = fig_setup["incoming"]
    inc5 = km.extract_incoming(traj, T, 1e-5, dt_ev)
    assert inc5.m_in(T) >= inc4.m_in(T)
    V4, V5 = inc4.incoming_modes(), inc5.incoming_modes()
    overlap = np.abs(V4.conj().T @ V5)
    match = overlap.argmax(axis=1)
    t4, t5 = inc4.coupling_times(), inc5.coupling_times()
    assert np.all(t5[match] <= t4 + dt_ev / 8)
    st4 = fig_setup["streams"]
    st5 = km.extract_outgoing(traj, inc5)
    assert st5.m_out(T) >= st4.m_out(T)
    # per-direction advanced significance is monotone, so a fixed outgoing
    # direction crosses a 10x lower threshold strictly later
    proj = FrameProjection(traj)
    tg = np.linspace(0, T, 801)
    for e in st4.events:
        if e.kind != "decoupling":
            continue
        n_minus = np.array([np.real(np.vdot(e.mode, proj.sigma_minus(t) @ e.mode))
                            for t in tg])
        c4 = tg[np.argmax(n_minus < 1e-4 * st4.pi_ref)]
        c5 = tg[np.argmax(n_minus < 1e-5 * st4.pi_ref)]
        assert c5 >= c4


def test_time_reversal_diagnostic(fig_setup):
    # The reversed trajectory is a global unitary times the forward one
    # (conj(phi(T-t)) = exp(-i H1 T) phi(t)), so running the extraction on it
    # must reproduce the same staircases within one dt_event.  The naive
    # mirror pairing (reversed m_in against mirrored forward m_out) carries
    # the outgoing-stream constraint asymmetry and only matches loosely.
    traj = fig_setup["traj"]
    T = fig_setup["p"]["T"]
    streams = fig_setup["streams"]
    rtraj = km.reversed_trajectory(traj)
    rinc = km.extract_incoming(rtraj, T, 1e-4, streams.dt_event)
    rstreams = km.extract_outgoing(rtraj, rinc)
    t_f_in, t_r_in = fig_setup["incoming"].coupling_times(), rinc.coupling_times()
    assert len(t_f_in) == len(t_r_in)
    assert np.abs(t_f_in - t_r_in).max() <= streams.dt_event
    t_f_out, t_r_out = streams.decoupling_times(), rstreams.decoupling_times()
    assert len(t_f_out) == len(t_r_out)
    assert np.abs(np.sort(t_f_out) - np.sort(t_r_out)).max() <= streams.dt_event
    # staircase-level mirror comparison: counts agree at the ends and the
    # pointwise mismatch stays within the constraint-induced reshuffling
    tg = np.linspace(0, T, 201)
    m_in_rev = np.array([rstreams.m_in(t) for t in tg])
    m_out_mirror = np.array([streams.m_out(T) - streams.m_out(T - t - 1e-9) for t in tg])
    assert m_in_rev[-1] == m_out_mirror[-1]
    assert np.abs(m_in_rev - m_out_mirror).max() <= 2


def test_event_validation():
    v = np.zeros(4, dtype=complex)
    v[1] = 1.0
    with pytest.raises(ValueError):
        km.ModeEvent("bogus", 1.0, v, None, 0)
    with pytest.raises(ValueError):
        km.ModeEvent("coupling", 1.0, 2 * v, None, 0)
    with pytest.raises(ValueError):
        km.ModeEvent("decoupling", 1.0, v, np.eye(3) * 2.0, 0)


def test_dt_event_required():
    chain = km.build_uniform_chain(1.0, 0.05, 10.0)
    traj = km.propagate_wavepacket(chain, 10.0, 0.02)
    with pytest.raises(ValueError):
        km.extract_incoming(traj, 10.0, 1e-4, None)
    with pytest.raises(ValueError):
        km.default_dt_event(0.0)


# ---------------------------------------------------------------- schedule


def test_frame_generator_identity_and_scalar_log():
    # U = I -> D = 0; U = diag(exp(-i theta)) over interval 0.5 -> D = diag(theta/0.5)
    from kotmodes.schedule import _principal_log_generator
    D, flag = _principal_log_generator(np.eye(3, dtype=complex), 0.5)
    assert np.abs(D).max() < 1e-12 and not flag
    theta = 0.3
    D, flag = _principal_log_generator(np.diag([np.exp(-1j * theta)]), 0.5)
    assert abs(D[0, 0] - 0.6) < 1e-12 and not flag
    # eigenphase at pi is flagged as branch-ambiguous
    D, flag = _principal_log_generator(np.diag([np.exp(1j * np.pi)]), 1.0)
    assert flag


def test_rotation_roundtrip_all_events(fig_setup):
    # exp(-i Delta D) rebuilds the stored U_k for every decoupling interval
    sched = fig_setup["schedule"]
    n_checked = 0
    for iv in sched.intervals:
        if iv.end_kind == "decoupling" and iv.D is not None:
            U = scipy.linalg.expm(-1j * iv.length * iv.D)
            assert np.abs(U - iv.U_end).max() < 1e-10
            n_checked += 1
    assert n_checked >= 3


def test_zero_hopping_coupling_amplitude():
    chain = km.build_uniform_chain(1.2, 0.0, 1.0)
    traj = km.propagate_wavepacket(chain, 1.0, 1e-4)
    inc = km.extract_incoming(traj, 1.0, 1e-4, dt_event=0.01)
    streams = km.extract_outgoing(traj, inc)
    sched = km.build_effective_schedule(traj, streams)
    iv = [x for x in sched.intervals if x.r == 1][0]
    expect = np.exp(-1j * 1.2 * iv.chi_times)
    assert np.abs(iv.chi[:, 0] - expect).max() < 1e-8


def test_chi_completeness_before_first_decoupling(fig_setup):
    # sum_l |chi_l|^2 approaches ||phi||^2 = 1 once all modes are coupled,
    # up to the discarded significance (the leaked weight is r_cut-level)
    sched = fig_setup["schedule"]
    streams = fig_setup["streams"]
    first_out = streams.decoupling_times().min()
    for iv in sched.intervals:
        if iv.t1 > first_out or iv.r < 4:
            continue
        tot = (np.abs(iv.chi) ** 2).sum(axis=1)
        # completeness improves as more modes couple; with 4+ modes the
        # missing weight is the not-yet-coupled tail plus r_cut leakage
        assert tot.max() <= 1.0 + 1e-9
        assert tot.mean() > 0.9


def test_chi_small_before_coupling_time(fig_setup):
    # time-averaged |chi|^2 of a mode up to its coupling time is below the
    # significance rate r_cut * pi_ref / t
    traj = fig_setup["traj"]
    inc = fig_setup["incoming"]
    V = inc.incoming_modes()
    t_in = inc.coupling_times()
    for k in (2, 3, 4):
        chi = np.conj(traj.phi.T) @ V[:, k]
        m = int(t_in[k] / traj.dt)
        avg = np.trapezoid(np.abs(chi[:m + 1]) ** 2, dx=traj.dt)
        assert avg <= 1e-4 * inc.pi_ref * 1.0001


def test_schedule_serialization_roundtrip(fig_setup):
    from kotmodes.schedule import schedule_to_text, schedule_from_text
    sched = fig_setup["schedule"]
    text = schedule_to_text(sched)
    back = schedule_from_text(text)
    assert len(back.intervals) == len(sched.intervals)
    assert back.horizon == sched.horizon
    for a, b in zip(sched.intervals, back.intervals):
        assert a.t0 == b.t0 and a.t1 == b.t1 and a.r == b.r and a.end_kind == b.end_kind
        assert np.array_equal(a.frame0, b.frame0)
        assert np.array_equal(a.chi, b.chi)
        if a.D is None:
            assert b.D is None
        else:
            assert np.array_equal(a.D, b.D)
    assert schedule_to_text(back) == text


def test_schedule_chi_channels_match_r(fig_setup):
    for iv in fig_setup["schedule"].intervals:
        assert iv.chi.shape[1] == iv.r
        assert iv.frame0.shape[1] == iv.r
        if iv.D is not None:
            assert np.abs(iv.D - iv.D.conj().T).max() < 1e-10


def test_partial_streams_refuse_schedule(fig_setup):
    with pytest.raises(ValueError):
        frame_generators(fig_setup["incoming"])
