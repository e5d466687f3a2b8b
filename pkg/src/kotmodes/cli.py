"""Experiment runner.

Subcommands: modes, evolve, jump-mc, exact, diff, classical.  Every output
CSV embeds the config hash, package version, kernel backend, and RNG
identity; reruns with identical inputs are byte-identical.  Exit codes:
0 ok, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys as _sys

import numpy as np

from .chain import build_uniform_chain, propagate_wavepacket
from .classical import (bandlimited_kernel, forward_sampling_counts,
                        kotelnikov_mode_count, plateau_count, sinc_subspace_overlap)
from .config import ConfigError, load_config
from .csvio import diff_series, write_csv
from .dynamics import SystemSpec, evolve_density, evolve_forward_frame
from .exact import exact_evolve
from .jumps import RNG_ALGORITHM, run_ensemble_parallel, sample_history
from .schedule import build_effective_schedule, schedule_from_text, schedule_to_text
from .significance import FrameProjection
from .streams import extract_incoming, extract_outgoing

GROUND = (1.0, 0.0)


def _chain_traj(cfg):
    chain = build_uniform_chain(cfg.eps, cfg.h, cfg.T, cfg.margin)
    traj = propagate_wavepacket(chain, cfg.T, cfg.dt_grid)
    return chain, traj


def _streams(cfg, traj):
    inc = extract_incoming(traj, cfg.T, cfg.r_cut, cfg.dt_event)
    return extract_outgoing(traj, inc)


def _system_spec(cfg) -> SystemSpec:
    return SystemSpec(eps_s=cfg.eps_s, coupling=cfg.coupling,
                      drive_amp=cfg.drive_amp, drive_freq=cfg.drive_freq)


def _out_grid(cfg):
    return np.arange(0.0, cfg.T + 1e-9, cfg.dt_out)


def _schedule_path(cfg, outdir):
    return os.path.join(outdir, f"schedule_{cfg.hash()}.txt")


def _load_schedule(cfg, outdir, explicit):
    path = explicit or _schedule_path(cfg, outdir)
    if not os.path.exists(path):
        raise ConfigError(f"missing schedule file {path}; run 'kotmodes modes' first")
    with open(path) as fh:
        return schedule_from_text(fh.read())


def cmd_modes(cfg, outdir, args):
    chain, traj = _chain_traj(cfg)
    streams = _streams(cfg, traj)
    sched = build_effective_schedule(traj, streams)
    sched.config_hash = cfg.hash()
    spath = _schedule_path(cfg, outdir)
    with open(spath, "w") as fh:
        fh.write(schedule_to_text(sched))
    grid = _out_grid(cfg)
    rows = streams.staircase_rows(grid)
    write_csv(os.path.join(outdir, f"staircase_{cfg.hash()}.csv"),
              {"t": [r[0] for r in rows], "m_in": [r[1] for r in rows],
               "m_out": [r[2] for r in rows], "r": [r[3] for r in rows]},
              config_hash=cfg.hash())
    # eigenvalue ladder of rho_plus(t) on a coarse grid
    proj = FrameProjection(traj, streams.eigenframe)
    lt, li, lp = [], [], []
    for t in np.linspace(0.0, cfg.T, 33):
        lam = np.linalg.eigvalsh(proj.sigma_plus(t))[::-1]
        for i, p in enumerate(lam):
            lt.append(t)
            li.append(i)
            lp.append(max(p, 0.0))
    write_csv(os.path.join(outdir, f"ladder_{cfg.hash()}.csv"),
              {"t": lt, "index": li, "pi": lp}, config_hash=cfg.hash())
    print(f"modes: m_in(T)={streams.m_in(cfg.T)} m_out(T)={streams.m_out(cfg.T)} "
          f"events={len(streams.events)}")
    print(f"wrote {spath}")
    return 0


def cmd_evolve(cfg, outdir, args):
    sysspec = _system_spec(cfg)
    grid = _out_grid(cfg)
    if args.frame == "incoming":
        chain, traj = _chain_traj(cfg)
        inc = extract_incoming(traj, cfg.T, cfg.r_cut, cfg.dt_event)
        series, final, _ = evolve_forward_frame(sysspec, traj, inc, GROUND,
                                                cfg.n_max, grid)
        cols = {"t": series.t, "qubit_occupation": series.qubit,
                "relevant_occupation": series.relevant,
                "detached_occupation": series.detached,
                "m_in": series.m_in, "m_out": series.m_out, "r": series.r}
    else:
        sched = _load_schedule(cfg, outdir, args.schedule)
        if args.mode == "density":
            rec, _ = evolve_density(sysspec, sched, GROUND, cfg.n_max, grid)
            mi = np.array([sched_m(sched, t, "coupling") for t in rec["t"]])
            mo = np.array([sched_m(sched, t, "decoupling") for t in rec["t"]])
            cols = {"t": rec["t"], "qubit_occupation": rec["qubit"],
                    "relevant_occupation": rec["relevant"],
                    "detached_occupation": rec["detached"],
                    "m_in": mi, "m_out": mo, "r": mi - mo}
        else:
            hist = sample_history(cfg.seed, sysspec, sched, GROUND, cfg.n_max, grid)
            s = hist.series
            cols = {"t": s.t, "qubit_occupation": s.qubit,
                    "relevant_occupation": s.relevant,
                    "detached_occupation": s.detached,
                    "m_in": s.m_in, "m_out": s.m_out, "r": s.r}
    name = f"evolve_{args.frame}_{args.mode}_{cfg.hash()}.csv"
    write_csv(os.path.join(outdir, name), cols, config_hash=cfg.hash(),
              seed=cfg.seed, rng=RNG_ALGORITHM if args.mode == "pure" else None)
    print(f"wrote {os.path.join(outdir, name)}")
    return 0


def sched_m(sched, t, kind):
    n = 0
    for iv in sched.intervals:
        if iv.end_kind == kind and iv.t1 <= t + 1e-12:
            n += 1
    return n


def cmd_jump_mc(cfg, outdir, args):
    sysspec = _system_spec(cfg)
    sched = _load_schedule(cfg, outdir, args.schedule)
    grid = _out_grid(cfg)
    res = run_ensemble_parallel(sysspec, sched, GROUND, cfg.n_max, grid,
                                cfg.n_histories, cfg.seed, workers=cfg.workers)
    write_csv(os.path.join(outdir, f"ensemble_{cfg.hash()}.csv"),
              {"t": res.t, "mean": res.qubit_mean, "stderr": res.qubit_stderr},
              config_hash=cfg.hash(), seed=cfg.seed, rng=RNG_ALGORITHM,
              extra={"n_histories": res.n_histories})
    hist = sample_history(cfg.seed, sysspec, sched, GROUND, cfg.n_max, grid,
                          history_index=0)
    write_csv(os.path.join(outdir, f"history0_{cfg.hash()}.csv"),
              {"k": np.arange(len(hist.records)),
               "t_out": [r.t_out for r in hist.records],
               "branch": [r.branch for r in hist.records],
               "prob": [r.probability for r in hist.records],
               "n_detached": [r.n_detached for r in hist.records]},
              config_hash=cfg.hash(), seed=cfg.seed, rng=RNG_ALGORITHM)
    print(f"jump-mc: {res.n_histories} histories, "
          f"final mean={res.qubit_mean[-1]:.6f} +- {res.qubit_stderr[-1]:.6f}")
    return 0


def cmd_exact(cfg, outdir, args):
    sysspec = _system_spec(cfg)
    chain = build_uniform_chain(cfg.eps, cfg.h, cfg.T, cfg.margin)
    grid = _out_grid(cfg)
    occ = exact_evolve(sysspec, chain, cfg.exact_n, cfg.exact_N, grid,
                       psi_sys=GROUND, dt=cfg.dt_exact)
    write_csv(os.path.join(outdir, f"exact_{cfg.hash()}.csv"),
              {"t": grid, "qubit_occupation": occ}, config_hash=cfg.hash())
    print(f"wrote {os.path.join(outdir, f'exact_{cfg.hash()}.csv')}")
    return 0


def cmd_diff(args):
    report = diff_series(args.a, args.b)
    worst = 0.0
    for col, stats in sorted(report.items()):
        print(f"{col}: max={stats['max']:.3e} mean={stats['mean']:.3e}")
        worst = max(worst, stats["max"])
    print(f"overall max deviation: {worst:.3e}")
    return 0


def cmd_classical(cfg, outdir, args):
    kern = bandlimited_kernel(cfg.cl_B, cfg.cl_T, cfg.cl_grid) if cfg.cl_B > 0 \
        else bandlimited_kernel(1e-9, cfg.cl_T, cfg.cl_grid)
    m, funcs, lam = kotelnikov_mode_count(kern, cfg.cl_r_cut)
    rel = lam / lam[0]
    write_csv(os.path.join(outdir, f"classical_ladder_{cfg.hash()}.csv"),
              {"index": np.arange(len(lam)), "pi": lam, "pi_rel": rel},
              config_hash=cfg.hash())
    m_half = plateau_count(kern)
    from .classical import KNEE_LEVEL
    n_knee = max(int((rel > KNEE_LEVEL).sum()), 1)
    angles = sinc_subspace_overlap(funcs[:, :n_knee], kern)
    write_csv(os.path.join(outdir, f"classical_angles_{cfg.hash()}.csv"),
              {"index": np.arange(len(angles)), "angle_rad": angles},
              config_hash=cfg.hash())
    tgrid = np.linspace(0.0, cfg.cl_T, 33)
    counts = forward_sampling_counts(kern, cfg.cl_r_cut, tgrid)
    write_csv(os.path.join(outdir, f"classical_counts_{cfg.hash()}.csv"),
              {"t": tgrid, "m": counts}, config_hash=cfg.hash())
    print(f"classical: 2BT={2*cfg.cl_B*cfg.cl_T:.1f} m({cfg.cl_r_cut:g})={m} "
          f"m(half)={m_half} max_angle={angles.max() if len(angles) else 0.0:.4f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="kotmodes", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def add_common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=".")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)

    add_common(sub.add_parser("modes", help="extract mode streams and the schedule"))
    pe = sub.add_parser("evolve", help="evolve observables from a schedule")
    add_common(pe)
    pe.add_argument("--frame", choices=["incoming", "moving"], default="moving")
    pe.add_argument("--mode", choices=["pure", "density"], default="density")
    pe.add_argument("--schedule", default=None)
    pj = sub.add_parser("jump-mc", help="Monte Carlo over jump histories")
    add_common(pj)
    pj.add_argument("--schedule", default=None)
    add_common(sub.add_parser("exact", help="brute-force reference curve"))
    pd = sub.add_parser("diff", help="compare two series CSV files")
    pd.add_argument("a")
    pd.add_argument("b")
    add_common(sub.add_parser("classical", help="classical sampling demo"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "diff":
            return cmd_diff(args)
        try:
            cfg = load_config(args.config)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        outdir = args.out
        os.makedirs(outdir, exist_ok=True)
        if args.cmd == "modes":
            return cmd_modes(cfg, outdir, args)
        if args.cmd == "evolve":
            return cmd_evolve(cfg, outdir, args)
        if args.cmd == "jump-mc":
            return cmd_jump_mc(cfg, outdir, args)
        if args.cmd == "exact":
            return cmd_exact(cfg, outdir, args)
        if args.cmd == "classical":
            return cmd_classical(cfg, outdir, args)
        raise ConfigError(f"unknown command {args.cmd}")
    except ConfigError as e:
        print(f"config error: {e}", file=_sys.stderr)
        return 2
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=_sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
