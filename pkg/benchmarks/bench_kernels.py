"""Benchmark of the hot kernels: numba @njit lane vs the pure-numpy lane.

Builds a representative register (exact-solver scale CSR, moving-frame scale
gathers) and times both implementations of each kernel, plus one full
Hamiltonian application.  Run:

    python benchmarks/bench_kernels.py

The active lane for library runs is chosen at import by KOTMODES_NUMBA.
"""

import time

import numpy as np

import kotmodes as km
from kotmodes import _kernels
from kotmodes.dynamics import ChiTable, HEffAction, get_layout
from kotmodes.exact import TruncatedChainBasis, _offdiag_csr


def timeit(fn, *args, repeat=10):
    fn(*args)          # warmup / compile
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_csr():
    sys = km.SystemSpec(eps_s=1.0, coupling=0.05, drive_amp=0.1)
    chain = km.build_uniform_chain(1.0, 0.05, 100.0)
    basis = TruncatedChainBasis.build(7, 10)
    off = _offdiag_csr(sys, chain, basis.register)
    d = off.shape[0]
    rng = np.random.default_rng(0)
    x = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    data = off.data.astype(complex)
    idx = off.indices.astype(np.int64)
    ptr = off.indptr.astype(np.int64)
    out = np.zeros_like(x)
    rows = [("csr_matvec", f"d={d}, nnz={off.nnz}")]
    t_np = timeit(lambda: _kernels._csr_matvec_np(data, idx, ptr, x, out))
    rows.append(("  numpy lane", f"{t_np*1e3:8.2f} ms"))
    if _kernels.USE_NUMBA:
        t_nb = timeit(lambda: _kernels._csr_matvec_nb(data, idx, ptr, x, out))
        rows.append(("  numba lane", f"{t_nb*1e3:8.2f} ms  (x{t_np/t_nb:.2f})"))
    return rows


def bench_gather():
    rng = np.random.default_rng(1)
    d = 200_000
    src = rng.integers(-1, d, d)
    amp = rng.standard_normal(d)
    x = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    out = np.zeros_like(x)
    rows = [("gather_acc", f"d={d}")]
    t_np = timeit(lambda: _kernels._gather_acc_np(out, x, src, amp, 0.3 + 0.1j))
    rows.append(("  numpy lane", f"{t_np*1e3:8.2f} ms"))
    if _kernels.USE_NUMBA:
        t_nb = timeit(lambda: _kernels._gather_acc_nb(out, x, src, amp, 0.3 + 0.1j))
        rows.append(("  numba lane", f"{t_nb*1e3:8.2f} ms  (x{t_np/t_nb:.2f})"))
    return rows


def bench_h_apply():
    sys = km.SystemSpec(eps_s=1.0, coupling=0.05, drive_amp=0.1)
    layout = get_layout(sys, 6, 6)
    rng = np.random.default_rng(2)
    chi = ChiTable(np.array([0.0, 1.0]),
                   (rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6))))
    D = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    act = HEffAction(sys, layout, chi, D + D.conj().T)
    x = rng.standard_normal(layout.dim) + 1j * rng.standard_normal(layout.dim)
    t = timeit(lambda: act.apply(0.5, x), repeat=50)
    return [("moving-frame H apply", f"d={layout.dim}: {t*1e3:8.3f} ms "
             f"({_kernels.backend()} lane)")]


def main():
    print(f"active backend: {_kernels.backend()}  (set KOTMODES_NUMBA=0 to force numpy)")
    for rows in (bench_csr(), bench_gather(), bench_h_apply()):
        for name, detail in rows:
            print(f"{name:24s} {detail}")


if __name__ == "__main__":
    main()
