import os
import subprocess
import sys

import numpy as np
import scipy.sparse as sp

from kotmodes import _kernels


def _random_csr(rng, d, nnz_per_row):
    rows = np.repeat(np.arange(d), nnz_per_row)
    cols = rng.integers(0, d, d * nnz_per_row)
    vals = rng.standard_normal(d * nnz_per_row) + 1j * rng.standard_normal(d * nnz_per_row)
    return sp.csr_matrix((vals, (rows, cols)), shape=(d, d))


def test_csr_matvec_paths_agree():
    rng = np.random.default_rng(0)
    A = _random_csr(rng, 500, 4)
    x = rng.standard_normal(500) + 1j * rng.standard_normal(500)
    ref = A @ x
    for impl in (_kernels._csr_matvec_np,) + ((_kernels._csr_matvec_nb,) if _kernels.USE_NUMBA else ()):
        out = np.zeros_like(x)
        impl(A.data, A.indices.astype(np.int64), A.indptr.astype(np.int64), x, out)
        assert np.abs(out - ref).max() < 1e-12


def test_csr_matvec_empty_rows():
    # rows with no entries must contribute zero
    d = 8
    A = sp.csr_matrix((np.array([2.0 + 0j]), (np.array([3]), np.array([1]))), shape=(d, d))
    x = np.arange(d, dtype=complex)
    out = np.zeros(d, dtype=complex)
    _kernels._csr_matvec_np(A.data, A.indices.astype(np.int64),
                            A.indptr.astype(np.int64), x, out)
    ref = A @ x
    assert np.abs(out - ref).max() < 1e-14


def test_gather_paths_agree():
    rng = np.random.default_rng(1)
    d = 400
    src = rng.integers(-1, d, d)
    amp = rng.standard_normal(d)
    x = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    c = 0.3 - 0.7j
    outs = []
    impls = [_kernels._gather_acc_np] + ([_kernels._gather_acc_nb] if _kernels.USE_NUMBA else [])
    for impl in impls:
        out = np.ones(d, dtype=complex)
        impl(out, x, src, amp, c)
        outs.append(out)
    ref = np.ones(d, dtype=complex)
    sel = src >= 0
    ref[sel] += c * amp[sel] * x[src[sel]]
    for out in outs:
        assert np.abs(out - ref).max() < 1e-14


def test_gather_block_paths_agree():
    rng = np.random.default_rng(2)
    d, ncol = 200, 5
    src = rng.integers(-1, d, d)
    amp = rng.standard_normal(d)
    X = rng.standard_normal((d, ncol)) + 1j * rng.standard_normal((d, ncol))
    c = 1.1 + 0.2j
    ref = np.zeros((d, ncol), dtype=complex)
    sel = src >= 0
    ref[sel, :] = (c * amp[sel])[:, None] * X[src[sel], :]
    impls = [_kernels._gather_acc_block_np] + \
        ([_kernels._gather_acc_block_nb] if _kernels.USE_NUMBA else [])
    for impl in impls:
        out = np.zeros((d, ncol), dtype=complex)
        impl(out, X, src, amp, c)
        assert np.abs(out - ref).max() < 1e-14


def test_env_flag_selects_numpy_backend():
    code = ("import kotmodes._kernels as k; "
            "print(k.backend(), k.USE_NUMBA)")
    env = dict(os.environ, KOTMODES_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "False"]


def test_backend_reported():
    assert _kernels.backend() in ("numba", "numpy")
