"""Hot numeric kernels: CSR matvec and weighted-gather operator actions.

Every kernel has two implementations, a numba @njit one and a pure-numpy
one.  Selection happens once at import time: set the environment variable
``KOTMODES_NUMBA=0`` to force the numpy path (useful for debugging and for
the benchmark in benchmarks/bench_kernels.py).  Both paths are exercised by
the test suite and must agree to machine precision.
"""

import os

import numpy as np

_env = os.environ.get("KOTMODES_NUMBA", "1").strip().lower()
_want_numba = _env not in ("0", "false", "no", "off")

if _want_numba:
    try:
        import numba as _nb
    except ImportError:
        _nb = None
        _want_numba = False
else:
    _nb = None

USE_NUMBA = _want_numba


def backend() -> str:
    """Identifier of the active kernel backend, recorded in output headers."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy lane

def _csr_matvec_np(data, indices, indptr, x, out):
    if len(data) == 0:
        return
    prod = data * x[indices]
    starts = np.minimum(indptr[:-1], len(prod) - 1)   # reduceat rejects len(prod)
    seg = np.add.reduceat(prod, starts)
    empty = indptr[:-1] == indptr[1:]
    if empty.any():
        seg = np.where(empty, 0.0, seg)
    out += seg


def _gather_acc_np(out, x, src, amp, c):
    sel = src >= 0
    out[sel] += c * amp[sel] * x[src[sel]]


def _gather_acc_block_np(out, x, src, amp, c):
    sel = src >= 0
    out[sel, :] += (c * amp[sel])[:, None] * x[src[sel], :]


# ---------------------------------------------------------------- numba lane

if USE_NUMBA:

    @_nb.njit(cache=True, fastmath=True)
    def _csr_matvec_nb(data, indices, indptr, x, out):
        n = out.shape[0]
        for i in range(n):
            acc = 0.0 + 0.0j
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * x[indices[k]]
            out[i] += acc

    @_nb.njit(cache=True, fastmath=True)
    def _gather_acc_nb(out, x, src, amp, c):
        n = out.shape[0]
        for i in range(n):
            s = src[i]
            if s >= 0:
                out[i] += c * amp[i] * x[s]

    @_nb.njit(cache=True, fastmath=True)
    def _gather_acc_block_nb(out, x, src, amp, c):
        n = out.shape[0]
        ncol = x.shape[1]
        for i in range(n):
            s = src[i]
            if s >= 0:
                w = c * amp[i]
                for j in range(ncol):
                    out[i, j] += w * x[s, j]


def csr_row_abs_sums(data, indptr):
    """Per-row sums of |data| for a CSR layout (robust to empty rows)."""
    nrows = len(indptr) - 1
    if len(data) == 0:
        return np.zeros(nrows)
    rows = np.repeat(np.arange(nrows), np.diff(indptr))
    return np.bincount(rows, weights=np.abs(data), minlength=nrows)


def csr_matvec_acc(data, indices, indptr, x, out):
    """out += A @ x for a CSR matrix given by (data, indices, indptr)."""
    if USE_NUMBA:
        _csr_matvec_nb(data, indices, indptr, x, out)
    else:
        _csr_matvec_np(data, indices, indptr, x, out)


def gather_acc(out, x, src, amp, c):
    """out[i] += c * amp[i] * x[src[i]] wherever src[i] >= 0.

    This is the action of a weighted one-entry-per-row operator (ladder
    operators on an occupation basis are of this form).
    """
    if USE_NUMBA:
        _gather_acc_nb(out, x, src, amp, c)
    else:
        _gather_acc_np(out, x, src, amp, c)


def gather_acc_block(out, x, src, amp, c):
    """Column-block version of gather_acc; x and out are (d, ncols)."""
    if USE_NUMBA:
        _gather_acc_block_nb(out, x, src, amp, c)
    else:
        _gather_acc_block_np(out, x, src, amp, c)
