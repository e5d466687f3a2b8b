"""Truncated occupation-number register and ladder-operator tables.

The register enumerates tuples (n_1 ... n_r) with sum <= n_max in
lexicographic order; its size is C(n_max + r, r).  Ladder operators on this
basis move between neighbouring tuples, so their action is a weighted gather
(one source index and amplitude per row), which is what the hot kernels
consume.  Joint indices are system-major: idx = s * size + f.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

import scipy.sparse as sp


def _enumerate_states(n_modes: int, n_max: int):
    states = []
    # depth-first lexicographic enumeration of tuples with sum <= n_max
    def rec(prefix, budget):
        if len(prefix) == n_modes:
            states.append(prefix)
            return
        for k in range(budget + 1):
            rec(prefix + (k,), budget - k)
    rec((), n_max)
    return states


class FockRegister:
    """Occupation basis of r slots truncated at total occupation n_max."""

    def __init__(self, n_modes: int, n_max: int):
        if n_modes < 0 or n_max < 0:
            raise ValueError("n_modes and n_max must be non-negative")
        self.n_modes = n_modes
        self.n_max = n_max
        self.states = _enumerate_states(n_modes, n_max)
        self.index = {s: i for i, s in enumerate(self.states)}
        self.size = len(self.states)
        if self.size != comb(n_max + n_modes, n_modes):
            raise RuntimeError("basis enumeration is not a bijection")
        self.occ = np.array(self.states, dtype=np.int64).reshape(self.size, n_modes)
        self.occ_total = self.occ.sum(axis=1)

    def vacuum_index(self) -> int:
        return self.index[(0,) * self.n_modes]

    # maps are gather tables: (out)[i] += amp[i] * x[src[i]] where src >= 0
    def annihilation_map(self, slot: int):
        """Gather table of a_slot: row s receives sqrt(n+1) x[s + e_slot]."""
        src = np.full(self.size, -1, dtype=np.int64)
        amp = np.zeros(self.size)
        for i, s in enumerate(self.states):
            if sum(s) < self.n_max:
                s2 = s[:slot] + (s[slot] + 1,) + s[slot + 1:]
                src[i] = self.index[s2]
                amp[i] = np.sqrt(s[slot] + 1.0)
        return src, amp

    def creation_map(self, slot: int):
        """Gather table of a_slot^dag: row s receives sqrt(n) x[s - e_slot]."""
        src = np.full(self.size, -1, dtype=np.int64)
        amp = np.zeros(self.size)
        for i, s in enumerate(self.states):
            if s[slot] > 0:
                s2 = s[:slot] + (s[slot] - 1,) + s[slot + 1:]
                src[i] = self.index[s2]
                amp[i] = np.sqrt(float(s[slot]))
        return src, amp

    def hopping_csr(self, hmat: np.ndarray) -> sp.csr_matrix:
        """CSR of the off-diagonal part of sum_kl hmat[k,l] a_k^dag a_l.

        a_k^dag a_l conserves the total occupation, so every target tuple
        stays inside the basis.  Assembled one nonzero (k, l) pair at a time
        to keep the working set small at large register sizes.
        """
        r = self.n_modes
        rows, cols, vals = [], [], []
        for k in range(r):
            for l in range(r):
                if k == l or hmat[k, l] == 0.0:
                    continue
                src = np.where(self.occ[:, l] > 0)[0]
                if len(src) == 0:
                    continue
                tgt = np.empty(len(src), dtype=np.int64)
                for a, i in enumerate(src):
                    s = self.states[i]
                    s2 = s[:l] + (s[l] - 1,) + s[l + 1:]
                    s2 = s2[:k] + (s2[k] + 1,) + s2[k + 1:]
                    tgt[a] = self.index[s2]
                amp = np.sqrt(self.occ[src, l] * (self.occ[src, k] + 1.0))
                rows.append(tgt)
                cols.append(src)
                vals.append(hmat[k, l] * amp)
        if not rows:
            return sp.csr_matrix((self.size, self.size), dtype=complex)
        return sp.csr_matrix((np.concatenate(vals).astype(complex),
                              (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.size, self.size))

    def grow_map(self) -> np.ndarray:
        """Index map embedding (n_1..n_r) -> (n_1..n_r, 0) into r+1 slots."""
        big = FockRegister(self.n_modes + 1, self.n_max)
        out = np.empty(self.size, dtype=np.int64)
        for i, s in enumerate(self.states):
            out[i] = big.index[s + (0,)]
        return out

    def detach_maps(self):
        """Index tables splitting slot 0 from the rest.

        Returns (rest_register, rest_idx, n0) with, for every basis state i,
        its slot-0 occupation n0[i] and the index of (n_2..n_r) in the
        reduced register.
        """
        rest = FockRegister(self.n_modes - 1, self.n_max)
        rest_idx = np.empty(self.size, dtype=np.int64)
        n0 = np.empty(self.size, dtype=np.int64)
        for i, s in enumerate(self.states):
            n0[i] = s[0]
            rest_idx[i] = rest.index[s[1:]]
        return rest, rest_idx, n0
