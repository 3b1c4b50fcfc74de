"""Hot inner loops, each in a numba-compiled and a pure-numpy flavour.

The numba path is used when numba imports and ``MFRBSDE_DISABLE_NUMBA`` is
unset (or set to ``0``). Both flavours are always importable as
``NUMPY_KERNELS`` / ``NUMBA_KERNELS`` so tests and the benchmark can compare
them directly.

Triangular lattice data is passed to kernels as square float arrays padded
with zeros: row ``i`` holds the ``i + 1`` node values of level ``i``.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _numba_disabled() -> bool:
    flag = os.environ.get("MFRBSDE_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("", "0", "false", "no")


# ---------------------------------------------------------------- numpy path

def backward_accumulate_np(source, terminal):
    m = terminal.shape[0] - 1
    out = np.zeros((m + 1, m + 1))
    out[m, : m + 1] = terminal
    for i in range(m - 1, -1, -1):
        nxt = out[i + 1, : i + 2]
        out[i, : i + 1] = source[i, : i + 1] + 0.5 * (nxt[:-1] + nxt[1:])
    return out


def accumulate_k_np(dk):
    n = dk.shape[0]
    k = np.zeros((n + 1, n + 1))
    for i in range(n):
        base = k[i, : i + 1] + dk[i, : i + 1]
        j = np.arange(i + 2, dtype=np.float64)
        left = np.zeros(i + 2)
        right = np.zeros(i + 2)
        left[1:] = base
        right[:-1] = base
        k[i + 1, : i + 2] = (j * left + (i + 1 - j) * right) / (i + 1)
    return k


def merge_atoms_np(values, weights, tol):
    order = np.argsort(values, kind="mergesort")
    v = values[order]
    w = weights[order]
    if v.size == 0:
        return v, w
    # start a new atom wherever the gap to the previous group's anchor exceeds tol
    starts = [0]
    anchor = v[0]
    for idx in range(1, v.size):
        if v[idx] - anchor > tol:
            starts.append(idx)
            anchor = v[idx]
    starts = np.asarray(starts)
    return v[starts], np.add.reduceat(w, starts)


def w1_quantile_np(va, wa, vb, wb):
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ca[-1] = 1.0
    cb[-1] = 1.0
    cuts = np.union1d(ca, cb)
    lo = np.concatenate(([0.0], cuts[:-1]))
    widths = cuts - lo
    mid = lo + 0.5 * widths
    qa = va[np.minimum(np.searchsorted(ca, mid, side="left"), va.size - 1)]
    qb = vb[np.minimum(np.searchsorted(cb, mid, side="left"), vb.size - 1)]
    return float(np.sum(np.abs(qa - qb) * widths))


NUMPY_KERNELS = {
    "backward_accumulate": backward_accumulate_np,
    "accumulate_k": accumulate_k_np,
    "merge_atoms": merge_atoms_np,
    "w1_quantile": w1_quantile_np,
}


# ---------------------------------------------------------------- numba path

def _build_numba_kernels():
    njit = numba.njit(cache=True, nogil=True)

    @njit
    def backward_accumulate_nb(source, terminal):
        m = terminal.shape[0] - 1
        out = np.zeros((m + 1, m + 1))
        for j in range(m + 1):
            out[m, j] = terminal[j]
        for i in range(m - 1, -1, -1):
            for j in range(i + 1):
                out[i, j] = source[i, j] + 0.5 * (out[i + 1, j] + out[i + 1, j + 1])
        return out

    @njit
    def accumulate_k_nb(dk):
        n = dk.shape[0]
        k = np.zeros((n + 1, n + 1))
        for i in range(n):
            for j in range(i + 2):
                acc = 0.0
                if j >= 1:
                    acc += j * (k[i, j - 1] + dk[i, j - 1])
                if j <= i:
                    acc += (i + 1 - j) * (k[i, j] + dk[i, j])
                k[i + 1, j] = acc / (i + 1)
        return k

    @njit
    def merge_atoms_nb(values, weights, tol):
        order = np.argsort(values, kind="mergesort")
        n = values.shape[0]
        out_v = np.empty(n)
        out_w = np.empty(n)
        if n == 0:
            return out_v, out_w
        count = 0
        anchor = values[order[0]]
        out_v[0] = anchor
        out_w[0] = weights[order[0]]
        for idx in range(1, n):
            v = values[order[idx]]
            if v - anchor > tol:
                count += 1
                anchor = v
                out_v[count] = v
                out_w[count] = weights[order[idx]]
            else:
                out_w[count] += weights[order[idx]]
        return out_v[: count + 1].copy(), out_w[: count + 1].copy()

    @njit
    def w1_quantile_nb(va, wa, vb, wb):
        # walk both quantile functions over the merged cumulative-weight partition
        ia = 0
        ib = 0
        ca = wa[0]
        cb = wb[0]
        u = 0.0
        total = 0.0
        na = va.shape[0]
        nb = vb.shape[0]
        while ia < na and ib < nb:
            last_a = ia == na - 1
            last_b = ib == nb - 1
            ea = 1.0 if last_a else ca
            eb = 1.0 if last_b else cb
            nxt = ea if ea < eb else eb
            total += abs(va[ia] - vb[ib]) * (nxt - u)
            u = nxt
            if ea <= nxt:
                ia += 1
                if ia < na:
                    ca += wa[ia]
            if eb <= nxt:
                ib += 1
                if ib < nb:
                    cb += wb[ib]
        return total

    return {
        "backward_accumulate": backward_accumulate_nb,
        "accumulate_k": accumulate_k_nb,
        "merge_atoms": merge_atoms_nb,
        "w1_quantile": w1_quantile_nb,
    }


NUMBA_KERNELS = _build_numba_kernels() if numba is not None else None

if NUMBA_KERNELS is not None and not _numba_disabled():
    BACKEND = "numba"
    _ACTIVE = NUMBA_KERNELS
else:
    BACKEND = "numpy"
    _ACTIVE = NUMPY_KERNELS

backward_accumulate = _ACTIVE["backward_accumulate"]
accumulate_k = _ACTIVE["accumulate_k"]
merge_atoms = _ACTIVE["merge_atoms"]
w1_quantile = _ACTIVE["w1_quantile"]


def pad_levels(levels, width=None):
    """Pack a list of per-level arrays into a zero-padded square array."""
    rows = len(levels)
    width = rows if width is None else width
    out = np.zeros((rows, width))
    for i, row in enumerate(levels):
        out[i, : row.shape[0]] = row
    return out


def unpad_levels(square, count=None):
    count = square.shape[0] if count is None else count
    return [square[i, : i + 1].copy() for i in range(count)]
