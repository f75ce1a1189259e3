"""Hot inner loops of the ERM routines.

Every kernel has a pure-numpy implementation (``*_np``) and a loop
implementation compiled with numba (``*_nb``). The public names bind to one
of them according to ``DG_RISKLAB_BACKEND`` (``numba`` or ``numpy``; default
``numba`` when it imports). Both paths accumulate in the same order and
return identical results; ``tests/test_kernels.py`` holds them to that.

Conventions shared by the kernels:

* weights arrive grouped by sorted, distinct x positions;
* ties are resolved toward the first candidate in scan order, where a
  candidate only replaces the incumbent if it is better by more than ``tol``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

TOL = 1e-12


def _requested_backend() -> str:
    value = os.environ.get("DG_RISKLAB_BACKEND", "numba").strip().lower()
    if value not in ("numba", "numpy"):
        raise ValueError(f"DG_RISKLAB_BACKEND must be 'numba' or 'numpy', got {value!r}")
    return value if HAVE_NUMBA else "numpy"


# --- weighted counts --------------------------------------------------------


def weighted_counts_np(cell, label, weight, n_cells, n_labels):
    flat = cell.astype(np.int64) * n_labels + label.astype(np.int64)
    out = np.bincount(flat, weights=weight, minlength=n_cells * n_labels)
    return out.reshape(n_cells, n_labels)


def _weighted_counts_loop(cell, label, weight, n_cells, n_labels):
    out = np.zeros((n_cells, n_labels))
    for i in range(cell.shape[0]):
        out[cell[i], label[i]] += weight[i]
    return out


# --- threshold scan ---------------------------------------------------------


def threshold_scan_np(w1, w2, wo, tol=TOL):
    """Best (split, orientation) for a 1-D threshold rule on grouped weights.

    ``w1[i]``, ``w2[i]``, ``wo[i]`` are the weights of class 1, class 2 and
    any other class at the i-th distinct x (ascending). Split ``s`` in
    ``0..n`` puts the first ``s`` distinct points on the left (``s = 0`` is
    a threshold of ``-inf``, ``s = n`` of ``+inf``). Orientation ``+1``
    predicts class 2 right of the threshold, ``-1`` predicts class 1 there.

    Returns ``(split, orientation, weighted_error)``.
    """
    n = w1.shape[0]
    c1 = np.zeros(n + 1)
    c2 = np.zeros(n + 1)
    ct = np.zeros(n + 1)
    c1[1:] = np.cumsum(w1)
    c2[1:] = np.cumsum(w2)
    ct[1:] = np.cumsum(w1 + w2 + wo)
    t1, t2, tt = c1[n], c2[n], ct[n]
    err_plus = (ct - c1) + ((tt - ct) - (t2 - c2))
    err_minus = (ct - c2) + ((tt - ct) - (t1 - c1))
    errs = np.empty(2 * (n + 1))
    errs[0::2] = err_plus
    errs[1::2] = err_minus
    best = _first_within(errs, tol)
    return best // 2, 1 if best % 2 == 0 else -1, errs[best]


def _first_within(errs, tol):
    # sequential "replace only if better by more than tol", vectorized
    best = 0
    for i in np.nonzero(errs < errs[0] - tol)[0]:
        if errs[i] < errs[best] - tol:
            best = i
    return int(best)


def _threshold_scan_loop(w1, w2, wo, tol=TOL):
    n = w1.shape[0]
    t1 = 0.0
    t2 = 0.0
    tt = 0.0
    for i in range(n):
        t1 += w1[i]
        t2 += w2[i]
        tt += w1[i] + w2[i] + wo[i]
    c1 = 0.0
    c2 = 0.0
    ct = 0.0
    best_s = 0
    best_o = 1
    best_e = np.inf
    for s in range(n + 1):
        if s > 0:
            c1 += w1[s - 1]
            c2 += w2[s - 1]
            ct += w1[s - 1] + w2[s - 1] + wo[s - 1]
        e_plus = (ct - c1) + ((tt - ct) - (t2 - c2))
        e_minus = (ct - c2) + ((tt - ct) - (t1 - c1))
        if s == 0:
            best_e = e_plus
        elif e_plus < best_e - tol:
            best_s, best_o, best_e = s, 1, e_plus
        if e_minus < best_e - tol:
            best_s, best_o, best_e = s, -1, e_minus
    return best_s, best_o, best_e


# --- stump scan over bins ---------------------------------------------------


def stump_scan_np(counts, bin_start, tol=TOL):
    """Best two-label split inside each bin.

    ``counts`` is ``(n_points, K)``: per distinct x (ascending, grouped by
    bin), the weight of each class. Bin ``b`` owns rows
    ``bin_start[b]:bin_start[b + 1]``. Within a bin, split ``s`` sends the
    first ``s`` rows left; each side takes its heaviest class (lowest index
    on ties). ``s = 0`` leaves only a right side, i.e. a constant leaf.

    Returns arrays ``split, left_label, right_label, correct`` per bin.
    """
    n_bins = bin_start.shape[0] - 1
    k = counts.shape[1]
    split = np.zeros(n_bins, dtype=np.int64)
    left = np.zeros(n_bins, dtype=np.int64)
    right = np.zeros(n_bins, dtype=np.int64)
    correct = np.zeros(n_bins)
    for b in range(n_bins):
        lo, hi = bin_start[b], bin_start[b + 1]
        n = hi - lo
        cum = np.zeros((n + 1, k))
        if n:
            cum[1:] = np.cumsum(counts[lo:hi], axis=0)
        rest = cum[n][None, :] - cum
        score = cum.max(axis=1) + rest.max(axis=1)
        score[0] = rest[0].max()
        best = 0
        for s in np.nonzero(score > score[0] + tol)[0]:
            if score[s] > score[best] + tol:
                best = s
        split[b] = best
        right[b] = _label_low(rest[best], tol)
        left[b] = _label_low(cum[best], tol) if best > 0 else right[b]
        correct[b] = score[best]
    return split, left, right, correct


def _label_low(row, tol):
    return int(np.argmax(row >= row.max() - tol))


def _stump_scan_loop(counts, bin_start, tol=TOL):
    n_bins = bin_start.shape[0] - 1
    k = counts.shape[1]
    split = np.zeros(n_bins, dtype=np.int64)
    left = np.zeros(n_bins, dtype=np.int64)
    right = np.zeros(n_bins, dtype=np.int64)
    correct = np.zeros(n_bins)
    cum = np.zeros(k)
    tot = np.zeros(k)
    for b in range(n_bins):
        lo = bin_start[b]
        hi = bin_start[b + 1]
        for c in range(k):
            cum[c] = 0.0
            tot[c] = 0.0
        for i in range(lo, hi):
            for c in range(k):
                tot[c] += counts[i, c]
        best_s = 0
        best_score = -1.0
        for s in range(hi - lo + 1):
            if s > 0:
                for c in range(k):
                    cum[c] += counts[lo + s - 1, c]
            lmax = 0.0
            rmax = -1.0
            for c in range(k):
                if cum[c] > lmax:
                    lmax = cum[c]
                r = tot[c] - cum[c]
                if r > rmax:
                    rmax = r
            score = rmax if s == 0 else lmax + rmax
            if s == 0:
                best_score = score
            elif score > best_score + tol:
                best_s = s
                best_score = score
        # recover labels at the chosen split
        for c in range(k):
            cum[c] = 0.0
        for i in range(lo, lo + best_s):
            for c in range(k):
                cum[c] += counts[i, c]
        lmax = -1.0
        rmax = -1.0
        for c in range(k):
            if cum[c] > lmax:
                lmax = cum[c]
            if tot[c] - cum[c] > rmax:
                rmax = tot[c] - cum[c]
        rl = 0
        for c in range(k):
            if tot[c] - cum[c] >= rmax - tol:
                rl = c
                break
        ll = rl
        if best_s > 0:
            for c in range(k):
                if cum[c] >= lmax - tol:
                    ll = c
                    break
        split[b] = best_s
        left[b] = ll
        right[b] = rl
        correct[b] = best_score
    return split, left, right, correct


if HAVE_NUMBA:
    weighted_counts_nb = numba.njit(cache=True)(_weighted_counts_loop)
    threshold_scan_nb = numba.njit(cache=True)(_threshold_scan_loop)
    stump_scan_nb = numba.njit(cache=True)(_stump_scan_loop)
else:  # pragma: no cover
    weighted_counts_nb = _weighted_counts_loop
    threshold_scan_nb = _threshold_scan_loop
    stump_scan_nb = _stump_scan_loop

BACKEND = _requested_backend()

if BACKEND == "numba":
    weighted_counts = weighted_counts_nb
    threshold_scan = threshold_scan_nb
    stump_scan = stump_scan_nb
else:
    weighted_counts = weighted_counts_np
    threshold_scan = threshold_scan_np
    stump_scan = stump_scan_np
