"""Hot numeric kernels with numba-accelerated and pure-numpy paths.

Two loops dominate runtime: the ground-truth latent rollout (sequences x
time x targets x hidden units) and the exhaustive label-assignment scan
used by the identifiability oracle. Both carry an ``@njit`` version and a
numpy fallback. Selection order:

* ``CTRLNS_DISABLE_NUMBA=1`` in the environment forces the numpy path;
* otherwise the numba path is used when numba imports cleanly;
* if numba is missing the numpy path is used silently.

Both paths are exercised against each other in the test suite, and
``benchmarks/bench_kernels.py`` times them side by side.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap

    prange = range


def numba_enabled() -> bool:
    """True when the accelerated path is importable and not disabled."""
    return HAS_NUMBA and os.environ.get("CTRLNS_DISABLE_NUMBA", "0") != "1"


def active_backend() -> str:
    return "numba" if numba_enabled() else "numpy"


# ---------------------------------------------------------------------------
# latent rollout
#
# Arrays are target-major: W1[u, j, i, h] feeds source i into hidden unit h
# of target j's subnet under regime u; clamp bounds lo/hi[u, j, i] saturate
# source i before it enters target j. One step:
#
#   z'[j] = sum_h W2[u,j,h] * tanh(sum_i W1[u,j,i,h] * clip(z[i])) + b2[u,j] + noise
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _rollout_numba(z0, domains, W1, b1, W2, b2, lo, hi, noise):  # pragma: no cover
    B, T = domains.shape
    n = z0.shape[1]
    H = W1.shape[3]
    out = np.empty((B, T, n))
    for s in prange(B):
        z = z0[s].copy()
        for t in range(T):
            u = domains[s, t]
            nxt = np.empty(n)
            for j in range(n):
                acc = b2[u, j]
                for h in range(H):
                    pre = b1[u, j, h]
                    for i in range(n):
                        v = z[i]
                        if v < lo[u, j, i]:
                            v = lo[u, j, i]
                        elif v > hi[u, j, i]:
                            v = hi[u, j, i]
                        pre += W1[u, j, i, h] * v
                    acc += W2[u, j, h] * np.tanh(pre)
                nxt[j] = acc + noise[s, t, j]
            z = nxt
            out[s, t] = z
    return out


def _rollout_numpy(z0, domains, W1, b1, W2, b2, lo, hi, noise):
    B, T = domains.shape
    n = z0.shape[1]
    out = np.empty((B, T, n))
    z = z0.copy()
    U = W1.shape[0]
    for t in range(T):
        nxt = np.empty_like(z)
        dom_t = domains[:, t]
        for u in range(U):
            rows = np.nonzero(dom_t == u)[0]
            if rows.size == 0:
                continue
            # (B_u, j, i): each target sees its own clamped copy of the state
            zc = np.clip(z[rows][:, None, :], lo[u][None], hi[u][None])
            pre = np.einsum("bji,jih->bjh", zc, W1[u]) + b1[u][None]
            nxt[rows] = np.einsum("bjh,jh->bj", np.tanh(pre), W2[u]) + b2[u][None]
        z = nxt + noise[:, t]
        out[:, t] = z
    return out


def rollout(z0, domains, W1, b1, W2, b2, lo, hi, noise) -> np.ndarray:
    """Roll latent states forward through regime-switched transition nets."""
    args = (
        np.ascontiguousarray(z0, dtype=np.float64),
        np.ascontiguousarray(domains, dtype=np.int64),
        np.ascontiguousarray(W1, dtype=np.float64),
        np.ascontiguousarray(b1, dtype=np.float64),
        np.ascontiguousarray(W2, dtype=np.float64),
        np.ascontiguousarray(b2, dtype=np.float64),
        np.ascontiguousarray(lo, dtype=np.float64),
        np.ascontiguousarray(hi, dtype=np.float64),
        np.ascontiguousarray(noise, dtype=np.float64),
    )
    if numba_enabled():
        return _rollout_numba(*args)
    return _rollout_numpy(*args)


# ---------------------------------------------------------------------------
# assignment scan
#
# Supports are packed as uint64 bitmasks (one bit per latent edge). For each
# of the L**C ways to map C partition cells onto L labels, the scan ORs the
# cell supports that share a label and accumulates the probability-weighted
# popcount each cell then pays.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _popcount64(x: np.uint64) -> int:  # pragma: no cover - numba path
    c = 0
    v = x
    while v:
        v &= v - np.uint64(1)
        c += 1
    return c


@njit(cache=True)
def _scan_numba(masks, probs, L):  # pragma: no cover - numba path
    C = masks.shape[0]
    total = L ** C
    out = np.empty(total)
    merged = np.zeros(L, dtype=np.uint64)
    for code in range(total):
        for l in range(L):
            merged[l] = np.uint64(0)
        rem = code
        for c in range(C):
            merged[rem % L] |= masks[c]
            rem = rem // L
        cost = 0.0
        rem = code
        for c in range(C):
            cost += probs[c] * _popcount64(merged[rem % L])
            rem = rem // L
        out[code] = cost
    return out


def _scan_numpy(masks, probs, L):
    C = masks.shape[0]
    total = L ** C
    out = np.empty(total)
    for code in range(total):
        merged = np.zeros(L, dtype=np.uint64)
        rem = code
        for c in range(C):
            merged[rem % L] |= masks[c]
            rem //= L
        cost = 0.0
        rem = code
        for c in range(C):
            m = int(merged[rem % L])
            cost += probs[c] * bin(m).count("1")
            rem //= L
        out[code] = cost
    return out


def scan_assignments(masks: np.ndarray, probs: np.ndarray, L: int) -> np.ndarray:
    """Expected support complexity for every cell-to-label assignment.

    Returns a vector of length ``L ** len(masks)``; entry ``code`` scores the
    assignment whose base-L digits give each cell's label (cell 0 is the
    least significant digit).
    """
    masks = np.ascontiguousarray(masks, dtype=np.uint64)
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    if masks.ndim != 1 or masks.shape != probs.shape:
        raise ValueError("masks and probs must be matching 1-D arrays")
    total = L ** masks.shape[0]
    if total > 1 << 20:
        raise ValueError(f"assignment scan of {total} codes exceeds the 2^20 budget")
    if numba_enabled():
        return _scan_numba(masks, probs, L)
    return _scan_numpy(masks, probs, L)
