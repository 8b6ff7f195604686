"""Pure-python (numpy) kernels: the fallback backend.

These must produce bit-identical results to the compiled twins in
``_speedups.pyx``: identical integer mixing, identical float64 operation
order.  Trace digests may never depend on which backend is active.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MUL2 = np.uint64(0x94D049BB133111EB)
_DEST_STRIDE = np.uint64(0xC2B2AE3D27D4EB4F)
_HOP_STRIDE = np.uint64(0x165667B19E3779F9)
_INV_2_53 = float(2.0**-53)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + _SM_GAMMA) & _U64
    x = ((x ^ (x >> np.uint64(30))) * _SM_MUL1) & _U64
    x = ((x ^ (x >> np.uint64(27))) * _SM_MUL2) & _U64
    return x ^ (x >> np.uint64(31))


def delivery_times(t_send, hops, seed, d_min, d_max, cap):
    """Per-destination delivery times for one gossiped message.

    hops[v] is the hop distance from the origin (0 = origin itself,
    negative = unreachable).  Each hop contributes a delay sampled
    uniformly from [d_min, d_max) by a counter-based PRF keyed on
    (seed, destination, hop); the end-to-end delay is clamped to ``cap``.
    """
    hops = np.asarray(hops, dtype=np.int32)
    n = hops.shape[0]
    out = np.empty(n, dtype=np.float64)
    maxh = int(hops.max(initial=0))
    if maxh > 0:
        dests = np.arange(n, dtype=np.uint64)
        ks = np.arange(maxh, dtype=np.uint64)
        x = (
            np.uint64(seed)
            + dests[:, None] * _DEST_STRIDE
            + ks[None, :] * _HOP_STRIDE
        ) & _U64
        u = (_splitmix64(x) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        delays = d_min + u * (d_max - d_min)
        acc = np.add.accumulate(delays, axis=1)
        total = np.empty(n, dtype=np.float64)
        pos = hops > 0
        total[pos] = acc[np.nonzero(pos)[0], hops[pos] - 1]
        total[~pos] = 0.0
        np.minimum(total, cap, out=total)
        out[:] = t_send + total
    else:
        out[:] = t_send
    out[hops < 0] = np.inf
    return out


def tally_votes(deliveries, deadlines, senders, payloads, num_values):
    """Per-node per-component value counts with first-arrival sender dedup.

    deliveries: (k, n) float64, per-row per-node arrival time (inf = never).
    deadlines:  (n,) float64, per-node tally cutoff (inclusive).
    senders:    (k,) int32, nondecreasing; equal ids are variants of one sender.
    payloads:   (k, m) int32 value ids in [0, num_values).
    Returns (n, m, num_values) int32 counts.
    """
    deliveries = np.asarray(deliveries, dtype=np.float64)
    deadlines = np.asarray(deadlines, dtype=np.float64)
    senders = np.asarray(senders, dtype=np.int32)
    payloads = np.asarray(payloads, dtype=np.int32)
    k, n = deliveries.shape
    m = payloads.shape[1]
    if k == 0:
        return np.zeros((n, m, num_values), dtype=np.int32)
    counted = deliveries <= deadlines[None, :]
    # Resolve multi-row senders: keep, per node, the earliest counted row
    # (ties broken toward the lower row index).
    start = 0
    while start < k:
        end = start + 1
        while end < k and senders[end] == senders[start]:
            end += 1
        if end - start > 1:
            best_w = np.where(counted[start], deliveries[start], np.inf)
            best_r = np.full(n, start, dtype=np.int64)
            for r in range(start + 1, end):
                w = np.where(counted[r], deliveries[r], np.inf)
                better = w < best_w
                best_w = np.where(better, w, best_w)
                best_r = np.where(better, r, best_r)
            for r in range(start, end):
                counted[r] = (best_r == r) & np.isfinite(best_w)
        start = end
    onehot = np.zeros((k, m * num_values), dtype=np.int32)
    cols = np.arange(m, dtype=np.int32) * num_values
    onehot[np.arange(k)[:, None], cols[None, :] + payloads] = 1
    counts = counted.T.astype(np.int32) @ onehot
    return counts.reshape(n, m, num_values)
