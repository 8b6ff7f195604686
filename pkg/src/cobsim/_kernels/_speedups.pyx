# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: hot inner loops of the network simulator.

Bit-for-bit equivalent to ``_pykernels``; see the equivalence tests.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

cdef extern from *:
    """
    #include <stdint.h>
    static const uint64_t DEST_STRIDE = 0xC2B2AE3D27D4EB4FULL;
    static const uint64_t HOP_STRIDE = 0x165667B19E3779F9ULL;
    static inline uint64_t sm64(uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }
    """
    unsigned long long sm64(unsigned long long x) nogil
    unsigned long long DEST_STRIDE
    unsigned long long HOP_STRIDE


def delivery_times(double t_send, object hops_obj, object seed_obj,
                   double d_min, double d_max, double cap):
    cdef cnp.ndarray[cnp.int32_t, ndim=1] hops = np.ascontiguousarray(hops_obj, dtype=np.int32)
    cdef unsigned long long seed = <unsigned long long> (int(seed_obj) & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t n = hops.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t v
    cdef int h, k
    cdef double acc, u, span = d_max - d_min
    cdef double inv = 2.0 ** -53
    cdef unsigned long long x
    for v in range(n):
        h = hops[v]
        if h < 0:
            out[v] = np.inf
            continue
        acc = 0.0
        for k in range(h):
            x = seed + (<unsigned long long> v) * DEST_STRIDE + (<unsigned long long> k) * HOP_STRIDE
            u = <double> (sm64(x) >> 11) * inv
            acc = acc + (d_min + u * span)
        if acc > cap:
            acc = cap
        out[v] = t_send + acc
    return out


def tally_votes(object deliveries_obj, object deadlines_obj, object senders_obj,
                object payloads_obj, int num_values):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] deliveries = np.ascontiguousarray(deliveries_obj, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] deadlines = np.ascontiguousarray(deadlines_obj, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] senders = np.ascontiguousarray(senders_obj, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=2] payloads = np.ascontiguousarray(payloads_obj, dtype=np.int32)
    cdef Py_ssize_t k = deliveries.shape[0]
    cdef Py_ssize_t n = deliveries.shape[1]
    cdef Py_ssize_t m = payloads.shape[1]
    cdef cnp.ndarray[cnp.int32_t, ndim=3] counts = np.zeros((n, m, num_values), dtype=np.int32)
    if k == 0:
        return counts
    cdef Py_ssize_t v, r, c, start, end, best
    cdef double t, best_t, dl
    for v in range(n):
        dl = deadlines[v]
        start = 0
        while start < k:
            end = start + 1
            while end < k and senders[end] == senders[start]:
                end += 1
            best = -1
            best_t = np.inf
            for r in range(start, end):
                t = deliveries[r, v]
                if t <= dl and t < best_t:
                    best_t = t
                    best = r
            if best >= 0:
                for c in range(m):
                    counts[v, c, payloads[best, c]] += 1
            start = end
    return counts
