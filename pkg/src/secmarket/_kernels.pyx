# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: SplitMix64 mask streams and squared distances.

Must stay bit-identical to ``_kernels_py``; tests compare the two.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, int8_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


def splitmix_stream(uint64_t seed, Py_ssize_t dim):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(dim, dtype=np.uint64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(dim):
            out[i] = _mix(seed + <uint64_t>(i + 1) * GOLDEN)
    return out


def expand_mask(const uint64_t[:] seeds, const int8_t[:] signs, Py_ssize_t dim):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.zeros(dim, dtype=np.uint64)
    cdef Py_ssize_t i, j, n = seeds.shape[0]
    cdef uint64_t s, v
    with nogil:
        for j in range(n):
            s = seeds[j]
            if signs[j] > 0:
                for i in range(dim):
                    out[i] += _mix(s + <uint64_t>(i + 1) * GOLDEN)
            else:
                for i in range(dim):
                    out[i] -= _mix(s + <uint64_t>(i + 1) * GOLDEN)
    return out


def sq_dist_rows(const double[:, :] X, const int64_t[:] rows, const int64_t[:] cols):
    cdef Py_ssize_t nr = rows.shape[0], nc = cols.shape[0], d = X.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((nr, nc), dtype=np.float64)
    cdef Py_ssize_t a, b, k
    cdef int64_t ra, cb
    cdef double diff, sq
    cdef long double acc
    with nogil:
        for a in range(nr):
            ra = rows[a]
            for b in range(nc):
                cb = cols[b]
                acc = 0.0
                for k in range(d):
                    diff = X[ra, k] - X[cb, k]
                    sq = diff * diff
                    acc = acc + <long double>sq
                out[a, b] = <double>acc
    return out
