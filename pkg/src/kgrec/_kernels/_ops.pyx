# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scatter-add kernel for the message passing hot loop."""

import numpy as np


def scatter_add_rows(double[:, ::1] out, const long long[::1] idx, const double[:, ::1] src):
    """out[idx[e], :] += src[e, :] for every row e, in row order."""
    cdef Py_ssize_t e, j
    cdef Py_ssize_t n_edges = idx.shape[0]
    cdef Py_ssize_t dim = src.shape[1]
    cdef long long t
    with nogil:
        for e in range(n_edges):
            t = idx[e]
            for j in range(dim):
                out[t, j] += src[e, j]
    return np.asarray(out)
