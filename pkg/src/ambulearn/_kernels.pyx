# cython: language_level=3
"""Compiled inner loops. Mirrors ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, asin, sqrt, fabs, INFINITY

cnp.import_array()

cdef double EARTH_RADIUS_KM = 6371.0
cdef double DEG = 0.017453292519943295


cpdef double haversine_km(double lat1, double lon1, double lat2, double lon2):
    cdef double p1 = lat1 * DEG, p2 = lat2 * DEG
    cdef double dp = p2 - p1, dl = (lon2 - lon1) * DEG
    cdef double h = sin(dp / 2) ** 2 + cos(p1) * cos(p2) * sin(dl / 2) ** 2
    if h > 1.0:
        h = 1.0
    return 2.0 * EARTH_RADIUS_KM * asin(sqrt(h))


def haversine_matrix(double[:, :] a, double[:, :] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, :] o = out
    for i in range(n):
        for j in range(m):
            o[i, j] = haversine_km(a[i, 0], a[i, 1], b[j, 0], b[j, 1])
    return out


def max_weight_assignment(double[:, :] w):
    """Row -> column permutation maximising the total weight of a square matrix."""
    cdef Py_ssize_t n = w.shape[0]
    if w.shape[1] != n:
        raise ValueError("weight matrix must be square")
    cdef cnp.ndarray[double] u = np.zeros(n + 1)
    cdef cnp.ndarray[double] v = np.zeros(n + 1)
    cdef cnp.ndarray[double] minv = np.empty(n + 1)
    cdef cnp.ndarray[Py_ssize_t] p = np.zeros(n + 1, dtype=np.intp)
    cdef cnp.ndarray[Py_ssize_t] way = np.zeros(n + 1, dtype=np.intp)
    cdef cnp.ndarray[cnp.uint8_t] used = np.zeros(n + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = -w[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    out = np.empty(n, dtype=np.intp)
    for j in range(1, n + 1):
        out[p[j] - 1] = j - 1
    return out
