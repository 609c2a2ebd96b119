# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hash-grid gather/scatter; same signatures as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

ctypedef fused real:
    float
    double

cdef unsigned long long P1 = 2654435761ULL
cdef unsigned long long P2 = 805459861ULL
cdef unsigned long long P3 = 3674653429ULL
cdef unsigned long long M32 = 0xFFFFFFFFULL


cdef inline long long _slot(long long c0, long long c1, long long c2, long long c3,
                            long long res, long long size, bint dense) nogil:
    cdef long long r1
    cdef unsigned long long h
    if dense:
        r1 = res + 1
        return c0 + r1 * (c1 + r1 * (c2 + r1 * c3))
    h = (<unsigned long long> c0) & M32
    h ^= ((<unsigned long long> c1) * P1) & M32
    h ^= ((<unsigned long long> c2) * P2) & M32
    h ^= ((<unsigned long long> c3) * P3) & M32
    return <long long> (h % (<unsigned long long> size))


def corner_slots(coords, res, size, dense):
    cdef long long[:, ::1] c = np.ascontiguousarray(np.asarray(coords, dtype=np.int64).reshape(-1, 4))
    out = np.empty(c.shape[0], dtype=np.int64)
    cdef long long[::1] o = out
    cdef Py_ssize_t i
    for i in range(c.shape[0]):
        o[i] = _slot(c[i, 0], c[i, 1], c[i, 2], c[i, 3], res, size, dense)
    return out.reshape(np.shape(coords)[:-1])


cdef inline void _prepare(const double* b, long long res, long long* base, double* frac) nogil:
    cdef int k
    cdef double x
    cdef long long i
    for k in range(4):
        x = b[k]
        if x < 0.0:
            x = 0.0
        elif x > 1.0:
            x = 1.0
        x = x * res
        i = <long long> floor(x)
        if i > res - 1:
            i = res - 1
        base[k] = i
        frac[k] = x - i


def encode_forward(const real[:, ::1] data, tets, bary, level_res, level_offset, level_size,
                   level_dense, long long slice_size):
    cdef long long[::1] t = np.ascontiguousarray(tets, dtype=np.int64)
    cdef double[:, ::1] b = np.ascontiguousarray(bary, dtype=np.float64)
    cdef long long[::1] lres = np.ascontiguousarray(level_res, dtype=np.int64)
    cdef long long[::1] loff = np.ascontiguousarray(level_offset, dtype=np.int64)
    cdef long long[::1] lsize = np.ascontiguousarray(level_size, dtype=np.int64)
    cdef unsigned char[::1] ldense = np.ascontiguousarray(level_dense, dtype=np.uint8)
    cdef Py_ssize_t n = t.shape[0], F = data.shape[1], L = lres.shape[0]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, L * F), dtype=dtype)
    cdef real[:, ::1] o = out
    cdef Py_ssize_t i, l, f
    cdef int c
    cdef long long base[4]
    cdef double frac[4]
    cdef double w
    cdef long long row, start
    with nogil:
        for i in range(n):
            start = t[i] * slice_size
            for l in range(L):
                _prepare(&b[i, 0], lres[l], base, frac)
                for c in range(16):
                    w = 1.0
                    w *= frac[0] if (c & 1) else 1.0 - frac[0]
                    w *= frac[1] if (c & 2) else 1.0 - frac[1]
                    w *= frac[2] if (c & 4) else 1.0 - frac[2]
                    w *= frac[3] if (c & 8) else 1.0 - frac[3]
                    row = start + loff[l] + _slot(base[0] + (c & 1), base[1] + ((c >> 1) & 1),
                                                  base[2] + ((c >> 2) & 1), base[3] + ((c >> 3) & 1),
                                                  lres[l], lsize[l], ldense[l])
                    for f in range(F):
                        o[i, l * F + f] += <real> (w * data[row, f])
    return out


def encode_backward(real[:, ::1] grad_data, tets, bary, grad_out, level_res, level_offset,
                    level_size, level_dense, long long slice_size):
    cdef long long[::1] t = np.ascontiguousarray(tets, dtype=np.int64)
    cdef double[:, ::1] b = np.ascontiguousarray(bary, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef long long[::1] lres = np.ascontiguousarray(level_res, dtype=np.int64)
    cdef long long[::1] loff = np.ascontiguousarray(level_offset, dtype=np.int64)
    cdef long long[::1] lsize = np.ascontiguousarray(level_size, dtype=np.int64)
    cdef unsigned char[::1] ldense = np.ascontiguousarray(level_dense, dtype=np.uint8)
    cdef Py_ssize_t n = t.shape[0], F = grad_data.shape[1], L = lres.shape[0]
    cdef Py_ssize_t i, l, f
    cdef int c
    cdef long long base[4]
    cdef double frac[4]
    cdef double w
    cdef long long row, start
    with nogil:
        for i in range(n):
            start = t[i] * slice_size
            for l in range(L):
                _prepare(&b[i, 0], lres[l], base, frac)
                for c in range(16):
                    w = 1.0
                    w *= frac[0] if (c & 1) else 1.0 - frac[0]
                    w *= frac[1] if (c & 2) else 1.0 - frac[1]
                    w *= frac[2] if (c & 4) else 1.0 - frac[2]
                    w *= frac[3] if (c & 8) else 1.0 - frac[3]
                    row = start + loff[l] + _slot(base[0] + (c & 1), base[1] + ((c >> 1) & 1),
                                                  base[2] + ((c >> 2) & 1), base[3] + ((c >> 3) & 1),
                                                  lres[l], lsize[l], ldense[l])
                    for f in range(F):
                        grad_data[row, f] += <real> (w * g[i, l * F + f])
