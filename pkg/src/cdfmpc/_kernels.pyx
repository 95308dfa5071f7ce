# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled shooting kernels. Same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos

cnp.import_array()

BACKEND = "cython"


def rollout(const double[:, ::1] A, const double[:, ::1] B, const double[:, ::1] E, const double[:, ::1] C,
            const double[::1] x0, const double[:, ::1] U):
    cdef Py_ssize_t L = U.shape[0], n = A.shape[0], m = B.shape[1], p = C.shape[0]
    cdef Py_ssize_t i, r, c, j
    cdef double acc
    X_arr = np.empty((L + 1, n))
    cdef double[:, ::1] X = X_arr
    cdef double[::1] sc = np.empty(max(p, 1))
    for r in range(n):
        X[0, r] = x0[r]
    for i in range(L):
        for j in range(p):
            acc = 0.0
            for c in range(n):
                acc += C[j, c] * X[i, c]
            sc[j] = sin(acc)
        for r in range(n):
            acc = 0.0
            for c in range(n):
                acc += A[r, c] * X[i, c]
            for c in range(m):
                acc += B[r, c] * U[i, c]
            for j in range(p):
                acc += E[r, j] * sc[j]
            X[i + 1, r] = acc
    return X_arr


def linearize(const double[:, ::1] A, const double[:, ::1] B, const double[:, ::1] E, const double[:, ::1] C,
              const double[:, ::1] X, const double[:, ::1] U):
    cdef Py_ssize_t L = U.shape[0], n = A.shape[0], m = B.shape[1], p = C.shape[0]
    cdef Py_ssize_t i, r, c, j
    cdef double acc
    Fx_arr = np.empty((L, n, n))
    Fu_arr = np.empty((L, n, m))
    cdef double[:, :, ::1] Fx = Fx_arr
    cdef double[:, :, ::1] Fu = Fu_arr
    cdef double[::1] cc = np.empty(max(p, 1))
    for i in range(L):
        for j in range(p):
            acc = 0.0
            for c in range(n):
                acc += C[j, c] * X[i, c]
            cc[j] = cos(acc)
        for r in range(n):
            for c in range(n):
                acc = A[r, c]
                for j in range(p):
                    acc += E[r, j] * cc[j] * C[j, c]
                Fx[i, r, c] = acc
            for c in range(m):
                Fu[i, r, c] = B[r, c]
    return Fx_arr, Fu_arr


def sensitivities(const double[:, :, ::1] Fx, const double[:, :, ::1] Fu):
    cdef Py_ssize_t L = Fu.shape[0], n = Fu.shape[1], m = Fu.shape[2]
    cdef Py_ssize_t i, r, c, k, q = L * m
    cdef double acc
    S_arr = np.zeros((L + 1, n, q))
    cdef double[:, :, ::1] S = S_arr
    for i in range(L):
        # columns beyond (i+1)*m are still zero
        for r in range(n):
            for c in range(i * m):
                acc = 0.0
                for k in range(n):
                    acc += Fx[i, r, k] * S[i, k, c]
                S[i + 1, r, c] = acc
            for c in range(m):
                S[i + 1, r, i * m + c] = Fu[i, r, c]
    return S_arr


def adjoint_gradient(const double[:, :, ::1] Fx, const double[:, :, ::1] Fu, const double[:, ::1] gX):
    cdef Py_ssize_t L = Fu.shape[0], n = Fu.shape[1], m = Fu.shape[2]
    cdef Py_ssize_t i, r, c
    cdef double acc
    g_arr = np.empty(L * m)
    cdef double[::1] g = g_arr
    cdef double[::1] lam = np.empty(n)
    cdef double[::1] nxt = np.empty(n)
    for r in range(n):
        lam[r] = gX[L, r]
    for i in range(L - 1, -1, -1):
        for c in range(m):
            acc = 0.0
            for r in range(n):
                acc += Fu[i, r, c] * lam[r]
            g[i * m + c] = acc
        for c in range(n):
            acc = 0.0
            for r in range(n):
                acc += Fx[i, r, c] * lam[r]
            nxt[c] = gX[i, c] + acc
        for r in range(n):
            lam[r] = nxt[r]
    return g_arr


def weighted_quadratic_sum(const double[:, ::1] X, const double[:, ::1] Q, const double[::1] w):
    cdef Py_ssize_t T = X.shape[0], n = X.shape[1]
    cdef Py_ssize_t i, r, c
    cdef double total = 0.0, acc, row
    for i in range(T):
        if w[i] == 0.0:
            continue
        acc = 0.0
        for r in range(n):
            row = 0.0
            for c in range(n):
                row += Q[r, c] * X[i, c]
            acc += X[i, r] * row
        total += w[i] * acc
    return total
