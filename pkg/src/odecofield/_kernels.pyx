# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same contract as :mod:`odecofield._kernels_py`.

Per-vertex operators (``A``, ``Qx``, ``Qy``) are assumed block diagonal over
the (1, 5, 9) band partition and only their diagonal blocks are read.
"""

import numpy as np
from libc.math cimport cos, sin
from libc.stdint cimport int64_t

cdef int NC = 15
cdef int[3] BL = [0, 2, 4]
cdef int[3] BO = [0, 1, 6]


cdef inline void _ez(const double* v, double* out, double angle) noexcept nogil:
    cdef int b, l, o, m, p, q
    cdef double c, s, vp, vq
    out[0] = v[0]
    for b in range(1, 3):
        l = BL[b]
        o = BO[b]
        out[o + l] = v[o + l]
        for m in range(1, l + 1):
            c = cos(m * angle)
            s = sin(m * angle)
            p = o + l + m
            q = o + l - m
            vp = v[p]
            vq = v[q]
            out[p] = c * vp - s * vq
            out[q] = s * vp + c * vq


cdef inline void _lz(const double* v, double* out) noexcept nogil:
    cdef int b, l, o, m, p, q
    out[0] = 0.0
    for b in range(1, 3):
        l = BL[b]
        o = BO[b]
        out[o + l] = 0.0
        for m in range(1, l + 1):
            p = o + l + m
            q = o + l - m
            out[p] = -m * v[q]
            out[q] = m * v[p]


cdef inline void _matvec(const double* M, const double* v, double* out, bint transpose) noexcept nogil:
    # block-diagonal 15x15 (row-major) times v
    cdef int b, i, j, o, s
    cdef double acc
    for b in range(3):
        o = BO[b]
        s = 2 * BL[b] + 1
        for i in range(o, o + s):
            acc = 0.0
            if transpose:
                for j in range(o, o + s):
                    acc = acc + M[j * NC + i] * v[j]
            else:
                for j in range(o, o + s):
                    acc = acc + M[i * NC + j] * v[j]
            out[i] = acc


cdef inline void _conj(const double* v, double* out, double angle, const double* Q,
                       double* t1, double* t2) noexcept nogil:
    # Q exp(angle Lz) Q^T v
    _matvec(Q, v, t1, True)
    _ez(t1, t2, angle)
    _matvec(Q, t2, out, False)


cdef inline void _lconj(const double* v, double* out, const double* Q,
                        double* t1, double* t2) noexcept nogil:
    # Q Lz Q^T v
    _matvec(Q, v, t1, True)
    _lz(t1, t2)
    _matvec(Q, t2, out, False)


cdef inline double _dot(const double* a, const double* b) noexcept nogil:
    cdef int i
    cdef double acc = 0.0
    for i in range(NC):
        acc = acc + a[i] * b[i]
    return acc


cdef inline void _forward(const double* lam, const double* th, const double* Bm,
                          const double* Qx, const double* Qy,
                          double* g, double* h3, double* h2, double* h1,
                          double* t1, double* t2) noexcept nogil:
    cdef int i
    for i in range(NC):
        g[i] = Bm[3 * i] * lam[0] + Bm[3 * i + 1] * lam[1] + Bm[3 * i + 2] * lam[2]
    _ez(g, h3, th[2])
    _conj(h3, h2, th[1], Qy, t1, t2)
    _conj(h2, h1, th[0], Qx, t1, t2)


def realize(const double[:, :, ::1] A, const double[:, ::1] theta, const double[:, ::1] lam,
            const double[:, ::1] B, const double[:, ::1] Qx, const double[:, ::1] Qy):
    cdef Py_ssize_t N = theta.shape[0]
    out_arr = np.empty((N, NC), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double g[15]
    cdef double h3[15]
    cdef double h2[15]
    cdef double h1[15]
    cdef double t1[15]
    cdef double t2[15]
    cdef Py_ssize_t n
    with nogil:
        for n in range(N):
            _forward(&lam[n, 0], &theta[n, 0], &B[0, 0], &Qx[0, 0], &Qy[0, 0],
                     g, h3, h2, h1, t1, t2)
            _matvec(&A[n, 0, 0], h1, &out[n, 0], False)
    return out_arr


def realize_vjp(const double[:, :, ::1] A, const double[:, ::1] theta, const double[:, ::1] lam,
                const double[:, ::1] B, const double[:, ::1] Qx, const double[:, ::1] Qy,
                const double[:, ::1] G):
    cdef Py_ssize_t N = theta.shape[0]
    gt_arr = np.empty((N, 3), dtype=np.float64)
    gl_arr = np.empty((N, 3), dtype=np.float64)
    cdef double[:, ::1] gt = gt_arr
    cdef double[:, ::1] gl = gl_arr
    cdef double g[15]
    cdef double h3[15]
    cdef double h2[15]
    cdef double h1[15]
    cdef double t1[15]
    cdef double t2[15]
    cdef double u[15]
    cdef double w[15]
    cdef double d[15]
    cdef Py_ssize_t n
    cdef int i
    with nogil:
        for n in range(N):
            _forward(&lam[n, 0], &theta[n, 0], &B[0, 0], &Qx[0, 0], &Qy[0, 0],
                     g, h3, h2, h1, t1, t2)
            _matvec(&A[n, 0, 0], &G[n, 0], u, True)
            _lconj(h1, d, &Qx[0, 0], t1, t2)
            gt[n, 0] = _dot(u, d)
            _conj(u, w, -theta[n, 0], &Qx[0, 0], t1, t2)
            _lconj(h2, d, &Qy[0, 0], t1, t2)
            gt[n, 1] = _dot(w, d)
            _conj(w, u, -theta[n, 1], &Qy[0, 0], t1, t2)
            _lz(h3, d)
            gt[n, 2] = _dot(u, d)
            _ez(u, w, -theta[n, 2])
            gl[n, 0] = 0.0
            gl[n, 1] = 0.0
            gl[n, 2] = 0.0
            for i in range(NC):
                gl[n, 0] += B[i, 0] * w[i]
                gl[n, 1] += B[i, 1] * w[i]
                gl[n, 2] += B[i, 2] * w[i]
    return gt_arr, gl_arr


def dirichlet(const int64_t[:, ::1] edges, const double[::1] w, const double[:, ::1] F):
    cdef Py_ssize_t E = edges.shape[0]
    cdef Py_ssize_t N = F.shape[0]
    cdef Py_ssize_t K = F.shape[1]
    ev_arr = np.zeros(N, dtype=np.float64)
    g_arr = np.zeros((N, K), dtype=np.float64)
    cdef double[::1] ev = ev_arr
    cdef double[:, ::1] G = g_arr
    cdef double total = 0.0
    cdef double acc, diff, we
    cdef Py_ssize_t e, a, b, k
    with nogil:
        for e in range(E):
            a = edges[e, 0]
            b = edges[e, 1]
            we = w[e]
            acc = 0.0
            for k in range(K):
                diff = F[a, k] - F[b, k]
                acc = acc + diff * diff
                G[a, k] += 2.0 * we * diff
                G[b, k] -= 2.0 * we * diff
            acc = we * acc
            total += acc
            ev[a] += 0.5 * acc
            ev[b] += 0.5 * acc
    return total, ev_arr, g_arr
