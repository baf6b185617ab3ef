# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled piecewise-constant stepper.

Same contract as squidstore.kernels.pykernel.propagate, with the
eigendecomposition (LAPACK zheevd) and the matrix products (BLAS zgemm)
driven from a C loop so that small dimensions are not dominated by Python
call overhead.
"""

import numpy as np

from libc.string cimport memcmp
from scipy.linalg.cython_blas cimport zgemm
from scipy.linalg.cython_lapack cimport zheevd

ctypedef double complex zcplx

cdef extern from "complex.h" nogil:
    double complex cexp(double complex)
    double complex conj(double complex)


cdef int _eigh(zcplx* a, double* w, int d,
               zcplx* work, int lwork, double* rwork, int lrwork,
               int* iwork, int liwork) nogil:
    cdef int info = 0
    zheevd('V', 'L', &d, a, &d, w, work, &lwork, rwork, &lrwork,
           iwork, &liwork, &info)
    return info


def propagate(terms, coeffs, dts, double hbar, x0, bint conjugate=False,
              snap_steps=None):
    """Advance x0 step by step; see squidstore.kernels.pykernel.propagate."""
    cdef zcplx[:, :, ::1] t_v = np.ascontiguousarray(terms, dtype=complex)
    cdef double[:, ::1] c_v = np.ascontiguousarray(coeffs, dtype=float)
    cdef double[::1] dt_v = np.ascontiguousarray(dts, dtype=float)

    x0 = np.asarray(x0, dtype=complex)
    if x0.ndim == 1:
        x0 = x0[:, None]
    cdef int d = t_v.shape[1]
    cdef int m = x0.shape[1]
    cdef int n_steps = c_v.shape[0]
    cdef int n_terms = c_v.shape[1]
    if x0.shape[0] != d:
        raise ValueError("state dimension does not match the terms")
    if conjugate and m != d:
        raise ValueError("density propagation needs a square matrix")

    # force a copy: a (d,1) column is both C- and F-contiguous and
    # asfortranarray alone would alias the caller's buffer
    xbuf = np.array(x0, dtype=complex, order="F", copy=True)
    vbuf = np.empty((d, d), dtype=complex, order="F")
    g1 = np.empty((d, m), dtype=complex, order="F")
    g2 = np.empty((d, m), dtype=complex, order="F")
    wbuf = np.empty(d, dtype=float)
    phures = np.empty(d, dtype=complex)
    prev = np.empty(n_terms, dtype=float)

    cdef zcplx[::1, :] x_v = xbuf
    cdef zcplx[::1, :] v_v = vbuf
    cdef zcplx[::1, :] g1_v = g1
    cdef zcplx[::1, :] g2_v = g2
    cdef double[::1] w_v = wbuf
    cdef zcplx[::1] ph_v = phures
    cdef double[::1] prev_v = prev

    # workspace query
    cdef int lwork = -1, lrwork = -1, liwork = -1, info = 0
    cdef zcplx wk
    cdef double rwk
    cdef int iwk
    zheevd('V', 'L', &d, &v_v[0, 0], &d, &w_v[0], &wk, &lwork, &rwk,
           &lrwork, &iwk, &liwork, &info)
    lwork = <int>wk.real
    lrwork = <int>rwk
    liwork = iwk
    work = np.empty(lwork, dtype=complex)
    rwork = np.empty(lrwork, dtype=float)
    iwork = np.empty(liwork, dtype=np.intc)
    cdef zcplx[::1] work_v = work
    cdef double[::1] rwork_v = rwork
    cdef int[::1] iwork_v = iwork

    cdef long[::1] snap_v = None
    snaps = None
    cdef int n_snap = 0, snap_pos = 0
    if snap_steps is not None:
        snap_arr = np.ascontiguousarray(snap_steps, dtype=np.int64)
        snap_v = snap_arr
        n_snap = snap_arr.shape[0]
        snaps = np.empty((n_snap, d, m), dtype=complex)

    cdef zcplx alpha = 1.0 + 0.0j
    cdef zcplx beta = 0.0 + 0.0j
    cdef zcplx neg_i = -1.0j
    cdef int s, i, j, k
    cdef int have_decomp = 0
    cdef double cval, scale

    for s in range(n_steps):
        if (not have_decomp) or memcmp(&c_v[s, 0], &prev_v[0],
                                       n_terms * sizeof(double)) != 0:
            for j in range(d):
                for i in range(d):
                    v_v[i, j] = 0
            for k in range(n_terms):
                cval = c_v[s, k]
                if cval != 0.0:
                    for i in range(d):
                        for j in range(d):
                            v_v[i, j] = v_v[i, j] + cval * t_v[k, i, j]
            info = _eigh(&v_v[0, 0], &w_v[0], d, &work_v[0], lwork,
                         &rwork_v[0], lrwork, &iwork_v[0], liwork)
            if info != 0:
                raise np.linalg.LinAlgError(f"zheevd failed with info={info}")
            for k in range(n_terms):
                prev_v[k] = c_v[s, k]
            have_decomp = 1

        scale = dt_v[s] / hbar
        for i in range(d):
            ph_v[i] = cexp(neg_i * (w_v[i] * scale))

        if conjugate:
            # X <- V diag(p) V^H X V diag(p~) V^H
            zgemm('C', 'N', &d, &m, &d, &alpha, &v_v[0, 0], &d,
                  &x_v[0, 0], &d, &beta, &g1_v[0, 0], &d)
            zgemm('N', 'N', &d, &m, &d, &alpha, &g1_v[0, 0], &d,
                  &v_v[0, 0], &d, &beta, &g2_v[0, 0], &d)
            for j in range(d):
                for i in range(d):
                    g2_v[i, j] = g2_v[i, j] * ph_v[i] * conj(ph_v[j])
            zgemm('N', 'N', &d, &m, &d, &alpha, &v_v[0, 0], &d,
                  &g2_v[0, 0], &d, &beta, &g1_v[0, 0], &d)
            zgemm('N', 'C', &d, &m, &d, &alpha, &g1_v[0, 0], &d,
                  &v_v[0, 0], &d, &beta, &x_v[0, 0], &d)
        else:
            zgemm('C', 'N', &d, &m, &d, &alpha, &v_v[0, 0], &d,
                  &x_v[0, 0], &d, &beta, &g1_v[0, 0], &d)
            for j in range(m):
                for i in range(d):
                    g1_v[i, j] = g1_v[i, j] * ph_v[i]
            zgemm('N', 'N', &d, &m, &d, &alpha, &v_v[0, 0], &d,
                  &g1_v[0, 0], &d, &beta, &x_v[0, 0], &d)

        if snap_v is not None and snap_pos < n_snap and snap_v[snap_pos] == s:
            snaps[snap_pos] = xbuf
            snap_pos += 1

    return np.ascontiguousarray(xbuf), snaps
