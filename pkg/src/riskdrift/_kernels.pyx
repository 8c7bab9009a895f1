# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backward-recursion kernels.

Twin of riskdrift._kernels_py: same functions, same operation order, compiled
with -ffp-contract=off so results match the numpy fallback bit for bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fmax

cnp.import_array()

IS_COMPILED = True


cdef inline void _lattice_layer_c(double* y, double* b, double* sig,
                                  double* cost, double glo, double ghi,
                                  double dt, double dx, Py_ssize_t m,
                                  double* out) nogil:
    cdef Py_ssize_t i
    cdef double dx2 = dx * dx
    cdef double ym, yp, y0, q, r, p_up, p_dn, p_st, ey, bdt, znum, denom, z, g
    for i in range(m):
        y0 = y[i]
        ym = y[i - 1] if i > 0 else y[0]
        yp = y[i + 1] if i < m - 1 else y[m - 1]
        q = sig[i] * sig[i] * dt / dx2
        r = b[i] * dt / dx
        p_up = 0.5 * (q + r)
        p_dn = 0.5 * (q - r)
        p_st = 1.0 - q
        ey = p_dn * ym + p_st * y0
        ey = ey + p_up * yp
        bdt = b[i] * dt
        znum = p_dn * ym * (-dx - bdt) + p_st * y0 * (-bdt)
        znum = znum + p_up * yp * (dx - bdt)
        denom = sig[i] * dt
        if denom != 0.0:
            z = znum / denom
        else:
            z = 0.0
        g = fmax(glo * z, ghi * z)
        out[i] = ey + dt * (cost[i] + g)


def lattice_layer(cnp.ndarray[double, ndim=1] y_next,
                  cnp.ndarray[double, ndim=1] b,
                  cnp.ndarray[double, ndim=1] sig,
                  cnp.ndarray[double, ndim=1] cost,
                  double glo, double ghi, double dt, double dx,
                  cnp.ndarray[double, ndim=1] out=None):
    cdef Py_ssize_t m = y_next.shape[0]
    if out is None:
        out = np.empty(m, dtype=np.float64)
    _lattice_layer_c(&y_next[0], &b[0], &sig[0], &cost[0], glo, ghi, dt, dx,
                     m, &out[0])
    return out


def lattice_zprofile(cnp.ndarray[double, ndim=1] y_next,
                     cnp.ndarray[double, ndim=1] b,
                     cnp.ndarray[double, ndim=1] sig,
                     double dt, double dx):
    cdef Py_ssize_t m = y_next.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(m, dtype=np.float64)
    cdef Py_ssize_t i
    cdef double dx2 = dx * dx
    cdef double ym, yp, y0, q, r, p_up, p_dn, p_st, bdt, znum, denom
    for i in range(m):
        y0 = y_next[i]
        ym = y_next[i - 1] if i > 0 else y_next[0]
        yp = y_next[i + 1] if i < m - 1 else y_next[m - 1]
        q = sig[i] * sig[i] * dt / dx2
        r = b[i] * dt / dx
        p_up = 0.5 * (q + r)
        p_dn = 0.5 * (q - r)
        p_st = 1.0 - q
        bdt = b[i] * dt
        znum = p_dn * ym * (-dx - bdt) + p_st * y0 * (-bdt)
        znum = znum + p_up * yp * (dx - bdt)
        denom = sig[i] * dt
        if denom != 0.0:
            out[i] = znum / denom
        else:
            out[i] = 0.0
    return out


def lattice_sweep(cnp.ndarray[double, ndim=1] y_terminal,
                  cnp.ndarray[double, ndim=1] b,
                  cnp.ndarray[double, ndim=1] sig,
                  cnp.ndarray[double, ndim=1] cost,
                  cnp.ndarray[double, ndim=1] glo_arr,
                  cnp.ndarray[double, ndim=1] ghi_arr,
                  double dt, double dx):
    cdef Py_ssize_t m = y_terminal.shape[0]
    cdef Py_ssize_t n = glo_arr.shape[0]
    cdef cnp.ndarray[double, ndim=1] buf_a = np.array(y_terminal, dtype=np.float64, copy=True)
    cdef cnp.ndarray[double, ndim=1] buf_b = np.empty(m, dtype=np.float64)
    cdef double* src = &buf_a[0]
    cdef double* dst = &buf_b[0]
    cdef double* tmp
    cdef Py_ssize_t k
    with nogil:
        for k in range(n - 1, -1, -1):
            _lattice_layer_c(src, &b[0], &sig[0], &cost[0],
                             glo_arr[k], ghi_arr[k], dt, dx, m, dst)
            tmp = src
            src = dst
            dst = tmp
    if src == &buf_a[0]:
        return buf_a
    return buf_b


cdef inline void _hjb_layer_c(double* v, double* b_c, double* sig_c,
                              double* cost_c, double glo, double ghi,
                              double dt, double dx, Py_ssize_t m,
                              Py_ssize_t n_u, double* out,
                              cnp.int32_t* pol) nogil:
    cdef Py_ssize_t i, u
    cdef double dx2 = dx * dx
    cdef double vm, vp, v0, d2, dfw, dbw, s, bb, alo, ahi, adv_lo, adv_hi, adv
    cdef double cand, best
    cdef Py_ssize_t besti
    for i in range(m):
        v0 = v[i]
        vm = v[i - 1] if i > 0 else v[0]
        vp = v[i + 1] if i < m - 1 else v[m - 1]
        d2 = (vp - 2.0 * v0 + vm) / dx2
        dfw = (vp - v0) / dx
        dbw = (v0 - vm) / dx
        best = 0.0
        besti = 0
        for u in range(n_u):
            s = sig_c[u * m + i]
            bb = b_c[u * m + i]
            alo = bb + glo * s
            ahi = bb + ghi * s
            if alo >= 0.0:
                adv_lo = alo * dfw
            else:
                adv_lo = alo * dbw
            if ahi >= 0.0:
                adv_hi = ahi * dfw
            else:
                adv_hi = ahi * dbw
            adv = fmax(adv_lo, adv_hi)
            cand = cost_c[u * m + i] + 0.5 * s * s * d2 + adv
            if u == 0 or cand < best:
                best = cand
                besti = u
        out[i] = v0 + dt * best
        if pol != NULL:
            pol[i] = <cnp.int32_t>besti


def hjb_layer(cnp.ndarray[double, ndim=1] v_next,
              cnp.ndarray[double, ndim=2] b_c,
              cnp.ndarray[double, ndim=2] sig_c,
              cnp.ndarray[double, ndim=2] cost_c,
              double glo, double ghi, double dt, double dx,
              bint want_policy=False):
    cdef Py_ssize_t m = v_next.shape[0]
    cdef Py_ssize_t n_u = b_c.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] pol
    if want_policy:
        pol = np.empty(m, dtype=np.int32)
        _hjb_layer_c(&v_next[0], &b_c[0, 0], &sig_c[0, 0], &cost_c[0, 0],
                     glo, ghi, dt, dx, m, n_u, &out[0], &pol[0])
        return out, pol
    _hjb_layer_c(&v_next[0], &b_c[0, 0], &sig_c[0, 0], &cost_c[0, 0],
                 glo, ghi, dt, dx, m, n_u, &out[0], NULL)
    return out


def hjb_candidates(cnp.ndarray[double, ndim=1] v,
                   cnp.ndarray[double, ndim=2] b_c,
                   cnp.ndarray[double, ndim=2] sig_c,
                   cnp.ndarray[double, ndim=2] cost_c,
                   double glo, double ghi, double dx):
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t n_u = b_c.shape[0]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n_u, m), dtype=np.float64)
    cdef Py_ssize_t i, u
    cdef double dx2 = dx * dx
    cdef double vm, vp, v0, d2, dfw, dbw, s, bb, alo, ahi, adv_lo, adv_hi, adv
    for i in range(m):
        v0 = v[i]
        vm = v[i - 1] if i > 0 else v[0]
        vp = v[i + 1] if i < m - 1 else v[m - 1]
        d2 = (vp - 2.0 * v0 + vm) / dx2
        dfw = (vp - v0) / dx
        dbw = (v0 - vm) / dx
        for u in range(n_u):
            s = sig_c[u, i]
            bb = b_c[u, i]
            alo = bb + glo * s
            ahi = bb + ghi * s
            if alo >= 0.0:
                adv_lo = alo * dfw
            else:
                adv_lo = alo * dbw
            if ahi >= 0.0:
                adv_hi = ahi * dfw
            else:
                adv_hi = ahi * dbw
            adv = fmax(adv_lo, adv_hi)
            out[u, i] = cost_c[u, i] + 0.5 * s * s * d2 + adv
    return out


def hjb_sweep(cnp.ndarray[double, ndim=1] v_terminal,
              cnp.ndarray[double, ndim=2] b_c,
              cnp.ndarray[double, ndim=2] sig_c,
              cnp.ndarray[double, ndim=2] cost_c,
              cnp.ndarray[double, ndim=1] glo_arr,
              cnp.ndarray[double, ndim=1] ghi_arr,
              double dt, double dx,
              cnp.ndarray[cnp.int64_t, ndim=1] stored_k,
              cnp.ndarray[double, ndim=2] out_values):
    cdef Py_ssize_t m = v_terminal.shape[0]
    cdef Py_ssize_t n = glo_arr.shape[0]
    cdef Py_ssize_t n_u = b_c.shape[0]
    cdef cnp.ndarray[double, ndim=1] buf_a = np.array(v_terminal, dtype=np.float64, copy=True)
    cdef cnp.ndarray[double, ndim=1] buf_b = np.empty(m, dtype=np.float64)
    cdef double* src = &buf_a[0]
    cdef double* dst = &buf_b[0]
    cdef double* tmp
    cdef Py_ssize_t k, j, ptr
    ptr = stored_k.shape[0] - 1
    if stored_k[ptr] == n:
        for j in range(m):
            out_values[ptr, j] = src[j]
        ptr -= 1
    with nogil:
        for k in range(n - 1, -1, -1):
            _hjb_layer_c(src, &b_c[0, 0], &sig_c[0, 0], &cost_c[0, 0],
                         glo_arr[k], ghi_arr[k], dt, dx, m, n_u, dst, NULL)
            tmp = src
            src = dst
            dst = tmp
            if ptr >= 0 and stored_k[ptr] == k:
                for j in range(m):
                    out_values[ptr, j] = src[j]
                ptr -= 1
    if src == &buf_a[0]:
        return buf_a
    return buf_b
