# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled multi-head attention kernel.

Same contract as staa.kernels._numpy.fused_attention; tight C loops beat
numpy's dispatch overhead at the small token counts this package runs
(tens of tokens, tens of channels) which dominate SHAP/LIME workloads.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

BACKEND = "compiled"


def fused_attention(x, wq, wk, wv, key_scale, double scale):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, ::1] wqv = np.ascontiguousarray(wq, dtype=np.float64)
    cdef double[:, :, ::1] wkv = np.ascontiguousarray(wk, dtype=np.float64)
    cdef double[:, :, ::1] wvv = np.ascontiguousarray(wv, dtype=np.float64)
    cdef double[::1] ks = np.ascontiguousarray(key_scale, dtype=np.float64)

    cdef Py_ssize_t A = wqv.shape[0], Dh = wqv.shape[1], D = wqv.shape[2]
    cdef Py_ssize_t T = xv.shape[0]
    cdef Py_ssize_t a, t, s, h, d

    q_arr = np.empty((A, T, Dh))
    k_arr = np.empty((A, T, Dh))
    v_arr = np.empty((A, T, Dh))
    attn_arr = np.empty((A, T, T))
    ctx_arr = np.zeros((T, A * Dh))
    cdef double[:, :, ::1] q = q_arr
    cdef double[:, :, ::1] k = k_arr
    cdef double[:, :, ::1] v = v_arr
    cdef double[:, :, ::1] attn = attn_arr
    cdef double[:, ::1] ctx = ctx_arr

    cdef double acc_q, acc_k, acc_v, m, z, w

    for a in range(A):
        for t in range(T):
            for h in range(Dh):
                acc_q = 0.0
                acc_k = 0.0
                acc_v = 0.0
                for d in range(D):
                    acc_q += wqv[a, h, d] * xv[t, d]
                    acc_k += wkv[a, h, d] * xv[t, d]
                    acc_v += wvv[a, h, d] * xv[t, d]
                q[a, t, h] = acc_q
                k[a, t, h] = acc_k * ks[t]
                v[a, t, h] = acc_v

    for a in range(A):
        for t in range(T):
            m = -1e308
            for s in range(T):
                acc_q = 0.0
                for h in range(Dh):
                    acc_q += q[a, t, h] * k[a, s, h]
                acc_q *= scale
                attn[a, t, s] = acc_q
                if acc_q > m:
                    m = acc_q
            z = 0.0
            for s in range(T):
                w = exp(attn[a, t, s] - m)
                attn[a, t, s] = w
                z += w
            for s in range(T):
                attn[a, t, s] /= z
            for s in range(T):
                w = attn[a, t, s]
                for h in range(Dh):
                    ctx[t, a * Dh + h] += w * v[a, s, h]

    return ctx_arr, attn_arr
