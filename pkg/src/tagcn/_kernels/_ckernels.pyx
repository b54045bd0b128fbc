# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled temporal convolution and top-k selection.

The convolutions unfold the shifted input frames into a column buffer in C
and hand the contraction to BLAS ``gemm``; folding gradients back is done in
C as well. Reductions run in a fixed order for fixed shapes, so results are
deterministic.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline void _gemm(char ta, char tb, int m, int n, int k, real *a, int lda,
                       real *b, int ldb, real beta, real *c, int ldc) noexcept nogil:
    # column-major C = op(A) op(B) + beta C
    cdef real one = 1
    if real is float:
        sgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _unfold(real[:, :, ::1] x, real[:, ::1] cols, Py_ssize_t K, int stride,
                  int pad) noexcept nogil:
    # cols[c*K + j, t*N + n] = x[c, t*stride + j - pad, n], zero outside
    cdef Py_ssize_t C = x.shape[0], T = x.shape[1], N = x.shape[2]
    cdef Py_ssize_t T_out = cols.shape[1] // N
    cdef Py_ssize_t c, j, t, n, src, row
    for c in range(C):
        for j in range(K):
            row = c * K + j
            for t in range(T_out):
                src = t * stride + j - pad
                if src < 0 or src >= T:
                    for n in range(N):
                        cols[row, t * N + n] = 0
                else:
                    for n in range(N):
                        cols[row, t * N + n] = x[c, src, n]


def temporal_conv_forward(real[:, :, :, ::1] x, real[:, :, ::1] w, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], C_in = x.shape[1], T = x.shape[2], N = x.shape[3]
    cdef Py_ssize_t C_out = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t T_out = (T + 2 * pad - K) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((B, C_out, T_out, N), dtype=dtype)
    if B == 0 or C_out == 0 or T_out <= 0 or N == 0 or C_in == 0:
        return out_arr
    cdef real[:, :, :, ::1] out = out_arr
    cdef real[:, ::1] cols = np.empty((C_in * K, T_out * N), dtype=dtype)
    cdef int m = T_out * N, n = C_out, k = C_in * K
    cdef real zero = 0, one = 1
    cdef Py_ssize_t b
    with nogil:
        for b in range(B):
            _unfold(x[b], cols, K, stride, pad)
            _gemm(c'N', c'N', m, n, k, &cols[0, 0], m, &w[0, 0, 0], k, zero, &out[b, 0, 0, 0], m)
    return out_arr


def temporal_conv_backward_weight(real[:, :, :, ::1] g, real[:, :, :, ::1] x,
                                  int K, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], C_in = x.shape[1], N = x.shape[3]
    cdef Py_ssize_t C_out = g.shape[1], T_out = g.shape[2]
    dtype = np.float32 if real is float else np.float64
    gw_arr = np.zeros((C_out, C_in, K), dtype=dtype)
    if B == 0 or C_out == 0 or T_out == 0 or N == 0 or C_in == 0:
        return gw_arr
    cdef real[:, :, ::1] gw = gw_arr
    cdef real[:, ::1] cols = np.empty((C_in * K, T_out * N), dtype=dtype)
    cdef int m = C_in * K, n = C_out, k = T_out * N
    cdef real zero = 0, one = 1
    cdef Py_ssize_t b
    with nogil:
        for b in range(B):
            _unfold(x[b], cols, K, stride, pad)
            _gemm(c'T', c'N', m, n, k, &cols[0, 0], k, &g[b, 0, 0, 0], k,
                  zero if b == 0 else one, &gw[0, 0, 0], m)
    return gw_arr


def temporal_conv_backward_input(real[:, :, :, ::1] g, real[:, :, ::1] w,
                                 int T, int stride, int pad):
    cdef Py_ssize_t B = g.shape[0], C_out = g.shape[1], T_out = g.shape[2], N = g.shape[3]
    cdef Py_ssize_t C_in = w.shape[1], K = w.shape[2]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((B, C_in, T, N), dtype=dtype)
    if B == 0 or C_out == 0 or T_out == 0 or N == 0 or C_in == 0:
        return gx_arr
    cdef real[:, :, :, ::1] gx = gx_arr
    cdef real[:, ::1] gcols = np.empty((C_in * K, T_out * N), dtype=dtype)
    cdef int m = T_out * N, n = C_in * K, k = C_out
    cdef real zero = 0, one = 1
    cdef Py_ssize_t b, c, j, t, i, src, row
    with nogil:
        for b in range(B):
            _gemm(c'N', c'T', m, n, k, &g[b, 0, 0, 0], m, &w[0, 0, 0], n, zero,
                  &gcols[0, 0], m)
            for c in range(C_in):
                for j in range(K):
                    row = c * K + j
                    for t in range(T_out):
                        src = t * stride + j - pad
                        if src < 0 or src >= T:
                            continue
                        for i in range(N):
                            gx[b, c, src, i] += gcols[row, t * N + i]
    return gx_arr


cdef inline bint _before(real *s, cnp.int64_t a, cnp.int64_t b) noexcept nogil:
    # descending score, ties to the smaller index
    return s[a] > s[b] or (s[a] == s[b] and a < b)


cdef void _merge_sort(real *s, cnp.int64_t *idx, cnp.int64_t *tmp, Py_ssize_t T) noexcept nogil:
    # bottom-up merge sort of idx by _before, ping-ponging between buffers
    cdef Py_ssize_t width = 1, lo, mid, hi, i, j, k
    cdef cnp.int64_t *src = idx
    cdef cnp.int64_t *dst = tmp
    cdef cnp.int64_t *swap
    while width < T:
        lo = 0
        while lo < T:
            mid = min(lo + width, T)
            hi = min(lo + 2 * width, T)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if _before(s, src[j], src[i]):
                    dst[k] = src[j]
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
            lo = hi
        swap = src
        src = dst
        dst = swap
        width *= 2
    if src != idx:
        for i in range(T):
            idx[i] = src[i]


def top_indices(real[:, ::1] scores, int k, bint temporal_order):
    """Indices of the k largest scores per row; ties go to the smaller index."""
    cdef Py_ssize_t R = scores.shape[0], T = scores.shape[1]
    out_arr = np.empty((R, k), dtype=np.int64)
    if R == 0 or T == 0:
        return out_arr
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef cnp.int64_t[::1] idx = np.empty(T, dtype=np.int64)
    cdef cnp.int64_t[::1] tmp = np.empty(T, dtype=np.int64)
    cdef unsigned char[::1] taken = np.zeros(T, dtype=np.uint8)
    cdef Py_ssize_t r, i, s, pos
    with nogil:
        for r in range(R):
            for s in range(T):
                idx[s] = s
                taken[s] = 0
            _merge_sort(&scores[r, 0], &idx[0], &tmp[0], T)
            if temporal_order:
                for i in range(k):
                    taken[idx[i]] = 1
                pos = 0
                for s in range(T):
                    if taken[s]:
                        out[r, pos] = s
                        pos += 1
            else:
                for i in range(k):
                    out[r, i] = idx[i]
    return out_arr
