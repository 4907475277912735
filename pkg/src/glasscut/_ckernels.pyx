# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the numpy kernels in ``_pykernels``.

Scan orders and update rules match the fallback exactly; see that
module for the semantic documentation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log

cnp.import_array()


def pchip_slopes(cnp.ndarray[cnp.float64_t, ndim=1] y, double h):
    cdef Py_ssize_t n = y.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d = np.zeros(n)
    cdef Py_ssize_t i
    cdef double d0, d1, e
    if n == 1:
        return d
    if n == 2:
        d[0] = d[1] = (y[1] - y[0]) / h
        return d
    for i in range(1, n - 1):
        d0 = (y[i] - y[i - 1]) / h
        d1 = (y[i + 1] - y[i]) / h
        if d0 * d1 > 0:
            d[i] = 2.0 * d0 * d1 / (d0 + d1)
        else:
            d[i] = 0.0
    d0 = (y[1] - y[0]) / h
    d1 = (y[2] - y[1]) / h
    e = (3.0 * d0 - d1) / 2.0
    if e * d0 <= 0:
        e = 0.0
    elif d0 * d1 < 0 and fabs(e) > 3.0 * fabs(d0):
        e = 3.0 * d0
    d[0] = e
    d0 = (y[n - 1] - y[n - 2]) / h
    d1 = (y[n - 2] - y[n - 3]) / h
    e = (3.0 * d0 - d1) / 2.0
    if e * d0 <= 0:
        e = 0.0
    elif d0 * d1 < 0 and fabs(e) > 3.0 * fabs(d0):
        e = 3.0 * d0
    d[n - 1] = e
    return d


def gh_weighted_pass(cnp.ndarray[cnp.float64_t, ndim=1] u_pad,
                     cnp.ndarray[cnp.float64_t, ndim=1] du_pad,
                     cnp.ndarray[cnp.float64_t, ndim=2] pays,
                     cnp.ndarray[cnp.float64_t, ndim=2] dpays,
                     cnp.ndarray[cnp.int64_t, ndim=1] js,
                     cnp.ndarray[cnp.float64_t, ndim=1] fs,
                     cnp.ndarray[cnp.float64_t, ndim=1] logw,
                     double m, Py_ssize_t M, Py_ssize_t P0, double h):
    cdef Py_ssize_t K = js.shape[0]
    cdef Py_ssize_t P = pays.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u_out = np.empty(M)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pays_out = np.empty((P, M))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h00 = np.empty(K)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h10 = np.empty(K)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h01 = np.empty(K)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h11 = np.empty(K)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vals = np.empty(K)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wts = np.empty(K)
    cdef Py_ssize_t i, k, p, base
    cdef double f, f2, f3, v, mx, z, acc, e
    for k in range(K):
        f = fs[k]
        f2 = f * f
        f3 = f2 * f
        h00[k] = 2 * f3 - 3 * f2 + 1
        h10[k] = f3 - 2 * f2 + f
        h01[k] = -2 * f3 + 3 * f2
        h11[k] = f3 - f2
    for i in range(M):
        if m == 0.0:
            for k in range(K):
                base = P0 + i + js[k]
                vals[k] = (h00[k] * u_pad[base] + h01[k] * u_pad[base + 1]
                           + h * (h10[k] * du_pad[base] + h11[k] * du_pad[base + 1]))
                wts[k] = exp(logw[k])
            acc = 0.0
            for k in range(K):
                acc += wts[k] * vals[k]
            u_out[i] = acc
        else:
            mx = -1e300
            for k in range(K):
                base = P0 + i + js[k]
                v = (h00[k] * u_pad[base] + h01[k] * u_pad[base + 1]
                     + h * (h10[k] * du_pad[base] + h11[k] * du_pad[base + 1]))
                e = m * v + logw[k]
                vals[k] = e
                if e > mx:
                    mx = e
            z = 0.0
            for k in range(K):
                wts[k] = exp(vals[k] - mx)
                z += wts[k]
            u_out[i] = (mx + log(z)) / m
            for k in range(K):
                wts[k] /= z
        for p in range(P):
            acc = 0.0
            for k in range(K):
                base = P0 + i + js[k]
                acc += wts[k] * (h00[k] * pays[p, base] + h01[k] * pays[p, base + 1]
                                 + h * (h10[k] * dpays[p, base]
                                        + h11[k] * dpays[p, base + 1]))
            pays_out[p, i] = acc
    return u_out, pays_out


def pairswap_chain(cnp.ndarray[cnp.float64_t, ndim=2] A,
                   cnp.ndarray[cnp.float64_t, ndim=1] tau,
                   cnp.ndarray[cnp.float64_t, ndim=1] fld,
                   cnp.ndarray[cnp.int64_t, ndim=1] pos,
                   cnp.ndarray[cnp.int64_t, ndim=1] neg,
                   cnp.ndarray[cnp.int64_t, ndim=1] a_idx,
                   cnp.ndarray[cnp.int64_t, ndim=1] b_idx,
                   cnp.ndarray[cnp.float64_t, ndim=1] logu,
                   cnp.ndarray[cnp.float64_t, ndim=1] beta_s,
                   double e_hi, double e_lo, double H0,
                   cnp.ndarray[cnp.float64_t, ndim=1] best_tau,
                   bint track_best):
    cdef Py_ssize_t S = a_idx.shape[0]
    cdef Py_ssize_t N = tau.shape[0]
    cdef double H = H0
    cdef double best_H = H0
    cdef double delta = e_lo - e_hi
    cdef double d2 = delta * delta
    cdef double dH
    cdef Py_ssize_t s, a, b, j
    cdef long nacc = 0
    if track_best:
        for j in range(N):
            best_tau[j] = tau[j]
    for s in range(S):
        a = pos[a_idx[s]]
        b = neg[b_idx[s]]
        dH = 2.0 * delta * (fld[a] - fld[b]) + d2 * (A[a, a] + A[b, b] - 2.0 * A[a, b])
        if beta_s[s] * dH > logu[s]:
            H += dH
            for j in range(N):
                fld[j] += (A[j, a] - A[j, b]) * delta
            tau[a] = e_lo
            tau[b] = e_hi
            pos[a_idx[s]] = b
            neg[b_idx[s]] = a
            nacc += 1
            if track_best and H > best_H:
                best_H = H
                for j in range(N):
                    best_tau[j] = tau[j]
    return H, best_H, nacc


def cut_steepest_ascent(cnp.ndarray[cnp.float64_t, ndim=2] adj,
                        cnp.ndarray[cnp.int64_t, ndim=1] side1,
                        cnp.ndarray[cnp.int64_t, ndim=1] side2):
    cdef Py_ssize_t n = adj.shape[0]
    cdef Py_ssize_t n1 = side1.shape[0]
    cdef Py_ssize_t n2 = side2.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.empty(n)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] in1 = np.zeros(n, dtype=np.uint8)
    cdef double cross = 0.0
    cdef double deg_v, cd, best, gain
    cdef Py_ssize_t i, j, v, u, bi, bj
    for i in range(n1):
        in1[side1[i]] = 1
    for i in range(n1):
        for j in range(n2):
            cross += adj[side1[i], side2[j]]
    while True:
        for v in range(n):
            deg_v = 0.0
            cd = 0.0
            for u in range(n):
                deg_v += adj[v, u]
                if in1[u] != in1[v]:
                    cd += adj[v, u]
            g[v] = deg_v - 2.0 * cd
        best = 0.0
        bi = -1
        bj = -1
        for i in range(n1):
            for j in range(n2):
                gain = g[side1[i]] + g[side2[j]] - 2.0 * adj[side1[i], side2[j]]
                if gain > best:
                    best = gain
                    bi = i
                    bj = j
        if bi < 0:
            break
        u = side1[bi]
        v = side2[bj]
        side1[bi] = v
        side2[bj] = u
        in1[u] = 0
        in1[v] = 1
        cross += best
    return cross


cdef inline bint _next_combination(cnp.int64_t* c, Py_ssize_t K, Py_ssize_t N):
    # lexicographic successor of the index tuple c[0] < ... < c[K-1]
    cdef Py_ssize_t i = K - 1
    while i >= 0 and c[i] == N - K + i:
        i -= 1
    if i < 0:
        return False
    c[i] += 1
    cdef Py_ssize_t j
    for j in range(i + 1, K):
        c[j] = c[j - 1] + 1
    return True


def enum_pairswap_max(cnp.ndarray[cnp.float64_t, ndim=2] A, Py_ssize_t K,
                      double e_hi, double e_lo):
    cdef Py_ssize_t N = A.shape[0]
    if N > 63:
        raise ValueError("bitmask enumeration supports N <= 63")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] combo = np.arange(K, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rowsum = np.asarray(A.sum(axis=1))
    cdef double S_A = A.sum()
    cdef double d = e_hi - e_lo
    cdef double best_val = -1e300
    cdef unsigned long long best_mask = 0, mask
    cdef double lin, quad, v
    cdef Py_ssize_t i, j
    while True:
        lin = 0.0
        quad = 0.0
        for i in range(K):
            lin += rowsum[combo[i]]
            for j in range(K):
                quad += A[combo[i], combo[j]]
        v = e_lo * e_lo * S_A + 2.0 * e_lo * d * lin + d * d * quad
        if v > best_val:
            best_val = v
            mask = 0
            for i in range(K):
                mask |= (<unsigned long long> 1) << combo[i]
            best_mask = mask
        if not _next_combination(&combo[0], K, N):
            break
    return best_val, best_mask


def enum_cut_max(cnp.ndarray[cnp.float64_t, ndim=2] adj, Py_ssize_t K):
    cdef Py_ssize_t N = adj.shape[0]
    if N > 63:
        raise ValueError("bitmask enumeration supports N <= 63")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] combo = np.arange(K, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] deg = np.asarray(adj.sum(axis=1))
    cdef double best_val = -1e300
    cdef unsigned long long best_mask = 0, mask
    cdef double degs, inner, v
    cdef Py_ssize_t i, j
    while True:
        degs = 0.0
        inner = 0.0
        for i in range(K):
            degs += deg[combo[i]]
            for j in range(K):
                inner += adj[combo[i], combo[j]]
        v = degs - inner
        if v > best_val:
            best_val = v
            mask = 0
            for i in range(K):
                mask |= (<unsigned long long> 1) << combo[i]
            best_mask = mask
        if not _next_combination(&combo[0], K, N):
            break
    return best_val, best_mask
