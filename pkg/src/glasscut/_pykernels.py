"""Pure numpy implementations of the hot kernels.

Reference semantics for the Cython module; every function here must
produce the same results as its compiled twin (same scan orders, same
strictly-greater update rule), so the backends are interchangeable.
"""

import itertools

import numpy as np

_ENUM_CHUNK = 20000


def pchip_slopes(y, h):
    """Monotone (PCHIP) derivative values on a uniform grid.

    Harmonic-mean interior slopes with the usual one-sided,
    monotonicity-clamped endpoint formula.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    d = np.zeros(n)
    if n == 1:
        return d
    delta = np.diff(y) / h
    if n == 2:
        d[:] = delta[0]
        return d
    d0, d1 = delta[:-1], delta[1:]
    prod = d0 * d1
    with np.errstate(divide="ignore", invalid="ignore"):
        harm = 2.0 * prod / (d0 + d1)
    d[1:-1] = np.where(prod > 0, harm, 0.0)

    def edge(del0, del1):
        e = (3.0 * del0 - del1) / 2.0
        if e * del0 <= 0:
            return 0.0
        if del0 * del1 < 0 and abs(e) > 3.0 * abs(del0):
            return 3.0 * del0
        return e

    d[0] = edge(delta[0], delta[1])
    d[-1] = edge(delta[-1], delta[-2])
    return d


def gh_weighted_pass(u_pad, du_pad, pays, dpays, js, fs, logw, m, M, P0, h):
    """One Cole-Hopf/Gaussian propagation step on padded slice arrays.

    For each output index i on the M-point grid, interpolates the next
    slice at the Gauss-Hermite offsets ``js[k] + fs[k]`` cells, then
    combines with weights ``exp(logw)``: a plain average when ``m == 0``
    and the stabilised ``(1/m) log E exp(m u)`` otherwise.  Payload rows
    are averaged under the same (Gibbs) weights.
    """
    K = js.size
    P = pays.shape[0]
    idx = P0 + np.arange(M)[None, :] + js[:, None]  # (K, M)
    f = fs[:, None]
    f2 = f * f
    f3 = f2 * f
    h00 = 2 * f3 - 3 * f2 + 1
    h10 = f3 - 2 * f2 + f
    h01 = -2 * f3 + 3 * f2
    h11 = f3 - f2
    vals = h00 * u_pad[idx] + h01 * u_pad[idx + 1] + h * (
        h10 * du_pad[idx] + h11 * du_pad[idx + 1]
    )  # (K, M)
    if m == 0.0:
        W = np.broadcast_to(np.exp(logw)[:, None], (K, M))
        u_out = (W * vals).sum(axis=0)
    else:
        E = m * vals + logw[:, None]
        mx = E.max(axis=0)
        W = np.exp(E - mx)
        Z = W.sum(axis=0)
        u_out = (mx + np.log(Z)) / m
        W = W / Z
    pays_out = np.empty((P, M))
    for p in range(P):
        pv = h00 * pays[p][idx] + h01 * pays[p][idx + 1] + h * (
            h10 * dpays[p][idx] + h11 * dpays[p][idx + 1]
        )
        pays_out[p] = (W * pv).sum(axis=0)
    return u_out, pays_out


def pairswap_chain(A, tau, fld, pos, neg, a_idx, b_idx, logu, beta_s,
                   e_hi, e_lo, H0, best_tau, track_best):
    """Metropolis pair-swap chain on a fixed-magnetisation spin set.

    ``pos`` holds the sites currently at spin ``e_hi`` and ``neg`` the
    rest; proposal ``s`` swaps ``pos[a_idx[s]]`` with ``neg[b_idx[s]]``
    and accepts when ``beta_s[s] * dH > logu[s]``.  ``tau``, ``fld``
    (the local field A @ tau), ``pos`` and ``neg`` are updated in place.
    Returns ``(H_end, best_H, n_accept)``.
    """
    H = H0
    best_H = H0
    if track_best:
        best_tau[:] = tau
    delta = e_lo - e_hi
    d2 = delta * delta
    nacc = 0
    for s in range(a_idx.size):
        a = pos[a_idx[s]]
        b = neg[b_idx[s]]
        dH = 2.0 * delta * (fld[a] - fld[b]) + d2 * (
            A[a, a] + A[b, b] - 2.0 * A[a, b]
        )
        if beta_s[s] * dH > logu[s]:
            H += dH
            fld += (A[:, a] - A[:, b]) * delta
            tau[a] = e_lo
            tau[b] = e_hi
            pos[a_idx[s]] = b
            neg[b_idx[s]] = a
            nacc += 1
            if track_best and H > best_H:
                best_H = H
                best_tau[:] = tau
    return H, best_H, nacc


def cut_steepest_ascent(adj, side1, side2):
    """Steepest-ascent pair-swap local search for the alpha-cut.

    ``side1``/``side2`` are index arrays of the two parts; both are
    permuted in place.  Each round swaps the first pair (row-major scan
    over side1 x side2) achieving the maximal strictly positive cut
    gain.  Returns the final cut value.
    """
    n2 = side2.size
    in1 = np.zeros(adj.shape[0], dtype=bool)
    in1[side1] = True
    deg = adj.sum(axis=1)
    cross = adj[np.ix_(side1, side2)].sum()
    while True:
        cross_deg = np.where(
            in1, adj[:, side2].sum(axis=1), adj[:, side1].sum(axis=1)
        )
        g = deg - 2.0 * cross_deg
        gains = g[side1][:, None] + g[side2][None, :] - 2.0 * adj[np.ix_(side1, side2)]
        k = int(np.argmax(gains))
        best = gains.flat[k]
        if best <= 0.0:
            break
        i, j = divmod(k, n2)
        u, v = side1[i], side2[j]
        side1[i], side2[j] = v, u
        in1[u], in1[v] = False, True
        cross += best
    return float(cross)


def enum_pairswap_max(A, K, e_hi, e_lo):
    """Exhaustive max of tau' A tau over all K-subsets at spin e_hi.

    Subsets are visited in lexicographic order and only a strictly
    larger value replaces the incumbent, so the first maximiser in that
    order wins.  Returns ``(best_value, best_mask)``.
    """
    N = A.shape[0]
    if N > 63:
        raise ValueError("bitmask enumeration supports N <= 63")
    S_A = A.sum()
    rowsum = A.sum(axis=1)
    d = e_hi - e_lo
    best_val = -np.inf
    best_mask = 0
    combos = itertools.combinations(range(N), K)
    while True:
        chunk = list(itertools.islice(combos, _ENUM_CHUNK))
        if not chunk:
            break
        idx = np.array(chunk, dtype=np.intp)  # (C, K)
        lin = rowsum[idx].sum(axis=1)
        quad = A[idx[:, :, None], idx[:, None, :]].sum(axis=(1, 2))
        vals = e_lo * e_lo * S_A + 2.0 * e_lo * d * lin + d * d * quad
        if vals.max() > best_val:
            for cc in np.nonzero(vals > best_val)[0]:
                if vals[cc] > best_val:
                    best_val = float(vals[cc])
                    best_mask = sum(1 << int(i) for i in chunk[cc])
    return float(best_val), int(best_mask)


def enum_cut_max(adj, K):
    """Exhaustive max alpha-cut over all K-subsets (side 1).

    Same ordering contract as :func:`enum_pairswap_max`.
    Returns ``(best_cut, best_mask)``.
    """
    N = adj.shape[0]
    if N > 63:
        raise ValueError("bitmask enumeration supports N <= 63")
    deg = adj.sum(axis=1)
    best_val = -np.inf
    best_mask = 0
    combos = itertools.combinations(range(N), K)
    while True:
        chunk = list(itertools.islice(combos, _ENUM_CHUNK))
        if not chunk:
            break
        idx = np.array(chunk, dtype=np.intp)
        degs = deg[idx].sum(axis=1)
        inner = adj[idx[:, :, None], idx[:, None, :]].sum(axis=(1, 2))
        vals = degs - inner  # cross edges = sum deg(S) - 2 * internal
        if vals.max() > best_val:
            for cc in np.nonzero(vals > best_val)[0]:
                if vals[cc] > best_val:
                    best_val = float(vals[cc])
                    best_mask = sum(1 << int(i) for i in chunk[cc])
    return float(best_val), int(best_mask)
