"""Compiled kernels.  Each function mirrors one in ``_numpy`` and returns identical results."""

import numpy as np
from numba import njit

SUPPORT_TOL = 1e-12


@njit(cache=True)
def _huffman_expected(q, k):
    # q[:k] are the class weights; O(k^2) merging is fine for k <= a dozen
    buf = q[:k].copy()
    n = k
    total = 0.0
    while n > 1:
        a = 0
        for j in range(1, n):
            if buf[j] < buf[a]:
                a = j
        b = 0 if a != 0 else 1
        for j in range(n):
            if j != a and buf[j] < buf[b]:
                b = j
        merged = buf[a] + buf[b]
        total += merged
        lo, hi = (a, b) if a < b else (b, a)
        buf[lo] = merged
        buf[hi] = buf[n - 1]
        n -= 1
    return total


@njit(cache=True)
def _encoder_rates(phi, w, digits, dims, strides, out_colors):
    """Entropy-sum and Huffman-sum of the coarsest valid encoder under weights ``w``."""
    S = phi.shape[0]
    N = dims.shape[0]
    dmax = out_colors.shape[1]
    mass = 0.0
    for i in range(S):
        mass += w[i]
    marg = np.zeros((N, dmax))
    for i in range(S):
        for n in range(N):
            marg[n, digits[i, n]] += w[i]
    sup = np.zeros((N, dmax), dtype=np.bool_)
    for n in range(N):
        for x in range(dims[n]):
            sup[n, x] = marg[n, x] / mass >= SUPPORT_TOL
    # context ok when every other component is in the support
    n_bad = np.zeros(S, dtype=np.int64)
    for i in range(S):
        for n in range(N):
            if not sup[n, digits[i, n]]:
                n_bad[i] += 1
    ent = 0.0
    huf = 0.0
    q = np.zeros(dmax)
    for n in range(N):
        d = dims[n]
        for x in range(d):
            out_colors[n, x] = -1
        k = 0
        for x in range(d):
            if not sup[n, x]:
                continue
            for y in range(x):
                if not sup[n, y] or out_colors[n, y] < 0:
                    continue
                same = True
                for i in range(S):
                    if digits[i, n] != x or n_bad[i] > 0:
                        continue
                    j = i - (x - y) * strides[n]
                    if phi[i] != phi[j]:
                        same = False
                        break
                if same:
                    out_colors[n, x] = out_colors[n, y]
                    break
            if out_colors[n, x] < 0:
                out_colors[n, x] = k
                k += 1
        for x in range(d):
            if out_colors[n, x] < 0:
                out_colors[n, x] = 0
        for c in range(k):
            q[c] = 0.0
        for x in range(d):
            if sup[n, x]:
                q[out_colors[n, x]] += marg[n, x] / mass
        for c in range(k):
            if q[c] > 0:
                ent -= q[c] * np.log2(q[c])
        if k > 1:
            huf += _huffman_expected(q, k)
    return ent, huf, mass


@njit(cache=True)
def _better(J, B, idx, bJ, bB, bidx):
    tol = 1e-9 * max(1.0, abs(bJ))
    if J > bJ + tol:
        return True
    if J < bJ - tol:
        return False
    btol = 1e-9 * max(1.0, abs(bB))
    if B < bB - btol:
        return True
    if B > bB + btol:
        return False
    return idx < bidx


@njit(cache=True)
def exhaustive_search(kernel, rexp, initial, beta, digits, dims, choices, n_choices, lambdas, refresh):
    """Visit every control map drawn from ``choices`` in reflected Gray order.

    One action changes per step, so the inverse of ``I - beta P`` and the
    occupancy row are updated by a rank-one correction, with a fresh
    inversion every ``refresh`` steps.  For each ``lambda`` and each length
    model (0 entropy, 1 Huffman) the map maximizing ``R - lambda B`` is kept.
    """
    A, S, _ = kernel.shape
    N = dims.shape[0]
    L = lambdas.shape[0]
    strides = np.ones(N, dtype=np.int64)
    for n in range(N - 2, -1, -1):
        strides[n] = strides[n + 1] * dims[n + 1]
    dmax = 0
    for n in range(N):
        dmax = max(dmax, dims[n])
    colors = np.zeros((N, dmax), dtype=np.int64)

    # lexicographic weights, state 0 most significant
    lex_w = np.zeros(S, dtype=np.int64)
    acc = 1
    for i in range(S - 1, -1, -1):
        lex_w[i] = acc
        acc *= n_choices[i]

    # Gray digits: only states with a real choice, least significant first
    free = []
    for i in range(S - 1, -1, -1):
        if n_choices[i] > 1:
            free.append(i)
    m = len(free)
    free_arr = np.zeros(max(m, 1), dtype=np.int64)
    for k in range(m):
        free_arr[k] = free[k]
    pos = np.zeros(S, dtype=np.int64)
    direction = np.ones(max(m, 1), dtype=np.int64)
    focus = np.arange(m + 1)

    phi = np.empty(S, dtype=np.int64)
    for i in range(S):
        phi[i] = choices[i, 0]
    idx = 0

    P = np.empty((S, S))
    Minv = np.empty((S, S))
    w = np.empty(S)

    best_phi = np.zeros((L, 2, S), dtype=np.int64)
    best_J = np.full((L, 2), -np.inf)
    best_R = np.zeros((L, 2))
    best_B = np.zeros((L, 2))
    best_idx = np.full((L, 2), -1, dtype=np.int64)

    since = refresh
    visits = 0
    while True:
        if since >= refresh:
            for i in range(S):
                for j in range(S):
                    P[i, j] = -beta * kernel[phi[i], i, j]
                P[i, i] += 1.0
            Minv[:, :] = np.linalg.inv(P)
            for j in range(S):
                s = 0.0
                for i in range(S):
                    s += initial[i] * Minv[i, j]
                w[j] = s
            since = 0
        visits += 1
        R = 0.0
        for i in range(S):
            R += w[i] * rexp[phi[i], i]
        ent, huf, mass = _encoder_rates(phi, w, digits, dims, strides, colors)
        for l in range(L):
            for model in range(2):
                B = mass * (ent if model == 0 else huf)
                J = R - lambdas[l] * B
                if best_idx[l, model] < 0 or _better(J, B, idx, best_J[l, model], best_B[l, model], best_idx[l, model]):
                    best_J[l, model] = J
                    best_R[l, model] = R
                    best_B[l, model] = B
                    best_idx[l, model] = idx
                    for i in range(S):
                        best_phi[l, model, i] = phi[i]

        # Knuth's loopless reflected mixed-radix Gray step
        j = focus[0]
        focus[0] = 0
        if j >= m:
            break
        i = free_arr[j]
        old = phi[i]
        step = direction[j]
        pos[i] += step
        idx += step * lex_w[i]
        new = choices[i, pos[i]]
        if pos[i] == 0 or pos[i] == n_choices[i] - 1:
            direction[j] = -direction[j]
            focus[j] = focus[j + 1]
            focus[j + 1] = j + 1
        phi[i] = new

        # rank-one update for row i of P changing by delta
        v = np.zeros(S)
        for c in range(S):
            s = 0.0
            for r in range(S):
                s += (kernel[new, i, r] - kernel[old, i, r]) * Minv[r, c]
            v[c] = s
        denom = 1.0 - beta * v[i]
        u = Minv[:, i].copy()
        wi = w[i]
        for r in range(S):
            f = beta * u[r] / denom
            for c in range(S):
                Minv[r, c] += f * v[c]
        f = beta * wi / denom
        for c in range(S):
            w[c] += f * v[c]
        since += 1
    return best_phi, best_J, best_R, best_B, visits


@njit(cache=True)
def fiber_gains(kernel, cexp, phi, Minv, w, V, fiber_ptr, fiber_states, beta):
    """Objective change from moving each fiber (all its states) to each action."""
    A, S, _ = kernel.shape
    F = fiber_ptr.shape[0] - 1
    J = 0.0
    for i in range(S):
        J += w[i] * cexp[phi[i], i]
    gains = np.zeros((F, A))
    for f in range(F):
        lo = fiber_ptr[f]
        hi = fiber_ptr[f + 1]
        k = hi - lo
        st = fiber_states[lo:hi]
        for a in range(A):
            same = True
            for t in range(k):
                if phi[st[t]] != a:
                    same = False
            if same:
                continue
            D = np.empty((k, S))
            dc = np.empty(k)
            for t in range(k):
                i = st[t]
                dc[t] = cexp[a, i] - cexp[phi[i], i]
                for j in range(S):
                    D[t, j] = -beta * (kernel[a, i, j] - kernel[phi[i], i, j])
            K = np.eye(k)
            for t in range(k):
                for u in range(k):
                    s = 0.0
                    for j in range(S):
                        s += D[t, j] * Minv[j, st[u]]
                    K[t, u] += s
            y = np.empty(k)
            for t in range(k):
                s = 0.0
                for j in range(S):
                    s += D[t, j] * V[j]
                for u in range(k):
                    s += (K[t, u] - (1.0 if t == u else 0.0)) * dc[u]
                y[t] = s
            z = np.linalg.solve(K, y)
            g = 0.0
            for t in range(k):
                g += w[st[t]] * (dc[t] - z[t])
            gains[f, a] = g
    return gains


@njit(cache=True)
def simulate_paths(cum, start, uniforms):
    """Sample paths; the next state is the count of cumulative entries ``<= u``."""
    E, T = uniforms.shape
    S = cum.shape[0]
    out = np.empty((E, T + 1), dtype=np.int64)
    for e in range(E):
        s = start[e]
        out[e, 0] = s
        for t in range(T):
            u = uniforms[e, t]
            lo = 0
            hi = S
            while lo < hi:
                mid = (lo + hi) // 2
                if cum[s, mid] <= u:
                    lo = mid + 1
                else:
                    hi = mid
            s = lo if lo < S else S - 1
            out[e, t + 1] = s
    return out
