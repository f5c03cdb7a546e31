"""Pure-numpy kernels; batched where the compiled versions loop."""

import numpy as np

SUPPORT_TOL = 1e-12
CHUNK = 2048


def _huffman_expected_batch(q):
    """Expected Huffman length per row; zero entries are absent classes."""
    x = np.where(q > 0, q, np.inf)
    total = np.zeros(q.shape[0])
    for _ in range(q.shape[1] - 1):
        x.sort(axis=1)
        a, b = x[:, 0], x[:, 1]
        ok = np.isfinite(b)
        merged = np.where(ok, a + b, a)
        total += np.where(ok, merged, 0.0)
        x = np.concatenate([merged[:, None], x[:, 2:], np.full((x.shape[0], 1), np.inf)], axis=1)
    return total


def encoder_rates_batch(phis, w, digits, dims):
    """Batched twin of the compiled coarsest-encoder rates: (entropy, huffman, mass)."""
    B, S = phis.shape
    N = len(dims)
    mass = w.sum(axis=1)
    margs, sups = [], []
    for n in range(N):
        onehot = (digits[:, n][:, None] == np.arange(dims[n])[None, :]).astype(float)
        m = w @ onehot
        margs.append(m)
        sups.append(m / mass[:, None] >= SUPPORT_TOL)
    ent = np.zeros(B)
    huf = np.zeros(B)
    rows = np.arange(B)
    for n in range(N):
        d = int(dims[n])
        ctx_ok = np.ones((B, S), dtype=bool)
        for m in range(N):
            if m != n:
                ctx_ok &= sups[m][:, digits[:, m]]
        table = phis.reshape((B,) + tuple(dims))
        table = np.moveaxis(table, 1 + n, 1).reshape(B, d, -1)
        ctx = np.moveaxis(ctx_ok.reshape((B,) + tuple(dims)), 1 + n, 1).reshape(B, d, -1)[:, 0, :]
        differ = np.any((table[:, :, None, :] != table[:, None, :, :]) & ctx[:, None, None, :], axis=3)
        colors = np.full((B, d), -1, dtype=np.int64)
        k = np.zeros(B, dtype=np.int64)
        sup = sups[n]
        for x in range(d):
            assigned = np.zeros(B, dtype=bool)
            for y in range(x):
                hit = sup[:, x] & sup[:, y] & (colors[:, y] >= 0) & ~differ[:, x, y] & ~assigned
                colors[hit, x] = colors[hit, y]
                assigned |= hit
            fresh = sup[:, x] & ~assigned
            colors[fresh, x] = k[fresh]
            k += fresh
        colors[colors < 0] = 0
        q = np.zeros((B, d))
        contrib = np.where(sup, margs[n], 0.0) / mass[:, None]
        for x in range(d):
            q[rows, colors[:, x]] += contrib[:, x]
        with np.errstate(divide="ignore", invalid="ignore"):
            ent -= np.where(q > 0, q * np.log2(np.where(q > 0, q, 1.0)), 0.0).sum(axis=1)
        huf += _huffman_expected_batch(q)
    return ent, huf, mass


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


def exhaustive_search(kernel, rexp, initial, beta, digits, dims, choices, n_choices, lambdas, refresh):
    """Lexicographic enumeration with batched dense solves; same outputs as the compiled kernel."""
    A, S, _ = kernel.shape
    L = lambdas.shape[0]
    total = int(np.prod(n_choices.astype(object)))
    radices = n_choices.astype(np.int64)
    best_phi = np.zeros((L, 2, S), dtype=np.int64)
    best_J = np.full((L, 2), -np.inf)
    best_R = np.zeros((L, 2))
    best_B = np.zeros((L, 2))
    best_idx = np.full((L, 2), -1, dtype=np.int64)
    eye = np.eye(S)
    states = np.arange(S)
    for start in range(0, total, CHUNK):
        idx = np.arange(start, min(total, start + CHUNK), dtype=np.int64)
        pos = np.zeros((idx.size, S), dtype=np.int64)
        rem = idx.copy()
        for i in range(S - 1, -1, -1):
            pos[:, i] = rem % radices[i]
            rem //= radices[i]
        phis = choices[states[None, :], pos]
        P = kernel[phis, states[None, :]]
        M = eye[None] - beta * P
        w = np.linalg.solve(np.transpose(M, (0, 2, 1)), np.broadcast_to(initial, (idx.size, S))[..., None])[..., 0]
        R = np.einsum("bs,bs->b", w, rexp[phis, states[None, :]])
        ent, huf, mass = encoder_rates_batch(phis, w, digits, dims)
        for l in range(L):
            for model in range(2):
                Bv = mass * (ent if model == 0 else huf)
                J = R - lambdas[l] * Bv
                floor = best_J[l, model] - 2e-9 * max(1.0, abs(best_J[l, model])) if best_idx[l, model] >= 0 else -np.inf
                top = J.max()
                cut = max(floor, top - 2e-9 * max(1.0, abs(top)))
                for b in np.flatnonzero(J >= cut):
                    if best_idx[l, model] < 0 or _better(J[b], Bv[b], idx[b], best_J[l, model], best_B[l, model], best_idx[l, model]):
                        best_J[l, model] = J[b]
                        best_R[l, model] = R[b]
                        best_B[l, model] = Bv[b]
                        best_idx[l, model] = idx[b]
                        best_phi[l, model] = phis[b]
    return best_phi, best_J, best_R, best_B, total


def fiber_gains(kernel, cexp, phi, Minv, w, V, fiber_ptr, fiber_states, beta):
    A, S, _ = kernel.shape
    F = fiber_ptr.shape[0] - 1
    gains = np.zeros((F, A))
    for f in range(F):
        st = fiber_states[fiber_ptr[f] : fiber_ptr[f + 1]]
        cur = phi[st]
        MF = Minv[:, st]
        for a in range(A):
            if np.all(cur == a):
                continue
            D = -beta * (kernel[a, st] - kernel[cur, st])
            dc = cexp[a, st] - cexp[cur, st]
            K = np.eye(st.size) + D @ MF
            y = D @ V + (K - np.eye(st.size)) @ dc
            z = np.linalg.solve(K, y)
            gains[f, a] = w[st] @ (dc - z)
    return gains


def simulate_paths(cum, start, uniforms):
    E, T = uniforms.shape
    S = cum.shape[0]
    out = np.empty((E, T + 1), dtype=np.int64)
    s = np.asarray(start, dtype=np.int64).copy()
    out[:, 0] = s
    for t in range(T):
        s = np.minimum((cum[s] <= uniforms[:, t][:, None]).sum(axis=1), S - 1)
        out[:, t + 1] = s
    return out
