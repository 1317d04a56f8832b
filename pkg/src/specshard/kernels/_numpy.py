"""Vectorized NumPy twins of the compiled kernels in ``_numba``.

Loops run over units or selection steps; trials are handled as a batch axis.
"""

import numpy as np


def _round_robin(n):
    """Yield (p, q) index arrays for the n - 1 rounds of a round-robin schedule."""
    players = list(range(n))
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        yield lo, hi
        players = [players[0]] + [players[-1]] + players[1:-1]


def jacobi_svd(a, tol, max_sweeps):
    m, n = a.shape
    width = n + (n % 2)
    w = np.zeros((m, width))
    w[:, :n] = a
    v = np.eye(width)
    schedule = list(_round_robin(width)) if width > 1 else []
    for _ in range(max_sweeps):
        rotated = False
        for p, q in schedule:
            wp = w[:, p]
            wq = w[:, q]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            active = (gamma != 0.0) & (np.abs(gamma) > tol * np.sqrt(alpha * beta))
            if not active.any():
                continue
            rotated = True
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            w[:, p], w[:, q] = c * wp - s * wq, s * wp + c * wq
            vp = v[:, p]
            vq = v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            return w[:, :n].copy(), v[:n, :n].copy(), True
    return w[:, :n].copy(), v[:n, :n].copy(), False


def cps_draws(q_table, n, uniforms):
    trials, size = uniforms.shape
    out = np.empty((trials, n), dtype=np.int64)
    rem = np.full(trials, n, dtype=np.int64)
    rows = np.arange(trials)
    for k in range(size):
        active = rem > 0
        if not active.any():
            break
        forced = (size - k) == rem
        q = q_table[k, rem]
        take = active & (forced | (uniforms[:, k] < q))
        pos = n - rem[take]
        out[rows[take], pos] = k
        rem[take] -= 1
    return out


def brewer_draws(pi, n, uniforms):
    trials = uniforms.shape[0]
    size = pi.shape[0]
    out = np.empty((trials, n), dtype=np.int64)
    taken = np.zeros((trials, size), dtype=bool)
    a = np.zeros(trials)
    rows = np.arange(trials)
    for step in range(n):
        left = n - step
        head = (n - a)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            p = pi * (head - pi) / (head - pi * left)
        p[taken] = 0.0
        cum = np.cumsum(p, axis=1)
        target = uniforms[:, step] * cum[:, -1]
        pick = (cum <= target[:, None]).sum(axis=1)
        overflow = pick >= size
        if overflow.any():
            positive = p[overflow] > 0.0
            pick[overflow] = size - 1 - np.argmax(positive[:, ::-1], axis=1)
        taken[rows, pick] = True
        a = a + pi[pick]
        out[:, step] = pick
    return out


def numpy_style_draws(weights, n, uniforms):
    trials = uniforms.shape[0]
    size = weights.shape[0]
    out = np.empty((trials, n), dtype=np.int64)
    chances = np.tile(weights, (trials, 1))
    found = np.zeros(trials, dtype=np.int64)
    rows = np.arange(trials)
    slots = np.arange(n)
    for r in range(n):
        active = found < n
        if not active.any():
            break
        idx = rows[active]
        ch = chances[idx]
        cdf = np.cumsum(ch, axis=1)
        cdf = cdf / cdf[:, -1:]
        rem = n - found[idx]
        x = uniforms[idx, r, :]
        new = (cdf[:, None, :] <= x[:, :, None]).sum(axis=2)
        valid = slots[None, :] < rem[:, None]
        same = new[:, :, None] == new[:, None, :]
        earlier = np.tril(np.ones((n, n), dtype=bool), k=-1)
        dup = (same & earlier[None, :, :] & valid[:, None, :]).any(axis=2)
        first = valid & ~dup
        slot = found[idx][:, None] + np.cumsum(first, axis=1) - 1
        sub_rows = np.broadcast_to(idx[:, None], first.shape)[first]
        out[sub_rows, slot[first]] = new[first]
        chances[sub_rows, new[first]] = 0.0
        found[idx] += first.sum(axis=1)
    return out
