"""Numba-compiled hot loops.

Every function here has a twin in ``_numpy`` with the same signature and
the same consumption of the uniform buffers, so both paths produce the same
draws for the same random input.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def jacobi_svd(a, tol, max_sweeps):
    m, n = a.shape
    w = a.copy()
    v = np.eye(n)
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha += w[i, p] * w[i, p]
                    beta += w[i, q] * w[i, q]
                    gamma += w[i, p] * w[i, q]
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    wp = w[i, p]
                    wq = w[i, q]
                    w[i, p] = c * wp - s * wq
                    w[i, q] = s * wp + c * wq
                for i in range(n):
                    vp = v[i, p]
                    vq = v[i, q]
                    v[i, p] = c * vp - s * vq
                    v[i, q] = s * vp + c * vq
        if not rotated:
            return w, v, True
    return w, v, False


@njit(cache=True)
def cps_draws(q_table, n, uniforms):
    trials, size = uniforms.shape
    out = np.empty((trials, n), dtype=np.int64)
    for t in range(trials):
        rem = n
        pos = 0
        for k in range(size):
            if rem == 0:
                break
            if size - k == rem or uniforms[t, k] < q_table[k, rem]:
                out[t, pos] = k
                pos += 1
                rem -= 1
    return out


@njit(cache=True)
def brewer_draws(pi, n, uniforms):
    trials = uniforms.shape[0]
    size = pi.shape[0]
    out = np.empty((trials, n), dtype=np.int64)
    taken = np.zeros(size, dtype=np.bool_)
    p = np.empty(size)
    for t in range(trials):
        taken[:] = False
        a = 0.0
        for step in range(n):
            left = n - step
            total = 0.0
            for k in range(size):
                if taken[k]:
                    p[k] = 0.0
                else:
                    p[k] = pi[k] * (n - a - pi[k]) / (n - a - pi[k] * left)
                total += p[k]
            target = uniforms[t, step] * total
            acc = 0.0
            pick = -1
            last = -1
            for k in range(size):
                if p[k] > 0.0:
                    last = k
                acc += p[k]
                if target < acc and p[k] > 0.0:
                    pick = k
                    break
            if pick < 0:
                pick = last
            taken[pick] = True
            a += pi[pick]
            out[t, step] = pick
    return out


@njit(cache=True)
def numpy_style_draws(weights, n, uniforms):
    trials = uniforms.shape[0]
    size = weights.shape[0]
    out = np.empty((trials, n), dtype=np.int64)
    chances = np.empty(size)
    cdf = np.empty(size)
    new = np.empty(n, dtype=np.int64)
    for t in range(trials):
        chances[:] = weights
        found = 0
        r = 0
        while found < n:
            rem = n - found
            acc = 0.0
            for k in range(size):
                acc += chances[k]
                cdf[k] = acc
            for k in range(size):
                cdf[k] = cdf[k] / acc
            for j in range(rem):
                x = uniforms[t, r, j]
                idx = 0
                for k in range(size):
                    if cdf[k] <= x:
                        idx += 1
                new[j] = idx
            for j in range(rem):
                dup = False
                for jj in range(j):
                    if new[jj] == new[j]:
                        dup = True
                        break
                if not dup:
                    out[t, found] = new[j]
                    found += 1
            for j in range(found):
                chances[out[t, j]] = 0.0
            r += 1
    return out
