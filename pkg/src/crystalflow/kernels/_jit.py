"""numba ``@njit`` path for the hot kernels. Mirrors ``_numpy`` exactly."""
import math

import numba
import numpy as np

from ._numpy import INF_ATOMS

_INF = int(INF_ATOMS)
jit = numba.njit(cache=True, nogil=True)


@jit
def coin_table(multiplicities, nmax):
    reachable = np.zeros(nmax + 1, dtype=np.bool_)
    reachable[0] = True
    for n in range(1, nmax + 1):
        for m in multiplicities:
            if 0 < m <= n and reachable[n - m]:
                reachable[n] = True
                break
    return reachable


@jit
def element_charge_sums(ox_states, kmax, q):
    width = 2 * q + 1
    sums = np.zeros((kmax + 1, width), dtype=np.bool_)
    sums[0, q] = True
    for k in range(1, kmax + 1):
        for c in range(width):
            if not sums[k - 1, c]:
                continue
            for o in ox_states:
                j = c + o
                if 0 <= j < width:
                    sums[k, j] = True
    return sums


@jit
def _conv(a, b, q):
    width = a.shape[0]
    out = np.zeros(width, dtype=np.bool_)
    nb = 0
    idx_b = np.empty(width, dtype=np.int64)
    for j in range(width):
        if b[j]:
            idx_b[nb] = j - q
            nb += 1
    for i in range(width):
        if not a[i]:
            continue
        for t in range(nb):
            k = i + idx_b[t]
            if 0 <= k < width:
                out[k] = True
    return out


@jit
def reach_of_counts(counts, sums, q):
    width = 2 * q + 1
    reach = np.zeros(width, dtype=np.bool_)
    reach[q] = True
    for d in range(counts.shape[0]):
        k = counts[d]
        if k > 0:
            reach = _conv(reach, sums[d, k], q)
    return reach


@jit
def completion_table(min_atoms, e_max, a_max):
    n_elem, width = min_atoms.shape
    q = (width - 1) // 2
    table = np.full((e_max + 1, width), _INF, dtype=np.int32)
    table[0, q] = 0
    for u in range(n_elem):
        n_delta = 0
        deltas = np.empty(width, dtype=np.int64)
        for idx in range(width):
            if min_atoms[u, idx] < _INF:
                deltas[n_delta] = idx
                n_delta += 1
        for e in range(e_max - 1, -1, -1):
            for c in range(width):
                base = table[e, c]
                if base >= _INF:
                    continue
                for t in range(n_delta):
                    idx = deltas[t]
                    j = c + idx - q
                    if j < 0 or j >= width:
                        continue
                    val = base + min_atoms[u, idx]
                    if val <= a_max and val < table[e + 1, j]:
                        table[e + 1, j] = val
    for e in range(1, e_max + 1):
        for c in range(width):
            if table[e - 1, c] < table[e, c]:
                table[e, c] = table[e - 1, c]
    return table


@jit
def feasible_counts(reach, sums_d, allowed, completion_row, atoms_left):
    kmax = sums_d.shape[0] - 1
    width = reach.shape[0]
    q = (width - 1) // 2
    out = np.zeros(kmax + 1, dtype=np.bool_)
    for k in range(1, kmax + 1):
        if not allowed[k] or k > atoms_left:
            continue
        budget = atoms_left - k
        new_reach = _conv(reach, sums_d[k], q)
        for c in range(width):
            if new_reach[c] and completion_row[width - 1 - c] <= budget:
                out[k] = True
                break
    return out


@jit
def _digamma(x):
    acc = 0.0
    while x < 6.0:
        acc -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    series = f * (1.0 / 12 - f * (1.0 / 120 - f * (1.0 / 252 - f * (1.0 / 240 - f / 132))))
    return acc + math.log(x) - 0.5 / x - series


@jit
def beta_mixture_logpdf(r, logit_w, alpha, beta):
    n, n_comp = logit_w.shape
    logp = np.empty(n)
    dlogit = np.empty((n, n_comp))
    dalpha = np.empty((n, n_comp))
    dbeta = np.empty((n, n_comp))
    joint = np.empty(n_comp)
    log_w = np.empty(n_comp)
    for i in range(n):
        log_r = math.log(r[i])
        log_1mr = math.log1p(-r[i])
        mw = logit_w[i, 0]
        for j in range(1, n_comp):
            mw = max(mw, logit_w[i, j])
        zw = 0.0
        for j in range(n_comp):
            zw += math.exp(logit_w[i, j] - mw)
        lzw = mw + math.log(zw)
        mx = -np.inf
        for j in range(n_comp):
            a = alpha[i, j]
            b = beta[i, j]
            log_w[j] = logit_w[i, j] - lzw
            log_b = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
            joint[j] = log_w[j] + (a - 1.0) * log_r + (b - 1.0) * log_1mr - log_b
            mx = max(mx, joint[j])
        s = 0.0
        for j in range(n_comp):
            s += math.exp(joint[j] - mx)
        lp = mx + math.log(s)
        logp[i] = lp
        for j in range(n_comp):
            a = alpha[i, j]
            b = beta[i, j]
            resp = math.exp(joint[j] - lp)
            psi_ab = _digamma(a + b)
            dalpha[i, j] = resp * (log_r - _digamma(a) + psi_ab)
            dbeta[i, j] = resp * (log_1mr - _digamma(b) + psi_ab)
            dlogit[i, j] = resp - math.exp(log_w[j])
    return logp, dlogit, dalpha, dbeta


@jit
def adam_update(p, g, m, v, step, b1, b2, inv_sqrt_c2, eps):
    for i in range(p.size):
        gi = g[i]
        m[i] = b1 * m[i] + (1.0 - b1) * gi
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi
        p[i] -= step * (m[i] / (math.sqrt(v[i]) * inv_sqrt_c2 + eps))
