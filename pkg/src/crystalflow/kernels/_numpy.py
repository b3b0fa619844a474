"""Pure numpy/scipy reference path for the hot kernels."""
import numpy as np
from scipy.special import digamma, gammaln

INF_ATOMS = np.int32(1 << 20)


def coin_table(multiplicities, nmax):
    """reachable[n] is True iff n is a non-negative integer combination of ``multiplicities``."""
    reachable = np.zeros(nmax + 1, dtype=np.bool_)
    reachable[0] = True
    for m in np.unique(np.asarray(multiplicities, dtype=np.int64)):
        if m <= 0 or m > nmax:
            continue
        # unbounded knapsack: sweep in increasing n, in strides of m
        for start in range(m):
            seg = reachable[start::m]
            reachable[start::m] = np.logical_or.accumulate(seg)
    return reachable


def _shift(arr, delta, fill=0):
    out = np.full_like(arr, fill)
    if delta >= 0:
        out[delta:] = arr[: arr.shape[0] - delta]
    else:
        out[:delta] = arr[-delta:]
    return out


def element_charge_sums(ox_states, kmax, q):
    """sums[k, c+q] is True iff ``k`` atoms, each taking a state from ``ox_states``, total ``c``."""
    width = 2 * q + 1
    sums = np.zeros((kmax + 1, width), dtype=np.bool_)
    sums[0, q] = True
    for k in range(1, kmax + 1):
        row = np.zeros(width, dtype=np.bool_)
        for o in ox_states:
            row |= _shift(sums[k - 1], int(o))
        sums[k] = row
    return sums


def _conv(a, b, q):
    """Boolean convolution on the charge window: OR of ``a`` shifted by every charge set in ``b``."""
    if np.count_nonzero(a) < np.count_nonzero(b):
        a, b = b, a
    out = np.zeros_like(a, dtype=np.bool_)
    for j in np.flatnonzero(b):
        out |= _shift(a, int(j) - q)
    return out


def reach_of_counts(counts, sums, q):
    """Charges reachable by a whole composition; ``sums`` is ``[D, K+1, W]``."""
    width = 2 * q + 1
    reach = np.zeros(width, dtype=np.bool_)
    reach[q] = True
    for d in range(counts.shape[0]):
        k = counts[d]
        if k > 0:
            reach = _conv(reach, sums[d, k], q)
    return reach


def completion_table(min_atoms, e_max, a_max):
    """Minimum atom count to realise each charge with at most ``e`` extra elements.

    ``min_atoms`` is ``[U, W]``: for each candidate element the fewest atoms (among
    its admissible counts) producing charge offset ``c``, or ``INF_ATOMS``. The
    window centre is the zero-charge offset.
    """
    n_elem, width = min_atoms.shape
    q = (width - 1) // 2
    table = np.full((e_max + 1, width), INF_ATOMS, dtype=np.int32)
    table[0, q] = 0
    for u in range(n_elem):
        deltas = np.nonzero(min_atoms[u] < INF_ATOMS)[0]
        for e in range(e_max - 1, -1, -1):
            src = table[e]
            if not (src < INF_ATOMS).any():
                continue
            best = table[e + 1].copy()
            for idx in deltas:
                shifted = _shift(src, int(idx) - q, INF_ATOMS)
                cand = np.where(shifted < INF_ATOMS, shifted + min_atoms[u, idx], INF_ATOMS)
                np.minimum(best, cand, out=best)
            best[best > a_max] = INF_ATOMS
            table[e + 1] = best
    # "at most e elements"
    return np.minimum.accumulate(table, axis=0)


def feasible_counts(reach, sums_d, allowed, completion_row, atoms_left):
    """For each count k of a new element: does a neutral completion exist afterwards?

    ``completion_row[c]`` is the fewest extra atoms reaching charge offset ``c``
    with the element budget left after adding this element.
    """
    kmax = sums_d.shape[0] - 1
    width = reach.shape[0]
    q = (width - 1) // 2
    out = np.zeros(kmax + 1, dtype=np.bool_)
    mirrored = completion_row[::-1]
    for k in range(1, kmax + 1):
        if not allowed[k] or k > atoms_left:
            continue
        new_reach = _conv(reach, sums_d[k], q)
        budget = atoms_left - k
        if np.any(new_reach & (mirrored <= budget)):
            out[k] = True
    return out


def beta_mixture_logpdf(r, logit_w, alpha, beta):
    """Log density of a Beta mixture at ``r`` and its gradients.

    Shapes: ``r`` is ``[N]``, the parameter arrays are ``[N, J]``. Returns
    ``(logp[N], dlogit_w[N, J], dalpha[N, J], dbeta[N, J])``.
    """
    r = np.asarray(r, dtype=np.float64)[:, None]
    lw = logit_w - logit_w.max(axis=1, keepdims=True)
    log_w = lw - np.log(np.exp(lw).sum(axis=1, keepdims=True))
    log_r = np.log(r)
    log_1mr = np.log1p(-r)
    log_b = gammaln(alpha) + gammaln(beta) - gammaln(alpha + beta)
    comp = (alpha - 1.0) * log_r + (beta - 1.0) * log_1mr - log_b
    joint = log_w + comp
    mx = joint.max(axis=1, keepdims=True)
    logp = mx[:, 0] + np.log(np.exp(joint - mx).sum(axis=1))
    resp = np.exp(joint - logp[:, None])
    psi_ab = digamma(alpha + beta)
    dalpha = resp * (log_r - digamma(alpha) + psi_ab)
    dbeta = resp * (log_1mr - digamma(beta) + psi_ab)
    dlogit = resp - np.exp(log_w)
    return logp, dlogit, dalpha, dbeta


def adam_update(p, g, m, v, step, b1, b2, inv_sqrt_c2, eps):
    """In-place Adam step on flat arrays: ``p -= step * m / (sqrt(v) * inv_sqrt_c2 + eps)``."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * np.square(g)
    denom = np.sqrt(v)
    denom *= inv_sqrt_c2
    denom += eps
    np.divide(m, denom, out=denom)
    denom *= step
    p -= denom
