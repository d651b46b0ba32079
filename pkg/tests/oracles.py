"""Brute-force references computed by explicit path enumeration.

Nothing here uses the library's dynamic programs: marginals are a plain
vector-matrix recursion and every expectation is a sum over all paths.
"""
from __future__ import annotations

import itertools
from collections import defaultdict

import numpy as np


def marginal(chain, j):
    p = np.array(chain.initial_law, float)
    for m in range(chain.start, j):
        p = p @ chain.kernels[m - chain.start]
    return p


def paths(chain, lo, hi):
    """Yield ``(path, probability)`` for every path of ``X_lo .. X_hi``."""
    p0 = marginal(chain, lo)
    d = len(p0)
    for path in itertools.product(range(d), repeat=hi - lo + 1):
        pr = p0[path[0]]
        for i in range(len(path) - 1):
            pr *= chain.kernels[lo + i - chain.start][path[i], path[i + 1]]
        if pr > 0:
            yield path, pr


def sum_law(chain, fam, j, n, digits=10):
    """Law of ``S = sum_{k=j}^{j+n-1} f_k`` as a dict value -> probability."""
    lo, hi = j - fam.l, j + n - 1 + fam.r
    out = defaultdict(float)
    for path, pr in paths(chain, lo, hi):
        s = 0.0
        for k in range(j, j + n):
            a = k - fam.l - lo
            s += fam.tables[k - fam.start][tuple(path[a: a + fam.width])]
        out[round(s, digits)] += pr
    return dict(out)


def sum_moments(chain, fam, j, n):
    law = sum_law(chain, fam, j, n, digits=14)
    x = np.array(list(law)), np.array(list(law.values()))
    mean = float(np.sum(x[0] * x[1]))
    return mean, float(np.sum((x[0] - mean) ** 2 * x[1]))


def log_charfn(chain, fam, j, n, t):
    law = sum_law(chain, fam, j, n, digits=14)
    x, p = np.array(list(law)), np.array(list(law.values()))
    return np.log(np.sum(p * np.exp(1j * t * x)))


def phi_reverse_events(J):
    """``sup_{A, b} |P(A | b) - P(A)|`` over all subsets ``A`` of past atoms."""
    pa, pb = J.sum(axis=1), J.sum(axis=0)
    best = 0.0
    m = len(pa)
    for mask in itertools.product([0, 1], repeat=m):
        A = np.array(mask, bool)
        for b in range(J.shape[1]):
            if pb[b] > 0:
                best = max(best, abs(J[A, b].sum() / pb[b] - pa[A].sum()))
    return best


def correlation(J, f, g):
    pa, pb = J.sum(axis=1), J.sum(axis=0)
    f = f - pa @ f
    g = g - pb @ g
    num = f @ J @ g
    den = np.sqrt((pa @ f ** 2) * (pb @ g ** 2))
    return abs(num) / den if den > 0 else 0.0


def joint_past_future(chain, j, n):
    """Joint matrix of ``(X_j, X_{j+n})`` by enumeration."""
    d = chain.alphabet_size
    J = np.zeros((d, d))
    for path, pr in paths(chain, j, j + n):
        J[path[0], path[-1]] += pr
    return J
