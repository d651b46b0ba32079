"""Exact dynamic programs for partial sums ``S = f_{k0} + ... + f_{k0+n-1}``.

Both engines carry the joint law of the last ``W = l + r + 1`` coordinates
together with either the moments of the running sum or its full lattice law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import comb, logsumexp

from .chain import KernelSequence, iter_path_chunks, window_law
from .errors import NotLattice, SpanExceeded
from .observable import ObservableSequence

SPAN_LIMIT = 10 ** 7


def advance_state(m: np.ndarray, Q: np.ndarray, W: int) -> np.ndarray:
    """Move a window law one step forward with kernel ``Q``.

    The trailing ``W`` axes of ``m`` index ``(x_0, ..., x_{W-1})``; the result
    indexes ``(x_1, ..., x_W)``.  Leading axes are carried along.
    """
    d = Q.shape[0]
    lead = m.shape[: m.ndim - W]
    if W == 1:
        return m @ Q
    tmp = m.reshape(lead + (d, d ** (W - 2), d)).sum(axis=len(lead))
    return (tmp[..., None] * Q).reshape(lead + (d,) * W)


class MomentAccumulator:
    """Central moments of a running partial sum, one observable at a time.

    After ``k`` calls to :meth:`add`, :attr:`moments` holds
    ``E[(S - E S)^q]`` for ``q = 0 .. order`` where ``S`` sums the first ``k``
    observables starting at index ``k0``.
    """

    def __init__(self, chain: KernelSequence, seq: ObservableSequence, k0: int, order: int = 2):
        self.chain, self.seq, self.order = chain, seq, order
        self.W = seq.width
        self.k = k0
        law = window_law(chain, k0 - seq.l, k0 + seq.r)
        self.m = np.zeros((order + 1,) + law.shape)
        self.m[0] = law
        self.mean = 0.0
        self.count = 0
        self._binom = [[comb(q, i, exact=True) for i in range(q + 1)] for q in range(order + 1)]

    def add(self) -> np.ndarray:
        f = self.seq.tables[self.k - self.seq.start]
        mu = float(np.sum(self.m[0] * f))
        fc = f - mu
        powers = [np.ones_like(fc)]
        for _ in range(self.order):
            powers.append(powers[-1] * fc)
        new = np.empty_like(self.m)
        for q in range(self.order + 1):
            acc = np.zeros_like(fc)
            for i in range(q + 1):
                acc = acc + self._binom[q][i] * powers[q - i] * self.m[i]
            new[q] = acc
        self.m = new
        self.mean += mu
        self.count += 1
        self.k += 1
        moments = self.m.reshape(self.order + 1, -1).sum(axis=1)
        hi = self.k - 1 + self.seq.r
        if hi < self.chain.horizon[1]:
            self.m = advance_state(self.m, self.chain.kernel(hi), self.W)
        return moments


@dataclass(frozen=True)
class MomentCurve:
    """``mean[i]``, ``central[i, q]`` for partial sums of length ``i + 1``."""

    k0: int
    mean: np.ndarray
    central: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return self.central[:, 2]


def moment_curve(chain, seq: ObservableSequence, k0: int, n: int, order: int = 2) -> MomentCurve:
    acc = MomentAccumulator(chain, seq, k0, order)
    means, cent = np.empty(n), np.empty((n, order + 1))
    for i in range(n):
        cent[i] = acc.add()
        means[i] = acc.mean
    return MomentCurve(k0, means, cent)


# ---------------------------------------------------------------------------
# lattice laws


def _fgcd(a: float, b: float, tol: float) -> float:
    while b > tol:
        a, b = b, math.fmod(a, b)
    return a


def detect_lattice(values: np.ndarray, tol: float = 1e-9) -> tuple[float, float]:
    """Return ``(a, b)`` with every value in ``a + b Z`` to within ``tol`` (relative to scale)."""
    v = np.unique(np.asarray(values, dtype=float).ravel())
    a = float(v[0])
    diffs = v[1:] - a
    if diffs.size == 0:
        return a, 1.0
    scale = float(diffs.max())
    atol = tol * max(scale, 1.0)
    g = float(diffs[0])
    for x in diffs[1:]:
        g = _fgcd(max(g, float(x)), min(g, float(x)), atol)
    if g <= atol * 10:
        raise NotLattice("values do not lie on a common lattice")
    k = diffs / g
    if np.max(np.abs(k - np.round(k))) * g > atol * 10:
        raise NotLattice("values do not lie on a common lattice")
    return a, g


@dataclass(frozen=True)
class LatticeLaw:
    """Law of ``S = offset + spacing * m`` as log-probabilities over ``m = 0 .. len - 1``."""

    n: int
    offset: float
    spacing: float
    logp: np.ndarray

    @property
    def atoms(self) -> np.ndarray:
        return self.offset + self.spacing * np.arange(len(self.logp))

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logp)

    def support(self, min_logp: float = -745.0):
        keep = self.logp > min_logp
        return self.atoms[keep], np.exp(self.logp[keep])

    @property
    def total(self) -> float:
        return float(np.exp(logsumexp(self.logp)))

    def moments(self) -> tuple[float, float]:
        x, p = self.support()
        mean = float(np.sum(p * x))
        var = float(np.sum(p * (x - mean) ** 2))
        return mean, var

    def log_tail(self, threshold: float, strict: bool = True) -> float:
        """``log P(S > threshold)`` (or ``>=`` with ``strict=False``); ``-inf`` when empty."""
        m = (threshold - self.offset) / self.spacing
        eps = 1e-9
        first = math.floor(m + eps) + 1 if strict else math.ceil(m - eps)
        first = max(first, 0)
        if first >= len(self.logp):
            return -np.inf
        return float(logsumexp(self.logp[first:]))


def lattice_laws(
    chain: KernelSequence,
    seq: ObservableSequence,
    k0: int,
    n_values,
    tilt: float = 0.0,
    tol: float = 1e-9,
    span_limit: int = SPAN_LIMIT,
) -> dict[int, LatticeLaw]:
    """Exact lattice laws of the partial sums of length ``n`` for each ``n`` in ``n_values``.

    ``tilt`` is an exponential tilt applied during the sweep so that tails far
    from the mean stay representable; it is removed from the reported law.
    """
    n_values = sorted(set(int(v) for v in n_values))
    n_max = n_values[-1]
    tabs = seq.tables[k0 - seq.start: k0 - seq.start + n_max]
    if tabs.shape[0] < n_max:
        raise ValueError("observable sequence shorter than requested sums")
    a, b = detect_lattice(tabs, tol)
    idx = np.rint((tabs - a) / b).astype(np.int64)
    mins = idx.reshape(n_max, -1).min(axis=1)
    idx = idx - mins.reshape((-1,) + (1,) * (idx.ndim - 1))
    widths = idx.reshape(n_max, -1).max(axis=1)
    span = int(widths.sum())
    if span + 1 > span_limit:
        raise SpanExceeded(span, span_limit)
    d, W = seq.alphabet_size, seq.width
    S = d ** W
    law = window_law(chain, k0 - seq.l, k0 + seq.r).reshape(S)
    arr = np.zeros((S, span + 1))
    arr[:, 0] = law
    cur = 0  # occupied length - 1
    log_scale = 0.0
    out = {}
    wanted = set(n_values)
    for i in range(n_max):
        mk = idx[i].reshape(S)
        vmax = int(widths[i])
        new = np.zeros((S, cur + vmax + 1))
        for v in np.unique(mk):
            rows = np.flatnonzero(mk == v)
            block = arr[rows, : cur + 1]
            if tilt:
                block = block * math.exp(tilt * b * v)
            new[rows, v: v + cur + 1] = block
        cur += vmax
        tot = new.sum()
        if tot > 0:
            new /= tot
            log_scale += math.log(tot)
        arr[:, : cur + 1] = new
        if i + 1 in wanted:
            with np.errstate(divide="ignore"):
                lp = np.log(arr[:, : cur + 1].sum(axis=0)) + log_scale
            lp = lp - tilt * b * np.arange(cur + 1)
            offset = float(a * (i + 1) + b * mins[: i + 1].sum())
            out[i + 1] = LatticeLaw(i + 1, offset, float(b), lp)
        hi = k0 + i + seq.r
        if i + 1 < n_max:
            state = arr[:, : cur + 1].reshape((d,) * W + (cur + 1,))
            moved = advance_state(np.moveaxis(state, -1, 0), chain.kernel(hi), W)
            arr[:, : cur + 1] = np.moveaxis(moved, 0, -1).reshape(S, cur + 1)
    return out


def lattice_law(chain, seq, k0, n, tilt=0.0, **kw) -> LatticeLaw:
    return lattice_laws(chain, seq, k0, [n], tilt, **kw)[n]


# ---------------------------------------------------------------------------
# Monte Carlo partial sums


def sample_sums(
    chain: KernelSequence,
    seq: ObservableSequence,
    k0: int,
    n: int,
    replicas: int,
    seed: int = 0,
    threads: int = 1,
) -> np.ndarray:
    """Independent samples of the partial sum, reproducible from ``seed``."""
    lo, hi = k0 - seq.l, k0 + n - 1 + seq.r
    d, W = seq.alphabet_size, seq.width
    tabs = np.asarray(seq.tables[k0 - seq.start: k0 - seq.start + n]).reshape(n, -1)
    powers = d ** np.arange(W - 1, -1, -1)
    chunk = max(256, (1 << 21) // max(n, 1))
    out = np.empty(replicas)
    for ids, paths in iter_path_chunks(chain, replicas, (lo, hi), seed, chunk, threads):
        p = paths.astype(np.int64)
        flat = np.zeros((len(ids), n), dtype=np.int64)
        for i in range(W):
            flat += p[:, i: i + n] * powers[i]
        out[ids] = tabs[np.arange(n)[None, :], flat].sum(axis=1)
    return out
