"""Window observables, exact conditional expectations and approximation norms.

An observable ``f_j`` depends on the coordinates ``x_{j-l}, ..., x_{j+r}`` and
is stored as a dense table with one axis per coordinate, leftmost first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .chain import KernelSequence, window_law
from .errors import HorizonExceeded, WindowTooLarge

MAX_TABLE_ENTRIES = 2 ** 24


def _check_size(d: int, width: int) -> None:
    if d ** width > MAX_TABLE_ENTRIES:
        raise WindowTooLarge(f"table with {d}^{width} entries exceeds {MAX_TABLE_ENTRIES}")


@dataclass(frozen=True, eq=False)
class WindowObservable:
    """Function of ``(x_{j-l}, ..., x_{j+r})`` given by a value table."""

    j: int
    l: int
    r: int
    table: np.ndarray
    meta: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.l < 0 or self.r < 0:
            raise ValueError("window offsets l and r must be nonnegative")
        t = np.asarray(self.table, dtype=float)
        w = self.l + self.r + 1
        if t.ndim != w or len(set(t.shape)) > 1:
            raise ValueError(f"table shape {t.shape} does not match window width {w}")
        _check_size(t.shape[0], w)
        if not np.all(np.isfinite(t)):
            raise ValueError("observable table has non-finite entries")
        if t.flags.writeable:
            t = t.copy()
            t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def lo(self) -> int:
        return self.j - self.l

    @property
    def hi(self) -> int:
        return self.j + self.r

    @property
    def width(self) -> int:
        return self.l + self.r + 1

    @property
    def alphabet_size(self) -> int:
        return self.table.shape[0]

    def embed(self, lo: int, hi: int) -> np.ndarray:
        """Table broadcast to the larger window ``[lo, hi]``."""
        if lo > self.lo or hi < self.hi:
            raise ValueError("embedding window must contain the observable window")
        shape = (1,) * (self.lo - lo) + self.table.shape + (1,) * (hi - self.hi)
        d = self.alphabet_size
        return np.broadcast_to(self.table.reshape(shape), (d,) * (hi - lo + 1))

    def rebased(self, lo: int, hi: int, j: int | None = None) -> "WindowObservable":
        j = self.j if j is None else j
        j = min(max(j, lo), hi)
        return WindowObservable(j, j - lo, hi - j, np.ascontiguousarray(self.embed(lo, hi)), self.meta)

    def shifted(self, k: int) -> "WindowObservable":
        return WindowObservable(self.j + k, self.l, self.r, self.table, self.meta)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "WindowObservable":
        return WindowObservable(self.j, self.l, self.r, fn(self.table), self.meta)

    def _binary(self, other, op) -> "WindowObservable":
        if isinstance(other, WindowObservable):
            lo, hi = min(self.lo, other.lo), max(self.hi, other.hi)
            t = op(self.embed(lo, hi), other.embed(lo, hi))
            j = min(max(self.j, lo), hi)
            return WindowObservable(j, j - lo, hi - j, t)
        return WindowObservable(self.j, self.l, self.r, op(self.table, other), self.meta)

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self.map(np.negative)

    def __pow__(self, k):
        return self.map(lambda t: t ** k)

    def evaluate(self, paths: np.ndarray, path_lo: int) -> np.ndarray:
        """Values on sampled paths whose column 0 is coordinate ``path_lo``."""
        cols = paths[:, self.lo - path_lo: self.hi - path_lo + 1]
        return self.table[tuple(cols.T)]


def constant(j: int, value: float, d: int) -> WindowObservable:
    return WindowObservable(j, 0, 0, np.full(d, float(value)))


def coordinate(j: int, values, d: int | None = None, offset: int = 0) -> WindowObservable:
    """``f_j = values[x_{j+offset}]`` (``offset`` may be negative)."""
    v = np.asarray(values, dtype=float)
    if offset >= 0:
        w = offset + 1
        t = v.reshape((1,) * offset + (len(v),))
        t = np.broadcast_to(t, (len(v),) * w)
        return WindowObservable(j, 0, offset, t)
    w = -offset + 1
    t = np.broadcast_to(v.reshape((len(v),) + (1,) * (-offset)), (len(v),) * w)
    return WindowObservable(j, -offset, 0, t)


# ---------------------------------------------------------------------------
# observable families


@dataclass(frozen=True, eq=False)
class ObservableSequence:
    """Observables ``f_j`` for ``j = start .. start + n - 1`` sharing offsets ``(l, r)``.

    ``tables`` has shape ``(n,) + (d,) * (l + r + 1)``; it may be a read-only
    broadcast view for index-independent families.
    """

    l: int
    r: int
    tables: np.ndarray
    start: int = 0

    def __post_init__(self):
        t = np.asarray(self.tables, dtype=float)
        if t.ndim != self.l + self.r + 2:
            raise ValueError("tables must have shape (n,) + (d,)*(l+r+1)")
        _check_size(t.shape[1], self.l + self.r + 1)
        if t.flags.writeable:
            t = t.copy()
            t.setflags(write=False)
        object.__setattr__(self, "tables", t)

    @property
    def n(self) -> int:
        return self.tables.shape[0]

    @property
    def width(self) -> int:
        return self.l + self.r + 1

    @property
    def alphabet_size(self) -> int:
        return self.tables.shape[1]

    @property
    def stop(self) -> int:
        return self.start + self.n

    def at(self, j: int) -> WindowObservable:
        k = j - self.start
        if not 0 <= k < self.n:
            raise HorizonExceeded(j, j, (self.start, self.stop - 1))
        return WindowObservable(j, self.l, self.r, self.tables[k])

    def __iter__(self):
        return (self.at(j) for j in range(self.start, self.stop))

    def __len__(self) -> int:
        return self.n

    def window(self, j0: int, n: int) -> "ObservableSequence":
        k = j0 - self.start
        if k < 0 or k + n > self.n:
            raise HorizonExceeded(j0, j0 + n - 1, (self.start, self.stop - 1))
        return ObservableSequence(self.l, self.r, self.tables[k: k + n], j0)

    def map(self, fn) -> "ObservableSequence":
        return ObservableSequence(self.l, self.r, fn(np.asarray(self.tables)), self.start)

    def __add__(self, other: "ObservableSequence") -> "ObservableSequence":
        return align([self, other], combine=sum)

    def __sub__(self, other: "ObservableSequence") -> "ObservableSequence":
        return align([self, other], combine=lambda ts: ts[0] - ts[1])

    def scaled(self, c) -> "ObservableSequence":
        c = np.asarray(c, dtype=float)
        shape = (-1,) + (1,) * self.width if c.ndim else ()
        return self.map(lambda t: t * c.reshape(shape))


def homogeneous_family(table, l: int, r: int, n: int, start: int = 0) -> ObservableSequence:
    """Index-independent family ``f_j = table`` without copying."""
    t = np.asarray(table, dtype=float)
    t = np.broadcast_to(t, (n,) + t.shape)
    return ObservableSequence(l, r, t, start)


def from_observables(obs: list[WindowObservable]) -> ObservableSequence:
    """Stack consecutive observables, embedding them into a common ``(l, r)``."""
    l = max(o.l for o in obs)
    r = max(o.r for o in obs)
    tabs = np.stack([np.asarray(o.embed(o.j - l, o.j + r)) for o in obs])
    for a, b in zip(obs, obs[1:]):
        if b.j != a.j + 1:
            raise ValueError("observables must have consecutive indices")
    return ObservableSequence(l, r, tabs, obs[0].j)


def align(seqs: list[ObservableSequence], combine) -> ObservableSequence:
    """Embed sequences with equal index ranges into a common window and combine the tables."""
    if len({(s.start, s.n) for s in seqs}) != 1:
        raise ValueError("sequences must share their index range")
    l = max(s.l for s in seqs)
    r = max(s.r for s in seqs)
    d, n = seqs[0].alphabet_size, seqs[0].n
    tabs = []
    for s in seqs:
        shape = (n,) + (1,) * (l - s.l) + (d,) * s.width + (1,) * (r - s.r)
        tabs.append(np.broadcast_to(s.tables.reshape(shape), (n,) + (d,) * (l + r + 1)))
    return ObservableSequence(l, r, np.asarray(combine(tabs)), seqs[0].start)


# ---------------------------------------------------------------------------
# exact moments


def expectation(f: WindowObservable, chain: KernelSequence) -> float:
    return float(np.sum(f.table * window_law(chain, f.lo, f.hi)))


def lp_norm(f: WindowObservable, chain: KernelSequence, a: float, support: bool = True) -> float:
    """``||f||_{L^a}`` under the window law; ``a = inf`` is the essential supremum.

    With ``support=False`` the supremum runs over the full table.
    """
    if np.isinf(a):
        vals = np.abs(f.table)
        if support:
            mask = window_law(chain, f.lo, f.hi) > 0
            vals = vals[mask]
        return float(vals.max()) if vals.size else 0.0
    P = window_law(chain, f.lo, f.hi)
    return float(np.sum(P * np.abs(f.table) ** a) ** (1.0 / a))


def condition(f: WindowObservable, chain: KernelSequence, a: float, b: float) -> WindowObservable:
    """``E[f | X_a, ..., X_b]`` (``b`` may be ``inf``, ``a`` may be ``-inf``).

    By the Markov property only the coordinates of ``[a, b]`` inside the window
    of ``f`` matter.  The result lives on that intersection and keeps index
    ``j`` when it belongs to it (otherwise it is re-based at the nearest end).
    Conditioning on an event of probability zero yields 0.
    """
    lo = f.lo if a == -np.inf else max(f.lo, int(a))
    hi = f.hi if b == np.inf else min(f.hi, int(b))
    if lo <= f.lo and hi >= f.hi:
        return f
    if lo > hi:
        j = f.hi if lo > f.hi else f.lo
        return WindowObservable(j, 0, 0, np.full(f.alphabet_size, expectation(f, chain)))
    P = window_law(chain, f.lo, f.hi)
    outer = tuple(range(lo - f.lo)) + tuple(range(hi - f.lo + 1, f.width))
    num = np.sum(P * f.table, axis=outer)
    den = np.sum(P, axis=outer)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    j = min(max(f.j, lo), hi)
    return WindowObservable(j, j - lo, hi - j, t)


def cond_expect(f: WindowObservable, chain: KernelSequence, r: int) -> WindowObservable:
    """``E[f | F_{j-r, j+r}]`` computed exactly."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    return condition(f, chain, f.j - r, f.j + r)


@dataclass(frozen=True)
class NormReport:
    a: float
    b: float
    delta: float
    lp_norm: float
    v_coeff: float
    total: float
    argmax_r: int


def approximation_errors(f: WindowObservable, chain: KernelSequence, b: float, support=True):
    """``||f - E[f | F_{j-r,j+r}]||_{L^b}`` for ``r = 0 .. max(l, r)``."""
    R = max(f.l, f.r)
    out = []
    for r in range(R + 1):
        g = cond_expect(f, chain, r)
        out.append(lp_norm(f - g, chain, b, support) if r < R else 0.0)
    return np.array(out)


def norm(
    f: WindowObservable, chain: KernelSequence, a: float, b: float, delta: float | None = None,
    support: bool = True,
) -> NormReport:
    """``||f||_{L^a}`` plus ``v_{j,b,delta}(f) = max_r delta^{-r} ||f - E[f|F_{j-r,j+r}]||_{L^b}``."""
    if delta is None:
        delta = f.meta.get("delta")
    if delta is None or not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    errs = approximation_errors(f, chain, b, support)
    weighted = errs * float(delta) ** (-np.arange(len(errs), dtype=float))
    k = int(np.argmax(weighted))
    lp = lp_norm(f, chain, a, support)
    v = float(weighted[k])
    return NormReport(float(a), float(b), float(delta), lp, v, lp + v, k)


# ---------------------------------------------------------------------------
# re-centering and truncation


def cutback(c: float, N: int) -> int:
    if c <= 0 or N < 2:
        raise ValueError("cutback needs c > 0 and N >= 2")
    return int(math.ceil(c * math.log(N)))


def recenter_to_future(f: WindowObservable, chain: KernelSequence, c: float, N: int) -> WindowObservable:
    """``E[f_j | F_{j - ceil(c ln N), inf}]``; unchanged when the cutback covers the window."""
    m = cutback(c, N)
    if m >= f.l:
        return f
    chain.check_window(f.lo, f.hi)
    return condition(f, chain, f.j - m, np.inf)


def soft_truncation(x, M: float):
    """Piecewise-linear ``G_M``: identity on ``[-M, M]``, linear to 0 on ``M <= |x| <= 2M``, 0 beyond."""
    if M <= 0:
        raise ValueError("truncation level must be positive")
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    mid = np.sign(x) * (2 * M - ax)
    return np.where(ax <= M, x, np.where(ax <= 2 * M, mid, 0.0))


def truncate_soft(f: WindowObservable, M: float) -> WindowObservable:
    return f.map(lambda t: soft_truncation(t, M))


# ---------------------------------------------------------------------------
# Hoelder observables


def holder_distance(x: np.ndarray, y: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """``rho_j(x, y) = sum_k 2^{-|k|} 1{x_{j+k} != y_{j+k}}`` over the window offsets."""
    w = 2.0 ** -np.abs(offsets)
    return ((x != y) * w).sum(axis=-1)


def holder_average_observable(spec: Mapping) -> WindowObservable:
    """Random observable that is Hoelder with exponent ``alpha`` against an envelope.

    ``spec`` keys: ``alpha`` in (0, 1], ``envelope`` (one value ``c(x) >= 0`` per
    state), ``radius`` (window ``[j - radius, j + radius]``), ``j`` and ``seed``.
    The table is ``kappa * sum_k 2^{-alpha |k|} c(x_{j+k}) u_k(x_{j+k})`` with
    ``u_k`` uniform on ``[-1, 1]``; the envelope of a tuple is ``max_k c(x_{j+k})``.
    The observable carries ``meta['delta'] = 2^{-alpha}`` and the envelope table.
    """
    alpha = float(spec.get("alpha", 1.0))
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    c = np.asarray(spec["envelope"], dtype=float)
    if np.any(c < 0):
        raise ValueError("envelope values must be nonnegative")
    rad = int(spec.get("radius", 1))
    j = int(spec.get("j", 0))
    d, w = len(c), 2 * rad + 1
    _check_size(d, w)
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    kappa = float(w) ** (alpha - 1.0)
    table = np.zeros((d,) * w)
    env = np.zeros((d,) * w)
    for pos, k in enumerate(range(-rad, rad + 1)):
        u = rng.uniform(-1, 1, size=d)
        shape = [1] * w
        shape[pos] = d
        table = table + (2.0 ** (-alpha * abs(k)) * c * u).reshape(shape)
        env = np.maximum(env, c.reshape(shape))
    meta = {"delta": 2.0 ** -alpha, "alpha": alpha, "envelope": env}
    return WindowObservable(j, rad, rad, kappa * table, meta)


def check_holder(f: WindowObservable, alpha: float, envelope: np.ndarray, max_entries: int = 4096) -> float:
    """Largest ratio ``|f(x)-f(y)| / ((C(x)+C(y)) rho(x,y)^alpha)`` over all tuple pairs."""
    t = f.table.reshape(-1)
    if t.size > max_entries:
        raise WindowTooLarge("exhaustive Hoelder check limited to 4096 entries")
    d, w = f.alphabet_size, f.width
    tuples = np.array(np.unravel_index(np.arange(t.size), (d,) * w)).T
    offsets = np.arange(-f.l, f.r + 1)
    C = np.asarray(envelope).reshape(-1)
    worst = 0.0
    for i in range(t.size):
        rho = holder_distance(tuples[i][None, :], tuples, offsets)
        den = (C[i] + C) * rho ** alpha
        num = np.abs(t[i] - t)
        mask = rho > 0
        bad = mask & (den == 0) & (num > 0)
        if np.any(bad):
            return np.inf
        ok = mask & (den > 0)
        if np.any(ok):
            worst = max(worst, float(np.max(num[ok] / den[ok])))
    return worst
