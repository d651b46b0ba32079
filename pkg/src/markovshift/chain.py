"""Finite-state inhomogeneous Markov chains.

A chain is a sequence of row-stochastic kernels ``Q_j`` together with the law
of ``X_start``.  Index arithmetic is absolute: kernel ``Q_j`` moves the chain
from index ``j`` to ``j + 1`` and lives at ``kernels[j - start]``.  Generators
built with :func:`make_chain` start at ``-buffer`` so that indices ``0..N``
see a chain that has already forgotten its initial law.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateBlock,
    HorizonExceeded,
    InvalidChain,
    NotPrimitive,
    ZeroMarginal,
    ZeroReference,
)

STOCH_TOL = 1e-12
DEFAULT_BUFFER = 64


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class MarginalTable:
    """Laws ``pi_j`` of ``X_j`` for ``j = start .. start + len(laws) - 1``."""

    laws: np.ndarray
    start: int = 0

    def at(self, j: int) -> np.ndarray:
        k = j - self.start
        if not 0 <= k < len(self.laws):
            raise HorizonExceeded(j, j, (self.start, self.start + len(self.laws) - 1))
        return self.laws[k]


@dataclass(frozen=True, eq=False)
class BackwardKernelSequence:
    """``B_j[x][y] = P(X_j = y | X_{j+1} = x)``.

    ``zero_states`` lists ``(j, x)`` pairs with ``pi_{j+1}(x) = 0`` whose rows
    were filled with ``pi_j`` (only produced with ``strict=False``).
    """

    kernels: np.ndarray
    start: int = 0
    zero_states: tuple = ()

    def at(self, j: int) -> np.ndarray:
        return self.kernels[j - self.start]


@dataclass(frozen=True, eq=False)
class KernelSequence:
    """Forward kernels ``Q_j`` and the law of the first coordinate.

    Parameters
    ----------
    initial_law : array_like, shape (d,)
        Law of ``X_start``.
    kernels : array_like, shape (N, d, d)
        ``kernels[i]`` is ``Q_{start+i}``.
    start : int
        Absolute index of the first coordinate (may be negative).
    """

    initial_law: np.ndarray
    kernels: np.ndarray
    start: int = 0
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        init = _frozen(self.initial_law)
        ker = _frozen(self.kernels)
        if ker.ndim == 2:
            ker = _frozen(ker[None])
        if ker.ndim != 3 or ker.shape[1] != ker.shape[2]:
            raise InvalidChain(f"kernels must have shape (N, d, d), got {ker.shape}")
        if init.shape != (ker.shape[1],):
            raise InvalidChain("initial law and kernels disagree on the alphabet size")
        if np.any(ker < 0) or np.any(init < 0):
            raise InvalidChain("negative probability")
        if not np.all(np.isfinite(ker)):
            raise InvalidChain("non-finite kernel entry")
        bad = np.abs(ker.sum(axis=2) - 1.0) > STOCH_TOL
        if np.any(bad):
            i, x = np.argwhere(bad)[0]
            raise InvalidChain(f"row {x} of kernel {int(i) + self.start} does not sum to 1")
        if abs(init.sum() - 1.0) > STOCH_TOL:
            raise InvalidChain("initial law does not sum to 1")
        object.__setattr__(self, "initial_law", init)
        object.__setattr__(self, "kernels", ker)
        object.__setattr__(self, "start", int(self.start))

    @property
    def alphabet_size(self) -> int:
        return self.kernels.shape[1]

    @property
    def n_steps(self) -> int:
        return self.kernels.shape[0]

    @property
    def horizon(self) -> tuple[int, int]:
        """Inclusive index range ``(start, start + N)`` of the coordinates."""
        return self.start, self.start + self.n_steps

    def kernel(self, j: int) -> np.ndarray:
        k = j - self.start
        if not 0 <= k < self.n_steps:
            raise HorizonExceeded(j, j + 1, self.horizon)
        return self.kernels[k]

    def check_window(self, lo: int, hi: int) -> None:
        a, b = self.horizon
        if lo < a or hi > b or lo > hi:
            raise HorizonExceeded(lo, hi, self.horizon)

    @cached_property
    def laws(self) -> MarginalTable:
        return marginals(self)

    @cached_property
    def backward(self) -> BackwardKernelSequence:
        return backward_kernels(self, self.laws, strict=False)

    def law(self, j: int) -> np.ndarray:
        return self.laws.at(j)

    def restrict(self, lo: int, hi: int) -> "KernelSequence":
        """Chain on ``[lo, hi]`` with ``X_lo`` distributed as ``pi_lo``."""
        self.check_window(lo, hi)
        ker = self.kernels[lo - self.start: hi - self.start]
        return KernelSequence(self.law(lo), ker, start=lo, meta=dict(self.meta))

    def kernel_rows(self) -> list[tuple[int, int, int, float]]:
        """Kernels as ``(j, x, y, prob)`` rows, ready for CSV export."""
        d = self.alphabet_size
        return [
            (self.start + i, x, y, float(self.kernels[i, x, y]))
            for i in range(self.n_steps)
            for x in range(d)
            for y in range(d)
        ]


# ---------------------------------------------------------------------------
# marginals and reversal


def marginals(chain: KernelSequence) -> MarginalTable:
    """Forward Chapman-Kolmogorov propagation ``pi_{j+1} = pi_j Q_j``."""
    laws = np.empty((chain.n_steps + 1, chain.alphabet_size))
    laws[0] = chain.initial_law
    for i in range(chain.n_steps):
        laws[i + 1] = laws[i] @ chain.kernels[i]
    laws.setflags(write=False)
    return MarginalTable(laws, chain.start)


def backward_kernels(
    chain: KernelSequence, marginals: MarginalTable | None = None, strict: bool = True
) -> BackwardKernelSequence:
    """Bayes reversal ``B_j[x][y] = pi_j(y) Q_j[y][x] / pi_{j+1}(x)``.

    Raises
    ------
    ZeroMarginal
        If ``strict`` and some ``pi_{j+1}(x)`` vanishes.
    """
    laws = (marginals or chain.laws).laws
    d = chain.alphabet_size
    out = np.empty_like(chain.kernels)
    zeros = []
    for i in range(chain.n_steps):
        joint = laws[i][:, None] * chain.kernels[i]  # joint[y, x] = P(X_j=y, X_{j+1}=x)
        den = laws[i + 1]
        for x in np.flatnonzero(den <= 0):
            if strict:
                raise ZeroMarginal(chain.start + i + 1, int(x))
            zeros.append((chain.start + i + 1, int(x)))
        safe = np.where(den > 0, den, 1.0)
        out[i] = (joint / safe[None, :]).T
        if zeros and zeros[-1][0] == chain.start + i + 1:
            for _, x in (z for z in zeros if z[0] == chain.start + i + 1):
                out[i, x] = laws[i] if laws[i].sum() > 0 else np.full(d, 1.0 / d)
    out.setflags(write=False)
    return BackwardKernelSequence(out, chain.start, tuple(zeros))


def forward_from_backward(
    backward: BackwardKernelSequence, marginals: MarginalTable
) -> np.ndarray:
    """Recover ``Q_j[y][x] = pi_{j+1}(x) B_j[x][y] / pi_j(y)`` (rows with ``pi_j(y)=0`` left as NaN)."""
    n = backward.kernels.shape[0]
    out = np.empty_like(backward.kernels)
    for i in range(n):
        j = backward.start + i
        p0, p1 = marginals.at(j), marginals.at(j + 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[i] = (p1[:, None] * backward.kernels[i]).T / p0[:, None]
    return out


def stationary_law(Q: np.ndarray) -> np.ndarray:
    """Solve ``pi Q = pi``, ``sum(pi) = 1`` by a direct linear solve."""
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    A = Q.T - np.eye(d)
    A[-1, :] = 1.0
    rhs = np.zeros(d)
    rhs[-1] = 1.0
    pi = np.linalg.solve(A, rhs)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def multi_step(chain: KernelSequence, j: int, n: int) -> np.ndarray:
    """n-step kernel ``Q_j Q_{j+1} ... Q_{j+n-1}``."""
    chain.check_window(j, j + n)
    K = np.eye(chain.alphabet_size)
    for m in range(j, j + n):
        K = K @ chain.kernel(m)
    return K


def window_law(chain: KernelSequence, lo: int, hi: int) -> np.ndarray:
    """Joint law of ``(X_lo, ..., X_hi)`` as a tensor of shape ``(d,) * (hi - lo + 1)``."""
    chain.check_window(lo, hi)
    p = chain.law(lo).copy()
    for m in range(lo, hi):
        p = p[..., None] * chain.kernel(m)
    return p


def conditional_window_law(chain: KernelSequence, lo: int, hi: int) -> np.ndarray:
    """``P(X_{lo+1..hi} | X_lo)`` as a tensor of shape ``(d,) * (hi - lo + 1)``."""
    chain.check_window(lo, hi)
    p = np.ones(chain.alphabet_size)
    for m in range(lo, hi):
        p = p[..., None] * chain.kernel(m)
    return p


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Sampled trajectories ``paths[replica, t]`` of ``X_{lo + t}``."""

    seed: int
    lo: int
    paths: np.ndarray
    stream_ids: np.ndarray


def replica_generator(seed: int, replica: int) -> np.random.Generator:
    """Counter-based substream for one replica, derived from ``(seed, replica)`` only."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replica),))
    return np.random.Generator(np.random.Philox(ss))


def _uniforms(seed: int, ids: np.ndarray, length: int) -> np.ndarray:
    out = np.empty((len(ids), length))
    for row, r in enumerate(ids):
        out[row] = replica_generator(seed, r).random(length)
    return out


def _advance(states: np.ndarray, cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    nxt = (u[:, None] >= cum[states]).sum(axis=1)
    return np.minimum(nxt, cum.shape[-1] - 1)


def iter_path_chunks(
    chain: KernelSequence,
    n_replicas: int,
    window: tuple[int, int] | None = None,
    seed: int = 0,
    chunk: int = 8192,
    threads: int = 1,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(replica_ids, paths)`` blocks; concatenation equals :func:`sample_paths`."""
    lo, hi = window if window is not None else chain.horizon
    chain.check_window(lo, hi)
    length = hi - lo + 1
    cum_init = np.cumsum(chain.law(lo))
    cums = [np.cumsum(chain.kernel(m), axis=1) for m in range(lo, hi)]
    dtype = np.int8 if chain.alphabet_size <= 127 else np.int32
    starts = list(range(0, n_replicas, chunk))

    def work(s):
        ids = np.arange(s, min(s + chunk, n_replicas))
        u = _uniforms(seed, ids, length)
        x = np.minimum((u[:, 0:1] >= cum_init[None, :]).sum(axis=1), chain.alphabet_size - 1)
        paths = np.empty((len(ids), length), dtype=dtype)
        paths[:, 0] = x
        for t, cum in enumerate(cums, start=1):
            x = _advance(x, cum, u[:, t])
            paths[:, t] = x
        return ids, paths

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            # map preserves submission order, so output never depends on scheduling
            yield from ex.map(work, starts)
    else:
        for s in starts:
            yield work(s)


def sample_paths(
    chain: KernelSequence,
    n_replicas: int,
    window: tuple[int, int] | None = None,
    seed: int = 0,
    threads: int = 1,
) -> PathEnsemble:
    """Ancestral sampling of ``n_replicas`` independent trajectories on ``window``."""
    lo = (window or chain.horizon)[0]
    blocks = list(iter_path_chunks(chain, n_replicas, window, seed, threads=threads))
    ids = np.concatenate([b[0] for b in blocks]) if blocks else np.zeros(0, int)
    paths = np.concatenate([b[1] for b in blocks]) if blocks else np.zeros((0, 0), np.int8)
    return PathEnsemble(int(seed), lo, paths, ids)


# ---------------------------------------------------------------------------
# mixing coefficients


@dataclass(frozen=True)
class MixingEntry:
    """One value of a mixing coefficient at a given lag."""

    kind: str
    lag: int
    value: float
    lower: float
    upper: float
    method: str
    index: int
    dropped_atoms: int = 0


@dataclass(frozen=True)
class MixingProfile:
    kind: str
    values: dict
    method: str
    entries: tuple = ()


def block_joint_law(
    chain: KernelSequence, j: int, n: int, past_window: int = 1, future_window: int = 1
) -> np.ndarray:
    """Joint law matrix of ``(X_{j-wp+1..j}, X_{j+n..j+n+wf-1})`` with flattened blocks."""
    d = chain.alphabet_size
    lo, hi = j - past_window + 1, j + n + future_window - 1
    chain.check_window(lo, hi)
    past = window_law(chain, lo, j).reshape(-1)
    K = multi_step(chain, j, n)
    fut = conditional_window_law(chain, j + n, hi).reshape(d, -1)  # P(rest of block | X_{j+n})
    cond = (K[:, :, None] * fut[None]).reshape(d, -1)  # P(future block | X_j)
    last = np.arange(past.size) % d
    return past[:, None] * cond[last]


def _norm(v: np.ndarray, w: np.ndarray, p: float) -> float:
    if np.isinf(p):
        return float(np.max(np.abs(v))) if v.size else 0.0
    return float(np.sum(w * np.abs(v) ** p) ** (1.0 / p))


def _varpi_search(J, pa, pb, q, p, rng, n_random=200, n_climb=200) -> float:
    """Lower bound for the (q, p) coefficient by random search plus hill climbing."""
    cond = J / pb[None, :] - pa[:, None]  # cond[a, b] = P(a | b) - P(a)

    def score(h):
        nh = _norm(h, pa, q)
        if nh == 0:
            return 0.0
        return _norm(h @ cond, pb, p) / nh

    cands = [np.eye(len(pa))[a] for a in range(len(pa))]
    U, _, Vt = np.linalg.svd(cond * np.sqrt(pa)[:, None])
    cands += [np.sign(U[:, 0]) + 0.0, U[:, 0] / np.sqrt(pa)]
    cands += list(rng.standard_normal((n_random, len(pa))))
    cands += list(np.sign(rng.standard_normal((n_random, len(pa)))))
    best_h = max(cands, key=score)
    best = score(best_h)
    step = 0.5
    for _ in range(n_climb):
        trial = best_h + step * rng.standard_normal(len(pa))
        s = score(trial)
        if s > best:
            best, best_h = s, trial
        else:
            step *= 0.98
    return best


def _coefficient_at(J, kind, q, p, rng):
    pa, pb = J.sum(axis=1), J.sum(axis=0)
    keep_a, keep_b = pa > 0, pb > 0
    dropped = int((~keep_a).sum() + (~keep_b).sum())
    J = J[np.ix_(keep_a, keep_b)]
    pa, pb = pa[keep_a], pb[keep_b]
    if J.size == 0:
        raise DegenerateBlock("every atom of a block has probability zero")
    ratio = J / np.outer(pa, pb)
    psi = float(np.max(np.abs(ratio - 1.0)))
    if kind == "psi":
        return psi, psi, psi, "exact", dropped
    if kind == "rho":
        M = (J - np.outer(pa, pb)) / np.sqrt(np.outer(pa, pb))
        rho = float(np.linalg.svd(M, compute_uv=False)[0]) if M.size else 0.0
        return rho, rho, rho, "exact", dropped
    if kind == "phi_reverse":
        dev = J / pb[None, :] - pa[:, None]
        tv = float(np.max(0.5 * np.abs(dev).sum(axis=0)))
        atom = float(np.max(np.abs(dev)))
        return tv, atom, tv, "exact", dropped
    if kind == "varpi":
        if (q, p) == (2, 2):
            return _coefficient_at(J, "rho", q, p, rng)
        if (q, p) == (np.inf, np.inf):
            v, a, _, m, dr = _coefficient_at(J, "phi_reverse", q, p, rng)
            return 2 * v, 2 * a, 2 * v, m, dr
        if (q, p) == (1, np.inf):
            return psi, psi, psi, "exact", dropped
        lower = _varpi_search(J, pa, pb, q, p, rng)
        return lower, lower, psi, "atom_lower_bound", dropped
    raise ValueError(f"unknown mixing kind {kind!r}")


def mixing_coefficient(
    chain: KernelSequence,
    kind: str,
    n: int,
    past_window: int = 1,
    future_window: int = 1,
    q: float | None = None,
    p: float | None = None,
    indices: Sequence[int] | None = None,
    seed: int = 0,
) -> MixingEntry:
    """Mixing coefficient between the past block ending at ``j`` and the future block at ``j+n``.

    The supremum over ``j`` runs over ``indices`` (default: every index where
    both blocks fit in the horizon).  ``kind`` is one of ``rho``, ``phi_reverse``,
    ``psi`` or ``varpi`` (with exponents ``q``, ``p``).  For ``varpi`` with
    exponents other than ``(2, 2)``, ``(inf, inf)``, ``(1, inf)`` the value is
    a search lower bound and ``upper`` is the psi bound.
    """
    if kind == "phi":
        kind = "phi_reverse"
    a, b = chain.horizon
    if indices is None:
        indices = range(a + past_window - 1, b - n - future_window + 2)
    indices = list(indices)
    if not indices:
        raise HorizonExceeded(a, b + 1, chain.horizon)
    rng = np.random.default_rng(seed)
    best = None
    dropped = 0
    for j in indices:
        J = block_joint_law(chain, j, n, past_window, future_window)
        val, low, up, method, dr = _coefficient_at(J, kind, q and float(q), p and float(p), rng)
        dropped += dr
        if best is None or val > best[0]:
            best = (val, low, up, method, j)
        elif kind == "varpi":
            best = (best[0], best[1], max(best[2], up), best[3], best[4])
    if dropped:
        warnings.warn(f"{dropped} zero-probability atoms dropped from mixing computation")
    val, low, up, method, j = best
    return MixingEntry(kind, n, val, low, up, method, j, dropped)


def mixing_profile(chain, kind, lags, past_window=1, future_window=1, **kw) -> MixingProfile:
    entries = tuple(
        mixing_coefficient(chain, kind, n, past_window, future_window, **kw) for n in lags
    )
    return MixingProfile(kind, {e.lag: e.value for e in entries}, entries[0].method, entries)


def psi_upper_one(chain: KernelSequence) -> float:
    """Smallest ``c`` with ``P(A & B) - P(A)P(B) <= c P(A)P(B)`` across one step (past vs future)."""
    best = 0.0
    for i in range(chain.n_steps):
        j = chain.start + i
        pj, pk = chain.law(j), chain.law(j + 1)
        J = pj[:, None] * chain.kernels[i]
        den = np.outer(pj, pk)
        mask = den > 0
        best = max(best, float(np.max(J[mask] / den[mask] - 1.0)))
    return max(best, 0.0)


def doeblin_constants(
    chain: KernelSequence, reference: MarginalTable | None = None
) -> tuple[float, float]:
    """``C1 = min Q_j[x][y] / ref_{j+1}(y)`` and ``C2 = max`` over all kernels."""
    ref = reference or chain.laws
    c1, c2 = np.inf, 0.0
    for i in range(chain.n_steps):
        j = chain.start + i
        r = ref.at(j + 1)
        if np.any(r <= 0):
            raise ZeroReference(j + 1, int(np.flatnonzero(r <= 0)[0]))
        ratio = chain.kernels[i] / r[None, :]
        c1, c2 = min(c1, float(ratio.min())), max(c2, float(ratio.max()))
    return c1, c2


# ---------------------------------------------------------------------------
# generators


def _initial(spec_init, Q0: np.ndarray) -> np.ndarray:
    d = Q0.shape[0]
    if spec_init is None or spec_init == "stationary":
        return stationary_law(Q0)
    if spec_init == "uniform":
        return np.full(d, 1.0 / d)
    law = np.asarray(spec_init, dtype=float)
    return law / law.sum() if abs(law.sum() - 1) < 1e-9 else law


def homogeneous_chain(Q, length: int, initial="stationary", buffer: int = 0) -> KernelSequence:
    Q = np.asarray(Q, dtype=float)
    ker = np.broadcast_to(Q, (length + 2 * buffer,) + Q.shape)
    return KernelSequence(_initial(initial, Q), ker, start=-buffer)


def perturbed_chain(
    Q, epsilon: float, length: int, seed: int = 0, initial="stationary", buffer: int = 0,
    directions=None,
) -> KernelSequence:
    """``Q_j = Q + eps E_j`` with row-sum-zero ``E_j`` (entries in [-1, 1]), clipped to stay stochastic."""
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    total = length + 2 * buffer
    if epsilon == 0:
        ker = np.broadcast_to(Q, (total, d, d))
    else:
        if directions is None:
            rng = np.random.default_rng(seed)
            E = rng.uniform(-1, 1, size=(total, d, d))
            E -= E.mean(axis=2, keepdims=True)
            E /= np.maximum(np.abs(E).max(axis=(1, 2), keepdims=True), 1e-300)
        else:
            E = np.asarray(directions, dtype=float)
            E = np.broadcast_to(E, (total, d, d)) if E.ndim == 2 else E[:total]
        ker = np.clip(Q[None] + epsilon * E, 0.0, None)
        ker = ker / ker.sum(axis=2, keepdims=True)
    return KernelSequence(_initial(initial, Q), ker, start=-buffer)


def parry_kernel(A) -> tuple[np.ndarray, float, np.ndarray]:
    """Measure-of-maximal-entropy kernel of a primitive 0-1 matrix.

    Returns ``(Q, lambda_A, u)`` with ``Q[x][y] = A[x][y] u(y) / (lambda_A u(x))``.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    if not np.all((A == 0) | (A == 1)):
        raise NotPrimitive("adjacency matrix must be 0-1")
    B = (A > 0).astype(np.int64)
    P = B.copy()
    primitive = bool(np.all(P > 0))
    for _ in range(d * d):
        if primitive:
            break
        P = np.minimum(P @ B, 1)
        primitive = bool(np.all(P > 0))
    if not primitive:
        raise NotPrimitive(f"no positive power of A up to {d * d}")
    w, V = np.linalg.eig(A)
    k = int(np.argmax(w.real))
    lam = float(w[k].real)
    u = np.abs(V[:, k].real)
    Q = A * u[None, :] / (lam * u[:, None])
    Q = Q / Q.sum(axis=1, keepdims=True)
    return Q, lam, u


def environment_orbit(spec: Mapping, total: int, phase: int = 0) -> np.ndarray:
    """Environment symbols ``omega_j`` for ``j = 0 .. total - 1`` (offset by ``phase``)."""
    kind = spec.get("kind", "cyclic")
    if kind == "cyclic":
        period = spec.get("pattern") or list(range(int(spec["period"])))
        pat = np.asarray(period, dtype=int)
        return pat[(np.arange(total) + phase) % len(pat)]
    if kind == "sequence":
        seq = np.asarray(spec["symbols"], dtype=int)
        idx = np.arange(total) + phase
        if idx[-1] >= len(seq):
            raise ValueError("environment sequence shorter than the horizon")
        return seq[idx]
    if kind == "rotation":
        alpha, beta = float(spec["alpha"]), float(spec.get("beta", 0.5))
        x0 = float(spec.get("x0", 0.0))
        t = (x0 + (np.arange(total) + phase) * alpha) % 1.0
        return (t >= beta).astype(int)
    if kind == "markov":
        P = np.asarray(spec["P"], dtype=float)
        rng = np.random.default_rng(np.random.SeedSequence(int(spec.get("seed", 0)), spawn_key=(7,)))
        out = np.empty(total + phase, dtype=int)
        out[0] = int(spec.get("start", 0))
        cum = np.cumsum(P, axis=1)
        u = rng.random(total + phase)
        for i in range(1, total + phase):
            out[i] = min(int((u[i] >= cum[out[i - 1]]).sum()), len(P) - 1)
        return out[phase:]
    raise ValueError(f"unknown environment kind {kind!r}")


def environment_chain(
    kernels, orbit_spec: Mapping, length: int, buffer: int = 0, phase: int = 0, initial="uniform"
) -> tuple[KernelSequence, np.ndarray]:
    """``Q_j = Q^{(omega_j)}`` along an environment orbit; returns the chain and ``omega``."""
    ks = np.asarray(kernels, dtype=float)
    total = length + 2 * buffer
    omega = environment_orbit(orbit_spec, total, phase)
    chain = KernelSequence(_initial(initial, ks[omega[0]]), ks[omega], start=-buffer)
    return chain, omega


def random_doeblin_chain(
    d: int, length: int, floor: float = 0.15, seed: int = 0, buffer: int = 0,
    concentration: float = 1.0, initial="uniform",
) -> KernelSequence:
    """Independent Dirichlet kernels mixed with the uniform kernel (weight ``floor``)."""
    rng = np.random.default_rng(seed)
    total = length + 2 * buffer
    D = rng.dirichlet(np.full(d, concentration), size=(total, d))
    ker = (1 - floor) * D + floor / d
    ker = ker / ker.sum(axis=2, keepdims=True)
    return KernelSequence(_initial(initial, ker[0]), ker, start=-buffer)


def make_chain(spec: Mapping) -> KernelSequence:
    """Build a chain from a declarative generator record.

    Recognised ``kind`` values: ``homogeneous``, ``perturbed``, ``parry``,
    ``environment`` and ``random_doeblin``.  ``length`` is the exposed horizon
    ``N`` and ``buffer`` (default 64) extends the chain to ``[-B, N + B]``.
    """
    kind = spec.get("kind", "homogeneous")
    length = int(spec.get("length", 64))
    buffer = int(spec.get("buffer", DEFAULT_BUFFER))
    init = spec.get("initial", "stationary")
    if kind == "homogeneous":
        return homogeneous_chain(spec["Q"], length, init, buffer)
    if kind == "perturbed":
        return perturbed_chain(
            spec["Q"], float(spec.get("epsilon", 0.0)), length, int(spec.get("seed", 0)),
            init, buffer, spec.get("directions"),
        )
    if kind == "parry":
        Q, lam, _ = parry_kernel(spec["A"])
        ch = homogeneous_chain(Q, length, init, buffer)
        return KernelSequence(ch.initial_law, ch.kernels, ch.start, meta={"lambda_A": lam})
    if kind == "environment":
        ch, omega = environment_chain(
            spec["kernels"], spec.get("orbit", {"kind": "cyclic", "period": len(spec["kernels"])}),
            length, buffer, int(spec.get("phase", 0)), spec.get("initial", "uniform"),
        )
        return KernelSequence(ch.initial_law, ch.kernels, ch.start, meta={"omega": omega})
    if kind == "random_doeblin":
        return random_doeblin_chain(
            int(spec.get("d", 3)), length, float(spec.get("floor", 0.15)),
            int(spec.get("seed", 0)), buffer, float(spec.get("concentration", 1.0)),
            spec.get("initial", "uniform"),
        )
    raise ValueError(f"unknown chain kind {kind!r}")
