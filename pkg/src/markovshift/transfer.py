"""Sequential transfer operators and their exponential perturbations.

``L_j`` averages out the leftmost coordinate with the backward kernel ``B_j``,
mapping functions of ``(x_j, x_{j+1}, ...)`` to functions of
``(x_{j+1}, ...)``.  The perturbed operator is ``L_{j,z} h = L_j(e^{z g_j} h)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import KernelSequence, window_law
from .errors import BranchJump, HorizonExceeded, NoConvergence, UnstableStencil, ZeroMarginal
from .observable import ObservableSequence, WindowObservable, norm

DEFAULT_DELTA0 = 0.25


@dataclass(frozen=True, eq=False)
class TransferState:
    """Function of ``(x_j, ..., x_{j+w-1})`` as a dense (possibly complex) tensor."""

    j: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim < 1:
            raise ValueError("a transfer state has width at least 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("transfer state has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.ndim

    def extended(self, w: int) -> "TransferState":
        """Constant extension to width ``w`` (new trailing coordinates ignored)."""
        if w < self.width:
            raise ValueError("cannot shrink a state by extension")
        d = self.values.shape[0]
        v = self.values.reshape(self.values.shape + (1,) * (w - self.width))
        return TransferState(self.j, np.broadcast_to(v, (d,) * w).copy())

    def as_observable(self) -> WindowObservable:
        return WindowObservable(self.j, 0, self.width - 1, np.real_if_close(self.values).real)


def ones(j: int, d: int, w: int = 1) -> TransferState:
    return TransferState(j, np.ones((d,) * w))


def _backward(chain: KernelSequence, j: int, strict: bool) -> np.ndarray:
    bk = chain.backward
    if strict and bk.zero_states:
        for jj, x in bk.zero_states:
            if jj == j + 1:
                raise ZeroMarginal(jj, x)
    chain.check_window(j, j + 1)
    return bk.at(j)


def _L(B: np.ndarray, g: np.ndarray, W: int) -> np.ndarray:
    """Raw operator on trailing ``W`` state axes; output width ``max(W - 1, 1)``."""
    if W == 1:
        return g @ B.T
    d = B.shape[0]
    lead = g.shape[: g.ndim - W]
    gg = g.reshape(lead + (d, d, -1))
    out = np.einsum("ab,...bap->...ap", B, gg)
    return out.reshape(lead + (d,) * (W - 1))


def _adjoint(B: np.ndarray, nu: np.ndarray, E: np.ndarray, s: int, W: int) -> np.ndarray:
    """Weights of ``h -> nu(L(E h))`` for ``h`` of width ``s``; ``E`` has width ``W``."""
    if W == 1:
        return (nu @ B) * E
    d = B.shape[0]
    lead = nu.shape[: nu.ndim - s]
    # W = s + 1: weight[y, x1..x_{s-1}] = sum_{x_s} B[x1, y] nu[x1..x_s] E[y, x1..x_s]
    nu_r = nu.reshape(lead + (d, -1))
    E_r = E.reshape(E.shape[: E.ndim - W] + (d, d, -1))
    w = np.einsum("ab,...ap,...bap->...bap", B, nu_r, E_r)
    w = w.reshape(w.shape[:-3] + (d,) * W)
    return w.sum(axis=-1)


def apply(chain: KernelSequence, j: int, g: TransferState, width: int | None = None,
          strict: bool = True) -> TransferState:
    """``(L_j g)(x_{j+1}, ...) = sum_y B_j[x_{j+1}][y] g(y, x_{j+1}, ...)``.

    The output has width ``max(w - 1, 1)``; pass ``width`` to re-embed it by
    constant extension.
    """
    if g.j != j:
        raise ValueError(f"state based at {g.j}, operator at {j}")
    out = TransferState(j + 1, _L(_backward(chain, j, strict), g.values, g.width))
    return out.extended(width) if width is not None and width > out.width else out


@dataclass(frozen=True, eq=False)
class PerturbedOperator:
    """``L_{j,z}`` for a future-measurable observable ``g`` based at ``j``."""

    j: int
    z: complex
    g: WindowObservable

    def __post_init__(self):
        if self.g.l != 0:
            raise ValueError("perturbing observable must be future-measurable (l = 0)")
        if self.g.j != self.j:
            raise ValueError("observable index differs from operator index")


def state_width(g_width: int) -> int:
    """Width of the stabilized iteration space for an observable of width ``g_width``."""
    return max(g_width - 1, 1)


def _multiplier(table: np.ndarray, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    return np.exp(z.reshape(z.shape + (1,) * table.ndim) * table)


def _extend_raw(h: np.ndarray, s: int, W: int) -> np.ndarray:
    if W == s:
        return h
    return h.reshape(h.shape + (1,) * (W - s))


def apply_perturbed(chain: KernelSequence, op: PerturbedOperator, h: TransferState) -> TransferState:
    """``L_j(e^{z g_j} h)``; ``h`` has the stabilized width ``max(w_g - 1, 1)``."""
    w_g = op.g.width
    s = state_width(w_g)
    if h.width != s:
        if h.width < s:
            h = h.extended(s)
        else:
            raise ValueError(f"state width {h.width} exceeds stabilized width {s}")
    if h.j != op.j:
        raise ValueError("state and operator bases differ")
    W = w_g if w_g >= 2 else 1
    E = np.ones_like(op.g.table) if op.z == 0 else _multiplier(op.g.table, np.asarray(op.z))
    prod = E * _extend_raw(h.values, s, W)
    return TransferState(op.j + 1, _L(_backward(chain, op.j, True), prod, W))


def kappa(chain: KernelSequence, g: TransferState) -> complex:
    """``E[g(X_j, ..., X_{j+w-1})]``."""
    P = window_law(chain, g.j, g.j + g.width - 1)
    v = np.sum(P * g.values)
    return complex(v) if np.iscomplexobj(v) else float(v)


# ---------------------------------------------------------------------------
# characteristic functions


def _unwrap_from_zero(grid: np.ndarray, phase: np.ndarray, guard: float = np.pi / 2):
    """Continuous phase along ``grid`` (1-D, sorted) starting from the point closest to 0.

    Returns the unwrapped phase and a per-point flag; raises BranchJump when a
    step exceeds the half-period guard.
    """
    out = phase.copy()
    i0 = int(np.argmin(np.abs(grid)))
    out[i0] = phase[i0] - 2 * np.pi * np.round(phase[i0] / (2 * np.pi))
    for direction in (1, -1):
        i = i0
        while 0 <= i + direction < len(grid):
            k = i + direction
            step = phase[k] - out[i]
            step -= 2 * np.pi * np.round(step / (2 * np.pi))
            if abs(step) > guard:
                raise BranchJump(float(grid[k]), float(step))
            out[k] = out[i] + step
            i = k
    return out


@dataclass(frozen=True)
class CharTable:
    """``Lambda(t) = log E[e^{i t S}]`` on a grid, one row per recorded length ``n``."""

    t: np.ndarray
    n: np.ndarray
    values: np.ndarray
    branch_ok: np.ndarray

    def at(self, n: int) -> np.ndarray:
        return self.values[int(np.flatnonzero(self.n == n)[0])]


def _centered_tables(chain: KernelSequence, seq: ObservableSequence, j: int, n: int):
    tabs = np.asarray(seq.tables[j - seq.start: j - seq.start + n])
    means = np.array([np.sum(window_law(chain, k, k + seq.r) * tabs[i]) for i, k in enumerate(range(j, j + n))])
    return tabs - means.reshape((-1,) + (1,) * seq.width), means


def log_mgf(
    chain: KernelSequence,
    seq: ObservableSequence,
    z,
    j: int | None = None,
    n: int | None = None,
    record=None,
    guard: float = np.pi / 2,
):
    """Continuous ``log E[exp(z S_{j,n})]`` for a vector of complex ``z``.

    The pushed-forward function is renormalized at every step by its
    expectation, so the logarithm is accumulated from per-step ratios whose
    principal branches stay small.  A ratio with argument above ``guard`` (or
    vanishing) raises BranchJump.  Returns ``(records, values)`` with
    ``values[i, k]`` for length ``records[i]``.
    """
    if seq.l != 0:
        raise ValueError("observables must be future-measurable (l = 0)")
    j = seq.start if j is None else j
    n = seq.n if n is None else n
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    record = sorted(set(int(r) for r in record)) if record is not None else [n]
    d, w_g = seq.alphabet_size, seq.width
    s, W = state_width(w_g), (w_g if w_g >= 2 else 1)
    chain.check_window(j, j + n + s - 1)
    tabs, means = _centered_tables(chain, seq, j, n) if n else (None, np.zeros(0))
    cum_mean = np.concatenate([[0.0], np.cumsum(means)])
    h = np.ones((len(z),) + (d,) * s, dtype=complex)
    acc = np.zeros(len(z), dtype=complex)
    axes = tuple(range(1, s + 1))
    out = []
    if 0 in record:
        out.append(acc.copy())
    for i in range(n):
        k = j + i
        E = _multiplier(tabs[i], z)
        h = _L(_backward(chain, k, True), E * _extend_raw(h, s, W), W)
        c = np.sum(window_law(chain, k + 1, k + s) * h, axis=axes)
        bad = (c == 0) | (np.abs(np.angle(c)) > guard)
        if np.any(bad):
            b = int(np.flatnonzero(bad)[0])
            raise BranchJump(float(np.abs(z[b])), float(np.angle(c[b])) if c[b] != 0 else np.inf)
        acc = acc + np.log(c)
        h = h / c.reshape((-1,) + (1,) * s)
        if i + 1 in record:
            out.append(acc + z * cum_mean[i + 1])
    return np.array(record), np.array(out)


def charfn(
    chain: KernelSequence,
    seq: ObservableSequence,
    t_grid,
    j: int | None = None,
    n: int | None = None,
    record=None,
) -> CharTable:
    """Exact ``Lambda_{j,n}(t) = log E[e^{i t S_{j,n}}]`` on the branch with ``Lambda_{j,0} = 0``.

    The sum is centered internally and ``i t E S`` added back.  The branch is
    continued along the summation length; BranchJump signals a step whose
    phase exceeds the half-period guard.
    """
    t = np.asarray(t_grid, dtype=float)
    rec, vals = log_mgf(chain, seq, 1j * t, j, n, record)
    return CharTable(t, rec, vals, np.ones(vals.shape, dtype=bool))


# ---------------------------------------------------------------------------
# eigendata and pressure


@dataclass(frozen=True, eq=False)
class EigenTriple:
    """Sequential eigendata at index ``j`` for one value of ``z``."""

    j: int
    z: complex
    lam: complex
    h: TransferState
    nu: np.ndarray
    residuals: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class EigenSequence:
    """``lam[k, i]``, ``h[k, i]`` and ``nu[k, i]`` for ``k = lo .. hi + 1`` (``lam`` up to ``hi``)."""

    lo: int
    hi: int
    z: np.ndarray
    lam: np.ndarray
    h: np.ndarray
    nu: np.ndarray
    buffer: int
    means: np.ndarray


def _eigen_raw(chain, seq, z, lo, hi, buffer):
    """Forward normalized iteration and adjoint backward iteration on the centered family."""
    d, w_g = seq.alphabet_size, seq.width
    s, W = state_width(w_g), (w_g if w_g >= 2 else 1)
    a, b = lo - buffer, hi + 1 + buffer
    if a < seq.start or b > seq.stop or a < chain.horizon[0] or b + s - 1 > chain.horizon[1]:
        raise HorizonExceeded(a, b + s - 1, chain.horizon)
    tabs, means = _centered_tables(chain, seq, a, b - a)
    Z = len(z)
    axes = tuple(range(1, s + 1))
    grow = (lambda v: v.reshape(v.shape + (1,))) if W > s else (lambda v: v)
    v = np.ones((Z,) + (d,) * s, dtype=complex)
    H = np.empty((hi - lo + 2, Z) + (d,) * s, dtype=complex)
    for k in range(a, hi + 1):
        E = _multiplier(tabs[k - a], z)
        v = _L(chain.backward.at(k), E * grow(v), W)
        v = v / np.max(np.abs(v).reshape(Z, -1), axis=1).reshape((-1,) + (1,) * s)
        if k + 1 >= lo:
            H[k + 1 - lo] = v
    if lo == a:  # zero buffer: the start value itself sits at lo
        H[0] = 1.0
    nu = np.broadcast_to(window_law(chain, b, b + s - 1), (Z,) + (d,) * s).astype(complex)
    N = np.empty_like(H)
    if b <= hi + 1:
        N[b - lo] = nu
    for k in range(b - 1, lo - 1, -1):
        E = _multiplier(tabs[k - a], z)
        nu = _adjoint(chain.backward.at(k), nu, E, s, W)
        nu = nu / nu.sum(axis=axes).reshape((-1,) + (1,) * s)
        if k <= hi + 1:
            N[k - lo] = nu
    # normalizations nu(1) = nu(h) = 1 and lam_k = nu_{k+1}(L_{k,z} h_k)
    Hn = H / np.sum(N * H, axis=tuple(range(2, s + 2))).reshape(H.shape[:2] + (1,) * s)
    lam = np.empty((hi - lo + 1, Z), dtype=complex)
    for k in range(lo, hi + 1):
        E = _multiplier(tabs[k - a], z)
        Lh = _L(chain.backward.at(k), E * grow(Hn[k - lo]), W)
        lam[k - lo] = np.sum(N[k + 1 - lo] * Lh, axis=axes)
    return lam, Hn, N, means[lo - a: hi + 1 - a]


def _max_buffer(chain, seq, lo, hi) -> int:
    s = state_width(seq.width)
    left = lo - max(seq.start, chain.horizon[0])
    right = min(seq.stop - 1 - (hi + 1), chain.horizon[1] - s + 1 - (hi + 1))
    return max(min(left, right), 0)


def eigen_sequence(
    chain: KernelSequence,
    seq: ObservableSequence,
    z,
    lo: int,
    hi: int,
    buffer: int | None = None,
    tol: float = 1e-10,
    buffer_max: int = 2048,
) -> EigenSequence:
    """Eigendata of ``L_{k,z}`` for ``k = lo .. hi`` and every ``z``.

    The iteration runs on the centered family; the eigenvalues of the original
    family are ``exp(z E g_k)`` times those reported in ``lam`` (``means``
    holds ``E g_k``).  Convergence is judged by comparing buffer ``B`` with
    ``B / 2``.  With ``buffer=None`` the buffer doubles from 32 until the
    eigenvalues move by at most ``tol`` (limited by the available horizon).
    """
    if seq.l != 0:
        raise ValueError("observables must be future-measurable (l = 0)")
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    avail = min(_max_buffer(chain, seq, lo, hi), buffer_max)
    if buffer is not None:
        if buffer > avail:
            raise HorizonExceeded(lo - buffer, hi + 1 + buffer, chain.horizon)
        candidates = [buffer]
    else:
        candidates = [b for b in (32 * 2 ** k for k in range(12)) if b <= avail]
        if not candidates or candidates[-1] < avail:
            candidates.append(avail)
    prev = None
    gap = np.inf
    for B in candidates:
        half = _eigen_raw(chain, seq, z, lo, hi, B // 2) if prev is None else prev
        full = _eigen_raw(chain, seq, z, lo, hi, B)
        gap = float(np.max(np.abs(full[0] - half[0]))) if B >= 2 else 0.0
        if gap <= tol:
            lam, H, N, means = full
            return EigenSequence(lo, hi, z, lam, H, N, B, means)
        prev = full
    raise NoConvergence(f"eigenvalues moved by {gap:.3g} at buffer {candidates[-1]}")


def eigen_triple(
    chain: KernelSequence,
    seq: ObservableSequence,
    j: int,
    z: complex,
    buffer: int | None = None,
    tol: float = 1e-10,
    delta0: float = DEFAULT_DELTA0,
    n_test: int = 8,
    seed: int = 0,
) -> EigenTriple:
    """Sequential eigendata at index ``j`` with normalizations ``nu(1) = nu(h) = 1``."""
    if abs(z) > delta0:
        raise ValueError(f"|z| = {abs(z):.3g} exceeds the perturbation radius {delta0}")
    es = eigen_sequence(chain, seq, [z], j, j, buffer, tol)
    c = es.means[0]
    lam = complex(es.lam[0, 0] * np.exp(z * c))
    h, h1 = es.h[0, 0], es.h[1, 0]
    nu, nu1 = es.nu[0, 0], es.nu[1, 0]
    op = PerturbedOperator(j, z, seq.at(j))
    Lh = apply_perturbed(chain, op, TransferState(j, h)).values
    rng = np.random.default_rng(seed)
    dual = 0.0
    for _ in range(n_test):
        test = rng.standard_normal(h.shape)
        Lt = apply_perturbed(chain, op, TransferState(j, test)).values
        dual = max(dual, abs(np.sum(nu1 * Lt) - lam * np.sum(nu * test)))
    res = {
        "eigen": float(np.max(np.abs(Lh - lam * h1))),
        "dual": float(dual),
        "nu_one": float(abs(nu.sum() - 1)),
        "nu_h": float(abs(np.sum(nu * h) - 1)),
    }
    if max(res.values()) > max(tol, 1e-9) * max(1.0, abs(lam)):
        raise NoConvergence(f"eigen residuals {res} exceed tolerance")
    return EigenTriple(j, complex(z), lam, TransferState(j, h), nu, res)


@dataclass(frozen=True)
class PressureTable:
    """``Pi[k - lo, i]`` = tracked branch of ``log lam_k(z_i)``."""

    lo: int
    hi: int
    z: np.ndarray
    Pi: np.ndarray
    delta0: float

    def partial(self, j: int, n: int) -> np.ndarray:
        """``Pi_{j,n}(z) = sum_{l=j}^{j+n-1} Pi_l(z)``."""
        if j < self.lo or j + n - 1 > self.hi:
            raise HorizonExceeded(j, j + n - 1, (self.lo, self.hi))
        return self.Pi[j - self.lo: j - self.lo + n].sum(axis=0)

    def cumulative(self, j: int) -> np.ndarray:
        """Rows ``n = 1, 2, ...`` of ``Pi_{j,n}`` as a cumulative sum."""
        return np.cumsum(self.Pi[j - self.lo:], axis=0)


def pressure(
    chain: KernelSequence,
    seq: ObservableSequence,
    lo: int,
    hi: int,
    z_grid,
    buffer: int | None = None,
    tol: float = 1e-10,
    delta0: float | None = None,
) -> PressureTable:
    """Pressure branches along a grid through 0 (real or imaginary axis, or any 1-D path).

    Grid points with ``|z| > delta0`` are dropped; on NoConvergence the radius
    is halved until the remaining grid converges.
    """
    z = np.asarray(z_grid, dtype=complex)
    if not np.any(z == 0):
        raise ValueError("the z-grid must contain 0")
    radius = float(np.max(np.abs(z))) if delta0 is None else float(delta0)
    while True:
        zz = z[np.abs(z) <= radius + 1e-15]
        try:
            es = eigen_sequence(chain, seq, zz, lo, hi, buffer, tol)
            break
        except NoConvergence:
            radius /= 2
            if radius < 1e-6:
                raise
    # order the grid along its parametrization to unwrap from 0
    param = np.where(np.abs(zz.imag) > np.abs(zz.real), zz.imag, zz.real)
    order = np.argsort(param)
    Pi = np.empty(es.lam.shape, dtype=complex)
    for k in range(es.lam.shape[0]):
        lamk = es.lam[k][order]
        ph = _unwrap_from_zero(param[order], np.angle(lamk))
        val = np.log(np.abs(lamk)) + 1j * ph + zz[order] * es.means[k]
        Pi[k, order] = val
    return PressureTable(lo, hi, zz, Pi, radius)


# ---------------------------------------------------------------------------
# contraction curve


@dataclass(frozen=True)
class DecayCurve:
    n: np.ndarray
    norm: np.ndarray
    gamma_fit: float
    A: float
    fit_residual: float
    resolved: int  # leading points above the roundoff floor

    def dominated(self, rtol: float = 1e-9) -> bool:
        k = self.resolved
        return bool(np.all(self.norm[:k] <= self.A * self.gamma_fit ** self.n[:k] * (1 + rtol)))


def fit_geometric(n: np.ndarray, curve: np.ndarray, floor_rel: float = 1e-12):
    """Least-squares fit of ``log curve`` against ``n`` on the tail half of the resolved range.

    The resolved range ends at the first point below ``floor_rel * max(curve)``
    (roundoff floor).  Returns ``(gamma, A, rms_residual)`` with
    ``A = max curve_n / gamma^n`` over the resolved range.
    """
    n = np.asarray(n, dtype=float)
    c = np.asarray(curve, dtype=float)
    if c.size == 0 or np.max(c) <= 0:
        return 0.0, 0.0, 0.0, 0
    below = np.nonzero(c <= floor_rel * np.max(c))[0]
    m = int(below[0]) if below.size else c.size
    if m < 2:
        return 0.0, float(np.max(c)), 0.0, m
    nn, cc = n[:m], c[:m]
    sel = nn >= nn[0] + (nn[-1] - nn[0]) / 2
    if sel.sum() < 3:
        sel = np.ones(m, bool)
    slope, icpt = np.polyfit(nn[sel], np.log(cc[sel]), 1)
    resid = np.log(cc[sel]) - (slope * nn[sel] + icpt)
    gamma = float(np.exp(slope))
    A = float(np.max(cc / gamma ** nn))
    return gamma, A, float(np.sqrt(np.mean(resid ** 2))), m


def rpf_decay(
    chain: KernelSequence,
    g: TransferState,
    p: float = 2.0,
    delta: float = 0.5,
    n_max: int = 40,
) -> DecayCurve:
    """``n -> ||L_j^n g - kappa_j(g)||_{j+n,p,p,delta}`` for ``n = 1 .. n_max`` and its geometric fit."""
    if np.iscomplexobj(g.values) and np.any(np.imag(g.values) != 0):
        raise ValueError("decay curves are defined for real functions")
    mean = kappa(chain, g)
    h = TransferState(g.j, np.real(g.values))
    out = np.empty(n_max)
    for i in range(n_max):
        h = apply(chain, h.j, h)
        obs = WindowObservable(h.j, 0, h.width - 1, h.values - mean)
        out[i] = norm(obs, chain, p, p, delta).total
    ns = np.arange(1, n_max + 1)
    return DecayCurve(ns, out, *fit_geometric(ns, out))


# ---------------------------------------------------------------------------
# numerical derivatives


@dataclass(frozen=True)
class Derivative:
    value: complex
    error: float
    step: float


_STENCILS = {
    1: (np.array([-1, 1]), np.array([-0.5, 0.5])),
    2: (np.array([-1, 0, 1]), np.array([1.0, -2.0, 1.0])),
    3: (np.array([-2, -1, 1, 2]), np.array([-0.5, 1.0, -1.0, 0.5])),
    4: (np.array([-2, -1, 0, 1, 2]), np.array([1.0, -4.0, 6.0, -4.0, 1.0])),
}


def derivative(fn, k: int, t: float = 0.0, tol: float | None = None,
               h_max: float = 1e-2, h_min: float = 1e-4) -> Derivative:
    """Central differences of order ``k <= 4`` with one Richardson step.

    ``fn`` is called once with the array of all stencil points.  The error is
    estimated from successive step halvings; UnstableStencil is raised when
    the best estimate exceeds ``10 * tol`` (default ``1e-6 * max(1, |value|)``).
    """
    if k == 0:
        v = np.asarray(fn(np.array([t])))[0]
        return Derivative(v, 0.0, 0.0)
    if k not in _STENCILS:
        raise ValueError("derivative order must be between 0 and 4")
    offs, wts = _STENCILS[k]
    hs = []
    h = h_max
    while h >= h_min * (1 - 1e-12):
        hs.append(h)
        h /= 2
    hs = np.array(hs)
    pts = (t + hs[:, None] * offs[None, :]).ravel()
    vals = np.asarray(fn(pts)).reshape(len(hs), len(offs))
    D = (vals * wts).sum(axis=1) / hs ** k
    R = (4 * D[1:] - D[:-1]) / 3
    if len(R) < 2:
        err = np.abs(D[1:] - D[:-1])
        i = int(np.argmin(err))
        return Derivative(R[i], float(err[i]), float(hs[i]))
    err = np.abs(R[1:] - R[:-1])
    i = int(np.argmin(err))
    value, e = R[i], float(err[i])
    limit = tol if tol is not None else 1e-6 * max(1.0, abs(value))
    if e > 10 * limit:
        raise UnstableStencil(complex(value) if np.iscomplexobj(value) else float(value), e, limit)
    return Derivative(value, e, float(hs[i]))
