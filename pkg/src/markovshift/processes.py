"""Example processes realized as window observables with certified truncation errors.

Each constructor returns a :class:`ProcessObservable`: the observable family
at window radius ``r`` together with a bound ``tau(r)`` on the sup-norm
distance to the untruncated process and a builder for other radii so that the
bound can be compared with measured window-doubling discrepancies.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .chain import KernelSequence, environment_chain, psi_upper_one
from .errors import GammaCNotLessThanOne, NoContraction, NonPositiveMatrix, SplitLost, WindowTooLarge
from .observable import MAX_TABLE_ENTRIES, ObservableSequence


# ---------------------------------------------------------------------------
# cone geometry


def _positive(u, what="vector") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if not np.all(u > 0):
        raise NonPositiveMatrix(f"{what} must be strictly positive")
    return u


def hilbert_metric(u, v) -> float:
    """``log(max_i u_i/v_i * max_j v_j/u_j)`` on the positive orthant."""
    u, v = _positive(u), _positive(v)
    r = u / v
    return float(math.log(r.max() / r.min()))


def projective_diameter(A) -> float:
    """Diameter of ``A`` applied to the positive orthant: max Hilbert distance between columns."""
    A = _positive(A, "matrix")
    logA = np.log(A)
    # d(col_k, col_l) = max_i (logA_ik - logA_il) + max_j (logA_jl - logA_jk)
    D = logA[:, :, None] - logA[:, None, :]
    return float(np.max(D.max(axis=0) + D.max(axis=0).T))


def birkhoff_bound(A) -> float:
    """Contraction coefficient ``tanh(diam(A) / 4)`` of the Hilbert metric under ``A``."""
    return float(math.tanh(projective_diameter(A) / 4))


@dataclass(frozen=True)
class ConeGeometry:
    dimension: int

    def hilbert_metric(self, u, v) -> float:
        return hilbert_metric(u, v)

    def projective_diameter(self, A) -> float:
        return projective_diameter(A)

    def birkhoff_bound(self, A) -> float:
        return birkhoff_bound(A)


# ---------------------------------------------------------------------------
# process observables


@dataclass(frozen=True, eq=False)
class ProcessObservable:
    """Window-``r`` realization of a process.

    ``tau`` bounds ``sup |f_j - f_j^{(r)}|`` (``certified`` tells whether it is
    a proof-grade bound or an extrapolated measurement); ``rate`` is the
    geometric rate of ``tau``.  ``build(r')`` returns the family at another
    radius and ``tau_of(r')`` the matching bound.
    """

    family: str
    chain: KernelSequence
    observable: ObservableSequence
    radius: int
    tau: float
    rate: float
    certified: bool
    build: Callable[[int], ObservableSequence] = field(repr=False)
    tau_of: Callable[[int], float] = field(repr=False)
    meta: dict = field(default_factory=dict)

    def discrepancy(self, r: int | None = None, extra: int = 4) -> float:
        """``sup |f^{(r)} - f^{(r + extra)}|`` over all window tuples and indices."""
        r = self.radius if r is None else r
        a, b = self.build(r), self.build(r + extra)
        return sup_difference(a, b)


def sup_difference(a: ObservableSequence, b: ObservableSequence) -> float:
    """``max_j sup |a_j - b_j|`` over the common index range, on the union window."""
    l, r = max(a.l, b.l), max(a.r, b.r)
    best = 0.0
    for j in range(max(a.start, b.start), min(a.stop, b.stop)):
        diff = a.at(j).embed(j - l, j + r) - b.at(j).embed(j - l, j + r)
        best = max(best, float(np.max(np.abs(diff))))
    return best


def _check_entries(d: int, width: int) -> None:
    if d ** width > MAX_TABLE_ENTRIES:
        raise WindowTooLarge(f"window table {d}^{width} exceeds {MAX_TABLE_ENTRIES} entries")


def _family(table: np.ndarray, l: int, r: int, chain: KernelSequence, n: int | None, start: int | None):
    start = chain.horizon[0] + l if start is None else start
    n = (chain.horizon[1] - r) - start + 1 if n is None else n
    tabs = np.broadcast_to(table, (n,) + table.shape)
    return ObservableSequence(l, r, tabs, start)


def default_radius(target: float, rate: float, cap: int) -> int:
    """``ceil(log(target) / log(rate))`` clipped to ``[0, cap]``."""
    if rate <= 0:
        return 0
    if rate >= 1:
        return cap
    return int(min(max(math.ceil(math.log(target) / math.log(rate)), 0), cap))


def _cap(d: int, per_radius: int) -> int:
    return max(int(math.log(MAX_TABLE_ENTRIES) / math.log(max(d, 2))) // per_radius - 1, 0)


# ---------------------------------------------------------------------------
# random matrix products


def _is_scalar_family(mats: np.ndarray) -> bool:
    k = mats.shape[1]
    eye = np.eye(k)
    return all(np.allclose(M, M[0, 0] * eye) and M[0, 0] > 0 for M in mats)


def matprod_table(mats: np.ndarray, r: int) -> np.ndarray:
    """``f(x_0, ..., x_r) = log(w A(x_0) 1)`` with ``w`` the normalized row vector ``1 A(x_r) ... A(x_1)``."""
    d, k = mats.shape[0], mats.shape[1]
    _check_entries(d, r + 1)
    w = np.full((1, k), 1.0 / k)  # flattened over (x_1..x_m)
    for _ in range(r):
        # prepend a new leftmost coordinate: w[x_new, rest] = w[rest] @ A(x_new)
        new = np.einsum("sk,xkl->xsl", w, mats).reshape(-1, k)
        w = new / new.sum(axis=1, keepdims=True)
    growth = np.einsum("sk,xkl->xs", w, mats)  # [x_0, rest]
    return np.log(growth).reshape((d,) * (r + 1))


def matprod_process(
    matrices,
    chain: KernelSequence,
    r: int | None = None,
    n: int | None = None,
    start: int | None = None,
    target: float = 1e-8,
) -> ProcessObservable:
    """Growth increments of ``A(X_{n-1}) ... A(X_0)`` as a forward window observable.

    ``f_j`` is the log of the one-step growth of the row vector obtained by
    applying the next ``r`` matrices to the uniform direction, so that
    ``sum_j f_j`` telescopes to ``log ||1 A(X_{n-1}) ... A(X_0)||_1 - log k``
    up to the truncation.  With all ``A(x)`` strictly positive the error is at
    most ``D t^{r-1}`` for ``r >= 1`` with ``D`` the largest projective diameter
    and ``t`` the largest Birkhoff coefficient.  Scalar multiples of the
    identity are accepted and give ``f_j = log c(x_j)`` at radius 0.
    """
    mats = np.asarray(matrices, dtype=float)
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise ValueError("matrices must have shape (states, k, k)")
    if mats.shape[0] != chain.alphabet_size:
        raise ValueError("one matrix per chain state is required")
    if _is_scalar_family(mats):
        logc = np.log(mats[:, 0, 0])

        def build_scalar(rr: int) -> ObservableSequence:
            tab = np.broadcast_to(logc.reshape((-1,) + (1,) * rr), (len(logc),) * (rr + 1))
            return _family(np.array(tab), 0, rr, chain, n, start)

        return ProcessObservable("matprod", chain, build_scalar(0), 0, 0.0, 0.0, True, build_scalar,
                                 lambda rr: 0.0, {"scalar": True})
    if not np.all(mats > 0):
        raise NonPositiveMatrix("matrix products need strictly positive matrices")
    D = max(projective_diameter(M) for M in mats)
    t = max(birkhoff_bound(M) for M in mats)

    def tau_of(rr: int) -> float:
        if rr == 0:
            # the true direction lies in the convex hull of the rows of some A(x)
            return float(max(max(hilbert_metric(np.ones(M.shape[0]), row) for row in M) for M in mats))
        return float(D * t ** (rr - 1))

    if r is None:
        r = 1 + default_radius(target / max(D, 1e-300), t, _cap(mats.shape[0], 1))

    def build(rr: int) -> ObservableSequence:
        return _family(matprod_table(mats, rr), 0, rr, chain, n, start)

    return ProcessObservable("matprod", chain, build(r), r, tau_of(r), t, True, build, tau_of,
                             {"diameter": D, "birkhoff": t})


def log_norm_path(matrices, path: np.ndarray) -> np.ndarray:
    """``log ||1 A(x_{n-1}) ... A(x_0)||_1 - log k`` for ``n = 1 .. len(path)`` along one path."""
    mats = np.asarray(matrices, dtype=float)
    k = mats.shape[1]
    out = np.empty(len(path))
    v = np.full(k, 1.0 / k)  # A(x_{n-1}) ... A(x_0) 1 / k, renormalized each step
    acc = 0.0
    for i, x in enumerate(path):
        v = mats[x] @ v
        s = v.sum()
        acc += math.log(s)
        v = v / s
        out[i] = acc
    return out


def lyapunov_exponent(A, n_iter: int = 2000) -> float:
    """Top Lyapunov exponent of the constant product ``A^n`` by power iteration."""
    A = np.asarray(A, dtype=float)
    v = np.ones(A.shape[0]) / math.sqrt(A.shape[0])
    for _ in range(n_iter):
        v = A @ v
        s = np.linalg.norm(v)
        v /= s
    return float(math.log(np.linalg.norm(A @ v)))


# ---------------------------------------------------------------------------
# iterated random functions


def product_moment_check(
    chain: KernelSequence,
    L_values,
    p: float,
    m_max: int = 6,
    indices: Sequence[int] | None = None,
) -> dict:
    """Exact check of ``E prod_{j=k-m+1}^k L(X_j)^p <= (beta^p (1 + psi_U(1)))^m`` for ``m <= m_max``.

    ``beta = sup_j ||L(X_j)||_{L^p}``; products are computed by exact path
    sums.  Returns the measured products, the bound and the worst ratio.
    """
    L = np.asarray(L_values, dtype=float)
    a0, b0 = chain.horizon
    beta = max(float(np.sum(chain.law(j) * np.abs(L) ** p) ** (1 / p)) for j in range(a0, b0 + 1))
    psi = psi_upper_one(chain)
    eps = beta ** p * (1 + psi)
    Lp = np.abs(L) ** p
    if indices is None:
        indices = range(a0 + m_max - 1, b0 + 1)
    worst = 0.0
    rows = []
    for k in indices:
        for m in range(1, m_max + 1):
            lo = k - m + 1
            if lo < a0:
                continue
            v = chain.law(lo) * Lp
            for j in range(lo, k):
                v = (v @ chain.kernel(j)) * Lp
            val = float(v.sum())
            bound = eps ** m
            rows.append((k, m, val, bound))
            worst = max(worst, val / bound if bound > 0 else np.inf)
    return {"beta": beta, "psi_U": psi, "epsilon": eps, "rows": rows, "worst_ratio": worst,
            "holds": bool(worst <= 1 + 1e-12)}


def _affine_maps(spec: Mapping, d: int):
    a = np.broadcast_to(np.asarray(spec.get("a", 0.0), dtype=float), (d,)).copy()
    b = np.broadcast_to(np.asarray(spec.get("b", 0.0), dtype=float), (d,)).copy()
    return (lambda y, x: a[x] * y + b[x]), np.abs(a)


def iterfn_table(G: Callable, d: int, y0: float, r: int) -> np.ndarray:
    """``Y^{(r)}(x_{-r}, ..., x_0) = G(., x_0) o ... o G(., x_{-r})(y0)`` on all tuples."""
    _check_entries(d, r + 1)
    grids = np.indices((d,) * (r + 1)).reshape(r + 1, -1)
    y = np.full(grids.shape[1], float(y0))
    for i in range(r + 1):
        y = G(y, grids[i])
    return y.reshape((d,) * (r + 1))


def iterfn_process(
    maps: Mapping | Callable,
    chain: KernelSequence,
    y0: float = 0.0,
    r: int | None = None,
    lipschitz=None,
    p: float = 2.0,
    n: int | None = None,
    start: int | None = None,
    target: float = 1e-8,
) -> ProcessObservable:
    """``Y_k = G(Y_{k-1}, X_k)`` iterated from ``y0`` placed ``r + 1`` steps back.

    ``maps`` is an affine record ``{"a": [...], "b": [...]}`` (``G(y, x) = a(x) y
    + b(x)``) or a vectorized callable ``G(y, x)`` together with per-state
    Lipschitz constants.  With ``Lbar = max L(x) < 1`` the truncation error is
    at most ``Lbar^{r+1} C0 / (1 - Lbar)``, ``C0 = max_x |G(y0, x) - y0|``.
    Otherwise the product condition of the moment lemma is checked; when it
    holds the same form with ``delta = (beta^p (1 + psi_U))^{1/p}`` estimates
    the ``L^p`` error (reported as not certified).  NoContraction is raised when both
    fail and exact ``L^p`` products over 12 steps do not contract either.
    """
    d = chain.alphabet_size
    if callable(maps):
        G = maps
        if lipschitz is None:
            raise ValueError("callable maps need per-state Lipschitz constants")
        L = np.broadcast_to(np.asarray(lipschitz, dtype=float), (d,))
    else:
        G, L = _affine_maps(maps, d)
        if lipschitz is not None:
            L = np.broadcast_to(np.asarray(lipschitz, dtype=float), (d,))
    states = np.arange(d)
    C0 = float(np.max(np.abs(G(np.full(d, float(y0)), states) - y0)))
    Lbar = float(L.max())
    meta = {"lipschitz_max": Lbar, "C0": C0}
    if Lbar < 1:
        delta, norm_kind = Lbar, "sup"
    else:
        pl = product_moment_check(chain, L, p, m_max=1, indices=[chain.horizon[0]])
        meta["product_moment"] = {k: pl[k] for k in ("beta", "psi_U", "epsilon")}
        if pl["epsilon"] < 1:
            delta, norm_kind = pl["epsilon"] ** (1 / p), f"L^{p:g}"
        else:
            prods = product_moment_check(chain, L, p, m_max=12, indices=[chain.horizon[0] + 12])["rows"]
            vals = np.array([row[2] for row in prods])
            if not (vals[-1] < vals[0] and vals[-1] ** (1 / 12) < 1):
                raise NoContraction("Lipschitz products do not contract")
            delta, norm_kind = float(vals[-1] ** (1 / (12 * p))), f"L^{p:g} (fitted)"
    meta["norm"] = norm_kind
    certified = norm_kind == "sup"
    const = C0 / (1 - delta) if delta < 1 else np.inf

    def tau_of(rr: int) -> float:
        return float(delta ** (rr + 1) * const)

    if r is None:
        r = default_radius(target / max(const, 1e-300), delta, _cap(d, 1)) if delta > 0 else 0

    def build(rr: int) -> ObservableSequence:
        if delta == 0 and rr == 0:
            tab = G(np.full(d, float(y0)), states)
            return _family(np.asarray(tab, float), 0, 0, chain, n, start)
        return _family(iterfn_table(G, d, y0, rr), rr, 0, chain, n, start)

    return ProcessObservable("iterfn", chain, build(r), r, tau_of(r), delta, certified, build, tau_of, meta)


# ---------------------------------------------------------------------------
# linear processes


def _coefficients(spec, r_needed: int):
    """Two-sided coefficient function ``k -> a_k`` and its tail sum beyond ``r``."""
    if isinstance(spec, Mapping):
        C, delta = float(spec.get("C", 1.0)), float(spec["delta"])
        if not 0 <= delta < 1:
            raise ValueError("coefficient decay rate must lie in [0, 1)")
        coef = lambda k: C * delta ** abs(k)  # noqa: E731
        tail = lambda r: 2 * C * delta ** (r + 1) / (1 - delta)  # noqa: E731
        return coef, tail, (C, delta)
    arr = np.asarray(spec, dtype=float)
    K = (len(arr) - 1) // 2
    if len(arr) != 2 * K + 1:
        raise ValueError("explicit coefficients need odd length (indices -K..K)")
    coef = lambda k: float(arr[k + K]) if abs(k) <= K else 0.0  # noqa: E731
    tail = lambda r: float(np.sum(np.abs(arr))) - float(np.sum(np.abs(arr[max(K - r, 0): K + r + 1])))  # noqa: E731
    ks = np.arange(-K, K + 1)
    nz = np.abs(arr) > 0
    if nz.sum() >= 2 and np.any(ks[nz] != 0):
        slope = np.polyfit(np.abs(ks[nz]), np.log(np.abs(arr[nz])), 1)[0]
        delta = float(min(math.exp(slope), 1.0))
        C = float(np.max(np.abs(arr[nz]) / delta ** np.abs(ks[nz])))
    else:
        C, delta = float(np.max(np.abs(arr))) if arr.size else 0.0, 0.0
    return coef, tail, (C, delta)


def linear_process(
    coefficients,
    g_values,
    chain: KernelSequence,
    r: int | None = None,
    n: int | None = None,
    start: int | None = None,
    target: float = 1e-8,
) -> ProcessObservable:
    """``f_j = sum_{|k| <= r} a_k g(x_{j-k})`` with ``tau(r) = sup|g| sum_{|k| > r} |a_k|``.

    ``coefficients`` is either ``{"C": C, "delta": delta}`` for
    ``a_k = C delta^{|k|}`` or an explicit array over ``k = -K .. K``.
    """
    d = chain.alphabet_size
    g = np.broadcast_to(np.asarray(g_values, dtype=float), (d,))
    coef, tail, (C, delta) = _coefficients(coefficients, 0)
    gsup = float(np.max(np.abs(g)))

    def tau_of(rr: int) -> float:
        return float(gsup * tail(rr))

    if r is None:
        r = default_radius(target / max(2 * C * gsup, 1e-300), delta, _cap(d, 2)) if delta > 0 else 0
        if not isinstance(coefficients, Mapping):
            r = min(r, (len(np.asarray(coefficients)) - 1) // 2)

    def build(rr: int) -> ObservableSequence:
        _check_entries(d, 2 * rr + 1)
        tab = np.zeros((d,) * (2 * rr + 1))
        for k in range(-rr, rr + 1):
            shape = [1] * (2 * rr + 1)
            shape[rr - k] = d
            tab = tab + coef(k) * g.reshape(shape)
        return _family(tab, rr, rr, chain, n, start)

    return ProcessObservable("linear", chain, build(r), r, tau_of(r), delta, True, build, tau_of,
                             {"C": C, "delta": delta})


# ---------------------------------------------------------------------------
# GARCH


def gamma_c(alpha, beta, values, chain: KernelSequence) -> float:
    """``sum_i sup_j ||alpha_i + beta_i X_j^2||_{L^2}`` under the chain marginals."""
    a0, b0 = chain.horizon
    x2 = np.asarray(values, float) ** 2
    tot = 0.0
    for ai, bi in zip(alpha, beta):
        tot += max(float(np.sqrt(np.sum(chain.law(j) * (ai + bi * x2) ** 2))) for j in range(a0, b0 + 1))
    return tot


def garch_table(mu, alpha, beta, values, r: int) -> np.ndarray:
    """``Y^{(r)}(x_{-r}, ..., x_0) = X_0 sqrt(mu sum_{t <= r} V(t))`` with ``V(t) = sum_i V(t-i) c_i(x_{-t})``."""
    x = np.asarray(values, float)
    d = len(x)
    q = len(alpha)
    _check_entries(d, r + 1)
    grids = np.indices((d,) * (r + 1)).reshape(r + 1, -1)  # grids[i] = x_{i - r}
    c = [np.asarray(alpha[i]) + np.asarray(beta[i]) * x ** 2 for i in range(q)]
    V = [np.ones(grids.shape[1])]
    for t in range(1, r + 1):
        xt = grids[r - t]
        acc = np.zeros(grids.shape[1])
        for i in range(1, min(q, t) + 1):
            acc = acc + V[t - i] * c[i - 1][xt]
        V.append(acc)
    L2 = mu * np.sum(V, axis=0)
    Y = x[grids[r]] * np.sqrt(L2)
    return Y.reshape((d,) * (r + 1))


def garch_process(
    mu: float,
    alpha,
    beta,
    values,
    chain: KernelSequence,
    r: int | None = None,
    n: int | None = None,
    start: int | None = None,
    target: float = 1e-8,
) -> ProcessObservable:
    """GARCH observable ``Y_k = X_k L_k`` from the truncated Volterra expansion of ``L_k^2``.

    The recursion is ``L_k^2 = mu + sum_i (alpha_i + beta_i X_{k-i}^2) L_{k-i}^2``
    (``alpha`` and ``beta`` padded to a common order).  ``X_k`` takes the
    real codes ``values`` of the chain states, recentered to mean zero under
    the averaged marginal when needed.  The sup-norm truncation bound uses
    ``c_i = max_x |alpha_i + beta_i x^2|``: ``tau(r) = max|x| sqrt(mu) T(r) / 2``
    with ``T(r)`` the exact tail of the majorant series.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    alpha = list(np.atleast_1d(np.asarray(alpha, float)))
    beta = list(np.atleast_1d(np.asarray(beta, float)))
    if min(alpha + beta + [0.0]) < 0:
        raise ValueError("GARCH coefficients must be nonnegative")
    q = max(len(alpha), len(beta))
    alpha += [0.0] * (q - len(alpha))
    beta += [0.0] * (q - len(beta))
    x = np.asarray(values, float).copy()
    if len(x) != chain.alphabet_size:
        raise ValueError("one real code per chain state is required")
    a0, b0 = chain.horizon
    avg = np.mean([chain.law(j) for j in range(a0, b0 + 1)], axis=0)
    m = float(np.sum(avg * x))
    meta = {}
    if abs(m) > 1e-12:
        warnings.warn(f"state codes recentered by {m:.6g} to have mean zero")
        x = x - m
        meta["recentered_by"] = m
    gC = gamma_c(alpha, beta, x, chain)
    meta["gamma_C"] = gC
    if gC >= 1:
        raise GammaCNotLessThanOne(gC)
    cbar = np.array([abs(a) + abs(b) * float(np.max(x ** 2)) for a, b in zip(alpha, beta)])
    g_sup = float(cbar.sum())
    meta["gamma_sup"] = g_sup
    xmax = float(np.max(np.abs(x)))
    certified = g_sup < 1

    def majorant(R: int) -> np.ndarray:
        V = [1.0]
        for t in range(1, R + 1):
            V.append(sum(V[t - i] * cbar[i - 1] for i in range(1, min(q, t) + 1)))
        return np.array(V)

    if certified:
        total = 1.0 / (1.0 - g_sup) if g_sup > 0 else 1.0
        rate = _majorant_rate(cbar)

        def tau_of(rr: int) -> float:
            if g_sup == 0:
                return 0.0
            tail = max(total - float(majorant(rr).sum()), 0.0)
            return float(xmax * math.sqrt(mu) * tail / 2)
    else:
        rate = gC

        def tau_of(rr: int) -> float:
            return np.inf

    if r is None:
        if g_sup == 0:
            r = 0
        else:
            r = default_radius(target / max(xmax * math.sqrt(mu), 1e-300), rate, _cap(len(x), 1))

    def build(rr: int) -> ObservableSequence:
        if rr == 0:
            return _family(x * math.sqrt(mu), 0, 0, chain, n, start)
        return _family(garch_table(mu, alpha, beta, x, rr), rr, 0, chain, n, start)

    meta["values"] = x
    return ProcessObservable("garch", chain, build(r), r, tau_of(r), rate, certified, build, tau_of, meta)


def _majorant_rate(cbar: np.ndarray) -> float:
    """Root in (0, 1) of ``sum_i cbar_i s^{-i} = 1`` (growth rate of the majorant series)."""
    if cbar.sum() == 0:
        return 0.0
    coeffs = np.concatenate([[1.0], -cbar])  # s^q - sum c_i s^{q-i}
    roots = np.roots(coeffs)
    return float(np.max(np.abs(roots)))


# ---------------------------------------------------------------------------
# sequential Lyapunov data of perturbed hyperbolic matrices


def _split(A: np.ndarray):
    w, V = np.linalg.eig(A)
    if np.any(np.abs(w.imag) > 1e-12):
        raise SplitLost("base matrix has complex eigenvalues")
    w, V = w.real, V.real
    order = np.argsort(-np.abs(w))
    return w[order], V[:, order]


def lyapunov_table(A: np.ndarray, perts: np.ndarray, eps: float, r: int, index: int = 0):
    """``log|lambda_j|`` along the unstable (``index = 0``) or stable (``index = 1``) direction.

    The unstable direction at ``j`` pushes the eigenvector of ``A`` through
    ``A_{j-1}, ..., A_{j-r}``, the stable one pulls it back through
    ``A_j^{-1}, ..., A_{j+r}^{-1}``; ``lambda_j`` is the scaling of ``A_j`` on it.
    """
    w, V = _split(A)
    mats = A[None] + eps * perts
    d = mats.shape[0]
    _check_entries(d, r + 1)
    grids = np.indices((d,) * (r + 1)).reshape(r + 1, -1)
    N = grids.shape[1]
    if index == 0:
        # tuple (x_{j-r}, ..., x_j)
        h = np.broadcast_to(V[:, 0], (N, 2)).copy()
        for i in range(r):
            h = np.einsum("nab,nb->na", mats[grids[i]], h)
            h /= np.linalg.norm(h, axis=1, keepdims=True)
        out = np.einsum("nab,nb->na", mats[grids[r]], h)
        lam = np.linalg.norm(out, axis=1)
    else:
        inv = np.linalg.inv(mats)
        # tuple (x_j, ..., x_{j+r})
        h = np.broadcast_to(V[:, 1], (N, 2)).copy()
        for i in range(r, 0, -1):
            h = np.einsum("nab,nb->na", inv[grids[i]], h)
            h /= np.linalg.norm(h, axis=1, keepdims=True)
        g = np.einsum("nab,nb->na", inv[grids[0]], h)
        lam = 1.0 / np.linalg.norm(g, axis=1)
    return np.log(lam).reshape((d,) * (r + 1))


def lyapunov_process(
    A,
    perturbations,
    eps: float,
    chain: KernelSequence,
    r: int = 8,
    index: int = 0,
    n: int | None = None,
    start: int | None = None,
) -> ProcessObservable:
    """``f_j = log|lambda_{j,i}|`` for ``A_j = A + eps P(X_j)`` with ``||P(x)|| <= 1``.

    Raises SplitLost when ``eps`` is not below a tenth of the eigenvalue gap
    of ``A`` or some ``A(x)`` loses the real split.  ``tau(r)`` is measured
    from the comparison at radii ``r`` and ``r + 4`` and extrapolated
    geometrically (not certified).
    """
    A = np.asarray(A, float)
    perts = np.asarray(perturbations, float)
    if perts.ndim == 2:
        perts = np.broadcast_to(perts, (chain.alphabet_size,) + perts.shape)
    if perts.shape[0] != chain.alphabet_size:
        raise ValueError("one perturbation per chain state is required")
    scale = max(float(np.linalg.norm(P, 2)) for P in perts) if perts.size else 0.0
    if scale > 1 + 1e-12:
        perts = perts / scale
    w, _ = _split(A)
    if not (abs(w[0]) > 1 > abs(w[1])):
        raise SplitLost("base eigenvalues are not split by 1")
    gap = abs(w[0]) - abs(w[1])
    if eps > 0 and gap < 10 * eps:
        raise SplitLost(f"eigenvalue gap {gap:.3g} below 10 eps")
    for P in perts:
        wx, _ = _split(A + eps * P)
        if abs(wx[0]) - abs(wx[1]) < 10 * eps:
            raise SplitLost("perturbed matrix lost the eigenvalue split")
    l_of = (lambda rr: (rr, 0)) if index == 0 else (lambda rr: (0, rr))
    if eps == 0:
        val = math.log(abs(w[index]))
        tab = np.full(chain.alphabet_size, val)
        build = lambda rr: _family(np.full((chain.alphabet_size,) * (rr + 1), val), *l_of(rr), chain, n, start)  # noqa: E731
        return ProcessObservable("lyapunov", chain, _family(tab, 0, 0, chain, n, start), 0, 0.0, 0.0, True,
                                 build, lambda rr: 0.0, {"eigenvalues": w})

    def build(rr: int) -> ObservableSequence:
        return _family(lyapunov_table(A, perts, eps, rr, index), *l_of(rr), chain, n, start)

    def measured(rr: int) -> float:
        return _table_gap(lyapunov_table(A, perts, eps, rr, index), lyapunov_table(A, perts, eps, rr + 4, index),
                          index)

    d_r = measured(r)
    d_r4 = measured(r + 4) if r + 8 <= _cap(chain.alphabet_size, 1) + 1 else None
    theta = (d_r4 / d_r) ** 0.25 if (d_r4 is not None and d_r > 0) else abs(w[1] / w[0])
    theta = min(theta, 0.999)

    def tau_of(rr: int) -> float:
        return float(d_r * theta ** (rr - r) / (1 - theta ** 4))

    return ProcessObservable("lyapunov", chain, build(r), r, tau_of(r), theta, False, build, tau_of,
                             {"eigenvalues": w, "measured": d_r})


def _table_gap(small: np.ndarray, big: np.ndarray, index: int) -> float:
    extra = big.ndim - small.ndim
    if index == 0:  # past windows: the extra coordinates are the oldest (leading axes)
        s = small.reshape((1,) * extra + small.shape)
    else:  # future windows: extra coordinates at the end
        s = small.reshape(small.shape + (1,) * extra)
    return float(np.max(np.abs(big - s)))


# ---------------------------------------------------------------------------
# random dynamical systems


@dataclass(frozen=True, eq=False)
class RDSProcess:
    chain: KernelSequence
    family: ObservableSequence
    omega: np.ndarray
    phase: int


def rds_process(
    environment: Mapping,
    kernels,
    observables,
    length: int,
    phase: int = 0,
    buffer: int = 64,
    l: int = 0,
    r: int = 0,
    coboundary=None,
    initial="uniform",
) -> RDSProcess:
    """Chain ``Q_j = Q^{(omega_j)}`` with ``f_j = f^{(omega_j)}`` along an environment orbit.

    ``observables[w]`` is the window table for environment ``w``.  Passing
    ``coboundary`` (one state function ``H^{(w)}`` per environment) instead
    builds ``f_j = H^{(omega_{j+1})}(x_{j+1}) - H^{(omega_j)}(x_j)``.
    """
    chain, omega = environment_chain(kernels, environment, length, buffer, phase, initial)
    a0 = chain.start
    # omega covers indices start .. horizon[1] - 1; a coboundary also reads omega_{j+1}
    top = chain.horizon[1] - (2 if coboundary is not None else max(r, 1))
    js = np.arange(chain.horizon[0] + l, top + 1)
    if coboundary is not None:
        H = np.asarray(coboundary, float)
        w_now, w_next = omega[js - a0], omega[js + 1 - a0]
        tabs = H[w_next][:, None, :] - H[w_now][:, :, None]
        fam = ObservableSequence(0, 1, tabs, int(js[0]))
    else:
        obs = np.asarray(observables, float)
        fam = ObservableSequence(l, r, obs[omega[js - a0]], int(js[0]))
    return RDSProcess(chain, fam, omega, phase)
