"""Sinai reduction, martingale-coboundary decomposition and the variance dichotomy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._engine import moment_curve
from .chain import KernelSequence, window_law
from .errors import Inconclusive
from .observable import (
    ObservableSequence,
    WindowObservable,
    condition,
    expectation,
    from_observables,
    lp_norm,
    norm,
)
from .transfer import TransferState, _L, rpf_decay, state_width

EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# Sinai reduction


@dataclass(frozen=True, eq=False)
class SinaiDecomposition:
    """``f_j = u_{j+1} o T - u_j + g_j`` with ``g_j`` future-measurable."""

    j: int
    g: WindowObservable
    u: WindowObservable
    truncation_terms: int
    residual: float
    tail_bound: float


def _future(f: WindowObservable, chain: KernelSequence, a: int) -> WindowObservable:
    return condition(f, chain, a, np.inf)


def _zero(j: int, d: int) -> WindowObservable:
    return WindowObservable(j, 0, 0, np.zeros(d))


def sinai_one(fam: ObservableSequence, chain: KernelSequence, j: int, M_terms: int) -> tuple:
    """``(g_j, u_j)`` from the truncated conditional-expectation series."""
    d = fam.alphabet_size
    terms = min(M_terms, fam.l)
    g = _future(fam.at(j), chain, j)
    for k in range(1, terms + 1):
        f = fam.at(j + k)
        g = g + (_future(f, chain, j) - _future(f, chain, j + 1))
    u = _zero(j, d)
    for k in range(0, terms):
        f = fam.at(j + k)
        u = u + (_future(f, chain, j) - f)
    return g.rebased(j, max(g.hi, j), j), u


def sinai(
    fam: ObservableSequence,
    chain: KernelSequence,
    M_terms: int = 40,
    delta: float = 0.5,
    b: float = 2.0,
) -> list[SinaiDecomposition]:
    """Sinai reduction for every index whose series terms lie in the family.

    Terms of the series beyond the left window radius vanish identically, so
    ``M_terms >= l`` gives an exact decomposition.  The reported tail bound is
    ``2 v delta^M / (1 - delta)`` with ``v`` the largest approximation
    coefficient of the family.
    """
    v = max(norm(f, chain, b, b, delta).v_coeff for f in fam) if fam.l else 0.0
    bound = 2 * v * delta ** M_terms / (1 - delta)
    out = []
    last = fam.stop - 1 - fam.l
    cache = {}

    def get(j):
        if j not in cache:
            cache[j] = sinai_one(fam, chain, j, M_terms)
        return cache[j]

    for j in range(fam.start, last):
        g, u = get(j)
        _, u1 = get(j + 1)
        rem = fam.at(j) - (u1 - u + g)
        res = lp_norm(rem, chain, 2.0)
        out.append(SinaiDecomposition(j, g, u, min(M_terms, fam.l), res, bound))
    return out


def future_part(decomps: list[SinaiDecomposition]) -> ObservableSequence:
    """Stack the ``g_j`` of a Sinai reduction into a future-measurable family."""
    r = max(dc.g.r for dc in decomps)
    obs = [dc.g.rebased(dc.j, dc.j + r, dc.j) for dc in decomps]
    return from_observables(obs)


# ---------------------------------------------------------------------------
# martingale-coboundary decomposition


@dataclass(frozen=True, eq=False)
class MartingaleDecomposition:
    """``g_j - E g_j = M_j + h_j - h_{j+1} o T_j``.

    ``M`` holds ``M_j`` for ``j = start .. stop - 1``; ``h`` holds ``h_j`` for
    ``j = start .. stop``.  ``K`` is the series truncation (``None`` for the
    exact recursion) and ``tail_bound`` certifies
    ``sup_j ||E[M_j | F_{j+1,inf}]||_inf``.  ``gamma`` and ``A`` are the
    fitted sup-norm contraction rate and prefactor, kept for reference.
    """

    means: np.ndarray
    M: ObservableSequence
    h: ObservableSequence
    K: int | None
    tail_bound: float
    gamma: float
    A: float
    g_tilde: ObservableSequence
    notes: tuple = field(default_factory=tuple)


def _contraction_fit(chain, gt: ObservableSequence, n_max: int = 40):
    """Envelope ``(gamma, A)`` of sup-norm decay curves for a few sample indices."""
    picks = sorted({gt.start, gt.start + gt.n // 2, gt.stop - 1})
    gamma, A = 0.0, 0.0
    s = gt.width
    for j in picks:
        g = TransferState(j, gt.tables[j - gt.start])
        sup = float(np.max(np.abs(g.values))) or 1.0
        n_here = min(n_max, chain.horizon[1] - j - s)
        if n_here < 4:
            continue
        dc = rpf_decay(chain, g, np.inf, 0.5, n_here)
        gamma = max(gamma, dc.gamma_fit)
        A = max(A, dc.A / sup)
    return gamma, A


def dobrushin(P: np.ndarray) -> float:
    """``(1/2) max_{x,x'} sum_y |P[x,y] - P[x',y]|``: oscillation contraction of ``phi -> P phi``."""
    return 0.5 * float(np.max(np.abs(P[:, None, :] - P[None, :, :]).sum(axis=-1)))


def certified_tail(chain: KernelSequence, gt: ObservableSequence, K: int, block: int = 64) -> float:
    """Rigorous bound on ``sup_j ||L^{K+1} g~_{j-K}||_inf``.

    After ``w - 1`` averaging steps the push is a function of one coordinate
    whose oscillation contracts by the Dobrushin coefficient of each
    multi-step backward kernel ``B_{k+m-1} ... B_k`` (blocks of length
    ``block``).  A centered function is bounded by its oscillation.
    """
    w = gt.width
    R = K + 2 - w
    if gt.n <= K:
        return 0.0
    if R <= 0:
        return float(np.max(np.abs(gt.tables[: gt.n - K])))
    j_first, j_last = gt.start + K, gt.stop - 1
    lo_k, hi_k = j_first - K + w - 1, j_last
    steps = {k: chain.backward.at(k) for k in range(lo_k, hi_k + 1)}
    m = max(1, min(block, R))
    blocks = {}
    for k in range(lo_k, hi_k - m + 2):
        P = np.eye(chain.alphabet_size)
        for t in range(k, k + m):
            P = steps[t] @ P
        blocks[k] = dobrushin(P)
    worst = 0.0
    for j in range(j_first, j_last + 1):
        a = j - K
        tab = gt.tables[a - gt.start]
        osc = float(tab.max() - tab.min())
        k, left, factor = a + w - 1, R, 1.0
        while left >= m:
            factor *= blocks[k]
            k += m
            left -= m
        if left:
            P = np.eye(chain.alphabet_size)
            for t in range(k, k + left):
                P = steps[t] @ P
            factor *= dobrushin(P)
        worst = max(worst, osc * factor)
    return worst


def martingale(
    fam: ObservableSequence,
    chain: KernelSequence,
    K: int | str | None = "auto",
    target: float = 1e-9,
) -> MartingaleDecomposition:
    """Reverse-martingale decomposition of a future-measurable family.

    ``h_j = -sum_{k=1}^{K} L^k (g_{j-k} - E g_{j-k})`` with the sum stopped at
    the first index of the family.  ``K=None`` runs the exact recursion
    ``h_{j+1} = L_j(h_j - g_j + E g_j)``; ``K="auto"`` picks the smallest
    ``K`` whose certified tail is below ``target``.
    """
    if fam.l != 0:
        raise ValueError("martingale decomposition needs a future-measurable family (l = 0)")
    d, w = fam.alphabet_size, fam.width
    s = state_width(w)
    W = w if w >= 2 else 1
    means = np.array([expectation(fam.at(j), chain) for j in range(fam.start, fam.stop)])
    gt = fam.map(lambda t: t - means.reshape((-1,) + (1,) * w))
    G = float(np.max(np.abs(gt.tables))) if gt.n else 0.0
    notes = []
    gamma, A = _contraction_fit(chain, gt)
    if K == "auto":
        if gamma >= 1 or gamma == 0:
            K = None if gamma >= 1 else 1
            if gamma >= 1:
                notes.append("no contraction detected; exact recursion used")
        else:
            need = np.log(target / max(A * G, 1e-300)) / np.log(gamma) - 1
            K = int(min(max(np.ceil(need), 1), 100000))
            while K < min(fam.n, 100000) and certified_tail(chain, gt, K) > target:
                K = int(np.ceil(K * 1.25))

    def ext(v):  # width s -> W on the trailing axes
        return v.reshape(v.shape + (1,) * (W - s)) if W > s else v

    n = fam.n
    H = np.zeros((n + 1,) + (d,) * s)
    if K is None:
        h = np.zeros((d,) * s)
        for i in range(n):
            j = fam.start + i
            h = _L(chain.backward.at(j), ext(h) + gt.tables[i], W)
            H[i + 1] = h
        tail = 64 * EPS * (1 + G + float(np.max(np.abs(H))))
    else:
        # pushes[k-1] = L^k g~_{j-k}, all stored at width s
        pushes = np.zeros((0,) + (d,) * s)
        for i in range(n):
            j = fam.start + i
            B = chain.backward.at(j)
            new_first = _L(B, gt.tables[i], W)[None]
            if len(pushes):
                moved = _L(B, pushes, s)
                if s >= 2:
                    moved = moved.reshape(moved.shape + (1,))
                    moved = np.broadcast_to(moved, (len(pushes),) + (d,) * s)
                pushes = np.concatenate([new_first, moved])[:K]
            else:
                pushes = new_first
            H[i + 1] = pushes.sum(axis=0)
        tail = certified_tail(chain, gt, K) + 64 * EPS * (K + 1) * max(G, 1.0)
    Wm = max(w, 2)
    Mt = np.empty((n,) + (d,) * Wm)
    for i in range(n):
        g_e = gt.tables[i].reshape((d,) * w + (1,) * (Wm - w))
        h_j = H[i].reshape((d,) * s + (1,) * (Wm - s))
        h_j1 = H[i + 1].reshape((1,) + (d,) * s + (1,) * (Wm - 1 - s))
        Mt[i] = np.broadcast_to(g_e + h_j - h_j1, (d,) * Wm)
    M = ObservableSequence(0, Wm - 1, Mt, fam.start)
    # H_j is the pushed series; the coboundary sign convention stores h_j = -H_j
    hs = ObservableSequence(0, s - 1, -H, fam.start)
    return MartingaleDecomposition(means, M, hs, K, float(tail), gamma, A, gt, tuple(notes))


def reverse_martingale_defect(decomp: MartingaleDecomposition, chain: KernelSequence, support=True) -> np.ndarray:
    """``||E[M_j | X_{j+1}, ..., X_{j+R}]||_inf`` for every ``j`` (exact conditioning)."""
    out = np.empty(decomp.M.n)
    for i, Mj in enumerate(decomp.M):
        c = condition(Mj, chain, Mj.j + 1, np.inf)
        out[i] = lp_norm(c, chain, np.inf, support)
    return out


def martingale_variances(decomp: MartingaleDecomposition, chain: KernelSequence) -> np.ndarray:
    return np.array([expectation(Mj * Mj, chain) for Mj in decomp.M])


# ---------------------------------------------------------------------------
# quadratic variation


@dataclass(frozen=True)
class QuadraticVariationBound:
    var_SQ: float
    terms: float
    constant: float
    passed: bool


def quadratic_variation_bound(
    decomp: MartingaleDecomposition, chain: KernelSequence, j: int, n: int, u: float = 1.0,
    c_max: float = 1e6,
) -> QuadraticVariationBound:
    """``Var(sum M^2)`` against ``sum (E G^2 + ||G||_u)`` with ``G = M^2 - E M^2``."""
    Q = decomp.M.map(lambda t: t * t).window(j, n)
    var = float(moment_curve(chain, Q, j, n).variance[-1]) if n else 0.0
    terms = 0.0
    for q in Q:
        Gq = q - expectation(q, chain)
        terms += expectation(Gq * Gq, chain) + lp_norm(Gq, chain, u)
    if terms == 0:
        c = 0.0 if var <= 1e-12 else np.inf
    else:
        c = max(var, 0.0) / terms
    return QuadraticVariationBound(var, terms, float(c), bool(np.isfinite(c) and c <= c_max))


# ---------------------------------------------------------------------------
# variance dichotomy and Livsic reconstruction


@dataclass(frozen=True, eq=False)
class LivsicReconstruction:
    """Transfer function ``H_j`` on the window of ``f_j`` with ``f_j - E f_j = H_{j+1} o T - H_j``."""

    H: ObservableSequence
    residual: float
    residuals: np.ndarray
    max_var: float


def livsic(fam: ObservableSequence, chain: KernelSequence, margin: int = 64) -> LivsicReconstruction:
    """Reconstruct ``H_j = -E[sum_{k >= j} (f_k - E f_k) | window of f_j]`` by a backward sweep.

    Residuals ``f_j - E f_j - (H_{j+1} o T - H_j)`` are exact table
    differences; they vanish up to the end effect when ``f`` is a coboundary.
    The end effect decays geometrically away from the last index, so the
    reported ``residual`` skips the final ``margin`` indices (all residuals
    are kept in ``residuals``).
    """
    d, w, l = fam.alphabet_size, fam.width, fam.l
    n = fam.n
    means = np.array([expectation(f, chain) for f in fam])
    ft = fam.tables - means.reshape((-1,) + (1,) * w)
    Z = np.zeros((n + 1,) + (d,) * w)
    resid = np.zeros(n)
    for i in range(n - 1, -1, -1):
        j = fam.start + i
        nxt = Z[i + 1]
        if i == n - 1:
            Z[i] = ft[i]
            continue
        Q = chain.kernel(j + fam.r)
        if w == 1:
            cond = Q @ nxt
        else:
            cond = np.broadcast_to(np.einsum("...ay,ay->...a", nxt, Q)[None], (d,) * w)
        Z[i] = ft[i] + cond
        # f~_j + Z_{j+1} o T - Z_j on the window [j - l, j + r + 1]
        r = nxt[None] - cond[..., None]
        P = window_law(chain, j - l, j + fam.r + 1)
        resid[i] = float(np.max(np.abs(r[P > 0]))) if np.any(P > 0) else 0.0
    Hs = ObservableSequence(l, fam.r, -Z[:n], fam.start)
    var = max(expectation(h * h, chain) - expectation(h, chain) ** 2 for h in Hs)
    keep = max(n - 1 - margin, min(n - 1, 1))
    return LivsicReconstruction(Hs, float(resid[:keep].max()) if n > 1 else 0.0, resid, float(var))


@dataclass(frozen=True, eq=False)
class DichotomyVerdict:
    verdict: str
    n_grid: np.ndarray
    partial_var_M: np.ndarray
    var_S: np.ndarray
    increment: float
    threshold: float
    livsic: LivsicReconstruction | None = None
    livsic_residual: float | None = None


def variance_dichotomy(
    fam: ObservableSequence,
    chain: KernelSequence,
    n_grid,
    tol: float = 1e-6,
    margin: int = 64,
    M_terms: int = 40,
) -> DichotomyVerdict:
    """Classify ``sum_j Var(M_j)`` as bounded (coboundary) or growing.

    ``bounded`` requires the increment of the partial sums over the last half
    of the grid to be below ``tol * (1 + total)``; increments within a factor
    10 of that threshold raise Inconclusive.  For bounded families the
    transfer function is reconstructed and the residual over indices at least
    ``margin`` before the end of the family is reported.
    """
    n_grid = np.array(sorted(set(int(v) for v in n_grid)))
    n_max = int(n_grid[-1])
    g = fam
    if fam.l > 0:
        g = future_part(sinai(fam, chain, M_terms))
    if g.n < n_max:
        raise ValueError("family too short for the requested grid")
    dec = martingale(g.window(g.start, n_max), chain, K=None)
    vm = martingale_variances(dec, chain)
    partial = np.cumsum(vm)[n_grid - 1]
    var_S = moment_curve(chain, fam, fam.start, n_max).variance[n_grid - 1]
    total = float(partial[-1])
    mid = float(partial[len(partial) // 2]) if len(partial) > 1 else 0.0
    inc = total - mid
    thr = tol * (1 + total)
    if inc < thr / 10:
        verdict = "bounded"
    elif inc > thr * 10:
        verdict = "growing"
    else:
        raise Inconclusive(f"tail increment {inc:.3g} within a factor 10 of threshold {thr:.3g}")
    lv, res = None, None
    if verdict == "bounded":
        lv = livsic(fam, chain)
        stop = max(1, min(n_max, fam.n - margin))
        res = float(lv.residuals[:stop].max())
    return DichotomyVerdict(verdict, n_grid, partial, var_S, inc, thr, lv, res)
