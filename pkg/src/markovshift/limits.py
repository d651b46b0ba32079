"""Variance curves, block partitions, normal-approximation distances and deviation rates.

Exact routes use the moment and lattice dynamic programs of the engine; Monte
Carlo routes report standard errors or confidence bands so that the two can
be compared directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.interpolate import CubicSpline

from ._engine import LatticeLaw, MomentAccumulator, lattice_laws, moment_curve, sample_sums
from .chain import KernelSequence, mixing_coefficient, window_law
from .errors import NoConvergence, NotLattice, SpanExceeded, TailUnresolved, VarianceTooSmall
from .observable import ObservableSequence, WindowObservable, lp_norm, norm
from .transfer import derivative, log_mgf, pressure

CSV_COLUMNS = ("n", "statistic", "value", "ci_lo", "ci_hi", "method")


def as_future(fam: ObservableSequence) -> ObservableSequence:
    """Re-index a two-sided family so that each window starts at its index.

    ``f_j`` on ``[j - l, j + r]`` becomes ``g_{j-l}`` on ``[j - l, j + r]``;
    partial sums are unchanged up to the shift of the starting index.
    """
    if fam.l == 0:
        return fam
    return ObservableSequence(0, fam.l + fam.r, fam.tables, fam.start - fam.l)


def _k0(fam: ObservableSequence, k0: int | None) -> int:
    return fam.start if k0 is None else int(k0)


# ---------------------------------------------------------------------------
# variance curves


@dataclass(frozen=True)
class VarianceCurve:
    """``variance[i] = Var(S_{k0, n_grid[i]} f)``; ``se`` is zero for exact methods."""

    k0: int
    n_grid: np.ndarray
    variance: np.ndarray
    method: str
    se: np.ndarray

    def rows(self):
        for n, v, s in zip(self.n_grid, self.variance, self.se):
            yield (int(n), "variance", float(v), float(v - 5 * s), float(v + 5 * s), self.method)


def exact_variances(chain: KernelSequence, fam: ObservableSequence, k0: int, n_grid) -> np.ndarray:
    n_grid = np.asarray(n_grid, dtype=int)
    mc = moment_curve(chain, fam, k0, int(n_grid.max()), order=2)
    return np.maximum(mc.variance[n_grid - 1], 0.0)


def _operator_variances(chain, fam, k0, n_grid) -> np.ndarray:
    g = as_future(fam)
    j = k0 - fam.l
    n_grid = [int(n) for n in n_grid]
    cache = {}

    def table(pts):
        key = tuple(np.round(pts, 15))
        if key not in cache:
            _, vals = log_mgf(chain, g, np.asarray(pts, dtype=complex), j, max(n_grid), record=n_grid)
            cache[key] = vals.real
        return cache[key]

    out = []
    for i, n in enumerate(n_grid):
        d2 = derivative(lambda p, i=i: table(p)[i], 2, 0.0, h_max=1e-2)
        out.append(float(np.real(d2.value)))
    return np.array(out)


def variance_curve(
    fam: ObservableSequence,
    chain: KernelSequence,
    n_grid,
    method: str = "exact",
    k0: int | None = None,
    replicas: int = 10000,
    seed: int = 0,
    threads: int = 1,
) -> VarianceCurve:
    """Variance of partial sums on ``n_grid``.

    ``exact`` propagates window laws together with the first two central
    moments; ``operator`` takes the second derivative at 0 of the exact
    log-moment generating function; ``monte-carlo`` samples independent
    replicas and reports the standard error of the sample variance.
    """
    k0 = _k0(fam, k0)
    n_grid = np.asarray(sorted(int(n) for n in n_grid))
    chain.check_window(k0 - fam.l, k0 + int(n_grid.max()) - 1 + fam.r)
    zeros = np.zeros(len(n_grid))
    if method == "exact":
        return VarianceCurve(k0, n_grid, exact_variances(chain, fam, k0, n_grid), method, zeros)
    if method == "operator":
        return VarianceCurve(k0, n_grid, _operator_variances(chain, fam, k0, n_grid), method, zeros)
    if method == "monte-carlo":
        v, se = [], []
        for i, n in enumerate(n_grid):
            x = sample_sums(chain, fam, k0, int(n), replicas, seed + i, threads)
            s2 = float(np.var(x, ddof=1))
            m4 = float(np.mean((x - x.mean()) ** 4))
            v.append(s2)
            se.append(math.sqrt(max(m4 - s2 ** 2, 0.0) / replicas))
        return VarianceCurve(k0, n_grid, np.array(v), method, np.array(se))
    raise ValueError(f"unknown variance method {method!r}")


# ---------------------------------------------------------------------------
# variance partitions


@dataclass(frozen=True)
class VariancePartition:
    """Consecutive blocks ``[a, b]`` (inclusive) of ``[k0, k0 + n - 1]``."""

    A: float
    blocks: tuple
    block_variances: np.ndarray
    sigma2: float
    merged_last: bool

    @property
    def k_n(self) -> int:
        return len(self.blocks)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([b - a + 1 for a, b in self.blocks])


def _block_variance(chain, fam, a, b) -> float:
    acc = MomentAccumulator(chain, fam, a, 2)
    m = None
    for _ in range(b - a + 1):
        m = acc.add()
    return float(m[2])


def variance_partition(
    fam: ObservableSequence,
    chain: KernelSequence,
    n: int,
    A: float,
    k0: int | None = None,
) -> VariancePartition:
    """Greedy left-to-right partition closing a block once its variance reaches ``A``.

    A trailing block below ``A`` is merged into its predecessor.  Raises
    VarianceTooSmall unless ``Var(S_n f) > 4 A``.
    """
    if A <= 0:
        raise ValueError("target block variance must be positive")
    k0 = _k0(fam, k0)
    sigma2 = float(exact_variances(chain, fam, k0, [n])[0])
    if not sigma2 > 4 * A:
        raise VarianceTooSmall(f"Var(S_n) = {sigma2:.6g} is not above 4A = {4 * A:.6g}")
    blocks, variances = [], []
    a, end = k0, k0 + n - 1
    acc = MomentAccumulator(chain, fam, a, 2)
    k = a
    while k <= end:
        v = float(acc.add()[2])
        if v >= A:
            blocks.append((a, k))
            variances.append(v)
            a = k + 1
            if a <= end:
                acc = MomentAccumulator(chain, fam, a, 2)
        elif k == end:
            blocks.append((a, k))
            variances.append(v)
        k += 1
    merged = False
    if len(blocks) > 1 and variances[-1] < A:
        (a0, _), (_, b1) = blocks[-2], blocks[-1]
        blocks[-2:] = [(a0, b1)]
        variances[-2:] = [_block_variance(chain, fam, a0, b1)]
        merged = True
    return VariancePartition(float(A), tuple(blocks), np.array(variances), sigma2, merged)


# ---------------------------------------------------------------------------
# assumption checks


def _centered(fam: ObservableSequence, chain: KernelSequence):
    means = np.array([np.sum(window_law(chain, j - fam.l, j + fam.r) * fam.tables[i])
                      for i, j in enumerate(range(fam.start, fam.stop))])
    shape = (-1,) + (1,) * fam.width
    return fam.map(lambda t: t - means.reshape(shape)), means


def _block_abs_moment(chain, fam, a, b, k):
    """``E|S_B - E S_B|^k`` exactly: even ``k`` from central moments, odd ``k`` from the lattice law."""
    if k % 2 == 0:
        mc = moment_curve(chain, fam, a, b - a + 1, order=k)
        return float(mc.central[-1, k]), "exact"
    law = lattice_laws(chain, fam, a, [b - a + 1])[b - a + 1]
    x, p = law.support()
    mu = float(np.sum(x * p))
    return float(np.sum(p * np.abs(x - mu) ** k)), "lattice-exact"


@dataclass(frozen=True)
class AssumptionReport:
    n: int
    sigma2: float
    sigma_bounded: bool
    eps_grid: np.ndarray
    lindeberg: np.ndarray
    k_moment: int
    L_tilde: float
    L_tilde_ratio: float
    L_method: str
    special: float
    u: float
    U: np.ndarray
    V: np.ndarray
    V_ratio: float
    blocks: tuple
    growth_exponent: float
    notes: tuple = field(default_factory=tuple)


def assumption_checks(
    fam: ObservableSequence,
    chain: KernelSequence,
    n: int,
    k0: int | None = None,
    eps_grid: Sequence[float] = (0.01, 0.05, 0.1, 0.5),
    A: float | None = None,
    k_moment: int = 3,
    u: float = 1.0,
    p: float = 2.0,
    q: float = 2.0,
    delta: float = 0.5,
    partition: VariancePartition | None = None,
) -> AssumptionReport:
    """Exact moment diagnostics of a family on ``[k0, k0 + n - 1]``.

    Reports the Lindeberg ratios on ``eps_grid``, the block moment sum
    ``sum_B E|S_B - E S_B|^k`` and its ratio to ``sigma_n^2``, the normalized
    squared-fluctuation sum ``sigma_n^-4 sum (E G^2 + ||G||_u)`` with
    ``G = f^2 - E f^2``, and the block quantities ``U_j`` and
    ``V_j = min(U_j, U_j^{3/4})`` together with ``sum V_j / sigma_n^2``.
    The fitted exponent of ``sigma_m^2 ~ m^e`` over the range is included.
    """
    k0 = _k0(fam, k0)
    sub = fam.window(k0, n)
    fc, _ = _centered(sub, chain)
    notes = []
    grid_n = np.unique(np.geomspace(1, n, num=min(n, 16)).astype(int))
    var_grid = exact_variances(chain, fc, k0, grid_n)
    sigma2 = float(var_grid[-1])
    sel = (grid_n >= max(2, n // 16)) & (var_grid > 0)
    expo = float(np.polyfit(np.log(grid_n[sel]), np.log(var_grid[sel]), 1)[0]) if sel.sum() >= 2 else 0.0
    bounded = sigma2 < 1e-8 or expo < 0.1
    if bounded:
        notes.append("sigma_n does not grow on the range; ratios are degenerate")
    obs = [fc.at(j) for j in range(k0, k0 + n)]
    laws = [window_law(chain, f.lo, f.hi) for f in obs]
    s = math.sqrt(sigma2) if sigma2 > 0 else 0.0
    lind = []
    for e in eps_grid:
        tot = sum(float(np.sum(P * f.table ** 2 * (np.abs(f.table) >= e * s))) for f, P in zip(obs, laws))
        lind.append(tot / sigma2 if sigma2 > 0 else np.inf)
    special_sum = 0.0
    for f, P in zip(obs, laws):
        G = f.table ** 2 - np.sum(P * f.table ** 2)
        special_sum += float(np.sum(P * G ** 2))
        special_sum += float(np.sum(P * np.abs(G) ** u) ** (1 / u)) if np.isfinite(u) else float(np.max(np.abs(G)[P > 0]))
    special = special_sum / sigma2 ** 2 if sigma2 > 0 else np.inf
    if partition is None and not bounded:
        A_use = A if A is not None else max(sigma2 / max(8, int(math.sqrt(n))), 1e-12)
        try:
            partition = variance_partition(fc, chain, n, A_use, k0)
        except VarianceTooSmall:
            notes.append("variance partition unavailable")
    L_tilde, L_method, Us, Vs, blocks = np.nan, "none", [], [], ()
    if partition is not None:
        blocks = partition.blocks
        L_tilde = 0.0
        method = set()
        for a, b in blocks:
            try:
                m, how = _block_abs_moment(chain, fc, a, b, k_moment)
            except (NotLattice, SpanExceeded):
                m, how = _block_abs_moment(chain, fc, a, b, k_moment + 1)
                m, how = m ** (k_moment / (k_moment + 1)), "even-moment bound"
            L_tilde += m
            method.add(how)
        L_method = "+".join(sorted(method))
        for a, b in blocks:
            Uj = 0.0
            e2 = 0.0
            for j in range(a, b + 1):
                f = fc.at(j)
                P = window_law(chain, f.lo, f.hi)
                Uj += float(np.sum(P * f.table ** 4))
                e2 += float(np.sum(P * f.table ** 2))
                Uj += norm(f * f, chain, 2, 2, delta).v_coeff
                Uj += lp_norm(f, chain, 3 * p) ** 3
                Uj += norm(f * f * f, chain, q, q, delta).v_coeff
            Uj += e2 ** 2
            Us.append(Uj)
            Vs.append(min(Uj, Uj ** 0.75))
    V_ratio = float(np.sum(Vs)) / sigma2 if (Vs and sigma2 > 0) else np.nan
    return AssumptionReport(
        n, sigma2, bounded, np.asarray(eps_grid, float), np.array(lind), k_moment,
        float(L_tilde), float(L_tilde) / sigma2 if sigma2 > 0 else np.nan, L_method,
        float(special), float(u), np.array(Us), np.array(Vs), V_ratio, tuple(blocks), expo, tuple(notes),
    )


# ---------------------------------------------------------------------------
# Kolmogorov and Wasserstein distances


@dataclass(frozen=True)
class DistanceReport:
    n: int
    mean: float
    sigma: float
    method: str
    kolmogorov: float
    weighted: dict
    wasserstein: dict
    band: float = 0.0
    tail_mass: float = 0.0
    replicas: int = 0

    def rows(self):
        lo, hi = self.kolmogorov - self.band, self.kolmogorov + self.band
        yield (self.n, "kolmogorov", self.kolmogorov, lo, hi, self.method)
        for s, v in sorted(self.weighted.items()):
            yield (self.n, f"weighted_s{s:g}", v, v, v, self.method)
        for b, v in sorted(self.wasserstein.items()):
            yield (self.n, f"wasserstein_b{b:g}", v, v, v, self.method)


def dkw_band(replicas: int, alpha: float = 1e-3) -> float:
    return math.sqrt(math.log(2 / alpha) / (2 * replicas))


def _normal_piece(x: float, a: np.ndarray, b: np.ndarray, power: float) -> np.ndarray:
    """``int_a^b |x - t|^power phi(t) dt`` for arrays of intervals ``a <= b``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if power == 1:
        def signed(lo, hi):  # int (x - t) phi = x (Phi(hi)-Phi(lo)) - (phi(lo) - phi(hi))
            return x * (stats.norm.cdf(hi) - stats.norm.cdf(lo)) - (stats.norm.pdf(lo) - stats.norm.pdf(hi))
        left = signed(a, np.minimum(b, x))
        right = -signed(np.maximum(a, x), b)
        return np.where(b <= x, signed(a, b), np.where(a >= x, -signed(a, b), left + right))
    if power == 2:
        def m(lo, hi):
            m0 = stats.norm.cdf(hi) - stats.norm.cdf(lo)
            m1 = stats.norm.pdf(lo) - stats.norm.pdf(hi)
            with np.errstate(invalid="ignore"):
                lt = np.where(np.isfinite(lo), lo * stats.norm.pdf(lo), 0.0)
                ht = np.where(np.isfinite(hi), hi * stats.norm.pdf(hi), 0.0)
            m2 = m0 + lt - ht
            return m0, m1, m2
        m0, m1, m2 = m(a, b)
        return x * x * m0 - 2 * x * m1 + m2
    nodes, weights = np.polynomial.legendre.leggauss(64)
    lo, hi = np.maximum(a, -40.0), np.minimum(b, 40.0)
    out = np.zeros(len(a))
    for i in range(len(a)):
        if hi[i] <= lo[i]:
            continue
        cuts = [lo[i], hi[i]] if not lo[i] < x < hi[i] else [lo[i], x, hi[i]]
        for c0, c1 in zip(cuts[:-1], cuts[1:]):
            t = 0.5 * (c1 - c0) * nodes + 0.5 * (c1 + c0)
            out[i] += 0.5 * (c1 - c0) * np.sum(weights * np.abs(x - t) ** power * stats.norm.pdf(t))
    return out


def _wasserstein_discrete(x: np.ndarray, p: np.ndarray, b: float) -> float:
    """``W_b`` between a discrete law (sorted atoms ``x``, masses ``p``) and N(0,1) by quantile coupling."""
    F = np.clip(np.cumsum(p), 0.0, 1.0)
    F[-1] = 1.0
    lo = stats.norm.ppf(np.concatenate([[0.0], F[:-1]]))
    hi = stats.norm.ppf(F)
    total = 0.0
    for i in range(len(x)):
        if p[i] <= 0:
            continue
        total += float(_normal_piece(float(x[i]), lo[i: i + 1], hi[i: i + 1], b)[0])
    return total ** (1.0 / b)


def _weighted_sup_discrete(x, F_right, F_left, s, grid_pts=4001, T=10.0):
    t = np.linspace(-T, T, grid_pts)
    idx = np.searchsorted(x, t, side="right") - 1
    Ft = np.where(idx >= 0, F_right[np.clip(idx, 0, None)], 0.0)
    vals = [np.max((1 + np.abs(t) ** s) * np.abs(Ft - stats.norm.cdf(t)))]
    inside = np.abs(x) <= T
    if np.any(inside):
        w = 1 + np.abs(x[inside]) ** s
        Phi = stats.norm.cdf(x[inside])
        vals.append(np.max(w * np.abs(F_right[inside] - Phi)))
        vals.append(np.max(w * np.abs(F_left[inside] - Phi)))
    return float(max(vals))


def lattice_distances(law: LatticeLaw, mean: float, sigma: float, s_grid=(1.0, 2.0), b_grid=(1.0, 2.0)):
    x, p = law.support()
    z = (x - mean) / sigma
    F_right = np.cumsum(p)
    F_left = F_right - p
    Phi = stats.norm.cdf(z)
    kol = float(max(np.max(np.abs(F_right - Phi)), np.max(np.abs(F_left - Phi))))
    weighted = {float(s): _weighted_sup_discrete(z, F_right, F_left, s) for s in s_grid}
    wass = {float(b): _wasserstein_discrete(z, p, b) for b in b_grid}
    tail = float(p[z < -10].sum() + p[z > 10].sum())
    return kol, weighted, wass, tail


def empirical_distances(samples: np.ndarray, mean: float, sigma: float, s_grid=(1.0, 2.0), b_grid=(1.0, 2.0)):
    z = np.sort((np.asarray(samples, float) - mean) / sigma)
    R = len(z)
    Phi = stats.norm.cdf(z)
    up = np.arange(1, R + 1) / R
    dn = np.arange(0, R) / R
    kol = float(max(np.max(up - Phi), np.max(Phi - dn)))
    weighted = {}
    inside = np.abs(z) <= 10
    for s in s_grid:
        w = 1 + np.abs(z[inside]) ** s
        if np.any(inside):
            weighted[float(s)] = float(max(np.max(w * np.abs(up[inside] - Phi[inside])),
                                           np.max(w * np.abs(dn[inside] - Phi[inside]))))
        else:
            weighted[float(s)] = 0.0
    qn = stats.norm.ppf((np.arange(R) + 0.5) / R)
    wass = {float(b): float(np.mean(np.abs(z - qn) ** b) ** (1 / b)) for b in b_grid}
    tail = float(np.mean(~inside))
    return kol, weighted, wass, tail


def edf_distance(
    fam: ObservableSequence,
    chain: KernelSequence,
    n: int,
    mode: str = "lattice-exact",
    replicas: int = 100000,
    seed: int = 0,
    k0: int | None = None,
    s_grid=(1.0, 2.0),
    b_grid=(1.0, 2.0),
    alpha: float = 1e-3,
    threads: int = 1,
) -> DistanceReport:
    """Distances between the standardized law of ``S_n`` and the standard normal.

    The sum is standardized with its exact mean and variance.  ``lattice-exact``
    computes the law of ``S_n`` by dynamic programming; ``empirical`` uses
    ``replicas`` independent samples and attaches the DKW band at level
    ``alpha``.  Weighted suprema run over ``|t| <= 10``; the mass outside is
    reported as ``tail_mass``.
    """
    k0 = _k0(fam, k0)
    mc = moment_curve(chain, fam, k0, n, order=2)
    mean, var = float(mc.mean[-1]), float(mc.variance[-1])
    if not var > 1e-14 * max(1.0, mean * mean):
        raise VarianceTooSmall("partial sum is degenerate (sigma = 0)")
    sigma = math.sqrt(var)
    if mode == "lattice-exact":
        law = lattice_laws(chain, fam, k0, [n])[n]
        kol, wt, ws, tail = lattice_distances(law, mean, sigma, s_grid, b_grid)
        return DistanceReport(n, mean, sigma, mode, kol, wt, ws, 0.0, tail, 0)
    if mode == "empirical":
        x = sample_sums(chain, fam, k0, n, replicas, seed, threads)
        kol, wt, ws, tail = empirical_distances(x, mean, sigma, s_grid, b_grid)
        return DistanceReport(n, mean, sigma, mode, kol, wt, ws, dkw_band(replicas, alpha), tail, replicas)
    raise ValueError(f"unknown distance mode {mode!r}")


def log_slope(n_grid, values) -> float:
    """Least-squares slope of ``log values`` against ``log n``."""
    return float(np.polyfit(np.log(np.asarray(n_grid, float)), np.log(np.asarray(values, float)), 1)[0])


# ---------------------------------------------------------------------------
# deviation rates


@dataclass(frozen=True)
class RateReport:
    kind: str
    grid: np.ndarray
    n_grid: np.ndarray
    empirical: np.ndarray  # [len(n_grid), len(grid)]
    predicted: np.ndarray  # [len(grid)]
    method: str
    extra: dict = field(default_factory=dict)

    def relative_error(self, i_n: int = -1) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.empirical[i_n] - self.predicted) / np.abs(self.predicted)

    def rows(self):
        for i, n in enumerate(self.n_grid):
            for k, g in enumerate(self.grid):
                e = float(self.empirical[i, k])
                yield (int(n), f"{self.kind}_rate@{g:g}", e, e, e, self.method)
        for k, g in enumerate(self.grid):
            v = float(self.predicted[k])
            yield (int(self.n_grid[-1]), f"{self.kind}_predicted@{g:g}", v, v, v, "theory")


def _scale(a_n, n_grid):
    if callable(a_n):
        return np.array([float(a_n(n)) for n in n_grid])
    return np.asarray(n_grid, float) ** float(a_n)


def mdp_rate(
    fam: ObservableSequence,
    chain: KernelSequence,
    n_grid,
    a_n: float | Callable[[int], float] = 0.75,
    x_grid=(0.5, 1.0),
    mode: str = "lattice-exact",
    replicas: int = 100000,
    seed: int = 0,
    k0: int | None = None,
    threads: int = 1,
) -> RateReport:
    """``(1/s_n) log P((S_n - E S_n)/a_n >= x)`` with ``s_n = a_n^2/n``, against ``-x^2/2``.

    ``a_n`` is either an exponent (``a_n = n^a_n``) or a callable.  An empty
    event yields ``-inf``.  In Monte Carlo mode probabilities below
    ``10 / replicas`` raise TailUnresolved.
    """
    k0 = _k0(fam, k0)
    n_grid = np.asarray(sorted(int(n) for n in n_grid))
    a = _scale(a_n, n_grid)
    if len(n_grid) >= 2:
        r1, r2 = a / np.sqrt(n_grid), a / n_grid
        if not (np.all(np.diff(r1) > 0) and np.all(np.diff(r2) < 0)):
            raise ValueError("scale must satisfy a_n / sqrt(n) increasing and a_n / n decreasing")
    elif not (np.sqrt(n_grid[0]) < a[0] < n_grid[0]):
        raise ValueError("scale must lie between sqrt(n) and n")
    s = a ** 2 / n_grid
    x_grid = np.asarray(x_grid, float)
    out = np.empty((len(n_grid), len(x_grid)))
    if mode == "lattice-exact":
        laws = lattice_laws(chain, fam, k0, n_grid)
        for i, n in enumerate(n_grid):
            mean = laws[n].moments()[0]
            for k, x in enumerate(x_grid):
                lt = laws[n].log_tail(mean + x * a[i], strict=False)
                out[i, k] = lt / s[i]
    elif mode == "monte-carlo":
        for i, n in enumerate(n_grid):
            mean = float(moment_curve(chain, fam, k0, int(n), 1).mean[-1])
            y = sample_sums(chain, fam, k0, int(n), replicas, seed + i, threads) - mean
            for k, x in enumerate(x_grid):
                P = float(np.mean(y >= x * a[i]))
                if P < 10 / replicas:
                    raise TailUnresolved(f"P = {P:.3g} at n={n}, x={x:g} is below 10/replicas")
                out[i, k] = math.log(P) / s[i]
    else:
        raise ValueError(f"unknown rate mode {mode!r}")
    return RateReport("mdp", x_grid, n_grid, out, -0.5 * x_grid ** 2, mode, {"s_n": s, "a_n": a})


def _golden_max(fn, lo: float, hi: float, tol: float = 1e-10, it: int = 200):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(it):
        if b - a < tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fn(d)
    z = 0.5 * (a + b)
    cands = [(fn(lo), lo), (fn(z), z), (fn(hi), hi)]
    v, zz = max(cands)
    return v, zz


def averaged_pressure(
    fam: ObservableSequence,
    chain: KernelSequence,
    lo: int,
    hi: int,
    z_max: float = 1.0,
    n_z: int = 65,
    buffer: int | None = None,
):
    """Centered average ``(1/N) sum_k (Pi_k(z) - z E f_k)`` on ``[0, z_max]`` as a spline.

    ``z_max`` shrinks on eigen non-convergence (returned).  Convexity of the
    average on the grid is checked and reported.
    """
    g = as_future(fam)
    z = np.linspace(0.0, z_max, n_z)
    pt = pressure(chain, g, lo - fam.l, hi - fam.l, z, buffer=buffer)
    zz = pt.z.real
    if zz.size < 4:
        raise NoConvergence(f"pressure resolved on only {zz.size} points of [0, {z_max:g}]; increase the buffer")
    order = np.argsort(zz)
    means = np.array([np.sum(window_law(chain, k, k + g.r) * g.tables[k - g.start])
                      for k in range(lo - fam.l, hi - fam.l + 1)])
    avg = pt.Pi.real.mean(axis=0) - zz * means.mean()
    zz, avg = zz[order], avg[order]
    second = np.diff(avg, 2)
    convex = bool(np.all(second >= -1e-9 * max(1.0, np.max(np.abs(avg)))))
    return CubicSpline(zz, avg), float(zz[-1]), convex


def ldp_rate(
    fam: ObservableSequence,
    chain: KernelSequence,
    eps_grid,
    n_grid,
    k0: int | None = None,
    z_max: float = 1.0,
    pressure_range: tuple[int, int] | None = None,
    buffer: int | None = None,
) -> RateReport:
    """Empirical ``-(1/n) log P(S_n - E S_n > eps n)`` against the Legendre transform of the pressure.

    The prediction ``sup_{0 <= z <= z_max} (z eps - Pbar(z))`` uses the centered
    pressure averaged over ``pressure_range`` (default: the summation range of
    the largest ``n``) and a golden-section search.  Tails come from the exact
    lattice law, computed under the optimal exponential tilt.  When the
    variance does not grow the prediction is ``inf``.
    """
    k0 = _k0(fam, k0)
    n_grid = np.asarray(sorted(int(n) for n in n_grid))
    eps_grid = np.asarray(eps_grid, float)
    n_max = int(n_grid[-1])
    var = exact_variances(chain, fam, k0, [max(1, n_max // 2), n_max])
    extra = {}
    if var[1] < 1e-9 * n_max or var[1] - var[0] < 1e-9 * n_max:
        pred = np.where(eps_grid > 0, np.inf, 0.0)
        zstar = np.zeros(len(eps_grid))
        extra["degenerate"] = True
    else:
        lo, hi = pressure_range if pressure_range is not None else (k0, k0 + n_max - 1)
        spl, zm, convex = averaged_pressure(fam, chain, lo, hi, z_max, buffer=buffer)
        extra.update(z_max=zm, convex=convex)
        pred, zstar = [], []
        for e in eps_grid:
            if e == 0:
                pred.append(0.0)
                zstar.append(0.0)
                continue
            v, zs = _golden_max(lambda z: z * e - float(spl(z)), 0.0, zm)
            pred.append(v)
            zstar.append(zs)
        pred, zstar = np.array(pred), np.array(zstar)
    out = np.empty((len(n_grid), len(eps_grid)))
    for k, e in enumerate(eps_grid):
        tilt = float(zstar[k])
        laws = lattice_laws(chain, fam, k0, n_grid, tilt=tilt)
        for i, n in enumerate(n_grid):
            mean = float(moment_curve(chain, fam, k0, int(n), 1).mean[-1]) if tilt else laws[n].moments()[0]
            lt = laws[n].log_tail(mean + e * n, strict=True)
            out[i, k] = -lt / n if np.isfinite(lt) else np.inf
    extra["z_star"] = zstar
    return RateReport("ldp", eps_grid, n_grid, out, np.asarray(pred, float), "lattice-exact", extra)


# ---------------------------------------------------------------------------
# moment inequalities


@dataclass(frozen=True)
class MomentCheck:
    """``lhs <= constant * rhs`` on ``n_grid``; ``constant = max lhs / rhs``.

    For the fourth-moment expansion ``rhs`` already contains the stated
    constant and ``constant`` is the fitted multiplier of the correction terms.
    """

    which: str
    n_grid: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    constant: float
    passed: bool
    extra: dict = field(default_factory=dict)


C_MAX = 1e6


def _fitted(lhs, rhs):
    lhs, rhs = np.asarray(lhs, float), np.asarray(rhs, float)
    if np.all(lhs <= 1e-300):
        return 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(rhs > 0, lhs / rhs, np.where(lhs > 1e-12 * max(1.0, lhs.max()), np.inf, 0.0))
    return float(np.max(r))


def _sum_moments(chain, fam, j, n_grid, order):
    mc = moment_curve(chain, fam, j, int(max(n_grid)), order=order)
    idx = np.asarray(n_grid) - 1
    return mc.mean[idx], mc.central[idx]


def _raw4(mean, cent):
    m, c2, c3, c4 = mean, cent[:, 2], cent[:, 3], cent[:, 4]
    return c4 + 4 * m * c3 + 6 * m ** 2 * c2 + m ** 4


def mixing_sum(chain: KernelSequence, q: float = 2.0, p: float = 2.0, indices=None, n_max: int = 64,
               seed: int = 0) -> float:
    """``sum_{n >= 1} varpi_{q,p}(n)`` truncated once the terms fall below ``1e-12``."""
    a, b = chain.horizon
    R = 0.0
    for n in range(1, n_max + 1):
        if indices is None and b - n - a >= 1:
            idx = np.unique(np.linspace(a, b - n, 8).astype(int))
        else:
            idx = indices
        v = mixing_coefficient(chain, "varpi", n, q=q, p=p, indices=idx, seed=seed).value
        R += v
        if v < 1e-12:
            break
    return R


def moment_inequalities(
    fam: ObservableSequence,
    chain: KernelSequence,
    j: int | None,
    n_grid,
    which: str,
    b: float = 4,
    delta: float = 0.5,
    p: float = 2.0,
    q: float = 2.0,
    u: float = 1.0,
    R: float | None = None,
    martingale_family: ObservableSequence | None = None,
) -> MomentCheck:
    """Evaluate one moment inequality with exact moments.

    ``which``: ``"i"`` (``||S - ES||_b`` against ``sqrt n``), ``"ii"`` (against
    ``1 + sd``), ``"iii"`` (fourth moment of a martingale against
    ``1 + ||S||_2 + beta^{1/4}``), ``"iv"`` (fourth-moment expansion with the
    constant ``C(R, delta, f)``), ``"burkholder"`` (``||S M||_4`` against
    ``||sum M^2||_2^{1/2}``) and ``"quadratic"`` (``Var(S G)`` against
    ``1 + Var(S f)`` with ``G = f^2 - E f^2``).  ``b`` must be an even integer.
    """
    j = _k0(fam, j)
    n_grid = np.asarray(sorted(int(n) for n in n_grid))
    extra = {}
    if which in ("i", "ii"):
        if int(b) != b or int(b) % 2:
            raise ValueError("exact moments need an even integer b")
        _, cent = _sum_moments(chain, fam, j, n_grid, int(b))
        lhs = np.maximum(cent[:, int(b)], 0.0) ** (1 / b)
        rhs = np.sqrt(n_grid.astype(float)) if which == "i" else 1 + np.sqrt(np.maximum(cent[:, 2], 0.0))
    elif which == "iii":
        fam_m = martingale_family if martingale_family is not None else fam
        mean, cent = _sum_moments(chain, fam_m, j, n_grid, 4)
        lhs = np.maximum(_raw4(mean, cent), 0.0) ** 0.25
        l2 = np.sqrt(np.maximum(cent[:, 2] + mean ** 2, 0.0))
        beta = np.cumsum(_g_terms(fam_m, chain, j, int(n_grid.max()), u))[n_grid - 1]
        rhs = 1 + l2 + beta ** 0.25
    elif which == "burkholder":
        fam_m = martingale_family if martingale_family is not None else fam
        mean, cent = _sum_moments(chain, fam_m, j, n_grid, 4)
        lhs = np.maximum(_raw4(mean, cent), 0.0) ** 0.25
        sq = fam_m.map(lambda t: t ** 2)
        m2, c2 = _sum_moments(chain, sq, j, n_grid, 2)
        rhs = np.maximum(c2[:, 2] + m2 ** 2, 0.0) ** 0.25
    elif which == "quadratic":
        fc, _ = _centered(fam, chain)
        G, _ = _centered(fc.map(lambda t: t ** 2), chain)
        _, cg = _sum_moments(chain, G, j, n_grid, 2)
        _, cf = _sum_moments(chain, fam, j, n_grid, 2)
        lhs, rhs = cg[:, 2], 1 + cf[:, 2]
    elif which == "iv":
        n_max = int(n_grid.max())
        mean, cent = _sum_moments(chain, fam, j, n_grid, 4)
        lhs = _raw4(mean, cent)
        e4, e2, corr, cmax = [], [], [], 0.0
        for k in range(j, j + n_max):
            f = fam.at(k)
            P = window_law(chain, f.lo, f.hi)
            e4.append(float(np.sum(P * f.table ** 4)))
            e2.append(float(np.sum(P * f.table ** 2)))
            n4 = lp_norm(f, chain, 4)
            v2 = norm(f * f, chain, 2, 2, delta).v_coeff
            vq = norm(f * f * f, chain, q, q, delta).v_coeff
            corr.append(n4 ** 2 + v2 + lp_norm(f, chain, 3 * p) ** 3 + vq)
            cmax = max(cmax, n4 ** 2 + v2 + lp_norm(f, chain, 1) + norm(f, chain, q, q, delta).v_coeff)
        if R is None:
            R = mixing_sum(chain, q, p)
        C = 2 * (R + 1 / (1 - delta ** 0.25)) * cmax
        S4, S2, SC = np.cumsum(e4), np.cumsum(e2), np.cumsum(corr)
        idx = n_grid - 1
        base = S4[idx]
        terms = S2[idx] ** 2 + SC[idx]
        rhs = base + C * terms
        with np.errstate(divide="ignore", invalid="ignore"):
            need = np.where(terms > 0, (lhs - base) / terms, 0.0)
        extra.update(C=C, R=R, fitted_C=float(max(np.max(need), 0.0)))
        passed = bool(np.all(lhs <= rhs * (1 + 1e-9) + 1e-12)) and C <= C_MAX
        return MomentCheck(which, n_grid, lhs, rhs, float(max(np.max(need), 0.0)), passed, extra)
    else:
        raise ValueError(f"unknown inequality {which!r}")
    c = _fitted(lhs, rhs)
    return MomentCheck(which, n_grid, np.asarray(lhs), np.asarray(rhs), c, bool(np.isfinite(c) and c <= C_MAX), extra)


def _g_terms(fam, chain, j, n, u):
    out = []
    for k in range(j, j + n):
        f = fam.at(k)
        P = window_law(chain, f.lo, f.hi)
        G = f.table ** 2 - np.sum(P * f.table ** 2)
        gu = float(np.sum(P * np.abs(G) ** u) ** (1 / u)) if np.isfinite(u) else float(np.max(np.abs(G)[P > 0]))
        out.append(float(np.sum(P * G ** 2)) + gu)
    return np.array(out)
