import numpy as np
import pytest
from scipy import integrate, stats

from markovshift import limits as L
from markovshift._engine import lattice_law
from markovshift.chain import homogeneous_chain, perturbed_chain
from markovshift.errors import TailUnresolved, VarianceTooSmall
from markovshift.observable import ObservableSequence, homogeneous_family

from oracles import sum_law, sum_moments

Q2 = np.array([[0.9, 0.1], [0.2, 0.8]])


def _pm(n, start=0):
    return homogeneous_family([1.0, -1.0], 0, 0, n, start)


def test_exact_variance_against_enumeration(small_random):
    rng = np.random.default_rng(0)
    fam = ObservableSequence(1, 1, rng.standard_normal((10, 3, 3, 3)), 1)
    v = L.exact_variances(small_random, fam, 1, [3, 6, 9])
    for n, x in zip([3, 6, 9], v):
        assert x == pytest.approx(sum_moments(small_random, fam, 1, n)[1], rel=1e-11)


def test_variance_routes_agree():
    ch = perturbed_chain(Q2, 0.05, 1024, seed=1, buffer=8)
    rng = np.random.default_rng(1)
    fam = ObservableSequence(0, 1, rng.standard_normal((ch.n_steps, 2, 2)), ch.start)
    grid = [64, 256, 1024]
    ex = L.variance_curve(fam, ch, grid, "exact")
    op = L.variance_curve(fam, ch, grid, "operator")
    np.testing.assert_allclose(op.variance, ex.variance, rtol=1e-4, atol=1e-6)
    mc = L.variance_curve(fam, ch, [64], "monte-carlo", replicas=4000, seed=2)
    assert abs(mc.variance[0] - ex.variance[0]) <= 5 * mc.se[0]


def test_two_state_asymptotic_variance():
    ch = homogeneous_chain(Q2, 4096)
    v = L.exact_variances(ch, _pm(4096), 0, [4096])[0]
    sigma2 = (8 / 9) * (1 + 2 * 0.7 / 0.3)
    assert v / 4096 == pytest.approx(sigma2, rel=2e-3)


def test_lattice_law_against_enumeration(small_random):
    fam = homogeneous_family([1.0, 0.0, -1.0], 0, 0, 12)
    law = lattice_law(small_random, fam, 1, 7)
    ref = sum_law(small_random, fam, 1, 7)
    x, p = law.support()
    got = {round(float(a), 10): float(b) for a, b in zip(x, p)}
    assert set(got) == set(ref)
    for k in ref:
        assert got[k] == pytest.approx(ref[k], abs=1e-14)


def test_partition_invariants():
    ch = perturbed_chain([[0.7, 0.3], [0.4, 0.6]], 0.1, 2048, seed=4, buffer=8)
    rng = np.random.default_rng(4)
    fam = ObservableSequence(0, 1, rng.standard_normal((ch.n_steps, 2, 2)), ch.start)
    vp = L.variance_partition(fam, ch, 2048, 16.0)
    assert vp.lengths.sum() == 2048
    assert np.all(vp.block_variances >= 8.0) and np.all(vp.block_variances <= 48.0)
    assert 1 / 48 <= vp.k_n / vp.sigma2 <= 2 / 16
    with pytest.raises(VarianceTooSmall):
        L.variance_partition(fam, ch, 8, 1e3)


def test_assumption_checks_iid():
    ch = homogeneous_chain([[0.5, 0.5], [0.5, 0.5]], 512)
    rep = L.assumption_checks(_pm(512), ch, 512, eps_grid=(0.05, 0.5), A=8.0)
    assert rep.sigma2 == pytest.approx(512)
    # bounded summands: the Lindeberg sums vanish once eps sigma exceeds the bound
    assert np.all(rep.lindeberg == 0)
    assert not rep.sigma_bounded


def test_kolmogorov_lattice_against_direct(mixing_chain):
    fam = _pm(4096, mixing_chain.start)
    k0 = 0
    n = 64
    rep = L.edf_distance(fam, mixing_chain, n, "lattice-exact", k0=k0)
    law = lattice_law(mixing_chain, fam, k0, n)
    x, p = law.support()
    m, v = law.moments()
    z = (x - m) / np.sqrt(v)
    F = np.cumsum(p)
    Fl = F - p
    ref = max(np.max(np.abs(F - stats.norm.cdf(z))), np.max(np.abs(Fl - stats.norm.cdf(z))))
    assert rep.kolmogorov == pytest.approx(ref, abs=1e-12)
    # W1 = int |F - Phi| dt, computed by quadrature of the step function
    def Fz(t):
        i = np.searchsorted(z, t, side="right") - 1
        return F[i] if i >= 0 else 0.0

    pts = np.concatenate([[-12.0], z, [12.0]])
    w1 = sum(integrate.quad(lambda t: abs(Fz(t) - stats.norm.cdf(t)), a, b)[0]
             for a, b in zip(pts[:-1], pts[1:]))
    assert rep.wasserstein[1.0] == pytest.approx(w1, rel=1e-6)


def test_empirical_within_dkw(mixing_chain):
    fam = _pm(4096, mixing_chain.start)
    ex = L.edf_distance(fam, mixing_chain, 128, "lattice-exact", k0=0)
    em = L.edf_distance(fam, mixing_chain, 128, "empirical", replicas=20000, seed=3, k0=0)
    assert abs(em.kolmogorov - ex.kolmogorov) <= em.band
    assert em.band == pytest.approx(L.dkw_band(20000))


def test_zero_variance_raises():
    ch = homogeneous_chain([[0.5, 0.5], [0.5, 0.5]], 64)
    with pytest.raises(VarianceTooSmall):
        L.edf_distance(homogeneous_family([1.0, 1.0], 0, 0, 64), ch, 16)


def test_ldp_iid_closed_form():
    ch = homogeneous_chain([[0.5, 0.5], [0.5, 0.5]], 4096, buffer=64)
    fam = _pm(4096 + 128, -64)
    rr = L.ldp_rate(fam, ch, [0.5], [4096], k0=0)
    e = 0.5
    closed = 0.5 * ((1 + e) * np.log(1 + e) + (1 - e) * np.log(1 - e))
    assert rr.predicted[0] == pytest.approx(closed, rel=1e-4)
    assert rr.empirical[-1, 0] == pytest.approx(closed, rel=0.05)


def test_mdp_rate_shape():
    ch = homogeneous_chain([[0.5, 0.5], [0.5, 0.5]], 4096)
    rr = L.mdp_rate(_pm(4096), ch, [256, 1024, 4096], 0.75, [1.0])
    assert rr.predicted[0] == -0.5
    err = np.abs(rr.empirical[:, 0] + 0.5)
    assert err[-1] < err[0]  # converging toward -x^2/2
    assert rr.relative_error()[0] == pytest.approx(0.0, abs=0.15)
    with pytest.raises(ValueError):
        L.mdp_rate(_pm(4096), ch, [256, 1024], 1.2, [1.0])
    with pytest.raises(TailUnresolved):
        L.mdp_rate(_pm(4096), ch, [4096], 0.75, [3.0], mode="monte-carlo", replicas=1000)


def test_log_slope():
    n = np.array([16, 64, 256])
    assert L.log_slope(n, 3 * n ** -0.5) == pytest.approx(-0.5)


@pytest.mark.parametrize("which", ["i", "ii", "iii", "iv", "burkholder", "quadratic"])
def test_moment_inequalities_pass(which):
    from markovshift.decompose import martingale
    ch = perturbed_chain([[0.6, 0.4], [0.3, 0.7]], 0.1, 160, seed=5, buffer=0)
    rng = np.random.default_rng(5)
    fam = ObservableSequence(0, 1, rng.standard_normal((159, 2, 2)), 0)
    kw = {}
    if which in ("iii", "burkholder"):
        kw["martingale_family"] = martingale(fam, ch, K=None).M
    R = L.mixing_sum(ch) if which == "iv" else None
    m = L.moment_inequalities(fam, ch, 0, [8, 32, 128], which, R=R, **kw)
    assert m.passed and np.isfinite(m.constant) and m.constant <= L.C_MAX
