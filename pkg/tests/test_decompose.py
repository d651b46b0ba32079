import numpy as np
import pytest

from markovshift import decompose as D
from markovshift.chain import homogeneous_chain, perturbed_chain, window_law
from markovshift.limits import exact_variances
from markovshift.observable import ObservableSequence, condition, expectation, lp_norm

Q3 = np.array([[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.25, 0.15, 0.6]])


@pytest.fixture
def chain3():
    return perturbed_chain(Q3, 0.05, 160, seed=1, buffer=0)


def _family(seed, n, l, r, start=0, d=3):
    rng = np.random.default_rng(seed)
    return ObservableSequence(l, r, rng.standard_normal((n,) + (d,) * (l + r + 1)), start)


def test_sinai_is_exact(chain3):
    fam = _family(0, 40, 2, 1, start=2)
    dec = D.sinai(fam, chain3, M_terms=10)
    assert max(dc.residual for dc in dec) < 1e-12
    for dc in dec:
        assert dc.g.l == 0
        # E[g_j] = E[f_j] since the coboundary is centered
        assert expectation(dc.g, chain3) == pytest.approx(expectation(fam.at(dc.j), chain3), abs=1e-12)


def test_martingale_identity_and_reverse_property(chain3):
    fam = _family(1, 150, 0, 1)
    dec = D.martingale(fam, chain3, K=None)
    for j in range(dec.M.start + 1, dec.M.stop - 1):
        gt = fam.at(j) - dec.means[j - fam.start]
        rec = dec.M.at(j) + dec.h.at(j) - dec.h.at(j + 1)
        diff = gt - rec
        assert lp_norm(diff, chain3, np.inf) < 1e-11
    defect = D.reverse_martingale_defect(dec, chain3)
    assert defect.max() < 1e-11


def test_martingale_orthogonality(chain3):
    fam = _family(2, 150, 0, 1)
    dec = D.martingale(fam, chain3, K="auto", target=1e-10)
    var_M = D.martingale_variances(dec, chain3)
    vS = exact_variances(chain3, dec.M, dec.M.start, [dec.M.n])[0]
    assert vS == pytest.approx(var_M.sum(), rel=1e-9)


def test_certified_tail_bounds_defect(chain3):
    fam = _family(3, 150, 0, 1)
    for K in (5, 20, 60):
        dec = D.martingale(fam, chain3, K=K)
        defect = D.reverse_martingale_defect(dec, chain3)
        assert defect.max() <= dec.tail_bound
    # the certificate decays geometrically in K
    t20 = D.martingale(fam, chain3, K=20).tail_bound
    t40 = D.martingale(fam, chain3, K=40).tail_bound
    assert t40 < t20 * 1e-2


def test_dobrushin():
    assert D.dobrushin(np.eye(3)) == 1.0
    assert D.dobrushin(np.full((3, 3), 1 / 3)) == pytest.approx(0.0)
    Q = np.array([[0.9, 0.1], [0.2, 0.8]])
    assert D.dobrushin(Q) == pytest.approx(0.7)


def test_martingale_rejects_two_sided(chain3):
    with pytest.raises(ValueError):
        D.martingale(_family(0, 20, 1, 0, start=1), chain3)


def test_livsic_on_coboundary(chain3):
    rng = np.random.default_rng(4)
    H = rng.standard_normal((101, 3))
    tabs = H[1:, None, :] - H[:-1, :, None]
    fam = ObservableSequence(0, 1, tabs, 0)
    rec = D.livsic(fam, chain3)
    assert rec.residual <= 1e-6


def test_dichotomy_classifies():
    ch = perturbed_chain(Q3, 0.05, 4096, seed=5, buffer=8)
    rng = np.random.default_rng(6)
    H = rng.standard_normal((ch.n_steps, 3))
    n = ch.n_steps - 1
    cob = ObservableSequence(0, 1, H[1:n + 1, None, :] - H[:n, :, None], ch.start)
    gen = ObservableSequence(0, 1, rng.standard_normal((n, 3, 3)), ch.start)
    grid = [1024, 2048, 4096]
    assert D.variance_dichotomy(cob, ch, grid).verdict == "bounded"
    assert D.variance_dichotomy(gen, ch, grid).verdict == "growing"


def test_quadratic_variation_bound(chain3):
    fam = _family(7, 100, 0, 1)
    dec = D.martingale(fam, chain3, K=None)
    qv = D.quadratic_variation_bound(dec, chain3, dec.M.start, 60)
    assert qv.passed and np.isfinite(qv.constant)
