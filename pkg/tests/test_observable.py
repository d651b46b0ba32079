import numpy as np
import pytest

from markovshift import observable as O
from markovshift.chain import window_law

from oracles import paths


def _obs(rng, j, l, r, d=3):
    return O.WindowObservable(j, l, r, rng.standard_normal((d,) * (l + r + 1)))


def test_expectation_by_enumeration(small_random):
    rng = np.random.default_rng(0)
    f = _obs(rng, 4, 1, 1)
    ref = sum(pr * f.table[p] for p, pr in paths(small_random, 3, 5))
    assert O.expectation(f, small_random) == pytest.approx(ref, abs=1e-13)


def test_lp_norms(small_random):
    rng = np.random.default_rng(1)
    f = _obs(rng, 4, 0, 1)
    P = window_law(small_random, 4, 5)
    assert O.lp_norm(f, small_random, 2) == pytest.approx(np.sqrt(np.sum(P * f.table ** 2)))
    assert O.lp_norm(f, small_random, np.inf) == pytest.approx(np.abs(f.table).max())
    assert O.lp_norm(f, small_random, 1) <= O.lp_norm(f, small_random, 3) + 1e-12


def test_conditioning_tower_and_projection(small_random):
    rng = np.random.default_rng(2)
    f = _obs(rng, 5, 2, 2)
    ch = small_random
    g = O.cond_expect(f, ch, 1)
    # tower property and idempotence
    assert O.expectation(g, ch) == pytest.approx(O.expectation(f, ch), abs=1e-13)
    np.testing.assert_allclose(O.cond_expect(g, ch, 1).table, g.table, atol=1e-13)
    # the residual is orthogonal to every function of the conditioning window
    h = O.WindowObservable(5, 1, 1, rng.standard_normal((3, 3, 3)))
    assert O.expectation((f - g) * h, ch) == pytest.approx(0.0, abs=1e-12)


def test_condition_by_enumeration(small_random):
    rng = np.random.default_rng(3)
    f = _obs(rng, 5, 1, 1)
    g = O.condition(f, small_random, 5, np.inf)
    num, den = np.zeros((3, 3)), np.zeros((3, 3))
    for p, pr in paths(small_random, 4, 6):
        num[p[1:]] += pr * f.table[p]
        den[p[1:]] += pr
    np.testing.assert_allclose(g.table, num / den, atol=1e-13)


def test_approximation_errors_decrease(small_random):
    rng = np.random.default_rng(4)
    f = _obs(rng, 5, 2, 2)
    e = O.approximation_errors(f, small_random, 2)
    assert np.all(np.diff(e) <= 1e-12) and e[-1] == 0
    rep = O.norm(f, small_random, 2, 2, 0.5)
    assert rep.total == pytest.approx(rep.lp_norm + rep.v_coeff)
    with pytest.raises(ValueError):
        O.norm(f, small_random, 2, 2, 1.5)


def test_window_arithmetic_alignment():
    f = O.WindowObservable(3, 0, 1, np.arange(4.0).reshape(2, 2))
    g = O.WindowObservable(3, 1, 0, np.array([[1.0, 0.0], [0.0, 1.0]]))
    h = f + g
    assert (h.lo, h.hi) == (2, 4)
    # h(x2, x3, x4) = f(x3, x4) + g(x2, x3)
    assert h.table[1, 0, 1] == f.table[0, 1] + g.table[1, 0]


def test_soft_truncation():
    x = np.array([-5.0, -1.5, -0.5, 0.0, 0.7, 1.0, 1.5, 2.0, 3.0])
    y = O.soft_truncation(x, 1.0)
    np.testing.assert_allclose(y, [0, -0.5, -0.5, 0, 0.7, 1.0, 0.5, 0.0, 0.0])
    assert np.all(np.abs(y) <= 1.0)


def test_cutback_and_recenter(small_random):
    assert O.cutback(1.0, 100) == int(np.ceil(np.log(100)))
    rng = np.random.default_rng(5)
    f = _obs(rng, 6, 3, 0)
    g = O.recenter_to_future(f, small_random, 0.2, 10)
    assert g.lo == 6 - O.cutback(0.2, 10)
    assert O.recenter_to_future(f, small_random, 5.0, 10) is f


def test_holder_observable():
    f = O.holder_average_observable({"alpha": 0.5, "envelope": [1.0, 2.0], "radius": 2, "seed": 3})
    assert f.meta["delta"] == pytest.approx(2 ** -0.5)
    assert O.check_holder(f, 0.5, f.meta["envelope"]) <= 1.0 + 1e-12


def test_family_helpers():
    fam = O.homogeneous_family([1.0, -1.0], 0, 0, 10, start=2)
    assert fam.n == 10 and fam.stop == 12
    assert fam.at(5).j == 5
    w = fam.window(4, 3)
    assert (w.start, w.n) == (4, 3)
    s = fam.scaled(np.arange(10.0))
    assert s.at(4).table[0] == 2.0
