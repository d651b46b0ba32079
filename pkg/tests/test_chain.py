import numpy as np
import pytest

from markovshift import chain as C
from markovshift.errors import HorizonExceeded, InvalidChain, NotPrimitive, ZeroMarginal

from oracles import joint_past_future, marginal, phi_reverse_events, correlation

Q2 = np.array([[0.9, 0.1], [0.2, 0.8]])


def test_invalid_kernels_rejected():
    with pytest.raises(InvalidChain):
        C.KernelSequence(np.array([0.5, 0.5]), np.array([[[0.5, 0.6], [0.5, 0.5]]]))
    with pytest.raises(InvalidChain):
        C.KernelSequence(np.array([0.5, 0.5]), np.array([[[1.2, -0.2], [0.5, 0.5]]]))
    with pytest.raises(InvalidChain):
        C.KernelSequence(np.array([0.3, 0.3]), np.array([[[0.5, 0.5], [0.5, 0.5]]]))


def test_marginals_against_recursion(small_random):
    ch = small_random
    for j in range(ch.start, ch.start + ch.n_steps + 1):
        np.testing.assert_allclose(ch.law(j), marginal(ch, j), atol=1e-14)


def test_stationary_law_two_state():
    np.testing.assert_allclose(C.stationary_law(Q2), [2 / 3, 1 / 3], atol=1e-14)


def test_bayes_reversal_and_recovery(small_random):
    ch = small_random
    bk = ch.backward
    for i in range(ch.n_steps):
        j = ch.start + i
        B = bk.at(j)
        np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
        lhs = ch.law(j)[:, None] * ch.kernel(j)
        rhs = (ch.law(j + 1)[:, None] * B).T
        np.testing.assert_allclose(lhs, rhs, atol=1e-14)
    Q = C.forward_from_backward(bk, ch.laws)
    np.testing.assert_allclose(Q, ch.kernels, atol=1e-12)


def test_zero_marginal_raises():
    ker = np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.5, 0.5], [0.5, 0.5]]])
    ch = C.KernelSequence(np.array([0.5, 0.5]), ker)
    with pytest.raises(ZeroMarginal) as ei:
        C.backward_kernels(ch)
    assert ei.value.j == 1 and ei.value.x == 1
    bk = C.backward_kernels(ch, strict=False)
    assert bk.zero_states == ((1, 1),)


def test_chapman_kolmogorov(small_random):
    ch = small_random
    for j, n, m in [(0, 2, 3), (1, 4, 2), (3, 1, 5)]:
        np.testing.assert_allclose(C.multi_step(ch, j, n + m),
                                   C.multi_step(ch, j, n) @ C.multi_step(ch, j + n, m), atol=1e-14)


def test_horizon_exceeded(small_random):
    with pytest.raises(HorizonExceeded):
        C.multi_step(small_random, 10, 5)


def test_window_law_is_path_law(small_random):
    ch = small_random
    P = C.window_law(ch, 2, 4)
    J = joint_past_future(ch, 2, 2)
    np.testing.assert_allclose(P.sum(axis=1), J, atol=1e-14)
    assert abs(P.sum() - 1) < 1e-14


def test_sampling_is_reproducible_and_thread_invariant(mixing_chain):
    a = C.sample_paths(mixing_chain, 500, (0, 50), seed=3)
    b = C.sample_paths(mixing_chain, 500, (0, 50), seed=3, threads=4)
    assert np.array_equal(a.paths, b.paths)
    c = C.sample_paths(mixing_chain, 500, (0, 50), seed=4)
    assert not np.array_equal(a.paths, c.paths)


def test_sampled_marginals_match(mixing_chain):
    ens = C.sample_paths(mixing_chain, 20000, (0, 20), seed=1)
    freq = (ens.paths[:, 20] == 0).mean()
    p = mixing_chain.law(20)[0]
    assert abs(freq - p) < 5 * np.sqrt(p * (1 - p) / 20000)


def test_mixing_coefficients_against_enumeration(small_random):
    ch = small_random
    for n in (1, 2, 3):
        J = joint_past_future(ch, 2, n)
        phi = C.mixing_coefficient(ch, "phi", n, indices=[2])
        assert abs(phi.value - phi_reverse_events(J)) < 1e-12
        psi = C.mixing_coefficient(ch, "psi", n, indices=[2])
        pa, pb = J.sum(1), J.sum(0)
        assert abs(psi.value - np.max(np.abs(J / np.outer(pa, pb) - 1))) < 1e-12
        rho = C.mixing_coefficient(ch, "rho", n, indices=[2]).value
        rng = np.random.default_rng(n)
        for _ in range(200):
            assert correlation(J, rng.standard_normal(3), rng.standard_normal(3)) <= rho + 1e-12


def test_rho_two_state_is_second_eigenvalue(two_state):
    # a reversible two-state chain has maximal correlation |lambda_2|^n
    for n in (1, 3, 5):
        r = C.mixing_coefficient(two_state, "rho", n, indices=[0]).value
        assert abs(r - 0.7 ** n) < 1e-12


def test_mixing_orderings(mixing_chain):
    ch = mixing_chain.restrict(0, 100)
    for n in (1, 4, 9):
        idx = [10, 50]
        rho = C.mixing_coefficient(ch, "rho", n, 2, 2, indices=idx).value
        phi = C.mixing_coefficient(ch, "phi", n, 2, 2, indices=idx).value
        psi = C.mixing_coefficient(ch, "psi", n, 2, 2, indices=idx).value
        assert rho <= 2 * np.sqrt(phi) + 1e-12
        assert phi <= psi + 1e-12
        v = C.mixing_coefficient(ch, "varpi", n, q=4, p=2, indices=idx)
        assert v.lower <= v.upper + 1e-12
        assert C.mixing_coefficient(ch, "varpi", n, q=2, p=2, indices=idx).value == pytest.approx(rho)


def test_doeblin_constants_homogeneous():
    ch = C.homogeneous_chain(Q2, 10)
    c1, c2 = C.doeblin_constants(ch)
    pi = C.stationary_law(Q2)
    assert c1 == pytest.approx((Q2 / pi[None]).min())
    assert c2 == pytest.approx((Q2 / pi[None]).max())


def test_perturbed_chain_stays_stochastic():
    ch = C.perturbed_chain(Q2, 0.3, 200, seed=2)
    np.testing.assert_allclose(ch.kernels.sum(axis=2), 1.0, atol=1e-12)
    assert np.all(ch.kernels >= 0)
    assert np.max(np.abs(ch.kernels - Q2)) <= 0.3 + 1e-12


def test_parry_golden_mean():
    Q, lam, u = C.parry_kernel([[1, 1], [1, 0]])
    g = (1 + np.sqrt(5)) / 2
    assert lam == pytest.approx(g)
    np.testing.assert_allclose(Q, [[1 / g, 1 / g ** 2], [1.0, 0.0]], atol=1e-12)
    with pytest.raises(NotPrimitive):
        C.parry_kernel([[0, 1], [1, 0]])


def test_environment_chain_follows_orbit():
    ks = [np.eye(2) * 0.5 + 0.25, [[0.1, 0.9], [0.6, 0.4]]]
    ch = C.make_chain({"kind": "environment", "kernels": ks, "length": 10, "buffer": 0,
                       "orbit": {"kind": "cyclic", "pattern": [0, 1, 1]}})
    om = ch.meta["omega"]
    assert list(om[:6]) == [0, 1, 1, 0, 1, 1]
    np.testing.assert_allclose(ch.kernel(1), ks[1])
    rot = C.environment_orbit({"kind": "rotation", "alpha": np.sqrt(2) - 1}, 50)
    assert set(rot) <= {0, 1}
