import numpy as np
import pytest

from markovshift import processes as P
from markovshift.chain import homogeneous_chain, sample_paths
from markovshift.errors import GammaCNotLessThanOne, NonPositiveMatrix, SplitLost
from markovshift.limits import exact_variances
from markovshift.observable import expectation

Q2 = np.array([[0.9, 0.1], [0.2, 0.8]])


@pytest.fixture
def ch2():
    return homogeneous_chain(Q2, 96, buffer=40)


def test_hilbert_metric_and_diameter():
    assert P.hilbert_metric([1, 1], [1, 2]) == pytest.approx(np.log(2))
    assert P.hilbert_metric([1, 2], [2, 4]) == pytest.approx(0.0, abs=1e-15)
    assert P.projective_diameter([[2, 1], [1, 1]]) == pytest.approx(np.log(2))
    with pytest.raises(NonPositiveMatrix):
        P.projective_diameter([[1, 0], [0, 1]])


def test_birkhoff_contraction_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(20):
        A = rng.uniform(0.1, 2, (3, 3))
        t = P.birkhoff_bound(A)
        assert t == pytest.approx(np.tanh(P.projective_diameter(A) / 4))
        for _ in range(50):
            u, v = rng.uniform(0.01, 1, 3), rng.uniform(0.01, 1, 3)
            assert P.hilbert_metric(A @ u, A @ v) <= t * P.hilbert_metric(u, v) + 1e-12


def test_matprod_deterministic_exponent():
    ch = homogeneous_chain([[1.0]], 64)
    mp = P.matprod_process([[[2.0, 1.0], [1.0, 1.0]]], ch)
    est = expectation(mp.observable.at(mp.observable.start), ch)
    assert est == pytest.approx(np.log((3 + np.sqrt(5)) / 2), abs=1e-8)
    assert mp.discrepancy() <= mp.tau


def test_matprod_telescopes_to_log_norm(ch2):
    rng = np.random.default_rng(1)
    mats = rng.uniform(0.2, 1.5, (2, 2, 2))
    mp = P.matprod_process(mats, ch2, 20)
    n = 40
    a0 = mp.observable.start
    path = sample_paths(ch2, 1, (a0, a0 + n - 1 + mp.radius), seed=2).paths[0]
    incr = sum(mp.observable.tables[i][tuple(path[i: i + mp.radius + 1])] for i in range(n))
    direct = P.log_norm_path(mats, path[:n])[-1]
    assert abs(incr - direct) <= n * mp.tau + 2 * P.projective_diameter(mats[0]) + np.log(2)
    assert mp.certified


def test_lyapunov_exponent_power_iteration():
    assert P.lyapunov_exponent(np.diag([3.0, 1.0])) == pytest.approx(np.log(3))


def test_iterfn_certificate(ch2):
    proc = P.iterfn_process({"a": [0.5, -0.3], "b": [1.0, -1.0]}, ch2, 0.0, r=8)
    assert proc.certified
    assert proc.discrepancy() <= proc.tau
    assert proc.tau_of(12) < proc.tau


def test_product_moment_exact(ch2):
    res = P.product_moment_check(ch2, [0.8, 1.1], 2.0, m_max=6)
    assert res["holds"]
    assert res["worst_ratio"] <= 1.0


def test_linear_certificate(ch2):
    proc = P.linear_process({"C": 1.0, "delta": 0.5}, [1.0, -1.0], ch2, r=3)
    assert proc.tau == pytest.approx(2 * 0.5 ** 4 / (1 - 0.5))
    assert proc.discrepancy() <= proc.tau


def test_garch_certificate_and_degenerate_case():
    ch2 = homogeneous_chain([[0.7, 0.3], [0.3, 0.7]], 96, buffer=40)
    vals = [1.0, -1.0]
    assert P.gamma_c([0.2], [0.1], vals, ch2) == pytest.approx(0.3)
    proc = P.garch_process(1.0, [0.2], [0.1], vals, ch2, r=6)
    assert proc.discrepancy() <= proc.tau
    flat = P.garch_process(1.0, [0.0], [0.0], vals, ch2, r=0)
    np.testing.assert_allclose(np.abs(flat.observable.tables), 1.0)
    with pytest.raises(GammaCNotLessThanOne):
        P.garch_process(1.0, [0.6], [0.5], vals, ch2)
    with pytest.raises(ValueError):
        P.garch_process(1.0, [-0.1], [0.1], vals, ch2)


def test_lyapunov_process_diagonal_case(ch2):
    A = np.diag([2.0, 0.5])
    perts = np.array([np.diag([1.0, 0.0]), np.diag([-1.0, 0.0])])
    proc = P.lyapunov_process(A, perts, 0.05, ch2, r=4)
    # top eigenvalue of A + eps P(x) is 2 +- 0.05
    logs = np.log([2.05, 1.95])
    np.testing.assert_allclose(np.unique(np.round(proc.observable.tables, 12)), np.sort(logs), atol=1e-9)
    with pytest.raises(SplitLost):
        P.lyapunov_process(A, perts, 1.0, ch2)


def test_rds_phases_agree():
    kernels = [[[0.8, 0.2], [0.3, 0.7]], [[0.4, 0.6], [0.5, 0.5]]]
    env = {"kind": "cyclic", "pattern": [0, 1, 1]}
    tabs = [[1.0, -1.0], [0.5, 0.0]]
    lims = []
    for ph in (0, 1):
        rds = P.rds_process(env, kernels, tabs, 3072, phase=ph, buffer=8)
        f = rds.family
        lims.append(exact_variances(rds.chain, f, f.start, [3072])[0] / 3072)
    assert abs(lims[0] - lims[1]) <= 0.05 * max(lims)
    cob = P.rds_process(env, kernels, None, 512, coboundary=[[1.0, 0.0], [0.0, 2.0]], buffer=8)
    v = exact_variances(cob.chain, cob.family, cob.family.start, [128, 512])
    assert abs(v[1] - v[0]) < 1e-8 * max(1.0, v[0]) + 1e-9
