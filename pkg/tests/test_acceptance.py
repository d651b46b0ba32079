"""End-to-end acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (also collected
into the terminal summary) and then asserts the outcome.  Runtime budgets are
part of the criteria and are checked as measured wall-clock time.

Run standalone with ``python3 tests/test_acceptance.py``.
"""
import glob
import os
import sys
import time

import numpy as np
import pytest

import markovshift
from markovshift import cli
from markovshift import decompose as D
from markovshift import limits as L
from markovshift import processes as P
from markovshift import transfer as T
from markovshift.chain import (KernelSequence, doeblin_constants, homogeneous_chain, make_chain, multi_step,
                               perturbed_chain)
from markovshift.config import build_observable, load, resolved
from markovshift.experiments import PIPELINES
from markovshift.observable import ObservableSequence, expectation, homogeneous_family

pytestmark = pytest.mark.acceptance

RESULTS = {}
Q2 = np.array([[0.9, 0.1], [0.2, 0.8]])
CONFIG_DIR = os.path.join(os.path.dirname(markovshift.__file__), "configs")


def report(k, passed, detail, elapsed=None, budget=None):
    timing = ""
    if elapsed is not None:
        timing = f" [{elapsed:.1f}s / {budget:g}s]"
        passed = passed and elapsed <= budget
    line = f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}{timing}"
    RESULTS[k] = line
    print(line)
    return passed


def mixing_chain(length=4096, buffer=8):
    return perturbed_chain(Q2, 0.05, length, seed=6, buffer=buffer)


def pm_family(chain):
    return homogeneous_family([1.0, -1.0], 0, 0, chain.n_steps + 1, chain.start)


# ---------------------------------------------------------------------------


def test_criterion_01_exact_identities():
    t0 = time.time()
    worst = {"duality": 0.0, "unit": 0.0, "bayes": 0.0, "chapman": 0.0, "orthogonality": 0.0}
    for inst in range(100):
        rng = np.random.default_rng(1000 + inst)
        d = int(rng.integers(2, 5))
        w = int(rng.integers(1, 4))
        n_steps = 24
        K = rng.dirichlet(np.ones(d), size=(n_steps, d)) * 0.8 + 0.2 / d
        ch = KernelSequence(rng.dirichlet(np.ones(d)), K / K.sum(axis=2, keepdims=True))
        j = int(rng.integers(0, n_steps - w))
        g = T.TransferState(j, rng.standard_normal((d,) * w))
        worst["duality"] = max(worst["duality"], abs(T.kappa(ch, T.apply(ch, j, g)) - T.kappa(ch, g)))
        worst["unit"] = max(worst["unit"], float(np.max(np.abs(T.apply(ch, j, T.ones(j, d, w)).values - 1))))
        bk = ch.backward
        for i in range(n_steps):
            lhs = ch.law(i)[:, None] * ch.kernel(i)
            rhs = (ch.law(i + 1)[:, None] * bk.at(i)).T
            worst["bayes"] = max(worst["bayes"], float(np.max(np.abs(lhs - rhs))))
        a = int(rng.integers(1, n_steps - 1))
        ck = multi_step(ch, 0, n_steps) - multi_step(ch, 0, a) @ multi_step(ch, a, n_steps - a)
        worst["chapman"] = max(worst["chapman"], float(np.max(np.abs(ck))))
        fam = ObservableSequence(0, w - 1, rng.standard_normal((n_steps - w,) + (d,) * w), 0)
        dec = D.martingale(fam, ch, K=None)
        vS = L.exact_variances(ch, dec.M, dec.M.start, [dec.M.n])[0]
        worst["orthogonality"] = max(worst["orthogonality"],
                                     abs(vS - D.martingale_variances(dec, ch).sum()) / max(1.0, vS))
    ok = max(worst.values()) <= 1e-9
    detail = "100 instances, max errors " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    assert report(1, ok, detail, time.time() - t0, 10)


def test_criterion_02_reverse_martingale():
    t0 = time.time()
    Q = np.array([[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.25, 0.15, 0.6]])
    ch = perturbed_chain(Q, 0.05, 400, seed=2, buffer=0)
    rng = np.random.default_rng(2)
    fam = ObservableSequence(0, 1, rng.standard_normal((399, 3, 3)), 0)
    dec = D.martingale(fam, ch, K=60)
    defect = float(D.reverse_martingale_defect(dec, ch).max())
    c1, _ = doeblin_constants(ch)
    ok = dec.gamma <= 0.8 and c1 > 0 and defect <= dec.tail_bound <= 1e-8
    detail = (f"gamma_fit={dec.gamma:.3f} C1={c1:.3f} K=60 max defect={defect:.2e} "
              f"<= certified tail={dec.tail_bound:.2e} <= 1e-8")
    assert report(2, ok, detail, time.time() - t0, 30)


def random_slow_chain(rng, seed, length=80, epsilon=0.03):
    """Perturbation of a random lazy rank-one kernel with second eigenvalue in [0.5, 0.8]."""
    lam = rng.uniform(0.5, 0.8)
    pi = 0.8 * rng.dirichlet(np.ones(3)) + 0.2 / 3
    Q = lam * np.eye(3) + (1 - lam) * np.outer(np.ones(3), pi)
    return perturbed_chain(Q, epsilon, length, seed=seed)


def test_criterion_03_rpf_decay():
    t0 = time.time()
    done, seed, worst_res, worst_gamma, min_c1, dominated = 0, 0, 0.0, 0.0, 1.0, True
    while done < 20:
        seed += 1
        rng = np.random.default_rng(seed)
        ch = random_slow_chain(rng, seed)
        c1 = doeblin_constants(ch)[0]
        if c1 < 0.05:
            continue
        g = T.TransferState(0, rng.standard_normal((3, 3)))
        dc = T.rpf_decay(ch, g, 2.0, 0.5, 40)
        worst_res = max(worst_res, dc.fit_residual)
        worst_gamma = max(worst_gamma, dc.gamma_fit)
        min_c1 = min(min_c1, c1)
        dominated &= dc.dominated()
        done += 1
    hom = T.rpf_decay(homogeneous_chain(Q2, 80), T.TransferState(0, np.array([[1.0, -0.5], [0.25, 2.0]])),
                      2.0, 0.5, 40)
    ok = dominated and worst_gamma < 1 and worst_res <= 0.1 and abs(hom.gamma_fit - 0.7) <= 0.05
    detail = (f"20 chains (min C1={min_c1:.3f}): max gamma={worst_gamma:.3f}, max residual={worst_res:.3f}, "
              f"dominated={dominated}; homogeneous gamma={hom.gamma_fit:.4f} (oracle 0.70)")
    assert report(3, ok, detail, time.time() - t0, 60)


def test_criterion_04_charfn():
    t0 = time.time()
    iid = homogeneous_chain([[0.5, 0.5], [0.5, 0.5]], 512)
    t = np.linspace(-0.2, 0.2, 21)
    grid = [32, 64, 128, 256, 512]
    ct = T.charfn(iid, homogeneous_family([1.0, -1.0], 0, 0, 512), t, 0, 512, record=grid)
    closed = max(float(np.max(np.abs(ct.values[i] - n * np.log(np.cos(t))))) for i, n in enumerate(grid))
    cfg = resolved(load(os.path.join(CONFIG_DIR, "charfn.yaml"))[0])
    ch = make_chain(cfg["chain"])
    fam, _ = build_observable(cfg["observable"], ch)
    res = PIPELINES["charfn"](cfg, ch, fam, None, 1)
    gap = res.invariants["lambda_minus_pi_bounded"]["max_diff"]
    drift = res.invariants["lambda_minus_pi_not_trending"]
    ok = closed <= 1e-10 and gap <= 1.0 and drift["passed"]
    detail = (f"iid closed-form error={closed:.1e}; mixing chain max|Lambda-Pi|={gap:.3f} <= 1.0, "
              f"drift={drift['drift']:.3f} (per n: "
              + ", ".join(f"{k}:{v:.3f}" for k, v in sorted(res.measured['max_diff'].items(), key=lambda kv: int(kv[0])))
              + ")")
    assert report(4, ok, detail, time.time() - t0, 120)


def test_criterion_05_variance_machinery():
    t0 = time.time()
    ch = mixing_chain(1024, 8)
    rng = np.random.default_rng(5)
    fam = ObservableSequence(0, 1, rng.standard_normal((ch.n_steps, 2, 2)), ch.start)
    worst = 0.0
    for n in (64, 256, 1024):
        d2 = T.derivative(lambda tt: T.charfn(ch, fam, tt, 0, n).values[0], 2)
        v = L.exact_variances(ch, fam, 0, [n])[0]
        worst = max(worst, abs(d2.value.real + v) / max(1e-6, 1e-4 * v))
    Q3 = np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.3, 0.4]])
    grid = [1024, 2048, 4096]
    bounded = growing = 0
    livsic_worst = conv_worst = 0.0
    for inst in range(20):
        c = perturbed_chain(Q3, 0.1, 4096, seed=100 + inst, buffer=8)
        r = np.random.default_rng(200 + inst)
        n = c.n_steps - 1
        H = r.standard_normal((n + 1, 3))
        cob = ObservableSequence(0, 1, H[1:, None, :] - H[:-1, :, None], c.start)
        v = D.variance_dichotomy(cob, c, grid)
        bounded += v.verdict == "bounded"
        livsic_worst = max(livsic_worst, D.livsic(cob, c).residual)
        gen = ObservableSequence(0, 1, r.standard_normal((n, 3, 3)), c.start)
        g = D.variance_dichotomy(gen, c, grid)
        growing += g.verdict == "growing"
        s = L.exact_variances(c, gen, 0, [1024, 4096])
        rate = s / np.array([1024, 4096])
        conv_worst = max(conv_worst, abs(rate[1] - rate[0]) / rate[1])
    ok = worst <= 1 and bounded == 20 and growing == 20 and conv_worst <= 0.05 and livsic_worst <= 1e-6
    detail = (f"Lambda''(0)+sigma^2 within tolerance (max ratio {worst:.2e}); dichotomy bounded {bounded}/20, "
              f"growing {growing}/20; sigma_n^2/n change over [2^10,2^12] max {conv_worst:.3f}; "
              f"Livsic residual max {livsic_worst:.1e}")
    assert report(5, ok, detail, time.time() - t0, 120)


def test_criterion_06_berry_esseen():
    t0 = time.time()
    ch = mixing_chain()
    fam = pm_family(ch)
    grid = [2 ** k for k in range(4, 13)]
    prod, gaps = [], []
    for n in grid:
        ex = L.edf_distance(fam, ch, n, "lattice-exact", k0=0)
        em = L.edf_distance(fam, ch, n, "empirical", replicas=100000, seed=6, k0=0)
        prod.append(ex.kolmogorov * ex.sigma)
        gaps.append(abs(em.kolmogorov - ex.kolmogorov) / em.band)
    slope = L.log_slope(grid, prod)
    ok = abs(slope) <= 0.15 and max(gaps) <= 1
    detail = (f"slope of log(Delta_n sigma_n)={slope:+.3f} (|.|<=0.15); empirical vs exact gap / DKW band "
              f"max {max(gaps):.2f} over {len(grid)} sizes at 1e5 replicas")
    assert report(6, ok, detail, time.time() - t0, 180)


def test_criterion_07_wasserstein():
    t0 = time.time()
    ch = mixing_chain()
    fam = pm_family(ch)
    grid = [2 ** k for k in range(4, 13)]
    vals = []
    for n in grid:
        r = L.edf_distance(fam, ch, n, "lattice-exact", k0=0, s_grid=(), b_grid=(1.0,))
        vals.append(r.wasserstein[1.0] * r.sigma)
    slope = L.log_slope(grid, vals)
    ok = abs(slope) <= 0.2 and np.all(np.isfinite(vals))
    detail = f"W1*sigma_n in [{min(vals):.3f}, {max(vals):.3f}], log-slope {slope:+.3f} (|.|<=0.2)"
    assert report(7, ok, detail, time.time() - t0, 120)


def test_criterion_08_ldp():
    t0 = time.time()
    iid = homogeneous_chain([[0.5, 0.5], [0.5, 0.5]], 4096, buffer=64)
    r_iid = L.ldp_rate(pm_family(iid), iid, [0.5], [4096], k0=0)
    e_iid = float(r_iid.empirical[-1, 0])
    err_iid = abs(e_iid - 0.1308) / 0.1308
    ch = homogeneous_chain([[0.5, 0.5], [0.7, 0.3]], 4096, buffer=64)
    rr = L.ldp_rate(pm_family(ch), ch, [0.2, 0.4], [4096], k0=0)
    errs = np.abs(rr.empirical[-1] - rr.predicted) / rr.predicted
    # the slower chain from the rate tests, for information only
    slow = homogeneous_chain(Q2, 4096, buffer=256)
    rs = L.ldp_rate(pm_family(slow), slow, [0.2, 0.4], [4096], k0=0)
    slow_err = np.abs(rs.empirical[-1] - rs.predicted) / rs.predicted
    print(f"  info: Q=[[0.9,0.1],[0.2,0.8]] relative errors {slow_err[0]:.3f}, {slow_err[1]:.3f}")
    ok = err_iid <= 0.05 and np.all(errs <= 0.05)
    detail = (f"iid eps=0.5 rate {e_iid:.5f} vs 0.1308 (err {err_iid:.3f}); chain [[0.5,0.5],[0.7,0.3]] "
              f"eps=0.2: {rr.empirical[-1, 0]:.5f} vs {rr.predicted[0]:.5f} (err {errs[0]:.3f}), "
              f"eps=0.4: {rr.empirical[-1, 1]:.5f} vs {rr.predicted[1]:.5f} (err {errs[1]:.3f})")
    assert report(8, ok, detail, time.time() - t0, 120)


def test_criterion_09_mdp():
    t0 = time.time()
    ch = homogeneous_chain([[0.5, 0.5], [0.5, 0.5]], 4096)
    rr = L.mdp_rate(homogeneous_family([1.0, -1.0], 0, 0, 4096), ch, [4096], 0.75, [0.5, 1.0])
    rel = rr.relative_error()
    ok = bool(np.all(np.abs(rel) <= 0.15))
    detail = ", ".join(f"x={x:g}: {e:.4f} vs {-x * x / 2:.3f} (rel {r:+.3f})"
                       for x, e, r in zip(rr.grid, rr.empirical[-1], rel)) + " at n=4096, tol 0.15"
    assert report(9, ok, detail, time.time() - t0, 60)


def test_criterion_10_moments():
    t0 = time.time()
    cfg = resolved(load(os.path.join(CONFIG_DIR, "moments.yaml"))[0])
    ch = make_chain(cfg["chain"])
    fam, _ = build_observable(cfg["observable"], ch)
    res = PIPELINES["moments"](cfg, ch, fam, None, 1)
    n_inst = 1 + int(cfg["parameters"]["instances"])
    ineq = {k: v for k, v in res.invariants.items() if k.startswith("inequality_")}
    finite = all(np.isfinite(v["worst_constant"]) for v in ineq.values())
    pl = res.invariants["product_moment"]
    ok = n_inst == 50 and all(v["passed"] for v in ineq.values()) and finite and pl["passed"]
    detail = (f"{n_inst} instances, worst constants "
              + ", ".join(f"{k[11:]}={v['worst_constant']:.3g}" for k, v in ineq.items())
              + f"; product moment bound m<=6 worst ratio {pl['worst_ratio']:.3f}")
    assert report(10, ok, detail, time.time() - t0, 60)


def test_criterion_11_processes():
    t0 = time.time()
    parts = {}
    one = homogeneous_chain([[1.0]], 64)
    mp = P.matprod_process([[[2.0, 1.0], [1.0, 1.0]]], one)
    lyap = expectation(mp.observable.at(mp.observable.start), one)
    parts["lyapunov"] = abs(lyap - np.log((3 + np.sqrt(5)) / 2)) <= 1e-3
    rng = np.random.default_rng(11)
    A = np.array([[2.0, 1.0], [1.0, 1.0]])
    tB = P.birkhoff_bound(A)
    excess = max(P.hilbert_metric(A @ u, A @ v) - tB * P.hilbert_metric(u, v)
                 for u, v in (rng.uniform(1e-3, 1, (2, 2)) for _ in range(1000)))
    parts["cone"] = excess <= 1e-12
    ch = homogeneous_chain([[0.7, 0.3], [0.3, 0.7]], 96, buffer=40)
    garch = P.garch_process(1.0, [0.2], [0.1], [1.0, -1.0], ch, r=6)
    iterfn = P.iterfn_process({"a": [0.5, -0.3], "b": [1.0, -1.0]}, ch, 0.0, r=8)
    linear = P.linear_process({"C": 1.0, "delta": 0.5}, [1.0, -1.0], ch, r=4)
    taus = {}
    for name, proc in (("garch", garch), ("iterfn", iterfn), ("linear", linear)):
        disc = proc.discrepancy()
        taus[name] = (disc, proc.tau)
        parts[name] = proc.certified and disc <= proc.tau
    cfg = resolved(load(os.path.join(CONFIG_DIR, "rds.yaml"))[0])
    rch = make_chain(cfg["chain"])
    rfam, _ = build_observable(cfg["observable"], rch)
    rds = PIPELINES["rds"](cfg, rch, rfam, None, 1).invariants["phase_limits_agree"]
    parts["rds"] = rds["passed"]
    ok = all(parts.values())
    detail = (f"Lyapunov {lyap:.9f} vs log eigenvalue; cone excess {excess:.1e} over 1e3 pairs; "
              + ", ".join(f"{k} disc {d:.2e} <= tau {t:.2e}" for k, (d, t) in taus.items())
              + f"; RDS phase spread {rds['spread']:.4f} <= 0.05")
    assert report(11, ok, detail, time.time() - t0, 180)


def test_criterion_12_reproducibility(tmp_path):
    t0 = time.time()
    same, total = 0, 0
    for path in sorted(glob.glob(os.path.join(CONFIG_DIR, "*.yaml"))):
        name = os.path.splitext(os.path.basename(path))[0]
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / name / rep
            code = cli.main(["run", "--config", path, "--out", str(out)])
            assert code in (0, 2)
            outs.append((out / "results.csv").read_bytes())
        total += 1
        same += outs[0] == outs[1]
    ok = same == total
    detail = f"{same}/{total} shipped configs produced byte-identical results.csv on two runs"
    assert report(12, ok, detail)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
