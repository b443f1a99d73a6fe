"""Acceptance criteria 1-13 at their stated tolerances.

Each test records one PASS/FAIL line, listed again in the terminal summary.
"""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from ftfl.alg import compute_gamma, coverage_samples, check_clustering, near_open_shortfall, prepare
from ftfl.instance import generate, save_instance
from ftfl.oracle import exact_opt, run_trials
from ftfl.rounding import (
    EstimateReport,
    derive_rng,
    is_laminar,
    min_k_bound,
    random_laminar_family,
    sample_rounding,
)

from helpers import mixed_instances, record

BOUND = 1.7245
T = 100_000
N = 16


def fixed_point_oracle():
    t = 1.5
    for _ in range(5000):
        t = 0.7 * t + 0.3 * (1 / math.e + 2 * math.exp(-t)) * (1 + 1 / (t - 1))
    return t


@pytest.fixture(scope="module")
def rounding_case():
    rng = derive_rng(2024, 0)
    v = rng.uniform(0.02, 0.98, N)
    fam = random_laminar_family(N, 6, rng)
    X = sample_rounding(v, T, 2024, fam).astype(np.int64)
    return v, fam, X


@pytest.fixture(scope="module")
def bed200():
    insts = mixed_instances(200, m_max=12, n_max=12, r_max=3, seed=100)
    t0 = time.perf_counter()
    preps = [prepare(inst) for inst in insts]
    return preps, time.perf_counter() - t0


@pytest.fixture(scope="module")
def runs10k(bed200):
    preps, _ = bed200
    shortfalls = infeasible = runs = 0
    for k, prep in enumerate(preps):
        for t in range(50):
            sol, yR = prep.run(derive_rng(k, t))
            shortfalls += len(near_open_shortfall(yR, prep.splits, prep.cprime, prep.inst))
            infeasible += bool(sol.problems(prep.inst))
            runs += 1
    return runs, shortfalls, infeasible


@pytest.fixture(scope="module")
def bed50():
    insts = mixed_instances(50, m_max=8, n_max=8, r_max=3, seed=200)
    out = []
    for k, inst in enumerate(insts):
        prep = prepare(inst)
        costs, failures = run_trials(prep, 2000, k)
        out.append((inst, prep, np.array(costs), failures, exact_opt(inst).cost))
    return out


def test_c01_gamma():
    times = []
    for _ in range(20):
        t0 = time.perf_counter()
        g = compute_gamma(1e-12)
        times.append(time.perf_counter() - t0)
    resid = abs(g - (1 / math.e + 2 * math.exp(-g)) * (1 + 1 / (g - 1)))
    oracle = fixed_point_oracle()
    ok = g <= BOUND and resid <= 2e-12 and round(g, 10) == round(oracle, 10) and min(times) < 1e-3
    record(1, ok, f"gamma={g:.12f} residual={resid:.1e} oracle={oracle:.12f} time={min(times) * 1e3:.3f}ms")
    assert ok


def test_c02_marginals(rounding_case):
    v, fam, X = rounding_case
    excess = np.abs(X.mean(axis=0) - v) - 3 * np.sqrt(v * (1 - v) / T)
    ok = bool((excess <= 0).all())
    record(2, ok, f"N={N} sets={len(fam)} trials={T} max excess over 3 sigma {excess.max():+.2e}")
    assert ok


def test_c03_sums(rounding_case):
    v, fam, X = rounding_case
    s = v.sum()
    tot = X.sum(axis=1)
    p2 = int((~np.isin(tot, [math.floor(s), math.ceil(s)])).sum())
    p2s = 0
    for S in fam.sets:
        idx = sorted(S)
        p2s += int((X[:, idx].sum(axis=1) < math.floor(v[idx].sum() + 1e-9)).sum())
    ok = p2 == 0 and p2s == 0
    record(3, ok, f"total violations {p2}, per-set floor violations {p2s} over {len(fam)} sets")
    assert ok


def test_c04_negative_correlation(rounding_case):
    v, _, X = rounding_case
    rng = derive_rng(2024, 1)
    worst = -math.inf
    for _ in range(50):
        idx = sorted(rng.choice(N, size=int(rng.integers(2, 5)), replace=False).tolist())
        for target, p in ((1, float(np.prod(v[idx]))), (0, float(np.prod(1 - v[idx])))):
            emp = float((X[:, idx] == target).all(axis=1).mean())
            worst = max(worst, emp - p - 3 * math.sqrt(p * (1 - p) / T))
    ok = worst <= 0
    record(4, ok, f"50 subsets, max excess over 3 sigma {worst:+.2e}")
    assert ok


@pytest.fixture(scope="module")
def triples():
    out = []
    for q in range(50):
        rng = derive_rng(3000, q)
        v = rng.uniform(0.02, 0.98, N)
        fam = random_laminar_family(N, 6, rng)
        S = sorted(rng.choice(N, size=int(rng.integers(2, N + 1)), replace=False).tolist())
        k = int(rng.integers(1, len(S)))
        dep = sample_rounding(v, T, 3000 + q, fam)[:, S].sum(axis=1)
        ind = sample_rounding(v, T, 4000 + q, mode="independent")[:, S].sum(axis=1)
        out.append((float(v[S].sum()), k, EstimateReport.from_samples(np.minimum(k, dep)),
                    EstimateReport.from_samples(np.minimum(k, ind))))
    return out


def test_c05_dependent_vs_independent(triples):
    worst = max(ind.mean - dep.mean - 3 * math.hypot(dep.stderr, ind.stderr) for _, _, dep, ind in triples)
    ok = worst <= 0
    record(5, ok, f"50 triples x {T} trials per mode, max shortfall over 3 pooled sigma {worst:+.2e}")
    assert ok


def test_c06_exponential_bound(triples):
    worst = max(min_k_bound(s, k) - e.mean - 3 * e.stderr
                for s, k, dep, ind in triples for e in (dep, ind))
    ok = worst <= 0
    record(6, ok, f"50 triples, both modes, max shortfall over 3 sigma {worst:+.2e}")
    assert ok


def test_c07_clustering(bed200):
    preps, secs = bed200
    problems = []
    clusters = nested = 0
    for p in preps:
        if not is_laminar(p.family.sets):
            problems.append(f"{p.inst.name}: not laminar")
        problems += check_clustering(p.clustering, p.splits, p.state, p.inst, p.cprime, tol=0.0)
        clusters += len(p.clustering.clusters)
        cs = p.clustering.clusters
        nested += sum(1 for a in cs for b in cs if a < b)
    ok = not problems and secs < 60
    record(7, ok, f"200 instances, {clusters} clusters ({nested} nested pairs), "
                  f"{len(problems)} violations, {secs:.1f}s")
    assert ok, problems[:5]


def test_c08_near_open(runs10k):
    runs, shortfalls, _ = runs10k
    ok = runs == 10_000 and shortfalls == 0
    record(8, ok, f"{runs} runs, {shortfalls} client shortfalls")
    assert ok


def test_c09_feasibility(runs10k, bed50):
    runs, _, infeasible = runs10k
    fails = sum(f for *_, f, _ in bed50)
    total = runs + sum(len(c) for _, _, c, _, _ in bed50)
    ok = infeasible == 0 and fails == 0
    record(9, ok, f"{total} runs, {infeasible + fails} infeasible")
    assert ok


def test_c10_guarantee_vs_lp(bed50):
    worst = -math.inf
    for _, prep, costs, _, _ in bed50:
        est = EstimateReport.from_samples(costs)
        worst = max(worst, est.mean - BOUND * prep.lp_cost - 3 * est.stderr)
    ok = worst <= 0
    ratio = max(c.mean() / p.lp_cost for _, p, c, _, _ in bed50)
    record(10, ok, f"50 instances x 2000 trials, max mean/LP {ratio:.4f}, max excess {worst:+.2e}")
    assert ok


def test_c11_sandwich(bed50):
    bad = 0
    worst = -math.inf
    for _, prep, costs, _, opt in bed50:
        if not prep.lp_cost <= opt + 1e-6 or not opt <= costs.min() + 1e-6:
            bad += 1
        est = EstimateReport.from_samples(costs)
        worst = max(worst, est.mean - BOUND * opt - 3 * est.stderr)
    ok = bad == 0 and worst <= 0
    ratio = max(costs.mean() / opt for _, _, costs, _, opt in bed50)
    record(11, ok, f"{bad} sandwich violations, max mean/OPT {ratio:.4f}, max excess {worst:+.2e}")
    assert ok


def test_c12_coverage(bed200):
    preps, _ = bed200
    chosen = [p for p in preps if p.cprime][:10]
    assert chosen
    gamma = chosen[0].gamma
    worst7 = worst8 = -math.inf
    clients = 0
    for k, prep in enumerate(chosen):
        Y = prep.round_batch(T, 5000 + k)
        cov = coverage_samples(prep, Y, derive_rng(6000 + k))
        for j, (cc, cd) in cov.items():
            rb = prep.splits[j].rbar
            e7, e8 = EstimateReport.from_samples(cc), EstimateReport.from_samples(cd)
            worst7 = max(worst7, (1 - 1 / math.e) * rb - e7.mean - 3 * e7.stderr)
            worst8 = max(worst8, (1 - math.exp(-gamma)) * rb - e8.mean - 3 * e8.stderr)
            clients += 1
    ok = worst7 <= 0 and worst8 <= 0
    record(12, ok, f"{len(chosen)} instances, {clients} clients x {T} runs, "
                   f"close shortfall {worst7:+.2e}, close+distant shortfall {worst8:+.2e}")
    assert ok


def test_c13_determinism(tmp_path):
    p = tmp_path / "det.ftfl"
    save_instance(generate("banded", 8, 8, 2, 1), p)

    def run(threads):
        env = dict(os.environ, FTFL_THREADS=str(threads))
        cmd = [sys.executable, "-m", "ftfl", "solve", str(p), "--seed", "7", "--trials", "500", "--json"]
        return subprocess.run(cmd, capture_output=True, env=env, check=True).stdout

    a, b, c = run(1), run(1), run(8)
    ok = a == b == c and len(json.loads(a)["trial_costs"]) == 500
    record(13, ok, f"two invocations and FTFL_THREADS=1 vs 8: {'identical' if ok else 'differ'} "
                   f"({len(a)} bytes)")
    assert ok
