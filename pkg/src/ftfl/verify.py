"""Statistical self-check of the rounding engine on a random vector and family."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rounding import (
    EstimateReport,
    derive_rng,
    min_k_bound,
    random_laminar_family,
    sample_rounding,
)

Z = 3.0


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def verify_rounding(n: int, trials: int, seed: int, k: int | None = None,
                    n_sets: int = 6, n_subsets: int = 20) -> list[Check]:
    setup = derive_rng(seed, 0)
    v = setup.uniform(0.02, 0.98, size=n)
    v[setup.random(n) < 0.1] = 1.0
    fam = random_laminar_family(n, n_sets, setup)
    k = k or max(1, n // 4)
    X = sample_rounding(v, trials, seed, fam, "dependent").astype(np.int64)
    I = sample_rounding(v, trials, seed ^ 0x5DEECE66D, None, "independent").astype(np.int64)
    out = []

    p = X.mean(axis=0)
    sd = np.sqrt(v * (1 - v) / trials)
    worst = float(np.max(np.abs(p - v) - Z * sd))
    out.append(Check("marginals", worst <= 0, f"max excess over 3 sigma {worst:+.2e}"))

    tot = X.sum(axis=1)
    s = v.sum()
    ok = np.isin(tot, [math.floor(s + 1e-9), math.ceil(s - 1e-9)])
    out.append(Check("total count", bool(ok.all()), f"{int((~ok).sum())} violations"))

    bad = 0
    for S in fam.sets:
        idx = sorted(S)
        bad += int((X[:, idx].sum(axis=1) < math.floor(v[idx].sum() + 1e-9)).sum())
    out.append(Check("per-set floors", bad == 0, f"{bad} violations over {len(fam)} sets"))

    worst = -math.inf
    for _ in range(n_subsets):
        size = int(setup.integers(2, min(4, n), endpoint=True))
        idx = sorted(setup.choice(n, size=size, replace=False).tolist())
        for target, prob in ((1, float(np.prod(v[idx]))), (0, float(np.prod(1 - v[idx])))):
            emp = float((X[:, idx] == target).all(axis=1).mean())
            worst = max(worst, emp - prob - Z * math.sqrt(prob * (1 - prob) / trials))
    out.append(Check("negative correlation", worst <= 0, f"max excess over 3 sigma {worst:+.2e}"))

    worst2 = worst3 = -math.inf
    for _ in range(n_subsets):
        size = int(setup.integers(1, n, endpoint=True))
        idx = sorted(setup.choice(n, size=size, replace=False).tolist())
        dep = EstimateReport.from_samples(np.minimum(k, X[:, idx].sum(axis=1)))
        ind = EstimateReport.from_samples(np.minimum(k, I[:, idx].sum(axis=1)))
        pooled = math.hypot(dep.stderr, ind.stderr)
        worst2 = max(worst2, ind.mean - dep.mean - Z * pooled)
        bound = min_k_bound(float(v[idx].sum()), k)
        for e in (dep, ind):
            worst3 = max(worst3, bound - e.mean - Z * e.stderr)
    out.append(Check(f"dependent >= independent (k={k})", worst2 <= 0, f"max excess {worst2:+.2e}"))
    out.append(Check(f"k(1-exp(-sum/k)) bound (k={k})", worst3 <= 0, f"max excess {worst3:+.2e}"))
    return out
