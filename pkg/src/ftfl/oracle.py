"""Exact enumeration solver and approximation-ratio reports."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .alg import IntegralSolution, Prepared, connect, prepare
from .errors import SizeError
from .instance import Instance
from .rounding import EstimateReport, derive_rng

MAX_EXACT_M = 20
_CHUNK = 1 << 14


def _masks(start: int, stop: int, m: int) -> np.ndarray:
    codes = np.arange(start, stop, dtype=np.int64)
    return ((codes[:, None] >> np.arange(m)) & 1).astype(bool)


def exact_opt(inst: Instance) -> IntegralSolution:
    """Optimal integral solution by enumerating every facility subset.

    Each subset of size at least ``max r_j`` is scored by assigning every
    client its ``r_j`` cheapest open facilities. Subsets whose opening cost
    alone exceeds the incumbent are skipped. Ties go to the lexicographically
    smallest sorted open set.
    """
    m, n = inst.m, inst.n
    if m > MAX_EXACT_M:
        raise SizeError(f"exact enumeration supports m <= {MAX_EXACT_M}, got m={m}")
    rmax = inst.r_max
    orders = [np.lexsort((np.arange(m), inst.c[j])) for j in range(n)]
    best_cost = math.inf
    best_set: tuple | None = None
    for start in range(1, 1 << m, _CHUNK):
        masks = _masks(start, min(start + _CHUNK, 1 << m), m)
        masks = masks[masks.sum(axis=1) >= rmax]
        if not len(masks):
            continue
        fcost = masks.astype(float) @ inst.f
        keep = fcost <= best_cost
        masks, total = masks[keep], fcost[keep]
        for j in range(n):
            o = orders[j]
            open_sorted = masks[:, o]
            used = open_sorted & (np.cumsum(open_sorted, axis=1) <= inst.r[j])
            total = total + used.astype(float) @ inst.c[j, o]
        if not len(total):
            continue
        lo = total.min()
        if lo > best_cost:
            continue
        for row in np.nonzero(total == lo)[0]:
            cand = tuple(int(i) for i in np.nonzero(masks[row])[0])
            if lo < best_cost or best_set is None or cand < best_set:
                best_cost, best_set = float(lo), cand
    sol = connect(inst, best_set)
    return sol


@dataclass
class RatioReport:
    instance: str
    m: int
    n: int
    rmax: int
    lp_cost: float
    opt_cost: float | None
    trials: int
    alg_mean: float
    alg_stderr: float
    ratio_lp: float
    ratio_opt: float | None
    feas_failures: int
    costs: list = field(default_factory=list, repr=False)
    min_cost: float = math.nan


def _workers() -> int:
    raw = os.environ.get("FTFL_THREADS", "0").strip() or "0"
    k = int(raw)
    return k if k > 0 else (os.cpu_count() or 1)


def run_trials(prep: Prepared, trials: int, seed: int, workers: int | None = None) -> tuple[list, int]:
    """Costs of ``trials`` runs (trial ``t`` uses ``derive_rng(seed, t)``) and the feasibility-failure count.

    Results are ordered by trial index regardless of ``workers``.
    """
    def one(t):
        sol, _ = prep.run(derive_rng(seed, t))
        return sol.cost, bool(sol.problems(prep.inst))

    workers = workers or _workers()
    if workers <= 1 or trials < 64:
        res = [one(t) for t in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(one, range(trials), chunksize=max(1, trials // (4 * workers))))
    return [c for c, _ in res], sum(bad for _, bad in res)


def ratio_report(inst: Instance, trials: int, seed: int, with_exact: bool = True,
                 gamma: float | None = None, workers: int | None = None,
                 prep: Prepared | None = None) -> RatioReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    prep = prep or prepare(inst, gamma)
    costs, failures = run_trials(prep, trials, seed, workers)
    est = EstimateReport.from_samples(costs)
    opt = None
    if with_exact and inst.m <= MAX_EXACT_M:
        opt = exact_opt(inst).cost
    lp = prep.lp_cost
    return RatioReport(
        instance=inst.name, m=inst.m, n=inst.n, rmax=inst.r_max, lp_cost=lp, opt_cost=opt,
        trials=trials, alg_mean=est.mean, alg_stderr=est.stderr,
        ratio_lp=est.mean / lp if lp > 0 else math.nan,
        ratio_opt=(est.mean / opt if opt and opt > 0 else None) if opt is not None else None,
        feas_failures=failures, costs=costs, min_cost=min(costs),
    )
