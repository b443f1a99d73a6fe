"""The rounding pipeline: scale, split, cluster, round, connect.

Stages 1-3 (LP, scaling, clustering) are deterministic and computed once by
:func:`prepare`; only the opening step is random, so Monte Carlo trials share
one :class:`Prepared` object and call :meth:`Prepared.run` with their own RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ContractError, InfeasibleError, InternalConsistencyError
from .instance import Instance, validate_metric
from .lp import FractionalSolution, LpBackend, build_lp, canonicalize, snap01, solve_lp
from .rounding import LaminarFamily, dependent_round, derive_rng, is_laminar, sample_rounding

TOL = 1e-9
CHECK_TOL = 1e-7


def _gamma_gap(g: float) -> float:
    return (1.0 / math.e + 2.0 * math.exp(-g)) * (1.0 + 1.0 / (g - 1.0)) - g


def compute_gamma(tol: float = 1e-12) -> float:
    """Root in (1, 2) of ``g = (1/e + 2 e^-g)(1 + 1/(g-1))`` by bisection."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo, hi = 1.0 + 1e-12, 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _gamma_gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@lru_cache(maxsize=None)
def default_gamma() -> float:
    return compute_gamma(1e-12)


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScaledState:
    gamma: float
    ybar: np.ndarray  # (m,) residual fractional openings, all < 1
    xbar: np.ndarray  # (n, m) residual fractional connections
    ytilde: np.ndarray  # (m,) 0/1 pre-opened
    xtilde: np.ndarray  # (n, m) 0/1 pre-connected
    rbar: np.ndarray  # (n,) residual requirements
    special: list  # per client: facility index or None


def scale_and_preopen(sol: FractionalSolution, inst: Instance, gamma: float) -> ScaledState:
    """Scale by ``gamma``, open every facility that reaches 1 and pre-connect every saturated pair."""
    y = snap01(sol.y)
    x = snap01(sol.x)
    yhat = snap01(np.minimum(1.0, gamma * y))
    xhat = snap01(np.minimum(1.0, gamma * x))
    ytilde = (yhat == 1.0).astype(np.int8)
    ybar = np.where(ytilde == 1, 0.0, yhat)
    saturated = xhat == 1.0
    if np.any(saturated & (ytilde == 0)[None, :]):
        raise InternalConsistencyError("saturated pair at a facility that is not pre-opened", "scale")
    # a client may have more than r_j saturated pairs; keep its r_j closest
    xtilde = np.zeros_like(xhat, dtype=np.int8)
    for j in range(inst.n):
        sat = np.nonzero(saturated[j])[0]
        if sat.size > inst.r[j]:
            sat = sat[np.lexsort((sat, inst.c[j, sat]))][: inst.r[j]]
        xtilde[j, sat] = 1
    xbar = np.where(saturated, 0.0, xhat)
    rbar = inst.r - xtilde.sum(axis=1)
    special = []
    for j in range(inst.n):
        cand = np.nonzero((ytilde == 1) & (xbar[j] > 0) & (xbar[j] < 1))[0]
        if cand.size > 1:
            raise InternalConsistencyError(
                f"client {j} has {cand.size} special facilities (input not canonical?)", "scale"
            )
        special.append(int(cand[0]) if cand.size else None)
    st = ScaledState(gamma, ybar, xbar, ytilde, xtilde, rbar.astype(np.int64), special)
    problems = check_scaled(st)
    if problems:
        raise InternalConsistencyError("; ".join(problems), "scale")
    return st


def check_scaled(st: ScaledState, tol: float = CHECK_TOL) -> list[str]:
    out = []
    if np.any((st.ytilde == 1) & (st.ybar != 0)):
        out.append("pre-opened facility keeps residual opening")
    if np.any((st.xtilde == 1) & (st.xbar != 0)):
        out.append("pre-connected pair keeps residual connection")
    if np.any(st.rbar < 0):
        out.append("negative residual requirement")
    if np.any(st.ybar >= 1):
        out.append("residual opening not fractional")
    for j in np.nonzero(st.rbar > 0)[0]:
        if st.xbar[j].sum() < st.gamma * st.rbar[j] - tol:
            out.append(f"client {j}: residual mass {st.xbar[j].sum():.6g} < gamma*rbar")
    return out


# ---------------------------------------------------------------------------
# close / distant split


@dataclass
class ClientSplit:
    client: int
    rbar: int
    order: list  # facilities with xbar > 0 by (distance, index)
    xc: np.ndarray  # close part of xbar row
    xd: np.ndarray  # distant part
    close: tuple
    distant: tuple
    boundary: int | None  # facility both close and distant
    d: float
    d_close: float
    d_distant: float
    d_max: float
    R: float


def split_close_distant(st: ScaledState, inst: Instance) -> dict[int, ClientSplit]:
    """Close/distant split for every client with positive residual requirement."""
    out = {}
    for j in range(inst.n):
        rb = int(st.rbar[j])
        if rb <= 0:
            continue
        out[j] = split_row(st.xbar[j], inst.c[j], rb, client=j)
    return out


def split_row(row: np.ndarray, dist: np.ndarray, rbar: int, client: int = -1) -> ClientSplit:
    row = np.asarray(row, dtype=float)
    dist = np.asarray(dist, dtype=float)
    m = row.size
    order = [int(i) for i in np.lexsort((np.arange(m), dist)) if row[i] > 0]
    if row.sum() < rbar - CHECK_TOL:
        raise InternalConsistencyError(
            f"client {client}: residual mass {row.sum():.6g} below rbar={rbar}", "split"
        )
    xc = np.zeros(m)
    cum = 0.0
    k = order[-1]
    for i in order:
        if cum + row[i] >= rbar - TOL:
            xc[i] = min(row[i], rbar - cum)
            k = i
            break
        xc[i] = row[i]
        cum += row[i]
    xd = row - xc
    xd[xd <= TOL] = 0.0
    close = tuple(i for i in order if xc[i] > TOL)
    distant = tuple(i for i in order if xd[i] > TOL)
    both = set(close) & set(distant)
    sx = row.sum()
    d = float(dist @ row / sx)
    d_close = float(dist @ xc / xc.sum())
    d_distant = float(dist @ xd / xd.sum()) if xd.sum() > 0 else math.nan
    R = (d - d_close) / d if d > 0 else 0.0
    return ClientSplit(
        client=client, rbar=rbar, order=order, xc=xc, xd=xd, close=close, distant=distant,
        boundary=next(iter(both)) if both else None, d=d, d_close=d_close,
        d_distant=d_distant, d_max=float(dist[k]), R=R,
    )


def check_split(sp: ClientSplit, xbar_row: np.ndarray, gamma: float, tol: float = CHECK_TOL) -> list[str]:
    out = []
    j = sp.client
    if abs(sp.xc.sum() - sp.rbar) > tol:
        out.append(f"client {j}: close mass {sp.xc.sum():.9g} != rbar {sp.rbar}")
    if np.abs(sp.xc + sp.xd - xbar_row).max() > tol:
        out.append(f"client {j}: close + distant != xbar")
    if len(set(sp.close) & set(sp.distant)) > 1:
        out.append(f"client {j}: more than one facility both close and distant")
    if not -tol <= sp.R <= 1 + tol:
        out.append(f"client {j}: R={sp.R} outside [0, 1]")
    if sp.distant:
        if sp.d_max > sp.d_distant + tol:
            out.append(f"client {j}: d_max {sp.d_max} > distant average {sp.d_distant}")
        bound = sp.d * (1 + sp.R / (gamma - 1))
        if sp.d_distant > bound + tol * max(1.0, bound):
            out.append(f"client {j}: distant average {sp.d_distant} exceeds {bound}")
    return out


def classify_clients(st: ScaledState, splits: dict[int, ClientSplit]) -> tuple[list[int], list[int]]:
    """Split active clients into special ones and the clustering set."""
    special, cprime = [], []
    for j in sorted(splits):
        sp = splits[j]
        s = st.special[j]
        if sp.rbar == 1 and s is not None and s in sp.close:
            special.append(j)
        else:
            cprime.append(j)
    for j in cprime:
        s = st.special[j]
        if s is not None and s in splits[j].close:
            raise InternalConsistencyError(
                f"client {j} (rbar={splits[j].rbar}) has its special facility {s} among its close "
                f"facilities; gamma={st.gamma} is too small for this instance",
                "classify",
            )
    return special, cprime


# ---------------------------------------------------------------------------
# clustering


@dataclass
class Clustering:
    family: LaminarFamily
    clusters: list  # non-root clusters in creation order
    centers: list  # client that created each cluster
    witnesses: dict  # client -> disjoint clusters covering its residual requirement


def _mass(ybar: np.ndarray, S) -> float:
    return math.fsum(ybar[i] for i in S)


def _floor(v: float) -> int:
    return int(math.floor(v + TOL))


def _frac(v: float) -> float:
    return max(0.0, v - _floor(v))


def _minimal_cover(A: list, ybar: np.ndarray, need: int) -> list:
    """Inclusion-minimal subfamily of ``A`` whose fractional parts sum to ``need``.

    Greedy by decreasing fractional part (ties: smallest member), then a single
    removal pass from the smallest contribution upward.
    """
    items = sorted(((_frac(_mass(ybar, S)), min(S), S) for S in A), key=lambda t: (-t[0], t[1]))
    chosen, total = [], 0.0
    for fr, _, S in items:
        if total >= need - TOL:
            break
        if fr <= 0:
            break
        chosen.append((fr, S))
        total += fr
    if total < need - TOL:
        raise InternalConsistencyError(
            f"fractional mass {total:.9g} cannot cover residual requirement {need}", "cluster"
        )
    for fr, S in list(reversed(chosen)):
        if total - fr >= need - TOL:
            chosen.remove((fr, S))
            total -= fr
    return [S for _, S in chosen]


def build_clusters(splits: dict[int, ClientSplit], st: ScaledState, cprime: list[int],
                   check: bool = True) -> Clustering:
    ybar = st.ybar
    m = ybar.size
    A = {j: [frozenset([i]) for i in splits[j].close] for j in cprime}
    B = {j: [] for j in cprime}

    def rr(j):
        return splits[j].rbar - sum(_floor(_mass(ybar, S)) for S in A[j] + B[j])

    def slack(j):
        return math.fsum(_frac(_mass(ybar, S)) for S in A[j]) - rr(j)

    clusters, centers = [], []
    cluster_set = set()
    witnesses = {}
    while True:
        active = [j for j in cprime if rr(j) > 0]
        if not active:
            break
        j = min(active, key=lambda q: (splits[q].d_max, q))
        need = rr(j)
        before = {q: slack(q) for q in active if q != j} if check else {}
        X = _minimal_cover(A[j], ybar, need)
        Xs = set(X)
        S_new = frozenset().union(*X)
        clusters.append(S_new)
        centers.append(j)
        cluster_set.add(S_new)
        A[j] = [S for S in A[j] if S not in Xs] + [S_new]
        for q in active:
            if q == j:
                continue
            hit = sum(1 for S in A[q] if S in Xs)
            if hit == len(X):
                A[q] = [S for S in A[q] if S not in Xs] + [S_new]
            elif hit > 0:
                A[q] = [S for S in A[q] if S not in Xs]
                B[q] = [S for S in B[q] if not (S & S_new)] + [S_new]
        if check:
            for q, old in before.items():
                if slack(q) < old - CHECK_TOL:
                    raise InternalConsistencyError(
                        f"client {q}: spare fractional mass decreased ({old:.9g} -> {slack(q):.9g})",
                        "cluster",
                    )
            for q in active:
                fam = A[q] + B[q]
                seen = set()
                for S in fam:
                    if seen & S:
                        raise InternalConsistencyError(f"client {q}: overlapping sets in A/B", "cluster")
                    seen |= S
        for q in active:
            if rr(q) <= 0:
                witnesses[q] = [S for S in A[q] + B[q] if S in cluster_set]
    family = LaminarFamily(clusters + [frozenset(range(m))])
    return Clustering(family=family, clusters=clusters, centers=centers, witnesses=witnesses)


def check_clustering(cl: Clustering, splits: dict[int, ClientSplit], st: ScaledState,
                     inst: Instance, cprime: list[int], tol: float = TOL) -> list[str]:
    """Independent validation of laminarity and the per-client cluster guarantee."""
    out = []
    sets = [frozenset(s) for s in cl.family.sets]
    if not is_laminar(sets):
        out.append("family not laminar")
    if sets[-1] != frozenset(range(inst.m)):
        out.append("last cluster is not the full facility set")
    members = set(sets[:-1])
    pre_opened = {i for i in range(inst.m) if st.ytilde[i] == 1}
    for S in sets[:-1]:
        if S & pre_opened:
            out.append(f"pre-opened facility inside cluster {sorted(S)}")
    for j in cprime:
        W = cl.witnesses.get(j)
        if W is None:
            out.append(f"client {j}: no witness clusters")
            continue
        seen = set()
        for S in W:
            if S not in members:
                out.append(f"client {j}: witness {sorted(S)} not a cluster")
            if seen & S:
                out.append(f"client {j}: witness clusters overlap")
            seen |= S
        radius = 3 * splits[j].d_max
        far = [i for i in seen if inst.c[j, i] > radius + tol * max(1.0, radius)]
        if far:
            out.append(f"client {j}: facilities {far} beyond 3*d_max")
        total = sum(int(math.floor(sum(st.ybar[i] for i in S) + TOL)) for S in W)
        if total < splits[j].rbar:
            out.append(f"client {j}: guaranteed openings {total} < rbar {splits[j].rbar}")
    return out


# ---------------------------------------------------------------------------
# rounding and connection


def round_openings(st: ScaledState, fam: LaminarFamily, rng: np.random.Generator) -> np.ndarray:
    return dependent_round(st.ybar, fam, rng)


def near_open_shortfall(yR: np.ndarray, splits: dict[int, ClientSplit], cprime: list[int],
                        inst: Instance, tol: float = TOL) -> list[int]:
    """Clients in ``cprime`` with fewer than rbar opened facilities within 3*d_max."""
    bad = []
    for j in cprime:
        radius = 3 * splits[j].d_max
        near = inst.c[j] <= radius + tol * max(1.0, radius)
        if int((yR.astype(bool) & near).sum()) < splits[j].rbar:
            bad.append(j)
    return bad


@dataclass
class IntegralSolution:
    open: tuple
    assign: list  # per client: tuple of facility indices
    cost: float

    def problems(self, inst: Instance, tol: float = 1e-9) -> list[str]:
        out = []
        opened = set(self.open)
        for j, fac in enumerate(self.assign):
            if len(fac) != inst.r[j]:
                out.append(f"client {j}: {len(fac)} facilities, needs {inst.r[j]}")
            if len(set(fac)) != len(fac):
                out.append(f"client {j}: repeated facility")
            if not set(fac) <= opened:
                out.append(f"client {j}: assigned to a closed facility")
        c = inst.cost(self.open, self.assign)
        if abs(c - self.cost) > tol * max(1.0, abs(c)):
            out.append("cost mismatch")
        return out


def connect(inst: Instance, open_set) -> IntegralSolution:
    """Connect every client to its ``r_j`` cheapest open facilities (ties by index)."""
    mask = np.zeros(inst.m, dtype=bool)
    mask[list(open_set)] = True
    opened = np.nonzero(mask)[0]
    assign = []
    total = float(inst.f[opened].sum())
    for j in range(inst.n):
        rj = int(inst.r[j])
        if opened.size < rj:
            raise InfeasibleError(f"client {j} needs {rj} open facilities, only {opened.size} open")
        cj = inst.c[j, opened]
        pick = opened[np.lexsort((opened, cj))[:rj]]
        assign.append(tuple(int(i) for i in pick))
        total += float(inst.c[j, pick].sum())
    return IntegralSolution(open=tuple(int(i) for i in opened), assign=assign, cost=total)


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class Prepared:
    """Deterministic stages of the pipeline, shared by all random trials."""

    inst: Instance
    gamma: float
    lp: FractionalSolution
    state: ScaledState
    splits: dict
    special_clients: list
    cprime: list
    clustering: Clustering
    check: bool = True
    _diag: dict = field(default_factory=dict, repr=False)

    @property
    def lp_cost(self) -> float:
        return self.lp.objective

    @property
    def family(self) -> LaminarFamily:
        return self.clustering.family

    def open_set(self, yR: np.ndarray) -> np.ndarray:
        return np.nonzero((self.state.ytilde == 1) | (np.asarray(yR) == 1))[0]

    def run(self, rng: np.random.Generator) -> tuple[IntegralSolution, np.ndarray]:
        yR = round_openings(self.state, self.family, rng)
        if self.check:
            bad = near_open_shortfall(yR, self.splits, self.cprime, self.inst)
            if bad:
                raise InternalConsistencyError(f"clients {bad} lack nearby open facilities", "round")
        try:
            sol = connect(self.inst, self.open_set(yR))
        except InfeasibleError as e:
            raise InternalConsistencyError(str(e), "connect") from e
        if self.check:
            problems = sol.problems(self.inst)
            if problems:
                raise InternalConsistencyError("; ".join(problems), "connect")
        return sol, yR

    def round_batch(self, trials: int, seed: int) -> np.ndarray:
        """``trials`` guided roundings of the residual openings, shape ``(trials, m)``."""
        return sample_rounding(self.state.ybar, trials, seed, self.family)

    def diagnostics(self) -> dict:
        clients = []
        for j in range(self.inst.n):
            sp = self.splits.get(j)
            clients.append({
                "client": j,
                "r": int(self.inst.r[j]),
                "rbar": int(self.state.rbar[j]),
                "special": j in self.special_clients,
                "d_max": sp.d_max if sp else None,
                "R": sp.R if sp else None,
            })
        return {
            "gamma": self.gamma,
            "lp_cost": self.lp_cost,
            "preopened": int(self.state.ytilde.sum()),
            "cluster_count": len(self.clustering.clusters),
            "cluster_sizes": [len(S) for S in self.clustering.clusters],
            "clients": clients,
        }


def prepare(inst: Instance, gamma: float | None = None, *, metric_check: bool = True,
            backend: LpBackend | None = None, check: bool = True, tol: float = TOL) -> Prepared:
    """Run the deterministic stages: LP, canonicalization, scaling, split, clustering."""
    if gamma is None:
        gamma = default_gamma()
    if not 1.0 < gamma < 2.0:
        raise ContractError(f"gamma must lie in (1, 2), got {gamma}")
    if metric_check:
        rep = validate_metric(inst, tol=1e-9)
        if not rep.ok:
            i, j, i2, j2, ex = rep.violations[0]
            raise ContractError(
                f"instance is not metric ({len(rep)} violations, e.g. c[{i},{j}] exceeds the "
                f"path via facility {i2} and client {j2} by {ex:.3g})"
            )
    sol = canonicalize(solve_lp(build_lp(inst), tol, backend), inst)
    st = scale_and_preopen(sol, inst, gamma)
    splits = split_close_distant(st, inst)
    if check:
        problems = [p for j, sp in splits.items() for p in check_split(sp, st.xbar[j], gamma)]
        if problems:
            raise InternalConsistencyError("; ".join(problems), "split")
    special, cprime = classify_clients(st, splits)
    cl = build_clusters(splits, st, cprime, check=check)
    if check:
        problems = check_clustering(cl, splits, st, inst, cprime)
        if problems:
            raise InternalConsistencyError("; ".join(problems), "cluster")
    return Prepared(inst, gamma, sol, st, splits, special, cprime, cl, check)


def run_alg(inst: Instance, seed: int, gamma: float | None = None, **kw) -> tuple[IntegralSolution, dict]:
    """One full run of the algorithm; deterministic given ``seed``."""
    prep = prepare(inst, gamma, **kw)
    sol, yR = prep.run(derive_rng(seed))
    diag = prep.diagnostics()
    diag["cost"] = sol.cost
    diag["opened_by_rounding"] = int(np.asarray(yR).sum())
    return sol, diag


def coverage_samples(prep: Prepared, Y: np.ndarray, rng: np.random.Generator) -> dict[int, tuple]:
    """Per-client capped counts of open close and close-or-distant facilities.

    ``Y`` holds rounding outcomes ``(trials, m)``. A facility that is both close
    and distant counts as close only when a coin with bias ``xc/xbar`` lands
    heads; the coin exists only here, never in the algorithm itself.
    Returns ``{j: (min(rbar, #close open), min(rbar, #close-or-distant open))}``.
    """
    opened = (Y == 1) | (prep.state.ytilde[None, :] == 1)
    out = {}
    for j in prep.cprime:
        sp = prep.splits[j]
        close = [i for i in sp.close if i != sp.boundary]
        cnt_c = opened[:, close].sum(axis=1) if close else np.zeros(len(Y), dtype=int)
        if sp.boundary is not None:
            b = sp.boundary
            p = sp.xc[b] / prep.state.xbar[j, b]
            coin = rng.random(len(Y)) < p
            cnt_c = cnt_c + (opened[:, b] & coin)
        cd = sorted(set(sp.close) | set(sp.distant))
        cnt_cd = opened[:, cd].sum(axis=1)
        out[j] = (np.minimum(sp.rbar, cnt_c), np.minimum(sp.rbar, cnt_cd))
    return out
