"""Dependent randomized rounding guided by a laminar family.

The engine repeatedly takes the earliest-created set of the family that still
holds two or more fractional entries and couples its two lowest-indexed
fractional entries (a sum-preserving pair step). When only one fractional
entry is left anywhere it is rounded on its own.

Two code paths are provided: :func:`dependent_round` (one vector, plain
Python) and :func:`dependent_round_batch` (many trials at once, numpy). Both
draw exactly one uniform per iteration per trial, so a batch of one trial
reproduces the scalar path bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, StructureError

FRAC_TOL = 1e-9
BLOCK = 8192  # trials per RNG block in Monte Carlo estimators


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 stream for ``(seed, *key)``; distinct keys give independent streams."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def as_frac_vector(v) -> np.ndarray:
    v = np.array(v, dtype=float, copy=True).reshape(-1)
    if np.any(v < -FRAC_TOL) or np.any(v > 1 + FRAC_TOL) or not np.all(np.isfinite(v)):
        raise ContractError("entries must lie in [0, 1]")
    return _snap(v)


def _snap(v: np.ndarray) -> np.ndarray:
    v[v <= FRAC_TOL] = 0.0
    v[v >= 1.0 - FRAC_TOL] = 1.0
    return v


def is_fractional(x: float) -> bool:
    return FRAC_TOL < x < 1.0 - FRAC_TOL


# ---------------------------------------------------------------------------
# laminar families


def is_laminar(sets: Iterable[Iterable[int]]) -> bool:
    """True when every two sets are disjoint or nested."""
    ss = [frozenset(s) for s in sets]
    for a in range(len(ss)):
        for b in range(a + 1, len(ss)):
            inter = ss[a] & ss[b]
            if inter and inter != ss[a] and inter != ss[b]:
                return False
    return True


class LaminarFamily:
    """A laminar family of index sets in creation order.

    Every set must come after all of its proper subsets, so that the first set
    in creation order satisfying a condition is also inclusion-minimal among
    those satisfying it. The last set is the root.
    """

    def __init__(self, sets: Sequence[Iterable[int]]):
        self.sets = [frozenset(int(i) for i in s) for s in sets]
        if not self.sets:
            raise StructureError("family must contain at least the root set")
        if not is_laminar(self.sets):
            raise StructureError("family is not laminar")
        for a, sa in enumerate(self.sets):
            for sb in self.sets[:a]:
                if sa < sb:
                    raise StructureError(
                        f"set #{a} is a proper subset of an earlier set; children must precede parents"
                    )
        root = self.sets[-1]
        if any(not s <= root for s in self.sets):
            raise StructureError("last set must contain every other set")
        self.parent = {}
        for a, sa in enumerate(self.sets[:-1]):
            for b in range(a + 1, len(self.sets)):
                if sa <= self.sets[b]:
                    self.parent[a] = b
                    break

    @property
    def root(self) -> frozenset:
        return self.sets[-1]

    def __len__(self):
        return len(self.sets)

    def __iter__(self):
        return iter(self.sets)

    def __repr__(self):
        return f"LaminarFamily({[sorted(s) for s in self.sets]})"

    def membership(self, size: int) -> np.ndarray:
        M = np.zeros((len(self.sets), size), dtype=bool)
        for k, s in enumerate(self.sets):
            M[k, sorted(s)] = True
        return M


def random_laminar_family(size: int, n_sets: int, rng: np.random.Generator) -> LaminarFamily:
    """Random laminar family over ``range(size)`` built by merging random roots.

    Produces up to ``n_sets`` non-root sets followed by the ground set.
    """
    roots: list[frozenset] = [frozenset([i]) for i in range(size)]
    made: list[frozenset] = []
    while len(made) < n_sets and len(roots) > 2:
        k = int(rng.integers(2, min(4, len(roots) - 1), endpoint=True))
        pick = sorted(rng.choice(len(roots), size=k, replace=False).tolist())
        merged = frozenset().union(*(roots[p] for p in pick))
        roots = [r for q, r in enumerate(roots) if q not in pick] + [merged]
        made.append(merged)
    made.append(frozenset(range(size)))
    return LaminarFamily(made)


# ---------------------------------------------------------------------------
# rounding steps


def _pair(vi: float, vj: float, u: float) -> tuple[float, float]:
    eps = min(1.0 - vi, vj)
    delta = min(vi, 1.0 - vj)
    if u < delta / (eps + delta):
        a, b = vi + eps, vj - eps
    else:
        a, b = vi - delta, vj + delta
    if a <= FRAC_TOL:
        a = 0.0
    elif a >= 1.0 - FRAC_TOL:
        a = 1.0
    if b <= FRAC_TOL:
        b = 0.0
    elif b >= 1.0 - FRAC_TOL:
        b = 1.0
    return a, b


def round_pair(vi: float, vj: float, rng: np.random.Generator) -> tuple[float, float]:
    """One sum-preserving coupling step on two fractional values.

    With ``eps = min(1-vi, vj)`` and ``delta = min(vi, 1-vj)`` returns
    ``(vi+eps, vj-eps)`` with probability ``delta/(eps+delta)`` and
    ``(vi-delta, vj+delta)`` otherwise. At least one output is integral and
    each output keeps its expectation.
    """
    if not (is_fractional(vi) and is_fractional(vj)):
        raise ContractError(f"round_pair needs two fractional values, got {vi!r}, {vj!r}")
    return _pair(float(vi), float(vj), float(rng.random()))


def dependent_round(v, fam: LaminarFamily, rng: np.random.Generator) -> np.ndarray:
    """Round ``v`` to a 0/1 vector, guided by ``fam``. Returns an int8 array."""
    V = as_frac_vector(v)
    N = V.size
    if not set(range(N)) <= fam.root:
        raise ContractError("every index of v must belong to the root set")
    sets = [sorted(s) for s in fam.sets]
    while True:
        frac = [i for i in range(N) if is_fractional(V[i])]
        if not frac:
            break
        u = float(rng.random())
        if len(frac) == 1:
            i = frac[0]
            V[i] = 1.0 if u < V[i] else 0.0
            continue
        for s in sets:
            fs = [i for i in s if is_fractional(V[i])]
            if len(fs) >= 2:
                a, b = fs[0], fs[1]
                V[a], V[b] = _pair(float(V[a]), float(V[b]), u)
                break
    return V.astype(np.int8)


def dependent_round_batch(v, fam: LaminarFamily, trials: int, rng: np.random.Generator) -> np.ndarray:
    """``trials`` independent guided roundings of ``v``; shape ``(trials, N)``, int8."""
    base = as_frac_vector(v)
    N = base.size
    if not set(range(N)) <= fam.root:
        raise ContractError("every index of v must belong to the root set")
    M = fam.membership(N).T.astype(np.int32)  # (N, K)
    V = np.tile(base, (trials, 1))
    lo, hi = FRAC_TOL, 1.0 - FRAC_TOL
    while True:
        F = (V > lo) & (V < hi)
        nfrac = F.sum(axis=1)
        if not nfrac.any():
            break
        u = rng.random(trials)
        counts = F.astype(np.int32) @ M
        has2 = counts >= 2
        rows = np.nonzero(has2.any(axis=1))[0]
        if rows.size:
            k = has2[rows].argmax(axis=1)
            mask = F[rows] & M.T[k].astype(bool)
            a = mask.argmax(axis=1)
            mask[np.arange(rows.size), a] = False
            b = mask.argmax(axis=1)
            vi = V[rows, a]
            vj = V[rows, b]
            eps = np.minimum(1.0 - vi, vj)
            delta = np.minimum(vi, 1.0 - vj)
            up = u[rows] < delta / (eps + delta)
            na = np.where(up, vi + eps, vi - delta)
            nb = np.where(up, vj - eps, vj + delta)
            V[rows, a] = _snap(na)
            V[rows, b] = _snap(nb)
        single = np.nonzero(nfrac == 1)[0]
        if single.size:
            idx = F[single].argmax(axis=1)
            V[single, idx] = (u[single] < V[single, idx]).astype(float)
    return V.astype(np.int8)


def independent_round(v, rng: np.random.Generator) -> np.ndarray:
    """Round each entry to 1 with probability equal to its value, independently."""
    V = as_frac_vector(v)
    return (rng.random(V.size) < V).astype(np.int8)


def independent_round_batch(v, trials: int, rng: np.random.Generator) -> np.ndarray:
    V = as_frac_vector(v)
    return (rng.random((trials, V.size)) < V).astype(np.int8)


# ---------------------------------------------------------------------------
# functionals


def sum_s(x, S: Iterable[int]) -> float:
    x = np.asarray(x)
    idx = sorted(S)
    if idx and (idx[0] < 0 or idx[-1] >= x.shape[-1]):
        raise IndexError("index set out of range")
    if not idx:
        return 0.0 if x.ndim == 1 else np.zeros(x.shape[:-1])
    s = x[..., idx].sum(axis=-1)
    return s.item() if np.ndim(s) == 0 else s


def g_lambda(x, S: Iterable[int], lam: Sequence[float]) -> float:
    """``lam[Sum_S(x)]`` for a 0/1 vector ``x``."""
    S = list(S)
    if len(lam) != len(S) + 1:
        raise ContractError(f"lambda has length {len(lam)}, expected |S|+1 = {len(S) + 1}")
    return lam[int(round(sum_s(x, S)))]


def check_lambda_condition(lam: Sequence[float]) -> bool:
    """Discrete concavity: ``lam[r] - 2 lam[r+1] + lam[r+2] <= 0`` for all r."""
    return all(lam[r] - 2 * lam[r + 1] + lam[r + 2] <= 0 for r in range(len(lam) - 2))


def min_k_profile(k: int, s: int) -> list[int]:
    """``(0, 1, ..., k, k, ..., k)`` of length ``s + 1``."""
    return [min(k, i) for i in range(s + 1)]


def min_k_bound(total: float, k: int) -> float:
    """Lower bound ``k (1 - exp(-total / k))`` on the expected capped count."""
    return k * (1.0 - math.exp(-total / k))


@dataclass(frozen=True)
class EstimateReport:
    mean: float
    stderr: float
    trials: int

    @classmethod
    def from_samples(cls, samples) -> "EstimateReport":
        a = np.asarray(samples, dtype=float)
        t = a.size
        sd = float(a.std(ddof=1)) if t > 1 else 0.0
        return cls(mean=float(a.mean()), stderr=sd / math.sqrt(t), trials=t)


def sample_rounding(v, trials: int, seed: int, family: LaminarFamily | None = None,
                    mode: str = "dependent") -> np.ndarray:
    """``trials`` rounded vectors; block ``b`` of :data:`BLOCK` trials uses ``derive_rng(seed, b)``."""
    v = as_frac_vector(v)
    if mode == "dependent" and family is None:
        family = LaminarFamily([range(v.size)])
    out = []
    done = 0
    block = 0
    while done < trials:
        t = min(BLOCK, trials - done)
        rng = derive_rng(seed, block)
        if mode == "dependent":
            out.append(dependent_round_batch(v, family, t, rng))
        elif mode == "independent":
            out.append(independent_round_batch(v, t, rng))
        else:
            raise ValueError(f"unknown mode {mode!r}")
        done += t
        block += 1
    return np.concatenate(out, axis=0)


def estimate_min_k(v, S: Iterable[int], k: int, trials: int, seed: int,
                   family: LaminarFamily | None = None, mode: str = "dependent") -> EstimateReport:
    """Monte Carlo mean and standard error of ``min(k, Sum_S(rounded v))``."""
    X = sample_rounding(v, trials, seed, family, mode)
    idx = sorted(S)
    counts = X[:, idx].sum(axis=1) if idx else np.zeros(trials)
    return EstimateReport.from_samples(np.minimum(k, counts))
