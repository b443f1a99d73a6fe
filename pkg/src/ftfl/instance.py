"""FTFL instances: data model, text format, metric check and generators.

Text format (whitespace separated, ``#`` comments to end of line)::

    FTFL 1
    <m> <n>
    <f_1> ... <f_m>
    <r_1> <c_11> ... <c_1m>      # one line per client
    ...

Facilities and clients are 0-based everywhere in the code; ``c[j, i]`` is the
cost of serving client ``j`` from facility ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, ParseError

MAGIC = "FTFL"
VERSION = 1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Instance:
    """An FTFL instance.

    ``f`` has shape ``(m,)``, ``c`` has shape ``(n, m)`` and ``r`` has shape
    ``(n,)``. Arrays are copied and made read-only on construction.
    """

    f: np.ndarray
    c: np.ndarray
    r: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float).reshape(-1)
        c = np.asarray(self.c, dtype=float)
        r = np.asarray(self.r)
        if c.ndim != 2:
            raise ValueError("c must be a 2-d (n, m) matrix")
        n, m = c.shape
        if m < 1 or n < 1:
            raise ValueError("need at least one facility and one client")
        if f.shape != (m,):
            raise ValueError(f"f has length {f.size}, expected m={m}")
        if r.shape != (n,):
            raise ValueError(f"r has length {r.size}, expected n={n}")
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(c)):
            raise ValueError("costs must be finite")
        if np.any(f < 0) or np.any(c < 0):
            raise ValueError("costs must be nonnegative")
        if not np.all(np.equal(np.mod(r, 1), 0)):
            raise ValueError("requirements must be integers")
        r = r.astype(np.int64)
        if np.any(r < 1):
            raise ValueError("requirements must be positive")
        if np.any(r > m):
            j = int(np.argmax(r > m))
            raise InfeasibleError(
                f"client {j} requires {int(r[j])} facilities but only {m} exist"
            )
        object.__setattr__(self, "f", _frozen(f))
        object.__setattr__(self, "c", _frozen(c))
        object.__setattr__(self, "r", _frozen(r))

    @property
    def m(self) -> int:
        return self.c.shape[1]

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def r_max(self) -> int:
        return int(self.r.max())

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.c.shape == other.c.shape
            and np.array_equal(self.f, other.f)
            and np.array_equal(self.c, other.c)
            and np.array_equal(self.r, other.r)
        )

    def __hash__(self):
        return hash((self.f.tobytes(), self.c.tobytes(), self.r.tobytes()))

    def cost(self, open_set, assign) -> float:
        """Opening plus connection cost of an integral solution."""
        total = float(sum(self.f[i] for i in open_set))
        for j, fac in enumerate(assign):
            total += float(sum(self.c[j, i] for i in fac))
        return total


# ---------------------------------------------------------------------------
# text format


def _tokens(text: str):
    """Yield (line_number, token) pairs with comments stripped."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0]
        for tok in line.split():
            yield lineno, tok


def _number(tok: str, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"expected a number, got {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {tok!r}", lineno)
    return v


def _integer(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected integer {what}, got {tok!r}", lineno) from None


def parse_instance(text: str, name: str = "") -> Instance:
    """Parse the FTFL text format into a validated :class:`Instance`."""
    toks = list(_tokens(text))
    pos = 0

    def take(what: str):
        nonlocal pos
        if pos >= len(toks):
            last = toks[-1][0] if toks else 1
            raise ParseError(f"unexpected end of input while reading {what}", last)
        item = toks[pos]
        pos += 1
        return item

    lineno, tok = take("header")
    if tok != MAGIC:
        raise ParseError(f"bad magic {tok!r}, expected {MAGIC!r}", lineno)
    lineno, tok = take("version")
    if _integer(tok, lineno, "version") != VERSION:
        raise ParseError(f"unsupported version {tok}", lineno)
    lineno, tok = take("m")
    m = _integer(tok, lineno, "m")
    lineno, tok = take("n")
    n = _integer(tok, lineno, "n")
    if m < 1 or n < 1:
        raise ParseError("m and n must be positive", lineno)

    f = np.empty(m)
    for i in range(m):
        lineno, tok = take(f"f_{i + 1}")
        f[i] = _number(tok, lineno)
    r = np.empty(n, dtype=np.int64)
    c = np.empty((n, m))
    for j in range(n):
        lineno, tok = take(f"r_{j + 1}")
        r[j] = _integer(tok, lineno, f"r_{j + 1}")
        if r[j] < 1:
            raise ParseError(f"requirement r_{j + 1} must be positive", lineno)
        for i in range(m):
            lineno, tok = take(f"c_{j + 1},{i + 1}")
            c[j, i] = _number(tok, lineno)
    if pos != len(toks):
        lineno, tok = toks[pos]
        raise ParseError(f"trailing token {tok!r} (dimension mismatch?)", lineno)
    if np.any(f < 0) or np.any(c < 0):
        raise ParseError("costs must be nonnegative")
    return Instance(f=f, c=c, r=r, name=name)


def _fmt(x: float) -> str:
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def serialize_instance(inst: Instance) -> str:
    """Canonical text form; ``parse_instance`` inverts it exactly."""
    lines = [f"{MAGIC} {VERSION}", f"{inst.m} {inst.n}"]
    lines.append(" ".join(_fmt(float(v)) for v in inst.f))
    for j in range(inst.n):
        row = " ".join(_fmt(float(v)) for v in inst.c[j])
        lines.append(f"{int(inst.r[j])} {row}")
    return "\n".join(lines)


def load_instance(path) -> Instance:
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read(), name=str(path))


def save_instance(inst: Instance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_instance(inst) + "\n")


# ---------------------------------------------------------------------------
# metric check


@dataclass
class MetricReport:
    """Violations of ``c_ij <= c_i'j + c_i'j' + c_ij' + tol``.

    Each violation is a tuple ``(i, j, i2, j2, excess)`` with 0-based indices.
    """

    violations: list = field(default_factory=list)
    tol: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)


def validate_metric(inst: Instance, tol: float = 1e-9) -> MetricReport:
    c = inst.c  # (n, m)
    report = MetricReport(tol=tol)
    for j in range(inst.n):
        # rhs[j2, i, i2] = c[j, i2] + c[j2, i2] + c[j2, i]
        rhs = c[j][None, None, :] + c[:, None, :] + c[:, :, None]
        excess = c[j][None, :, None] - rhs - tol
        for j2, i, i2 in zip(*np.nonzero(excess > 0)):
            report.violations.append(
                (int(i), j, int(i2), int(j2), float(excess[j2, i, i2] + tol))
            )
    report.violations.sort()
    return report


# ---------------------------------------------------------------------------
# generators


def _shortest_paths(w: np.ndarray) -> np.ndarray:
    d = w.copy()
    np.fill_diagonal(d, 0.0)
    for k in range(d.shape[0]):
        np.minimum(d, d[:, k, None] + d[None, k, :], out=d)
    return d


def generate(mode: str, m: int, n: int, r_max: int, seed: int) -> Instance:
    """Seeded random metric instance.

    ``euclidean``: facilities and clients uniform in the unit square, costs are
    Euclidean distances. ``uniform``: costs are the facility-client block of the
    shortest-path closure of a complete graph with U(0, 1] edge weights.
    Opening costs are U[0, 1], requirements uniform on ``1..r_max``.

    ``banded``: each client has ``r_j + 1 .. 2 r_j + 2`` near facilities at cost
    in [1, 1.3] and all others at cost in [2.7, 3]; opening costs lie in
    [2, 2.6]. Any matrix with entries in ``[a, 3a]`` is metric, and these
    instances usually have fractional LP optima, which the other two modes
    almost never do.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    if not 1 <= r_max <= m:
        raise ValueError(f"need 1 <= r_max <= m, got r_max={r_max}, m={m}")
    rng = np.random.default_rng(seed)
    if mode == "banded":
        r = rng.integers(1, r_max, endpoint=True, size=n)
        c = 3.0 - 0.3 * rng.random((n, m))
        for j in range(n):
            lo = min(int(r[j]) + 1, m)
            k = int(rng.integers(lo, min(m, 2 * int(r[j]) + 2), endpoint=True))
            near = rng.choice(m, size=k, replace=False)
            c[j, near] = 1.0 + 0.3 * rng.random(k)
        f = 2.0 * (1.0 + 0.3 * rng.random(m))
        return Instance(f=f, c=c, r=r, name=f"{mode}-m{m}-n{n}-r{r_max}-s{seed}")
    if mode == "euclidean":
        fac = rng.random((m, 2))
        cli = rng.random((n, 2))
        c = np.sqrt(((cli[:, None, :] - fac[None, :, :]) ** 2).sum(axis=2))
    elif mode == "uniform":
        k = m + n
        w = 1.0 - rng.random((k, k))  # (0, 1]
        w = np.triu(w, 1)
        w = w + w.T
        d = _shortest_paths(w)
        c = d[m:, :m].copy()
    else:
        raise ValueError(f"unknown mode {mode!r}")
    f = rng.random(m)
    r = rng.integers(1, r_max, endpoint=True, size=n)
    return Instance(f=f, c=c, r=r, name=f"{mode}-m{m}-n{n}-r{r_max}-s{seed}")
