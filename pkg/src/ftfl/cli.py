"""Command-line interface.

Exit codes: 0 success, 1 invalid or infeasible input (including usage
errors), 2 internal-consistency or solver failure, 3 statistical check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from . import __version__
from .alg import default_gamma, prepare
from .errors import FTFLError, InternalConsistencyError, SolverError
from .instance import generate, load_instance, serialize_instance
from .lp import build_lp, solve_lp
from .oracle import exact_opt, ratio_report, run_trials
from .rounding import EstimateReport

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL, EXIT_STATS = 0, 1, 2, 3

CSV_COLUMNS = [
    "instance", "m", "n", "rmax", "lp_cost", "opt_cost", "trials",
    "alg_mean", "alg_stderr", "ratio_lp", "ratio_opt", "feas_failures",
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_csv(reports, path) -> None:
    """One row per report, columns in :data:`CSV_COLUMNS` order."""
    if not reports:
        raise ValueError("no reports to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rep in reports:
            w.writerow([_num(getattr(rep, col)) for col in CSV_COLUMNS])


def emit_json(record: dict, dest) -> None:
    """Write ``record`` as one JSON object to a path or an open text stream."""
    text = json.dumps(record, indent=2, allow_nan=False) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        Path(dest).write_text(text, encoding="utf-8")


def solve_record(path: str, seed: int, trials: int, gamma: float | None,
                 metric_check: bool = True, tol: float = 1e-9) -> dict:
    inst = load_instance(path)
    prep = prepare(inst, gamma, metric_check=metric_check, tol=tol)
    costs, failures = run_trials(prep, trials, seed)
    est = EstimateReport.from_samples(costs)
    diag = prep.diagnostics()
    lp = prep.lp_cost
    return {
        "instance": str(path),
        "seed": seed,
        "trials": trials,
        "gamma": diag["gamma"],
        "lp_cost": lp,
        "preopened": diag["preopened"],
        "cluster_count": diag["cluster_count"],
        "cluster_sizes": diag["cluster_sizes"],
        "clients": [
            {"client": c["client"], "r": c["r"], "rbar": c["rbar"], "special": c["special"],
             "d_max": c["d_max"], "R": c["R"]}
            for c in diag["clients"]
        ],
        "trial_costs": costs,
        "mean": est.mean,
        "stderr": est.stderr,
        "ratio_lp": est.mean / lp if lp > 0 else None,
        "feas_failures": failures,
    }


def _cmd_solve(a) -> int:
    rec = solve_record(a.file, a.seed, a.trials, a.gamma, not a.no_metric_check, a.tol)
    if a.json:
        emit_json(rec, a.out if a.out else sys.stdout)
    else:
        print(f"instance   {rec['instance']}")
        print(f"gamma      {rec['gamma']:.10f}")
        print(f"lp cost    {rec['lp_cost']:.10g}")
        print(f"clusters   {rec['cluster_count']}  pre-opened {rec['preopened']}")
        print("trial costs:")
        for t, c in enumerate(rec["trial_costs"]):
            print(f"  {t:6d}  {c:.10g}")
        print(f"mean       {rec['mean']:.10g} +/- {rec['stderr']:.3g}")
        if rec["ratio_lp"] is not None:
            print(f"mean / lp  {rec['ratio_lp']:.6f}")
    return EXIT_OK if rec["feas_failures"] == 0 else EXIT_INTERNAL


def _cmd_lp(a) -> int:
    inst = load_instance(a.file)
    sol = solve_lp(build_lp(inst), a.tol)
    print(f"objective {sol.objective:.12g}")
    for i, v in enumerate(sol.y):
        if v > a.tol:
            print(f"y[{i}] = {v:.12g}")
    for j in range(inst.n):
        for i in range(inst.m):
            if sol.x[j, i] > a.tol:
                print(f"x[{i},{j}] = {sol.x[j, i]:.12g}")
    return EXIT_OK


def _cmd_exact(a) -> int:
    inst = load_instance(a.file)
    sol = exact_opt(inst)
    print(f"OPT {sol.cost:.12g}")
    print("open " + " ".join(str(i) for i in sol.open))
    return EXIT_OK


def _cmd_gen(a) -> int:
    inst = generate(a.mode, a.m, a.n, a.rmax, a.seed)
    text = serialize_instance(inst) + "\n"
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_verify(a) -> int:
    from .verify import verify_rounding

    checks = verify_rounding(a.n, a.trials, a.seed, a.k)
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{c.name:<{width}}  {'PASS' if c.passed else 'FAIL'}  {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_STATS


def _cmd_bench(a) -> int:
    files = sorted(p for p in Path(a.dir).iterdir() if p.is_file() and p.suffix == ".ftfl")
    if not files:
        print(f"no .ftfl files in {a.dir}", file=sys.stderr)
        return EXIT_INPUT
    reports = []
    for p in files:
        inst = load_instance(p)
        rep = ratio_report(inst, a.trials, a.seed, with_exact=not a.no_exact, gamma=a.gamma)
        rep.instance = p.name
        reports.append(rep)
        print(f"{p.name}: lp {rep.lp_cost:.6g} mean {rep.alg_mean:.6g} ratio {rep.ratio_lp:.4f}")
    emit_csv(reports, a.out)
    return EXIT_OK if all(r.feas_failures == 0 for r in reports) else EXIT_INTERNAL


def _gamma_arg(s: str) -> float:
    g = float(s)
    if not 1.0 < g < 2.0:
        raise argparse.ArgumentTypeError("gamma must lie in (1, 2)")
    return g


def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ftfl", description="Fault-tolerant facility location by dependent LP rounding.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="run the rounding algorithm on an instance")
    s.add_argument("file")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=_positive, default=1000)
    s.add_argument("--gamma", type=_gamma_arg, default=None,
                   help=f"scaling constant (default {default_gamma():.10f})")
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--json", action="store_true", help="emit one JSON record")
    s.add_argument("--out", help="write JSON here instead of stdout")
    s.add_argument("--no-metric-check", action="store_true")
    s.set_defaults(func=_cmd_solve)

    s = sub.add_parser("lp", help="solve the LP relaxation")
    s.add_argument("file")
    s.add_argument("--tol", type=float, default=1e-9)
    s.set_defaults(func=_cmd_lp)

    s = sub.add_parser("exact", help="exact optimum by enumeration (m <= 20)")
    s.add_argument("file")
    s.set_defaults(func=_cmd_exact)

    s = sub.add_parser("gen", help="generate a seeded random metric instance")
    s.add_argument("--mode", choices=["euclidean", "uniform", "banded"], default="euclidean")
    s.add_argument("--m", type=_positive, required=True)
    s.add_argument("--n", type=_positive, required=True)
    s.add_argument("--rmax", type=_positive, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_gen)

    s = sub.add_parser("verify-rounding", help="statistical checks of the rounding engine")
    s.add_argument("--n", type=_positive, default=16)
    s.add_argument("--trials", type=_positive, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--k", type=_positive, default=None)
    s.set_defaults(func=_cmd_verify)

    s = sub.add_parser("bench", help="ratio report for every .ftfl file in a directory")
    s.add_argument("dir")
    s.add_argument("--trials", type=_positive, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--gamma", type=_gamma_arg, default=None)
    s.add_argument("--out", default="results.csv")
    s.add_argument("--no-exact", action="store_true")
    s.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InternalConsistencyError, SolverError) as e:
        print(f"ftfl: internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except (FTFLError, OSError, ValueError) as e:
        print(f"ftfl: error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
