"""Command-line entry point: constants, solve, sweep, check-lemmas."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .constants import (
    REGIMES,
    SPACES,
    GeometryConstants,
    constants_table,
    lambda_general,
)
from .rearrange import (
    SampledFunction,
    decreasing_rearrangement,
    log_weighted_square_integral,
    lq_norm,
    square_integral,
)
from .solver import SHAPES, SOURCES, MaxIterExceeded, make_problem, solve
from .structural import StructuralParams, growth_indices

__all__ = ["main", "write_grid_csv", "read_grid_csv"]

log = logging.getLogger("gradbound")


def write_grid_csv(path, array: np.ndarray, spacing: float) -> None:
    """Row-major grid: header ``# shape: nx,ny[,nz]; h: <spacing>``, last axis along rows."""
    array = np.asarray(array, dtype=float)
    with open(Path(path), "w", newline="") as fh:
        fh.write(f"# shape: {','.join(str(s) for s in array.shape)}; h: {spacing!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        for row in array.reshape(-1, array.shape[-1]):
            w.writerow([repr(float(v)) for v in row])


def read_grid_csv(path) -> tuple[np.ndarray, float]:
    with open(Path(path), newline="") as fh:
        header = fh.readline().strip()
        if not header.startswith("# shape:") or "; h:" not in header:
            raise ValueError(f"{path}: expected header '# shape: nx,ny[,nz]; h: <spacing>'")
        shape_part, h_part = header[len("# shape:"):].split("; h:")
        shape = tuple(int(s) for s in shape_part.split(","))
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    data = np.array(rows, dtype=float)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: {data.size} values for shape {shape}")
    return data.reshape(shape), float(h_part)


def _cmd_constants(args) -> int:
    if not (args.p_min > 1.0 and args.p_max >= args.p_min and args.steps >= 1):
        raise SystemExit("need 1 < p-min <= p-max and steps >= 1")
    ps = np.linspace(args.p_min, args.p_max, args.steps)
    geo = GeometryConstants(theta=args.theta)
    rows = constants_table(ps, args.dim, args.theta, args.regime, args.space, geo)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["p", "C_p", "K_p", "xi_p", "S1", "sbar_p", "factor", "Lambda",
                    "Lambda_literal"])
        for row in rows:
            g = growth_indices(StructuralParams(float(row["p"]), 0.0))
            literal = lambda_general(g, args.dim, args.theta, args.regime == "convex", "literal")
            w.writerow([repr(float(row[k])) for k in
                        ("p", "C_p", "K_p", "xi_p", "S1", "sbar_p", "factor", "Lambda")]
                       + [repr(literal)])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_solve(args) -> int:
    dim = args.dim
    if args.source in SOURCES:
        source = args.source
    else:
        source, _ = read_grid_csv(args.source)
    problem = make_problem(dim, args.shape, args.n, args.p, args.eps, args.bc, source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    code = 0
    try:
        result = solve(problem, tol=args.tol, max_iter=args.max_iter)
    except MaxIterExceeded as exc:
        print(f"warning: {exc}", file=sys.stderr)
        result, code = exc.result, 1
    write_grid_csv(out / "u.csv", result.u, result.spacing)
    write_grid_csv(out / "gradmag.csv", result.grad_mag, result.spacing)
    print(f"grad_sup={result.grad_sup!r} energy={result.energy!r} "
          f"iterations={result.iterations} residual={result.residual:.3e}")
    return code


def _cmd_sweep(args) -> int:
    cfg = harness.load_config(args.config)
    reports = harness.run_sweep(cfg)
    out = Path(args.out) if args.out else Path(args.config).with_suffix(".csv")
    harness.emit_csv(reports, out)
    ok = all(r.converged for r in reports)
    print(f"wrote {len(reports)} reports to {out}")
    if len(cfg.grid_levels) >= 2:
        try:
            verdict = harness.check_bound_shape(reports)
            lemma = harness.lemma_2_14_stability(reports)
        except harness.InsufficientData as exc:
            print(f"FAIL shape check: {exc}")
            return 1
        print(f"{'PASS' if verdict else 'FAIL'} bound shape: max ratio {verdict.max_ratio:.6g}, "
              f"min ratio {verdict.min_ratio:.6g}, largest grid change {verdict.stability:.3%}")
        print(f"{'PASS' if lemma else 'FAIL'} energy lemma: max ratio {lemma.max_ratio:.6g}, "
              f"largest grid change {lemma.stability:.3%}")
        ok = ok and verdict.passed and lemma.passed
    return 0 if ok else 1


def _random_step_function(rng: np.random.Generator) -> SampledFunction:
    k = int(rng.integers(1, 9))
    return SampledFunction(rng.uniform(0.05, 2.0, k), rng.uniform(-5.0, 5.0, k))


def _cmd_check_lemmas(args) -> int:
    sq = harness.check_lemma_square(args.trials, args.seed)
    print(f"{'PASS' if sq else 'FAIL'} quadratic lemma: {sq.trials} trials, "
          f"{sq.violations} violations, {sq.boundary_trials} at the premise root")
    # the two planar source estimates on random step functions
    bad = 0
    n_est = min(args.trials, 2000)
    for i in range(n_est):
        rng = np.random.Generator(np.random.Philox(key=args.seed, counter=[0, 0, 1, i]))
        f = _random_step_function(rng)
        q = float(rng.uniform(2.0, 6.0))
        if q == 2.0:
            continue
        fs = decreasing_rearrangement(f)
        m = fs.total_measure
        nq = lq_norm(f, q)
        r = float(rng.uniform(0.0, m))
        lhs_a = square_integral(fs, r)
        rhs_a = nq**2 * r ** (1.0 - 2.0 / q)
        lhs_b = log_weighted_square_integral(fs)
        rhs_b = q / (q - 2.0) * m ** ((q - 2.0) / q) * nq**2
        slack = 1e-12
        bad += lhs_a > rhs_a * (1 + slack) or lhs_b > rhs_b * (1 + slack)
    print(f"{'PASS' if bad == 0 else 'FAIL'} planar source estimates: {n_est} step functions, "
          f"{bad} violations")
    return 0 if (sq.passed and bad == 0) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gradbound", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("constants", help="table of p-dependent constants as CSV")
    c.add_argument("--p-min", type=float, default=1.1)
    c.add_argument("--p-max", type=float, default=10.0)
    c.add_argument("--steps", type=int, default=19)
    c.add_argument("--theta", type=float, default=4.0)
    c.add_argument("--dim", type=int, default=3)
    c.add_argument("--regime", choices=REGIMES, default="convex")
    c.add_argument("--space", choices=SPACES, default="lorentz_N1")
    c.add_argument("--out", help="output file (default: stdout)")
    c.set_defaults(func=_cmd_constants)

    s = sub.add_parser("solve", help="solve one problem; writes u.csv and gradmag.csv")
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--shape", choices=SHAPES, default="square")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--p", type=float, default=2.0)
    s.add_argument("--eps", type=float, default=1e-8)
    s.add_argument("--bc", choices=("dirichlet", "neumann"), default="dirichlet")
    s.add_argument("--source", default="gaussian",
                   help=f"one of {', '.join(SOURCES)} or a grid CSV path")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=_cmd_solve)

    w = sub.add_parser("sweep", help="p-sweep from a key = value config file")
    w.add_argument("--config", required=True)
    w.add_argument("--out", help="CSV path (default: config path with .csv)")
    w.set_defaults(func=_cmd_sweep)

    k = sub.add_parser("check-lemmas", help="randomized lemma checks")
    k.add_argument("--trials", type=int, default=10000)
    k.add_argument("--seed", type=int, default=0)
    k.set_defaults(func=_cmd_check_lemmas)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
