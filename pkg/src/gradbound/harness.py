"""Sweeps over p, bound-shape verdicts and the empirical lemma checks."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .constants import REGIMES, SPACES, BoundReport, C_p, theorem_factor
from .rearrange import SampledFunction, lorentz_norm, lq_norm
from .solver import (
    SHAPES,
    GridProblem,
    MaxIterExceeded,
    SolverError,
    make_problem,
    solve,
)
from .structural import B_eps_array, StructuralParams, psi_eps

__all__ = [
    "SweepConfig",
    "ShapeVerdict",
    "LemmaCheck",
    "InsufficientData",
    "parse_config",
    "load_config",
    "source_function",
    "source_norm",
    "run_sweep",
    "check_bound_shape",
    "check_lemma_2_14",
    "lemma_2_14_stability",
    "check_lemma_square",
    "trial_words",
    "emit_csv",
    "read_csv",
    "CSV_HEADER",
]

log = logging.getLogger(__name__)

CSV_HEADER = ["p", "grad_sup_pow", "source_norm", "factor", "ratio", "grid_n", "converged"]


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    """One p-sweep: a problem template without p, a norm and a theorem branch."""

    p_list: tuple = (1.5, 2.0, 3.0, 5.0)
    dim: int = 2
    shape: str = "square"
    bc: str = "dirichlet"
    source: str = "gaussian"
    scale: float = 1.0
    width: float = 0.1
    eps: float = 1e-8
    space: str = "lebesgue_q"
    q: float = 4.0
    theta: float = 4.0
    regime: str = "convex"
    grid_levels: tuple = (64, 128)
    seed: int = 0
    tol: float = 1e-8
    max_iter: int = 500
    C_doubleprime: float = 1.0

    def __post_init__(self):
        ps = tuple(float(p) for p in self.p_list)
        levels = tuple(int(n) for n in self.grid_levels)
        object.__setattr__(self, "p_list", ps)
        object.__setattr__(self, "grid_levels", levels)
        if not ps:
            raise ValueError("p_list is empty")
        if list(ps) != sorted(ps) or len(set(ps)) != len(ps):
            raise ValueError("p_list must be strictly ascending")
        if ps[0] <= 1.01:
            raise ValueError("every p must exceed 1.01")
        if not levels or list(levels) != sorted(set(levels)):
            raise ValueError("grid_levels must be strictly ascending")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.space not in SPACES:
            raise ValueError(f"space must be one of {SPACES}")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.space == "lorentz_N1" and self.dim < 3:
            raise ValueError("the L^{N,1} branch needs dim >= 3")
        if self.space == "lebesgue_q":
            if self.dim != 2:
                raise ValueError("the L^q branch is the two-dimensional one")
            if not self.q > 2:
                raise ValueError("q must exceed 2")
        if not self.theta > self.dim - 1:
            raise ValueError("theta must exceed dim - 1")
        if not (self.eps >= 0 and self.tol > 0 and self.scale > 0):
            raise ValueError("need eps >= 0, tol > 0 and scale > 0")


_LIST_KEYS = {"p_list": float, "grid_levels": int}
_SCALAR_KEYS = {
    "dim": int, "shape": str, "bc": str, "source": str, "scale": float, "width": float,
    "eps": float, "space": str, "q": float, "theta": float, "regime": str, "seed": int,
    "tol": float, "max_iter": int, "C_doubleprime": float,
}


def parse_config(text: str) -> SweepConfig:
    """Parse ``key = value`` lines; lists are comma separated, ``#`` starts a comment."""
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _LIST_KEYS:
            conv = _LIST_KEYS[key]
            kwargs[key] = tuple(conv(v) for v in value.split(",") if v.strip())
        elif key in _SCALAR_KEYS:
            kwargs[key] = _SCALAR_KEYS[key](value)
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    return SweepConfig(**kwargs)


def load_config(path) -> SweepConfig:
    return parse_config(Path(path).read_text())


def source_function(problem: GridProblem) -> SampledFunction:
    """The gridded source as cells: node dual volumes and node values."""
    vol = problem.cell_volume
    keep = vol > 0
    return SampledFunction(vol[keep], problem.f[keep])


def source_norm(problem: GridProblem, space: str, q: float = 4.0) -> float:
    v = source_function(problem)
    if space == "lorentz_N1":
        return lorentz_norm(v, float(problem.dim))
    if space == "lebesgue_q":
        return lq_norm(v, q)
    raise ValueError(f"space must be one of {SPACES}")


def _problem(cfg: SweepConfig, n: int, p: float) -> GridProblem:
    return make_problem(cfg.dim, cfg.shape, n, p, cfg.eps, cfg.bc, cfg.source,
                        scale=cfg.scale, width=cfg.width)


def run_sweep(cfg: SweepConfig) -> list[BoundReport]:
    """Solve for every (grid level, p) and report; sorted by p, then grid.

    A solver failure marks the report (converged=False; NaN values when no
    iterate is available) instead of aborting the sweep.
    """
    reports = []
    for n in cfg.grid_levels:
        for p in cfg.p_list:
            problem = _problem(cfg, n, p)
            fnorm = source_norm(problem, cfg.space, cfg.q)
            factor = theorem_factor(p, cfg.dim, cfg.theta, cfg.regime, cfg.space)
            extras = {}
            try:
                result = solve(problem, tol=cfg.tol, max_iter=cfg.max_iter)
                ok = True
            except MaxIterExceeded as exc:
                result, ok = exc.result, False
                extras["error"] = str(exc)
            except SolverError as exc:
                log.warning("p=%g n=%d failed: %s", p, n, exc)
                nan = float("nan")
                reports.append(BoundReport(p, nan, fnorm, factor, nan, n, False,
                                           {"error": str(exc)}))
                continue
            extras["lemma_2_14"] = check_lemma_2_14(result, fnorm, problem.params,
                                                    cfg.C_doubleprime)
            extras["iterations"] = result.iterations
            extras["residual"] = result.residual
            reports.append(BoundReport.build(p, result.grad_sup ** (p - 1.0), fnorm, factor,
                                             n, ok, **extras))
    reports.sort(key=lambda r: (r.p, r.grid_n))
    return reports


@dataclass(frozen=True)
class ShapeVerdict:
    max_ratio: float
    min_ratio: float
    stability: float
    changes: dict = field(default_factory=dict)
    passed: bool = False
    grids: tuple = ()

    def __bool__(self):
        return self.passed


def _relative_changes(reports, value, refinement_pair):
    by_grid = {}
    for r in reports:
        by_grid.setdefault(r.grid_n, {})[r.p] = r
    grids = sorted(by_grid)
    if refinement_pair is None:
        if len(grids) < 2:
            raise InsufficientData("need reports on two grid levels")
        refinement_pair = (grids[-2], grids[-1])
    coarse_n, fine_n = refinement_pair
    if coarse_n not in by_grid or fine_n not in by_grid:
        raise InsufficientData(f"no reports for grid pair {refinement_pair}")
    coarse, fine = by_grid[coarse_n], by_grid[fine_n]
    changes = {}
    for p in sorted(set(coarse) & set(fine)):
        a, b = value(coarse[p]), value(fine[p])
        if a == 0.0 and b == 0.0:
            changes[p] = 0.0
        elif a == 0.0 or not (math.isfinite(a) and math.isfinite(b)):
            changes[p] = math.inf
        else:
            changes[p] = abs(b - a) / abs(a)
    return (coarse_n, fine_n), fine, changes


def check_bound_shape(reports, refinement_pair=None, limit: float = 0.05) -> ShapeVerdict:
    """Max/min normalized ratio over the sweep and its grid-to-grid change.

    Passes iff every ratio changes by less than ``limit`` between the two
    grids and the largest ratio is finite.
    """
    ok_reports = [r for r in reports if r.converged and math.isfinite(r.ratio)]
    grids, fine, changes = _relative_changes(ok_reports, lambda r: r.ratio, refinement_pair)
    if len(fine) < 3 or len(changes) < 3:
        raise InsufficientData("need at least three successful p values on both grids")
    ratios = [r.ratio for r in fine.values()]
    stability = max(changes.values())
    mx = max(ratios)
    passed = math.isfinite(mx) and all(c < limit for c in changes.values())
    return ShapeVerdict(mx, min(ratios), stability, changes, passed, grids)


def check_lemma_2_14(result, f_norm: float, params: StructuralParams,
                     C_doubleprime: float = 1.0) -> float:
    """Energy-type ratio: integral of B_eps(|grad u|) over C'' C_p psi_eps(||f||)."""
    vol = result.cell_volume
    num = float(np.sum(B_eps_array(result.grad_mag, params.p, params.epsilon) * vol))
    if f_norm == 0.0:
        if num != 0.0:
            raise ValueError("nonzero energy with a zero source norm")
        return 0.0
    return num / (C_doubleprime * C_p(params.p) * psi_eps(f_norm, params))


def lemma_2_14_stability(reports, refinement_pair=None, limit: float = 0.05) -> ShapeVerdict:
    """The shape verdict applied to the Lemma 2.14 ratios stored in the reports."""
    ok_reports = [r for r in reports if r.converged and "lemma_2_14" in r.extras]
    value = lambda r: r.extras["lemma_2_14"]  # noqa: E731
    grids, fine, changes = _relative_changes(ok_reports, value, refinement_pair)
    if not changes:
        raise InsufficientData("no Lemma 2.14 ratios on both grids")
    vals = [value(r) for r in fine.values()]
    mx = max(vals)
    passed = math.isfinite(mx) and all(c < limit for c in changes.values())
    return ShapeVerdict(mx, min(vals), max(changes.values()), changes, passed, grids)


@dataclass(frozen=True)
class LemmaCheck:
    trials: int
    violations: int
    rejected: int
    boundary_trials: int

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def __bool__(self):
        return self.passed


_WORDS_PER_TRIAL = 8  # two Philox output blocks


def trial_words(seed: int, first: int, count: int) -> np.ndarray:
    """Raw 64-bit words of trials first .. first+count-1, one row per trial.

    Trial i owns the two Philox blocks at counter 2i under key ``seed``, so
    any trial can be regenerated alone with ``trial_words(seed, i, 1)``.
    """
    bg = np.random.Philox(key=int(seed), counter=2 * int(first))
    return bg.random_raw(_WORDS_PER_TRIAL * count).reshape(count, _WORDS_PER_TRIAL)


def _unit(words: np.ndarray) -> np.ndarray:
    """Uniform doubles in [0, 1) from 64-bit words (top 53 bits)."""
    return (words >> np.uint64(11)).astype(float) * 2.0**-53


def _square_draws(words: np.ndarray):
    u = _unit(words)
    x, Y, s = (10.0 ** (6.0 * u[:, k] - 3.0) for k in range(3))
    kind = (words[:, 3] % np.uint64(4)).astype(int)
    Y = np.where(kind == 1, 0.0, Y)
    x = np.where(kind == 2, 0.0, x)
    c = s * s
    root = 0.5 * (c * Y + np.sqrt(c * c * Y * Y + 4.0 * c * (x * x + Y * Y)))
    X = np.where(kind == 3, root, root * u[:, 4])
    return X, x, Y, s, kind == 3


def _exact_premise(X, x, Y, s):
    X, x, Y, s = (Fraction(float(v)) for v in (X, x, Y, s))
    c = s * s
    return X * X <= c * x * x + c * Y * X + c * Y * Y


def _exact_conclusion(X, x, Y, s):
    X, x, Y, s = (Fraction(float(v)) for v in (X, x, Y, s))
    return X <= s * x + (s * s + 1) * Y


def check_lemma_square(trials: int, seed: int = 0) -> LemmaCheck:
    """Randomized check of: X^2 <= c x^2 + c Y X + c Y^2 implies X <= sqrt(c) x + (c+1) Y.

    c is drawn as s^2 with s a double, so every comparison is between exact
    rationals.  Comparisons whose floating-point margin is far above
    rounding are decided in floating point; the rest are redone with
    fractions.  Draws that miss the premise (possible only at the root) are
    rejected, and further trials are drawn until ``trials`` are accepted.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    violations = rejected = boundary = 0
    done, first = 0, 0
    safe = 1e-12
    while done < trials:
        count = max(trials - done, 16) + 16
        X, x, Y, s, on_root = _square_draws(trial_words(seed, first, count))
        first += count
        c = s * s
        rhs_p = c * x * x + c * Y * X + c * Y * Y
        clear_p = X * X <= rhs_p * (1.0 - safe)
        rhs_c = s * x + (c + 1.0) * Y
        clear_c = X <= rhs_c * (1.0 - safe)
        for i in range(count):
            if done == trials:
                break
            if not clear_p[i] and not _exact_premise(X[i], x[i], Y[i], s[i]):
                rejected += 1
                continue
            holds = clear_c[i] or _exact_conclusion(X[i], x[i], Y[i], s[i])
            violations += not holds
            boundary += bool(on_root[i])
            done += 1
    return LemmaCheck(trials, violations, rejected, boundary)


def emit_csv(reports, path) -> None:
    """Write reports in order with full float precision."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in reports:
            floats = (r.p, r.grad_sup_pow, r.source_norm, r.factor, r.ratio)
            w.writerow([repr(float(v)) for v in floats] + [r.grid_n, int(r.converged)])


def read_csv(path) -> list[BoundReport]:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        out = []
        for row in reader:
            p, g, s, f, ratio = (float(v) for v in row[:5])
            out.append(BoundReport(p, g, s, f, ratio, int(row[5]), bool(int(row[6]))))
    return out


def scaled_config(cfg: SweepConfig, factor: float) -> SweepConfig:
    """Same sweep with the source multiplied by ``factor``."""
    return replace(cfg, scale=cfg.scale * factor)
