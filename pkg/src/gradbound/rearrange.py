"""Decreasing rearrangements and Lorentz norms of piecewise-constant functions.

A function is represented by measured cells (measure, value).  Its decreasing
rearrangement is then an exact step function on [0, total measure], and every
integral below is evaluated in closed form interval by interval.  All
quantities are computed for |v|.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SampledFunction",
    "StepFunction",
    "distribution_function",
    "decreasing_rearrangement",
    "double_star",
    "lorentz_norm",
    "lq_norm",
    "square_integral",
    "log_weighted_square_integral",
    "product_integral",
    "read_sampled_csv",
    "write_sampled_csv",
]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float).ravel()
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Piecewise-constant function given by cell measures and values."""

    measures: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        m, v = _frozen(self.measures), _frozen(self.values)
        if m.shape != v.shape:
            raise ValueError("measures and values must have the same length")
        if m.size == 0:
            raise ValueError("a sampled function needs at least one cell")
        if not np.all(m > 0) or not np.all(np.isfinite(m)):
            raise ValueError("every cell measure must be positive and finite")
        if not np.all(np.isfinite(v)):
            raise ValueError("cell values must be finite")
        object.__setattr__(self, "measures", m)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_cells(cls, cells) -> "SampledFunction":
        cells = list(cells)
        return cls([c[0] for c in cells], [c[1] for c in cells])

    @property
    def total_measure(self) -> float:
        return math.fsum(self.measures)

    def scaled(self, c: float) -> "SampledFunction":
        return SampledFunction(self.measures, c * self.values)


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Nonincreasing step function: ``values[k]`` on [breakpoints[k], breakpoints[k+1])."""

    breakpoints: np.ndarray
    values: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        b, v, w = _frozen(self.breakpoints), _frozen(self.values), _frozen(self.widths)
        if b.size != v.size + 1 or w.size != v.size:
            raise ValueError("need len(breakpoints) == len(values) + 1 == len(widths) + 1")
        if b[0] != 0.0 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if np.any(np.diff(v) > 0) or np.any(v < 0):
            raise ValueError("values must be nonnegative and nonincreasing")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "widths", w)

    @property
    def total_measure(self) -> float:
        return float(self.breakpoints[-1])

    def __call__(self, s):
        """Evaluate; right-continuous, zero beyond the total measure."""
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.breakpoints, s, side="right") - 1
        inside = (s >= 0) & (idx < self.values.size)
        out = np.where(inside, self.values[np.clip(idx, 0, self.values.size - 1)], 0.0)
        return out if out.ndim else float(out)

    def cumulative(self, s: float) -> float:
        """Exact integral of the step function over [0, s]."""
        s = min(float(s), self.total_measure)
        if s <= 0:
            return 0.0
        b, v = self.breakpoints, self.values
        k = int(np.searchsorted(b, s, side="right")) - 1
        k = min(k, v.size - 1)
        return float(np.dot(v[:k], np.diff(b[: k + 1])) + v[k] * (s - b[k]))

    def distribution(self, t: float) -> float:
        """Lebesgue measure of {s : v*(s) > t}."""
        return math.fsum(self.widths[self.values > t])


def distribution_function(v: SampledFunction, t: float) -> float:
    """Measure of the cells where |v| exceeds ``t``."""
    if not t >= 0:
        raise ValueError("t must be >= 0")
    return math.fsum(v.measures[np.abs(v.values) > t])


def decreasing_rearrangement(v: SampledFunction) -> StepFunction:
    a = np.abs(v.values)
    order = np.argsort(-a, kind="stable")
    vals, widths = a[order], v.measures[order]
    return StepFunction(np.concatenate(([0.0], np.cumsum(widths))), vals, widths)


def double_star(vstar: StepFunction, s: float) -> float:
    """Maximal average v**(s) = (1/s) * integral of v* over [0, s]."""
    if not s > 0:
        raise ValueError("s must be > 0")
    return vstar.cumulative(s) / s


def lorentz_norm(v: SampledFunction, l: float) -> float:
    """The L^{l,1} norm: integral of v**(tau) tau^{-1/l'} over [0, m(R)].

    On each interval of the rearrangement v** = alpha + beta / tau, and the
    weighted integral has a closed antiderivative, so the singular weight at
    tau = 0 never gets sampled.
    """
    if not l > 1:
        raise ValueError("l must be > 1")
    vstar = decreasing_rearrangement(v)
    b, vals = vstar.breakpoints, vstar.values
    gamma = 1.0 - 1.0 / l  # 1 / l'
    cum = np.concatenate(([0.0], np.cumsum(vals * np.diff(b))))
    total = 0.0
    for k in range(vals.size):
        lo, hi = b[k], b[k + 1]
        alpha = vals[k]
        beta = cum[k] - vals[k] * lo
        part = alpha * l * (hi ** (1.0 / l) - lo ** (1.0 / l))
        if beta != 0.0:
            part += beta * (lo ** (-gamma) - hi ** (-gamma)) / gamma
        total += part
    return total


def lq_norm(v: SampledFunction, q: float) -> float:
    if not q >= 1:
        raise ValueError("q must be >= 1")
    a = np.abs(v.values)
    peak = a.max()
    if peak == 0:
        return 0.0
    # scale out the peak so large q does not overflow
    return peak * math.fsum(v.measures * (a / peak) ** q) ** (1.0 / q)


def square_integral(vstar: StepFunction, r: float) -> float:
    """Integral of v*(tau)^2 over [0, r]."""
    sq = StepFunction(vstar.breakpoints, vstar.values**2, vstar.widths)
    return sq.cumulative(r)


def log_weighted_square_integral(vstar: StepFunction, upper: float | None = None) -> float:
    """Integral over [0, upper] of r^{-1} times the integral of v*^2 over [0, r].

    On each interval the inner integral is J + c^2 (r - lo), so the outer
    integrand is c^2 + (J - c^2 lo) / r and integrates to a logarithm.
    """
    b, vals = vstar.breakpoints, vstar.values
    upper = vstar.total_measure if upper is None else min(float(upper), vstar.total_measure)
    total, J = 0.0, 0.0
    for k in range(vals.size):
        lo, hi = b[k], min(b[k + 1], upper)
        if hi <= lo:
            break
        c2 = vals[k] ** 2
        total += c2 * (hi - lo)
        if lo > 0:
            total += (J - c2 * lo) * math.log(hi / lo)
        J += c2 * (hi - lo)
    return total


def product_integral(f: StepFunction, g: StepFunction) -> float:
    """Exact integral of f* g* over the common support."""
    pts = np.union1d(f.breakpoints, g.breakpoints)
    pts = pts[pts <= min(f.total_measure, g.total_measure)]
    mids = 0.5 * (pts[:-1] + pts[1:])
    return float(np.sum(f(mids) * g(mids) * np.diff(pts)))


def read_sampled_csv(path) -> SampledFunction:
    """Read ``measure,value`` rows (header line required)."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["measure", "value"]:
            raise ValueError(f"{path}: expected header 'measure,value'")
        rows = [(float(m), float(v)) for m, v in reader if (m, v) != ("", "")]
    return SampledFunction.from_cells(rows)


def write_sampled_csv(v: SampledFunction, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["measure", "value"])
        for m, val in zip(v.measures, v.values):
            w.writerow([repr(float(m)), repr(float(val))])
