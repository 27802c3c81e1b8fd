"""Regularized p-Laplacian structural functions.

The family is a_eps(t) = (t**2 + eps)**((p - 2)/2) with b_eps(t) = a_eps(t) t,
B_eps its primitive, F_eps the primitive of b_eps**2, and psi_eps(s) =
s * b_eps^{-1}(s).  eps = 0 is admitted and gives the pure power law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

__all__ = [
    "StructuralParams",
    "GrowthBounds",
    "DomainError",
    "QuadratureError",
    "a_eps",
    "b_eps",
    "b_eps_prime",
    "B_eps",
    "F_eps",
    "b_eps_inv",
    "psi_eps",
    "Bhat_inv",
    "growth_indices",
    "a_eps_array",
    "B_eps_array",
]


class DomainError(ValueError):
    """Raised when a structural function is evaluated at a singular point."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""

    def __init__(self, message: str, error_estimate: float):
        super().__init__(f"{message} (achieved error estimate {error_estimate:.3e})")
        self.error_estimate = error_estimate


@dataclass(frozen=True)
class StructuralParams:
    """Exponent ``p`` and regularization ``epsilon`` of the operator family."""

    p: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not (self.p > 1.0) or not math.isfinite(self.p):
            raise ValueError(f"p must be a finite number > 1, got {self.p!r}")
        if not (self.epsilon >= 0.0) or not math.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon!r}")


@dataclass(frozen=True)
class GrowthBounds:
    """Lower and upper growth indices (i_a, s_a) of a general operator."""

    i_a: float
    s_a: float

    def __post_init__(self):
        if not self.i_a > -1.0:
            raise ValueError(f"i_a must be > -1, got {self.i_a!r}")
        if not (self.i_a <= self.s_a < math.inf):
            raise ValueError(f"need i_a <= s_a < inf, got ({self.i_a!r}, {self.s_a!r})")


def _check_t(t: float) -> float:
    t = float(t)
    if not t >= 0.0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    return t


def a_eps(t: float, params: StructuralParams) -> float:
    t = _check_t(t)
    p, eps = params.p, params.epsilon
    if p == 2.0:
        return 1.0
    if eps == 0.0 and t > 0.0:
        # direct power: t * t may underflow for tiny t
        return t ** (p - 2.0)
    base = t * t + eps
    if base == 0.0:
        if p < 2.0:
            raise DomainError("a_eps is unbounded at t = 0 when eps = 0 and p < 2")
        return 0.0
    return base ** ((p - 2.0) / 2.0)


def b_eps(t: float, params: StructuralParams) -> float:
    t = _check_t(t)
    if t == 0.0:
        return 0.0
    if params.epsilon == 0.0:
        return t ** (params.p - 1.0)
    return a_eps(t, params) * t


def b_eps_prime(t: float, params: StructuralParams) -> float:
    """Derivative a_eps(t) (1 + (p - 2) t^2 / (t^2 + eps)), for t > 0."""
    t = _check_t(t)
    p, eps = params.p, params.epsilon
    if t == 0.0 and eps == 0.0:
        if p < 2.0:
            raise DomainError("b_eps' is unbounded at t = 0 when eps = 0 and p < 2")
        return 1.0 if p == 2.0 else 0.0
    ratio = t * t / (t * t + eps)
    return a_eps(t, params) * (1.0 + (p - 2.0) * ratio)


def B_eps(t: float, params: StructuralParams) -> float:
    """Primitive of b_eps vanishing at 0: ((t^2 + eps)^{p/2} - eps^{p/2}) / p."""
    t = _check_t(t)
    p, eps = params.p, params.epsilon
    if eps == 0.0:
        return t**p / p
    if t == 0.0:
        return 0.0
    # eps^{p/2} ((1 + t^2/eps)^{p/2} - 1) without cancellation for t^2 << eps
    x = t * t / eps
    if x > 1e6:
        return ((t * t + eps) ** (p / 2.0) - eps ** (p / 2.0)) / p
    return eps ** (p / 2.0) * math.expm1(0.5 * p * math.log1p(x)) / p


def F_eps(t: float, params: StructuralParams, tol: float = 1e-10) -> float:
    """Integral of b_eps(s)^2 over [0, t] to relative accuracy ``tol``."""
    t = _check_t(t)
    if not tol > 0:
        raise ValueError("tol must be positive")
    p, eps = params.p, params.epsilon
    if t == 0.0:
        return 0.0
    if eps == 0.0:
        return t ** (2.0 * p - 1.0) / (2.0 * p - 1.0)
    if p == 2.0:
        return t**3 / 3.0

    def integrand(s):
        return (s * (s * s + eps) ** ((p - 2.0) / 2.0)) ** 2

    # b_eps^2 changes character around sqrt(eps); give quad the breakpoint
    points = [math.sqrt(eps)] if 0.0 < math.sqrt(eps) < t else None
    value, err, info = _quad(integrand, 0.0, t, tol, points)[:3]
    if err > tol * abs(value) and err > 1e-300:
        raise QuadratureError("F_eps quadrature did not converge", err)
    return value


def _quad(func, lo, hi, tol, points=None):
    out = integrate.quad(
        func, lo, hi, epsabs=0.0, epsrel=tol, limit=200, points=points, full_output=1
    )
    return out[0], out[1], out[2]


def _expand_bracket(fun, target, seed):
    lo = hi = seed if seed > 0 else 1.0
    while fun(lo) > target:
        lo *= 0.5
    while fun(hi) < target:
        hi *= 2.0
    return lo, hi


def b_eps_inv(s: float, params: StructuralParams, tol: float = 1e-12) -> float:
    """Inverse of the strictly increasing map b_eps."""
    s = float(s)
    if not s >= 0.0:
        raise ValueError(f"s must be >= 0, got {s!r}")
    p, eps = params.p, params.epsilon
    if s == 0.0:
        return 0.0
    if eps == 0.0:
        return s ** (1.0 / (p - 1.0))
    if p == 2.0:
        return s
    # below sqrt(eps) b_eps is close to linear with slope eps^{(p-2)/2}
    seed = _seed(s, p, eps, 1.0, 1.0)
    return _monotone_root(lambda t: b_eps(t, params), s, seed, tol * max(1.0, s))


def _seed(s, p, eps, slope_mult, power_mult):
    """Starting point: the linear regime below sqrt(eps), else the eps = 0 power law.

    Worked in logarithms so that extreme eps cannot overflow.
    """
    log_lin = math.log(slope_mult * s) + 0.5 * (2.0 - p) * math.log(eps)
    if 2.0 * log_lin < math.log(eps):
        return math.exp(log_lin)
    return math.exp(math.log(power_mult * s) / (p - 1.0))


def _monotone_root(fun, target, seed, atol):
    """Root of an increasing function: expanding bracket, brentq, bisection fallback."""
    lo, hi = _expand_bracket(fun, target, seed)
    if fun(lo) == target:
        return lo
    if fun(hi) == target:
        return hi
    try:
        root = optimize.brentq(
            lambda t: fun(t) - target, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
            maxiter=500,
        )
    except RuntimeError:
        root = None
    if root is None or abs(fun(root) - target) > atol:
        # brentq stops on the bracket width; finish with bisection on the residual
        root = _bisect(fun, target, lo, hi, atol)
    return root


def _bisect(fun, target, lo, hi, atol):
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        val = fun(mid)
        if abs(val - target) <= atol or mid in (lo, hi):
            return mid
        if val < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def psi_eps(s: float, params: StructuralParams, tol: float = 1e-12) -> float:
    s = float(s)
    if s == 0.0:
        return 0.0
    return s * b_eps_inv(s, params, tol)


def _Bhat(t: float, params: StructuralParams) -> float:
    return B_eps(t, params) / t if t > 0 else 0.0


def Bhat_inv(s: float, params: StructuralParams, tol: float = 1e-12) -> float:
    """The unique t > 0 with B_eps(t) / t = s."""
    s = float(s)
    if not s > 0.0:
        raise ValueError(f"s must be > 0, got {s!r}")
    p, eps = params.p, params.epsilon
    if eps == 0.0:
        return (p * s) ** (1.0 / (p - 1.0))
    if p == 2.0:
        # B(t)/t = t/2 for every eps
        return 2.0 * s
    # below sqrt(eps) B_eps(t)/t is close to t eps^{(p-2)/2} / 2
    seed = _seed(s, p, eps, 2.0, p)
    return _monotone_root(lambda t: _Bhat(t, params), s, seed, tol * max(1.0, s))


def growth_indices(params: StructuralParams) -> GrowthBounds:
    """Growth indices of a_eps: (min{p-2,0}, max{p-2,0}) for eps > 0, (p-2, p-2) at eps = 0."""
    d = params.p - 2.0
    if params.epsilon == 0.0:
        return GrowthBounds(d, d)
    return GrowthBounds(min(d, 0.0), max(d, 0.0))


# Array versions used by the grid solver.  No domain checks: callers keep eps > 0
# whenever p < 2.

def a_eps_array(t: np.ndarray, p: float, eps: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if p == 2.0:
        return np.ones_like(t)
    return (t * t + eps) ** ((p - 2.0) / 2.0)


def B_eps_array(t: np.ndarray, p: float, eps: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if eps == 0.0:
        return t**p / p
    x = t * t / eps
    return eps ** (p / 2.0) * np.expm1(0.5 * p * np.log1p(x)) / p
