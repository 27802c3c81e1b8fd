"""Explicit p-dependent constants of the global gradient bound.

Every abstract geometric constant (c_Omega, C'', the curvature norm
||k||_{theta,1}, the constant C of the quadratic step) is a plain
configuration value defaulting to 1, because only the p-scaling of the bound
is checkable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .structural import GrowthBounds, StructuralParams, growth_indices

__all__ = [
    "GeometryConstants",
    "BoundReport",
    "C_p",
    "K_p",
    "xi_p",
    "m_cp",
    "M_cp",
    "S1",
    "theta_exponent",
    "cbar",
    "sbar_p",
    "sbar_p_2d",
    "c_n_omega",
    "s_p",
    "S2",
    "S3",
    "S3_chain",
    "theorem_factor",
    "lambda_general",
    "lambda_variants",
    "constants_table",
    "REGIMES",
    "SPACES",
]

REGIMES = ("boundary", "convex")
SPACES = ("lorentz_N1", "lebesgue_q")


def _check_p(p: float) -> float:
    p = float(p)
    if not p > 1.0:
        raise ValueError(f"p must be > 1, got {p!r}")
    return p


@dataclass(frozen=True)
class GeometryConstants:
    """Domain constants entering the nonconvex branch; all default to 1."""

    c_omega: float = 1.0
    C_doubleprime: float = 1.0
    volume: float = 1.0
    boundary_area: float = 1.0
    k_norm_theta1: float = 1.0
    theta: float = 4.0

    def __post_init__(self):
        for name in ("c_omega", "C_doubleprime", "volume", "boundary_area", "k_norm_theta1"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ValueError(f"{name} must be positive and finite, got {val!r}")

    def validate_for(self, N: int) -> None:
        if not self.theta > N - 1:
            raise ValueError(f"theta must exceed N - 1 = {N - 1}, got {self.theta!r}")


@dataclass(frozen=True)
class BoundReport:
    """One sweep point: gradient sup to the power p-1 against factor times source norm."""

    p: float
    grad_sup_pow: float
    source_norm: float
    factor: float
    ratio: float
    grid_n: int = 0
    converged: bool = True
    extras: dict = field(default_factory=dict, compare=False)

    @classmethod
    def build(cls, p, grad_sup_pow, source_norm, factor, grid_n=0, converged=True, **extras):
        denom = factor * source_norm
        if denom == 0.0:
            if grad_sup_pow != 0.0:
                raise ValueError("nonzero gradient with a zero source norm")
            ratio = 0.0
        else:
            ratio = grad_sup_pow / denom
        return cls(
            float(p), float(grad_sup_pow), float(source_norm), float(factor), ratio,
            int(grid_n), bool(converged), dict(extras),
        )


def C_p(p: float) -> float:
    p = _check_p(p)
    return 2.0 ** (1.0 / (p - 1.0)) if p < 2.0 else p


def K_p(p: float) -> float:
    p = _check_p(p)
    return 3.0 if p < 2.0 else 2.0 * p - 1.0


def xi_p(p: float) -> float:
    p = _check_p(p)
    return min(p - 1.0, 1.0) / 2.0


def _cp_set(c, p):
    if not c > 0:
        raise ValueError("c must be > 0")
    p = _check_p(p)
    return (2.0 * c, 2.0 * c ** (p - 1.0), p * c, p * c ** (p - 1.0))


def m_cp(c: float, p: float) -> float:
    return min(_cp_set(c, p))


def M_cp(c: float, p: float) -> float:
    return max(_cp_set(c, p))


def S1(p: float) -> float:
    """max{2, p} * C_p: 2^{p/(p-1)} below 2, p^2 from 2 on."""
    p = _check_p(p)
    return 2.0 ** (p / (p - 1.0)) if p < 2.0 else p * p


def theta_exponent(N: int, theta: float) -> float:
    """theta N / (theta - (N - 1))."""
    if not theta > N - 1:
        raise ValueError(f"theta must exceed N - 1 = {N - 1}, got {theta!r}")
    return theta * N / (theta - (N - 1))


def _conj(N: int) -> float:
    return N / (N - 1.0)


def cbar(N: int, geo: GeometryConstants) -> float:
    """(c_Omega^{1/theta} / (N' ||k||_{theta,1}))^{theta N / (theta - (N-1))}."""
    geo.validate_for(N)
    base = geo.c_omega ** (1.0 / geo.theta) / (_conj(N) * geo.k_norm_theta1)
    return base ** theta_exponent(N, geo.theta)


def sbar_p(p: float, N: int, geo: GeometryConstants) -> float:
    """Radius below which the curvature term is absorbed: Cbar (xi_p / K_p)^{exponent}."""
    p = _check_p(p)
    if N < 2:
        raise ValueError("N must be >= 2")
    return cbar(N, geo) * (xi_p(p) / K_p(p)) ** theta_exponent(N, geo.theta)


def sbar_p_2d(p: float, geo: GeometryConstants) -> float:
    """Planar version; exponent 2 theta / (theta - 1) and Cbar = (2 ||k|| c^{-1/theta})^{-exponent}."""
    return sbar_p(p, 2, geo)


def c_n_omega(N: int, geo: GeometryConstants) -> float:
    """min{(|dOmega| / c_Omega)^{N'}, |Omega| / 2, C''}."""
    return min(
        (geo.boundary_area / geo.c_omega) ** _conj(N), geo.volume / 2.0, geo.C_doubleprime
    )


def s_p(p: float, N: int, geo: GeometryConstants, convex: bool) -> float:
    if convex:
        return geo.volume / 2.0
    return min(c_n_omega(N, geo), sbar_p(p, N, geo))


def S2(p: float, s_p_val: float, C_doubleprime: float = 1.0) -> float:
    if not s_p_val > 0:
        raise ValueError("s_p must be > 0")
    return C_doubleprime * S1(p) / s_p_val


def S3(p: float, S2_val: float, C_env: float = 1.0) -> float:
    """sqrt(C K_p) S2 + 2 (C K_p + 1) / min{p - 1, 1}."""
    if not S2_val > 0 or not C_env > 0:
        raise ValueError("S2 and C must be positive")
    ck = C_env * K_p(p)
    return math.sqrt(ck) * S2_val + 2.0 * (ck + 1.0) / min(p - 1.0, 1.0)


def S3_chain(
    p: float, N: int, geo: GeometryConstants, convex: bool, C_env: float = 1.0
) -> float:
    """S3 from geometry: S1 -> s_p -> S2 -> S3."""
    sp = s_p(p, N, geo, convex)
    return S3(p, S2(p, sp, geo.C_doubleprime), C_env)


def theorem_factor(
    p: float, N: int, theta: float | None, regime: str, space: str
) -> float:
    """The bracketed p-factor of the matching gradient bound.

    convex:   2^{p/(p-1)} for p < 2, p^{5/2} for p >= 2;
    boundary: 2^{p/(p-1)} (p-1)^{-e} for p < 2, p^{5/2 + e} for p >= 2,
    with e = theta N / (theta - (N - 1)).
    """
    p = _check_p(p)
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    if space == "lorentz_N1":
        if N < 3:
            raise ValueError("the L^{N,1} bound needs N >= 3")
    elif space == "lebesgue_q":
        if N != 2:
            raise ValueError("the L^q bound is the N = 2 case")
    else:
        raise ValueError(f"space must be one of {SPACES}, got {space!r}")
    if regime == "convex":
        return 2.0 ** (p / (p - 1.0)) if p < 2.0 else p**2.5
    if theta is None:
        raise ValueError("the boundary regime needs theta")
    e = theta_exponent(N, theta)
    if p < 2.0:
        return 2.0 ** (p / (p - 1.0)) * (p - 1.0) ** (-e)
    return p ** (2.5 + e)


def lambda_general(
    g: GrowthBounds,
    N: int = 3,
    theta: float | None = None,
    convex: bool = True,
    last_term: str = "max",
) -> float:
    """Bound factor Lambda(i_a, s_a) for a general operator.

    ``last_term="max"`` uses max{s_a, 0} in the final summand (the substituted
    form); ``"literal"`` keeps s_a there as printed in the convex formula.
    """
    i_neg = min(g.i_a, 0.0)
    s_pos = max(g.s_a, 0.0)
    first = math.sqrt(3.0 + 2.0 * s_pos) * (2.0 + s_pos) ** ((2.0 + i_neg) / (1.0 + i_neg))
    if not convex:
        if theta is None:
            raise ValueError("the nonconvex form needs theta")
        first *= ((3.0 + 2.0 * s_pos) / (1.0 + i_neg)) ** theta_exponent(N, theta)
    if last_term == "max":
        s_last = s_pos
    elif last_term == "literal":
        s_last = g.s_a
    else:
        raise ValueError("last_term must be 'max' or 'literal'")
    return first + (4.0 + 2.0 * s_last) / (1.0 + i_neg)


def lambda_variants(g: GrowthBounds, N=3, theta=None, convex=True) -> dict:
    """Both readings of the last summand and their difference."""
    a = lambda_general(g, N, theta, convex, "max")
    b = lambda_general(g, N, theta, convex, "literal")
    return {"max": a, "literal": b, "difference": a - b}


def constants_table(
    p_values,
    N: int,
    theta: float,
    regime: str,
    space: str,
    geo: GeometryConstants | None = None,
) -> list[dict]:
    """Rows of p, C_p, K_p, xi_p, S1, sbar_p, factor, Lambda."""
    geo = geo or GeometryConstants(theta=theta)
    if geo.theta != theta:
        geo = GeometryConstants(
            geo.c_omega, geo.C_doubleprime, geo.volume, geo.boundary_area,
            geo.k_norm_theta1, theta,
        )
    rows = []
    for p in p_values:
        g = growth_indices(StructuralParams(p, 0.0))
        rows.append(
            {
                "p": p,
                "C_p": C_p(p),
                "K_p": K_p(p),
                "xi_p": xi_p(p),
                "S1": S1(p),
                "sbar_p": sbar_p(p, N, geo),
                "factor": theorem_factor(p, N, theta, regime, space),
                "Lambda": lambda_general(g, N, theta, regime == "convex"),
            }
        )
    return rows
