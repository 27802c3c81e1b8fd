"""Grid solver for the regularized p-Laplacian Poisson problem.

Unknowns live at the nodes of a uniform grid over the domain's bounding box.
The discrete energy of a node field u is

    E(u) = sum over elements of h^d 2^{-d} sum over corners B_eps(|g_corner|)
           - sum over nodes of w f u,

where g_corner takes, along each axis, the edge difference of the element
that passes through that corner.  At p = 2 this is exactly the standard
5-point (7-point in 3D) Laplacian.  E is minimized by Kacanov iteration: the
coefficient a_eps(|g|) is frozen, the resulting weighted-Laplacian system is
solved by Jacobi-preconditioned CG, and the step is backtracked on E.

Curved Dirichlet boundaries cut grid edges at their true crossing points
(see _Layout); Neumann domains are node masks made of whole elements.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import optimize

from .structural import B_eps_array, StructuralParams, a_eps_array

__all__ = [
    "GridProblem",
    "SolveResult",
    "SolverError",
    "MaxIterExceeded",
    "IncompatibleSource",
    "SingularCoefficient",
    "SHAPES",
    "SOURCES",
    "make_problem",
    "builtin_source",
    "node_coordinates",
    "grad_field",
    "energy",
    "solve",
    "gradient_integral_B",
]

log = logging.getLogger(__name__)

SHAPES = ("square", "cube", "disk", "ball", "lshape")
SOURCES = ("zero", "one", "sine", "gaussian", "bump-pair")
_SHAPE_DIM = {"square": 2, "cube": 3, "disk": 2, "ball": 3, "lshape": 2}


class SolverError(RuntimeError):
    pass


class MaxIterExceeded(SolverError):
    """Iteration budget exhausted; ``result`` holds the best iterate."""

    def __init__(self, result: "SolveResult"):
        super().__init__(
            f"no convergence after {result.iterations} iterations "
            f"(residual {result.residual:.3e})"
        )
        self.result = result


class IncompatibleSource(SolverError, ValueError):
    """Neumann data whose source does not integrate to zero."""


class SingularCoefficient(SolverError, ValueError):
    """eps = 0 with p != 2: the frozen coefficient degenerates where the gradient vanishes."""


def _bounds(shape: str) -> tuple[float, float]:
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}; choose from {SHAPES}")
    return (-1.0, 1.0) if shape in ("disk", "ball") else (0.0, 1.0)


def node_coordinates(shape: str, n: int) -> list[np.ndarray]:
    """Open-mesh coordinate arrays (indexing='ij') of the (n+1)^d nodes."""
    lo, hi = _bounds(shape)
    x = np.linspace(lo, hi, n + 1)
    return np.meshgrid(*([x] * _SHAPE_DIM[shape]), indexing="ij")


def _domain_masks(shape: str, X: list[np.ndarray], h: float):
    """(closed, interior) node masks of the domain."""
    tol = 1e-9 * h
    if shape in ("square", "cube"):
        closed = np.logical_and.reduce([(x >= -tol) & (x <= 1 + tol) for x in X])
        interior = np.logical_and.reduce([(x > tol) & (x < 1 - tol) for x in X])
    elif shape in ("disk", "ball"):
        r = np.sqrt(sum(x * x for x in X))
        closed, interior = r <= 1 + tol, r < 1 - tol
    elif shape == "lshape":
        x, y = X
        box_c = (x >= -tol) & (x <= 1 + tol) & (y >= -tol) & (y <= 1 + tol)
        box_i = (x > tol) & (x < 1 - tol) & (y > tol) & (y < 1 - tol)
        closed = box_c & ((x <= 0.5 + tol) | (y <= 0.5 + tol))
        interior = box_i & ((x < 0.5 - tol) | (y < 0.5 - tol))
    else:
        raise ValueError(f"unknown shape {shape!r}; choose from {SHAPES}")
    return closed, interior


def _level_set(shape: str, X: list[np.ndarray]) -> np.ndarray:
    """Negative inside the domain, positive outside, zero on the boundary."""
    if shape in ("square", "cube"):
        return np.maximum.reduce([np.maximum(-x, x - 1.0) for x in X])
    if shape in ("disk", "ball"):
        return np.sqrt(sum(x * x for x in X)) - 1.0
    if shape == "lshape":
        x, y = X
        box = np.maximum.reduce([-x, x - 1.0, -y, y - 1.0])
        return np.maximum(box, np.minimum(x - 0.5, y - 0.5))
    raise ValueError(f"unknown shape {shape!r}; choose from {SHAPES}")


def _edge_fraction(shape, inner, outer, iters=60):
    """Fraction of each segment inner -> outer lying inside the domain (bisection)."""
    lo = np.zeros(inner[0].shape)
    hi = np.ones(inner[0].shape)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pts = [a + mid * (b - a) for a, b in zip(inner, outer)]
        inside = _level_set(shape, pts) <= 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


def _pair_slices(d: int, k: int):
    """Slices selecting the lower and upper node of every axis-k edge."""
    a = [slice(None)] * d
    b = [slice(None)] * d
    a[k], b[k] = slice(0, -1), slice(1, None)
    return tuple(a), tuple(b)


# cut fractions below this are raised to it to keep the system well scaled
_MIN_FRACTION = 0.05


def _corner_slices(d: int, n: int):
    """For each corner sigma, per-axis slices of the edge-difference arrays."""
    out = []
    for sigma in itertools.product((0, 1), repeat=d):
        per_axis = []
        for k in range(d):
            per_axis.append(
                tuple(slice(0, n) if m == k else slice(s, s + n) for m, s in enumerate(sigma))
            )
        out.append((sigma, per_axis))
    return out


def _element_reduce(mask: np.ndarray, n: int, op) -> np.ndarray:
    d = mask.ndim
    acc = None
    for sigma in itertools.product((0, 1), repeat=d):
        part = mask[tuple(slice(s, s + n) for s in sigma)]
        acc = part.copy() if acc is None else op(acc, part)
    return acc


def _element_to_nodes(elem: np.ndarray, n: int) -> np.ndarray:
    d = elem.ndim
    out = np.zeros((n + 1,) * d)
    for sigma in itertools.product((0, 1), repeat=d):
        out[tuple(slice(s, s + n) for s in sigma)] += elem
    return out


class _Layout:
    """Index bookkeeping, quadrature weights and the sparse assembly plan.

    With Dirichlet data, an edge joining an unknown node to a node outside the
    closed domain is cut where it meets the boundary: its difference quotient
    uses the true distance theta*h to the boundary (where u = 0).  Corner
    terms on outside nodes only see cut edges, and their weights are chosen
    so that a cut edge has the p = 2 conductance 1/theta (Shortley-Weller
    type) whenever theta >= 1/2.  Shorter cut edges get 1/(2 theta^2), which
    places the boundary at most h/8 too far in.  On grid-aligned boundaries
    nothing is cut and the plain stencil remains.
    """

    def __init__(self, dim, shape, n, bc):
        self.d, self.n = dim, n
        lo, hi = _bounds(shape)
        self.h = (hi - lo) / n
        X = node_coordinates(shape, n)
        closed, interior = _domain_masks(shape, X, self.h)
        d, h = self.d, self.h

        elem_inside = _element_reduce(closed, n, np.logical_and)
        if bc == "neumann":
            self.unknown = _element_to_nodes(elem_inside.astype(float), n) > 0
        else:
            self.unknown = interior
        self.cell_volume = h**d / 2**d * _element_to_nodes(elem_inside.astype(float), n)
        self.load_w = self.cell_volume.copy() if bc == "neumann" else h**d * self.unknown
        on_box_face = np.zeros_like(closed)
        for k in range(d):
            idx = [slice(None)] * d
            for end in (0, -1):
                idx[k] = end
                on_box_face[tuple(idx)] = True
        if bc == "neumann":
            self.eval_mask = self.cell_volume > 0
        else:
            self.eval_mask = self.unknown | (closed & on_box_face)

        # Cut edges (Dirichlet only).  An edge from an unknown node to a node
        # outside the closed domain meets the boundary at fraction theta of h;
        # theta is floored at 1/2 so the weights below stay nonnegative.
        outside = ~closed
        fracs = []
        for k in range(d):
            a, b = _pair_slices(d, k)
            f = np.ones(np.diff(closed, axis=k).shape)
            if bc == "dirichlet":
                fwd = self.unknown[a] & outside[b]
                bwd = outside[a] & self.unknown[b]
                for sel, inner_s, outer_s in ((fwd, a, b), (bwd, b, a)):
                    if sel.any():
                        inner = [x[inner_s][sel] for x in X]
                        outer = [x[outer_s][sel] for x in X]
                        f[sel] = np.maximum(_edge_fraction(shape, inner, outer), _MIN_FRACTION)
            fracs.append(f)
        self.edge_frac = fracs
        self.cut_minus, self.cut_plus = [], []
        for k in range(d):
            a, b = _pair_slices(d, k)
            plus = np.ones(closed.shape)
            minus = np.ones(closed.shape)
            plus[a] = np.where(self.unknown[a] & outside[b], fracs[k], 1.0)
            minus[b] = np.where(outside[a] & self.unknown[b], fracs[k], 1.0)
            self.cut_plus.append(plus)
            self.cut_minus.append(minus)
        self.edge_scale = [1.0 / f for f in fracs]
        self.has_cuts = any(bool(np.any(f != 1.0)) for f in fracs)

        self.corners = _corner_slices(d, n)
        if bc == "neumann":
            self.corner_weight = [elem_inside.astype(float) for _ in self.corners]
        else:
            self.corner_weight = self._outer_weights(outside)

        self.index = -np.ones((n + 1,) * d, dtype=np.int64)
        self.index[self.unknown] = np.arange(int(self.unknown.sum()))
        self.n_unknown = int(self.unknown.sum())
        self._build_plan()

    def _outer_weights(self, outside):
        """Corner weights for Dirichlet data.

        Corner terms on nodes of the closed domain weigh 1.  A corner term on an
        outside node only sees cut edges (its other differences vanish), so its
        weight is free.  The weights are fitted, nonnegative, so that each cut
        edge collects 2^{d-1} (2 theta - 1) from its outer corners where that is
        positive.  Together with the 2^{d-1} inner corners this gives the cut
        edge the p = 2 conductance 1/theta.  Negative weights would do the same
        for theta < 1/2 but break positivity of the frozen coefficient for p < 2.
        """
        d, n = self.d, self.n
        weights = [np.ones((n,) * d) for _ in self.corners]
        if not self.has_cuts:
            return weights
        edge_base = np.cumsum([0] + [f.size for f in self.edge_frac])
        var_corner, var_elem, rows, cols = [], [], [], []
        n_var = 0
        for ci, (sigma, per_axis) in enumerate(self.corners):
            node = tuple(slice(s, s + n) for s in sigma)
            cut_here = [self.edge_frac[k][per_axis[k]] != 1.0 for k in range(d)]
            sel = outside[node] & np.logical_or.reduce(cut_here)
            elems = np.flatnonzero(sel)
            if elems.size == 0:
                continue
            ids = n_var + np.arange(elems.size)
            n_var += elems.size
            var_corner.append(np.full(elems.size, ci))
            var_elem.append(elems)
            for k in range(d):
                # flat index of the axis-k edge used by this corner in each element
                grid = np.arange(self.edge_frac[k].size).reshape(self.edge_frac[k].shape)
                flat = grid[per_axis[k]].ravel()[elems]
                hit = cut_here[k].ravel()[elems]
                rows.append(edge_base[k] + flat[hit])
                cols.append(ids[hit])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        used, row_id = np.unique(rows, return_inverse=True)
        theta = np.concatenate([f.ravel() for f in self.edge_frac])[used]
        target = 2.0 ** (d - 1) * np.maximum(2.0 * theta - 1.0, 0.0)
        A = sp.csr_matrix((np.ones(rows.size), (row_id, cols)), shape=(used.size, n_var))
        # start from an even split, then a small regularized nonnegative correction
        counts = np.asarray(A.sum(axis=1)).ravel()
        share = target / counts
        w0 = np.asarray(
            sp.csr_matrix((share[row_id], (row_id, cols)), shape=A.shape).max(axis=0).todense()
        ).ravel()
        lam = 1e-3
        M = sp.vstack([A, lam * sp.identity(n_var)]).tocsr()
        rhs = np.concatenate([target - A @ w0, np.zeros(n_var)])
        fit = optimize.lsq_linear(M, rhs, bounds=(-w0, np.inf), lsmr_tol="auto", tol=1e-12)
        w = w0 + fit.x
        miss = np.abs(A @ w - target).max()
        if miss > 1e-6:
            log.debug("cut-edge weights fitted only to %.2e", miss)
        var_corner = np.concatenate(var_corner)
        var_elem = np.concatenate(var_elem)
        for ci in np.unique(var_corner):
            pick = var_corner == ci
            flat = weights[ci].ravel()
            flat[var_elem[pick]] = w[pick]
        return weights

    def _build_plan(self):
        """Map edge weights to the CSR data of sum_k D_k^T diag(w_k) D_k."""
        d, N = self.d, self.n_unknown
        rows, cols, edge_ids, signs = [], [], [], []
        offset = 0
        self.edge_offsets = []
        for k in range(d):
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[k], hi[k] = slice(0, -1), slice(1, None)
            i = self.index[tuple(lo)].ravel()
            j = self.index[tuple(hi)].ravel()
            e = np.arange(i.size) + offset
            self.edge_offsets.append(offset)
            offset += i.size
            for a, b in ((i, j), (j, i)):
                ok = a >= 0
                rows.append(a[ok]); cols.append(a[ok]); edge_ids.append(e[ok])
                signs.append(np.ones(ok.sum()))
                both = ok & (b >= 0)
                rows.append(a[both]); cols.append(b[both]); edge_ids.append(e[both])
                signs.append(-np.ones(both.sum()))
        self.n_edges = offset
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        self._entry_edge = np.concatenate(edge_ids)
        self._entry_sign = np.concatenate(signs)
        key = rows * max(N, 1) + cols
        uniq, self._entry_pos = np.unique(key, return_inverse=True)
        r, c = np.divmod(uniq, max(N, 1))
        self.indptr = np.concatenate(([0], np.cumsum(np.bincount(r, minlength=N))))
        self.indices = c
        self.nnz = uniq.size

    def assemble(self, edge_weights: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(
            self._entry_pos,
            weights=self._entry_sign * edge_weights[self._entry_edge],
            minlength=self.nnz,
        )
        return sp.csr_matrix(
            (data, self.indices, self.indptr), shape=(self.n_unknown, self.n_unknown)
        )

    def scatter(self, x: np.ndarray) -> np.ndarray:
        U = np.zeros((self.n + 1,) * self.d)
        U[self.unknown] = x
        return U

    def deltas(self, U):
        return [np.diff(U, axis=k) * self.edge_scale[k] / self.h for k in range(self.d)]

    def corner_terms(self, U, p, eps, want_kappa=True):
        """Gradient part of the energy and, optionally, edge weights h^{d-2} kappa."""
        d, h = self.d, self.h
        deltas = self.deltas(U)
        kappa = [np.zeros_like(dk) for dk in deltas] if want_kappa else None
        total = 0.0
        for (_, per_axis), W in zip(self.corners, self.corner_weight):
            t2 = sum(deltas[k][per_axis[k]] ** 2 for k in range(d))
            t = np.sqrt(t2)
            total += float(np.sum(B_eps_array(t, p, eps) * W))
            if want_kappa:
                a = a_eps_array(t, p, eps) * W
                for k in range(d):
                    kappa[k][per_axis[k]] += a
        grad_energy = h**d / 2**d * total
        if not want_kappa:
            return grad_energy, None
        scale = h ** (d - 2) / 2**d
        w = np.concatenate(
            [(kk * s * s).ravel() for kk, s in zip(kappa, self.edge_scale)]
        ) * scale
        return grad_energy, w

    def hessian_operator(self, U, p, eps):
        """Matrix-free Hessian of the gradient energy at U, restricted to the unknowns."""
        d, h, n = self.d, self.h, self.n
        du = self.deltas(U)
        coef = []
        for (_, per_axis), W in zip(self.corners, self.corner_weight):
            g = [du[k][per_axis[k]] for k in range(d)]
            t2 = sum(gk * gk for gk in g)
            a = a_eps_array(np.sqrt(t2), p, eps) * W
            c = (p - 2.0) * (t2 + eps) ** ((p - 4.0) / 2.0) * W if p != 2.0 else None
            coef.append((per_axis, g, a, c))
        scale = h**d / 2**d / h
        unknown = self.unknown

        def matvec(v):
            V = self.scatter(np.ravel(v))
            dv = self.deltas(V)
            Q = [np.zeros_like(x) for x in dv]
            for per_axis, g, a, c in coef:
                w = [dv[k][per_axis[k]] for k in range(d)]
                if c is not None:
                    cd = c * sum(gk * wk for gk, wk in zip(g, w))
                for k in range(d):
                    q = a * w[k]
                    if c is not None:
                        q = q + cd * g[k]
                    Q[k][per_axis[k]] += q
            out = np.zeros((n + 1,) * d)
            for k in range(d):
                qk = Q[k] * self.edge_scale[k] * scale
                lo = [slice(None)] * d
                hi = [slice(None)] * d
                lo[k], hi[k] = slice(0, -1), slice(1, None)
                out[tuple(lo)] -= qk
                out[tuple(hi)] += qk
            return out[unknown]

        return spla.LinearOperator((self.n_unknown,) * 2, matvec=matvec, dtype=float)


@dataclass(frozen=True, eq=False)
class GridProblem:
    """Regularized p-Laplacian Poisson problem on a node grid.

    ``f`` holds source values at the (n+1)^dim nodes; values outside the
    domain are ignored.
    """

    dim: int
    shape: str
    n: int
    bc: str
    f: np.ndarray
    params: StructuralParams

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; choose from {SHAPES}")
        if _SHAPE_DIM[self.shape] != self.dim:
            raise ValueError(f"shape {self.shape!r} is {_SHAPE_DIM[self.shape]}-dimensional")
        if self.bc not in ("dirichlet", "neumann"):
            raise ValueError("bc must be 'dirichlet' or 'neumann'")
        if self.n < 4:
            raise ValueError("need at least 4 cells per axis")
        f = np.array(self.f, dtype=float)
        if f.shape != (self.n + 1,) * self.dim:
            raise ValueError(f"f must have shape {(self.n + 1,) * self.dim}, got {f.shape}")
        f.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "_layout", _Layout(self.dim, self.shape, self.n, self.bc))
        if self.bc == "neumann":
            w = self._layout.load_w
            net, mass = float(np.sum(w * f)), float(np.sum(w * np.abs(f)))
            if abs(net) > 1e-10 * mass:
                raise IncompatibleSource(
                    f"Neumann source must integrate to zero (net {net:.3e}, total {mass:.3e})"
                )

    @property
    def spacing(self) -> float:
        return self._layout.h

    @property
    def cell_volume(self) -> np.ndarray:
        """Dual volume of each node inside the closed domain."""
        return self._layout.cell_volume

    @property
    def domain_mask(self) -> np.ndarray:
        return self._layout.cell_volume > 0

    def with_params(self, params: StructuralParams) -> "GridProblem":
        return GridProblem(self.dim, self.shape, self.n, self.bc, self.f, params)

    def with_source(self, f) -> "GridProblem":
        return GridProblem(self.dim, self.shape, self.n, self.bc, f, self.params)


@dataclass(frozen=True, eq=False)
class SolveResult:
    u: np.ndarray
    grad_mag: np.ndarray
    grad_sup: float
    energy: float
    iterations: int
    residual: float
    converged: bool = True
    cell_volume: np.ndarray | None = None
    spacing: float = 0.0
    energy_history: list = field(default_factory=list)


def builtin_source(name: str, shape: str, n: int, bc: str = "dirichlet",
                   width: float = 0.1, scale: float = 1.0) -> np.ndarray:
    """Node values of a named source.

    ``gaussian`` is one bump at the domain centre and ``bump-pair`` two bumps
    of opposite sign; both carry mass equal to the boundary measure so the
    boundary flux is of order one for every p.  ``bump-pair`` is made exactly
    mean-free over the grid.
    """
    X = node_coordinates(shape, n)
    d = len(X)
    if name == "zero":
        f = np.zeros_like(X[0])
    elif name == "one":
        f = np.ones_like(X[0])
    elif name == "sine":
        if shape not in ("square", "cube"):
            raise ValueError("the sine source is defined on the unit square/cube")
        f = d * math.pi**2 * np.prod([np.sin(math.pi * x) for x in X], axis=0)
    elif name in ("gaussian", "bump-pair"):
        centre = {"square": 0.5, "cube": 0.5, "disk": 0.0, "ball": 0.0, "lshape": 0.25}[shape]
        area = {"square": 4.0, "cube": 6.0, "disk": 2 * math.pi,
                "ball": 4 * math.pi, "lshape": 4.0}[shape]
        amp = area / (2 * math.pi * width**2) ** (d / 2)

        def bump(c):
            r2 = sum((x - ck) ** 2 for x, ck in zip(X, c))
            return amp * np.exp(-r2 / (2 * width**2))

        c0 = [centre] * d
        if name == "gaussian":
            f = bump(c0)
        else:
            shift = 0.2 if shape != "lshape" else 0.1
            c1 = [c0[0] - shift] + c0[1:]
            c2 = [c0[0] + shift] + c0[1:]
            f = 0.5 * (bump(c1) - bump(c2))
    else:
        raise ValueError(f"unknown source {name!r}; choose from {SOURCES}")
    f = scale * f
    if bc == "neumann" and name != "zero":
        lay = _Layout(d, shape, n, bc)
        w = lay.load_w
        f = np.where(w > 0, f - np.sum(w * f) / np.sum(w), 0.0)
    return f


def make_problem(dim=2, shape="square", n=64, p=2.0, eps=1e-6, bc="dirichlet",
                 source="gaussian", scale=1.0, width=0.1) -> GridProblem:
    if isinstance(source, str):
        f = builtin_source(source, shape, n, bc, width=width, scale=scale)
    else:
        f = scale * np.asarray(source, dtype=float)
    return GridProblem(dim, shape, n, bc, f, StructuralParams(p, eps))


def grad_field(u, spacing: float, mask=None, bc: str = "dirichlet", cuts=None) -> np.ndarray:
    """Node gradient magnitude by centered differences.

    Box faces use second-order one-sided differences.  With ``bc='neumann'``
    the component along an axis is zero wherever a node lacks a neighbour in
    ``mask`` along that axis.  ``cuts`` optionally gives, per axis, a pair
    (minus, plus) of node arrays with the fraction of the neighbouring edge
    inside the domain; where it is below 1 the neighbour is replaced by the
    boundary point (value 0) and the three-point nonuniform formula is used.
    Nodes outside ``mask`` get 0.
    """
    u = np.asarray(u, dtype=float)
    mask = np.ones(u.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    sq = np.zeros_like(u)
    for k in range(u.ndim):
        g = np.gradient(u, spacing, axis=k, edge_order=2 if u.shape[k] >= 3 else 1)
        if bc == "neumann":
            lo = np.zeros_like(mask)
            hi = np.zeros_like(mask)
            dst = [slice(None)] * u.ndim
            src = [slice(None)] * u.ndim
            dst[k], src[k] = slice(1, None), slice(0, -1)
            lo[tuple(dst)] = mask[tuple(src)]
            hi[tuple(src)] = mask[tuple(dst)]
            g = np.where(lo & hi, g, 0.0)
        if cuts is not None:
            minus, plus = cuts[k]
            hit = (minus < 1.0) | (plus < 1.0)
            if hit.any():
                g = np.where(hit, _cut_derivative(u, spacing, k, minus, plus), g)
        sq += g * g
    return np.where(mask, np.sqrt(sq), 0.0)


def _shift(u, k, m):
    """v[i] = u[i + m] along axis k, zero where i + m falls off the grid."""
    out = np.zeros_like(u)
    src = [slice(None)] * u.ndim
    dst = [slice(None)] * u.ndim
    if m > 0:
        src[k], dst[k] = slice(m, None), slice(0, -m)
    else:
        src[k], dst[k] = slice(0, m), slice(-m, None)
    out[tuple(dst)] = u[tuple(src)]
    return out


def _lagrange_slope(xs, vs):
    """Derivative at 0 of the quadratic through (xs[i], vs[i])."""
    x0, x1, x2 = xs
    w0 = (-x1 - x2) / ((x0 - x1) * (x0 - x2))
    w1 = (-x0 - x2) / ((x1 - x0) * (x1 - x2))
    w2 = (-x0 - x1) / ((x2 - x0) * (x2 - x1))
    return w0 * vs[0] + w1 * vs[1] + w2 * vs[2]


def _cut_derivative(u, h, k, minus, plus):
    """Axis-k derivative at nodes next to a cut boundary (where u = 0).

    Uses the quadratic through the two nearest values on the uncut side and
    the boundary point; with the boundary closer than h/2 the node's own
    value is skipped so its error is not divided by the short distance.
    Cut on both sides: the quadratic through both boundary points and u.
    """
    up, um = _shift(u, k, 1), _shift(u, k, -1)
    upp, umm = _shift(u, k, 2), _shift(u, k, -2)
    zero = np.zeros_like(u)
    one = np.ones_like(u)
    near_side = _lagrange_slope((-h * one, zero, plus * h), (um, u, zero))
    far_side = _lagrange_slope((-2 * h * one, -h * one, plus * h), (umm, um, zero))
    g_plus = np.where(plus < 0.5, far_side, near_side)
    near_side = _lagrange_slope((-minus * h, zero, h * one), (zero, u, up))
    far_side = _lagrange_slope((-minus * h, h * one, 2 * h * one), (zero, up, upp))
    g_minus = np.where(minus < 0.5, far_side, near_side)
    both = _lagrange_slope((-minus * h, zero, plus * h), (zero, u, zero))
    return np.where(
        (plus < 1.0) & (minus < 1.0), both, np.where(plus < 1.0, g_plus, g_minus)
    )


def energy(u, problem: GridProblem) -> float:
    """Discrete energy of a node field (values off the unknown set are used as given)."""
    lay = problem._layout
    U = np.asarray(u, dtype=float)
    p, eps = problem.params.p, problem.params.epsilon
    ge, _ = lay.corner_terms(U, p, eps, want_kappa=False)
    return ge - float(np.sum(lay.load_w * problem.f * U))


def gradient_integral_B(result: SolveResult, params: StructuralParams) -> float:
    """Quadrature of the integral of B_eps(|grad u|) with the node dual volumes."""
    vol = result.cell_volume
    if vol is None:
        vol = np.full(result.grad_mag.shape, 1.0)
    return float(np.sum(B_eps_array(result.grad_mag, params.p, params.epsilon) * vol))


def _pcg(A, b, rtol, maxiter, diag=None):
    diag = A.diagonal() if diag is None else diag
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
    M = spla.LinearOperator(A.shape, matvec=lambda x: inv * x, dtype=float)
    x, info = spla.cg(A, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    return x


def _eps_ladder(p: float, eps: float) -> list[float]:
    if abs(p - 2.0) <= 1.0 or eps >= 1.0:
        return [eps]
    ladder, e = [], 1.0
    while e > eps * 1.0000001:
        ladder.append(e)
        e /= 10.0
    ladder.append(eps)
    return ladder


def solve(problem: GridProblem, tol: float = 1e-8, max_iter: int = 500,
          inner_ratio: float = 0.1, linear_maxiter: int | None = None,
          method: str = "newton") -> SolveResult:
    """Minimize the discrete energy to scaled-residual ``tol``.

    The residual is ||F - A(u) u|| / ||F||, the Euclidean norm of the energy
    gradient on the unknowns relative to the load vector.  ``method`` picks
    the search direction: ``"kacanov"`` solves with the frozen coefficient,
    ``"newton"`` with the exact energy Hessian (symmetric positive definite
    for eps > 0).  Both are backtracked on the energy.  Raises
    MaxIterExceeded (carrying the best iterate) when the budget runs out.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if method not in ("newton", "kacanov"):
        raise ValueError("method must be 'newton' or 'kacanov'")
    lay = problem._layout
    p, eps_target = problem.params.p, problem.params.epsilon
    F = (lay.load_w * problem.f)[lay.unknown]
    neumann = problem.bc == "neumann"
    wmean = lay.cell_volume[lay.unknown]
    if neumann:
        F = F - lay.load_w[lay.unknown] * F.sum() / lay.load_w[lay.unknown].sum()
    fnorm = float(np.linalg.norm(F))
    cuts = list(zip(lay.cut_minus, lay.cut_plus)) if lay.has_cuts else None
    if fnorm == 0.0:
        U = np.zeros((lay.n + 1,) * lay.d)
        return SolveResult(U, np.zeros_like(U), 0.0, 0.0, 0, 0.0, True,
                           lay.cell_volume, lay.h, [0.0])
    if eps_target == 0.0 and p != 2.0:
        raise SingularCoefficient(
            "solving needs eps > 0 unless p = 2 (the coefficient degenerates at zero gradient)"
        )
    linear_maxiter = linear_maxiter or 20 * lay.n_unknown

    def project(x):
        if neumann:
            x = x - np.dot(wmean, x) / wmean.sum()
        return x

    # start from the Laplace solution, rescaled by the homogeneity of the p-energy
    _, w1 = lay.corner_terms(np.zeros((lay.n + 1,) * lay.d), 2.0, 0.0)
    x = project(_pcg(lay.assemble(w1), F, 1e-10, linear_maxiter))
    if p != 2.0:
        U = lay.scatter(x)
        g_p, _ = lay.corner_terms(U, p, 0.0, want_kappa=False)
        load = float(np.dot(F, x))
        if g_p > 0 and load > 0:
            x = x * (load / (p * g_p)) ** (1.0 / (p - 1.0))

    iterations, history = 0, []
    residual = math.inf
    ladder = _eps_ladder(p, eps_target)
    for stage, eps in enumerate(ladder):
        final = stage == len(ladder) - 1
        stage_tol = tol if final else max(tol, 1e-4)
        x, residual, iterations, ok = _descend(
            lay, F, fnorm, x, p, eps, stage_tol, max_iter - iterations, iterations,
            inner_ratio, linear_maxiter, project, history if final else None, method,
        )
        if not ok and final:
            break
    U = lay.scatter(x)
    e_final = energy(U, problem)
    gm = grad_field(U, lay.h, lay.eval_mask, problem.bc, cuts)
    result = SolveResult(U, gm, float(gm.max()), e_final, iterations, residual,
                         residual <= tol, lay.cell_volume, lay.h, history)
    if residual > tol:
        raise MaxIterExceeded(result)
    return result


def _descend(lay, F, fnorm, x, p, eps, tol, budget, it0, inner_ratio, linear_maxiter,
             project, history, method):
    """Backtracked descent on the energy; returns (x, res, iters, converged)."""
    load = lambda y: float(np.dot(F, y))  # noqa: E731
    U = lay.scatter(x)
    ge, w = lay.corner_terms(U, p, eps)
    E = ge - load(x)
    if history is not None:
        history.append(E)
    it = it0
    res = math.inf
    for _ in range(max(budget, 0) + 1):
        A = lay.assemble(w)
        r = project(F - A @ x)
        res = float(np.linalg.norm(r)) / fnorm
        if res <= tol:
            return x, res, it, True
        if it - it0 >= budget:
            break
        rtol = min(inner_ratio, math.sqrt(res))
        if method == "newton":
            H = lay.hessian_operator(U, p, eps)
            d = _pcg(H, r, rtol, linear_maxiter, diag=A.diagonal())
        else:
            d = _pcg(A, r, rtol, linear_maxiter)
        d = project(d)
        slope = float(np.dot(r, d))
        if not slope > 0:
            d, slope = r.copy(), float(np.dot(r, r))
        escale = abs(ge) + abs(load(x)) + 1e-300
        roundoff = 64 * np.finfo(float).eps * escale
        t, accepted = 1.0, False
        for _ in range(40):
            xt = project(x + t * d)
            Ut = lay.scatter(xt)
            ge_t, _ = lay.corner_terms(Ut, p, eps, want_kappa=False)
            Et = ge_t - load(xt)
            if Et <= E - 1e-4 * t * slope:
                accepted = True
                break
            if t * slope < roundoff:
                # energy differences are below rounding; judge the step by the residual
                _, wt = lay.corner_terms(Ut, p, eps)
                rt = project(F - lay.assemble(wt) @ xt)
                if float(np.linalg.norm(rt)) / fnorm < res and Et <= E + roundoff:
                    accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted:
            log.debug("line search stalled at residual %.3e", res)
            return x, res, it, False
        if Et > E + roundoff:
            raise SolverError(f"energy increased from {E!r} to {Et!r}")
        x, E, U = xt, Et, Ut
        ge, w = lay.corner_terms(U, p, eps)
        if history is not None:
            history.append(E)
    return x, res, it, False
