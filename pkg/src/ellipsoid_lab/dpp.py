"""Grid fixed-point solver for ``u(x) = avg_{E_x} u`` with payoff F off the domain.

Nodes of a uniform grid inside the domain are unknowns. Each ellipsoid
average is a ball quadrature; quadrature points inside the domain read the
grid by multilinear interpolation (corners outside the domain take F), points
outside the domain take F directly. This yields a sparse nonnegative operator
``P`` and vector ``b`` with ``u = P u + b``.
"""
import csv
import json
import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import bicgstab

from . import kernels
from .errors import ConfigError, ValidationError
from .field import Ball, Box, collar_width
from .quadrature import ball_rule

METHODS = ("jacobi", "krylov")


def _domain_code(domain):
    if isinstance(domain, Ball):
        c = np.asarray(domain.center, float)
        return 0, c, c, float(domain.radius)
    if isinstance(domain, Box):
        return 1, np.asarray(domain.lo, float), np.asarray(domain.hi, float), 0.0
    raise ValidationError(f"unsupported domain {domain!r}")


@dataclass
class Grid:
    origin: np.ndarray
    h: float
    dims: np.ndarray

    def coords(self):
        axes = [self.origin[d] + self.h * np.arange(self.dims[d]) for d in range(len(self.dims))]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def interpolate(self, grid_values, points):
        """Multilinear interpolation of a C-ordered grid array at ``points``."""
        pts = np.atleast_2d(points)
        n = pts.shape[1]
        t = (pts - self.origin) / self.h
        i0 = np.clip(np.floor(t).astype(np.int64), 0, self.dims - 2)
        fr = np.clip(t - i0, 0.0, 1.0)
        vals = grid_values.reshape(tuple(self.dims))
        out = np.zeros(pts.shape[0])
        for c in range(1 << n):
            bits = np.array([(c >> d) & 1 for d in range(n)])
            w = np.prod(np.where(bits == 1, fr, 1.0 - fr), axis=1)
            out += w * vals[tuple((i0 + bits).T)]
        return out


def make_grid(domain, cls, eps, h):
    lo, hi = domain.bounds()
    pad = collar_width(cls, eps) + 2.0 * h
    lo, hi = lo - pad, hi + pad
    dims = np.ceil((hi - lo) / h).astype(np.int64) + 1
    # center the lattice on the domain center so symmetric domains get symmetric grids
    c = np.asarray(domain.center, float)
    k = np.ceil((c - lo) / h)
    origin = c - k * h
    dims = np.maximum(dims, (np.ceil((hi - origin) / h) + 1).astype(np.int64))
    return Grid(origin, float(h), dims)


@dataclass
class GridSolution:
    domain: object
    h: float
    eps: float
    grid: Grid
    grid_values: np.ndarray
    unknown_mask: np.ndarray
    payoff: object
    residual: float
    iterations: int
    converged: bool
    tol: float
    method: str
    last_increment: float
    field_info: dict = dc_field(default_factory=dict)

    @property
    def nodes(self):
        return self.grid.coords()[self.unknown_mask]

    @property
    def values(self):
        return self.grid_values[self.unknown_mask]

    def value_at(self, points):
        """Interpolated solution; points outside the domain return the payoff."""
        pts = np.atleast_2d(np.asarray(points, float))
        out = self.grid.interpolate(self.grid_values, pts)
        outside = ~self.domain.contains(pts)
        if np.any(outside):
            out[outside] = self.payoff(pts[outside])
        return out

    def metadata(self):
        return {
            "domain": self.domain.describe(),
            "eps": self.eps,
            "h": self.h,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "tol": self.tol,
            "method": self.method,
            "last_increment": self.last_increment,
            "unknowns": int(np.count_nonzero(self.unknown_mask)),
            "field": self.field_info,
        }

    def to_csv(self, path):
        nodes, vals = self.nodes, self.values
        n = nodes.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(n)] + ["u"])
            for p, v in zip(nodes, vals):
                w.writerow([repr(float(c)) for c in p] + [repr(float(v))])

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2)

    def save(self, prefix):
        self.to_csv(f"{prefix}.csv")
        self.to_json(f"{prefix}.json")
        return f"{prefix}.csv", f"{prefix}.json"


@dataclass
class _System:
    grid: Grid
    P: sparse.csr_matrix
    b: np.ndarray
    unknown_idx: np.ndarray
    fixed: np.ndarray
    mask: np.ndarray


def assemble(field, domain, payoff, eps, h, degree=4, seed=0):
    """Sparse ``(P, b)`` of the discrete averaging operator on the unknown nodes."""
    cls = field.cls
    if domain.n != cls.n:
        raise ValidationError("domain and field dimensions differ")
    grid = make_grid(domain, cls, eps, h)
    coords = grid.coords()
    mask = domain.contains(coords)
    if not np.any(mask):
        raise ValidationError("grid has no interior nodes; decrease h")
    unknown = np.full(coords.shape[0], -1, np.int64)
    unknown_idx = np.flatnonzero(mask)
    unknown[unknown_idx] = np.arange(unknown_idx.size)
    fixed = np.zeros(coords.shape[0])
    fixed[~mask] = payoff(coords[~mask])
    nodes = coords[unknown_idx]
    shapes = field.sqrt_many(nodes)
    y, w = ball_rule(cls.n, degree, seed)
    kind, a, bb, rad = _domain_code(domain)
    indptr, indices, data, b, outside = kernels.assemble_average_operator(
        nodes, shapes, y, w, eps, grid.origin, h, grid.dims, unknown, fixed, kind, a, bb, rad)
    # quadrature points that left the domain read the payoff directly
    rows = np.flatnonzero(outside)
    for start in range(0, rows.size, 1024):
        r = rows[start:start + 1024]
        q = nodes[r, None, :] + eps * np.einsum("rde,ke->rkd", shapes[r], y)
        out = ~domain.contains(q.reshape(-1, cls.n)).reshape(q.shape[:2])
        vals = np.zeros(q.shape[:2])
        vals[out] = payoff(q[out])
        b[r] += vals @ w
    P = sparse.csr_matrix((data, indices, indptr), shape=(nodes.shape[0], nodes.shape[0]))
    return _System(grid, P, b, unknown_idx, fixed, mask)


def _jacobi(P, b, u, tol, max_iters):
    """Synchronous iteration ``u <- P u + b`` with an error-based stop.

    Stops once ``d * rho / (1 - rho) <= tol`` where ``d`` is the last sup-norm
    increment and ``rho`` the observed contraction ratio (and ``d <= tol``).
    """
    prev_d = None
    d = math.inf
    for it in range(1, max_iters + 1):
        new = P @ u + b
        d = float(np.max(np.abs(new - u))) if u.size else 0.0
        u = new
        if d == 0.0:
            return u, it, d, True
        if prev_d is not None and d <= tol:
            rho = min(d / prev_d, 1.0 - 1e-12) if prev_d > 0 else 0.0
            if d * rho / (1.0 - rho) <= tol:
                return u, it, d, True
        prev_d = d
    return u, max_iters, d, False


def solve_dpp(field, domain, payoff, eps, h, tol=1e-8, max_iters=200_000, method="jacobi",
              degree=4, initial="payoff", seed=0):
    """Solve the discrete DPP.

    ``method="jacobi"`` is the plain synchronous fixed-point iteration.
    ``method="krylov"`` solves ``(I - P) u = b`` with BiCGSTAB and then runs
    Jacobi sweeps so the reported increment criterion still holds.
    ``initial`` is ``"payoff"`` (F at the nodes), ``"zero"`` or an array.
    """
    if eps <= 0 or h <= 0 or tol <= 0:
        raise ValidationError("eps, h and tol must be positive")
    if eps < 4.0 * h:
        raise ConfigError(f"eps={eps} must be at least 4h={4 * h}")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    sysm = assemble(field, domain, payoff, eps, h, degree, seed)
    nodes = sysm.grid.coords()[sysm.unknown_idx]
    if isinstance(initial, str):
        if initial == "payoff":
            u0 = np.asarray(payoff(nodes), float)
        elif initial == "zero":
            u0 = np.zeros(nodes.shape[0])
        else:
            raise ConfigError(f"unknown initial guess {initial!r}")
    else:
        u0 = np.asarray(initial, float).reshape(-1)
    iters = 0
    if method == "krylov":
        A = sparse.identity(sysm.P.shape[0], format="csr") - sysm.P
        bnorm = max(float(np.linalg.norm(sysm.b)), 1e-300)
        u0, info = bicgstab(A, sysm.b, x0=u0, rtol=min(1e-14, tol * 1e-3 / bnorm), atol=0.0,
                            maxiter=max_iters)
        iters = max_iters if info > 0 else 0
    u, it, d, converged = _jacobi(sysm.P, sysm.b, u0, tol, max_iters)
    iters += it
    grid_values = sysm.fixed.copy()
    grid_values[sysm.unknown_idx] = u
    residual = float(np.max(np.abs(u - (sysm.P @ u + sysm.b)))) if u.size else 0.0
    if not converged:
        warnings.warn(f"DPP iteration stopped at max_iters={max_iters} (increment {d:.3e})",
                      RuntimeWarning, stacklevel=2)
    return GridSolution(domain, float(h), float(eps), sysm.grid, grid_values, sysm.mask,
                        payoff, residual, iters, converged, float(tol), method, d,
                        field.describe())


def recompute_residual(sol, field, degree=4, seed=0):
    """Sup-norm of ``u - avg_{E_x} u`` recomputed from the stored values."""
    sysm = assemble(field, sol.domain, sol.payoff, sol.eps, sol.h, degree, seed)
    u = sol.grid_values[sysm.unknown_idx]
    return float(np.max(np.abs(u - (sysm.P @ u + sysm.b))))


# ---------------------------------------------------------------------------
# Holder quotient and mean-value residual
# ---------------------------------------------------------------------------


def holder_estimate(sol, alpha, r_inner, center=None):
    """``max |u(x) - u(z)| / (|x - z|^alpha + eps^alpha)`` over nodes in ``B_{r_inner}``."""
    if not 0.0 < alpha <= 1.0:
        raise ValidationError("alpha must lie in (0, 1]")
    c = np.asarray(sol.domain.center if center is None else center, float)
    coords = sol.grid.coords()
    inner = np.sum((coords - c) ** 2, axis=1) < r_inner**2
    if np.any(inner & ~sol.unknown_mask):
        raise ValidationError("r_inner must lie strictly inside the solved domain")
    pts = coords[inner]
    vals = sol.grid_values[inner]
    if pts.shape[0] < 2:
        return 0.0, None
    ints = np.rint((pts - sol.grid.origin) / sol.h).astype(np.int64)
    span = ints.max(axis=0) - ints.min(axis=0)
    powtab = (np.sqrt(np.arange(int(span @ span) + 1)) * sol.h) ** alpha
    best, i, j = kernels.holder_scan(ints, vals, powtab, sol.eps**alpha)
    if best == 0.0:
        return 0.0, None
    return best, (pts[i].copy(), pts[j].copy())


def mean_value_residual(field, x, eps, u, hessian, degree=8, seed=0):
    """``avg_{E_x} u - u(x) - eps^2/(2(n+2)) trace(A(x) D^2u(x))``.

    ``u`` maps an ``(m, n)`` array to ``(m,)``; ``hessian`` is the Hessian at
    ``x`` (array) or a callable returning it.
    """
    x = np.asarray(x, float)
    n = x.size
    a = field.evaluate(x)
    s = field.sqrt_many(x[None, :])[0]
    y, w = ball_rule(n, degree, seed)
    avg = float(w @ u(x + eps * y @ s.T))
    hess = np.asarray(hessian(x) if callable(hessian) else hessian, float)
    return avg - float(u(x[None, :])[0]) - eps**2 / (2.0 * (n + 2)) * float(np.trace(a @ hess))


# ---------------------------------------------------------------------------
# Payoff library
# ---------------------------------------------------------------------------


def affine_payoff(g, c=0.0):
    g = np.asarray(g, float)
    return lambda p: np.atleast_2d(p) @ g + c


def constant_payoff(c):
    return lambda p: np.full(np.atleast_2d(p).shape[0], float(c))


def quadratic_payoff(H, g=None, c=0.0):
    """``y^T H y / 2 + g.y + c``."""
    H = np.asarray(H, float)
    g = np.zeros(H.shape[0]) if g is None else np.asarray(g, float)

    def fn(p):
        p = np.atleast_2d(p)
        return 0.5 * np.einsum("mi,ij,mj->m", p, H, p) + p @ g + c

    return fn


def harmonic_cubic_payoff(p):
    """``y1^3 - 3 y1 y2^2``: harmonic, bounded on bounded sets."""
    p = np.atleast_2d(p)
    return p[:, 0] ** 3 - 3.0 * p[:, 0] * p[:, 1] ** 2


def sign_payoff(p):
    """``sign(y1)``: a discontinuous payoff."""
    return np.sign(np.atleast_2d(p)[:, 0])


PAYOFFS = ("affine", "constant", "quadratic", "cubic", "sign")


def make_payoff(name, params=None, n=2):
    """Named payoffs for the CLI. ``params`` is a list of floats."""
    params = [] if params is None else list(params)
    if name == "affine":
        if len(params) not in (n, n + 1):
            raise ConfigError(f"affine payoff needs {n} gradient entries and optional offset")
        return affine_payoff(params[:n], params[n] if len(params) > n else 0.0)
    if name == "constant":
        return constant_payoff(params[0] if params else 0.0)
    if name == "quadratic":
        if len(params) != n * n:
            raise ConfigError(f"quadratic payoff needs {n * n} Hessian entries")
        return quadratic_payoff(np.array(params).reshape(n, n))
    if name == "cubic":
        if n < 2:
            raise ConfigError("cubic payoff needs n >= 2")
        return harmonic_cubic_payoff
    if name == "sign":
        return sign_payoff
    raise ConfigError(f"unknown payoff {name!r}; expected one of {PAYOFFS}")
