"""Weighted trace objectives and orthogonal couplings between two ellipsoid steps.

For step matrices ``A1 = A(x)``, ``A2 = A(z)`` and a coupling ``Q`` the coupled
increments are ``eps A1^(1/2) y`` and ``eps A2^(1/2) Q y``. The second-order
change of ``|x - z|^alpha`` is governed by

    T(Q) = trace(W (A1 + A2 - 2 A2^(1/2) Q A1^(1/2))),

with ``W = R diag(alpha - 1, 1, ..., 1) R^T`` and ``R e1`` the unit vector
along ``x - z``. Negative ``T`` is what a good coupling achieves.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .matcore import (
    EllipticityClass,
    as_symmetric,
    check_orthogonal,
    inv_sqrt,
    polar_orthogonal,
    principal_sqrt,
)

E1_TOL = 1e-15


def _unit(v, n=None):
    v = np.array(v, dtype=float).reshape(-1)
    if n is not None and v.size != n:
        raise ValidationError(f"direction has dimension {v.size}, expected {n}")
    nrm = float(np.linalg.norm(v))
    if not np.isfinite(nrm) or nrm == 0.0:
        raise ValidationError("direction must be a nonzero finite vector")
    return v / nrm


def householder_to_e1(v):
    """Symmetric orthogonal ``H`` with ``H v = e1`` (and ``H e1 = v``) for unit ``v``.

    The first component of ``v - e1`` is formed as ``-sum(v[1:]**2) / (1 + v[0])``
    when ``v[0] > 0`` to avoid cancellation; ``v == e1`` gives the identity.
    """
    v = _unit(v)
    n = v.size
    tail = float(v[1:] @ v[1:])
    if tail <= E1_TOL**2 and v[0] > 0:
        return np.eye(n)
    u = v.copy()
    u[0] = -tail / (1.0 + v[0]) if v[0] > 0 else v[0] - 1.0
    return np.eye(n) - 2.0 * np.outer(u, u) / float(u @ u)


@dataclass(frozen=True)
class WeightMatrix:
    """``frame @ diag(alpha - 1, 1, ..., 1) @ frame.T``."""

    n: int
    alpha: float
    frame: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        frame = check_orthogonal(np.asarray(self.frame, dtype=float))
        if frame.shape[0] != self.n:
            raise ValidationError("frame dimension does not match n")
        object.__setattr__(self, "frame", frame)

    @classmethod
    def along(cls, direction, alpha):
        d = _unit(direction)
        return cls(d.size, float(alpha), householder_to_e1(d))

    @classmethod
    def standard(cls, n, alpha):
        return cls(n, float(alpha), np.eye(n))

    @property
    def direction(self):
        return self.frame[:, 0].copy()

    @property
    def matrix(self):
        d = np.ones(self.n)
        d[0] = self.alpha - 1.0
        w = (self.frame * d) @ self.frame.T
        return 0.5 * (w + w.T)


@dataclass(frozen=True)
class CouplingResult:
    Q: np.ndarray
    objective: float
    negative: bool
    branch: str = "optimal"

    def as_dict(self):
        return {"Q": self.Q.tolist(), "objective": self.objective,
                "negative": self.negative, "branch": self.branch}


def _pair(a1, a2):
    a1 = as_symmetric(a1)
    a2 = as_symmetric(a2, a1.shape[0])
    return a1, a2


def trace_objective(a1, a2, q, w, sqrt1=None, sqrt2=None):
    """``trace(W (A1 + A2 - 2 A2^(1/2) Q A1^(1/2)))``."""
    a1, a2 = _pair(a1, a2)
    q = check_orthogonal(q)
    wm = w.matrix if isinstance(w, WeightMatrix) else as_symmetric(w)
    s1 = principal_sqrt(a1) if sqrt1 is None else sqrt1
    s2 = principal_sqrt(a2) if sqrt2 is None else sqrt2
    return float(np.trace(wm @ (a1 + a2)) - 2.0 * np.trace(wm @ s2 @ q @ s1))


def optimal_coupling(a1, a2, w):
    """The orthogonal ``Q`` minimizing :func:`trace_objective`.

    ``T(Q) = trace(W (A1 + A2)) - 2 trace(M Q)`` with ``M = A1^(1/2) W A2^(1/2)``,
    so the minimizer is the maximizer of ``trace(M Q)``: the orthogonal polar
    factor of ``M^T``.
    """
    a1, a2 = _pair(a1, a2)
    s1, s2 = principal_sqrt(a1), principal_sqrt(a2)
    wm = w.matrix
    q0, value = polar_orthogonal(s1 @ wm @ s2)
    obj = float(np.trace(wm @ (a1 + a2)) - 2.0 * value)
    return CouplingResult(q0, obj, obj < 0.0, "optimal")


def mirror_coupling(w):
    """Reflection across the hyperplane orthogonal to the coupling direction."""
    j0 = np.ones(w.n)
    j0[0] = -1.0
    q = (w.frame * j0) @ w.frame.T
    return 0.5 * (q + q.T)


def medium_distance_coupling(a1, a2, direction):
    """``Q = H2 diag(-1, I) H1`` sending ``nu1/|nu1|`` to ``-nu2/|nu2|``.

    ``nu_i = A_i^(-1/2) direction`` and ``H_i`` is the reflection exchanging
    ``nu_i/|nu_i|`` and ``e1``.
    """
    a1, a2 = _pair(a1, a2)
    d = _unit(direction, a1.shape[0])
    h1 = householder_to_e1(inv_sqrt(a1) @ d)
    h2 = householder_to_e1(inv_sqrt(a2) @ d)
    j0 = np.eye(a1.shape[0])
    j0[0, 0] = -1.0
    return h2 @ j0 @ h1


def nu_ratio(a1, a2, direction):
    """``|A1^(-1/2) d| / |A2^(-1/2) d|``."""
    d = _unit(direction)
    return float(np.linalg.norm(inv_sqrt(a1) @ d) / np.linalg.norm(inv_sqrt(a2) @ d))


# ---------------------------------------------------------------------------
# Distortion thresholds and bounds
# ---------------------------------------------------------------------------


def _check_params(cls, alpha):
    if cls.n < 2:
        raise ValidationError("thresholds need n >= 2")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")


def _gain(n, alpha):
    # (1 - alpha) + n (1 - alpha)^(1/n)
    return (1.0 - alpha) + n * (1.0 - alpha) ** (1.0 / n)


def thresholds(cls_or_n, alpha):
    """Distortion limits ``Lam/lam`` below which each coupling is known to work."""
    n = cls_or_n.n if isinstance(cls_or_n, EllipticityClass) else int(cls_or_n)
    _check_params(EllipticityClass(n, 1.0, 1.0), alpha)
    return {
        "optimal_threshold": _gain(n, alpha) / (n - 1),
        "limit_threshold": (n + 1) / (n - 1),
        "mirror_threshold": (n + 1) / (n - 1 + 2 * alpha),
        "diagonal_threshold": (1.0 + 2.0 * math.sqrt((1.0 - alpha) / (n - 1))) ** 2,
    }


def tau(cls, alpha):
    """``(alpha/(n+2)) [((1-alpha) + n(1-alpha)^(1/n)) lam - (n-1) Lam]``.

    Written with the bracket reversed so that admissible distortion gives a
    positive value.
    """
    _check_params(cls, alpha)
    return alpha / (cls.n + 2) * (_gain(cls.n, alpha) * cls.lam - (cls.n - 1) * cls.Lam)


def min_trace_bound(cls, alpha):
    """Upper bound on the optimal objective over all pairs in the class."""
    _check_params(cls, alpha)
    return 2.0 * ((cls.n - 1) * cls.Lam - _gain(cls.n, alpha) * cls.lam)


def continuity_margin(a1, a2, cls, alpha):
    """Frobenius closeness of the square roots and whether it is small enough
    to guarantee ``optimal objective <= -2 (1 - alpha) lam`` at any distortion."""
    _check_params(cls, alpha)
    a1, a2 = _pair(a1, a2)
    closeness = float(np.linalg.norm(principal_sqrt(a1) - principal_sqrt(a2)))
    limit = (1.0 - alpha) * cls.lam / (2.0 * math.sqrt(cls.n * cls.Lam))
    return closeness, bool(closeness <= limit)


def diagonal_criterion(d1, d2, alpha):
    """``sum_{i>=2} (sqrt(d1_i) - sqrt(d2_i))^2 < (1 - alpha)(sqrt(d1_1) + sqrt(d2_1))^2``
    for diagonal entries ``d1``, ``d2`` (first entry along the coupling direction)."""
    s1, s2 = np.sqrt(np.asarray(d1, float)), np.sqrt(np.asarray(d2, float))
    return bool(np.sum((s1[1:] - s2[1:]) ** 2) < (1.0 - alpha) * (s1[0] + s2[0]) ** 2)
