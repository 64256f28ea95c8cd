"""Comparison functions f = f1 - f2 and numerical checks of the one-step
supersolution inequality for the coupled ellipsoid process.

f2 takes values ``C**(2(2N - i)) * eps**alpha`` with ``C`` near 1e6 and ``N``
near 1e7 for realistic ledgers, far beyond double range. Everything involving
f2 is therefore carried in log space; plain-float accessors return ``inf``
when a value overflows.
"""
import math
from dataclasses import dataclass, replace

import numpy as np

from .coupling import (
    WeightMatrix,
    medium_distance_coupling,
    min_trace_bound,
    optimal_coupling,
    thresholds,
    tau as tau_value,
)
from .errors import DistortionError, DomainError, ValidationError
from .field import sample_unit_ball
from .matcore import EllipticityClass, check_orthogonal
from .quadrature import ball_rule

SAFETY = 1.01
RHO_MEDIUM = 1.0 / 300.0
MC_DEFAULT = 1_000_000
MC_CHUNK = 1 << 17
LOG_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class ComparisonConstants:
    alpha: float
    C: float
    C_tilde: float
    N: int
    r: float
    sup_u: float
    tau: float
    gamma_short: float
    gamma_medium: float
    Lam: float
    eta: float = None

    @property
    def gamma(self):
        return min(self.gamma_short, self.gamma_medium)

    def lower_bounds(self):
        """The right-hand sides that ``C`` must exceed."""
        return _lower_bounds(self.alpha, self.r, self.sup_u, self.C_tilde, self.tau,
                             self.Lam, self.gamma)

    def invariants(self):
        """Name -> bool for every ledger inequality (all strict)."""
        lb = self.lower_bounds()
        a, C, L = self.alpha, self.C, self.Lam
        return {
            "C1": C > lb["C1"],
            "C2": self.tau > 0 and C > lb["C2"],
            "C3": C > lb["C3"],
            "C4": self.gamma_medium * C * C - 3.0 * C * L ** (a / 2) - 2.0 > 0,
            "C4_short": self.gamma_short * C * C - 3.0 * C * L ** (a / 2) - 2.0 > 0,
            "N1": self.N >= 4.0 * math.sqrt(3.0),
            "N2": self.N > math.sqrt(384.0) * L * C,
        }

    def as_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["gamma"] = self.gamma
        return d


def _lower_bounds(alpha, r, sup_u, c_tilde, tau, Lam, gamma):
    r2a = r ** (2.0 - alpha)
    c2 = (16.0 * c_tilde * Lam * r2a + 4.0 * r2a + 1.0) / tau if tau > 0 else math.inf
    b = 3.0 * Lam ** (alpha / 2.0)
    return {
        "C1": 2.0 * sup_u / r**alpha,
        "C2": c2,
        "C3": 12.0 * c_tilde * r,
        "C4": (b + math.sqrt(b * b + 8.0 * gamma)) / (2.0 * gamma),
    }


def gamma_short(cls):
    return (0.25 * math.sqrt(cls.lam / cls.Lam)) ** cls.n


def gamma_medium(n):
    return 3.0 ** (-n / 2.0) * RHO_MEDIUM**n


def build_constants(cls, alpha, r, sup_u, safety=SAFETY, eta=None):
    """Smallest ledger meeting every inequality, with ``C`` inflated by ``safety``."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    if r <= 0 or sup_u <= 0:
        raise ValidationError("r and sup_u must be positive")
    t = tau_value(cls, alpha)
    if t <= 0:
        thr = thresholds(cls, alpha)["optimal_threshold"]
        raise DistortionError(
            f"distortion too large for this alpha: Lam/lam = {cls.distortion():.6g} "
            f">= threshold {thr:.6g} (n={cls.n}, alpha={alpha})",
            thr,
        )
    c_tilde = 2.0 * sup_u / (3.0 * r * r)
    gs, gm = gamma_short(cls), gamma_medium(cls.n)
    lb = _lower_bounds(alpha, r, sup_u, c_tilde, t, cls.Lam, min(gs, gm))
    C = safety * max(lb.values())
    N = max(math.ceil(4.0 * math.sqrt(3.0)), math.floor(math.sqrt(384.0) * cls.Lam * C) + 1)
    return ComparisonConstants(alpha, C, c_tilde, int(N), float(r), float(sup_u), t, gs, gm,
                               float(cls.Lam), eta)


# ---------------------------------------------------------------------------
# f1 and f2
# ---------------------------------------------------------------------------


def f1(x, z, k):
    x, z = np.asarray(x, float), np.asarray(z, float)
    return float(k.C * np.linalg.norm(x - z) ** k.alpha + k.C_tilde * np.sum((x + z) ** 2))


def annulus_index(dist, eps, lam):
    """Smallest integer ``i`` with ``dist / (sqrt(lam) eps) <= i / 2``."""
    return np.ceil(2.0 * np.asarray(dist, float) / (math.sqrt(lam) * eps)).astype(np.int64)


def log_f2_from_index(i, eps, k):
    """``log f2`` for annulus indices ``i``; ``-inf`` beyond ``2N``."""
    i = np.asarray(i)
    out = 2.0 * (2 * k.N - i) * math.log(k.C) + k.alpha * math.log(eps)
    return np.where(i > 2 * k.N, -np.inf, out)


def log_f2(x, z, eps, cls, k):
    d = np.linalg.norm(np.asarray(x, float) - np.asarray(z, float))
    return float(log_f2_from_index(annulus_index(d, eps, cls.lam), eps, k))


def f2(x, z, eps, cls, k):
    """Annular step function; ``inf`` if the value exceeds double range."""
    return _exp(log_f2(x, z, eps, cls, k))


def f(x, z, eps, cls, k):
    """``f1 - f2``; ``-inf`` when f2 overflows."""
    return f1(x, z, k) - f2(x, z, eps, cls, k)


def _exp(v):
    return math.inf if v > LOG_MAX else math.exp(v)


# ---------------------------------------------------------------------------
# Key inequality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyInequalityResult:
    """``margin = f(x,z) - avg f(stepped) - eta``.

    ``scaled_margin`` and ``scaled_stderr`` are the margin and its standard
    error divided by ``exp(log_scale)``; ``margin`` itself may be ``inf``.
    ``verdict`` is ``"holds"``, ``"fails"`` or ``"inconclusive"`` (within three
    standard errors of zero).
    """

    margin: float
    stderr: float
    scaled_margin: float
    scaled_stderr: float
    log_scale: float
    verdict: str
    branch: str
    integrator: str
    samples: int

    @property
    def holds(self):
        return self.verdict == "holds"

    def as_dict(self):
        return dict(self.__dict__)


def _delta_f1(d, s, hx, hz, k):
    """``f1(x + hx, z + hz) - f1(x, z)`` for rows of ``hx``, ``hz`` without cancellation."""
    delta = hx - hz
    dd = float(d @ d)
    rel = (2.0 * (delta @ d) + np.sum(delta * delta, axis=1)) / dd
    dpow = dd ** (k.alpha / 2.0) * np.expm1(0.5 * k.alpha * np.log1p(rel))
    h = hx + hz
    return k.C * dpow + k.C_tilde * (2.0 * (h @ s) + np.sum(h * h, axis=1))


def key_inequality_coupling(x, z, field, eps, k):
    """The coupling used for ``(x, z)``: optimal at large range, medium-range otherwise."""
    x, z = np.asarray(x, float), np.asarray(z, float)
    d = x - z
    dist = float(np.linalg.norm(d))
    a1, a2 = field.evaluate(x), field.evaluate(z)
    if dist > k.N * math.sqrt(field.cls.lam) * eps:
        return optimal_coupling(a1, a2, WeightMatrix.along(d, k.alpha)).Q, "large"
    return medium_distance_coupling(a1, a2, d), "medium"


def _check_points(x, z, k):
    if np.linalg.norm(x) > k.r or np.linalg.norm(z) > k.r:
        raise DomainError(f"x and z must lie in the closed ball of radius r={k.r}")


def verify_key_inequality(x, z, field, Q, eps, k, integrator=None, eta=None, rng=None,
                          samples=MC_DEFAULT, degree=8):
    """Margin of ``f(x,z) > avg_B f(x + eps A(x)^(1/2) y, z + eps A(z)^(1/2) Q y) + eta``.

    ``integrator`` is ``"quadrature"``, ``"mc"`` or ``None`` (quadrature beyond
    ``N sqrt(lam) eps``, Monte Carlo inside, where f2 jumps).
    """
    x, z = np.asarray(x, float), np.asarray(z, float)
    cls = field.cls
    d, s = x - z, x + z
    dist = float(np.linalg.norm(d))
    if dist <= 0.5 * math.sqrt(cls.lam) * eps:
        raise DomainError("key inequality needs |x - z| > sqrt(lam) eps / 2")
    _check_points(x, z, k)
    Q = check_orthogonal(Q)
    eta = (k.eta if k.eta is not None else eps * eps) if eta is None else eta
    large = dist > k.N * math.sqrt(cls.lam) * eps
    branch = "large" if large else "medium"
    if integrator is None:
        integrator = "quadrature" if large else "mc"
    s1, s2 = field.sqrt_many(np.stack([x, z]))
    if integrator == "quadrature":
        y, wts = ball_rule(cls.n, degree)
    elif integrator == "mc":
        if rng is None:
            raise ValidationError("Monte Carlo integration needs an rng")
        y, wts = sample_unit_ball(cls.n, samples, rng), None
    else:
        raise ValidationError(f"unknown integrator {integrator!r}")

    m = y.shape[0]
    gain = np.empty(m)
    logs = np.empty(m)
    for lo in range(0, m, MC_CHUNK):
        yc = y[lo:lo + MC_CHUNK]
        hx = eps * yc @ s1.T
        hz = eps * yc @ (s2 @ Q).T
        gain[lo:lo + MC_CHUNK] = -_delta_f1(d, s, hx, hz, k)
        logs[lo:lo + MC_CHUNK] = log_f2_from_index(
            annulus_index(np.linalg.norm(d + hx - hz, axis=1), eps, cls.lam), eps, k)
    log0 = log_f2(x, z, eps, cls, k)
    scale = max(float(np.max(logs)), log0, 0.0)
    terms = gain * math.exp(-scale) + np.exp(logs - scale)
    const = eta * math.exp(-scale) + math.exp(log0 - scale)
    if wts is None:
        mean = float(np.mean(terms))
        se = float(np.std(terms, ddof=1) / math.sqrt(m))
    else:
        mean = float(wts @ terms)
        se = 0.0
    scaled = mean - const
    if scaled > 3.0 * se:
        verdict = "holds"
    elif scaled < -3.0 * se:
        verdict = "fails"
    else:
        verdict = "inconclusive"
    return KeyInequalityResult(
        margin=_scale_back(scaled, scale), stderr=_scale_back(se, scale),
        scaled_margin=scaled, scaled_stderr=se, log_scale=scale, verdict=verdict,
        branch=branch, integrator=integrator, samples=m)


def _scale_back(v, scale):
    if v == 0.0:
        return 0.0
    lv = math.log(abs(v)) + scale
    return math.copysign(_exp(lv), v)


def short_distance_chain(k):
    """``gamma_short C^2 - 3 C Lam^(alpha/2) - 2`` (positive for a valid ledger)."""
    return k.gamma_short * k.C**2 - 3.0 * k.C * k.Lam ** (k.alpha / 2.0) - 2.0


# ---------------------------------------------------------------------------
# Step-level checks
# ---------------------------------------------------------------------------


def f1_step_bound_check(x, z, k, cls, eps, trials, rng, hx=None, hz=None):
    """``f1(x + hx, z + hz) <= f1(x, z) + 3 C Lam^(alpha/2) eps^alpha`` for all trials.

    Perturbations are uniform in the ball of radius ``sqrt(Lam) eps`` unless
    ``hx``/``hz`` (arrays of shape ``(m, n)``) are supplied.
    """
    x, z = np.asarray(x, float), np.asarray(z, float)
    _check_points(x, z, k)
    rad = math.sqrt(cls.Lam) * eps
    if rad >= min(1.0, k.r):
        raise DomainError("f1 step bound needs sqrt(Lam) eps < min(1, r)")
    if hx is None:
        hx = rad * sample_unit_ball(cls.n, trials, rng)
        hz = rad * sample_unit_ball(cls.n, trials, rng)
    hx, hz = np.atleast_2d(hx), np.atleast_2d(hz)
    if np.any(np.linalg.norm(hx, axis=1) >= rad) or np.any(np.linalg.norm(hz, axis=1) >= rad):
        raise DomainError("perturbations must be shorter than sqrt(Lam) eps")
    d = x - z
    if float(d @ d) == 0.0:
        lhs = k.C * np.linalg.norm(hx - hz, axis=1) ** k.alpha
        h = hx + hz
        lhs = lhs + k.C_tilde * (2.0 * (h @ (x + z)) + np.sum(h * h, axis=1))
    else:
        lhs = _delta_f1(d, x + z, hx, hz, k)
    bound = 3.0 * k.C * cls.Lam ** (k.alpha / 2.0) * eps**k.alpha
    return bool(np.all(lhs <= bound))


@dataclass(frozen=True)
class F2BoundResult:
    """``lhs = avg f2`` after a medium-range coupled step, ``rhs = gamma C^2 f2(x,z)``."""

    lhs: float
    rhs: float
    holds: bool
    log_lhs: float
    log_rhs: float
    rel_stderr: float
    samples: int

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.holds))

    def as_dict(self):
        return dict(self.__dict__)


def f2_average_lower_bound_check(x, z, field, eps, k, samples, rng):
    x, z = np.asarray(x, float), np.asarray(z, float)
    cls = field.cls
    d = x - z
    dist = float(np.linalg.norm(d))
    unit = math.sqrt(cls.lam) * eps
    if not 0.5 * unit < dist <= k.N * unit:
        raise DomainError("f2 bound needs sqrt(lam) eps / 2 < |x - z| <= N sqrt(lam) eps")
    if cls.distortion() > 3.0:
        raise DomainError("f2 bound needs Lam/lam <= 3")
    a1, a2 = field.evaluate(x), field.evaluate(z)
    Q = medium_distance_coupling(a1, a2, d)
    s1, s2 = field.sqrt_many(np.stack([x, z]))
    step = s1 - s2 @ Q
    logs = np.empty(samples)
    for lo in range(0, samples, MC_CHUNK):
        m = min(MC_CHUNK, samples - lo)
        yc = sample_unit_ball(cls.n, m, rng)
        dist_after = np.linalg.norm(d + eps * yc @ step.T, axis=1)
        logs[lo:lo + m] = log_f2_from_index(annulus_index(dist_after, eps, cls.lam), eps, k)
    top = float(np.max(logs))
    if top == -np.inf:
        log_lhs, rel = -np.inf, math.inf
    else:
        w = np.exp(logs - top)
        mean = float(np.mean(w))
        log_lhs = top + math.log(mean)
        rel = float(np.std(w, ddof=1) / math.sqrt(samples) / mean)
    log_rhs = math.log(k.gamma_medium) + 2.0 * math.log(k.C) + log_f2(x, z, eps, cls, k)
    return F2BoundResult(_exp(log_lhs) if log_lhs > -np.inf else 0.0, _exp(log_rhs),
                         bool(log_lhs >= log_rhs), log_lhs, log_rhs, rel, samples)


def bound_summary(cls, alpha):
    """Closed-form quantities that the ledger is built on (for reports)."""
    return {"tau": tau_value(cls, alpha), "min_trace_bound": min_trace_bound(cls, alpha),
            **thresholds(cls, alpha)}


def with_constant(k, C):
    """A copy of ``k`` with a different main constant (for negative controls)."""
    return replace(k, C=float(C))


__all__ = [
    "ComparisonConstants", "EllipticityClass", "build_constants", "f1", "f2", "f", "log_f2",
    "annulus_index", "verify_key_inequality", "key_inequality_coupling",
    "f1_step_bound_check", "f2_average_lower_bound_check", "short_distance_chain",
    "KeyInequalityResult", "F2BoundResult", "with_constant",
]
