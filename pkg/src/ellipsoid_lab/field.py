"""Ellipsoids E = c + S B, coefficient fields x -> A(x), and domains.

A coefficient field takes values in an ellipticity class A(lam, Lam) and has
constant determinant, so all step ellipsoids ``x + eps A(x)^(1/2) B`` have
the same volume. Fields are total on R^n; the solver evaluates them outside
the domain only through the payoff collar.
"""
import configparser
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError, ValidationError
from .matcore import EllipticityClass, as_symmetric, eig_sym, in_class, principal_sqrt

DET_RTOL = 1e-9


def unit_ball_volume(n):
    return math.exp(0.5 * n * math.log(math.pi) - gammaln(0.5 * n + 1.0))


def sample_unit_ball(n, size, rng):
    """Uniform points in the unit ball: Gaussian direction times ``U**(1/n)``."""
    g = rng.standard_normal((size, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random((size, 1)) ** (1.0 / n)


# ---------------------------------------------------------------------------
# Ellipsoids
# ---------------------------------------------------------------------------


class Ellipsoid:
    """``center + shape @ B`` with ``shape`` symmetric positive definite."""

    def __init__(self, center, shape):
        self.center = np.array(center, dtype=float).reshape(-1)
        self.shape = as_symmetric(shape, n=self.center.size)
        w, _ = eig_sym(self.shape)
        if w[0] <= 0:
            raise ValidationError("ellipsoid shape must be positive definite")
        self._inv = np.linalg.inv(self.shape)

    @classmethod
    def step(cls, fld, x, eps):
        """The step ellipsoid ``E_x = x + eps A(x)^(1/2) B`` of a field."""
        return cls(x, eps * principal_sqrt(fld.evaluate(x)))

    @property
    def n(self):
        return self.center.size

    def volume(self):
        return unit_ball_volume(self.n) * abs(float(np.linalg.det(self.shape)))

    def semi_axes(self):
        return eig_sym(self.shape)[0]

    def distortion(self):
        """Singular-value ratio of the shape matrix (longest / shortest semi-axis)."""
        w = self.semi_axes()
        return float(w[-1] / w[0])

    def to_unit(self, points):
        """Coordinates of ``points`` in the reference ball."""
        return (np.atleast_2d(points) - self.center) @ self._inv.T

    def contains(self, points):
        u = self.to_unit(points)
        return np.sum(u * u, axis=1) < 1.0

    def sample(self, rng, size):
        return self.center + sample_unit_ball(self.n, size, rng) @ self.shape.T


def sample_uniform(ell, rng, size=None):
    """Uniform point(s) in an ellipsoid."""
    pts = ell.sample(rng, 1 if size is None else size)
    return pts[0] if size is None else pts


def overlap_fraction(e1, e2, samples, rng):
    """Monte Carlo estimate of ``|E1 ∩ E2| / |E1|`` and its standard error."""
    if samples < 10_000:
        raise ValidationError("overlap_fraction needs at least 10^4 samples")
    hits = e2.contains(e1.sample(rng, samples))
    p = float(np.mean(hits))
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / samples)


# ---------------------------------------------------------------------------
# Coefficient fields
# ---------------------------------------------------------------------------


class CoefficientField:
    """Base class. Subclasses implement ``_matrices(points) -> (m, n, n)``."""

    kind = "abstract"

    def __init__(self, cls, det_target):
        self.cls = cls
        self.det_target = float(det_target)

    @property
    def n(self):
        return self.cls.n

    def _matrices(self, points):
        raise NotImplementedError

    def _sqrt_matrices(self, points):
        return np.stack([principal_sqrt(a) for a in self._matrices(points)])

    def evaluate(self, x):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return self._matrices(x)[0]

    def evaluate_many(self, points):
        return self._matrices(np.atleast_2d(np.asarray(points, dtype=float)))

    def sqrt_many(self, points):
        """Principal square roots ``A(x)^(1/2)`` at each row of ``points``."""
        return self._sqrt_matrices(np.atleast_2d(np.asarray(points, dtype=float)))

    def validate_at(self, points):
        """Raise ``ValidationError`` naming the first point whose matrix is inadmissible."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        for x, a in zip(pts, self.evaluate_many(pts)):
            _check_matrix(a, self.cls, self.det_target, where=x)

    def describe(self):
        return {"kind": self.kind, "n": self.n, "lam": self.cls.lam, "Lam": self.cls.Lam}


def _check_matrix(a, cls, det_target, where=None):
    loc = "" if where is None else f" at x={np.array2string(np.asarray(where), precision=6)}"
    if not in_class(a, cls):
        raise ValidationError(f"matrix outside A({cls.lam}, {cls.Lam}){loc}")
    det = float(np.linalg.det(a))
    if abs(det - det_target) > DET_RTOL * abs(det_target):
        raise ValidationError(f"determinant {det!r} differs from target {det_target!r}{loc}")


class ConstantField(CoefficientField):
    kind = "constant"

    def __init__(self, a, cls=None):
        a = as_symmetric(a)
        if cls is None:
            w, _ = eig_sym(a)
            cls = EllipticityClass(a.shape[0], float(w[0]), float(w[-1]))
        super().__init__(cls, float(np.linalg.det(a)))
        _check_matrix(a, cls, self.det_target)
        self.a = a
        self._sqrt = principal_sqrt(a)

    def _matrices(self, points):
        return np.broadcast_to(self.a, (points.shape[0],) + self.a.shape).copy()

    def _sqrt_matrices(self, points):
        return np.broadcast_to(self._sqrt, (points.shape[0],) + self.a.shape).copy()

    def describe(self):
        return {**super().describe(), "matrix": self.a.tolist()}


class CheckerboardField(CoefficientField):
    """Two matrices alternating on a cubic lattice of cell size ``cell``.

    Cell parity is ``sum(floor(x_i / cell)) mod 2``; even cells get ``a_even``.
    """

    kind = "checkerboard"

    def __init__(self, cls, cell, a_even=None, a_odd=None):
        if cell <= 0:
            raise ValidationError("checkerboard cell size must be positive")
        n = cls.n
        if a_even is None:
            diag = np.full(n, math.sqrt(cls.lam * cls.Lam))
            diag[0], diag[1 % n] = cls.lam, cls.Lam
            a_even = np.diag(diag)
            a_odd = np.diag(diag[::-1]) if a_odd is None else a_odd
        elif a_odd is None:
            raise ValidationError("a_odd is required when a_even is given")
        a_even, a_odd = as_symmetric(a_even, n), as_symmetric(a_odd, n)
        super().__init__(cls, float(np.linalg.det(a_even)))
        _check_matrix(a_even, cls, self.det_target)
        _check_matrix(a_odd, cls, self.det_target)
        self.cell = float(cell)
        self.a_even, self.a_odd = a_even, a_odd
        self._pair = np.stack([a_even, a_odd])
        self._sqrt_pair = np.stack([principal_sqrt(a_even), principal_sqrt(a_odd)])

    def parity(self, points):
        return (np.floor(points / self.cell).astype(np.int64).sum(axis=1)) % 2

    def _matrices(self, points):
        return self._pair[self.parity(points)]

    def _sqrt_matrices(self, points):
        return self._sqrt_pair[self.parity(points)]

    def describe(self):
        return {**super().describe(), "cell": self.cell,
                "a_even": self.a_even.tolist(), "a_odd": self.a_odd.tolist()}


ANGLE_PROFILES = ("linear", "radial", "polar")


class RotatingField(CoefficientField):
    """``R(theta(x)) D R(theta(x))^T`` with rotation in the (x1, x2) plane.

    ``D = diag(lam, Lam, sqrt(lam Lam), ...)``; the determinant is constant
    because conjugation by a rotation preserves it.
    """

    kind = "rotating"

    def __init__(self, cls, profile="linear", wavenumber=1.0, angle=None):
        if cls.n < 2:
            raise ValidationError("rotating fields need n >= 2")
        if angle is None and profile not in ANGLE_PROFILES:
            raise ValidationError(f"unknown angle profile {profile!r}")
        diag = np.full(cls.n, math.sqrt(cls.lam * cls.Lam))
        diag[0], diag[1] = cls.lam, cls.Lam
        super().__init__(cls, float(np.prod(diag)))
        self.diag = diag
        self.profile = "custom" if angle is not None else profile
        self.wavenumber = float(wavenumber)
        self._angle = angle

    def angle(self, points):
        if self._angle is not None:
            return np.array([float(self._angle(p)) for p in points])
        if self.profile == "linear":
            return self.wavenumber * points[:, 0]
        if self.profile == "radial":
            return self.wavenumber * np.linalg.norm(points, axis=1)
        return np.arctan2(points[:, 1], points[:, 0])

    def _rotations(self, points):
        th = self.angle(points)
        m = points.shape[0]
        r = np.broadcast_to(np.eye(self.n), (m, self.n, self.n)).copy()
        c, s = np.cos(th), np.sin(th)
        r[:, 0, 0], r[:, 0, 1], r[:, 1, 0], r[:, 1, 1] = c, -s, s, c
        return r

    def _conj(self, points, d):
        r = self._rotations(points)
        out = np.einsum("mij,j,mkj->mik", r, d, r)
        return 0.5 * (out + np.swapaxes(out, 1, 2))

    def _matrices(self, points):
        return self._conj(points, self.diag)

    def _sqrt_matrices(self, points):
        return self._conj(points, np.sqrt(self.diag))

    def describe(self):
        return {**super().describe(), "profile": self.profile, "wavenumber": self.wavenumber}


class CustomField(CoefficientField):
    """User evaluator ``x -> A(x)``; every evaluation is validated."""

    kind = "custom"

    def __init__(self, evaluator, cls, det_target=None, probe=None):
        self._eval = evaluator
        if det_target is None:
            x0 = np.zeros(cls.n) if probe is None else np.asarray(probe, dtype=float)
            det_target = float(np.linalg.det(as_symmetric(evaluator(x0))))
        super().__init__(cls, det_target)

    def _matrices(self, points):
        out = np.empty((points.shape[0], self.n, self.n))
        for i, x in enumerate(points):
            a = as_symmetric(self._eval(x), self.n)
            _check_matrix(a, self.cls, self.det_target, where=x)
            out[i] = a
        return out


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float
    kind: str = dc_field(default="ball", init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.radius <= 0:
            raise ValidationError("ball radius must be positive")

    @property
    def n(self):
        return len(self.center)

    def contains(self, points):
        p = np.atleast_2d(points) - np.asarray(self.center)
        return np.sum(p * p, axis=1) < self.radius**2

    def bounds(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def describe(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    kind: str = dc_field(default="box", init=False)

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(c) for c in self.lo))
        object.__setattr__(self, "hi", tuple(float(c) for c in self.hi))
        if len(self.lo) != len(self.hi) or any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValidationError("box needs lo < hi componentwise")

    @property
    def n(self):
        return len(self.lo)

    @property
    def center(self):
        return tuple(0.5 * (a + b) for a, b in zip(self.lo, self.hi))

    def contains(self, points):
        p = np.atleast_2d(points)
        return np.all((p > np.asarray(self.lo)) & (p < np.asarray(self.hi)), axis=1)

    def bounds(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    def describe(self):
        return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi)}


def collar_width(cls, eps):
    """Width of the payoff collar: every one-step exit lands within it."""
    return math.sqrt(cls.Lam) * eps


# ---------------------------------------------------------------------------
# Text configuration
# ---------------------------------------------------------------------------


def parse_vector(text):
    return np.array([float(t) for t in str(text).replace(";", ",").split(",") if t.strip()])


def parse_matrix(text):
    """``"a,b;c,d"`` -> 2x2 array (rows separated by semicolons)."""
    rows = [r for r in str(text).split(";") if r.strip()]
    try:
        mat = np.array([[float(t) for t in r.split(",")] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"cannot parse matrix {text!r}: {exc}") from exc
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigError(f"matrix {text!r} is not square")
    return mat


FIELD_KEYS = {
    "constant": {"kind", "n", "lam", "lam_upper", "matrix"},
    "checkerboard": {"kind", "n", "lam", "lam_upper", "cell", "a_even", "a_odd"},
    "rotating": {"kind", "n", "lam", "lam_upper", "profile", "wavenumber"},
}


def field_from_mapping(section):
    """Build a field from a flat key/value mapping (an INI section).

    ``Lam`` is spelled ``lam_upper`` in config files because INI keys are
    case-insensitive.
    """
    sec = {str(k).lower(): v for k, v in dict(section).items()}
    kind = str(sec.get("kind", "constant")).lower()
    if kind not in FIELD_KEYS:
        raise ConfigError(f"unknown field kind {kind!r}; expected one of {sorted(FIELD_KEYS)}")
    unknown = set(sec) - FIELD_KEYS[kind]
    if unknown:
        raise ConfigError(f"unknown keys in [field] for kind {kind}: {sorted(unknown)}")
    try:
        if kind == "constant":
            if "matrix" in sec:
                a = parse_matrix(sec["matrix"])
            else:
                a = np.eye(int(sec.get("n", 2)))
            cls = None
            if "lam" in sec or "lam_upper" in sec:
                w, _ = eig_sym(a)
                cls = EllipticityClass(a.shape[0], float(sec.get("lam", w[0])),
                                       float(sec.get("lam_upper", w[-1])))
            return ConstantField(a, cls)
        cls = EllipticityClass(int(sec.get("n", 2)), float(sec.get("lam", 1.0)),
                               float(sec.get("lam_upper", 2.0)))
        if kind == "checkerboard":
            a_even = parse_matrix(sec["a_even"]) if "a_even" in sec else None
            a_odd = parse_matrix(sec["a_odd"]) if "a_odd" in sec else None
            return CheckerboardField(cls, float(sec.get("cell", 0.125)), a_even, a_odd)
        return RotatingField(cls, str(sec.get("profile", "linear")),
                             float(sec.get("wavenumber", 1.0)))
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid [field] section: {exc}") from exc


def domain_from_mapping(section):
    sec = {str(k).lower(): v for k, v in dict(section).items()}
    kind = str(sec.get("kind", "ball")).lower()
    allowed = {"ball": {"kind", "center", "radius"}, "box": {"kind", "lo", "hi"}}
    if kind not in allowed:
        raise ConfigError(f"unknown domain kind {kind!r}")
    unknown = set(sec) - allowed[kind]
    if unknown:
        raise ConfigError(f"unknown keys in [domain]: {sorted(unknown)}")
    try:
        if kind == "ball":
            return Ball(tuple(parse_vector(sec.get("center", "0,0"))), float(sec.get("radius", 1.0)))
        return Box(tuple(parse_vector(sec["lo"])), tuple(parse_vector(sec["hi"])))
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid [domain] section: {exc}") from exc


def load_field_config(path_or_text):
    """Read ``[field]`` (and optional ``[domain]``) from an INI file or string."""
    parser = configparser.ConfigParser()
    if "\n" in str(path_or_text) or "[" in str(path_or_text):
        parser.read_string(str(path_or_text))
    else:
        if not parser.read(path_or_text):
            raise ConfigError(f"cannot read config file {path_or_text!r}")
    if not parser.has_section("field"):
        raise ConfigError("config has no [field] section")
    fld = field_from_mapping(parser["field"])
    dom = domain_from_mapping(parser["domain"]) if parser.has_section("domain") else None
    return fld, dom
