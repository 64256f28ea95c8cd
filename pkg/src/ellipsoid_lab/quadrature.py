"""Normalized integration rules on the unit ball.

``ball_quadrature`` returns deterministic product rules (n = 2, 3) whose
weights sum to one, so ``weights @ g(nodes)`` approximates the ball average of
``g``. ``ball_qmc`` covers higher dimensions with scrambled Sobol points.
"""
import math

import numpy as np
from scipy.stats import norm, qmc

from .errors import ConfigError

ANGLES_2D = 64


def _radial_rule(m, power):
    """Gauss-Legendre on [0, 1] with the Jacobian r**power folded into the weights.

    Normalized so that the weights integrate the radial density
    ``(power + 1) r**power`` of a uniform ball point.
    """
    x, w = np.polynomial.legendre.leggauss(m)
    r = 0.5 * (x + 1.0)
    w = 0.5 * w * (power + 1) * r**power
    return r, w


def ball_quadrature(n, degree=8):
    """Product rule on the unit ball, exact for polynomials up to ``degree``.

    n = 2: radial Gauss-Legendre x 64-point trapezoid in angle.
    n = 3: radial Gauss-Legendre x (Gauss-Legendre in cos(theta) x trapezoid in phi).
    """
    if degree < 4:
        raise ConfigError(f"quadrature degree must be >= 4, got {degree}")
    # integrand r**k * r**(n-1) has degree <= degree + n - 1
    m = (degree + n) // 2 + 1
    r, wr = _radial_rule(m, n - 1)
    if n == 2:
        if degree >= ANGLES_2D:
            raise ConfigError(f"degree {degree} exceeds the {ANGLES_2D}-point angular rule")
        th = 2.0 * math.pi * np.arange(ANGLES_2D) / ANGLES_2D
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        wd = np.full(ANGLES_2D, 1.0 / ANGLES_2D)
    elif n == 3:
        mz = degree // 2 + 1
        z, wz = np.polynomial.legendre.leggauss(mz)
        nphi = degree + 2
        phi = 2.0 * math.pi * np.arange(nphi) / nphi
        s = np.sqrt(1.0 - z**2)
        dirs = np.stack(
            [
                np.outer(s, np.cos(phi)).ravel(),
                np.outer(s, np.sin(phi)).ravel(),
                np.repeat(z, nphi),
            ],
            axis=1,
        )
        wd = np.repeat(0.5 * wz, nphi) / nphi
    else:
        raise ConfigError(f"ball_quadrature supports n in {{2, 3}}, got n={n}; use ball_qmc")
    nodes = (r[:, None, None] * dirs[None, :, :]).reshape(-1, n)
    weights = (wr[:, None] * wd[None, :]).ravel()
    return nodes, weights


def uniform_ball_from_cube(u):
    """Map points of [0,1)^(n+1) to the unit ball of R^n.

    Gaussian direction from the first n coordinates, radius ``U**(1/n)`` from
    the last one.
    """
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    n = u.shape[1] - 1
    g = norm.ppf(u[:, :n])
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * u[:, n:] ** (1.0 / n)


def ball_qmc(n, m=16, seed=0):
    """``2**m`` scrambled Sobol points mapped to the unit ball, equal weights."""
    pts = qmc.Sobol(d=n + 1, scramble=True, seed=seed).random_base2(m)
    nodes = uniform_ball_from_cube(pts)
    return nodes, np.full(nodes.shape[0], 1.0 / nodes.shape[0])


def ball_rule(n, degree=8, seed=0):
    """Deterministic product rule when available, QMC otherwise."""
    if n in (2, 3):
        return ball_quadrature(n, degree)
    return ball_qmc(n, seed=seed)


def ball_moment_exact(powers):
    """Exact average of ``prod(y_i ** p_i)`` over the unit ball (oracle for tests).

    Uses the Dirichlet-type formula for even powers; any odd power gives 0.
    """
    powers = [int(p) for p in powers]
    n = len(powers)
    if any(p % 2 for p in powers):
        return 0.0
    k = sum(powers)
    # sphere average of monomial times radial factor n/(n+k)
    num = 1.0
    for p in powers:
        num *= math.gamma((p + 1) / 2.0)
    sphere = num * math.gamma(n / 2.0) / (math.pi ** (n / 2.0) * math.gamma((n + k) / 2.0))
    return sphere * n / (n + k)
