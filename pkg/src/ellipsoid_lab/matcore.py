"""Small dense symmetric-matrix numerics (2 <= n <= 8).

Matrices are plain ``numpy`` arrays. :func:`as_symmetric` is the constructor
for symmetric inputs: it validates shape and near-symmetry and returns an
exactly symmetric copy.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConvergenceError, DomainError, ValidationError

MAX_SWEEPS = 100
PSD_TOL = 1e-12
ORTHO_TOL = 1e-10


def as_symmetric(a, n=None, tol=1e-9):
    """Validate a square, nearly symmetric matrix and return it exactly symmetric.

    ``tol`` is relative to the largest entry; larger asymmetry is rejected
    rather than silently averaged away.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise ValidationError("empty matrix")
    if n is not None and a.shape[0] != n:
        raise ValidationError(f"expected dimension {n}, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix has non-finite entries")
    scale = max(float(np.max(np.abs(a))), 1.0)
    if np.max(np.abs(a - a.T)) > tol * scale:
        raise ValidationError("matrix is not symmetric")
    return 0.5 * (a + a.T)


def orthogonality_defect(q):
    """Frobenius norm of ``Q^T Q - I``."""
    q = np.asarray(q, dtype=float)
    return float(np.linalg.norm(q.T @ q - np.eye(q.shape[0])))


def check_orthogonal(q, tol=ORTHO_TOL):
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {q.shape}")
    defect = orthogonality_defect(q)
    if defect > tol:
        raise ValidationError(f"matrix is not orthogonal (defect {defect:.3e})")
    return q


@dataclass(frozen=True)
class EllipticityClass:
    """The admissible set A(lam, Lam) of n x n symmetric matrices."""

    n: int
    lam: float
    Lam: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"dimension must be a positive integer, got {self.n}")
        if not (0 < self.lam <= self.Lam < np.inf):
            raise ValidationError(f"need 0 < lam <= Lam, got lam={self.lam}, Lam={self.Lam}")

    def distortion(self):
        return self.Lam / self.lam


def eig_sym(a):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, R)`` with ``w`` ascending and ``a == R @ diag(w) @ R.T``.
    """
    a = as_symmetric(a)
    w, v, sweeps = kernels.jacobi_eig(a, MAX_SWEEPS)
    if sweeps < 0:
        raise ConvergenceError(
            f"Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps for a "
            f"{a.shape[0]}x{a.shape[0]} matrix (max |entry| {np.max(np.abs(a)):.3e})"
        )
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _psd_eigen(a):
    w, r = eig_sym(a)
    tol = PSD_TOL * max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    if w[0] < -tol:
        raise DomainError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    return np.clip(w, 0.0, None), r


def matrix_power_sym(a, p):
    """``a**p`` for symmetric PSD ``a`` via its eigendecomposition."""
    w, r = _psd_eigen(a)
    if p < 0 and w[0] <= 0.0:
        raise DomainError("negative power of a singular matrix")
    out = (r * w**p) @ r.T
    return 0.5 * (out + out.T)


def principal_sqrt(a):
    """The unique symmetric PSD square root ``R diag(sqrt(w)) R^T``."""
    return matrix_power_sym(a, 0.5)


def inv_sqrt(a):
    return matrix_power_sym(a, -0.5)


def polar_orthogonal(m):
    """Orthogonal ``Q0`` maximizing ``trace(M Q)`` over O(n), and the maximum.

    For nonsingular ``M`` this is the orthogonal polar factor of ``M^T``,
    ``Q0 = (M^T M)^(-1/2) M^T``, and the maximum is ``trace((M^T M)^(1/2))``.
    Singular or badly conditioned ``M`` goes through the SVD instead
    (``M = U S V^T``, ``Q0 = V U^T``).
    """
    m = np.array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix has non-finite entries")
    mtm = m.T @ m
    w, r = eig_sym(mtm)
    w = np.clip(w, 0.0, None)
    if abs(np.linalg.det(m)) > 1e-12 and w[0] > 1e-24 * w[-1]:
        q0 = (r * w**-0.5) @ r.T @ m.T
        if orthogonality_defect(q0) <= ORTHO_TOL:
            return q0, float(np.sum(np.sqrt(w)))
    return _polar_svd(m)


def _polar_svd(m):
    try:
        u, s, vt = np.linalg.svd(m)
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"SVD failed for singular matrix: {exc}") from exc
    q0 = vt.T @ u.T
    if orthogonality_defect(q0) > ORTHO_TOL:
        raise DomainError("SVD fallback produced a non-orthogonal factor")
    return q0, float(np.sum(s))


def random_orthogonal(n, seed):
    """Haar-distributed orthogonal matrix, deterministic in ``seed``."""
    return random_orthogonal_batch(n, 1, np.random.default_rng(seed))[0]


def random_orthogonal_batch(n, size, rng):
    """``size`` Haar orthogonal matrices: QR of Gaussian matrices, sign-fixed."""
    if n < 1:
        raise ValidationError("dimension must be positive")
    g = rng.standard_normal((size, n, n))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diagonal(r, axis1=1, axis2=2))
    signs[signs == 0] = 1.0
    return q * signs[:, None, :]


def in_class(a, cls, tol=1e-12):
    """True iff every eigenvalue of ``a`` lies in ``[lam - tol, Lam + tol]``."""
    a = as_symmetric(a)
    if a.shape[0] != cls.n:
        raise ValidationError(f"dimension mismatch: matrix {a.shape[0]}, class {cls.n}")
    w, _ = eig_sym(a)
    return bool(w[0] >= cls.lam - tol and w[-1] <= cls.Lam + tol)


def sqrt_batch(a):
    """Principal square roots of a stack of SPD matrices (numpy LAPACK path).

    Used in the Monte Carlo inner loops where thousands of small matrices
    are processed at once.
    """
    w, v = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    out = np.einsum("...ij,...j,...kj->...ik", v, np.sqrt(w), v)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def polar_batch(m):
    """Batched ``polar_orthogonal`` via SVD (``Q0 = V U^T``)."""
    u, s, vt = np.linalg.svd(m)
    return np.swapaxes(vt, -1, -2) @ np.swapaxes(u, -1, -2), s.sum(axis=-1)
