import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_in_class
from ellipsoid_lab import matcore
from ellipsoid_lab.errors import ConvergenceError, DomainError, ValidationError
from ellipsoid_lab.matcore import (
    EllipticityClass,
    as_symmetric,
    eig_sym,
    in_class,
    orthogonality_defect,
    polar_orthogonal,
    principal_sqrt,
    random_orthogonal,
    random_orthogonal_batch,
)

A_EX = np.array([[5.0, -12.0], [-12.0, 29.0]])


def quadratic_roots(a):
    tr, det = a[0, 0] + a[1, 1], a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    disc = math.sqrt(tr * tr - 4 * det)
    return sorted([(tr - disc) / 2, (tr + disc) / 2])


def test_eig_identity(backend):
    w, r = eig_sym(np.eye(2))
    assert np.allclose(w, [1, 1])
    assert orthogonality_defect(r) < 1e-12


def test_eig_matches_characteristic_roots(backend):
    w, r = eig_sym(A_EX)
    assert np.allclose(w, quadratic_roots(A_EX), rtol=1e-12, atol=1e-12)
    assert np.linalg.norm(r @ np.diag(w) @ r.T - A_EX) <= 1e-10


def test_eig_diagonal():
    w, _ = eig_sym(np.diag([2.0, 8.0]))
    assert np.allclose(w, [2, 8])


@pytest.mark.parametrize("n", [2, 3, 4, 8])
def test_eig_reconstruction_and_order(backend, n):
    rng = np.random.default_rng(n)
    for _ in range(50):
        g = rng.standard_normal((n, n))
        a = g + g.T
        w, r = eig_sym(a)
        assert np.all(np.diff(w) >= 0)
        assert np.linalg.norm(r @ np.diag(w) @ r.T - a) <= 1e-10
        assert np.allclose(w, np.linalg.eigvalsh(a), atol=1e-10)


def test_eig_nonconvergence_reports(monkeypatch):
    monkeypatch.setattr(matcore, "MAX_SWEEPS", 0)
    with pytest.raises(ConvergenceError, match="did not converge"):
        eig_sym(A_EX)


def test_as_symmetric_rejects():
    with pytest.raises(ValidationError):
        as_symmetric([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValidationError):
        as_symmetric(np.ones((2, 3)))
    with pytest.raises(ValidationError):
        as_symmetric([[1.0, np.nan], [np.nan, 1.0]])
    out = as_symmetric([[1.0, 2.0 + 1e-12], [2.0, 1.0]])
    assert out[0, 1] == out[1, 0]


def test_sqrt_known_examples(backend):
    assert np.allclose(principal_sqrt(A_EX), [[1, -2], [-2, 5]], atol=1e-10)
    for d in (1.0, 2.0, 4.0, 9.0):
        a = np.array([[d + 1, d - 1], [d - 1, d + 1]])
        s = math.sqrt(d)
        expect = np.array([[s + 1, s - 1], [s - 1, s + 1]]) / math.sqrt(2)
        assert np.allclose(principal_sqrt(a), expect, atol=1e-12)
    assert np.allclose(principal_sqrt(np.eye(3)), np.eye(3))


@pytest.mark.parametrize("n", [2, 3, 4])
def test_sqrt_reconstructs_random_spd(n):
    rng = np.random.default_rng(10 + n)
    for a in random_in_class(rng, n, 0.01, 10.0, 1000):
        s = principal_sqrt(a)
        assert np.array_equal(s, s.T)
        assert np.linalg.eigvalsh(s).min() >= 0
        assert np.linalg.norm(s @ s - a) <= 1e-9


def test_sqrt_psd_clamp_and_domain_error():
    a = np.diag([1.0, -1e-14])
    assert np.allclose(principal_sqrt(a), np.diag([1.0, 0.0]))
    with pytest.raises(DomainError):
        principal_sqrt(np.diag([1.0, -1e-3]))


def test_polar_identity():
    q, v = polar_orthogonal(np.eye(2))
    assert np.allclose(q, np.eye(2)) and abs(v - 2) < 1e-12


def test_polar_diag_matches_angle_sweep():
    m = np.diag([3.0, -4.0])
    q, v = polar_orthogonal(m)
    assert np.allclose(q, np.diag([1.0, -1.0]), atol=1e-12)
    assert abs(v - 7.0) < 1e-12
    th = np.arange(0, 2 * math.pi, 1e-4)
    c, s = np.cos(th), np.sin(th)
    # rotations [[c,-s],[s,c]] and reflections [[c,s],[s,-c]]
    rot = m[0, 0] * c + m[1, 1] * c
    ref = m[0, 0] * c - m[1, 1] * c
    assert max(rot.max(), ref.max()) <= v + 1e-12
    assert max(rot.max(), ref.max()) >= v - 1e-6


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-10, 10)))
def test_polar_properties(m):
    q, v = polar_orthogonal(m)
    assert orthogonality_defect(q) <= 1e-10
    assert abs(np.trace(m @ q) - v) <= 1e-9 * max(1.0, abs(v))
    assert v >= 3 * abs(np.linalg.det(m)) ** (1 / 3) - 1e-9 * max(1.0, v)
    assert abs(v - np.linalg.svd(m, compute_uv=False).sum()) <= 1e-8 * max(1.0, v)


def test_polar_singular_uses_svd():
    m = np.array([[1.0, 2.0], [2.0, 4.0]])
    q, v = polar_orthogonal(m)
    assert orthogonality_defect(q) <= 1e-10
    assert abs(v - 5.0) < 1e-12
    q0, v0 = polar_orthogonal(np.zeros((3, 3)))
    assert v0 == 0.0 and orthogonality_defect(q0) <= 1e-10


def test_polar_rejects_nonfinite():
    with pytest.raises(DomainError):
        polar_orthogonal(np.array([[np.inf, 0], [0, 1.0]]))


def test_random_orthogonal_determinism_and_haar_mean():
    assert np.array_equal(random_orthogonal(2, 5), random_orthogonal(2, 5))
    qs = random_orthogonal_batch(3, 10_000, np.random.default_rng(0))
    assert np.all(np.abs(qs.mean(axis=0)) < 0.05)
    defects = np.linalg.norm(np.swapaxes(qs, 1, 2) @ qs - np.eye(3), axis=(1, 2))
    assert defects.max() <= 1e-10


def test_in_class_examples():
    cls = EllipticityClass(2, 2.0, 8.0)
    assert in_class(np.diag([2.0, 8.0]), cls)
    assert not in_class(A_EX, cls)
    assert not in_class(np.eye(2), cls)
    with pytest.raises(ValidationError):
        in_class(np.eye(3), cls)


def test_class_validation():
    assert EllipticityClass(2, 1.0, 4.0).distortion() == 4.0
    with pytest.raises(ValidationError):
        EllipticityClass(2, 2.0, 1.0)
    with pytest.raises(ValidationError):
        EllipticityClass(2, 0.0, 1.0)


def test_batch_helpers_match_scalar():
    rng = np.random.default_rng(3)
    a = random_in_class(rng, 3, 0.5, 3.0, 20)
    s = matcore.sqrt_batch(a)
    for ai, si in zip(a, s):
        assert np.allclose(si, principal_sqrt(ai), atol=1e-12)
    m = rng.standard_normal((20, 3, 3))
    q, v = matcore.polar_batch(m)
    for mi, qi, vi in zip(m, q, v):
        q0, v0 = polar_orthogonal(mi)
        assert abs(vi - v0) < 1e-9 and np.allclose(qi, q0, atol=1e-8)
