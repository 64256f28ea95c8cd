import math

import numpy as np
import pytest

from conftest import random_constant_det, random_in_class
from ellipsoid_lab.errors import ConfigError, ValidationError
from ellipsoid_lab.field import (
    Ball,
    Box,
    CheckerboardField,
    ConstantField,
    CustomField,
    Ellipsoid,
    RotatingField,
    collar_width,
    load_field_config,
    overlap_fraction,
    parse_matrix,
    sample_uniform,
    sample_unit_ball,
    unit_ball_volume,
)
from ellipsoid_lab.matcore import EllipticityClass, in_class, principal_sqrt
from ellipsoid_lab.quadrature import ball_moment_exact, ball_qmc, ball_quadrature

CLS = EllipticityClass(2, 1.0, 2.0)


def test_constant_field():
    fld = ConstantField(np.eye(2))
    assert np.array_equal(fld.evaluate([3.0, -7.0]), np.eye(2))
    assert fld.det_target == 1.0


def test_checkerboard_parity():
    d = 2.0
    c = 1.0
    even, odd = c * np.diag([1 / d, d]), c * np.diag([d, 1 / d])
    fld = CheckerboardField(EllipticityClass(2, 0.5, 2.0), 1.0, even, odd)
    assert np.array_equal(fld.evaluate([0.5, 0.5]), even)
    assert np.array_equal(fld.evaluate([1.5, 0.5]), odd)
    assert np.array_equal(fld.evaluate([-0.5, 0.5]), odd)
    assert np.array_equal(fld.evaluate([-0.5, -0.5]), even)


def test_checkerboard_rejects_mismatched_det():
    with pytest.raises(ValidationError, match="determinant"):
        CheckerboardField(CLS, 1.0, np.diag([1.0, 2.0]), np.diag([1.0, 1.5]))


@pytest.mark.parametrize("fld", [
    ConstantField(np.diag([1.0, 2.0])),
    CheckerboardField(CLS, 0.125),
    RotatingField(CLS, "linear", 3.0),
    RotatingField(CLS, "radial", 5.0),
    RotatingField(CLS, "polar"),
    RotatingField(EllipticityClass(3, 1.0, 2.0), "linear", 2.0),
])
def test_constant_determinant_at_random_points(fld):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, (10_000, fld.n))
    mats = fld.evaluate_many(pts)
    dets = np.linalg.det(mats)
    assert np.max(np.abs(dets - fld.det_target)) <= 1e-9 * fld.det_target
    w = np.linalg.eigvalsh(mats)
    assert w.min() >= fld.cls.lam - 1e-12 and w.max() <= fld.cls.Lam + 1e-12
    roots = fld.sqrt_many(pts[:200])
    for a, s in zip(mats[:200], roots):
        assert np.allclose(s, principal_sqrt(a), atol=1e-12)


def test_rotating_det_is_lam_Lam():
    fld = RotatingField(CLS, "linear", 2.0)
    for x in np.random.default_rng(1).uniform(-2, 2, (50, 2)):
        assert abs(np.linalg.det(fld.evaluate(x)) - CLS.lam * CLS.Lam) < 1e-12


def test_custom_field_names_bad_point():
    def ev(x):
        return np.eye(2) * (1.0 if x[0] < 1 else 5.0)

    fld = CustomField(ev, EllipticityClass(2, 1.0, 2.0))
    assert np.array_equal(fld.evaluate([0.0, 0.0]), np.eye(2))
    with pytest.raises(ValidationError, match=r"x=\[2"):
        fld.evaluate([2.0, 0.0])


def test_sample_uniform_mean_and_membership():
    rng = np.random.default_rng(2)
    ball = Ellipsoid(np.zeros(2), np.eye(2))
    pts = ball.sample(rng, 1_000_000)
    assert np.all(np.abs(pts.mean(axis=0)) < 0.005)
    e = Ellipsoid([1.0, -2.0], principal_sqrt(np.array([[2.0, 0.5], [0.5, 1.0]])))
    pts = e.sample(rng, 10_000)
    inv = np.linalg.inv(e.shape @ e.shape.T)
    q = np.einsum("mi,ij,mj->m", pts - e.center, inv, pts - e.center)
    assert np.all(q < 1.0)
    one = sample_uniform(e, rng)
    assert one.shape == (2,) and e.contains(one[None])[0]


@pytest.mark.parametrize("n", [2, 3])
def test_second_moment_mc(n):
    pts = sample_unit_ball(n, 1_000_000, np.random.default_rng(n))
    m2 = pts.T @ pts / pts.shape[0]
    assert np.max(np.abs(m2 - np.eye(n) / (n + 2))) < 0.01


@pytest.mark.parametrize("n", [2, 3])
def test_quadrature_moments_exact(n):
    y, w = ball_quadrature(n, 8)
    assert abs(w.sum() - 1) < 1e-14
    assert np.max(np.abs((y * w[:, None]).T @ y - np.eye(n) / (n + 2))) < 1e-14
    assert np.max(np.abs(w @ y)) < 1e-12
    rng = np.random.default_rng(0)
    for _ in range(40):
        p = rng.integers(0, 5, n)
        if p.sum() > 8:
            continue
        val = w @ np.prod(y**p, axis=1)
        assert abs(val - ball_moment_exact(p)) < 1e-13


def test_quadrature_errors():
    with pytest.raises(ConfigError):
        ball_quadrature(4, 8)
    with pytest.raises(ConfigError):
        ball_quadrature(2, 3)


def test_qmc_high_dimension():
    y, w = ball_qmc(4, m=14, seed=1)
    assert abs(w.sum() - 1) < 1e-12
    m2 = (y * w[:, None]).T @ y
    assert np.max(np.abs(m2 - np.eye(4) / 6)) < 0.01


def test_ball_inclusion_property():
    rng = np.random.default_rng(4)
    lam, Lam = 0.5, 3.0
    u = rng.standard_normal((200, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    for a in random_in_class(rng, 3, lam, Lam, 1000):
        lens = np.linalg.norm(u @ principal_sqrt(a).T, axis=1)
        assert lens.min() >= math.sqrt(lam) - 1e-12 and lens.max() <= math.sqrt(Lam) + 1e-12


def test_ellipsoid_volume_and_distortion():
    e = Ellipsoid(np.zeros(2), np.diag([0.1, 10.0]))
    assert abs(e.volume() - math.pi) < 1e-12
    assert abs(e.distortion() - 100.0) < 1e-12
    assert abs(unit_ball_volume(3) - 4 * math.pi / 3) < 1e-12
    with pytest.raises(ValidationError):
        Ellipsoid(np.zeros(2), np.diag([1.0, -1.0]))


def test_overlap_fraction_basic():
    rng = np.random.default_rng(5)
    e = Ellipsoid(np.zeros(2), np.diag([1.0, 2.0]))
    p, se = overlap_fraction(e, e, 10_000, rng)
    assert abs(p - 1.0) <= 3 * se + 1e-15
    far = Ellipsoid([10.0, 0.0], np.eye(2))
    p, se = overlap_fraction(e, far, 10_000, rng)
    assert p == 0.0
    with pytest.raises(ValidationError):
        overlap_fraction(e, e, 100, rng)


def test_overlap_lower_bound_short_distance():
    rng = np.random.default_rng(6)
    lam, Lam, eps = 1.0, 3.0, 0.1
    gamma = (0.25 * math.sqrt(lam / Lam)) ** 2
    mats = random_constant_det(rng, 2, lam, Lam, 40)
    for a1, a2 in zip(mats[::2], mats[1::2]):
        x = rng.uniform(-1, 1, 2)
        d = rng.standard_normal(2)
        z = x + d / np.linalg.norm(d) * rng.uniform(0, 0.5) * math.sqrt(lam) * eps
        ex = Ellipsoid(x, eps * principal_sqrt(a1))
        ez = Ellipsoid(z, eps * principal_sqrt(a2))
        p, se = overlap_fraction(ex, ez, 20_000, rng)
        assert p >= gamma


def test_midpoint_ball_in_both():
    rng = np.random.default_rng(7)
    lam, Lam, eps = 1.0, 4.0, 0.2
    for _ in range(20):
        a1, a2 = random_in_class(rng, 2, lam, Lam, 2)
        x = rng.uniform(-1, 1, 2)
        d = rng.standard_normal(2)
        z = x + d / np.linalg.norm(d) * 0.5 * math.sqrt(lam) * eps
        ex = Ellipsoid(x, eps * principal_sqrt(a1))
        ez = Ellipsoid(z, eps * principal_sqrt(a2))
        pts = 0.5 * (x + z) + math.sqrt(lam) * eps / 4 * sample_unit_ball(2, 1000, rng)
        assert np.all(ex.contains(pts)) and np.all(ez.contains(pts))


def test_domains():
    b = Ball((0.0, 0.0), 1.0)
    assert list(b.contains(np.array([[0.0, 0.999], [0.0, 1.0], [2.0, 0.0]]))) == [True, False, False]
    box = Box((0.0, 0.0), (1.0, 2.0))
    assert list(box.contains(np.array([[0.5, 1.0], [1.0, 1.0], [0.5, 2.5]]))) == [True, False, False]
    assert box.center == (0.5, 1.0)
    assert collar_width(CLS, 0.1) == pytest.approx(math.sqrt(2) * 0.1)
    with pytest.raises(ValidationError):
        Ball((0.0,), -1.0)
    with pytest.raises(ValidationError):
        Box((1.0,), (0.0,))


def test_config_loader():
    text = """
[field]
kind = checkerboard
n = 2
lam = 1
lam_upper = 2
cell = 0.25

[domain]
kind = box
lo = 0,0
hi = 1,1
"""
    fld, dom = load_field_config(text)
    assert isinstance(fld, CheckerboardField) and fld.cell == 0.25
    assert isinstance(dom, Box)
    fld, _ = load_field_config("[field]\nkind = rotating\nprofile = polar\nlam = 1\nlam_upper = 1.5\n")
    assert fld.profile == "polar"
    fld, _ = load_field_config("[field]\nkind = constant\nmatrix = 2,1;1,2\n")
    assert np.array_equal(fld.a, [[2, 1], [1, 2]])
    with pytest.raises(ConfigError, match="unknown keys"):
        load_field_config("[field]\nkind = constant\ncolour = red\n")
    with pytest.raises(ConfigError):
        load_field_config("[field]\nkind = spiral\n")
    with pytest.raises(ConfigError):
        parse_matrix("1,2;3")


def test_in_class_of_checkerboard_default():
    fld = CheckerboardField(CLS, 0.5)
    assert in_class(fld.a_even, CLS) and in_class(fld.a_odd, CLS)
