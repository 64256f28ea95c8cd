import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from ellipsoid_lab.counterexamples import (
    FLOOR_2D,
    CustomCouplingMap,
    LinearCouplingMap,
    audit_measure_preserving,
    counterexample_2d,
    counterexample_3d,
    coupling_grid_2d,
    coupling_grid_3d,
    halfslab_volume_fraction,
    projection_split,
    records_to_json,
    signed_permutations,
)
from ellipsoid_lab.errors import ValidationError
from ellipsoid_lab.field import Ellipsoid
from ellipsoid_lab.matcore import random_orthogonal

UNIT = Ellipsoid(np.zeros(2), np.eye(2))
E1_2D = Ellipsoid(np.zeros(2), np.diag([0.1, 10.0]))


def test_mirror_and_identity_split():
    rng = np.random.default_rng(0)
    mirror = LinearCouplingMap(UNIT, UNIT, np.diag([-1.0, 1.0]))
    s = projection_split(UNIT, UNIT, mirror, [1.0, 0.0], 100_000, rng)
    assert s.orthogonal == 0.0 and s.parallel > 0
    assert abs(s.parallel - 4 * 0.25) < 3 * s.parallel_stderr + 1e-12
    ident = LinearCouplingMap(UNIT, UNIT, np.eye(2))
    s = projection_split(UNIT, UNIT, ident, [1.0, 0.0], 100_000, rng)
    assert s.parallel == 0.0 and s.orthogonal == 0.0 and not s.violated


def test_split_linear_matches_closed_form():
    # avg |P(S1 - S2 Q) u|^2 = |row of (S1 - S2 Q)|^2 / (n + 2)
    rng = np.random.default_rng(1)
    q = random_orthogonal(2, 3)
    phi = LinearCouplingMap(E1_2D, UNIT, q)
    s = projection_split(E1_2D, UNIT, phi, [1.0, 0.0], 400_000, rng)
    m = E1_2D.shape - q
    assert abs(s.parallel - m[0] @ m[0] / 4) < 3 * s.parallel_stderr
    assert abs(s.orthogonal - m[1] @ m[1] / 4) < 3 * s.orthogonal_stderr
    assert s.parallel <= 1.21 + 3 * s.parallel_stderr


def test_projection_split_errors():
    rng = np.random.default_rng(2)
    phi = LinearCouplingMap(UNIT, UNIT, np.eye(2))
    with pytest.raises(ValidationError):
        projection_split(UNIT, UNIT, phi, [1.0, 0.0], 1000, rng)
    with pytest.raises(ValidationError):
        projection_split(E1_2D, UNIT, phi, [1.0, 0.0], 100_000, rng)
    with pytest.raises(ValidationError):
        LinearCouplingMap(Ellipsoid(np.zeros(2), 2 * np.eye(2)), UNIT, np.eye(2))


def test_halfslab_against_quadrature():
    val, _ = quad(lambda t: math.sqrt(1 - t * t), 0.5, 1.0)
    oracle = 4 * val / math.pi
    assert abs(halfslab_volume_fraction(UNIT, 0, 0.5) - oracle) < 1e-12
    assert abs(16 * halfslab_volume_fraction(E1_2D, 1, 5.0) - FLOOR_2D) < 1e-12
    assert abs(64 / math.pi * val - FLOOR_2D) < 1e-12
    assert halfslab_volume_fraction(UNIT, 0, 0.0) == 1.0
    assert halfslab_volume_fraction(UNIT, 1, 1.0) == 0.0
    with pytest.raises(ValidationError):
        halfslab_volume_fraction(UNIT, 2, 0.5)


def test_halfslab_against_mc():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(2, 4))
        g = rng.standard_normal((n, n))
        e = Ellipsoid(rng.standard_normal(n), g @ g.T + 0.5 * np.eye(n))
        axis = int(rng.integers(n))
        t = rng.uniform(0, np.linalg.norm(e.shape[axis]))
        pts = e.sample(rng, 200_000)
        hits = np.abs(pts[:, axis] - e.center[axis]) >= t
        p = hits.mean()
        se = math.sqrt(max(p * (1 - p), 1e-12) / hits.size)
        assert abs(halfslab_volume_fraction(e, axis, t) - p) < 3 * se + 1e-4


def test_volumes_equal_pi():
    assert abs(E1_2D.volume() - math.pi) < 1e-12
    e1 = Ellipsoid(np.zeros(3), np.diag([1.0, 100.0, 1.0]))
    e2 = Ellipsoid(np.zeros(3), np.diag([1.0, 1.0, 100.0]))
    assert abs(e1.volume() - e2.volume()) < 1e-9


def test_half_volume_beyond_five():
    assert halfslab_volume_fraction(E1_2D, 1, 5.0) > 0.39
    e1 = Ellipsoid(np.zeros(3), np.diag([1.0, 100.0, 1.0]))
    c = 0.05
    frac = halfslab_volume_fraction(e1, 1, 5.0)
    assert abs(frac - (1 - 1.5 * (c - c**3 / 3))) < 1e-12
    assert frac >= 0.5


def test_audit():
    rng = np.random.default_rng(4)
    good = CustomCouplingMap(UNIT, UNIT, lambda y: y @ random_orthogonal(2, 1).T)
    ok, p = audit_measure_preserving(good, rng)
    assert ok and p >= 0.01
    bad = CustomCouplingMap(UNIT, UNIT, lambda y: y * np.linalg.norm(y, axis=1, keepdims=True))
    ok, p = audit_measure_preserving(bad, rng)
    assert not ok
    with pytest.raises(ValidationError, match="audit"):
        projection_split(UNIT, UNIT, bad, [1.0, 0.0], 100_000, rng)
    s = projection_split(UNIT, UNIT, good, [1.0, 0.0], 100_000, rng)
    assert s.parallel >= 0


def test_grids():
    qs, ids = coupling_grid_2d(720)
    assert qs.shape == (1440, 2, 2) and len(set(ids)) == 1440
    assert np.allclose(np.einsum("mij,mkj->mik", qs, qs), np.eye(2), atol=1e-13)
    assert np.sum(np.linalg.det(qs) > 0) == 720
    assert signed_permutations(3).shape == (48, 3, 3)
    qs, ids = coupling_grid_3d(10, np.random.default_rng(0))
    assert qs.shape == (34, 3, 3)
    assert np.allclose(np.linalg.det(qs[10:]), 1.0)


def test_small_counterexample_2d():
    rep = counterexample_2d(1_000_000, coupling_grid=8, rng=np.random.default_rng(5))
    assert rep["couplings"] == 16 and rep["all_violated"]
    assert rep["max_parallel"] <= 1.21 + 0.05 and rep["min_orthogonal"] >= 6.0
    assert len(rep["records"]) == 16
    assert abs(rep["bounds"]["orthogonal_floor_from_fraction"] - FLOOR_2D) < 1e-12
    with pytest.raises(ValidationError):
        counterexample_2d(1000)


def test_small_counterexample_3d():
    rep = counterexample_3d(1_000_000, coupling_grid=20, rng=np.random.default_rng(6))
    assert rep["couplings"] == 44 and rep["all_violated"]
    assert rep["max_parallel"] <= 4.05 and rep["min_orthogonal"] >= 7.95


def test_records_json(tmp_path):
    rep = counterexample_2d(1_000_000, coupling_grid=2, rng=np.random.default_rng(7))
    path = tmp_path / "r.json"
    text = records_to_json(rep, str(path))
    back = json.loads(path.read_text())
    assert back == json.loads(text)
    assert set(back["records"][0]) == {"coupling", "parallel", "orthogonal", "stderr", "violated"}
