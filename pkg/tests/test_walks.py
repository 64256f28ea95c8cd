import math

import numpy as np
import pytest

from ellipsoid_lab.dpp import harmonic_cubic_payoff, solve_dpp
from ellipsoid_lab.errors import ValidationError
from ellipsoid_lab.field import Ball, CheckerboardField, ConstantField, Ellipsoid, RotatingField
from ellipsoid_lab.matcore import EllipticityClass, principal_sqrt
from ellipsoid_lab.walks import (
    _overlap_move,
    coupled_increments,
    coupled_walk,
    coupled_walks,
    exit_estimate,
    walk,
)

CLS = EllipticityClass(2, 1.0, 2.0)
BALL = Ball((0.0, 0.0), 1.0)
IDENT = ConstantField(np.eye(2))


def test_single_walk_exits():
    rng = np.random.default_rng(0)
    tr = walk(IDENT, BALL, [0.0, 0.0], 0.2, rng)
    assert tr.exited and not tr.truncated
    assert not BALL.contains(tr.positions[-1:])[0]
    assert np.all(BALL.contains(tr.positions[:-1]))
    steps = np.linalg.norm(np.diff(tr.positions, axis=0), axis=1)
    assert np.all(steps < 0.2)
    tr = walk(IDENT, BALL, [0.0, 0.0], 0.01, rng, step_cap=5)
    assert tr.truncated and tr.steps == 5


def test_one_step_exit():
    # from the center the first step lands back in B_r with probability |B_r| / |E_x|
    fld = CheckerboardField(CLS, 0.25)
    r, eps = 0.1, 0.5
    small = Ball((0.0, 0.0), r)
    tr = walk(fld, small, [0.0, 0.0], eps, np.random.default_rng(1))
    assert tr.exited
    m = 20_000
    with pytest.warns(RuntimeWarning, match="step_cap"):
        stats = exit_estimate(fld, small, harmonic_cubic_payoff, [0.0, 0.0], eps, m, seed=1,
                              step_cap=1)
    p_stay = r * r / (eps * eps * math.sqrt(CLS.lam * CLS.Lam))
    frac = stats.truncated / m
    assert abs(frac - p_stay) < 4 * math.sqrt(p_stay / m)
    # a domain the ellipsoid cannot land in at all: one step, always
    ring_free = Ball((0.0, 0.0), 1e-9)
    stats = exit_estimate(fld, ring_free, harmonic_cubic_payoff, [0.0, 0.0], eps, 2000, seed=2)
    assert stats.mean_steps == 1.0


def test_mean_exit_position_symmetric():
    stats = exit_estimate(IDENT, BALL, harmonic_cubic_payoff, [0.0, 0.0], 0.25, 100_000, seed=2)
    se = 1.1 / math.sqrt(stats.n)
    assert np.all(np.abs(stats.mean_exit) < 3 * se)


def test_exit_estimate_reproducible_and_mergeable():
    a = exit_estimate(IDENT, BALL, harmonic_cubic_payoff, [0.2, 0.1], 0.25, 5000, seed=3, batch=1000)
    b = exit_estimate(IDENT, BALL, harmonic_cubic_payoff, [0.2, 0.1], 0.25, 5000, seed=3, batch=1000)
    assert a.mean == b.mean and a.n == 5000
    c = exit_estimate(IDENT, BALL, harmonic_cubic_payoff, [0.2, 0.1], 0.25, 5000, seed=4, batch=1000)
    assert c.mean != a.mean


def test_truncation_warns():
    with pytest.warns(RuntimeWarning):
        s = exit_estimate(IDENT, BALL, harmonic_cubic_payoff, [0.0, 0.0], 0.01, 100, step_cap=3)
    assert s.truncated == 100


def test_walk_matches_grid_solution():
    fld = CheckerboardField(CLS, 0.125)
    eps, h = 0.125, 1 / 64
    sol = solve_dpp(fld, BALL, harmonic_cubic_payoff, eps, h, tol=1e-10, method="krylov")
    pts = sol.grid.coords()
    d2 = 6.0 * np.max(np.abs(pts))
    rng = np.random.default_rng(5)
    zs = []
    for i in range(10):
        r, th = 0.8 * math.sqrt(rng.uniform()), rng.uniform(0, 2 * math.pi)
        x0 = np.array([r * math.cos(th), r * math.sin(th)])
        st = exit_estimate(fld, BALL, harmonic_cubic_payoff, x0, eps, 20_000, seed=100 + i)
        interp = st.mean_steps * 2 * h * h / 8 * d2
        grid_val = sol.value_at(x0)[0]
        assert abs(st.mean - grid_val) <= 3 * (st.stderr + sol.residual + interp)
        zs.append((st.mean - grid_val) / st.stderr)
    assert abs(np.mean(zs)) < 3 / math.sqrt(10) + 0.5


def test_coupled_same_start_meets_immediately():
    rng = np.random.default_rng(6)
    res = coupled_walk(IDENT, BALL, [0.1, 0.1], [0.1, 0.1], 0.1, "mirror", rng)
    assert res.met and res.meet_step == 0 and res.final_separation == 0.0
    s = coupled_walks(IDENT, BALL, [0.1, 0.1], [0.1, 0.1], 0.1, "optimal", 50)
    assert s.meet_frequency == 1.0


def test_identity_preserves_separation():
    s = coupled_walks(IDENT, BALL, [0.25, 0.0], [-0.25, 0.0], 0.125, "identity", 2000, seed=7)
    assert s.met == 0 and s.max_separation_drift < 1e-12
    assert s.exited == 2000


def test_mirror_meeting_monotone():
    freqs = []
    for sep in (0.5, 0.25, 0.125):
        s = coupled_walks(IDENT, BALL, [sep / 2, 0.0], [-sep / 2, 0.0], 0.125, "mirror", 4000, seed=8)
        freqs.append(s.meet_frequency)
        assert s.met + s.exited + s.truncated == s.runs
    assert freqs[0] < freqs[1] < freqs[2]


def test_single_coupled_walk_fields():
    rng = np.random.default_rng(9)
    res = coupled_walk(CheckerboardField(CLS, 0.25), BALL, [0.05, 0.0], [-0.05, 0.0], 0.125,
                       "optimal", rng)
    if res.met:
        assert res.final_separation == 0.0 and res.meet_step >= 1
    else:
        assert res.exit_step is not None or res.truncated


@pytest.mark.parametrize("strategy", ["optimal", "mirror", "identity"])
def test_coupled_marginals(strategy):
    fld = RotatingField(CLS, "linear", 3.0)
    x, z = np.array([0.1, 0.3]), np.array([-0.4, 0.2])
    eps = 1.0
    hx, hz = coupled_increments(fld, x, z, eps, strategy, 1_000_000, np.random.default_rng(10))
    for h, p in ((hx, x), (hz, z)):
        a = fld.evaluate(p)
        cov = h.T @ h / h.shape[0]
        assert np.max(np.abs(cov - a / 4)) < 0.01
        assert np.max(np.abs(h.mean(axis=0))) < 0.01


def test_overlap_move_marginals():
    rng = np.random.default_rng(11)
    m, eps = 200_000, 1.0
    a1 = np.array([[1.5, 0.3], [0.3, 1.0]])
    a1 *= math.sqrt(2 / np.linalg.det(a1))
    a2 = np.diag([1.0, 2.0])
    s1, s2 = principal_sqrt(a1), principal_sqrt(a2)
    x = np.tile([0.0, 0.0], (m, 1))
    z = np.tile([0.3, -0.1], (m, 1))
    nx, nz, met, fb = _overlap_move(x, z, np.broadcast_to(s1, (m, 2, 2)), np.broadcast_to(s2, (m, 2, 2)),
                                    eps, rng)
    assert fb == 0
    for new, c, s, a in ((nx, x[0], s1, a1), (nz, z[0], s2, a2)):
        assert np.all(Ellipsoid(c, eps * s).contains(new))
        h = new - c
        assert np.max(np.abs(h.mean(axis=0))) < 0.01
        assert np.max(np.abs(h.T @ h / m - a / 4)) < 0.01
    assert np.array_equal(nx[met], nz[met])
    e1, e2 = Ellipsoid(x[0], eps * s1), Ellipsoid(z[0], eps * s2)
    from ellipsoid_lab.field import overlap_fraction
    p, se = overlap_fraction(e1, e2, 200_000, rng)
    assert abs(met.mean() - p) < 4 * math.hypot(se, math.sqrt(p * (1 - p) / m))


def test_seed_determinism():
    a = coupled_walks(IDENT, BALL, [0.1, 0.0], [-0.1, 0.0], 0.125, "optimal", 500, seed=12, batch=100)
    b = coupled_walks(IDENT, BALL, [0.1, 0.0], [-0.1, 0.0], 0.125, "optimal", 500, seed=12, batch=100)
    assert a.as_dict() == b.as_dict()


def test_walk_errors():
    with pytest.raises(ValidationError):
        coupled_walks(IDENT, BALL, [0.0, 0.0], [0.1, 0.0], 0.1, "reflection", 10)
    with pytest.raises(ValidationError):
        coupled_walks(IDENT, BALL, [2.0, 0.0], [0.1, 0.0], 0.1, "mirror", 10)
    with pytest.raises(ValidationError):
        walk(IDENT, BALL, [1.5, 0.0], 0.1, np.random.default_rng(0))
