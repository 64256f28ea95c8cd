"""Monte Carlo ellipsoid walks: single walks, batched exit estimators and
coupled pairs.

Batches take a root seed; each batch gets an independent stream from
``SeedSequence.spawn`` so results merge by summing sufficient statistics.
"""
import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ValidationError
from .field import sample_unit_ball
from .matcore import polar_batch

STEP_CAP = 1_000_000
REJECTION_CAP = 1000
STRATEGIES = ("optimal", "mirror", "identity")


@dataclass
class WalkState:
    position: np.ndarray
    steps: int
    exited: bool


@dataclass
class WalkTrace:
    positions: np.ndarray
    steps: int
    exited: bool
    truncated: bool

    @property
    def final(self):
        return WalkState(self.positions[-1].copy(), self.steps, self.exited)


def _check_start(domain, *points):
    for p in points:
        if not domain.contains(np.asarray(p, float)[None, :])[0]:
            raise ValidationError(f"start point {p} is not in the domain")


def walk(field, domain, x0, eps, rng, step_cap=STEP_CAP):
    """One ellipsoid walk from ``x0`` until it leaves the domain or hits ``step_cap``."""
    x = np.asarray(x0, float).copy()
    _check_start(domain, x)
    path = [x.copy()]
    for step in range(1, step_cap + 1):
        s = field.sqrt_many(x[None, :])[0]
        x = x + eps * s @ sample_unit_ball(x.size, 1, rng)[0]
        path.append(x.copy())
        if not domain.contains(x[None, :])[0]:
            return WalkTrace(np.array(path), step, True, False)
    return WalkTrace(np.array(path), step_cap, False, True)


@dataclass
class ExitStats:
    """Sufficient statistics of ``F(x_tau)`` over a batch of walks."""

    n: int = 0
    total: float = 0.0
    total_sq: float = 0.0
    truncated: int = 0
    steps_total: int = 0
    exit_sum: np.ndarray = None

    def merge(self, other):
        es = other.exit_sum if self.exit_sum is None else (
            self.exit_sum if other.exit_sum is None else self.exit_sum + other.exit_sum)
        return ExitStats(self.n + other.n, self.total + other.total,
                         self.total_sq + other.total_sq, self.truncated + other.truncated,
                         self.steps_total + other.steps_total, es)

    @property
    def mean(self):
        return self.total / self.n

    @property
    def stderr(self):
        if self.n < 2:
            return math.inf
        var = (self.total_sq - self.n * self.mean**2) / (self.n - 1)
        return math.sqrt(max(var, 0.0) / self.n)

    @property
    def mean_exit(self):
        return self.exit_sum / self.n

    @property
    def mean_steps(self):
        return self.steps_total / self.n

    def as_dict(self):
        return {"runs": self.n, "mean": self.mean, "stderr": self.stderr,
                "truncated": self.truncated, "mean_steps": self.mean_steps,
                "mean_exit_position": self.mean_exit.tolist()}


def _run_exit_batch(field, domain, payoff, x0, eps, runs, rng, step_cap):
    n = x0.size
    x = np.tile(x0, (runs, 1))
    active = np.arange(runs)
    steps = np.zeros(runs, np.int64)
    for _ in range(step_cap):
        if active.size == 0:
            break
        xa = x[active]
        s = field.sqrt_many(xa)
        xa = xa + eps * np.einsum("mij,mj->mi", s, sample_unit_ball(n, active.size, rng))
        x[active] = xa
        steps[active] += 1
        active = active[domain.contains(xa)]
    done = np.ones(runs, bool)
    done[active] = False
    vals = payoff(x[done]) if np.any(done) else np.zeros(0)
    return ExitStats(int(done.sum()), float(vals.sum()), float(vals @ vals), int(active.size),
                     int(steps[done].sum()), x[done].sum(axis=0))


def exit_estimate(field, domain, payoff, x0, eps, runs, seed=0, step_cap=STEP_CAP,
                  batch=20_000):
    """Estimate ``E[F(x_tau) | x0]``; truncated walks are counted, not averaged."""
    x0 = np.asarray(x0, float)
    _check_start(domain, x0)
    nb = max(1, math.ceil(runs / batch))
    stats = ExitStats(exit_sum=np.zeros(x0.size))
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(nb)):
        m = min(batch, runs - i * batch)
        stats = stats.merge(_run_exit_batch(field, domain, payoff, x0, eps, m,
                                            np.random.default_rng(ss), step_cap))
    if stats.truncated:
        warnings.warn(f"{stats.truncated} walks hit step_cap={step_cap}", RuntimeWarning,
                      stacklevel=2)
    return stats


# ---------------------------------------------------------------------------
# Coupled walks
# ---------------------------------------------------------------------------


@dataclass
class CoupledWalkStats:
    met: bool
    meet_step: int = None
    exit_step: int = None
    final_separation: float = 0.0
    truncated: bool = False


@dataclass
class CoupledSummary:
    runs: int
    met: int
    exited: int
    truncated: int
    meet_steps: list = dc_field(default_factory=list)
    max_separation_drift: float = 0.0
    rejection_fallbacks: int = 0

    @property
    def meet_frequency(self):
        return self.met / self.runs if self.runs else 0.0

    def merge(self, other):
        return CoupledSummary(self.runs + other.runs, self.met + other.met,
                              self.exited + other.exited, self.truncated + other.truncated,
                              self.meet_steps + other.meet_steps,
                              max(self.max_separation_drift, other.max_separation_drift),
                              self.rejection_fallbacks + other.rejection_fallbacks)

    def as_dict(self):
        ms = self.meet_steps
        return {"runs": self.runs, "met": self.met, "meet_frequency": self.meet_frequency,
                "exited": self.exited, "truncated": self.truncated,
                "mean_meet_step": float(np.mean(ms)) if ms else None,
                "max_separation_drift": self.max_separation_drift,
                "rejection_fallbacks": self.rejection_fallbacks}


def _couplings(s1, s2, d, strategy, alpha):
    m, n = d.shape
    if strategy == "identity":
        return np.broadcast_to(np.eye(n), (m, n, n))
    e = d / np.linalg.norm(d, axis=1, keepdims=True)
    outer = np.einsum("mi,mj->mij", e, e)
    if strategy == "mirror":
        return np.eye(n) - 2.0 * outer
    # W = I + (alpha - 2) e e^T; Q maximizes trace(S1 W S2 Q)
    w = np.eye(n) + (alpha - 2.0) * outer
    q, _ = polar_batch(s1 @ w @ s2)
    return q


def _overlap_move(x, z, s1, s2, eps, rng):
    """Maximal coupling of the uniform laws on ``E_x`` and ``E_z`` (equal volumes).

    Returns new positions, a met mask and the number of rejection fallbacks.
    """
    m, n = x.shape
    inv2 = np.linalg.inv(s2)
    inv1 = np.linalg.inv(s1)
    yx = x + eps * np.einsum("mij,mj->mi", s1, sample_unit_ball(n, m, rng))
    u = np.einsum("mij,mj->mi", inv2, yx - z) / eps
    met = np.sum(u * u, axis=1) < 1.0
    znew = yx.copy()
    todo = np.flatnonzero(~met)
    fallbacks = 0
    tries = 0
    while todo.size and tries < REJECTION_CAP:
        cand = z[todo] + eps * np.einsum("mij,mj->mi", s2[todo], sample_unit_ball(n, todo.size, rng))
        v = np.einsum("mij,mj->mi", inv1[todo], cand - x[todo]) / eps
        ok = np.sum(v * v, axis=1) >= 1.0
        znew[todo[ok]] = cand[ok]
        todo = todo[~ok]
        tries += 1
    if todo.size:
        fallbacks = todo.size
        warnings.warn(f"{fallbacks} overlap rejections hit the retry cap; using independent "
                      "draws", RuntimeWarning, stacklevel=3)
        znew[todo] = z[todo] + eps * np.einsum("mij,mj->mi", s2[todo],
                                               sample_unit_ball(n, todo.size, rng))
    return yx, znew, met, fallbacks


def _run_coupled_batch(field, domain, x0, z0, eps, strategy, alpha, runs, rng, step_cap):
    n = x0.size
    lam = field.cls.lam
    x = np.tile(x0, (runs, 1))
    z = np.tile(z0, (runs, 1))
    sep0 = float(np.linalg.norm(x0 - z0))
    met = np.zeros(runs, bool)
    exited = np.zeros(runs, bool)
    meet_step = np.full(runs, -1, np.int64)
    exit_step = np.full(runs, -1, np.int64)
    drift = 0.0
    fallbacks = 0
    if sep0 == 0.0:
        return CoupledSummary(runs, runs, 0, 0, [0] * runs, 0.0, 0), None
    active = np.arange(runs)
    for step in range(1, step_cap + 1):
        if active.size == 0:
            break
        xa, za = x[active], z[active]
        s1, s2 = field.sqrt_many(xa), field.sqrt_many(za)
        d = xa - za
        dist = np.linalg.norm(d, axis=1)
        close = dist <= 0.5 * math.sqrt(lam) * eps if strategy != "identity" else np.zeros(
            active.size, bool)
        far = ~close
        newx, newz = xa.copy(), za.copy()
        just_met = np.zeros(active.size, bool)
        if np.any(far):
            q = _couplings(s1[far], s2[far], d[far], strategy, alpha)
            y = sample_unit_ball(n, int(far.sum()), rng)
            newx[far] = xa[far] + eps * np.einsum("mij,mj->mi", s1[far], y)
            qy = np.einsum("mij,mj->mi", q, y)
            newz[far] = za[far] + eps * np.einsum("mij,mj->mi", s2[far], qy)
        if np.any(close):
            cx, cz, cmet, fb = _overlap_move(xa[close], za[close], s1[close], s2[close], eps, rng)
            newx[close], newz[close] = cx, cz
            just_met[np.flatnonzero(close)[cmet]] = True
            fallbacks += fb
        newz[just_met] = newx[just_met]
        x[active], z[active] = newx, newz
        if strategy == "identity":
            drift = max(drift, float(np.max(np.abs(np.linalg.norm(newx - newz, axis=1) - sep0))))
        idx_met = active[just_met]
        met[idx_met] = True
        meet_step[idx_met] = step
        out = ~just_met & ~(domain.contains(newx) & domain.contains(newz))
        idx_out = active[out]
        exited[idx_out] = True
        exit_step[idx_out] = step
        active = active[~just_met & ~out]
    return CoupledSummary(runs, int(met.sum()), int(exited.sum()), int(active.size),
                          meet_step[met].tolist(), drift, fallbacks), (x, z, met, meet_step,
                                                                       exit_step, active)


def coupled_walks(field, domain, x0, z0, eps, strategy, runs, seed=0, step_cap=STEP_CAP,
                  alpha=0.5, batch=10_000):
    """Run ``runs`` coupled pairs and return a :class:`CoupledSummary`.

    ``alpha`` sets the weight of the optimal strategy's trace objective.
    """
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    x0, z0 = np.asarray(x0, float), np.asarray(z0, float)
    _check_start(domain, x0, z0)
    nb = max(1, math.ceil(runs / batch))
    total = CoupledSummary(0, 0, 0, 0)
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(nb)):
        m = min(batch, runs - i * batch)
        res = _run_coupled_batch(field, domain, x0, z0, eps, strategy, alpha, m,
                                 np.random.default_rng(ss), step_cap)
        total = total.merge(res[0])
    return total


def coupled_walk(field, domain, x0, z0, eps, strategy, rng, step_cap=STEP_CAP, alpha=0.5):
    """A single coupled pair, returned as :class:`CoupledWalkStats`."""
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    x0, z0 = np.asarray(x0, float), np.asarray(z0, float)
    _check_start(domain, x0, z0)
    if np.array_equal(x0, z0):
        return CoupledWalkStats(True, 0, None, 0.0)
    res = _run_coupled_batch(field, domain, x0, z0, eps, strategy, alpha, 1, rng, step_cap)
    _, (x, z, met, meet_step, exit_step, active) = res
    sep = 0.0 if met[0] else float(np.linalg.norm(x[0] - z[0]))
    return CoupledWalkStats(bool(met[0]), int(meet_step[0]) if met[0] else None,
                            int(exit_step[0]) if exit_step[0] >= 0 else None, sep,
                            bool(active.size))


def coupled_increments(field, x, z, eps, strategy, samples, rng, alpha=0.5):
    """One-step increments ``(X+ - X, Z+ - Z)`` of the far-range coupled move."""
    x, z = np.asarray(x, float), np.asarray(z, float)
    s1, s2 = field.sqrt_many(np.stack([x, z]))
    q = _couplings(s1[None], s2[None], (x - z)[None], strategy, alpha)[0]
    y = sample_unit_ball(x.size, samples, rng)
    return eps * y @ s1.T, eps * y @ (s2 @ q).T
