"""Projection split of a coupled step and the large-distortion obstructions.

For ellipsoids ``E1``, ``E2`` of equal volume and a volume-preserving map
``phi: E1 -> E2`` the split compares, over ``y`` uniform in ``E1``,

    parallel   = avg |P (y - phi(y))|^2,
    orthogonal = avg |(I - P)(y - phi(y))|^2,

with ``P`` the projection onto a direction. A coupling contracting along that
direction needs ``parallel > orthogonal``; the sweeps below show how badly this
fails for strongly distorted pairs.
"""
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc
from scipy.stats import chi2_contingency

from .errors import ValidationError
from .field import Ellipsoid, sample_unit_ball
from .matcore import check_orthogonal, random_orthogonal_batch

AUDIT_SAMPLES = 100_000
AUDIT_CELLS = 8
AUDIT_LEVEL = 0.01


class CouplingMap:
    """Base class: ``apply(y)`` maps points of ``E1`` to ``E2``."""

    kind = "abstract"

    def __init__(self, e1, e2):
        self.e1, self.e2 = e1, e2

    def apply(self, y):
        raise NotImplementedError

    def displacements(self, u):
        """``y - phi(y)`` for ``y = c1 + S1 u`` with ``u`` in the unit ball."""
        y = self.e1.center + u @ self.e1.shape.T
        return y - self.apply(y)


class LinearCouplingMap(CouplingMap):
    """``phi(y) = c2 + S2 Q S1^(-1) (y - c1)``; measure preserving when volumes agree."""

    kind = "linear"

    def __init__(self, e1, e2, q):
        super().__init__(e1, e2)
        self.Q = check_orthogonal(q)
        if self.Q.shape[0] != e1.n or e1.n != e2.n:
            raise ValidationError("dimension mismatch in linear coupling")
        d1, d2 = abs(np.linalg.det(e1.shape)), abs(np.linalg.det(e2.shape))
        if abs(d1 - d2) > 1e-9 * max(d1, d2):
            raise ValidationError("linear coupling needs |E1| == |E2|")
        self._lin = e2.shape @ self.Q @ np.linalg.inv(e1.shape)
        self._diff = e1.shape - e2.shape @ self.Q

    def apply(self, y):
        return self.e2.center + (np.atleast_2d(y) - self.e1.center) @ self._lin.T

    def displacements(self, u):
        # S1 u - S2 Q u, without forming S1^(-1)
        return (self.e1.center - self.e2.center) + u @ self._diff.T


class CustomCouplingMap(CouplingMap):
    """User map ``phi``; must pass :func:`audit_measure_preserving` before use."""

    kind = "custom"

    def __init__(self, e1, e2, fn):
        super().__init__(e1, e2)
        self._fn = fn

    def apply(self, y):
        return np.asarray(self._fn(np.atleast_2d(y)), float)


def audit_measure_preserving(phi, rng, samples=AUDIT_SAMPLES, cells=AUDIT_CELLS,
                             level=AUDIT_LEVEL):
    """Chi-square check that ``phi`` pushes uniform(E1) to uniform(E2).

    Pushed-forward points and an independent uniform sample of ``E2`` are both
    mapped to the cube ``[-1, 1]^n`` by ``S2^(-1)(. - c2)`` and binned into
    ``cells^n`` cells; a two-sample contingency test on the occupied cells must
    not reject at ``level``. Returns ``(passed, p_value)``.
    """
    e1, e2 = phi.e1, phi.e2
    pushed = phi.apply(e1.sample(rng, samples))
    if not np.all(e2.contains(pushed)):
        return False, 0.0
    ref = e2.sample(rng, samples)
    counts = []
    for pts in (pushed, ref):
        u = e2.to_unit(pts)
        idx = np.clip(((u + 1.0) * 0.5 * cells).astype(np.int64), 0, cells - 1)
        flat = np.ravel_multi_index(idx.T, (cells,) * e2.n)
        counts.append(np.bincount(flat, minlength=cells**e2.n))
    table = np.array(counts)
    table = table[:, table.sum(axis=0) > 0]
    _, p, _, _ = chi2_contingency(table)
    return bool(p >= level), float(p)


@dataclass(frozen=True)
class ProjectionSplit:
    parallel: float
    orthogonal: float
    parallel_stderr: float
    orthogonal_stderr: float
    samples: int

    @property
    def violated(self):
        """True when the coupling does not contract along the direction."""
        return self.parallel < self.orthogonal

    def as_dict(self):
        return {"parallel": self.parallel, "orthogonal": self.orthogonal,
                "parallel_stderr": self.parallel_stderr,
                "orthogonal_stderr": self.orthogonal_stderr, "samples": self.samples,
                "violated": self.violated}


def _split_from_displacements(disp, direction):
    par = (disp @ direction) ** 2
    orth = np.sum(disp * disp, axis=1) - par
    orth = np.clip(orth, 0.0, None)
    m = disp.shape[0]
    return ProjectionSplit(float(par.mean()), float(orth.mean()),
                           float(par.std(ddof=1) / math.sqrt(m)),
                           float(orth.std(ddof=1) / math.sqrt(m)), m)


def projection_split(e1, e2, phi, direction, samples, rng, audit=True):
    if samples < 100_000:
        raise ValidationError("projection_split needs at least 10^5 samples")
    direction = np.asarray(direction, float)
    direction = direction / np.linalg.norm(direction)
    for mine, theirs in ((e1, phi.e1), (e2, phi.e2)):
        if not (np.allclose(mine.center, theirs.center) and np.allclose(mine.shape, theirs.shape)):
            raise ValidationError("coupling map was built for different ellipsoids")
    if isinstance(phi, CustomCouplingMap) and audit:
        ok, p = audit_measure_preserving(phi, rng)
        if not ok:
            raise ValidationError(f"custom coupling map failed the measure-preservation "
                                  f"audit (p={p:.3g})")
    u = sample_unit_ball(e1.n, samples, rng)
    return _split_from_displacements(phi.displacements(u), direction)


def halfslab_volume_fraction(e, axis, threshold):
    """``|E ∩ {|y_axis - c_axis| >= t}| / |E|`` in closed form.

    With ``E = c + S B`` the coordinate is ``s . u`` (``s`` the row of ``S``), so
    the fraction is that of the unit ball outside ``|u_1| < t / |s|``, given
    by the regularized incomplete beta function ``I_{1-c^2}((n+1)/2, 1/2)``.
    """
    if not 0 <= axis < e.n:
        raise ValidationError(f"axis {axis} out of range for n={e.n}")
    t = abs(float(threshold))
    if t == 0.0:
        return 1.0
    c = t / float(np.linalg.norm(e.shape[axis]))
    if c >= 1.0:
        return 0.0
    return float(betainc(0.5 * (e.n + 1), 0.5, 1.0 - c * c))


# ---------------------------------------------------------------------------
# The two obstructions
# ---------------------------------------------------------------------------

FLOOR_2D = 16.0 * (2.0 / 3.0 - math.sqrt(3.0) / (2.0 * math.pi))
PARALLEL_2D = 1.21
PARALLEL_3D = 4.0
ORTHOGONAL_3D = 8.0


def _sweep(e1, e2, qs, ids, samples, rng, direction):
    # common random numbers: every coupling sees the same ball sample
    u = sample_unit_ball(e1.n, samples, rng)
    records = []
    for q, cid in zip(qs, ids):
        split = _split_from_displacements(u @ (e1.shape - e2.shape @ q).T, direction)
        records.append({
            "coupling": cid,
            "parallel": split.parallel,
            "orthogonal": split.orthogonal,
            "stderr": [split.parallel_stderr, split.orthogonal_stderr],
            "violated": split.violated,
        })
    return records


def coupling_grid_2d(angles=720):
    """``angles`` rotations and ``angles`` reflections at ``360 / angles`` degree spacing.

    The default of 720 gives the 0.5 degree grid (1440 couplings in all).
    """
    if angles < 1:
        raise ValidationError("2D coupling grid needs at least one angle")
    th = 2.0 * math.pi * np.arange(angles) / angles
    c, s = np.cos(th), np.sin(th)
    rot = np.stack([np.stack([c, -s], 1), np.stack([s, c], 1)], 1)
    ref = np.stack([np.stack([c, s], 1), np.stack([s, -c], 1)], 1)
    qs = np.concatenate([rot, ref])
    deg = np.degrees(th)
    ids = [f"rot:{d:.2f}" for d in deg] + [f"ref:{d:.2f}" for d in deg]
    return qs, ids


def signed_permutations(n):
    mats = []
    for perm in itertools.permutations(range(n)):
        for signs in itertools.product((1.0, -1.0), repeat=n):
            m = np.zeros((n, n))
            m[np.arange(n), perm] = signs
            mats.append(m)
    return np.array(mats)


def coupling_grid_3d(haar=1000, rng=None, rotations_only=True):
    """Haar samples plus signed axis permutations (the 24 with determinant +1
    by default, all 48 otherwise)."""
    rng = np.random.default_rng(0) if rng is None else rng
    perms = signed_permutations(3)
    if rotations_only:
        perms = perms[np.linalg.det(perms) > 0]
    qs = np.concatenate([random_orthogonal_batch(3, haar, rng), perms])
    ids = [f"haar:{i}" for i in range(haar)] + [f"perm:{i}" for i in range(len(perms))]
    return qs, ids


def _report(case, e1, e2, records, bounds, samples):
    par = max(r["parallel"] for r in records)
    orth = min(r["orthogonal"] for r in records)
    return {
        "case": case,
        "E1": np.diag(e1.shape).tolist(),
        "E2": np.diag(e2.shape).tolist(),
        "volumes": [e1.volume(), e2.volume()],
        "samples": samples,
        "couplings": len(records),
        "max_parallel": par,
        "min_orthogonal": orth,
        "all_violated": all(r["violated"] for r in records),
        "bounds": bounds,
        "records": records,
    }


def counterexample_2d(samples=1_000_000, coupling_grid=720, rng=None):
    """``E1 = diag(1/10, 10) B``, ``E2 = B``, direction ``e1``."""
    if samples < 1_000_000:
        raise ValidationError("counterexample_2d needs at least 10^6 samples")
    rng = np.random.default_rng(0) if rng is None else rng
    e1 = Ellipsoid(np.zeros(2), np.diag([0.1, 10.0]))
    e2 = Ellipsoid(np.zeros(2), np.eye(2))
    qs, ids = coupling_grid_2d(coupling_grid)
    records = _sweep(e1, e2, qs, ids, samples, rng, np.array([1.0, 0.0]))
    frac = halfslab_volume_fraction(e1, 1, 5.0)
    bounds = {"parallel_bound": PARALLEL_2D, "orthogonal_floor": FLOOR_2D,
              "halfslab_fraction": frac, "orthogonal_floor_from_fraction": 16.0 * frac}
    return _report("2d", e1, e2, records, bounds, samples)


def counterexample_3d(samples=1_000_000, coupling_grid=1000, rng=None):
    """``E1 = diag(1, 100, 1) B``, ``E2 = diag(1, 1, 100) B``, direction ``e1``."""
    if samples < 1_000_000:
        raise ValidationError("counterexample_3d needs at least 10^6 samples")
    rng = np.random.default_rng(0) if rng is None else rng
    e1 = Ellipsoid(np.zeros(3), np.diag([1.0, 100.0, 1.0]))
    e2 = Ellipsoid(np.zeros(3), np.diag([1.0, 1.0, 100.0]))
    qs, ids = coupling_grid_3d(coupling_grid, rng)
    records = _sweep(e1, e2, qs, ids, samples, rng, np.array([1.0, 0.0, 0.0]))
    frac = halfslab_volume_fraction(e1, 1, 5.0)
    bounds = {"parallel_bound": PARALLEL_3D, "orthogonal_floor": ORTHOGONAL_3D,
              "halfslab_fraction": frac}
    return _report("3d", e1, e2, records, bounds, samples)


def records_to_json(report, path=None):
    text = json.dumps(report, indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
