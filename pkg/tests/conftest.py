import numpy as np
import pytest

from ellipsoid_lab import _accel

ACCEPTANCE = {}


def random_in_class(rng, n, lam, Lam, size=None):
    """Random symmetric matrices with spectrum in [lam, Lam]."""
    from ellipsoid_lab.matcore import random_orthogonal_batch
    m = 1 if size is None else size
    q = random_orthogonal_batch(n, m, rng)
    w = rng.uniform(lam, Lam, (m, n))
    a = np.einsum("mij,mj,mkj->mik", q, w, q)
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    return a[0] if size is None else a


def random_constant_det(rng, n, lam, Lam, size):
    """Random matrices in the class with determinant lam * Lam (n = 2)."""
    from ellipsoid_lab.matcore import random_orthogonal_batch
    assert n == 2
    q = random_orthogonal_batch(2, size, rng)
    w = np.tile([lam, Lam], (size, 1))
    a = np.einsum("mij,mj,mkj->mik", q, w, q)
    return 0.5 * (a + np.swapaxes(a, 1, 2))


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    if request.param == "numba" and not _accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    prev = _accel.USE_NUMBA
    _accel.set_backend(request.param == "numba")
    yield request.param
    _accel.set_backend(prev)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
