"""Time the numba and pure-numpy paths of each hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Each kernel runs once per backend to warm up (numba compiles on first call),
then ``--repeat`` times; the best wall time is reported along with the max
absolute difference between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from ellipsoid_lab import _accel, kernels
from ellipsoid_lab.field import Ball, CheckerboardField
from ellipsoid_lab.matcore import EllipticityClass
from ellipsoid_lab.dpp import assemble, harmonic_cubic_payoff


def _best(fn, repeat):
    fn()
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def bench_jacobi(repeat):
    rng = np.random.default_rng(0)
    mats = []
    for n in (2, 4, 8):
        g = rng.standard_normal((200, n, n))
        mats += list(g + np.swapaxes(g, 1, 2))

    def run():
        return [kernels.jacobi_eig(a)[0] for a in mats]

    return run, lambda a, b: max(float(np.max(np.abs(np.sort(x) - np.sort(y)))) for x, y in zip(a, b))


def bench_assembly(repeat):
    fld = CheckerboardField(EllipticityClass(2, 1.0, 2.0), 0.125)
    dom = Ball((0.0, 0.0), 1.0)

    def run():
        s = assemble(fld, dom, harmonic_cubic_payoff, 1 / 16, 1 / 64)
        return s.P, s.b

    def diff(a, b):
        return max(float(abs(a[0] - b[0]).max()), float(np.max(np.abs(a[1] - b[1]))))

    return run, diff


def bench_holder(repeat):
    rng = np.random.default_rng(1)
    g = np.stack(np.meshgrid(np.arange(70), np.arange(70), indexing="ij"), -1).reshape(-1, 2)
    vals = rng.standard_normal(g.shape[0])
    span = 69 * 69 * 2
    powtab = (np.sqrt(np.arange(span + 1)) / 64) ** 0.1

    def run():
        return kernels.holder_scan(g, vals, powtab, 0.5)

    return run, lambda a, b: abs(a[0] - b[0])


BENCHES = {"jacobi_eig (600 matrices)": bench_jacobi,
           "assemble_average_operator (eps=1/16, h=1/64)": bench_assembly,
           "holder_scan (4900 nodes)": bench_holder}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':48s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, make in BENCHES.items():
        run, diff = make(args.repeat)
        _accel.set_backend(True)
        t_nb, out_nb = _best(run, args.repeat)
        _accel.set_backend(False)
        t_np, out_np = _best(run, args.repeat)
        _accel.set_backend(True)
        print(f"{name:48s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f} {diff(out_nb, out_np):10.2e}")


if __name__ == "__main__":
    main()
