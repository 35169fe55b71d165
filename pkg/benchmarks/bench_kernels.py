"""Time the point-evaluation kernels under both backends.

Run with ``python3 benchmarks/bench_kernels.py``. The numba loop is warmed up
once so compile time is excluded.
"""

import argparse
import time

import numpy as np

from stochtrans._accel import HAVE_NUMBA
from stochtrans.kernels import (
    _sphere_basis_loop,
    _sphere_basis_numpy,
    _trig_eval_loop,
    _trig_eval_numpy,
)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=20000)
    parser.add_argument("--modes", type=int, default=200)
    parser.add_argument("--lmax", type=int, default=16)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    pts = rng.random((args.points, 2))
    modes = rng.integers(-12, 13, size=(args.modes, 2))
    c, s, k0 = rng.standard_normal((args.modes, 2)), rng.standard_normal((args.modes, 2)), np.zeros(2)
    sph = rng.standard_normal((args.points, 3))
    sph /= np.linalg.norm(sph, axis=1, keepdims=True)

    cases = {
        "trig_eval": (lambda: _trig_eval_numpy(pts, modes, c, s, k0), lambda: _trig_eval_loop(pts, modes, c, s, k0)),
        "sphere_basis": (lambda: _sphere_basis_numpy(sph, args.lmax), lambda: _sphere_basis_loop(sph, args.lmax)),
    }
    print(f"{'kernel':<14}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for name, (np_fn, nb_fn) in cases.items():
        t_np = best_of(np_fn, args.repeat)
        if HAVE_NUMBA:
            nb_fn()
            t_nb = best_of(nb_fn, args.repeat)
            print(f"{name:<14}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>10.2f}")
        else:
            print(f"{name:<14}{t_np:>12.4f}{'n/a':>12}{'':>10}")


if __name__ == "__main__":
    main()
