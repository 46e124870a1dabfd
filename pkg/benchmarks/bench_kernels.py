"""Compare the compiled and NumPy kernel backends.

    python3 benchmarks/bench_kernels.py --sizes 4 8 12 --repeat 5
"""

import argparse
import time

import numpy as np

from odecofield import algebra as al
from odecofield import kernels
from odecofield.synthetic import box_grid


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench(n, repeat, backends):
    mesh = box_grid((n, n, n))
    nv = mesh.n_vertices
    rng = np.random.default_rng(0)
    A = np.broadcast_to(np.eye(al.NCOEFF), (nv, al.NCOEFF, al.NCOEFF)).copy()
    theta = rng.uniform(-np.pi, np.pi, (nv, 3))
    lam = rng.uniform(1, 5, (nv, 3))
    B = al.stretch_basis()
    Qx, Qy = al.conjugators()
    G = rng.standard_normal((nv, al.NCOEFF))
    rows = []
    ref = None
    for name in backends:
        F = kernels.realize(A, theta, lam, B, Qx, Qy, backend=name)
        if ref is None:
            ref = F
        err = float(np.abs(F - ref).max())
        t_r = _time(lambda: kernels.realize(A, theta, lam, B, Qx, Qy, backend=name), repeat)
        t_v = _time(lambda: kernels.realize_vjp(A, theta, lam, B, Qx, Qy, G, backend=name), repeat)
        t_d = _time(lambda: kernels.dirichlet(mesh.edges, mesh.cotan_weights, F, backend=name), repeat)
        rows.append((nv, name, t_r, t_v, t_d, err))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[4, 8, 12])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"{'verts':>7} {'backend':>8} {'realize':>10} {'vjp':>10} {'dirichlet':>10} {'max|dF|':>9}")
    for n in args.sizes:
        rows = bench(n, args.repeat, backends)
        for nv, name, t_r, t_v, t_d, err in rows:
            print(f"{nv:7d} {name:>8} {t_r * 1e3:9.2f}ms {t_v * 1e3:9.2f}ms {t_d * 1e3:9.2f}ms {err:9.1e}")
        if len(rows) == 2:
            speed = (rows[1][2] + rows[1][3]) / (rows[0][2] + rows[0][3])
            print(f"{'':7} {'speedup':>8} {speed:9.1f}x (realize + vjp, python / cython)")


if __name__ == "__main__":
    main()
