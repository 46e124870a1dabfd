import os
import subprocess
import sys

import numpy as np
import pytest

from odecofield import algebra as al
from odecofield import kernels, synthetic


def _inputs(n, seed):
    rng = np.random.default_rng(seed)
    A = np.array([al.rotation_operator(rng.uniform(-np.pi, np.pi, 3)) for _ in range(n)])
    theta = rng.uniform(-np.pi, np.pi, (n, 3))
    lam = rng.uniform(0.5, 5, (n, 3))
    Qx, Qy = al.conjugators()
    G = rng.standard_normal((n, al.NCOEFF))
    return A, theta, lam, al.stretch_basis(), Qx, Qy, G


def test_python_realize_matches_algebra():
    A, theta, lam, B, Qx, Qy, _ = _inputs(10, 0)
    F = kernels.realize(A, theta, lam, B, Qx, Qy, backend="python")
    want = np.array([a @ al.interior_tensor(t, l) for a, t, l in zip(A, theta, lam)])
    assert np.abs(F - want).max() < 1e-12


def test_python_vjp_matches_finite_differences():
    A, theta, lam, B, Qx, Qy, G = _inputs(3, 1)
    gt, gl = kernels.realize_vjp(A, theta, lam, B, Qx, Qy, G, backend="python")
    h = 1e-6

    def obj(t, l):
        return np.sum(G * kernels.realize(A, t, l, B, Qx, Qy, backend="python"))

    for i in range(3):
        for k in range(3):
            e = np.zeros_like(theta)
            e[i, k] = h
            fd = (obj(theta + e, lam) - obj(theta - e, lam)) / (2 * h)
            assert abs(gt[i, k] - fd) < 1e-7 * max(1.0, abs(fd))
            fd = (obj(theta, lam + e) - obj(theta, lam - e)) / (2 * h)
            assert abs(gl[i, k] - fd) < 1e-7 * max(1.0, abs(fd))


def test_dirichlet_brute_force():
    m = synthetic.box_grid((2, 2, 2))
    F = np.random.default_rng(2).standard_normal((m.n_vertices, al.NCOEFF))
    for name in kernels.available_backends():
        E, Ev, gF = kernels.dirichlet(m.edges, m.cotan_weights, F, backend=name)
        want = sum(w * np.sum((F[i] - F[j]) ** 2) for (i, j), w in zip(m.edges, m.cotan_weights))
        assert abs(E - want) < 1e-12 * abs(want)
        assert abs(Ev.sum() - E) < 1e-9
        h = 1e-6
        Fp = F.copy()
        Fp[4, 7] += h
        Fm = F.copy()
        Fm[4, 7] -= h
        fd = (kernels.dirichlet(m.edges, m.cotan_weights, Fp, backend=name)[0]
              - kernels.dirichlet(m.edges, m.cotan_weights, Fm, backend=name)[0]) / (2 * h)
        assert abs(gF[4, 7] - fd) < 1e-6 * max(1.0, abs(fd))


@pytest.mark.skipif("cython" not in kernels.available_backends(), reason="compiled kernels not built")
@pytest.mark.parametrize("seed", range(5))
def test_backend_parity(seed):
    A, theta, lam, B, Qx, Qy, G = _inputs(40, seed)
    Fc = kernels.realize(A, theta, lam, B, Qx, Qy, backend="cython")
    Fp = kernels.realize(A, theta, lam, B, Qx, Qy, backend="python")
    assert np.abs(Fc - Fp).max() < 1e-12
    for a, b in zip(kernels.realize_vjp(A, theta, lam, B, Qx, Qy, G, backend="cython"),
                    kernels.realize_vjp(A, theta, lam, B, Qx, Qy, G, backend="python")):
        assert np.abs(a - b).max() < 1e-12 * max(1.0, np.abs(b).max())
    m = synthetic.box_grid((3, 3, 3))
    F = np.random.default_rng(seed).standard_normal((m.n_vertices, al.NCOEFF))
    rc = kernels.dirichlet(m.edges, m.cotan_weights, F, backend="cython")
    rp = kernels.dirichlet(m.edges, m.cotan_weights, F, backend="python")
    assert abs(rc[0] - rp[0]) < 1e-12 * abs(rp[0])
    assert np.abs(rc[1] - rp[1]).max() < 1e-10
    assert np.abs(rc[2] - rp[2]).max() < 1e-10


def test_env_forces_python_fallback():
    env = dict(os.environ, ODECOFIELD_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", "from odecofield import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
