"""Pure-NumPy reference kernels (fallback for the compiled extension).

Both implementations share one contract:

``realize(A, theta, lam, B, Qx, Qy) -> F``
    ``F[i] = A[i] @ exp(tx Lx) exp(ty Ly) exp(tz Lz) @ B @ lam[i]``
``realize_vjp(A, theta, lam, B, Qx, Qy, G) -> (g_theta, g_lam)``
    Vector-Jacobian product of ``realize`` with cotangent ``G``.
``dirichlet(edges, w, F) -> (E, E_vertex, G)``
    ``E = sum_e w_e |F_i - F_j|^2``, the half-split per-vertex energies and
    ``dE/dF``.

with ``Lx = Qx Lz Qx^T`` and ``Ly = Qy Lz Qy^T``.
"""

import numpy as np

from .algebra import ABS_ORDERS, PARTNER, ZSIGN

_ZS_M = ZSIGN * ABS_ORDERS


def _ez(v, angle):
    """exp(angle Lz) applied row-wise; ``angle`` has shape (N,)."""
    ma = angle[:, None] * ABS_ORDERS
    return np.cos(ma) * v + ZSIGN * np.sin(ma) * v[:, PARTNER]


def _lz(v):
    return _ZS_M * v[:, PARTNER]


def _conj(v, angle, Q):
    # Q exp(angle Lz) Q^T v
    return _ez(v @ Q, angle) @ Q.T


def realize(A, theta, lam, B, Qx, Qy):
    g = lam @ B.T
    h3 = _ez(g, theta[:, 2])
    h2 = _conj(h3, theta[:, 1], Qy)
    h1 = _conj(h2, theta[:, 0], Qx)
    return np.einsum("nij,nj->ni", A, h1)


def realize_vjp(A, theta, lam, B, Qx, Qy, G):
    g = lam @ B.T
    h3 = _ez(g, theta[:, 2])
    h2 = _conj(h3, theta[:, 1], Qy)
    h1 = _conj(h2, theta[:, 0], Qx)
    gt = np.empty_like(theta)
    u = np.einsum("nji,nj->ni", A, G)
    gt[:, 0] = np.einsum("ni,ni->n", u, _lz(h1 @ Qx) @ Qx.T)
    u = _conj(u, -theta[:, 0], Qx)
    gt[:, 1] = np.einsum("ni,ni->n", u, _lz(h2 @ Qy) @ Qy.T)
    u = _conj(u, -theta[:, 1], Qy)
    gt[:, 2] = np.einsum("ni,ni->n", u, _lz(h3))
    u = _ez(u, -theta[:, 2])
    return gt, u @ B


def dirichlet(edges, w, F):
    i, j = edges[:, 0], edges[:, 1]
    d = F[i] - F[j]
    e = w * np.einsum("ij,ij->i", d, d)
    n = len(F)
    Ev = 0.5 * (np.bincount(i, weights=e, minlength=n) + np.bincount(j, weights=e, minlength=n))
    wd = (2.0 * w[:, None] * d).ravel()
    k = F.shape[1]
    cols = np.arange(k)
    G = np.bincount((i[:, None] * k + cols).ravel(), weights=wd, minlength=n * k)
    G -= np.bincount((j[:, None] * k + cols).ravel(), weights=wd, minlength=n * k)
    return float(e.sum()), Ev, G.reshape(n, k)
