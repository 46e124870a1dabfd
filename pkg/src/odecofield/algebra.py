"""Spherical-harmonic algebra for degree-4 odeco tensors.

A degree-4 homogeneous polynomial restricted to the unit sphere lives in the
span of real spherical harmonics of bands 0, 2 and 4, so every odeco tensor is
stored as a 15-vector of coefficients in that basis.  Coefficients are ordered
band by band, and within a band by order ``m = -l, ..., l``.

Conventions
-----------
* Real, orthonormal harmonics without the Condon-Shortley phase::

      Y_l^m  = sqrt(2) N_lm P_l^m(cos t) cos(m p)     m > 0
      Y_l^0  =         N_l0 P_l^0(cos t)
      Y_l^-m = sqrt(2) N_lm P_l^m(cos t) sin(m p)     m > 0

* A coefficient rotation ``D(R)`` acting on ``c`` represents the rotated
  polynomial ``d -> f(R^T d)``.  ``D`` is a group homomorphism, so the
  generators satisfy ``[Lx, Ly] = +Lz`` (and cyclic).
* Euler angles ``(tx, ty, tz)`` compose as ``Rx(tx) @ Ry(ty) @ Rz(tz)`` both in
  3-space and in coefficient space.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import expm
from scipy.special import factorial, lpmv

logger = logging.getLogger(__name__)

BANDS = (0, 2, 4)
BAND_SIZES = tuple(2 * l + 1 for l in BANDS)
BAND_OFFSETS = (0, 1, 6)
BAND_SLICES = tuple(slice(o, o + s) for o, s in zip(BAND_OFFSETS, BAND_SIZES))
NCOEFF = 15

# Per-coefficient order m, its |m|, the index of the partner (l, -m) and the
# sign of the sine term in exp(t Lz).
ORDERS = np.array([m for l in BANDS for m in range(-l, l + 1)], dtype=np.int64)
ABS_ORDERS = np.abs(ORDERS)
PARTNER = np.array(
    [o + l - m for l, o in zip(BANDS, BAND_OFFSETS) for m in range(-l, l + 1)],
    dtype=np.int64,
)
ZSIGN = -np.sign(ORDERS).astype(np.float64)

_CACHE_MAGIC = b"ODECOSH\x00"
_CACHE_VERSION = 1


# ---------------------------------------------------------------------------
# basis evaluation and quadrature


def real_sh(dirs):
    """Evaluate the 15 real harmonics at unit directions.

    Parameters
    ----------
    dirs : array_like, shape (..., 3)
        Unit vectors.

    Returns
    -------
    np.ndarray, shape (..., 15)
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    shape = dirs.shape[:-1]
    d = dirs.reshape(-1, 3)
    cos_t = np.clip(d[:, 2], -1.0, 1.0)
    phi = np.arctan2(d[:, 1], d[:, 0])
    out = np.empty((d.shape[0], NCOEFF))
    col = 0
    for l in BANDS:
        for m in range(-l, l + 1):
            am = abs(m)
            norm = np.sqrt((2 * l + 1) / (4 * np.pi) * factorial(l - am) / factorial(l + am))
            # scipy includes the Condon-Shortley phase; undo it
            leg = lpmv(am, l, cos_t) * (-1.0) ** am
            if m > 0:
                out[:, col] = np.sqrt(2.0) * norm * leg * np.cos(am * phi)
            elif m < 0:
                out[:, col] = np.sqrt(2.0) * norm * leg * np.sin(am * phi)
            else:
                out[:, col] = norm * leg
            col += 1
    return out.reshape(shape + (NCOEFF,))


def sphere_quadrature(n_theta=64, n_phi=128):
    """Gauss-Legendre x trapezoid product rule on the unit sphere.

    The default 8192-point rule integrates spherical polynomials of degree
    well beyond 8 exactly up to round-off.
    """
    ct, wt = leggauss(n_theta)
    phi = np.arange(n_phi) * (2.0 * np.pi / n_phi)
    cc, pp = np.meshgrid(ct, phi, indexing="ij")
    st = np.sqrt(1.0 - cc**2)
    pts = np.stack([st * np.cos(pp), st * np.sin(pp), cc], axis=-1).reshape(-1, 3)
    weights = np.repeat(wt, n_phi) * (2.0 * np.pi / n_phi)
    return pts, weights


# ---------------------------------------------------------------------------
# 3x3 rotations and Euler angles


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(theta):
    """3x3 rotation ``Rx(tx) Ry(ty) Rz(tz)``."""
    tx, ty, tz = theta
    return rot_x(tx) @ rot_y(ty) @ rot_z(tz)


def euler_to_matrices(theta):
    """Batched :func:`euler_to_matrix` for ``theta`` of shape (n, 3)."""
    theta = np.asarray(theta, dtype=np.float64)
    cx, sx = np.cos(theta[:, 0]), np.sin(theta[:, 0])
    cy, sy = np.cos(theta[:, 1]), np.sin(theta[:, 1])
    cz, sz = np.cos(theta[:, 2]), np.sin(theta[:, 2])
    R = np.empty((theta.shape[0], 3, 3))
    R[:, 0, 0] = cy * cz
    R[:, 0, 1] = -cy * sz
    R[:, 0, 2] = sy
    R[:, 1, 0] = cx * sz + sx * sy * cz
    R[:, 1, 1] = cx * cz - sx * sy * sz
    R[:, 1, 2] = -sx * cy
    R[:, 2, 0] = sx * sz - cx * sy * cz
    R[:, 2, 1] = sx * cz + cx * sy * sz
    R[:, 2, 2] = cx * cy
    return R


def matrix_to_euler(R):
    """Inverse of :func:`euler_to_matrix` for a proper rotation.

    At gimbal lock (``|R[0, 2]| = 1``) the z angle is set to zero.
    """
    R = np.asarray(R, dtype=np.float64)
    sy = np.clip(R[0, 2], -1.0, 1.0)
    ty = np.arcsin(sy)
    if abs(sy) < 1.0 - 1e-12:
        tz = np.arctan2(-R[0, 1], R[0, 0])
        tx = np.arctan2(-R[1, 2], R[2, 2])
    else:
        tz = 0.0
        tx = np.arctan2(R[2, 1], R[1, 1])
    return np.array([tx, ty, tz])


def axis_alignment_matrix(n):
    """Minimal-angle 3x3 rotation taking +z to the unit vector ``n``.

    When ``n`` is (nearly) ``-z`` the axis is undefined and the fixed
    half-turn about x is used.
    """
    n = np.asarray(n, dtype=np.float64)
    c = n[2]
    if c < -1.0 + 1e-9:
        return rot_x(np.pi)
    axis = np.array([-n[1], n[0], 0.0])  # z cross n
    s = np.linalg.norm(axis)
    if s < 1e-15:
        return np.eye(3)
    k = axis / s
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


# ---------------------------------------------------------------------------
# operator tables


def _z_generator():
    Lz = np.zeros((NCOEFF, NCOEFF))
    for l, o in zip(BANDS, BAND_OFFSETS):
        for m in range(1, l + 1):
            Lz[o + l - m, o + l + m] = m
            Lz[o + l + m, o + l - m] = -m
    return Lz


def fit_band_rotation(R, points=None):
    """Coefficient rotation for a 3x3 rotation by exact least-squares fit.

    Solves ``Y(R^T p) = Y(p) D`` band by band on a point set; since both
    sides are exact harmonic evaluations the fit reproduces ``D`` to
    round-off.  Used to build the fixed quarter-turn conjugators and as an
    independent oracle in tests.
    """
    if points is None:
        points, _ = sphere_quadrature(12, 24)
    Y0 = real_sh(points)
    Y1 = real_sh(points @ np.asarray(R, dtype=np.float64))
    D = np.zeros((NCOEFF, NCOEFF))
    for sl in BAND_SLICES:
        D[sl, sl] = np.linalg.lstsq(Y0[:, sl], Y1[:, sl], rcond=None)[0]
    return D


@dataclass(frozen=True)
class AngularOps:
    """Antisymmetric generators of coefficient rotations about x, y and z."""

    Lx: np.ndarray
    Ly: np.ndarray
    Lz: np.ndarray
    #: sign c in ``[Lx, Ly] = c Lz``
    commutator_sign: int = 1


@dataclass(frozen=True)
class _Tables:
    B: np.ndarray
    Lx: np.ndarray
    Ly: np.ndarray
    Lz: np.ndarray
    Qx: np.ndarray  # D(Ry(pi/2)): conjugates Lz into Lx
    Qy: np.ndarray  # D(Rx(-pi/2)): conjugates Lz into Ly


def _build_tables():
    pts, w = sphere_quadrature()
    Y = real_sh(pts)
    B = np.stack([Y.T @ (w * pts[:, k] ** 4) for k in range(3)], axis=1)
    Lz = _z_generator()
    Qx = fit_band_rotation(rot_y(np.pi / 2))
    Qy = fit_band_rotation(rot_x(-np.pi / 2))
    Lx = Qx @ Lz @ Qx.T
    Ly = Qy @ Lz @ Qy.T
    Lx = 0.5 * (Lx - Lx.T)
    Ly = 0.5 * (Ly - Ly.T)
    return _Tables(B=B, Lx=Lx, Ly=Ly, Lz=Lz, Qx=Qx, Qy=Qy)


def cache_path():
    """Location of the cached operator file.

    Overridable with ``ODECOFIELD_CACHE_DIR``.
    """
    root = os.environ.get("ODECOFIELD_CACHE_DIR")
    if root is None:
        root = Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "odecofield"
    return Path(root) / f"sh_tables_v{_CACHE_VERSION}.bin"


def _write_tables(path, tables):
    arrays = [tables.B, tables.Lx, tables.Ly, tables.Lz, tables.Qx, tables.Qy]
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<II", _CACHE_VERSION, len(arrays)))
        for a in arrays:
            fh.write(struct.pack("<II", *a.shape))
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    os.replace(tmp, path)


def _read_tables(path):
    data = Path(path).read_bytes()
    if data[:8] != _CACHE_MAGIC:
        raise ValueError("bad magic")
    version, count = struct.unpack_from("<II", data, 8)
    if version != _CACHE_VERSION or count != 6:
        raise ValueError(f"unsupported cache version {version}")
    pos = 16
    arrays = []
    for _ in range(count):
        r, c = struct.unpack_from("<II", data, pos)
        pos += 8
        a = np.frombuffer(data, dtype="<f8", count=r * c, offset=pos).reshape(r, c)
        pos += 8 * r * c
        arrays.append(a.astype(np.float64))
    if pos != len(data):
        raise ValueError("trailing bytes")
    return _Tables(*arrays)


@lru_cache(maxsize=None)
def _tables():
    path = cache_path()
    try:
        t = _read_tables(path)
        if t.B.shape == (NCOEFF, 3):
            return t
    except (OSError, ValueError, struct.error) as exc:
        logger.debug("rebuilding operator cache (%s)", exc)
    t = _build_tables()
    try:
        _write_tables(path, t)
    except OSError as exc:  # read-only home etc.
        logger.warning("could not write operator cache %s: %s", path, exc)
    return t


def angular_ops():
    """Return the generators ``Lx, Ly, Lz`` (15x15, block diagonal)."""
    t = _tables()
    return AngularOps(Lx=t.Lx, Ly=t.Ly, Lz=t.Lz)


def stretch_basis():
    """The 15x3 matrix ``B`` with ``B @ lam`` representing
    ``lam_x x^4 + lam_y y^4 + lam_z z^4``."""
    return _tables().B


def conjugators():
    """Fixed quarter-turn coefficient rotations ``(Qx, Qy)`` with
    ``Lx = Qx Lz Qx^T`` and ``Ly = Qy Lz Qy^T``."""
    t = _tables()
    return t.Qx, t.Qy


# ---------------------------------------------------------------------------
# rotation operators


def z_rotation_operator(angle):
    """Closed form of ``exp(angle * Lz)``."""
    D = np.zeros((NCOEFF, NCOEFF))
    c = np.cos(ABS_ORDERS * angle)
    s = ZSIGN * np.sin(ABS_ORDERS * angle)
    idx = np.arange(NCOEFF)
    D[idx, idx] = c
    nz = ORDERS != 0
    D[idx[nz], PARTNER[nz]] = s[nz]
    return D


def _block_expm(L, angle):
    out = np.zeros((NCOEFF, NCOEFF))
    out[0, 0] = 1.0
    for sl in BAND_SLICES[1:]:
        out[sl, sl] = expm(angle * L[sl, sl])
    return out


def rotation_operator(theta):
    """Coefficient rotation ``exp(tx Lx) exp(ty Ly) exp(tz Lz)``.

    Each factor is a dense matrix exponential of one band block, so the
    product is orthogonal and exactly zero outside the (1, 5, 9) blocks.
    """
    ops = angular_ops()
    tx, ty, tz = (float(v) for v in theta)
    return _block_expm(ops.Lx, tx) @ _block_expm(ops.Ly, ty) @ _block_expm(ops.Lz, tz)


def rotation_operator_from_matrix(R):
    """Coefficient rotation representing the 3x3 rotation ``R``."""
    return rotation_operator(matrix_to_euler(R))


def canonical_tensor(lam):
    """Axis-aligned odeco tensor ``B @ lam`` (negative entries allowed)."""
    return stretch_basis() @ np.asarray(lam, dtype=np.float64)


def _check_unit(n, tol=1e-8):
    n = np.asarray(n, dtype=np.float64)
    if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > tol:
        raise ValueError(f"expected a unit 3-vector, got {n!r}")
    return n


def normal_rotation(n):
    """Fixed coefficient rotation sending the canonical z lobe to ``n``."""
    n = _check_unit(n)
    return rotation_operator_from_matrix(axis_alignment_matrix(n))


def boundary_tensor(n, theta_z, lam):
    """Normal-aligned tensor ``R_n exp(theta_z Lz) B lam``."""
    return normal_rotation(n) @ (z_rotation_operator(theta_z) @ canonical_tensor(lam))


def interior_tensor(theta, lam):
    """Freely rotated tensor ``exp(tx Lx) exp(ty Ly) exp(tz Lz) B lam``."""
    return rotation_operator(theta) @ canonical_tensor(lam)


def evaluate_polynomial(f, dirs):
    """Value of the polynomial with coefficients ``f`` at unit ``dirs``."""
    return real_sh(dirs) @ np.asarray(f, dtype=np.float64)


# ---------------------------------------------------------------------------
# symmetric matrices and glyphs


def _closest_frame(U, ref_cols):
    """Orthonormal basis of span(U) closest to the given reference columns."""
    M = U @ (U.T @ ref_cols)
    a, s, bt = np.linalg.svd(M, full_matrices=False)
    if s.min() < 1e-6:
        return U
    return a @ bt


def from_symmetric_matrix(S, reference=None, tol=1e-9, degenerate_tol=1e-10):
    """Decompose a symmetric 3x3 matrix into Euler angles and ratios.

    Eigenvalues are sorted in descending order and returned as ``lam``; the
    eigenvector matrix is made right-handed and converted to Euler angles so
    that ``euler_to_matrix(theta) @ diag(lam) @ euler_to_matrix(theta).T``
    reproduces ``S``.

    Within a repeated eigenvalue the basis closest to ``reference`` (a 3x3
    rotation, default identity) is chosen, which keeps initial frames
    continuous when the previous vertex's frame is passed in.
    """
    S = np.asarray(S, dtype=np.float64)
    if np.abs(S - S.T).max() > tol * max(1.0, np.abs(S).max()):
        raise ValueError("matrix is not symmetric")
    S = 0.5 * (S + S.T)
    ref = np.eye(3) if reference is None else np.asarray(reference, dtype=np.float64)
    w, V = np.linalg.eigh(S)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    scale = max(1.0, np.abs(w).max())
    groups = []
    start = 0
    for k in range(1, 4):
        if k == 3 or abs(w[k] - w[k - 1]) > degenerate_tol * scale:
            groups.append(list(range(start, k)))
            start = k
    for g in groups:
        if len(g) > 1:
            V[:, g] = _closest_frame(V[:, g], ref[:, g])
            w[g] = w[g].mean()
        else:
            k = g[0]
            if V[:, k] @ ref[:, k] < 0:
                V[:, k] = -V[:, k]
    if np.linalg.det(V) < 0:
        V[:, 2] = -V[:, 2]
    return matrix_to_euler(V), w


def frame_matrix(R3, lam):
    """Symmetric 'glyph' matrix ``R3 diag(lam) R3^T``."""
    R3 = np.asarray(R3, dtype=np.float64)
    return (R3 * np.asarray(lam, dtype=np.float64)) @ R3.T


def glyph_frame(theta, lam, axis_rotation=None):
    """Glyph axes as the columns of ``A @ R(theta)`` scaled by ``lam``.

    ``axis_rotation`` is the fixed 3x3 alignment of a boundary, feature or
    corner vertex (identity for interior vertices).
    """
    R3 = euler_to_matrix(theta)
    if axis_rotation is not None:
        R3 = np.asarray(axis_rotation, dtype=np.float64) @ R3
    return R3 * np.asarray(lam, dtype=np.float64)
