"""Boundary surface analysis: normals, sharp features and principal curvatures."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .errors import MeshError

logger = logging.getLogger(__name__)

DEFAULT_FEATURE_ANGLE = 40.0


@dataclass(frozen=True)
class BoundaryData:
    """Per-vertex boundary information (rows of interior vertices are zero).

    Attributes
    ----------
    normals : (n, 3) array
        Angle-weighted unit normals on boundary vertices.
    boundary_vertices : (b,) int array
    face_normals : (f, 3) array
        Unit normals of ``mesh.boundary_faces``.
    principal_curvatures : (n, 2) array, optional
        ``(K_max, K_min)``; convex regions are positive w.r.t. the outward normal.
    curvature_dirs : (n, 2, 3) array, optional
        ``(mu, nu)``, the max and min principal directions.
    curvature_fallback : (n,) bool array, optional
        True where the quadric fit failed and curvature was set to zero.
    feature_edges : (k, 2) int array, optional
        Vertex pairs of sharp edges.
    feature_edge_ids : (k,) int array, optional
        Row indices of the feature edges in ``mesh.edges``.
    feature_tangents : (n, 3) array, optional
        Unit tangent on feature vertices, zero elsewhere.
    corners : (c,) int array, optional
    """

    normals: np.ndarray
    boundary_vertices: np.ndarray
    face_normals: np.ndarray
    principal_curvatures: np.ndarray | None = None
    curvature_dirs: np.ndarray | None = None
    curvature_fallback: np.ndarray | None = None
    feature_edges: np.ndarray | None = None
    feature_edge_ids: np.ndarray | None = None
    feature_tangents: np.ndarray | None = None
    corners: np.ndarray | None = None

    @property
    def feature_vertices(self):
        if self.feature_tangents is None:
            return np.zeros(0, dtype=np.int64)
        return np.nonzero(np.any(self.feature_tangents != 0, axis=1))[0]


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def boundary_edges(mesh):
    """Unique edges of the boundary surface and their incident faces.

    Returns
    -------
    edges : (e, 2) int array, sorted pairs
    faces : (e, 2) int array
        Indices into ``mesh.boundary_faces`` of the two faces on each edge.
    """
    F = mesh.boundary_faces
    pairs = np.sort(np.stack([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]], axis=1).reshape(-1, 2), axis=1)
    edges, inv, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    bad = counts != 2
    if bad.any():
        offenders = edges[bad][:10].tolist()
        raise MeshError(f"non-manifold boundary edges (face count != 2): {offenders}", path=mesh.source)
    order = np.argsort(inv, kind="stable")
    faces = (order // 3).reshape(-1, 2)
    return edges, faces


def build_boundary(mesh):
    """Boundary normals by angle-weighted averaging of incident face normals."""
    F = mesh.boundary_faces
    V = mesh.vertices
    p = V[F]
    fn = _unit(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]))
    normals = np.zeros_like(V)
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", _unit(a), _unit(b))
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        np.add.at(normals, F[:, k], ang[:, None] * fn)
    normals = _unit(normals)
    boundary_edges(mesh)  # manifold check
    bverts = np.nonzero(mesh.boundary_flags)[0]
    return BoundaryData(normals=normals, boundary_vertices=bverts, face_normals=fn)


def detect_features(mesh, boundary, dihedral_threshold_deg=DEFAULT_FEATURE_ANGLE, extra_corners=()):
    """Mark sharp boundary edges, per-vertex feature tangents and corners.

    An edge is sharp when the angle between its two face normals exceeds the
    threshold (equivalently the dihedral angle deviates from pi by that much).
    Vertices with three or more sharp edges, plus ``extra_corners``, are
    corners.  Tangents are oriented consistently along connected chains.
    """
    edges, faces = boundary_edges(mesh)
    fn = boundary.face_normals
    cosang = np.einsum("ij,ij->i", fn[faces[:, 0]], fn[faces[:, 1]])
    sharp = cosang < np.cos(np.deg2rad(dihedral_threshold_deg))
    fedges = edges[sharp]

    n = mesh.n_vertices
    V = mesh.vertices
    incident = [[] for _ in range(n)]
    for a, b in fedges:
        incident[a].append(b)
        incident[b].append(a)
    degree = np.array([len(x) for x in incident])
    corners = set(np.nonzero(degree >= 3)[0].tolist())
    corners.update(int(c) for c in extra_corners)

    tangents = np.zeros((n, 3))
    for v in np.nonzero(degree > 0)[0]:
        nbrs = sorted(incident[v])
        dirs = _unit(V[nbrs] - V[v])
        if len(nbrs) == 2 and v not in corners:
            t = dirs[0] - dirs[1]
        else:
            t = dirs[0]
        tangents[v] = t / np.linalg.norm(t)

    # sign consistency along chains (corners break chains)
    seen = np.zeros(n, dtype=bool)
    for start in np.nonzero(degree > 0)[0]:
        if seen[start]:
            continue
        seen[start] = True
        queue = deque([start])
        while queue:
            v = queue.popleft()
            if v in corners and v != start:
                continue
            for w in incident[v]:
                if seen[w]:
                    continue
                seen[w] = True
                if w not in corners and tangents[w] @ tangents[v] < 0:
                    tangents[w] = -tangents[w]
                queue.append(w)

    ekey = {(int(a), int(b)): k for k, (a, b) in enumerate(mesh.edges)}
    ids = np.array([ekey[(int(a), int(b))] for a, b in fedges], dtype=np.int64)
    return replace(
        boundary,
        feature_edges=fedges,
        feature_edge_ids=ids,
        feature_tangents=tangents,
        corners=np.array(sorted(corners), dtype=np.int64),
    )


def _surface_adjacency(mesh):
    F = mesh.boundary_faces
    n = mesh.n_vertices
    i = np.r_[F[:, 0], F[:, 1], F[:, 2]]
    j = np.r_[F[:, 1], F[:, 2], F[:, 0]]
    A = sparse.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n)).tocsr()
    A = ((A + A.T) > 0).astype(np.float64)
    return (A + sparse.identity(n, format="csr")).tocsr()


def _tangent_basis(n):
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = a - (a @ n) * n
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def _fit_quadric(p0, n, nbr_pts):
    """Principal curvatures and directions of a local height-field fit."""
    t1, t2 = _tangent_basis(n)
    d = nbr_pts - p0
    u, v, h = d @ t1, d @ t2, d @ n
    A = np.stack([u * u, u * v, v * v, u, v], axis=1)
    coef, *_ = np.linalg.lstsq(A, h, rcond=None)
    a, b, c, du, dv = coef
    W = np.sqrt(1.0 + du * du + dv * dv)
    I = np.array([[1.0 + du * du, du * dv], [du * dv, 1.0 + dv * dv]])
    II = np.array([[2 * a, b], [b, 2 * c]]) / W
    # Weingarten map w.r.t. the outward normal; flip so convex is positive
    S = -np.linalg.solve(I, II)
    k, vecs = np.linalg.eig(S)
    k, vecs = k.real, vecs.real
    i_max = int(np.argmax(k))
    xu = t1 + du * n
    xv = t2 + dv * n
    mu = vecs[0, i_max] * xu + vecs[1, i_max] * xv
    mu = mu - (mu @ n) * n
    norm = np.linalg.norm(mu)
    mu = t1 if norm < 1e-12 else mu / norm
    nu = np.cross(n, mu)
    return k.max(), k.min(), mu, nu


def _ring(A, v, depth, blocked):
    """Vertices within ``depth`` surface hops of ``v`` without passing through ``blocked``."""
    seen = {v}
    frontier = [v]
    for _ in range(depth):
        nxt = []
        for u in frontier:
            if u != v and blocked[u]:
                continue
            for w in A.indices[A.indptr[u] : A.indptr[u + 1]]:
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
    seen.discard(v)
    return np.fromiter(seen, dtype=np.int64)


def estimate_curvature(mesh, boundary, min_points=6):
    """Quadric-fit principal curvatures on boundary vertices.

    Uses the 2-ring of surface neighbours, widening to the 3-ring when
    fewer than ``min_points`` neighbours are available, and finally
    reporting zero curvature with ``curvature_fallback`` set.  Rings of
    smooth vertices do not extend past feature vertices, so a fit never
    spans a sharp edge.
    """
    n = mesh.n_vertices
    V = mesh.vertices
    A = _surface_adjacency(mesh)
    blocked = np.zeros(n, dtype=bool)
    if boundary.feature_tangents is not None:
        blocked[boundary.feature_vertices] = True
    K = np.zeros((n, 2))
    dirs = np.zeros((n, 2, 3))
    fallback = np.zeros(n, dtype=bool)
    for vtx in boundary.boundary_vertices:
        nrm = boundary.normals[vtx]
        result = None
        for depth in (2, 3):
            nb = _ring(A, vtx, depth, blocked)
            if len(nb) >= min_points:
                result = _fit_quadric(V[vtx], nrm, V[nb])
                break
        if result is None:
            fallback[vtx] = True
            t1, t2 = _tangent_basis(nrm)
            result = (0.0, 0.0, t1, t2)
        K[vtx] = result[:2]
        dirs[vtx, 0] = result[2]
        dirs[vtx, 1] = result[3]
    if fallback.any():
        logger.warning("curvature fit fell back to zero on %d vertices", int(fallback.sum()))
    return replace(boundary, principal_curvatures=K, curvature_dirs=dirs, curvature_fallback=fallback)


def analyze_boundary(mesh, feature_angle=DEFAULT_FEATURE_ANGLE, extra_corners=(), curvature=True):
    """Normals, features and (optionally) curvature in one call."""
    b = build_boundary(mesh)
    b = detect_features(mesh, b, feature_angle, extra_corners=extra_corners)
    if curvature:
        b = estimate_curvature(mesh, b)
    return b
