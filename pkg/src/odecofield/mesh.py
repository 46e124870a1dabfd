"""Tetrahedral mesh container and the cotangent Laplacian."""

from __future__ import annotations

import logging
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import MeshError

logger = logging.getLogger(__name__)

# outward faces of a positively oriented tet (a, b, c, d); face k omits vertex k
TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
# the six edges and, for each, its opposite edge
TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
TET_OPPOSITE = np.array([[2, 3], [1, 3], [1, 2], [0, 3], [0, 2], [0, 1]])

COT_CLAMP = 20.0


def signed_volumes(vertices, tets):
    p = vertices[tets]
    return np.einsum("ij,ij->i", p[:, 1] - p[:, 0], np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0])) / 6.0


def tet_cotan_contributions(vertices, tets, clamp=COT_CLAMP):
    """Per-tet, per-edge terms ``l_op * cot(alpha_op) / 6``.

    Returns an array of shape (n_tets, 6) aligned with :data:`TET_EDGES`.
    The cotangent is clamped to ``[-clamp, clamp]`` so needle and sliver
    elements stay finite.
    """
    p = vertices[tets]
    i, j = TET_EDGES[:, 0], TET_EDGES[:, 1]
    k, l = TET_OPPOSITE[:, 0], TET_OPPOSITE[:, 1]
    pk = p[:, k]
    e = p[:, l] - pk
    elen = np.linalg.norm(e, axis=-1)
    ehat = e / np.maximum(elen, 1e-300)[..., None]
    u = p[:, i] - pk
    v = p[:, j] - pk
    u = u - np.einsum("...i,...i->...", u, ehat)[..., None] * ehat
    v = v - np.einsum("...i,...i->...", v, ehat)[..., None] * ehat
    dot = np.einsum("...i,...i->...", u, v)
    crs = np.linalg.norm(np.cross(u, v), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cot = np.where(crs > 0, dot / crs, np.sign(dot) * clamp)
    cot = np.clip(np.nan_to_num(cot, nan=0.0), -clamp, clamp)
    return elen * cot / 6.0


class TetMesh:
    """Immutable tetrahedral mesh.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
    tets : array_like of int, shape (m, 4)
        Zero-based vertex indices.  Negatively oriented tets are reordered.
    source : str, optional
        File name used in error messages.
    lines : array_like of int, optional
        Source line of every tet, for error messages.

    Attributes
    ----------
    vertices, tets : np.ndarray
    edges : np.ndarray, shape (n_edges, 2)
        Unique vertex pairs with ``edges[:, 0] < edges[:, 1]``.
    boundary_faces : np.ndarray, shape (n_faces, 3)
        Outward-oriented triangles belonging to exactly one tet.
    boundary_flags : np.ndarray of bool
    cotan_weights : np.ndarray, shape (n_edges,)
    lumped_mass : np.ndarray, shape (n,)
    """

    def __init__(self, vertices, tets, source=None, lines=None):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)", path=source)
        if len(tets) == 0:
            raise MeshError("mesh has no tetrahedra", path=source)
        bad = np.nonzero((tets < 0) | (tets >= len(vertices)))[0]
        if len(bad):
            t = bad[0]
            line = None if lines is None else lines[t]
            raise MeshError(
                f"tet {t} references vertex {tets[t].tolist()} outside [0, {len(vertices)})",
                path=source,
                line=line,
            )
        vol = signed_volumes(vertices, tets)
        scale = np.ptp(vertices, axis=0).max() if len(vertices) else 1.0
        tiny = 1e-14 * max(scale, 1e-300) ** 3
        degen = np.nonzero(np.abs(vol) <= tiny)[0]
        if len(degen):
            t = degen[0]
            line = None if lines is None else lines[t]
            raise MeshError(f"tet {t} has zero volume", path=source, line=line)
        neg = vol < 0
        if neg.any():
            tets[neg] = tets[neg][:, [0, 1, 3, 2]]
            vol = np.abs(vol)
        vertices.setflags(write=False)
        tets.setflags(write=False)
        self.vertices = vertices
        self.tets = tets
        self.volumes = vol
        self.source = source
        self._build_topology()
        self._build_weights()

    # -- construction -----------------------------------------------------

    def _build_topology(self):
        tets = self.tets
        faces = tets[:, TET_FACES].reshape(-1, 3)
        keys = np.sort(faces, axis=1)
        _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        over = counts > 2
        if over.any():
            raise MeshError(f"{int(over.sum())} faces shared by more than two tets", path=self.source)
        per_face = counts[inv]
        self.boundary_faces = np.ascontiguousarray(faces[per_face == 1])
        self._face_keys_inverse = inv
        self._face_counts = counts
        flags = np.zeros(len(self.vertices), dtype=bool)
        flags[self.boundary_faces.ravel()] = True
        self.boundary_flags = flags

        pairs = np.sort(tets[:, TET_EDGES].reshape(-1, 2), axis=1)
        edges, einv = np.unique(pairs, axis=0, return_inverse=True)
        self.edges = edges
        self._tet_edge_index = einv.ravel().reshape(-1, 6)

    def _build_weights(self):
        contrib = tet_cotan_contributions(self.vertices, self.tets)
        self.cotan_weights = np.bincount(
            self._tet_edge_index.ravel(), weights=contrib.ravel(), minlength=len(self.edges)
        )
        self.lumped_mass = np.bincount(
            self.tets.ravel(), weights=np.repeat(self.volumes / 4.0, 4), minlength=self.n_vertices
        )

    # -- basic properties ---------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_tets(self):
        return len(self.tets)

    @cached_property
    def edge_lengths(self):
        return np.linalg.norm(self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]], axis=1)

    @property
    def mean_edge_length(self):
        return float(self.edge_lengths.mean())

    @cached_property
    def laplacian(self):
        """Symmetric cotangent Laplacian ``L = D - W`` (csr, zero row sums)."""
        n = self.n_vertices
        i, j = self.edges[:, 0], self.edges[:, 1]
        w = self.cotan_weights
        W = sparse.coo_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()
        return (sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()

    @cached_property
    def adjacency(self):
        """Vertex adjacency as csr matrix with unit entries."""
        n = self.n_vertices
        i, j = self.edges[:, 0], self.edges[:, 1]
        ones = np.ones(2 * len(i))
        return sparse.coo_matrix((ones, (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()

    @cached_property
    def tet_neighbors(self):
        """(m, 4) array: tet across face k (the face omitting vertex k), or -1."""
        inv = self._face_keys_inverse
        m = self.n_tets
        owner = np.arange(4 * m) // 4
        order = np.argsort(inv, kind="stable")
        sorted_inv = inv[order]
        nb = -np.ones(4 * m, dtype=np.int64)
        same = sorted_inv[1:] == sorted_inv[:-1]
        a, b = order[:-1][same], order[1:][same]
        nb[a] = owner[b]
        nb[b] = owner[a]
        return nb.reshape(m, 4)

    @cached_property
    def vertex_tets(self):
        """csr matrix mapping vertex -> incident tets."""
        m = self.n_tets
        rows = self.tets.ravel()
        cols = np.repeat(np.arange(m), 4)
        return sparse.coo_matrix((np.ones(4 * m), (rows, cols)), shape=(self.n_vertices, m)).tocsr()

    def barycentric(self, tet, point):
        """Barycentric coordinates of ``point`` in ``tet``."""
        p = self.vertices[self.tets[tet]]
        T = (p[1:] - p[0]).T
        l123 = np.linalg.solve(T, np.asarray(point, dtype=np.float64) - p[0])
        return np.r_[1.0 - l123.sum(), l123]

    def __repr__(self):
        return f"TetMesh(n_vertices={self.n_vertices}, n_tets={self.n_tets}, n_boundary_faces={len(self.boundary_faces)})"
