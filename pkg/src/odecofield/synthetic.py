"""Small analytic meshes and fields for tests, benchmarks and demos."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.spatial import Delaunay

from .mesh import TetMesh


def single_tet():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    return TetMesh(v, [[0, 1, 2, 3]])


def regular_tet():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) / np.sqrt(8.0)
    return TetMesh(v, [[0, 1, 2, 3]])


def cube5():
    """Unit cube split into five tets (four corners and a central one)."""
    v = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=float)
    tets = [[1, 2, 4, 7], [0, 1, 2, 4], [3, 1, 2, 7], [5, 1, 4, 7], [6, 2, 4, 7]]
    return TetMesh(v, tets)


def box_grid(n=(4, 4, 4), lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)):
    """Structured box with six tets per cell (Kuhn/Freudenthal split).

    All dihedral angles are at most 90 degrees, so cotangent weights are
    non-negative.
    """
    nx, ny, nz = (n, n, n) if np.isscalar(n) else n
    xs = np.linspace(lo[0], hi[0], nx + 1)
    ys = np.linspace(lo[1], hi[1], ny + 1)
    zs = np.linspace(lo[2], hi[2], nz + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i, j, k in itertools.product(range(nx), range(ny), range(nz)):
        for perm in itertools.permutations(range(3)):
            cur = [i, j, k]
            path = [vid(*cur)]
            for ax in perm:
                cur[ax] += 1
                path.append(vid(*cur))
            tets.append(path)
    return TetMesh(verts, tets)


def twisted_bar(n=(8, 3, 3), length=4.0, twist=np.pi / 2):
    """Square bar along x whose cross-section rotates by ``twist``."""
    base = box_grid(n, lo=(0.0, -0.5, -0.5), hi=(length, 0.5, 0.5))
    v = base.vertices.copy()
    a = twist * v[:, 0] / length
    c, s = np.cos(a), np.sin(a)
    y, z = v[:, 1].copy(), v[:, 2].copy()
    v[:, 1] = c * y - s * z
    v[:, 2] = s * y + c * z
    return TetMesh(v, base.tets)


def icosphere(level=2):
    """Unit icosphere surface: (vertices, triangles)."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return np.array(verts), np.array(faces, dtype=np.int64)


def _extrude_layers(layer_pts, tris, n_layers_pts):
    """Stack copies of a triangulated layer and split each prism into 3 tets.

    ``layer_pts`` is a list of (k, 3) point arrays, one per layer, all with
    the same triangulation ``tris``.  The split uses sorted global indices so
    neighbouring prisms agree on quad diagonals.
    """
    k = n_layers_pts
    verts = np.concatenate(layer_pts)
    tets = []
    for layer in range(len(layer_pts) - 1):
        off0, off1 = layer * k, (layer + 1) * k
        for tri in tris:
            a, b, c = sorted(int(x) for x in tri)
            A, Bv, C = a + off0, b + off0, c + off0
            A2, B2, C2 = a + off1, b + off1, c + off1
            tets += [[A, Bv, C, A2], [Bv, C, A2, B2], [C, A2, B2, C2]]
    return verts, tets


def ball(level=2, shells=3, radius=1.0):
    """Tet mesh of a ball whose boundary is exactly an icosphere."""
    sv, sf = icosphere(level)
    radii = radius * np.arange(1, shells + 1) / shells
    layers = [sv * r for r in radii]
    verts, tets = _extrude_layers(layers, sf, len(sv))
    center = len(verts)
    verts = np.vstack([verts, np.zeros((1, 3))])
    tets += [[center, int(a), int(b), int(c)] for a, b, c in sf]
    return TetMesh(verts, tets)


def disk_points(rings=4, radius=1.0):
    pts = [np.zeros(2)]
    for k in range(1, rings + 1):
        m = 6 * k
        ang = np.arange(m) * 2 * np.pi / m + (0.5 * np.pi / m if k % 2 else 0.0)
        r = radius * k / rings
        pts.extend(np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1))
    return np.array(pts)


def cylinder(radius=1.0, height=2.0, rings=4, layers=6):
    """Solid cylinder around the z axis, z in [0, height]."""
    p2 = disk_points(rings, radius)
    tris = Delaunay(p2).simplices
    zs = np.linspace(0.0, height, layers + 1)
    layer_pts = [np.column_stack([p2, np.full(len(p2), z)]) for z in zs]
    verts, tets = _extrude_layers(layer_pts, tris, len(p2))
    return TetMesh(verts, tets)


def l_bracket(n=2, depth=1.0, layers=2):
    """L-shaped prism: unit square minus its upper-right quadrant, extruded in z."""
    h = 1.0 / (2 * n)
    pts = {}
    coords = []
    tris = []

    def pid(i, j):
        if (i, j) not in pts:
            pts[(i, j)] = len(coords)
            coords.append([i * h, j * h])
        return pts[(i, j)]

    for i in range(2 * n):
        for j in range(2 * n):
            if i >= n and j >= n:
                continue
            a, b, c, d = pid(i, j), pid(i + 1, j), pid(i + 1, j + 1), pid(i, j + 1)
            tris += [[a, b, c], [a, c, d]]
    p2 = np.array(coords)
    zs = np.linspace(0.0, depth, layers + 1)
    layer_pts = [np.column_stack([p2, np.full(len(p2), z)]) for z in zs]
    verts, tets = _extrude_layers(layer_pts, np.array(tris), len(p2))
    return TetMesh(verts, tets)


def torus_point_frame(R, r, u, v):
    """Position, outward normal and unit principal directions on a torus.

    Returns ``(p, n, e_u, e_v, k_u, k_v)`` where ``e_u`` follows the parallel
    (curvature ``k_u``) and ``e_v`` the meridian (curvature ``k_v = 1/r``).
    """
    cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
    p = np.array([(R + r * cv) * cu, (R + r * cv) * su, r * sv])
    n = np.array([cv * cu, cv * su, sv])
    e_u = np.array([-su, cu, 0.0])
    e_v = np.array([-sv * cu, -sv * su, cv])
    return p, n, e_u, e_v, cv / (R + r * cv), 1.0 / r
