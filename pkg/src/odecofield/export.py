"""Field archives, glyph geometry and integral curves."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import io
from .energy import FrameField, Objective, make_frames, realize
from .errors import InputError

logger = logging.getLogger(__name__)

ARCHIVE_TAG = "odecofield-archive v1"


# ---------------------------------------------------------------------------
# archive


@dataclass
class FieldArchive:
    """A mesh with its optimized frames and the guidance they were built for."""

    mesh: object
    frames: FrameField
    targets: np.ndarray | None = None
    mode: str = "design"
    weight: float = 50.0
    f_in: np.ndarray | None = None

    def coefficients(self):
        return realize(self.frames)

    def glyph_matrices(self):
        return self.frames.glyph_matrices()

    def objective(self):
        return Objective(self.mesh, self.frames, self.mode, self.weight, targets=self.targets, f_in=self.f_in)

    def breakdown(self):
        return self.objective().breakdown()

    def save(self, path):
        fr = self.frames
        data = {
            "theta": fr.theta,
            "lambda": fr.lam,
            "vertex_class": fr.vclass.astype(np.float64),
            "axis_rotation": fr.axis3,
            "free_mask": fr.free.astype(np.float64),
            "coefficients": self.coefficients(),
            "glyph": self.glyph_matrices(),
            "vertex_energy": self.breakdown().E_vertex,
        }
        if self.targets is not None:
            data["targets"] = self.targets
        if self.f_in is not None:
            data["reference"] = self.f_in
        title = f"{ARCHIVE_TAG} mode={self.mode} weight={self.weight!r}"
        io.write_vtk(path, self.mesh, data, title=title)

    @classmethod
    def load(cls, path):
        from .mesh import TetMesh

        points, tets, pd, lines = io.read_vtk(path)
        with open(path) as fh:
            fh.readline()
            title = fh.readline().strip()
        if not title.startswith(ARCHIVE_TAG):
            raise InputError("not a field archive", path, 2)
        meta = dict(re.findall(r"(\w+)=(\S+)", title))
        for key in ("theta", "lambda", "vertex_class", "axis_rotation", "free_mask"):
            if key not in pd:
                raise InputError(f"archive lacks point array {key!r}", path)
        mesh = TetMesh(points, tets, source=str(path), lines=lines)
        vclass = np.rint(pd["vertex_class"]).astype(np.int64)
        free = pd["free_mask"].reshape(-1, 6) > 0.5
        frames = make_frames(vclass, theta=pd["theta"], lam=pd["lambda"], axis3=pd["axis_rotation"],
                             lambda_free=free[:, 3:])
        frames.free = free
        return cls(mesh=mesh, frames=frames, targets=pd.get("targets"), mode=meta.get("mode", "design"),
                   weight=float(meta.get("weight", 50.0)),
                   f_in=None if "reference" not in pd else pd["reference"].reshape(-1, 15))


# ---------------------------------------------------------------------------
# glyphs

_CUBE_CORNERS = np.array([[s0, s1, s2] for s0 in (-1, 1) for s1 in (-1, 1) for s2 in (-1, 1)], dtype=float)
_CUBE_FACES = np.array([[0, 1, 3, 2], [4, 6, 7, 5], [0, 4, 5, 1], [2, 3, 7, 6], [0, 2, 6, 4], [1, 5, 7, 3]])


def _sphere(n_lat=8, n_lon=12):
    pts = [[0.0, 0.0, -1.0]]
    for i in range(1, n_lat):
        t = np.pi * i / n_lat - np.pi / 2
        for j in range(n_lon):
            p = 2 * np.pi * j / n_lon
            pts.append([np.cos(t) * np.cos(p), np.cos(t) * np.sin(p), np.sin(t)])
    pts.append([0.0, 0.0, 1.0])
    faces = []
    ring = lambda i, j: 1 + (i - 1) * n_lon + j % n_lon  # noqa: E731
    for j in range(n_lon):
        faces.append([0, ring(1, j + 1), ring(1, j)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            faces.append([ring(i, j), ring(i, j + 1), ring(i + 1, j + 1), ring(i + 1, j)])
    top = len(pts) - 1
    for j in range(n_lon):
        faces.append([ring(n_lat - 1, j), ring(n_lat - 1, j + 1), top])
    return np.array(pts), faces


def glyph_geometry(centers, axes, style="cuboid"):
    """Glyph primitives for per-glyph axis matrices (columns are semi-axes)."""
    if style == "cuboid":
        unit, faces = _CUBE_CORNERS, [list(f) for f in _CUBE_FACES]
    elif style == "ellipsoid":
        unit, faces = _sphere()
    else:
        raise ValueError(f"unknown glyph style {style!r}")
    verts, out_faces = [], []
    for k, (c, A) in enumerate(zip(centers, axes)):
        verts.append(c + unit @ A.T)
        off = k * len(unit)
        out_faces.extend([[i + off for i in f] for f in faces])
    verts = np.concatenate(verts) if verts else np.zeros((0, 3))
    return verts, out_faces


def export_glyphs(archive, path=None, subsample=1, style="cuboid", size=None):
    """One oriented, scaled primitive per selected vertex.

    ``subsample`` is a stride or an explicit index array.  Each glyph's
    semi-axes are the frame axes scaled by ``lam / max(lam) * size`` (default
    size: 0.4 mean edge lengths), so ratios are kept and the longest
    semi-axis is the same everywhere.
    """
    mesh, frames = archive.mesh, archive.frames
    idx = np.arange(0, mesh.n_vertices, int(subsample)) if np.isscalar(subsample) else np.asarray(subsample)
    size = 0.4 * mesh.mean_edge_length if size is None else float(size)
    R = frames.rotations()[idx]
    lam = np.abs(frames.lam[idx])
    scale = lam / np.maximum(lam.max(axis=1, keepdims=True), 1e-300) * size
    axes = R * scale[:, None, :]
    verts, faces = glyph_geometry(mesh.vertices[idx], axes, style)
    if path is not None:
        io.write_obj(path, verts, faces)
    return verts, faces, idx


# ---------------------------------------------------------------------------
# integral curves


@dataclass
class CurveSet:
    polylines: list = field(default_factory=list)
    seeds: np.ndarray | None = None
    reasons: list = field(default_factory=list)

    def save_obj(self, path):
        verts, lines, off = [], [], 0
        for pl in self.polylines:
            verts.append(pl)
            lines.append(list(range(off, off + len(pl))))
            off += len(pl)
        v = np.concatenate(verts) if verts else np.zeros((0, 3))
        io.write_obj(path, v, lines=lines)


class TetLocator:
    """Point location in a tet mesh by adjacency walking."""

    def __init__(self, mesh, tol=1e-9):
        self.mesh = mesh
        self.tol = tol
        V = mesh.vertices
        T = mesh.tets
        self.v0 = V[T[:, 0]]
        M = np.stack([V[T[:, 1]] - self.v0, V[T[:, 2]] - self.v0, V[T[:, 3]] - self.v0], axis=2)
        self.inv = np.linalg.inv(M)
        self.nbr = mesh.tet_neighbors
        self.tree = cKDTree(V[T].mean(axis=1))

    def bary(self, t, p):
        b = self.inv[t] @ (p - self.v0[t])
        return np.r_[1.0 - b.sum(), b]

    def locate(self, p, start=None, max_walk=500):
        """(tet, barycentric) containing ``p`` or (-1, None)."""
        t = start if start is not None and start >= 0 else int(self.tree.query(p)[1])
        for _ in range(max_walk):
            b = self.bary(t, p)
            k = int(np.argmin(b))
            if b[k] >= -self.tol:
                return t, b
            nt = self.nbr[t, k]
            if nt < 0:
                break
            t = int(nt)
        # walk left the domain or cycled; scan nearby tets
        _, cand = self.tree.query(p, k=min(32, self.mesh.n_tets))
        for t in np.atleast_1d(cand):
            b = self.bary(int(t), p)
            if b.min() >= -self.tol:
                return int(t), b
        return -1, None


def _major(M, prev, gap_tol):
    w, V = np.linalg.eigh(M)
    scale = max(abs(w[2]), 1e-300)
    if (w[2] - w[1]) < gap_tol * scale:
        return None
    v = V[:, 2]
    if prev is not None and v @ prev < 0:
        v = -v
    return v


def sample_seeds(mesh, n_seeds, seed=0):
    """Points drawn uniformly by volume; seed ``k`` has its own RNG stream."""
    p = mesh.volumes / mesh.volumes.sum()
    pts = np.empty((n_seeds, 3))
    for k in range(n_seeds):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), k])))
        t = rng.choice(mesh.n_tets, p=p)
        pts[k] = rng.dirichlet(np.ones(4)) @ mesh.vertices[mesh.tets[t]]
    return pts


def trace_integral_curves(archive, n_seeds=50, step=None, max_steps=500, seed=0, gap_tol=1e-6, seeds=None,
                          workers=1):
    """Integral curves of an archived field's major lobes (see :func:`trace_field`)."""
    return trace_field(archive.mesh, archive.glyph_matrices(), n_seeds=n_seeds, step=step, max_steps=max_steps,
                       seed=seed, gap_tol=gap_tol, seeds=seeds, workers=workers)


def trace_field(mesh, matrices, n_seeds=50, step=None, max_steps=500, seed=0, gap_tol=1e-6, seeds=None,
                workers=1):
    """Streamlines of the major-eigenvector field of per-vertex 3x3 tensors.

    Matrices are interpolated barycentrically inside each tet and
    diagonalized at every query point.  Curves start at volume-weighted
    random seeds (or the given ``seeds``), run in both directions with RK4
    and stop at the boundary (the last point is placed on it), after
    ``max_steps``, or where the top two eigenvalues are closer than
    ``gap_tol`` relative to the largest.  Seeds are independent, so
    ``workers > 1`` traces them on a thread pool; output order and values do
    not depend on the worker count.
    """
    S = np.asarray(matrices, dtype=np.float64)
    loc = TetLocator(mesh)
    h = 0.25 * mesh.mean_edge_length if step is None else float(step)
    if seeds is None:
        seeds = sample_seeds(mesh, n_seeds, seed)
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 3)

    def direction(x, tet, prev):
        t, b = loc.locate(x, tet)
        if t < 0:
            return None, -1, "boundary"
        M = np.tensordot(b, S[mesh.tets[t]], axes=1)
        v = _major(M, prev, gap_tol)
        return v, t, ("degenerate" if v is None else None)

    def to_boundary(x, y, tet):
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            t, _ = loc.locate(x + mid * (y - x), tet)
            if t >= 0:
                lo = mid
            else:
                hi = mid
        return x + lo * (y - x)

    def run(x0, v0):
        x, prev = x0.copy(), v0
        tet = loc.locate(x)[0]
        pts = [x.copy()]
        for _ in range(max_steps):
            k1, t1, why = direction(x, tet, prev)
            if k1 is None:
                return pts, why
            k2, _, w2 = direction(x + 0.5 * h * k1, t1, k1)
            k3, _, w3 = (None, -1, w2) if k2 is None else direction(x + 0.5 * h * k2, t1, k1)
            k4, _, w4 = (None, -1, w3) if k3 is None else direction(x + h * k3, t1, k1)
            if k4 is None:
                if (w2 or w3 or w4) == "boundary":
                    pts.append(to_boundary(x, x + h * k1, t1))
                    return pts, "boundary"
                return pts, "degenerate"
            y = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            ty, _ = loc.locate(y, t1)
            if ty < 0:
                pts.append(to_boundary(x, y, t1))
                return pts, "boundary"
            prev = (y - x) / np.linalg.norm(y - x)
            x, tet = y, ty
            pts.append(x.copy())
        return pts, "max_steps"

    def one(s):
        v0, _, why = direction(s, None, None)
        if v0 is None:
            return s[None].copy(), (why, why)
        fwd, r1 = run(s, v0)
        bwd, r2 = run(s, -v0)
        return np.array(bwd[::-1] + fwd[1:]), (r2, r1)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    logger.info("traced %d curves", len(results))
    return CurveSet(polylines=[r[0] for r in results], seeds=seeds, reasons=[r[1] for r in results])


def contained(mesh, points, tol=1e-6):
    """Whether each point lies in some tet up to barycentric slack ``tol``."""
    loc = TetLocator(mesh, tol=tol)
    return np.array([loc.locate(p)[0] >= 0 for p in np.atleast_2d(points)], dtype=bool)
