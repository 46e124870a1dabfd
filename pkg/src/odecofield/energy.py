"""Per-vertex frames, parameter packing and the field energies.

The realized tensor at vertex ``i`` is always

    f_i = A_i exp(tx Lx) exp(ty Ly) exp(tz Lz) B lam_i

where ``A_i`` is a fixed alignment (identity for interior vertices, the
normal or feature-tangent alignment on the boundary).  Vertex classes differ
only in which of the six parameters ``(tx, ty, tz, lx, ly, lz)`` are free.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import algebra as al
from . import kernels

PARAM_NAMES = ("theta_x", "theta_y", "theta_z", "lambda_x", "lambda_y", "lambda_z")
LAMBDA_FLOOR = 1e-3


class VertexClass(IntEnum):
    INTERIOR = 0
    BOUNDARY = 1
    FEATURE_EDGE = 2
    CORNER = 3
    HARD_FIXED = 4


# free orientation slots per class
_THETA_FREE = {
    VertexClass.INTERIOR: (True, True, True),
    VertexClass.BOUNDARY: (False, False, True),
    VertexClass.FEATURE_EDGE: (False, False, True),
    VertexClass.CORNER: (False, False, False),
    VertexClass.HARD_FIXED: (False, False, False),
}


@dataclass
class VertexFrame:
    """Single-vertex view of a :class:`FrameField`."""

    vertex_class: VertexClass
    theta: np.ndarray
    lam: np.ndarray
    axis_rotation: np.ndarray
    free: np.ndarray

    @property
    def n_dof(self):
        return int(self.free.sum())


@dataclass
class FrameField:
    """Frames for every mesh vertex.

    Attributes
    ----------
    vclass : (n,) int array of :class:`VertexClass`
    theta : (n, 3) Euler angles; frozen slots are kept at their value
    lam : (n, 3) stretching ratios
    axis3 : (n, 3, 3) fixed 3-space alignment ``A_i``
    axis15 : (n, 15, 15) the same alignment in coefficient space
    free : (n, 6) bool mask of optimizable parameters
    fixed_tensors : (n, 15) array
        Stored coefficients of hard-fixed vertices (rows of others unused).
    """

    vclass: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    axis3: np.ndarray
    axis15: np.ndarray
    free: np.ndarray
    fixed_tensors: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.vclass)
        if self.fixed_tensors is None:
            self.fixed_tensors = np.zeros((n, al.NCOEFF))

    @property
    def n_vertices(self):
        return len(self.vclass)

    @property
    def hard_fixed(self):
        return np.nonzero(self.vclass == VertexClass.HARD_FIXED)[0]

    def params(self):
        return np.hstack([self.theta, self.lam])

    def copy(self):
        return FrameField(
            vclass=self.vclass.copy(),
            theta=self.theta.copy(),
            lam=self.lam.copy(),
            axis3=self.axis3,
            axis15=self.axis15,
            free=self.free.copy(),
            fixed_tensors=self.fixed_tensors.copy(),
        )

    def __getitem__(self, i):
        return VertexFrame(
            vertex_class=VertexClass(int(self.vclass[i])),
            theta=self.theta[i].copy(),
            lam=self.lam[i].copy(),
            axis_rotation=self.axis3[i].copy(),
            free=self.free[i].copy(),
        )

    def rotations(self):
        """Full 3x3 frame ``A_i R(theta_i)`` per vertex."""
        return np.einsum("nij,njk->nik", self.axis3, al.euler_to_matrices(self.theta))

    def glyph_matrices(self):
        """Symmetric matrices ``R diag(lam) R^T`` per vertex."""
        R = self.rotations()
        return np.einsum("nij,nj,nkj->nik", R, self.lam, R)


def axis_operators(axis3):
    """Coefficient-space rotations for a stack of fixed 3x3 alignments."""
    n = len(axis3)
    out = np.empty((n, al.NCOEFF, al.NCOEFF))
    cache = {}
    eye = np.eye(3)
    for i in range(n):
        key = axis3[i].tobytes()
        if key not in cache:
            if np.array_equal(axis3[i], eye):
                cache[key] = np.eye(al.NCOEFF)
            else:
                cache[key] = al.rotation_operator_from_matrix(axis3[i])
        out[i] = cache[key]
    return out


def make_frames(vclass, theta=None, lam=None, axis3=None, lambda_free=None):
    """Assemble a :class:`FrameField` with class-derived DoF masks.

    Parameters
    ----------
    vclass : (n,) int array
    theta, lam : (n, 3) arrays, optional
        Defaults: zero angles and unit ratios.
    axis3 : (n, 3, 3) array, optional
        Fixed alignments (identity by default).
    lambda_free : (n, 3) bool array, optional
        Free ratio slots; defaults to all slots free except on hard-fixed
        vertices.
    """
    vclass = np.asarray(vclass, dtype=np.int64)
    n = len(vclass)
    theta = np.zeros((n, 3)) if theta is None else np.array(theta, dtype=np.float64)
    lam = np.ones((n, 3)) if lam is None else np.array(lam, dtype=np.float64)
    axis3 = np.tile(np.eye(3), (n, 1, 1)) if axis3 is None else np.array(axis3, dtype=np.float64)
    free = np.zeros((n, 6), dtype=bool)
    for c, mask in _THETA_FREE.items():
        free[vclass == c, :3] = mask
    if lambda_free is None:
        free[:, 3:] = True
    else:
        free[:, 3:] = np.asarray(lambda_free, dtype=bool)
    free[vclass == VertexClass.HARD_FIXED, 3:] = False
    # frozen orientation slots are zero by convention
    theta = np.where(free[:, :3] | (vclass == VertexClass.HARD_FIXED)[:, None], theta, 0.0)
    frames = FrameField(vclass=vclass, theta=theta, lam=lam, axis3=axis3, axis15=axis_operators(axis3), free=free)
    hf = frames.hard_fixed
    if len(hf):
        frames.fixed_tensors[hf] = _realize_raw(frames, frames.theta, frames.lam)[hf]
    return frames


# ---------------------------------------------------------------------------
# parameter vector


class ParamVector:
    """Flat packing of the free parameters of a :class:`FrameField`.

    Ordering is by vertex, then ``theta`` slots before ``lambda`` slots.
    """

    def __init__(self, free):
        self.free = np.asarray(free, dtype=bool)
        counts = self.free.sum(axis=1)
        self.offsets = np.r_[0, np.cumsum(counts)]
        self.size = int(self.offsets[-1])
        # vertex and slot of every entry
        vv, ss = np.nonzero(self.free)
        self.vertex = vv
        self.slot = ss

    def pack(self, frames):
        return frames.params()[self.free].copy()

    def unpack(self, x, frames):
        """Write ``x`` into a copy of ``frames``."""
        out = frames.copy()
        p = out.params()
        p[self.free] = x
        out.theta = p[:, :3].copy()
        out.lam = p[:, 3:].copy()
        return out

    def is_lambda(self):
        return self.slot >= 3


# ---------------------------------------------------------------------------
# energies


def _realize_raw(frames, theta, lam, backend=None):
    Qx, Qy = al.conjugators()
    return kernels.realize(frames.axis15, theta, lam, al.stretch_basis(), Qx, Qy, backend=backend)


def realize(frames, backend=None):
    """Coefficient vectors of all vertices, shape (n, 15)."""
    F = _realize_raw(frames, frames.theta, frames.lam, backend=backend)
    hf = frames.hard_fixed
    if len(hf):
        F[hf] = frames.fixed_tensors[hf]
    return F


def smoothness_energy(mesh, frames, F=None):
    """Cotangent-weighted Dirichlet energy and its per-vertex split."""
    if F is None:
        F = realize(frames)
    E, Ev, _ = kernels.dirichlet(mesh.edges, mesh.cotan_weights, F)
    return E, Ev


def guidance_energy(frames, targets, weights=None):
    """Sum of squared deviations from guided ratios.

    ``targets`` is (n, 3) with NaN where a component is unguided;
    ``weights`` optionally scales each vertex's term.
    """
    d = frames.lam - targets
    sq = np.where(np.isnan(d), 0.0, d) ** 2
    per = sq.sum(axis=1)
    if weights is not None:
        per = per * weights
    return float(per.sum())


def distortion_energy(frames, f_in, F=None):
    if F is None:
        F = realize(frames)
    return float(np.sum((F - f_in) ** 2))


@dataclass
class EnergyBreakdown:
    E_T: float
    E_s: float
    E_penalty: float
    E_vertex: np.ndarray
    weight: float
    mode: str

    def normalized(self, n_vertices):
        """Values divided by the vertex count, for cross-model reporting."""
        return {
            "E_T": self.E_T / n_vertices,
            "E_s": self.E_s / n_vertices,
            "E_penalty": self.E_penalty / n_vertices,
        }

    def as_dict(self, n_vertices=None):
        name = "E_Lambda" if self.mode == "design" else "E_dis"
        out = {
            "mode": self.mode,
            "weight": self.weight,
            "E_T": self.E_T,
            "E_s": self.E_s,
            name: self.E_penalty,
        }
        if n_vertices:
            norm = self.normalized(n_vertices)
            out["normalized"] = {"E_T": norm["E_T"], "E_s": norm["E_s"], name: norm["E_penalty"]}
        return out


class Objective:
    """``E_T`` and its gradient as a function of a packed parameter vector.

    Parameters
    ----------
    mesh : TetMesh
    frames : FrameField
        Supplies fixed parameters and alignments; not modified.
    mode : {'design', 'smooth'}
    weight : float
        ``psi`` in design mode, ``kappa`` in smoothing mode.
    targets : (n, 3) array, optional
        Guided ratios with NaN for unguided components (design mode).
    target_weights : (n,) array, optional
        Per-vertex multipliers of the guidance term.
    f_in : (n, 15) array, optional
        Reference coefficients (smoothing mode).
    free : (n, 6) bool array, optional
        Overrides ``frames.free`` (e.g. to freeze all ratios).
    """

    def __init__(self, mesh, frames, mode="design", weight=50.0, targets=None,
                 target_weights=None, f_in=None, free=None, backend=None):
        if mode not in ("design", "smooth"):
            raise ValueError(f"unknown mode {mode!r}")
        if not weight > 0:
            raise ValueError("weight must be positive")
        if mode == "smooth" and f_in is None:
            raise ValueError("smoothing mode needs a reference field")
        self.mesh = mesh
        self.frames = frames
        self.mode = mode
        self.weight = float(weight)
        n = frames.n_vertices
        self.targets = np.full((n, 3), np.nan) if targets is None else np.asarray(targets, dtype=np.float64)
        self.target_weights = None if target_weights is None else np.asarray(target_weights, dtype=np.float64)
        self.f_in = None if f_in is None else np.asarray(f_in, dtype=np.float64)
        self.layout = ParamVector(frames.free if free is None else free)
        self.backend = backend
        self._base = frames.params()
        self._B = al.stretch_basis()
        self._Qx, self._Qy = al.conjugators()
        self._hard = frames.hard_fixed
        self.n_evals = 0

    def x0(self):
        return self.layout.pack(self.frames)

    def full_params(self, x):
        p = self._base.copy()
        p[self.layout.free] = x
        return p

    def frames_at(self, x):
        return self.layout.unpack(x, self.frames)

    def _evaluate(self, x, need_grad=True):
        self.n_evals += 1
        p = self.full_params(x)
        theta = np.ascontiguousarray(p[:, :3])
        lam = np.ascontiguousarray(p[:, 3:])
        F = kernels.realize(self.frames.axis15, theta, lam, self._B, self._Qx, self._Qy, backend=self.backend)
        if len(self._hard):
            F[self._hard] = self.frames.fixed_tensors[self._hard]
        E_s, E_v, G = kernels.dirichlet(self.mesh.edges, self.mesh.cotan_weights, F, backend=self.backend)
        g_lam_extra = None
        if self.mode == "smooth":
            D = F - self.f_in
            penalty = float(np.sum(D * D))
            G += 2.0 * self.weight * D
        else:
            d = lam - self.targets
            d = np.where(np.isnan(d), 0.0, d)
            if self.target_weights is not None:
                dw = d * self.target_weights[:, None]
            else:
                dw = d
            penalty = float(np.sum(dw * d))
            g_lam_extra = 2.0 * self.weight * dw
        E_T = E_s + self.weight * penalty
        bd = EnergyBreakdown(E_T=E_T, E_s=E_s, E_penalty=penalty, E_vertex=E_v,
                             weight=self.weight, mode=self.mode)
        if not need_grad:
            return bd, None
        if len(self._hard):
            G[self._hard] = 0.0
        gt, gl = kernels.realize_vjp(self.frames.axis15, theta, lam, self._B, self._Qx, self._Qy, G,
                                     backend=self.backend)
        if g_lam_extra is not None:
            gl = gl + g_lam_extra
        grad = np.hstack([gt, gl])[self.layout.free]
        return bd, grad

    def __call__(self, x):
        bd, g = self._evaluate(x)
        return bd.E_T, g

    def breakdown(self, x=None):
        if x is None:
            x = self.x0()
        return self._evaluate(x, need_grad=False)[0]


def total_energy_and_gradient(mesh, frames, targets=None, mode="design", weight=50.0,
                              target_weights=None, f_in=None, backend=None):
    """Energy breakdown and packed gradient at the current frames."""
    obj = Objective(mesh, frames, mode=mode, weight=weight, targets=targets,
                    target_weights=target_weights, f_in=f_in, backend=backend)
    bd, g = obj._evaluate(obj.x0())
    return bd, g
