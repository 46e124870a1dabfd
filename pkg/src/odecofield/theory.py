"""Closed-form boundary energy predictions and shape-conformity checks.

For a normal-aligned field whose tangential lobes make angle ``phi`` with
the minimum-curvature direction, the squared surface gradient is

    (cos^2 phi g1 + sin^2 phi g2) K_max^2
  + (sin^2 phi g1 + cos^2 phi g2) K_min^2 + g3 omega

with ``g_k`` the squared norms of the three generators applied to the
canonical tensor.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import algebra as al
from .energy import VertexClass

G_SCALE = 64.0 * np.pi / 315.0
# index pairs (m_k, n_k) for k = 1, 2, 3
G_PAIRS = {1: (1, 2), 2: (0, 2), 3: (0, 1)}


def g_k(lam, k):
    """``64 pi / 315 * (4 (a - b)^2 + (a + b)^2)`` over the k-th index pair."""
    if k not in G_PAIRS:
        raise ValueError("k must be 1, 2 or 3")
    lam = np.asarray(lam, dtype=np.float64)
    i, j = G_PAIRS[k]
    a, b = lam[..., i], lam[..., j]
    return G_SCALE * (4.0 * (a - b) ** 2 + (a + b) ** 2)


@dataclass(frozen=True)
class BoundaryEnergyPrediction:
    curvature_term: float
    twist_term: float
    g1: float
    g2: float
    g3: float
    lam: tuple
    phi: float
    K_max: float
    K_min: float
    omega: float

    @property
    def total(self):
        return self.curvature_term + self.twist_term


def predicted_gradient_norm(lam, phi, K_max, K_min, omega=0.0):
    g1, g2, g3 = (float(g_k(lam, k)) for k in (1, 2, 3))
    c2, s2 = np.cos(phi) ** 2, np.sin(phi) ** 2
    curv = (c2 * g1 + s2 * g2) * K_max ** 2 + (s2 * g1 + c2 * g2) * K_min ** 2
    return BoundaryEnergyPrediction(
        curvature_term=float(curv), twist_term=float(g3 * omega), g1=g1, g2=g2, g3=g3,
        lam=tuple(float(x) for x in lam), phi=float(phi), K_max=float(K_max), K_min=float(K_min),
        omega=float(omega),
    )


class AlignmentPreference(enum.Enum):
    ALIGN_LARGE_LOBE_TO_MIN_CURV = "AlignLargeLobeToMinCurv"
    ALIGN_LARGE_LOBE_TO_MAX_CURV = "AlignLargeLobeToMaxCurv"
    NO_PREFERENCE = "NoPreference"


def curvature_alignment_predicate(lam, tol=1e-9):
    """Which principal direction the larger tangential lobe should follow.

    ``g1 - g2`` is proportional to ``(lx - ly)(6 lz - 5 (lx + ly))``, so the
    preference flips at ``lz = 5/6 (lx + ly)`` and vanishes when ``lx = ly``.
    """
    lx, ly, lz = (float(x) for x in lam)
    scale = max(1.0, abs(lx), abs(ly), abs(lz))
    crit = 5.0 / 6.0 * (lx + ly)
    if abs(lx - ly) <= tol * scale or abs(lz - crit) <= tol * scale:
        return AlignmentPreference.NO_PREFERENCE
    if lz < crit:
        return AlignmentPreference.ALIGN_LARGE_LOBE_TO_MIN_CURV
    return AlignmentPreference.ALIGN_LARGE_LOBE_TO_MAX_CURV


# ---------------------------------------------------------------------------
# two planes meeting at a sharp edge


def _wedge(delta):
    e = np.array([1.0, 0.0, 0.0])
    h1 = np.array([0.0, 1.0, 0.0])
    h2 = np.array([0.0, np.cos(delta), np.sin(delta)])
    return e, np.cross(e, h1), np.cross(h2, e)


def _aligned_tensors(lam, e, n, phis):
    """Normal-aligned tensors whose x lobe makes angle phi with ``e``."""
    w = np.cross(n, e)
    B_lam = al.canonical_tensor(lam)
    out = np.empty((len(phis), al.NCOEFF))
    for k, p in enumerate(phis):
        x = np.cos(p) * e + np.sin(p) * w
        R = np.column_stack([x, np.cross(n, x), n])
        out[k] = al.rotation_operator_from_matrix(R) @ B_lam
    return out


def pair_energy_scan(lam, dihedral_delta, grid_n=64):
    """``|f1 - f2|^2`` over lobe angles on two planes sharing an edge.

    The planes meet along ``e = x`` with dihedral angle ``dihedral_delta``.
    Each tensor is aligned with its plane normal and its x lobe makes angle
    ``phi_k`` with ``e`` inside the plane.

    Returns
    -------
    phis : (grid_n,) array of angles ``k pi / grid_n``
    energy : (grid_n, grid_n) array indexed ``[i1, i2]``
    """
    if grid_n < 8:
        raise ValueError("grid_n must be at least 8")
    if not 0 < dihedral_delta <= np.pi:
        raise ValueError("dihedral_delta must lie in (0, pi]")
    phis = np.arange(grid_n) * np.pi / grid_n
    e, n1, n2 = _wedge(dihedral_delta)
    F1 = _aligned_tensors(lam, e, n1, phis)
    F2 = _aligned_tensors(lam, e, n2, phis)
    sq1 = np.einsum("ij,ij->i", F1, F1)
    sq2 = np.einsum("ij,ij->i", F2, F2)
    E = sq1[:, None] + sq2[None, :] - 2.0 * F1 @ F2.T
    return phis, np.maximum(E, 0.0)


def scan_argmin(phis, energy):
    i, j = np.unravel_index(np.argmin(energy), energy.shape)
    return phis[i], phis[j]


def periodic_distance(a, b, period=np.pi):
    d = np.mod(a - b, period)
    return np.minimum(d, period - d)


# ---------------------------------------------------------------------------
# conformity report


def _angle_deg(u, v):
    c = np.abs(np.einsum("ij,ij->i", u, v))
    n = np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
    return np.degrees(np.arccos(np.clip(c / np.where(n > 0, n, 1.0), 0.0, 1.0)))


def _stats(a):
    if len(a) == 0:
        return {"count": 0, "median": None, "p90": None, "max": None}
    return {"count": int(len(a)), "median": float(np.median(a)), "p90": float(np.percentile(a, 90)),
            "max": float(np.max(a))}


def boundary_conformity_report(mesh, frames, boundary, rel_noise_floor=0.1):
    """Deviation angles of boundary lobes from the directions they should follow.

    Curvature part: on normal-aligned vertices whose ratios give a
    preference, the larger tangential lobe is compared with the
    minimum (or maximum) curvature direction.  Vertices where
    ``|K_max - K_min|`` is below ``rel_noise_floor * max(|K_max|, |K_min|)``
    count as umbilic and are skipped.  Feature part: the tangent-slot lobe
    of feature vertices against the feature tangent.  Angles are unsigned
    and in [0, 90] degrees.
    """
    R = frames.rotations()
    lam = frames.lam
    n = mesh.n_vertices
    pref = [AlignmentPreference.NO_PREFERENCE] * n
    curv_idx, curv_dev = [], []
    K = boundary.principal_curvatures
    dirs = boundary.curvature_dirs
    fallback = boundary.curvature_fallback
    for v in np.nonzero(frames.vclass == VertexClass.BOUNDARY)[0]:
        p = curvature_alignment_predicate(lam[v])
        pref[v] = p
        if K is None or p is AlignmentPreference.NO_PREFERENCE:
            continue
        if fallback is not None and fallback[v]:
            continue
        kmax, kmin = K[v]
        if abs(kmax - kmin) <= rel_noise_floor * max(abs(kmax), abs(kmin)) or max(abs(kmax), abs(kmin)) == 0:
            pref[v] = AlignmentPreference.NO_PREFERENCE
            continue
        big = 0 if lam[v, 0] >= lam[v, 1] else 1
        target = dirs[v, 1] if p is AlignmentPreference.ALIGN_LARGE_LOBE_TO_MIN_CURV else dirs[v, 0]
        curv_idx.append(int(v))
        curv_dev.append(float(_angle_deg(R[v][None, :, big], target[None])[0]))
    feat = np.nonzero(frames.vclass == VertexClass.FEATURE_EDGE)[0]
    feat_dev = _angle_deg(R[feat][:, :, 2], boundary.feature_tangents[feat]) if len(feat) else np.zeros(0)
    return {
        "curvature": {"vertices": curv_idx, "deviation_deg": curv_dev, **_stats(np.array(curv_dev))},
        "feature": {"vertices": [int(v) for v in feat], "deviation_deg": [float(a) for a in feat_dev],
                    **_stats(feat_dev)},
        "preference": {p.value: int(sum(1 for q in pref if q is p)) for p in AlignmentPreference},
        "boundary_vertices": int(np.sum(frames.vclass == VertexClass.BOUNDARY)),
    }


# ---------------------------------------------------------------------------
# analytic torus patch


def torus_field_gradient_norm(lam, phi, R=3.0, r=1.0, u=0.0, v=0.0, twist_rate=0.0, h=1e-4):
    """Finite-difference ``|grad f|^2`` of a normal-aligned field on a torus.

    The field's x lobe makes angle ``phi + twist_rate * s`` with the
    parallel direction, ``s`` being arc length along the parallel.  On the
    outer equator (``v = 0``) the parallel is the minimum-curvature
    direction and the principal frame does not twist, so the result can be
    compared with :func:`predicted_gradient_norm` using
    ``K_max = 1/r``, ``K_min = 1/(R + r)`` and ``omega = twist_rate**2``.
    """
    B_lam = al.canonical_tensor(lam)

    def field(uu, vv):
        p, nrm, e_u, e_v, _, _ = _torus(R, r, uu, vv)
        s = (R + r * np.cos(vv)) * (uu - u)
        a = phi + twist_rate * s
        x = np.cos(a) * e_u + np.sin(a) * e_v
        Rm = np.column_stack([x, np.cross(nrm, x), nrm])
        return al.rotation_operator_from_matrix(Rm) @ B_lam

    du = (field(u + h, v) - field(u - h, v)) / (2 * h)
    dv = (field(u, v + h) - field(u, v - h)) / (2 * h)
    gu = (R + r * np.cos(v)) ** 2
    gv = r ** 2
    return float(du @ du / gu + dv @ dv / gv)


def _torus(R, r, u, v):
    from .synthetic import torus_point_frame

    return torus_point_frame(R, r, u, v)


# ---------------------------------------------------------------------------
# self-checks


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def check_isotropic_g(samples=(1.0, 2.5, 7.0)):
    worst = 0.0
    for c in samples:
        g = [float(g_k((c, c, c), k)) for k in (1, 2, 3)]
        worst = max(worst, max(g) - min(g))
    return CheckResult("isotropic_g", worst == 0.0, f"max |g_i - g_j| = {worst:.3g}")


def check_gradient_formula(rel_tol=0.02, R=3.0, r=1.0):
    """Closed form against a finite-difference field on the outer torus equator."""
    cases = [((2, 1, 1), 0.0, 0.0), ((2, 1, 1), 0.7, 0.0), ((5, 1, 1), 1.2, 0.3), ((3, 2, 1), 0.4, 0.5),
             ((1, 1, 3), 0.9, 0.2)]
    worst = 0.0
    for lam, phi, tw in cases:
        fd = torus_field_gradient_norm(lam, phi, R, r, twist_rate=tw)
        pred = predicted_gradient_norm(lam, phi, 1.0 / r, 1.0 / (R + r), tw ** 2).total
        worst = max(worst, abs(fd - pred) / abs(pred))
    return CheckResult("gradient_formula", worst < rel_tol, f"max relative error {worst:.3g} over {len(cases)} cases")


def check_alignment_predicate(n=200, seed=0):
    """Predicate agrees with comparing the closed-form energy at phi = 0 and pi/2."""
    rng = np.random.default_rng(seed)
    bad = 0
    for lam in rng.uniform(0.5, 10.0, size=(n, 3)):
        p = curvature_alignment_predicate(lam)
        if p is AlignmentPreference.NO_PREFERENCE:
            continue
        # larger lobe in the x slot, so phi = 0 puts it along the min-curvature direction
        lam = (max(lam[:2]), min(lam[:2]), lam[2])
        e0 = predicted_gradient_norm(lam, 0.0, 2.0, 0.5).total
        e1 = predicted_gradient_norm(lam, np.pi / 2, 2.0, 0.5).total
        want = (AlignmentPreference.ALIGN_LARGE_LOBE_TO_MIN_CURV if e0 < e1
                else AlignmentPreference.ALIGN_LARGE_LOBE_TO_MAX_CURV)
        bad += p is not want
    return CheckResult("alignment_predicate", bad == 0, f"{bad} disagreements in {n} samples")


def check_feature_scan(grid_n=64, deltas=(0.3, 0.5, 0.6, 0.8), lams=((2, 1, 1), (5, 1, 1), (3, 2, 1))):
    """Both lobes along the shared edge minimize the pair energy."""
    cell = np.pi / grid_n
    worst = 0.0
    for d in deltas:
        for lam in lams:
            phis, E = pair_energy_scan(lam, d * np.pi, grid_n)
            a, b = scan_argmin(phis, E)
            worst = max(worst, periodic_distance(a, 0.0), periodic_distance(b, 0.0))
    return CheckResult("feature_scan", worst <= cell + 1e-12,
                       f"max argmin distance {worst:.3g} rad (grid cell {cell:.3g})")


def run_checks():
    return [check_isotropic_g(), check_gradient_formula(), check_alignment_predicate(), check_feature_scan()]
