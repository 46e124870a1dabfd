"""User guidance: constraint sets, the guidance file format and derived guidance.

Guidance file (JSON, ``"version": 1``)::

    {
      "version": 1,
      "soft_lambda": [{"vertex": 7, "lambda": [3, 1, 1], "weight": 10.0},
                      {"vertices": [1, 2, 3], "lambda": [2, 1, null]}],
      "hard_lambda": [{"vertex": 4, "lambda": [1, 1, 1]}],
      "hard_tensor": [{"vertex": 9, "theta": [0, 0, 0.3], "lambda": [5, 1, 1]}],
      "corner_overrides": [12, 40],
      "options": {"normal_lock": true, "feature_lock": true, "unlocked": [5]}
    }

``null`` lambda components are left unconstrained.  ``weight`` replaces the
global guidance weight for that vertex.  Region or curve constraints are
given as explicit ``vertices`` lists.
"""

from __future__ import annotations

import json
import json.decoder
import json.scanner
import logging
from dataclasses import dataclass, field

import numpy as np

from . import algebra as al
from .energy import VertexClass, make_frames, realize
from .errors import InputError, ValidationError

logger = logging.getLogger(__name__)

GUIDANCE_VERSION = 1
DEFAULT_CLAMP = (1.0, 50.0)
_SECTIONS = ("version", "soft_lambda", "hard_lambda", "hard_tensor", "corner_overrides", "options")
_OPTIONS = ("normal_lock", "feature_lock", "unlocked")


@dataclass
class ConstraintSet:
    """Per-vertex guidance.

    ``soft_lambda`` maps vertex -> (target (3,) with NaN for free components,
    weight override or None).  ``hard_lambda`` maps vertex -> (3,) fixed
    ratios (NaN components stay free).  ``hard_tensor`` maps vertex ->
    (theta, lambda).  ``normal_lock`` and ``feature_lock`` switch the
    boundary locks; ``unlocked`` exempts individual vertices from them.
    """

    soft_lambda: dict = field(default_factory=dict)
    hard_lambda: dict = field(default_factory=dict)
    hard_tensor: dict = field(default_factory=dict)
    corner_overrides: tuple = ()
    normal_lock: bool = True
    feature_lock: bool = True
    unlocked: frozenset = frozenset()

    @property
    def free_lambda_z(self):
        """Vertices whose soft target leaves the z ratio unconstrained."""
        return frozenset(v for v, (t, _) in self.soft_lambda.items() if np.isnan(t[2]))

    def validate(self, n_vertices):
        seen = {}
        for name in ("soft_lambda", "hard_lambda", "hard_tensor"):
            for v in getattr(self, name):
                if not 0 <= v < n_vertices:
                    raise ValidationError(f"{name}: vertex {v} out of range [0, {n_vertices})")
                if v in seen:
                    raise ValidationError(f"vertex {v} appears in both {seen[v]} and {name}")
                seen[v] = name
        for v in self.corner_overrides:
            if not 0 <= v < n_vertices:
                raise ValidationError(f"corner_overrides: vertex {v} out of range")
        for v, (t, _) in self.soft_lambda.items():
            _check_positive(t, f"soft_lambda vertex {v}")
        for v, t in self.hard_lambda.items():
            _check_positive(t, f"hard_lambda vertex {v}")
        for v, (_, lam) in self.hard_tensor.items():
            _check_positive(lam, f"hard_tensor vertex {v}")
        return self

    def merged(self, other, overwrite=False):
        """Union of two sets; soft entries of ``other`` fill vertices not yet guided."""
        out = ConstraintSet(
            soft_lambda=dict(self.soft_lambda),
            hard_lambda=dict(self.hard_lambda),
            hard_tensor=dict(self.hard_tensor),
            corner_overrides=tuple(sorted(set(self.corner_overrides) | set(other.corner_overrides))),
            normal_lock=self.normal_lock,
            feature_lock=self.feature_lock,
            unlocked=self.unlocked | other.unlocked,
        )
        taken = set(out.hard_lambda) | set(out.hard_tensor)
        for v, entry in other.soft_lambda.items():
            if v in taken or (v in out.soft_lambda and not overwrite):
                continue
            out.soft_lambda[v] = entry
        return out

    def to_dict(self):
        def lam(t):
            return [None if np.isnan(x) else float(x) for x in t]

        soft = []
        for v in sorted(self.soft_lambda):
            t, w = self.soft_lambda[v]
            entry = {"vertex": int(v), "lambda": lam(t)}
            if w is not None:
                entry["weight"] = float(w)
            soft.append(entry)
        return {
            "version": GUIDANCE_VERSION,
            "soft_lambda": soft,
            "hard_lambda": [{"vertex": int(v), "lambda": lam(self.hard_lambda[v])} for v in sorted(self.hard_lambda)],
            "hard_tensor": [
                {"vertex": int(v), "theta": [float(x) for x in th], "lambda": [float(x) for x in la]}
                for v, (th, la) in sorted(self.hard_tensor.items())
            ],
            "corner_overrides": [int(v) for v in self.corner_overrides],
            "options": {
                "normal_lock": self.normal_lock,
                "feature_lock": self.feature_lock,
                "unlocked": sorted(int(v) for v in self.unlocked),
            },
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def __eq__(self, other):
        if not isinstance(other, ConstraintSet):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _check_positive(t, what):
    t = np.asarray(t, dtype=np.float64)
    given = t[~np.isnan(t)]
    if np.any(given <= 0) or not np.all(np.isfinite(given)):
        raise ValidationError(f"{what}: stretching ratios must be positive and finite, got {t.tolist()}")


# ---------------------------------------------------------------------------
# parsing


class _Obj(dict):
    line = None


class _LineDecoder(json.JSONDecoder):
    """JSON decoder that records the source line of every object."""

    def __init__(self, **kw):
        super().__init__(**kw)

        def parse_object(s_and_end, *args, **kwargs):
            s, end = s_and_end
            obj, new_end = json.decoder.JSONObject(s_and_end, *args, **kwargs)
            out = _Obj(obj)
            out.line = s.count("\n", 0, end) + 1
            return out, new_end

        self.parse_object = parse_object
        self.scan_once = json.scanner.py_make_scanner(self)


def _vertex_list(entry, path):
    if "vertex" in entry and "vertices" in entry:
        raise ValidationError("entry has both 'vertex' and 'vertices'", path, entry.line)
    if "vertex" in entry:
        vs = [entry["vertex"]]
    elif "vertices" in entry:
        vs = entry["vertices"]
        if not isinstance(vs, list):
            raise ValidationError("'vertices' must be a list", path, entry.line)
    else:
        raise ValidationError("entry needs 'vertex' or 'vertices'", path, entry.line)
    for v in vs:
        if not isinstance(v, int) or isinstance(v, bool):
            raise ValidationError(f"vertex index must be an integer, got {v!r}", path, entry.line)
    return vs


def _triple(entry, key, path, allow_null):
    val = entry.get(key)
    if not isinstance(val, list) or len(val) != 3:
        raise ValidationError(f"'{key}' must be a list of three numbers", path, entry.line)
    out = []
    for x in val:
        if x is None and allow_null:
            out.append(np.nan)
        elif isinstance(x, (int, float)) and not isinstance(x, bool):
            out.append(float(x))
        else:
            raise ValidationError(f"'{key}' has a non-numeric component {x!r}", path, entry.line)
    return np.array(out)


def _check_keys(entry, allowed, path):
    if not isinstance(entry, dict):
        raise ValidationError(f"expected an object, got {type(entry).__name__}", path)
    extra = set(entry) - set(allowed)
    if extra:
        raise ValidationError(f"unknown keys {sorted(extra)}", path, getattr(entry, "line", None))


def parse_guidance(path, n_vertices=None):
    """Read a guidance file into a validated :class:`ConstraintSet`.

    An empty file (or ``{}``) yields the default set: boundary normal and
    feature locks, no ratio targets.
    """
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read guidance file: {exc.strerror}", path) from exc
    if not text.strip():
        cs = ConstraintSet()
        return cs.validate(n_vertices) if n_vertices is not None else cs
    try:
        doc = json.loads(text, cls=_LineDecoder)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc
    _check_keys(doc, _SECTIONS, path)
    version = doc.get("version", GUIDANCE_VERSION)
    if version != GUIDANCE_VERSION:
        raise ValidationError(f"unsupported guidance version {version!r}", path, doc.line)

    cs = ConstraintSet()
    where = {}

    def claim(v, section, line):
        if n_vertices is not None and not 0 <= v < n_vertices:
            raise ValidationError(f"{section}: vertex {v} out of range [0, {n_vertices})", path, line)
        if v in where:
            prev, pline = where[v]
            raise ValidationError(
                f"vertex {v} constrained by both {prev} (line {pline}) and {section}", path, line
            )
        where[v] = (section, line)

    for entry in doc.get("soft_lambda", []):
        _check_keys(entry, ("vertex", "vertices", "lambda", "weight"), path)
        t = _triple(entry, "lambda", path, allow_null=True)
        w = entry.get("weight")
        if w is not None and (not isinstance(w, (int, float)) or not w > 0):
            raise ValidationError(f"weight must be a positive number, got {w!r}", path, entry.line)
        try:
            _check_positive(t, "soft_lambda")
        except ValidationError as exc:
            raise ValidationError(str(exc), path, entry.line) from None
        for v in _vertex_list(entry, path):
            claim(v, "soft_lambda", entry.line)
            cs.soft_lambda[v] = (t.copy(), None if w is None else float(w))

    for entry in doc.get("hard_lambda", []):
        _check_keys(entry, ("vertex", "vertices", "lambda"), path)
        t = _triple(entry, "lambda", path, allow_null=True)
        try:
            _check_positive(t, "hard_lambda")
        except ValidationError as exc:
            raise ValidationError(str(exc), path, entry.line) from None
        for v in _vertex_list(entry, path):
            claim(v, "hard_lambda", entry.line)
            cs.hard_lambda[v] = t.copy()

    for entry in doc.get("hard_tensor", []):
        _check_keys(entry, ("vertex", "vertices", "theta", "lambda"), path)
        th = _triple(entry, "theta", path, allow_null=False)
        la = _triple(entry, "lambda", path, allow_null=False)
        try:
            _check_positive(la, "hard_tensor")
        except ValidationError as exc:
            raise ValidationError(str(exc), path, entry.line) from None
        for v in _vertex_list(entry, path):
            claim(v, "hard_tensor", entry.line)
            cs.hard_tensor[v] = (th.copy(), la.copy())

    corners = doc.get("corner_overrides", [])
    if not isinstance(corners, list) or any(not isinstance(v, int) or isinstance(v, bool) for v in corners):
        raise ValidationError("corner_overrides must be a list of vertex indices", path, doc.line)
    if n_vertices is not None:
        for v in corners:
            if not 0 <= v < n_vertices:
                raise ValidationError(f"corner_overrides: vertex {v} out of range", path, doc.line)
    cs.corner_overrides = tuple(sorted(set(corners)))

    opts = doc.get("options", {})
    _check_keys(opts, _OPTIONS, path)
    for key in ("normal_lock", "feature_lock"):
        if key in opts:
            if not isinstance(opts[key], bool):
                raise ValidationError(f"option {key} must be true or false", path, opts.line)
            setattr(cs, key, opts[key])
    unlocked = opts.get("unlocked", [])
    if not isinstance(unlocked, list):
        raise ValidationError("option unlocked must be a list", path, opts.line)
    cs.unlocked = frozenset(int(v) for v in unlocked)
    return cs


# ---------------------------------------------------------------------------
# derived guidance


def curvature_ratio(k_max, k_min, clamp_lo=DEFAULT_CLAMP[0], clamp_hi=DEFAULT_CLAMP[1]):
    """``clamp(|K_max / K_min|)`` with the flat-direction case mapped to ``clamp_hi``."""
    k_max = np.asarray(k_max, dtype=np.float64)
    k_min = np.asarray(k_min, dtype=np.float64)
    a, b = np.abs(k_max), np.abs(k_min)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = a / b
    r = np.where(b < 1e-8 * a, clamp_hi, r)
    r = np.where((a == 0) & (b == 0), 1.0, r)
    return np.clip(r, clamp_lo, clamp_hi)


def degenerate_lambda_z(lx, ly):
    return 5.0 / 6.0 * (lx + ly)


def nudge_lambda_z(lz, lx, ly, tol=1e-6, step=1e-3):
    """Move ``lz`` off the tangentially indifferent value ``5/6 (lx + ly)``."""
    d = degenerate_lambda_z(lx, ly)
    if abs(lz - d) <= tol:
        return d - step if d - step > 0 else d + step
    return lz


def curvature_guidance(mesh, boundary, clamp_lo=DEFAULT_CLAMP[0], clamp_hi=DEFAULT_CLAMP[1], lambda_z=None,
                       vertices=None):
    """Soft ratio targets from principal curvatures.

    Each selected boundary vertex gets ``lambda_x = clamp(|K_max/K_min|)``,
    ``lambda_y = 1`` and a free ``lambda_z`` unless ``lambda_z`` is given.
    By default feature and corner vertices are skipped since their frame is
    set by the feature tangent.
    """
    if boundary.principal_curvatures is None:
        raise ValueError("boundary data carries no curvature estimate")
    if vertices is None:
        skip = set(boundary.feature_vertices.tolist()) | set(np.asarray(boundary.corners).tolist())
        vertices = [v for v in boundary.boundary_vertices.tolist() if v not in skip]
    K = boundary.principal_curvatures
    cs = ConstraintSet()
    for v in vertices:
        lx = float(curvature_ratio(K[v, 0], K[v, 1], clamp_lo, clamp_hi))
        lz = np.nan if lambda_z is None else nudge_lambda_z(float(lambda_z), lx, 1.0)
        cs.soft_lambda[int(v)] = (np.array([lx, 1.0, lz]), None)
    return cs


def log_clamp_map(e, e_min, e_max, lo=DEFAULT_CLAMP[0], hi=DEFAULT_CLAMP[1]):
    """Logarithmic map of magnitudes ``[e_min, e_max]`` onto ``[lo, hi]``."""
    e = np.asarray(e, dtype=np.float64)
    if e_max <= e_min:
        return np.full_like(e, lo)
    t = np.log(np.maximum(e, e_min) / e_min) / np.log(e_max / e_min)
    return lo + (hi - lo) * np.clip(t, 0.0, 1.0)


@dataclass
class FieldInit:
    theta: np.ndarray
    lam: np.ndarray
    f_in: np.ndarray
    matrices: np.ndarray


def field_guidance(mesh, raw_field, value_map="identity", clamp=DEFAULT_CLAMP, floor=1e-3, tol=1e-9):
    """Initial frames and reference coefficients from a 3x3 tensor field.

    ``log_clamp`` maps eigenvalue magnitudes ``e`` to
    ``lo + (hi - lo) log(e / e_min) / log(e_max / e_min)`` with the extrema
    taken over the whole field; ``identity`` keeps eigenvalues as given
    (floored at ``floor``).
    """
    S = np.asarray(raw_field, dtype=np.float64)
    n = mesh.n_vertices
    if S.shape != (n, 3, 3):
        raise ValidationError(f"field has shape {S.shape}, expected ({n}, 3, 3)")
    if not np.all(np.isfinite(S)):
        bad = int(np.nonzero(~np.isfinite(S).all(axis=(1, 2)))[0][0])
        raise ValidationError(f"field value at vertex {bad} is not finite")
    asym = np.abs(S - S.transpose(0, 2, 1)).max(axis=(1, 2))
    scale = np.maximum(1.0, np.abs(S).max(axis=(1, 2)))
    bad = np.nonzero(asym > tol * scale)[0]
    if len(bad):
        raise ValidationError(f"field matrix at vertex {int(bad[0])} is not symmetric (|S - S^T| = {asym[bad[0]]:.3g})")
    S = 0.5 * (S + S.transpose(0, 2, 1))
    w, V = np.linalg.eigh(S)
    mag = np.abs(w)
    if value_map == "log_clamp":
        pos = mag[mag > 0]
        e_min = pos.min() if len(pos) else 1.0
        e_max = mag.max() if len(pos) else 1.0
        w = log_clamp_map(mag, e_min, e_max, *clamp)
    elif value_map == "identity":
        w = np.maximum(w, floor)
    else:
        raise ValueError(f"unknown value map {value_map!r}")
    mapped = np.einsum("nij,nj,nkj->nik", V, w, V)
    theta = np.zeros((n, 3))
    lam = np.zeros((n, 3))
    ref = None
    for i in range(n):
        theta[i], lam[i] = al.from_symmetric_matrix(mapped[i], reference=ref)
        ref = al.euler_to_matrix(theta[i])
    frames = make_frames(np.zeros(n, dtype=np.int64), theta=theta, lam=lam)
    return FieldInit(theta=theta, lam=lam, f_in=realize(frames), matrices=mapped)


# ---------------------------------------------------------------------------
# frames from constraints


def _corner_frame(v, boundary, mesh):
    """Alignment for a corner: z along one incident feature edge, x toward another."""
    V = mesh.vertices
    fe = boundary.feature_edges if boundary.feature_edges is not None else np.zeros((0, 2), dtype=np.int64)
    nbrs = sorted(int(b if a == v else a) for a, b in fe if a == v or b == v)
    if nbrs:
        z = V[nbrs[0]] - V[v]
        z /= np.linalg.norm(z)
    else:
        z = boundary.normals[v]
    x = None
    for w in nbrs[1:]:
        d = V[w] - V[v]
        d = d - (d @ z) * z
        if np.linalg.norm(d) > 1e-8 * mesh.mean_edge_length:
            x = d / np.linalg.norm(d)
            break
    A = al.axis_alignment_matrix(z)
    if x is None:
        return A
    # twist about z so the canonical x axis follows the second edge
    xa = A[:, 0]
    ang = np.arctan2(np.cross(xa, x) @ z, xa @ x)
    return A @ al.rot_z(ang)


@dataclass
class Problem:
    """Frames plus guidance arrays ready for the solver."""

    frames: object
    targets: np.ndarray
    target_weights: np.ndarray | None
    constraints: ConstraintSet


def build_problem(mesh, boundary, constraints=None, weight=None):
    """Classify vertices and build the initial :class:`FrameField`.

    Returns a :class:`Problem` whose ``targets`` hold soft and hard ratio
    targets (NaN where unguided).  On feature vertices a fully specified
    target is reordered so its largest ratio sits on the tangent slot (z).
    ``weight`` is the global guidance weight used to turn per-entry weight
    overrides into relative multipliers.
    """
    cs = constraints or ConstraintSet()
    cs.validate(mesh.n_vertices)
    n = mesh.n_vertices
    vclass = np.full(n, VertexClass.INTERIOR, dtype=np.int64)
    axis3 = np.tile(np.eye(3), (n, 1, 1))
    corners = set(np.asarray(boundary.corners if boundary.corners is not None else [], dtype=np.int64).tolist())
    corners |= set(cs.corner_overrides)
    if cs.normal_lock:
        for v in boundary.boundary_vertices:
            vclass[v] = VertexClass.BOUNDARY
            axis3[v] = al.axis_alignment_matrix(boundary.normals[v])
    if cs.feature_lock:
        for v in boundary.feature_vertices:
            if v in corners:
                continue
            vclass[v] = VertexClass.FEATURE_EDGE
            axis3[v] = al.axis_alignment_matrix(boundary.feature_tangents[v])
        for v in sorted(corners):
            vclass[v] = VertexClass.CORNER
            axis3[v] = _corner_frame(v, boundary, mesh)
    for v in cs.unlocked:
        vclass[v] = VertexClass.INTERIOR
        axis3[v] = np.eye(3)

    theta = np.zeros((n, 3))
    lam = np.ones((n, 3))
    lam_free = np.ones((n, 3), dtype=bool)
    targets = np.full((n, 3), np.nan)
    tw = np.ones(n)
    has_override = False

    def order(v, t):
        t = np.array(t, dtype=np.float64)
        if vclass[v] == VertexClass.FEATURE_EDGE and not np.isnan(t).any():
            k = int(np.argmax(t))
            t[[k, 2]] = t[[2, k]]
        return t

    for v, (t, w) in cs.soft_lambda.items():
        targets[v] = order(v, t)
        if w is not None:
            has_override = True
            tw[v] = w / weight if weight else w
    for v, t in cs.hard_lambda.items():
        t = order(v, t)
        fixed = ~np.isnan(t)
        lam[v, fixed] = t[fixed]
        lam_free[v, fixed] = False
        targets[v] = t
    for v, (th, la) in cs.hard_tensor.items():
        vclass[v] = VertexClass.HARD_FIXED
        axis3[v] = np.eye(3)
        theta[v] = th
        lam[v] = la
        targets[v] = la
    frames = make_frames(vclass, theta=theta, lam=lam, axis3=axis3, lambda_free=lam_free)
    return Problem(frames=frames, targets=targets, target_weights=tw if has_override else None, constraints=cs)
