"""Warm-started optimization pipeline and the smoothing sub-problem.

Design pipeline: ratios are diffused from the guided vertices, orientations
are then optimized with ratios frozen, and finally all free parameters are
optimized jointly.  The last two stages run *trials*: one L-BFGS solve
followed by one random perturbation of the best state found so far, until
the best energy stops improving.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from . import algebra as al
from .energy import LAMBDA_FLOOR, Objective, VertexClass, make_frames, realize, smoothness_energy
from .errors import SolverError
from .guidance import build_problem
from .lbfgs import lbfgs_minimize

logger = logging.getLogger(__name__)

STAGE_THETA = "theta_warm"
STAGE_JOINT = "joint"
STAGE_SMOOTH = "smooth"


@dataclass
class SolverConfig:
    """Solver parameters.

    The trial loop stops after ``stagnation_trials`` consecutive trials whose
    energy does not beat the best so far by a relative margin of
    ``trial_tol``, or at the per-stage trial caps.
    """

    psi: float = 50.0
    kappa: float = 2.0
    epsilon: float = 0.15
    trial_tol: float = 1e-3
    final_tol: float = 1e-8
    stagnation_trials: int = 5
    lbfgs_memory: int = 10
    max_trial_iters: int = 500
    max_final_iters: int = 2000
    rng_seed: int = 0
    diffusion_time: float = 10.0
    clamp: tuple = (1.0, 50.0)
    theta_trial_cap: int = 20
    joint_trial_cap: int = 30
    lambda_floor: float = LAMBDA_FLOOR
    guidance_domain: str = "sparse"
    cold_start: bool = False

    def __post_init__(self):
        for name in ("psi", "kappa", "trial_tol", "final_tol", "diffusion_time", "lambda_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        for name in ("stagnation_trials", "lbfgs_memory", "max_trial_iters", "max_final_iters",
                     "theta_trial_cap", "joint_trial_cap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.guidance_domain not in ("sparse", "all"):
            raise ValueError("guidance_domain must be 'sparse' or 'all'")
        lo, hi = self.clamp
        if not 0 < lo <= hi:
            raise ValueError("clamp must satisfy 0 < lo <= hi")
        self.clamp = (float(lo), float(hi))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["clamp"] = list(self.clamp)
        return d


@dataclass
class TrialRecord:
    trial_index: int
    stage: str
    E_before: float
    E_after: float
    best_E: float
    iterations: int
    evaluations: int
    status: str
    improved: bool
    perturbed: bool
    final: bool = False
    wall_time: float = 0.0

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("wall_time")
        return d


@dataclass
class SolverReport:
    seed: int
    config: dict
    trials: list = field(default_factory=list)
    breakdown: dict = field(default_factory=dict)
    initial_breakdown: dict = field(default_factory=dict)
    vertex_energy: np.ndarray | None = None
    n_vertices: int = 0
    timing: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def best_energies(self, stage=None):
        return [t.best_E for t in self.trials if stage is None or t.stage == stage]

    def to_dict(self, include_timing=True):
        out = {
            "seed": self.seed,
            "config": self.config,
            "n_vertices": self.n_vertices,
            "initial": self.initial_breakdown,
            "final": self.breakdown,
            "trials": [t.to_dict() for t in self.trials],
        }
        if self.vertex_energy is not None:
            out["vertex_energy"] = [float(v) for v in self.vertex_energy]
        out.update(self.extra)
        if include_timing:
            out["timing"] = dict(self.timing, trials=[t.wall_time for t in self.trials])
        return out

    def to_json(self, include_timing=True):
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# ratio diffusion


def _mass_matrix(mesh):
    return sparse.diags(mesh.lumped_mass)


def diffuse_scalar(mesh, idx, values, t, clip=True):
    """Implicit-Euler heat step with Dirichlet values at ``idx``.

    The initial state copies each free vertex's nearest pinned value; one
    step of ``(M + t L) u = M u0`` is taken with pinned rows held fixed.
    With ``clip`` the result is clamped to the range of the pinned values,
    which guards against overshoot from negative cotangent weights.
    """
    n = mesh.n_vertices
    idx = np.asarray(idx, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if len(idx) == 0:
        raise SolverError("diffusion needs at least one target vertex")
    u = np.empty(n)
    tree = cKDTree(mesh.vertices[idx])
    _, near = tree.query(mesh.vertices)
    u[:] = values[near]
    u[idx] = values
    free = np.ones(n, dtype=bool)
    free[idx] = False
    if not free.any():
        return u
    A = (_mass_matrix(mesh) + t * mesh.laplacian).tocsr()
    rhs = mesh.lumped_mass * u
    fi = np.nonzero(free)[0]
    Aff = A[fi][:, fi].tocsc()
    b = rhs[fi] - A[fi][:, idx] @ values
    sol = spsolve(Aff, b)
    if not np.all(np.isfinite(sol)):
        raise SolverError("diffusion system is singular")
    u[fi] = sol
    if clip:
        lo, hi = values.min(), values.max()
        over = max(float(np.max(u - hi)), float(np.max(lo - u)), 0.0)
        if over > 1e-8:
            logger.debug("diffusion overshoot %.3g clipped", over)
        u = np.clip(u, lo, hi)
        u[idx] = values
    return u


def diffuse_lambda(mesh, targets, config=None, clip=True, default=None):
    """Spread sparse ratio targets over the volume, one component at a time.

    ``targets`` is either a (n, 3) array with NaN for unguided entries or a
    mapping vertex -> 3-vector.  Components without any target raise unless
    ``default`` is given, in which case they are filled with it.
    """
    config = config or SolverConfig()
    n = mesh.n_vertices
    if isinstance(targets, dict):
        arr = np.full((n, 3), np.nan)
        for v, t in targets.items():
            arr[v] = t
        targets = arr
    targets = np.asarray(targets, dtype=np.float64)
    t = config.diffusion_time * mesh.mean_edge_length ** 2
    out = np.empty((n, 3))
    for c in range(3):
        idx = np.nonzero(~np.isnan(targets[:, c]))[0]
        if len(idx) == 0:
            if default is None:
                raise SolverError("no stretching-ratio targets to diffuse")
            out[:, c] = default
            continue
        out[:, c] = diffuse_scalar(mesh, idx, targets[idx, c], t, clip=clip)
    return out


# ---------------------------------------------------------------------------
# perturbation


def trial_rng(seed, stage, trial):
    """Counter-based generator for one (seed, stage, trial) triple."""
    stage_id = {STAGE_THETA: 1, STAGE_JOINT: 2, "cold": 3}.get(stage, 0)
    ss = np.random.SeedSequence([int(seed), stage_id, int(trial)])
    return np.random.Generator(np.random.Philox(ss))


def perturbation_amount(E_si, epsilon, rng, slots=None):
    """Random offsets ``(E_i / max E + 1)^2 * U(-eps, eps)``.

    Returns shape (n,) or, with ``slots``, (n, slots) independent draws per
    vertex.  An all-zero energy gives the unit factor everywhere.
    """
    E_si = np.asarray(E_si, dtype=np.float64)
    m = E_si.max() if E_si.size else 0.0
    ratio = E_si / m if m > 0 else np.zeros_like(E_si)
    factor = (ratio + 1.0) ** 2
    shape = E_si.shape if slots is None else (E_si.shape[0], slots)
    u = rng.uniform(-epsilon, epsilon, size=shape)
    return factor * u if slots is None else factor[:, None] * u


def _perturb(x, layout, E_si, epsilon, rng, floor):
    draws = perturbation_amount(E_si, epsilon, rng, slots=6)
    out = x + draws[layout.vertex, layout.slot]
    lam = layout.is_lambda()
    out[lam] = np.maximum(out[lam], floor)
    return out


# ---------------------------------------------------------------------------
# trial loop


def _run_trials(obj, x0, config, stage, cap, report):
    layout = obj.layout
    bounded = layout.is_lambda()
    x = x0.copy()
    best_x, best_f = None, np.inf
    stagnant = 0
    for trial in range(cap):
        t0 = time.perf_counter()
        f_before = obj(x)[0]
        res = lbfgs_minimize(obj, x, rel_tol=config.trial_tol, max_iters=config.max_trial_iters,
                             memory=config.lbfgs_memory, lower=config.lambda_floor, bounded=bounded)
        improved = best_x is None or res.f < best_f - config.trial_tol * abs(best_f)
        if res.f < best_f:
            best_x, best_f = res.x.copy(), res.f
        stagnant = 0 if improved else stagnant + 1
        done = stagnant >= config.stagnation_trials or trial == cap - 1 or layout.size == 0
        perturbed = not done and config.epsilon > 0
        if perturbed:
            bd = obj.breakdown(best_x)
            x = _perturb(best_x, layout, bd.E_vertex, config.epsilon,
                         trial_rng(config.rng_seed, stage, trial), config.lambda_floor)
        report.trials.append(TrialRecord(
            trial_index=trial, stage=stage, E_before=float(f_before), E_after=res.f, best_E=float(best_f),
            iterations=res.n_iter, evaluations=res.n_eval, status=res.status, improved=bool(improved),
            perturbed=perturbed, wall_time=time.perf_counter() - t0))
        logger.info("%s trial %d: E_T %.6g -> %.6g (best %.6g, %s)", stage, trial, f_before, res.f, best_f,
                    res.status)
        if done:
            break
    return best_x, best_f


def _final_solve(obj, x, config, stage, report):
    t0 = time.perf_counter()
    f_before = obj(x)[0]
    res = lbfgs_minimize(obj, x, rel_tol=config.final_tol, max_iters=config.max_final_iters,
                         memory=config.lbfgs_memory, lower=config.lambda_floor, bounded=obj.layout.is_lambda())
    report.trials.append(TrialRecord(
        trial_index=len([t for t in report.trials if t.stage == stage]), stage=stage, E_before=float(f_before),
        E_after=res.f, best_E=min(res.f, float(f_before)), iterations=res.n_iter, evaluations=res.n_eval,
        status=res.status, improved=res.f < f_before, perturbed=False, final=True,
        wall_time=time.perf_counter() - t0))
    return res.x, res.f


def _new_report(config, n):
    return SolverReport(seed=int(config.rng_seed), config=config.to_dict(), n_vertices=int(n))


def warm_start_theta(mesh, frames, targets, config=None, target_weights=None, report=None):
    """Optimize orientations with ratios frozen; returns updated frames."""
    config = config or SolverConfig()
    report = report or _new_report(config, mesh.n_vertices)
    free = frames.free.copy()
    free[:, 3:] = False
    obj = Objective(mesh, frames, "design", config.psi, targets, target_weights, free=free)
    t0 = time.perf_counter()
    x, _ = _run_trials(obj, obj.x0(), config, STAGE_THETA, config.theta_trial_cap, report)
    report.timing[STAGE_THETA] = time.perf_counter() - t0
    return obj.frames_at(x), report


def joint_optimize(mesh, frames, targets, config=None, target_weights=None, report=None):
    """Trials over all free parameters, then one tight solve from the best state."""
    config = config or SolverConfig()
    report = report or _new_report(config, mesh.n_vertices)
    obj = Objective(mesh, frames, "design", config.psi, targets, target_weights)
    t0 = time.perf_counter()
    x, _ = _run_trials(obj, obj.x0(), config, STAGE_JOINT, config.joint_trial_cap, report)
    x, _ = _final_solve(obj, x, config, STAGE_JOINT, report)
    report.timing[STAGE_JOINT] = time.perf_counter() - t0
    out = obj.frames_at(x)
    bd = obj.breakdown(x)
    report.breakdown = bd.as_dict(mesh.n_vertices)
    report.vertex_energy = bd.E_vertex
    return out, report


def cold_start_theta(frames, seed):
    """Uniform random angles in [-pi, pi] on every free orientation slot."""
    rng = trial_rng(seed, "cold", 0)
    out = frames.copy()
    draws = rng.uniform(-np.pi, np.pi, size=(frames.n_vertices, 3))
    out.theta = np.where(frames.free[:, :3], draws, frames.theta)
    return out


def boundary_aligned_start(mesh, boundary, frames):
    """Orientation initialization propagated from the boundary.

    Normal-aligned vertices turn their x lobe toward a principal curvature
    direction (the one the ratio-dependent preference selects, the minimum
    direction when there is none).  Free interior vertices then copy the
    frame of the nearest locked boundary vertex.  Without curvature data
    the boundary twist stays at zero.
    """
    from .theory import AlignmentPreference, curvature_alignment_predicate

    out = frames.copy()
    if boundary.curvature_dirs is not None:
        for v in np.nonzero(frames.vclass == VertexClass.BOUNDARY)[0]:
            pref = curvature_alignment_predicate(frames.lam[v])
            big = 0 if frames.lam[v, 0] >= frames.lam[v, 1] else 1
            d = boundary.curvature_dirs[v, 0 if pref is AlignmentPreference.ALIGN_LARGE_LOBE_TO_MAX_CURV else 1]
            dl = frames.axis3[v].T @ d
            ang = np.arctan2(dl[1], dl[0])
            out.theta[v, 2] = ang - (np.pi / 2 if big == 1 else 0.0)
    locked = np.isin(frames.vclass, (VertexClass.BOUNDARY, VertexClass.FEATURE_EDGE, VertexClass.CORNER))
    free = (frames.vclass == VertexClass.INTERIOR) & frames.free[:, :3].all(axis=1)
    if locked.any() and free.any():
        src = np.nonzero(locked)[0]
        R = out.rotations()
        _, near = cKDTree(mesh.vertices[src]).query(mesh.vertices[free])
        for v, s in zip(np.nonzero(free)[0], src[near]):
            out.theta[v] = al.matrix_to_euler(frames.axis3[v].T @ R[s])
    return out


def initial_ratios(mesh, problem, config):
    """Diffused ratios respecting hard values and the positivity floor."""
    lam = diffuse_lambda(mesh, problem.targets, config, default=1.0)
    frames = problem.frames.copy()
    fixed = ~frames.free[:, 3:]
    frames.lam = np.where(fixed, frames.lam, np.maximum(lam, config.lambda_floor))
    return frames, lam


def optimize(mesh, boundary, constraints=None, config=None, init=None):
    """Full design pipeline; returns ``(frames, report)``.

    ``init`` (a :class:`~odecofield.guidance.FieldInit`) replaces the
    diffused ratios and the aligned start with a precomputed field on every
    free DoF.
    """
    config = config or SolverConfig()
    t_start = time.perf_counter()
    problem = build_problem(mesh, boundary, constraints, weight=config.psi)
    report = _new_report(config, mesh.n_vertices)
    t0 = time.perf_counter()
    frames, lam_diffused = initial_ratios(mesh, problem, config)
    report.timing["diffusion"] = time.perf_counter() - t0
    targets = problem.targets
    if config.guidance_domain == "all":
        targets = np.where(np.isnan(targets), lam_diffused, targets)
    tw = problem.target_weights
    if init is not None:
        frames = frames_from_field(frames, init)
        frames.lam = np.where(frames.free[:, 3:], np.maximum(frames.lam, config.lambda_floor), frames.lam)
    elif config.cold_start:
        frames = cold_start_theta(frames, config.rng_seed)
    else:
        frames = boundary_aligned_start(mesh, boundary, frames)
    init = Objective(mesh, frames, "design", config.psi, targets, tw).breakdown()
    report.initial_breakdown = init.as_dict(mesh.n_vertices)
    if not config.cold_start:
        frames, _ = warm_start_theta(mesh, frames, targets, config, tw, report)
    frames, _ = joint_optimize(mesh, frames, targets, config, tw, report)
    report.extra["vertex_classes"] = {c.name.lower(): int(np.sum(frames.vclass == c)) for c in VertexClass}
    report.timing["total"] = time.perf_counter() - t_start
    return frames, report


# ---------------------------------------------------------------------------
# smoothing


def _locked_init(axis3, R_in, lam_in):
    """Best locked-frame approximation of an input frame.

    The input axis closest to the fixed z direction gets the z slot; the
    twist angle follows the first remaining axis.
    """
    Rl = axis3.T @ R_in
    k = int(np.argmax(np.abs(Rl[2])))
    rest = [j for j in range(3) if j != k]
    lam = np.array([lam_in[rest[0]], lam_in[rest[1]], lam_in[k]])
    a = Rl[:, rest[0]]
    return np.arctan2(a[1], a[0]), lam


def frames_from_field(frames, init):
    """Copy of ``frames`` with free DoF taken from a field initialization."""
    frames = frames.copy()
    R_in = al.euler_to_matrices(init.theta)
    for i in range(len(frames.theta)):
        c = frames.vclass[i]
        if c == VertexClass.INTERIOR and np.array_equal(frames.axis3[i], np.eye(3)):
            frames.theta[i] = np.where(frames.free[i, :3], init.theta[i], frames.theta[i])
            frames.lam[i] = np.where(frames.free[i, 3:], init.lam[i], frames.lam[i])
        elif c in (VertexClass.BOUNDARY, VertexClass.FEATURE_EDGE, VertexClass.CORNER):
            tz, lam = _locked_init(frames.axis3[i], R_in[i], init.lam[i])
            if frames.free[i, 2]:
                frames.theta[i] = (0.0, 0.0, tz)
            frames.lam[i] = np.where(frames.free[i, 3:], lam, frames.lam[i])
    return frames


def smooth_field(mesh, init, config=None, problem=None):
    """Single L-BFGS solve of ``E_s + kappa E_dis`` from an input field.

    Parameters
    ----------
    init : guidance.FieldInit
        Initial angles/ratios and the reference coefficients ``f_in``.
    problem : guidance.Problem, optional
        Supplies boundary locks; by default every vertex is free.
    """
    config = config or SolverConfig()
    t_start = time.perf_counter()
    n = mesh.n_vertices
    if problem is None:
        frames = make_frames(np.zeros(n, dtype=np.int64), theta=init.theta, lam=init.lam)
    else:
        frames = frames_from_field(problem.frames, init)
    frames.lam = np.where(frames.free[:, 3:], np.maximum(frames.lam, config.lambda_floor), frames.lam)
    report = _new_report(config, n)
    obj = Objective(mesh, frames, "smooth", config.kappa, f_in=init.f_in)
    bd0 = obj.breakdown()
    report.initial_breakdown = bd0.as_dict(n)
    x, _ = _final_solve(obj, obj.x0(), config, STAGE_SMOOTH, report)
    bd = obj.breakdown(x)
    report.breakdown = bd.as_dict(n)
    report.vertex_energy = bd.E_vertex
    E_s_in = float(obj.breakdown(obj.x0()).E_s)
    # energy of the unmodified input field itself
    E_s_ref, _ = smoothness_energy(mesh, None, F=init.f_in)
    report.extra["input"] = {"E_s": float(E_s_ref), "E_s_initial_frames": E_s_in}
    report.timing["total"] = time.perf_counter() - t_start
    return obj.frames_at(x), report


def field_energy(mesh, frames):
    """Smoothness energy of realized frames (convenience)."""
    return smoothness_energy(mesh, frames, F=realize(frames))[0]
