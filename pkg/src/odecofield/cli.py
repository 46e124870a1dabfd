"""Command line interface.

Exit codes: 0 success, 1 failed checks, 2 unreadable input, 3 invalid
input, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter

import numpy as np

from . import io, theory
from .errors import InputError, OdecoError, ValidationError
from .export import FieldArchive, export_glyphs, trace_integral_curves
from .guidance import ConstraintSet, build_problem, curvature_guidance, field_guidance, parse_guidance
from .solver import SolverConfig, optimize, smooth_field
from .surface import DEFAULT_FEATURE_ANGLE, analyze_boundary

logger = logging.getLogger("odecofield")


def _clamp(text):
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO,HI") from None
    return lo, hi


def _add_solver_flags(p):
    d = SolverConfig()
    g = p.add_argument_group("solver")
    g.add_argument("--psi", type=float, default=d.psi, help="guidance weight (default %(default)s)")
    g.add_argument("--kappa", type=float, default=d.kappa, help="fidelity weight for smoothing (default %(default)s)")
    g.add_argument("--epsilon", type=float, default=d.epsilon, help="perturbation scale (default %(default)s)")
    g.add_argument("--trial-tol", type=float, default=d.trial_tol, help="per-trial relative tolerance")
    g.add_argument("--final-tol", type=float, default=d.final_tol, help="final solve relative tolerance")
    g.add_argument("--stagnation", type=int, default=d.stagnation_trials,
                   help="stop after this many trials without improvement")
    g.add_argument("--seed", type=int, default=d.rng_seed)
    g.add_argument("--cold-start", action="store_true", help="random angles, no angle warm start")
    g.add_argument("--guidance-domain", choices=("sparse", "all"), default=d.guidance_domain,
                   help="penalize ratios only at guided vertices, or everywhere against the diffused ratios")
    g.add_argument("--clamp", type=_clamp, default=d.clamp, metavar="LO,HI", help="ratio range (default 1,50)")


def _add_mesh_flags(p):
    p.add_argument("mesh", help="tet mesh (.node/.ele pair or legacy VTK)")
    p.add_argument("--feature-angle", type=float, default=DEFAULT_FEATURE_ANGLE,
                   help="dihedral angle in degrees above which edges are sharp (default %(default)s)")


def _config(args):
    try:
        return SolverConfig(
            psi=args.psi, kappa=args.kappa, epsilon=args.epsilon, trial_tol=args.trial_tol,
            final_tol=args.final_tol, stagnation_trials=args.stagnation, rng_seed=args.seed,
            clamp=args.clamp, guidance_domain=args.guidance_domain, cold_start=args.cold_start,
        )
    except ValueError as e:
        raise ValidationError(str(e)) from None


def _read_field(path, n, name=None):
    _, _, pd, _ = io.read_vtk(path)
    cands = {k: v for k, v in pd.items() if np.shape(v)[1:] in ((3, 3), (9,))}
    if name is not None:
        if name not in cands:
            raise InputError(f"no 3x3 point array named {name!r}", path)
        arr = cands[name]
    elif "glyph" in cands:
        arr = cands["glyph"]
    elif len(cands) == 1:
        arr = next(iter(cands.values()))
    elif cands:
        raise ValidationError(f"several 3x3 point arrays ({', '.join(sorted(cands))}); pick one with --field-array",
                              path)
    else:
        raise InputError("file holds no 3x3 point array", path)
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, 3, 3)
    if len(arr) != n:
        raise ValidationError(f"field has {len(arr)} values for {n} vertices", path)
    return arr


def _write_report(path, data):
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _setup(args):
    mesh = io.load_tet_mesh(args.mesh)
    boundary = analyze_boundary(mesh, feature_angle=args.feature_angle)
    return mesh, boundary


def cmd_optimize(args):
    config = _config(args)
    mesh, boundary = _setup(args)
    cs = parse_guidance(args.guidance, mesh.n_vertices) if args.guidance else ConstraintSet()
    if args.curvature_guidance:
        extra = curvature_guidance(mesh, boundary, *config.clamp, lambda_z=args.lambda_z)
        # explicit entries in the guidance file win
        cs = cs.merged(extra, overwrite=False)
    cs.validate(mesh.n_vertices)
    init = None
    if args.field:
        init = field_guidance(mesh, _read_field(args.field, mesh.n_vertices, args.field_array),
                              args.value_map, config.clamp)
    frames, report = optimize(mesh, boundary, cs, config, init=init)
    problem = build_problem(mesh, boundary, cs, weight=config.psi)
    archive = FieldArchive(mesh, frames, targets=problem.targets, mode="design", weight=config.psi)
    archive.save(args.output)
    _write_report(args.report, report.to_dict())
    logger.info("wrote %s", args.output)
    return 0


def cmd_smooth(args):
    config = _config(args)
    mesh, boundary = _setup(args)
    raw = _read_field(args.field, mesh.n_vertices, args.field_array)
    init = field_guidance(mesh, raw, args.value_map, config.clamp)
    problem = None
    if args.lock_boundary or args.guidance:
        cs = parse_guidance(args.guidance, mesh.n_vertices) if args.guidance else ConstraintSet()
        problem = build_problem(mesh, boundary, cs, weight=config.psi)
    frames, report = smooth_field(mesh, init, config, problem)
    archive = FieldArchive(mesh, frames, mode="smooth", weight=config.kappa, f_in=init.f_in)
    archive.save(args.output)
    _write_report(args.report, report.to_dict())
    return 0


def cmd_check(args):
    results = theory.run_checks()
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    if args.report:
        _write_report(args.report, {r.name: {"passed": r.passed, "detail": r.detail} for r in results})
    return 0 if ok else 1


def cmd_report(args):
    archive = FieldArchive.load(args.archive)
    boundary = analyze_boundary(archive.mesh, feature_angle=args.feature_angle)
    n = archive.mesh.n_vertices
    bd = archive.breakdown()
    Ev = bd.E_vertex
    conf = theory.boundary_conformity_report(archive.mesh, archive.frames, boundary)
    if not args.per_vertex:
        for part in ("curvature", "feature"):
            conf[part] = {k: v for k, v in conf[part].items() if k not in ("vertices", "deviation_deg")}
    out = {
        "n_vertices": n,
        "n_tets": archive.mesh.n_tets,
        "energy": bd.as_dict(n),
        "vertex_energy": {"mean": float(Ev.mean()), "max": float(Ev.max()),
                          "p90": float(np.percentile(Ev, 90))},
        "conformity": conf,
    }
    _write_report(args.output, out)
    return 0


def cmd_glyphs(args):
    archive = FieldArchive.load(args.archive)
    _, _, idx = export_glyphs(archive, args.output, subsample=args.subsample, style=args.style, size=args.size)
    logger.info("wrote %d glyphs to %s", len(idx), args.output)
    return 0


def cmd_trace(args):
    archive = FieldArchive.load(args.archive)
    curves = trace_integral_curves(archive, n_seeds=args.n_seeds, step=args.step, max_steps=args.max_steps,
                                   seed=args.seed, workers=args.workers)
    curves.save_obj(args.output)
    counts = Counter(r for pair in curves.reasons for r in pair)
    logger.info("wrote %d curves to %s (%s)", len(curves.polylines), args.output,
                ", ".join(f"{k}: {v}" for k, v in sorted(counts.items())))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="odecofield", description="Anisotropic odeco frame fields on tet meshes.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="design a field from guidance")
    _add_mesh_flags(p)
    _add_solver_flags(p)
    p.add_argument("--guidance", help="guidance file (JSON)")
    p.add_argument("--curvature-guidance", action="store_true", help="ratio targets from principal curvatures")
    p.add_argument("--lambda-z", type=float, default=None, help="pin the normal ratio under curvature guidance")
    p.add_argument("--field", help="VTK file with a 3x3 tensor point array used as initialization")
    p.add_argument("--field-array", help="name of the tensor array (default: 'glyph' or the only one)")
    p.add_argument("--value-map", choices=("identity", "log_clamp"), default="identity")
    p.add_argument("-o", "--output", default="field.vtk")
    p.add_argument("-r", "--report", default="report.json", help="report path ('-' for stdout)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("smooth", help="smooth a noisy tensor field")
    _add_mesh_flags(p)
    _add_solver_flags(p)
    p.add_argument("--field", required=True, help="VTK file with a 3x3 tensor point array")
    p.add_argument("--field-array")
    p.add_argument("--value-map", choices=("identity", "log_clamp"), default="identity")
    p.add_argument("--guidance", help="guidance file whose lock options apply")
    p.add_argument("--lock-boundary", action="store_true", help="keep boundary frames normal aligned")
    p.add_argument("-o", "--output", default="smoothed.vtk")
    p.add_argument("-r", "--report", default="report.json")
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("check", help="run the shape-conformity self-checks")
    p.add_argument("-r", "--report")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("report", help="energy and boundary-conformity statistics of an archive")
    p.add_argument("archive")
    p.add_argument("--feature-angle", type=float, default=DEFAULT_FEATURE_ANGLE)
    p.add_argument("--per-vertex", action="store_true", help="include per-vertex deviation angles")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("glyphs", help="export glyph geometry as OBJ")
    p.add_argument("archive")
    p.add_argument("--style", choices=("cuboid", "ellipsoid"), default="cuboid")
    p.add_argument("--subsample", type=int, default=1, help="keep every k-th vertex")
    p.add_argument("--size", type=float, default=None, help="largest semi-axis (default 0.4 mean edge)")
    p.add_argument("-o", "--output", default="glyphs.obj")
    p.set_defaults(func=cmd_glyphs)

    p = sub.add_parser("trace", help="trace major-lobe integral curves as OBJ polylines")
    p.add_argument("archive")
    p.add_argument("--n-seeds", type=int, default=100)
    p.add_argument("--step", type=float, default=None, help="RK4 step (default quarter mean edge)")
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", default="curves.obj")
    p.set_defaults(func=cmd_trace)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OdecoError as e:
        print(f"odecofield: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"odecofield: error: {e}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
