"""End-to-end acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line and the run ends with a summary
section listing all criteria.
"""

import itertools
import time

import numpy as np

from cases import cube_case, cylinder_case, median_axis_deviation, noisy_field, twisted_bar_case
from odecofield import algebra as al
from odecofield import guidance, solver, surface, synthetic, theory
from odecofield.energy import Objective, VertexClass, realize
from odecofield.solver import SolverConfig


def _report(criterion, number, title, ok, detail):
    criterion(number, title, detail)
    print(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
    return ok


# --- 1 -------------------------------------------------------------------------

def test_criterion_1_algebra(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    mask = np.zeros((al.NCOEFF, al.NCOEFF), dtype=bool)
    for s in al.BAND_SLICES:
        mask[s, s] = True
    orth, off = 0.0, 0.0
    for th in rng.uniform(-np.pi, np.pi, (1000, 3)):
        D = al.rotation_operator(th)
        orth = max(orth, np.abs(D.T @ D - np.eye(al.NCOEFF)).max())
        off = max(off, np.abs(D[~mask]).max())
    equi = 0.0
    for _ in range(100):
        th = rng.uniform(-np.pi, np.pi, 3)
        f = al.canonical_tensor(rng.uniform(0.1, 5, 3))
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        equi = max(equi, abs(al.evaluate_polynomial(al.rotation_operator(th) @ f, d)
                             - al.evaluate_polynomial(f, al.euler_to_matrix(th).T @ d)))
    dirs = rng.standard_normal((2000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    recon = 0.0
    for lam in rng.uniform(0, 10, (20, 3)):
        recon = max(recon, np.abs(al.evaluate_polynomial(al.canonical_tensor(lam), dirs)
                                  - (lam * dirs ** 4).sum(axis=1)).max())
    octa = 0.0
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            P = np.zeros((3, 3))
            P[range(3), perm] = signs
            if np.linalg.det(P) < 0:
                continue
            for c in (1.0, 2.5):
                f = al.canonical_tensor((c, c, c))
                octa = max(octa, np.abs(al.rotation_operator_from_matrix(P) @ f - f).max())
    dt = time.perf_counter() - t0
    ok = orth < 1e-9 and off == 0 and equi < 1e-8 and recon < 1e-10 and octa < 1e-9 and dt < 10
    detail = (f"orth {orth:.1e}, off-block {off:.0e}, equivariance {equi:.1e}, reconstruction {recon:.1e}, "
              f"octahedral {octa:.1e}, {dt:.1f}s")
    assert _report(criterion, 1, "algebra suite", ok, detail)


# --- 2 -------------------------------------------------------------------------

def _fd_rel_error(obj, x, h=1e-5):
    f, g = obj(x)
    eps = np.finfo(float).eps
    worst = 0.0
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        fp, fm = obj(x + e)[0], obj(x - e)[0]
        fd = (fp - fm) / (2 * h)
        # below this magnitude the difference quotient cannot resolve 1e-5 relative
        floor = eps * (abs(fp) + abs(fm)) / (2 * h) / 1e-5
        worst = max(worst, abs(g[k] - fd) / max(abs(fd), floor, np.finfo(float).tiny))
    return worst


def _gradient_case(mesh, rng, mode):
    b = surface.analyze_boundary(mesh, 40, curvature=False)
    n = mesh.n_vertices
    verts = rng.permutation(n)
    cs = guidance.ConstraintSet()
    cs.hard_tensor[int(verts[0])] = (rng.uniform(-1, 1, 3), rng.uniform(1, 3, 3))
    cs.hard_lambda[int(verts[1])] = np.array([np.nan, rng.uniform(1, 3), np.nan])
    for v in verts[2:2 + max(1, n // 3)]:
        t = rng.uniform(1, 4, 3)
        t[rng.random(3) < 0.3] = np.nan
        cs.soft_lambda[int(v)] = (t, float(rng.uniform(5, 60)) if rng.random() < 0.3 else None)
    p = guidance.build_problem(mesh, b, cs, weight=50.0)
    fr = p.frames
    fr.theta = np.where(fr.free[:, :3], rng.uniform(-np.pi, np.pi, fr.theta.shape), fr.theta)
    fr.lam = np.where(fr.free[:, 3:], rng.uniform(0.5, 4, fr.lam.shape), fr.lam)
    if mode == "design":
        obj = Objective(mesh, fr, "design", 50.0, targets=p.targets, target_weights=p.target_weights)
    else:
        obj = Objective(mesh, fr, "smooth", 2.0, f_in=rng.standard_normal((n, al.NCOEFF)))
    return obj, set(np.unique(fr.vclass).tolist())


def test_criterion_2_gradient(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    meshes = [synthetic.single_tet(), synthetic.cube5(), synthetic.box_grid((1, 1, 1)),
              synthetic.box_grid((2, 2, 2)), synthetic.twisted_bar((4, 2, 2)), synthetic.l_bracket()]
    worst, classes, n_entries = 0.0, set(), 0
    for m in meshes:
        assert 1 <= m.n_tets <= 200
        for mode in ("design", "smooth"):
            obj, cl = _gradient_case(m, rng, mode)
            x = obj.x0()
            worst = max(worst, _fd_rel_error(obj, x))
            classes |= cl
            n_entries += len(x)
    dt = time.perf_counter() - t0
    all_classes = classes == {c.value for c in VertexClass}
    ok = worst < 1e-5 and all_classes and dt < 60
    names = ",".join(VertexClass(c).name.lower() for c in sorted(classes))
    detail = f"max rel error {worst:.1e} over {n_entries} entries, classes {names}, {dt:.1f}s"
    assert _report(criterion, 2, "gradient suite", ok, detail)


# --- 3 -------------------------------------------------------------------------

def test_criterion_3_feature_scan(criterion):
    t0 = time.perf_counter()
    cell = np.pi / 64
    worst = 0.0
    for delta in (0.6, 0.3, 0.5, 0.8):
        for lam in ((2, 1, 1), (5, 1, 1), (3, 2, 1)):
            phis, E = theory.pair_energy_scan(lam, delta * np.pi, 64)
            a, b = theory.scan_argmin(phis, E)
            worst = max(worst, theory.periodic_distance(a, 0.0), theory.periodic_distance(b, 0.0))
    dt = time.perf_counter() - t0
    ok = worst <= cell and dt < 30
    detail = f"max argmin distance {worst:.3g} rad, grid cell {cell:.3g}, {dt:.1f}s"
    assert _report(criterion, 3, "edge-alignment scan", ok, detail)


# --- 4 -------------------------------------------------------------------------

def test_criterion_4_boundary_predictions(criterion):
    t0 = time.perf_counter()
    iso = all(len({theory.g_k((c, c, c), k) for k in (1, 2, 3)}) == 1 for c in (0.5, 1.0, 2.0, 7.3))
    R, r = 3.0, 1.0
    torus = 0.0
    for lam, phi, tw in (((2, 1, 1), 0.0, 0.0), ((2, 1, 1), 0.9, 0.0), ((5, 1, 1), 0.4, 0.3),
                         ((3, 2, 1), 1.2, 0.5), ((1, 1, 3), 0.6, 0.2)):
        fd = theory.torus_field_gradient_norm(lam, phi, R, r, twist_rate=tw)
        pred = theory.predicted_gradient_norm(lam, phi, 1 / r, 1 / (R + r), tw ** 2).total
        torus = max(torus, abs(fd - pred) / pred)
    m, b, cs, lat = cylinder_case()
    fr, _ = solver.optimize(m, b, cs, SolverConfig(rng_seed=0))
    dev = median_axis_deviation(fr, lat)
    dt = time.perf_counter() - t0
    ok = iso and torus < 0.02 and dev < 10.0 and dt < 300
    detail = f"isotropic g equal: {iso}, patch rel error {torus:.1e}, cylinder median deviation {dev:.3f} deg, {dt:.1f}s"
    assert _report(criterion, 4, "boundary energy predictions", ok, detail)


# --- 5 -------------------------------------------------------------------------

def _monotone(rep):
    for stage in (solver.STAGE_THETA, solver.STAGE_JOINT):
        best = [t.best_E for t in rep.trials if t.stage == stage and not t.final]
        if any(y > x for x, y in zip(best, best[1:])):
            return False
    return all(t.E_after <= t.E_before for t in rep.trials if t.final)


def test_criterion_5_solver_contracts(criterion):
    t0 = time.perf_counter()
    monotone = True
    m, b, cs = cube_case()
    _, rep = solver.optimize(m, b, cs, SolverConfig(rng_seed=0))
    cube = rep.breakdown["normalized"]["E_s"]
    monotone &= _monotone(rep)

    m, b, cs = twisted_bar_case()
    warm, cold = [], []
    for s in range(5):
        _, rw = solver.optimize(m, b, cs, SolverConfig(rng_seed=s))
        _, rc = solver.optimize(m, b, cs, SolverConfig(rng_seed=s, cold_start=True))
        warm.append(rw.breakdown["E_T"])
        cold.append(rc.breakdown["E_T"])
        monotone &= _monotone(rw) and _monotone(rc)
    warm_ok = np.median(warm) <= np.median(cold)

    # hard constraints and determinism on one constrained run
    hv = int(np.argmin(np.abs(m.vertices - m.vertices.mean(0)).sum(1)))
    cs.hard_tensor[hv] = (np.array([0.3, 0.1, -0.2]), np.array([2.0, 1.0, 1.5]))
    hl = int(np.nonzero(m.vertices[:, 0] > m.vertices[:, 0].max() - 1e-9)[0][0])
    cs.hard_lambda[hl] = np.array([np.nan, np.nan, 2.5])
    F_hard = realize(guidance.build_problem(m, b, cs).frames)[hv].copy()
    fr1, r1 = solver.optimize(m, b, cs, SolverConfig(rng_seed=11))
    fr2, r2 = solver.optimize(m, b, cs, SolverConfig(rng_seed=11))
    hard = np.array_equal(realize(fr1)[hv], F_hard) and fr1.lam[hl, 2] == 2.5
    same = r1.to_json(include_timing=False) == r2.to_json(include_timing=False)
    monotone &= _monotone(r1)
    dt = time.perf_counter() - t0
    ok = monotone and hard and same and cube < 1e-6 and warm_ok and dt < 900
    detail = (f"monotone {monotone}, hard exact {hard}, deterministic {same}, cube E_s/n {cube:.1e}, "
              f"warm median {np.median(warm):.6f} vs cold {np.median(cold):.6f}, {dt:.1f}s")
    assert _report(criterion, 5, "solver contracts", ok, detail)


# --- 6 -------------------------------------------------------------------------

def test_criterion_6_diffusion(criterion):
    t0 = time.perf_counter()
    pinned, overshoot = True, 0.0
    for s in range(20):
        rng = np.random.default_rng(100 + s)
        m = synthetic.box_grid((4, 4, 4)) if s % 2 == 0 else synthetic.ball(level=1, shells=2)
        targets = np.full((m.n_vertices, 3), np.nan)
        for c in range(3):
            idx = rng.choice(m.n_vertices, int(rng.integers(2, 10)), replace=False)
            targets[idx, c] = rng.uniform(1, 20, len(idx))
        t = 10 * m.mean_edge_length ** 2
        for clip in (False, True):
            for c in range(3):
                idx = np.nonzero(~np.isnan(targets[:, c]))[0]
                u = solver.diffuse_scalar(m, idx, targets[idx, c], t, clip=clip)
                pinned &= np.array_equal(u[idx], targets[idx, c])
                overshoot = max(overshoot, u.max() - targets[idx, c].max(), targets[idx, c].min() - u.min())
        out = solver.diffuse_lambda(m, targets)
        pinned &= np.array_equal(out[~np.isnan(targets)], targets[~np.isnan(targets)])
    dt = time.perf_counter() - t0
    ok = pinned and overshoot <= 1e-8 and dt < 30
    detail = f"pins exact {pinned}, max overshoot {overshoot:.1e} (unclipped solve included), {dt:.1f}s"
    assert _report(criterion, 6, "diffusion warm start", ok, detail)


# --- 7 -------------------------------------------------------------------------

def test_criterion_7_smoothing(criterion):
    t0 = time.perf_counter()
    m = synthetic.box_grid((16, 16, 16), hi=(16.0, 16.0, 16.0))
    S, S0 = noisy_field(m, sigma_deg=10.0, lam_noise=0.2, seed=0)
    init = guidance.field_guidance(m, S)
    clean = guidance.field_guidance(m, S0)
    noise = float(np.sum((init.f_in - clean.f_in) ** 2))
    E_in = None
    E_dis = {}
    reduction = None
    for kappa in (1.0, 2.0, 4.0):
        _, rep = solver.smooth_field(m, init, SolverConfig(kappa=kappa))
        E_in = rep.extra["input"]["E_s"]
        E_dis[kappa] = rep.breakdown["E_dis"]
        if kappa == 2.0:
            reduction = 1 - rep.breakdown["E_s"] / E_in
    dt = time.perf_counter() - t0
    mono = E_dis[1.0] >= E_dis[2.0] >= E_dis[4.0]
    ok = reduction >= 0.5 and E_dis[2.0] < noise and mono and dt < 300
    detail = (f"{m.n_vertices} vertices, E_s reduced {100 * reduction:.1f}%, E_dis {E_dis[2.0]:.1f} vs noise "
              f"{noise:.1f}, E_dis over kappa 1/2/4: {E_dis[1.0]:.1f}/{E_dis[2.0]:.1f}/{E_dis[4.0]:.1f}, {dt:.1f}s")
    assert _report(criterion, 7, "smoothing mode", ok, detail)


# --- 8 -------------------------------------------------------------------------

def test_criterion_8_defaults(criterion):
    import inspect

    from odecofield.cli import build_parser

    c = SolverConfig()
    want = dict(psi=50.0, kappa=2.0, epsilon=0.15, trial_tol=1e-3, final_tol=1e-8, stagnation_trials=5,
                clamp=(1.0, 50.0))
    got = {k: getattr(c, k) for k in want}
    fields_ok = got == want
    # the same defaults reach the solver entry points and the command line
    sig_ok = all(inspect.signature(f).parameters["config"].default is None
                 for f in (solver.optimize, solver.smooth_field))
    args = build_parser().parse_args(["optimize", "mesh.node"])
    cli = dict(psi=args.psi, kappa=args.kappa, epsilon=args.epsilon, trial_tol=args.trial_tol,
               final_tol=args.final_tol, stagnation_trials=args.stagnation, clamp=tuple(args.clamp))
    cli_ok = cli == want
    clamp_ok = guidance.DEFAULT_CLAMP == (1.0, 50.0)
    ok = fields_ok and sig_ok and cli_ok and clamp_ok
    detail = ", ".join(f"{k}={v}" for k, v in got.items()) + f"; cli matches {cli_ok}"
    assert _report(criterion, 8, "default parameters", ok, detail)
