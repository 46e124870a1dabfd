"""Limited-memory BFGS with a strong-Wolfe line search.

Lower bounds on a subset of variables are handled by projection: bound
components that would move further down are dropped from the search
direction, and the step length is capped so no bounded variable crosses its
floor.  The line-search function stays smooth along the capped ray, so the
Wolfe machinery applies unchanged.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError

logger = logging.getLogger(__name__)


@dataclass
class LBFGSResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    n_iter: int
    n_eval: int
    status: str
    history: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status in ("rel_tol", "gtol")


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), or None."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (gb + d2 - d1) / denom
    return t if np.isfinite(t) else None


def strong_wolfe(phi, f0, g0, alpha0=1.0, alpha_max=np.inf, c1=1e-4, c2=0.9, max_evals=30):
    """Line search for a step satisfying the strong Wolfe conditions.

    ``phi(alpha)`` returns ``(f, dphi, payload)``.  Returns
    ``(alpha, f, payload, n_evals)`` for the accepted step, or ``alpha=None``
    when no step with sufficient decrease is found.  A step capped at
    ``alpha_max`` is accepted on sufficient decrease alone.
    """
    if g0 >= 0:
        return None, f0, None, 0
    n = 0
    a_prev, f_prev, g_prev = 0.0, f0, g0
    a = min(alpha0, alpha_max)
    best = (None, f0, None)
    while n < max_evals:
        fa, ga, pay = phi(a)
        n += 1
        if not np.isfinite(fa):
            a = 0.5 * (a_prev + a)
            continue
        if fa <= f0 + c1 * a * g0 and fa < best[1]:
            best = (a, fa, pay)
        if fa > f0 + c1 * a * g0 or (n > 1 and fa >= f_prev):
            return _zoom(phi, f0, g0, a_prev, f_prev, g_prev, a, fa, ga, c1, c2, max_evals - n, n, best)
        if abs(ga) <= -c2 * g0:
            return a, fa, pay, n
        if ga >= 0:
            return _zoom(phi, f0, g0, a, fa, ga, a_prev, f_prev, g_prev, c1, c2, max_evals - n, n, best)
        if a >= alpha_max:
            return a, fa, pay, n
        a_prev, f_prev, g_prev = a, fa, ga
        a = min(2.0 * a, alpha_max)
    return best[0], best[1], best[2], n


def _zoom(phi, f0, g0, lo, flo, glo, hi, fhi, ghi, c1, c2, budget, n, best):
    for _ in range(max(budget, 0)):
        t = _cubic_min(lo, flo, glo, hi, fhi, ghi)
        left, right = min(lo, hi), max(lo, hi)
        width = right - left
        if t is None or not (left + 0.1 * width <= t <= right - 0.1 * width):
            t = 0.5 * (lo + hi)
        ft, gt, pay = phi(t)
        n += 1
        if np.isfinite(ft) and ft <= f0 + c1 * t * g0 and ft < best[1]:
            best = (t, ft, pay)
        if not np.isfinite(ft) or ft > f0 + c1 * t * g0 or ft >= flo:
            hi, fhi, ghi = t, ft, gt
        else:
            if abs(gt) <= -c2 * g0:
                return t, ft, pay, n
            if gt * (hi - lo) >= 0:
                hi, fhi, ghi = lo, flo, glo
            lo, flo, glo = t, ft, gt
        if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
            break
    return best[0], best[1], best[2], n


def lbfgs_minimize(fun, x0, rel_tol=1e-8, max_iters=500, memory=10, gtol=1e-12,
                   lower=None, bounded=None, callback=None, bound_tol=1e-10):
    """Minimize ``fun(x) -> (f, grad)`` by L-BFGS.

    Parameters
    ----------
    fun : callable
    x0 : array
    rel_tol : float
        Stop when ``|f_k - f_{k+1}| <= rel_tol * |f_{k+1}|``.
    max_iters : int
    memory : int
        Number of stored correction pairs.
    gtol : float
        Stop when the projected gradient's max-norm falls below this value.
    lower : float, optional
        Floor applied to the entries selected by ``bounded`` (bool mask).
    bound_tol : float
        Relative distance to the floor within which a bounded entry is
        treated as sitting on it.
    callback : callable, optional
        Called with ``(k, x, f)`` after every accepted iterate.

    Returns
    -------
    LBFGSResult
        ``history`` lists the objective at ``x0`` and every accepted iterate;
        it is non-increasing.  On line-search failure the best point so far
        is returned with status ``"line_search"``.
    """
    x = np.array(x0, dtype=np.float64)
    if lower is not None and bounded is not None and bounded.any():
        x[bounded] = np.maximum(x[bounded], lower)
    else:
        bounded = None
    f, g = fun(x)
    n_eval = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise SolverError("objective is not finite at the starting point")
    history = [float(f)]
    S, Y, RHO = deque(maxlen=memory), deque(maxlen=memory), deque(maxlen=memory)
    status = "max_iters"
    k = 0
    if x.size == 0:
        return LBFGSResult(x, float(f), g, 0, n_eval, "gtol", history)
    for k in range(1, max_iters + 1):
        active = near = None
        if bounded is not None:
            # entries this close to the floor count as on it; otherwise the
            # step cap below degenerates to round-off size
            near = bounded & (x <= lower + bound_tol * max(1.0, abs(lower)))
            active = near & (g > 0)
        pg = g if active is None else np.where(active, 0.0, g)
        if np.max(np.abs(pg)) <= gtol:
            status = "gtol"
            k -= 1
            break
        # two-loop recursion
        q = pg.copy()
        alphas = []
        for s, y, rho in reversed(list(zip(S, Y, RHO))):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        for (s, y, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        if near is not None:
            d[near & (d < 0)] = 0.0
        gd = g @ d
        if gd >= 0:
            # not a descent direction; restart from steepest descent
            S.clear(), Y.clear(), RHO.clear()
            d = -pg
            if near is not None:
                d[near & (d < 0)] = 0.0
            gd = g @ d
        alpha0 = 1.0 if S else min(1.0, 1.0 / np.linalg.norm(d))
        alpha_max = np.inf
        if bounded is not None:
            dec = bounded & (d < 0)
            if dec.any():
                alpha_max = float(np.min((x[dec] - lower) / -d[dec]))
                alpha_max = max(alpha_max, 0.0)
        if alpha_max <= 0:
            status = "line_search"
            k -= 1
            break

        def phi(a):
            xa = x + a * d
            if bounded is not None:
                xa[bounded] = np.maximum(xa[bounded], lower)
            fa, ga = fun(xa)
            return fa, ga @ d, (xa, ga)

        alpha, f_new, payload, ne = strong_wolfe(phi, f, gd, alpha0=alpha0, alpha_max=alpha_max)
        n_eval += ne
        if alpha is None or not f_new < f:
            status = "line_search"
            k -= 1
            break
        x_new, g_new = payload
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            S.append(s)
            Y.append(y)
            RHO.append(1.0 / sy)
        df = f - f_new
        x, f, g = x_new, f_new, g_new
        history.append(float(f))
        if callback is not None:
            callback(k, x, f)
        if df <= rel_tol * abs(f):
            status = "rel_tol"
            break
    return LBFGSResult(x=x, f=float(f), g=g, n_iter=k, n_eval=n_eval, status=status, history=history)
