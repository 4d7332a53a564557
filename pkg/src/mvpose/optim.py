"""Limited-memory BFGS with a strong-Wolfe line search.

The objective returns ``(f, g, penalty)`` where ``penalty`` is a
non-negative integer (e.g. number of views a trial point falls behind).
Trial points whose penalty exceeds the current iterate's, or whose ``f`` is
not finite, are treated as infeasible and the step is shortened.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LBFGSResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    converged: bool
    iterations: int
    status: str
    initial_f: float
    n_evals: int
    trace: list = field(default_factory=list)


class _Objective:
    def __init__(self, fun):
        self.fun = fun
        self.n_evals = 0

    def __call__(self, x):
        self.n_evals += 1
        f, g, pen = self.fun(x)
        return float(f), np.asarray(g, dtype=float), int(pen)


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating two points with slopes, or None."""
    d1 = da + db - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def strong_wolfe(obj, x, f0, g0, d, pen0, alpha1, c1=1e-4, c2=0.9, max_evals=40):
    """Return ``(alpha, (f, g, pen), ok)``; ``ok`` is False when no decrease was found."""
    dg0 = float(g0 @ d)
    evals = 0
    best = None  # best sufficient-decrease point seen

    def phi(a):
        nonlocal evals, best
        evals += 1
        f, g, pen = obj(x + a * d)
        if not np.isfinite(f) or pen > pen0:
            return None
        if f <= f0 + c1 * a * dg0 and (best is None or f < best[1][0]):
            best = (a, (f, g, pen))
        return f, float(g @ d), (f, g, pen)

    def zoom(lo, hi):
        # lo/hi are (alpha, f, dphi) tuples; lo satisfies sufficient decrease
        while evals < max_evals:
            a_lo, f_lo, d_lo = lo
            a_hi, f_hi, d_hi = hi
            width = a_hi - a_lo
            if abs(width) * np.linalg.norm(d) < 1e-14 * (1 + np.linalg.norm(x)):
                break
            a = None
            if d_hi is not None:
                a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
            lo_b, hi_b = sorted((a_lo + 0.1 * width, a_hi - 0.1 * width))
            if a is None or not np.isfinite(a) or not (lo_b <= a <= hi_b):
                a = a_lo + 0.5 * width
            res = phi(a)
            if res is None:
                hi = (a, np.inf, None)
                continue
            f, dphi, payload = res
            if f > f0 + c1 * a * dg0 or f >= f_lo:
                hi = (a, f, dphi)
            else:
                if abs(dphi) <= -c2 * dg0:
                    return a, payload
                if dphi * (a_hi - a_lo) >= 0:
                    hi = lo
                lo = (a, f, dphi)
        return None

    prev = (0.0, f0, dg0)
    a = alpha1
    while evals < max_evals:
        res = phi(a)
        if res is None:
            a = prev[0] + 0.5 * (a - prev[0])
            continue
        f, dphi, payload = res
        if f > f0 + c1 * a * dg0 or (prev[0] > 0 and f >= prev[1]):
            out = zoom(prev, (a, f, dphi))
            break
        if abs(dphi) <= -c2 * dg0:
            return a, payload, True
        if dphi >= 0:
            out = zoom((a, f, dphi), prev)
            break
        prev = (a, f, dphi)
        a *= 4.0
    else:
        out = None
    if out is not None:
        return out[0], out[1], True
    if best is not None:
        return best[0], best[1], True
    return a, None, False


def minimize_lbfgs(
    fun,
    x0,
    tol: float = 1e-3,
    max_iter: int = 100,
    memory: int = 10,
    c1: float = 1e-4,
    c2: float = 0.9,
    gtol: float = 1e-12,
) -> LBFGSResult:
    """Minimize ``fun`` from ``x0``; stop once an accepted step is shorter than ``tol``."""
    obj = _Objective(fun)
    x = np.array(x0, dtype=float)
    f, g, pen = obj(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the initial point")
    f_init = f
    s_hist: deque = deque(maxlen=memory)
    y_hist: deque = deque(maxlen=memory)
    trace = []
    converged = False
    status = "max_iterations"
    k = 0
    while k < max_iter:
        gnorm = np.linalg.norm(g)
        if gnorm <= gtol:
            converged, status = True, "gradient"
            break
        k += 1
        d = _two_loop(g, s_hist, y_hist)
        if g @ d >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
        alpha1 = 1.0 if s_hist else min(1.0, 1.0 / gnorm)
        alpha, payload, ok = strong_wolfe(obj, x, f, g, d, pen, alpha1, c1, c2)
        if not ok:
            # nothing better along d; a vanishing trial step counts as convergence, and so
            # does a predicted decrease (-g.d, about twice f - f*) below the resolution of f
            if alpha * np.linalg.norm(d) < tol:
                converged, status = True, "tolerance"
            elif -float(g @ d) <= 16 * np.finfo(float).eps * max(abs(f), np.finfo(float).tiny):
                converged, status = True, "precision"
            else:
                status = "line_search_failure"
            trace.append({"iter": k, "loss": f, "step_norm": 0.0, "skipped_views": pen})
            break
        f_new, g_new, pen = payload
        s = alpha * d
        y = g_new - g
        x = x + s
        f, g = f_new, g_new
        step = float(np.linalg.norm(s))
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
        trace.append({"iter": k, "loss": f, "step_norm": step, "skipped_views": pen})
        if step < tol:
            converged, status = True, "tolerance"
            break
    return LBFGSResult(x, f, g, converged, k, status, f_init, obj.n_evals, trace)


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((a, rho, s, y))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for a, rho, s, y in reversed(alphas):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q
