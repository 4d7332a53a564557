"""3D point recovery from calibrated multi-view keypoints.

Linear (DLT), robust (RANSAC), exhaustive (grid search) and likelihood-based
(L-BFGS on the summed negative log keypoint densities) estimators.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .camera import MIN_DEPTH, Camera, project
from .density import KeypointObservation
from .errors import (
    AllViewsSkipped,
    DegenerateGeometry,
    InsufficientViews,
    NoConsensus,
)
from .optim import minimize_lbfgs


@dataclass(frozen=True, eq=False)
class ViewObservation:
    """One camera's predictions for a joint: image branch plus optional compiler branch."""

    camera: Camera
    image_branch: KeypointObservation
    compiler_branch: Optional[KeypointObservation] = None


@dataclass
class Point3D:
    xyz: np.ndarray
    converged: bool = True
    iterations: int = 0
    final_loss: float = float("nan")
    status: str = "ok"
    info: dict = field(default_factory=dict)

    @property
    def x(self):
        return self.xyz[0]

    @property
    def y(self):
        return self.xyz[1]

    @property
    def z(self):
        return self.xyz[2]


@dataclass(frozen=True)
class SolverConfig:
    tolerance_mm: float = 1e-3
    max_iterations: int = 100
    memory_pairs: int = 10
    init_mode: str = "dlt"  # dlt | zero | given

    def __post_init__(self):
        if not self.tolerance_mm > 0:
            raise ValueError("tolerance_mm must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.memory_pairs < 1:
            raise ValueError("memory_pairs must be >= 1")
        if self.init_mode not in ("dlt", "zero", "given"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")


# -- DLT ---------------------------------------------------------------------


def dlt(observations: Sequence[tuple[Camera, np.ndarray]]) -> Point3D:
    """Linear triangulation from ``(camera, pixel)`` pairs."""
    if len(observations) < 2:
        raise InsufficientViews(f"DLT needs >= 2 views, got {len(observations)}")
    rows = []
    for cam, uv in observations:
        P = cam.P
        u, v = np.asarray(uv, dtype=float)
        rows.append(u * P[2] - P[0])
        rows.append(v * P[2] - P[1])
    A = np.array(rows)
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    _, sv, vt = np.linalg.svd(A)
    if sv[-2] - sv[-1] <= 1e-12 * sv[0]:
        raise DegenerateGeometry("DLT system has a repeated smallest singular value")
    X = vt[-1]
    if abs(X[3]) < 1e-15 * np.linalg.norm(X[:3]):
        raise DegenerateGeometry("DLT solution is at infinity")
    return Point3D(X[:3] / X[3], converged=True, status="dlt")


def reprojection_errors(U, observations) -> np.ndarray:
    """Pixel distance per view; ``inf`` where ``U`` is behind the camera."""
    errs = np.full(len(observations), np.inf)
    for i, (cam, uv) in enumerate(observations):
        if cam.depth(U) > MIN_DEPTH:
            errs[i] = np.linalg.norm(project(U, cam) - np.asarray(uv, dtype=float))
    return errs


def ransac_triangulate(
    observations: Sequence[tuple[Camera, np.ndarray]],
    iters: int = 20,
    inlier_threshold_px: float = 5.0,
    rng_seed=0,
) -> Point3D:
    """Best two-view DLT hypothesis by inlier count, refit on its inliers."""
    n = len(observations)
    if n < 2:
        raise InsufficientViews(f"RANSAC needs >= 2 views, got {n}")
    rng = np.random.default_rng(rng_seed)
    best_key, best_inliers = None, None
    for it in range(iters):
        i, j = rng.choice(n, size=2, replace=False)
        try:
            hyp = dlt([observations[i], observations[j]]).xyz
        except DegenerateGeometry:
            continue
        errs = reprojection_errors(hyp, observations)
        inl = errs < inlier_threshold_px
        key = (-int(inl.sum()), float(errs[inl].sum()), it)
        if best_key is None or key < best_key:
            best_key, best_inliers = key, inl
    if best_inliers is None or best_inliers.sum() < 2:
        raise NoConsensus("no hypothesis reached two inliers")
    idx = np.flatnonzero(best_inliers)
    pt = dlt([observations[k] for k in idx])
    pt.status = "ransac"
    pt.info["inliers"] = idx.tolist()
    return pt


# -- likelihood objective ----------------------------------------------------


class MLEProblem:
    """Stacked, vectorized form of the negative log-likelihood over views.

    Loss at a 3D point ``U`` is ``-sum log P(proj(U) | branch)`` over every view
    and every branch the view carries.
    """

    def __init__(self, observations: Sequence[ViewObservation]):
        if not observations:
            raise InsufficientViews("no observations")
        self.observations = list(observations)
        cams = [o.camera for o in self.observations]
        self.R = np.stack([c.R for c in cams])
        self.t = np.stack([c.t for c in cams])
        intr = [c.intrinsics for c in cams]
        self.fx = np.array([k.fx for k in intr])
        self.fy = np.array([k.fy for k in intr])
        self.cx = np.array([k.cx for k in intr])
        self.cy = np.array([k.cy for k in intr])
        self.sk = np.array([k.skew for k in intr])
        # group (view, branch) terms by density model so each model runs once
        groups: dict[int, list] = {}
        models = {}
        for v, o in enumerate(self.observations):
            for br in (o.image_branch, o.compiler_branch):
                if br is None:
                    continue
                groups.setdefault(id(br.density), []).append((v, br))
                models[id(br.density)] = br.density
        self.groups = []
        for key, items in groups.items():
            views = np.array([v for v, _ in items])
            mu = np.stack([b.mu for _, b in items])
            sigma = np.stack([b.sigma for _, b in items])
            self.groups.append((models[key], views, mu, sigma, np.log(sigma).sum(axis=1)))

    @property
    def n_views(self) -> int:
        return len(self.observations)

    def _project(self, U):
        Xc = np.einsum("vij,...j->...vi", self.R, U) + self.t
        z = Xc[..., 2]
        ok = z > MIN_DEPTH
        zs = np.where(ok, z, 1.0)
        xn = Xc[..., 0] / zs
        yn = Xc[..., 1] / zs
        uv = np.stack([self.fx * xn + self.sk * yn + self.cx, self.fy * yn + self.cy], axis=-1)
        return Xc, zs, xn, yn, uv, ok

    def evaluate(self, U):
        """``(loss, grad, skipped_mask)`` at a single point."""
        U = np.asarray(U, dtype=float)
        Xc, z, xn, yn, uv, ok = self._project(U)
        if not ok.any():
            raise AllViewsSkipped("point is behind every camera")
        duv = np.zeros_like(uv)
        loss = 0.0
        for model, views, mu, sigma, logsig in self.groups:
            keep = ok[views]
            if not keep.any():
                continue
            vv = views[keep]
            r = (uv[vv] - mu[keep]) / sigma[keep]
            lp, g = model.std_logp(r, grad=True)
            loss -= float(np.sum(lp - logsig[keep]))
            np.add.at(duv, vv, -g / sigma[keep])
        # chain through pinhole division and rotation
        inv_z = 1.0 / z
        dxn = np.stack([inv_z, np.zeros_like(z), -xn * inv_z], axis=-1)
        dyn = np.stack([np.zeros_like(z), inv_z, -yn * inv_z], axis=-1)
        du_dX = self.fx[:, None] * dxn + self.sk[:, None] * dyn
        dv_dX = self.fy[:, None] * dyn
        gX = duv[:, :1] * du_dX + duv[:, 1:] * dv_dX
        gX[~ok] = 0.0
        grad = np.einsum("vi,vij->j", gX, self.R)
        return loss, grad, ~ok

    def loss_many(self, Us) -> np.ndarray:
        """Loss at each row of ``Us`` ``(N, 3)``; views behind the camera are skipped."""
        Us = np.asarray(Us, dtype=float)
        _, _, _, _, uv, ok = self._project(Us)
        loss = np.zeros(Us.shape[0])
        for model, views, mu, sigma, logsig in self.groups:
            r = (uv[:, views] - mu) / sigma
            lp = model.std_logp(r) - logsig
            loss -= np.where(ok[:, views], lp, 0.0).sum(axis=1)
        loss[~ok.any(axis=1)] = np.inf
        return loss


def eval_mle_loss(U, observations: Sequence[ViewObservation]):
    """Negative log-likelihood of 3D point ``U`` and its gradient."""
    loss, grad, _ = MLEProblem(observations).evaluate(U)
    return loss, grad


def _image_points(observations):
    return [(o.camera, o.image_branch.mu) for o in observations]


def _feasible_init(problem, observations):
    """Lowest-loss feasible start when the all-view DLT point lies behind every camera.

    Candidates are the two-view DLT points plus points on each view's
    back-projected ray at log-spaced depths, which are in front of that view by
    construction.
    """
    pix = _image_points(observations)
    cands = []
    for i in range(len(pix)):
        for j in range(i + 1, len(pix)):
            try:
                cands.append(dlt([pix[i], pix[j]]).xyz)
            except DegenerateGeometry:
                pass
    depths = np.geomspace(100.0, 1e5, 31)
    for cam, uv in pix:
        ray = cam.R.T @ np.linalg.solve(cam.K, np.array([uv[0], uv[1], 1.0]))
        cands.extend(cam.center + d * ray for d in depths)
    cands = np.array(cands)
    losses = problem.loss_many(cands)
    if not np.isfinite(losses).any():
        raise AllViewsSkipped("no feasible initial point")
    # a skipped view drops its term from the loss, so rank by views in front first
    skipped = (~problem._project(cands)[5]).sum(axis=1)
    best = np.lexsort((losses, skipped))[0]
    return cands[best]


def mle_refine(
    observations: Sequence[ViewObservation],
    config: SolverConfig = SolverConfig(),
    init=None,
    trace=None,
) -> Point3D:
    """Maximum-likelihood 3D point by L-BFGS, started from DLT (default) or zero.

    ``init`` is required for ``init_mode='given'``. If ``trace`` is a list,
    per-iteration records are appended to it.
    """
    if len(observations) < 2:
        raise InsufficientViews(f"need >= 2 views, got {len(observations)}")
    problem = MLEProblem(observations)
    fallback = False
    if config.init_mode == "dlt":
        U0 = dlt(_image_points(observations)).xyz
        if not np.isfinite(problem.loss_many(U0[None])[0]):
            U0 = _feasible_init(problem, observations)
            fallback = True
    elif config.init_mode == "zero":
        U0 = np.zeros(3)
    else:
        if init is None:
            raise ValueError("init_mode='given' requires an initial point")
        U0 = np.asarray(init, dtype=float)

    if not np.isfinite(problem.loss_many(U0[None])[0]):
        raise AllViewsSkipped("initial point is behind every camera")

    def fun(U):
        try:
            loss, grad, skipped = problem.evaluate(U)
        except AllViewsSkipped:
            return np.inf, np.zeros(3), problem.n_views
        return loss, grad, int(skipped.sum())

    res = minimize_lbfgs(
        fun,
        U0,
        tol=config.tolerance_mm,
        max_iter=config.max_iterations,
        memory=config.memory_pairs,
    )
    if trace is not None:
        trace.extend(res.trace)
    _, _, skipped = problem.evaluate(res.x)
    return Point3D(
        res.x,
        converged=res.converged,
        iterations=res.iterations,
        final_loss=res.f,
        status=res.status,
        info={
            "initial_loss": res.initial_f,
            "init": U0.tolist(),
            "init_fallback": fallback,
            "n_evals": res.n_evals,
            "skipped_views": np.flatnonzero(skipped).tolist(),
            "loss_trace": [res.initial_f] + [r["loss"] for r in res.trace],
        },
    )


def write_trace(records, path) -> None:
    """Solver trace as JSON Lines."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


# -- exhaustive oracle ---------------------------------------------------------


def _scan(problem, center, half, step, chunk=200_000):
    n = int(np.floor(half / step + 1e-9))
    offs = np.arange(-n, n + 1) * step
    grid = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = center + grid
    best_loss, best_pt = np.inf, center
    for s in range(0, len(pts), chunk):
        block = pts[s : s + chunk]
        losses = problem.loss_many(block)
        i = int(np.argmin(losses))
        if losses[i] < best_loss:
            best_loss, best_pt = float(losses[i]), block[i]
    return best_pt, best_loss


def grid_search_oracle(
    observations: Sequence[ViewObservation],
    center,
    half_extent_mm: float,
    coarse_step_mm: float,
    fine_step_mm: float,
    shrink: float = 5.0,
) -> Point3D:
    """Exhaustive minimization of the likelihood loss on nested cubic grids.

    A coarse scan covers ``center +- half_extent``; each subsequent scan covers
    ``+- previous step`` around the incumbent at a step ``shrink`` times finer,
    ending at ``fine_step_mm``. The center is always a candidate.
    """
    problem = MLEProblem(observations)
    center = np.asarray(center, dtype=float)
    best_loss = float(problem.loss_many(center[None])[0])
    best = center.copy()
    if half_extent_mm <= 0:
        return Point3D(best, final_loss=best_loss, status="grid")
    stages = 0
    step = coarse_step_mm
    pt, loss = _scan(problem, center, half_extent_mm, step)
    if loss < best_loss:
        best, best_loss = pt, loss
    stages += 1
    while step > fine_step_mm * (1 + 1e-9):
        new = max(step / shrink, fine_step_mm)
        pt, loss = _scan(problem, best, step, new)
        if loss < best_loss:
            best, best_loss = pt, loss
        step = new
        stages += 1
    return Point3D(np.array(best), final_loss=best_loss, status="grid", iterations=stages)
