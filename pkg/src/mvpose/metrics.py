"""3D pose error metrics: MPJPE and its aligned variants.

All alignments are computed per frame over that frame's valid joints.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, ShapeMismatch


@dataclass
class PoseSequence3D:
    joints: np.ndarray  # (T, J, 3) mm
    valid: np.ndarray | None = None  # (T, J) bool

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float)
        if self.joints.ndim == 2:
            self.joints = self.joints[None]
        if self.joints.ndim != 3 or self.joints.shape[-1] != 3:
            raise ShapeMismatch(f"joints must be (T, J, 3), got {self.joints.shape}")
        if self.valid is None:
            self.valid = np.all(np.isfinite(self.joints), axis=-1)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.joints.shape[:2]:
            raise ShapeMismatch("validity mask does not match joints")


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, X):
        return self.scale * np.asarray(X) @ self.rotation.T + self.translation


def _as_seq(x) -> PoseSequence3D:
    return x if isinstance(x, PoseSequence3D) else PoseSequence3D(x)


def _pair(pred, gt):
    pred, gt = _as_seq(pred), _as_seq(gt)
    if pred.joints.shape != gt.joints.shape:
        raise ShapeMismatch(f"pred {pred.joints.shape} vs gt {gt.joints.shape}")
    mask = pred.valid & gt.valid
    return pred.joints, gt.joints, mask


def _mean_err(P, G, mask):
    if not mask.any():
        raise ShapeMismatch("no valid joints to compare")
    d = np.linalg.norm(np.where(mask[..., None], P - G, 0.0), axis=-1)
    return float(d[mask].mean())


def joint_errors(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint Euclidean errors ``(T, J)`` and the mask they are valid under."""
    P, G, mask = _pair(pred, gt)
    d = np.linalg.norm(np.where(mask[..., None], P - G, 0.0), axis=-1)
    return np.where(mask, d, np.nan), mask


def mpjpe(pred, gt) -> float:
    P, G, mask = _pair(pred, gt)
    return _mean_err(P, G, mask)


def _centroids(X, mask):
    w = mask[..., None].astype(float)
    n = np.maximum(w.sum(axis=1, keepdims=True), 1.0)
    return (np.where(mask[..., None], X, 0.0)).sum(axis=1, keepdims=True) / n


def ta_mpjpe(pred, gt) -> float:
    """MPJPE after per-frame centroid alignment."""
    P, G, mask = _pair(pred, gt)
    Pc = P - _centroids(P, mask)
    Gc = G - _centroids(G, mask)
    return _mean_err(Pc, Gc, mask)


def n_mpjpe(pred, gt) -> float:
    """MPJPE after per-frame centering and least-squares rescaling of pred."""
    P, G, mask = _pair(pred, gt)
    Pc = np.where(mask[..., None], P - _centroids(P, mask), 0.0)
    Gc = np.where(mask[..., None], G - _centroids(G, mask), 0.0)
    num = np.sum(Pc * Gc, axis=(1, 2))
    den = np.sum(Pc * Pc, axis=(1, 2))
    s = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
    return _mean_err(s[:, None, None] * Pc, Gc, mask)


def similarity_fit(X, Y) -> SimilarityTransform:
    """Least-squares ``s, R, t`` with ``s R X + t ~ Y``; proper rotation only."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    if len(X) < 3:
        raise DegenerateConfiguration(f"need >= 3 points, got {len(X)}")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    var_x = np.sum(Xc * Xc)
    sv_x = np.linalg.svd(Xc, compute_uv=False)
    if var_x <= 1e-18 or sv_x[1] <= 1e-9 * sv_x[0]:
        raise DegenerateConfiguration("points are coincident or collinear")
    M = Yc.T @ Xc
    U, S, Vt = np.linalg.svd(M)
    D = np.ones(3)
    if np.linalg.det(U @ Vt) < 0:
        D[2] = -1.0
    R = U @ np.diag(D) @ Vt
    s = float(np.sum(S * D) / var_x)
    return SimilarityTransform(s, R, my - s * R @ mx)


def procrustes_align(pred, gt):
    """Per-frame similarity alignment of pred onto gt.

    Returns the list of transforms (one per frame) and the aligned poses.
    """
    P, G, mask = _pair(pred, gt)
    aligned = np.full_like(P, np.nan)
    transforms = []
    for f in range(P.shape[0]):
        m = mask[f]
        tr = similarity_fit(P[f, m], G[f, m])
        transforms.append(tr)
        aligned[f] = tr.apply(P[f])
    return transforms, aligned


def pa_mpjpe(pred, gt) -> float:
    _, G, mask = _pair(pred, gt)
    _, aligned = procrustes_align(pred, gt)
    return _mean_err(np.where(mask[..., None], aligned, 0.0), G, mask)


def metric_report(pred, gt) -> dict:
    errs, mask = joint_errors(pred, gt)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        per_joint = np.nanmean(np.where(mask, errs, np.nan), axis=0)
        per_frame = np.nanmean(np.where(mask, errs, np.nan), axis=1)
    return {
        "mpjpe": mpjpe(pred, gt),
        "pa_mpjpe": pa_mpjpe(pred, gt),
        "n_mpjpe": n_mpjpe(pred, gt),
        "ta_mpjpe": ta_mpjpe(pred, gt),
        "per_joint": [None if np.isnan(v) else float(v) for v in per_joint],
        "per_frame": [None if np.isnan(v) else float(v) for v in per_frame],
    }
