"""Keypoint stream (JSON Lines) and 3D pose file readers/writers.

Keypoint stream: one object per (frame, view)::

    {"t": 0, "view": "cam0", "u": [...], "v": [...],
     "sigma_u": [...], "sigma_v": [...], "valid": [...]}

Arrays run over joints; invalid entries carry ``null`` coordinates.

Pose file: ``{"frames": [{"t": 0, "joints": [[x, y, z] | null, ...], "flags": [...]}]}``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError


def _num(x):
    return float(x) if np.isfinite(x) else None


@dataclass
class KeypointStream:
    """Dense arrays over (frame, view, joint)."""

    frames: list  # frame indices, sorted
    views: list  # view ids in first-seen order
    uv: np.ndarray  # (T, V, J, 2), NaN where missing
    sigma: np.ndarray  # (T, V, J, 2)
    valid: np.ndarray  # (T, V, J)

    @property
    def n_joints(self) -> int:
        return self.uv.shape[2]


def save_keypoint_stream(path, view_ids, uv, sigma, valid, frames=None) -> None:
    uv = np.asarray(uv, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 3:
        sigma = np.repeat(sigma[..., None], 2, axis=-1)
    valid = np.asarray(valid, dtype=bool) & np.all(np.isfinite(uv), axis=-1)
    T = uv.shape[0]
    frames = list(range(T)) if frames is None else list(frames)
    with open(path, "w") as fh:
        for ti, t in enumerate(frames):
            for vi, vid in enumerate(view_ids):
                ok = valid[ti, vi]
                rec = {
                    "t": int(t),
                    "view": str(vid),
                    "u": [_num(x) if o else None for x, o in zip(uv[ti, vi, :, 0], ok)],
                    "v": [_num(x) if o else None for x, o in zip(uv[ti, vi, :, 1], ok)],
                    "sigma_u": [float(s) for s in sigma[ti, vi, :, 0]],
                    "sigma_v": [float(s) for s in sigma[ti, vi, :, 1]],
                    "valid": [bool(o) for o in ok],
                }
                fh.write(json.dumps(rec) + "\n")


def load_keypoint_stream(path) -> KeypointStream:
    recs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}: line {lineno}: {e.msg}") from None
            for key in ("t", "view", "u", "v"):
                if key not in d:
                    raise ParseError(f"{path}: line {lineno}: missing field {key!r}")
            recs.append((lineno, d))
    if not recs:
        raise ParseError(f"{path}: empty keypoint stream")
    frames = sorted({int(d["t"]) for _, d in recs})
    views = list(dict.fromkeys(str(d["view"]) for _, d in recs))
    J = len(recs[0][1]["u"])
    fidx = {t: i for i, t in enumerate(frames)}
    vidx = {v: i for i, v in enumerate(views)}
    uv = np.full((len(frames), len(views), J, 2), np.nan)
    sigma = np.ones((len(frames), len(views), J, 2))
    valid = np.zeros((len(frames), len(views), J), dtype=bool)
    for lineno, d in recs:
        n = len(d["u"])
        if n != J or len(d["v"]) != J:
            raise ParseError(f"{path}: line {lineno}: expected {J} joints, got {n}")
        ti, vi = fidx[int(d["t"])], vidx[str(d["view"])]
        u = np.array([np.nan if x is None else x for x in d["u"]], dtype=float)
        v = np.array([np.nan if x is None else x for x in d["v"]], dtype=float)
        su = np.asarray(d.get("sigma_u", [1.0] * J), dtype=float)
        sv = np.asarray(d.get("sigma_v", d.get("sigma_u", [1.0] * J)), dtype=float)
        if su.shape != (J,) or sv.shape != (J,):
            raise ParseError(f"{path}: line {lineno}: sigma arrays must have {J} entries")
        if np.any(su <= 0) or np.any(sv <= 0):
            raise ParseError(f"{path}: line {lineno}: sigma must be positive")
        ok = np.asarray(d.get("valid", [True] * J), dtype=bool)
        uv[ti, vi, :, 0], uv[ti, vi, :, 1] = u, v
        sigma[ti, vi, :, 0], sigma[ti, vi, :, 1] = su, sv
        valid[ti, vi] = ok & np.isfinite(u) & np.isfinite(v)
    return KeypointStream(frames, views, uv, sigma, valid)


def save_pose_file(path, joints, flags=None, frames=None) -> None:
    """``joints`` is ``(T, J, 3)``; NaN rows are written as ``null``."""
    X = np.asarray(joints, dtype=float)
    T, J, _ = X.shape
    frames = list(range(T)) if frames is None else list(frames)
    out = []
    for ti, t in enumerate(frames):
        rows = [
            [float(c) for c in X[ti, k]] if np.all(np.isfinite(X[ti, k])) else None for k in range(J)
        ]
        fl = ["ok"] * J if flags is None else list(flags[ti])
        out.append({"t": int(t), "joints": rows, "flags": fl})
    Path(path).write_text(json.dumps({"frames": out}) + "\n")


def load_pose_file(path):
    """Returns ``(frames, joints (T, J, 3) with NaN for nulls, flags)``."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno}: {e.msg}") from None
    try:
        frames = [int(f["t"]) for f in d["frames"]]
        J = len(d["frames"][0]["joints"]) if frames else 0
        X = np.full((len(frames), J, 3), np.nan)
        flags = []
        for i, f in enumerate(d["frames"]):
            if len(f["joints"]) != J:
                raise ParseError(f"{path}: frames[{i}].joints: expected {J} joints")
            for k, row in enumerate(f["joints"]):
                if row is not None:
                    X[i, k] = row
            flags.append(f.get("flags", ["ok"] * J))
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ParseError(f"{path}: malformed pose file ({e})") from None
    return frames, X, flags
