"""Calibrated pinhole cameras, epipolar geometry and 2D normalization.

Pixel convention: origin at the top-left corner, +u to the right, +v down.
Lens distortion is not modeled. Image points are plain ``(2,)`` float arrays.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateBaseline,
    DegenerateLine,
    DepthError,
    InvalidBBox,
    ParseError,
)

MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy, self.skew)
        if not all(np.isfinite(vals)):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def from_matrix(cls, K) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=float)
        if K.shape != (3, 3):
            raise ValueError("K must be 3x3")
        return cls(fx=K[0, 0], fy=K[1, 1], cx=K[0, 2], cy=K[1, 2], skew=K[0, 1])


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    """World to camera transform ``X_cam = R @ X_world + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("extrinsics must be finite")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("R must be a proper rotation")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)


@dataclass(frozen=True, eq=False)
class Camera:
    id: str
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    image_size: tuple[int, int] = (1000, 1000)
    _P: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "image_size", (int(w), int(h)))
        P = self.K @ np.hstack([self.R, self.t[:, None]])
        P.flags.writeable = False
        object.__setattr__(self, "_P", P)

    @classmethod
    def create(cls, id, K, R, t, image_size=(1000, 1000)) -> "Camera":
        return cls(
            str(id),
            CameraIntrinsics.from_matrix(K),
            CameraExtrinsics(np.asarray(R, float), np.asarray(t, float)),
            tuple(image_size),
        )

    @property
    def K(self) -> np.ndarray:
        return self.intrinsics.K

    @property
    def R(self) -> np.ndarray:
        return self.extrinsics.R

    @property
    def t(self) -> np.ndarray:
        return self.extrinsics.t

    @property
    def P(self) -> np.ndarray:
        """3x4 projection matrix ``K [R | t]``."""
        return self._P

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def depth(self, U) -> np.ndarray:
        """Camera-frame z of world point(s) ``U`` of shape ``(..., 3)``."""
        U = np.asarray(U, dtype=float)
        return U @ self.R[2] + self.t[2]

    def in_image(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        w, h = self.image_size
        return (uv[..., 0] >= 0) & (uv[..., 0] <= w) & (uv[..., 1] >= 0) & (uv[..., 1] <= h)


@dataclass(frozen=True)
class Line2D:
    """Line ``a*u + b*v + c = 0`` with unit normal ``(a, b)``."""

    a: float
    b: float
    c: float

    @classmethod
    def from_coeffs(cls, coeffs) -> "Line2D":
        a, b, c = (float(x) for x in coeffs)
        n = np.hypot(a, b)
        if not n > 1e-12:
            raise DegenerateLine("line normal has zero length")
        return cls(a / n, b / n, c / n)

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def residual(self, p) -> float:
        p = np.asarray(p, dtype=float)
        return self.a * p[0] + self.b * p[1] + self.c


@dataclass(frozen=True)
class BoundingBox:
    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        vals = (self.u_min, self.v_min, self.u_max, self.v_max)
        if not all(np.isfinite(vals)):
            raise InvalidBBox("bounding box must be finite")
        if not (self.u_max > self.u_min and self.v_max > self.v_min):
            raise InvalidBBox(f"bounding box has non-positive extent: {vals}")

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.u_min + self.u_max) / 2, (self.v_min + self.v_max) / 2])

    @property
    def half_extent(self) -> np.ndarray:
        return np.array([(self.u_max - self.u_min) / 2, (self.v_max - self.v_min) / 2])

    @classmethod
    def around(cls, points, pad: float = 0.1, min_size: float = 1.0) -> "BoundingBox":
        """Box enclosing ``points`` grown by ``pad`` of its size on every side."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        size = np.maximum(hi - lo, min_size)
        mid = (lo + hi) / 2
        half = size * (0.5 + pad)
        return cls(mid[0] - half[0], mid[1] - half[1], mid[0] + half[0], mid[1] + half[1])


def _check_depth(z):
    if np.any(~(z > MIN_DEPTH)):
        raise DepthError(f"point at or behind camera (depth={np.min(z):.3g})")


def project(U, cam: Camera) -> np.ndarray:
    """Project world point(s) ``U`` (``(3,)`` or ``(N, 3)``) to pixels."""
    U = np.asarray(U, dtype=float)
    Xc = U @ cam.R.T + cam.t
    _check_depth(Xc[..., 2])
    return project_camera_frame(Xc, cam.intrinsics)


def project_camera_frame(Xc, intr: CameraIntrinsics) -> np.ndarray:
    x = Xc[..., 0] / Xc[..., 2]
    y = Xc[..., 1] / Xc[..., 2]
    return np.stack([intr.fx * x + intr.skew * y + intr.cx, intr.fy * y + intr.cy], axis=-1)


def projection_jacobian(U, cam: Camera) -> np.ndarray:
    """2x3 derivative of ``project(U, cam)`` with respect to ``U``."""
    U = np.asarray(U, dtype=float)
    x, y, z = cam.R @ U + cam.t
    _check_depth(z)
    intr = cam.intrinsics
    # d(x/z, y/z)/dXc
    dn = np.array([[1 / z, 0.0, -x / z**2], [0.0, 1 / z, -y / z**2]])
    A = np.array([[intr.fx, intr.skew], [0.0, intr.fy]])
    return A @ dn @ cam.R


def skew_matrix(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _gauge(F: np.ndarray) -> np.ndarray:
    F = F / np.linalg.norm(F)
    i = np.argmax(np.abs(F))
    if F.flat[i] < 0:
        F = -F
    return F


def fundamental_matrix(cam_i: Camera, cam_j: Camera) -> np.ndarray:
    """F with ``x_j^T F x_i = 0`` for corresponding homogeneous pixels.

    Frobenius norm 1, sign chosen so the largest-magnitude entry is positive.
    """
    R_rel = cam_j.R @ cam_i.R.T
    t_rel = cam_j.t - R_rel @ cam_i.t
    if np.linalg.norm(cam_i.center - cam_j.center) < 1e-9:
        raise DegenerateBaseline(f"cameras {cam_i.id!r} and {cam_j.id!r} share a center")
    E = skew_matrix(t_rel) @ R_rel
    F = np.linalg.inv(cam_j.K).T @ E @ np.linalg.inv(cam_i.K)
    return _gauge(F)


def epipolar_line(F, point_j) -> Line2D:
    """Line in view i traced by the ray through ``point_j`` in view j."""
    F = np.asarray(F, dtype=float)
    u, v = np.asarray(point_j, dtype=float)
    coeffs = F.T @ np.array([u, v, 1.0])
    if not np.hypot(coeffs[0], coeffs[1]) >= 1e-12:
        raise DegenerateLine("point is the epipole; epipolar line undefined")
    return Line2D.from_coeffs(coeffs)


def closest_point_on_line(line: Line2D, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    r = line.residual(p)
    return np.array([p[0] - r * line.a, p[1] - r * line.b])


def normalize_points(points, bbox: BoundingBox) -> np.ndarray:
    """Affine map taking ``bbox`` to ``[-1, 1]^2``."""
    pts = np.asarray(points, dtype=float)
    return (pts - bbox.center) / bbox.half_extent


def denormalize_points(points, bbox: BoundingBox) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return pts * bbox.half_extent + bbox.center


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Roll-free rotation/translation for a camera at ``center`` facing ``target``."""
    center = np.asarray(center, float)
    fwd = np.asarray(target, float) - center
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise ValueError("viewing direction parallel to up vector")
    right /= n
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return R, -R @ center


# -- calibration files -------------------------------------------------------


def camera_to_dict(cam: Camera) -> dict:
    return {
        "id": cam.id,
        "K": cam.K.tolist(),
        "R": cam.R.tolist(),
        "t": cam.t.tolist(),
        "width": cam.image_size[0],
        "height": cam.image_size[1],
    }


def camera_from_dict(d: dict, where: str = "camera") -> Camera:
    try:
        return Camera.create(
            d["id"], d["K"], d["R"], d["t"], (d["width"], d["height"])
        )
    except KeyError as e:
        raise ParseError(f"{where}: missing field {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise ParseError(f"{where}: {e}") from None


def save_calibration(cameras, path) -> None:
    Path(path).write_text(json.dumps([camera_to_dict(c) for c in cameras], indent=1))


def load_calibration(path) -> list[Camera]:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno}: {e.msg}") from None
    if not isinstance(data, list):
        raise ParseError(f"{path}: expected a JSON array of cameras")
    cams = [camera_from_dict(d, f"{path}[{i}]") for i, d in enumerate(data)]
    ids = [c.id for c in cams]
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate camera ids")
    return cams
