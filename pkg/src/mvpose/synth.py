"""Synthetic multi-view keypoint data.

Pipeline: augment a 3D joint sequence (mirror + yaw), place cameras on a
cylindrical shell looking at the subject, project to ground-truth 2D
keypoints, corrupt them, and export cross-view point clouds.

World frame: z is up, lengths in millimeters.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .camera import (
    BoundingBox,
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    MIN_DEPTH,
    look_at,
    normalize_points,
    save_calibration,
)
from .crossview import (
    SHARD_SUFFIX,
    CloudDatasetRecord,
    build_point_cloud,
    export_cloud_dataset,
    pairwise_fundamentals,
)
from .errors import ConfigError, ParseError

UP = np.array([0.0, 0.0, 1.0])

# corruption label bits
NOISE = 1
OCCLUDED = 2
FLIPPED = 4
TRUNCATED = 8

H36M_JOINTS = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)
H36M_PAIRS = ((1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16))


@dataclass(frozen=True)
class Skeleton:
    names: tuple
    flip_index: tuple  # joint -> its left/right counterpart

    def __post_init__(self):
        fi = np.asarray(self.flip_index)
        n = len(self.names)
        if fi.shape != (n,) or not np.array_equal(np.sort(fi), np.arange(n)):
            raise ValueError("flip_index must be a permutation of the joints")
        if not np.array_equal(fi[fi], np.arange(n)):
            raise ValueError("left/right pairing must be an involution")

    @classmethod
    def from_pairs(cls, names, pairs) -> "Skeleton":
        """``pairs`` hold joint indices or joint names."""
        names = list(names)
        fi = list(range(len(names)))
        for a, b in pairs:
            a = names.index(a) if isinstance(a, str) else int(a)
            b = names.index(b) if isinstance(b, str) else int(b)
            if fi[a] != a or fi[b] != b:
                raise ValueError(f"joint paired twice: {names[a]!r} / {names[b]!r}")
            fi[a], fi[b] = b, a
        return cls(tuple(names), tuple(fi))

    @property
    def n_joints(self) -> int:
        return len(self.names)


H36M_SKELETON = Skeleton.from_pairs(H36M_JOINTS, H36M_PAIRS)


@dataclass
class MotionSequence:
    joints: np.ndarray  # (T, J, 3)
    frame_rate: float = 50.0
    skeleton: Skeleton | None = None

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float)
        if self.joints.ndim != 3 or self.joints.shape[2] != 3 or self.joints.shape[1] < 1:
            raise ValueError(f"joints must be (T, J, 3) with J >= 1, got {self.joints.shape}")
        if not np.all(np.isfinite(self.joints)):
            raise ValueError("joint positions must be finite")
        if self.skeleton is None:
            J = self.joints.shape[1]
            self.skeleton = Skeleton(tuple(f"j{k}" for k in range(J)), tuple(range(J)))
        elif self.skeleton.n_joints != self.joints.shape[1]:
            raise ValueError("skeleton size does not match joints")

    @property
    def n_frames(self) -> int:
        return self.joints.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joints.shape[1]

    def centroid(self) -> np.ndarray:
        return self.joints.reshape(-1, 3).mean(axis=0)


def _check_range(name, rng_, lo_bound=0.0, strict=False):
    lo, hi = rng_
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ConfigError(name, "range must be finite")
    if lo < lo_bound or (strict and lo <= lo_bound):
        raise ConfigError(name, f"lower bound must be {'>' if strict else '>='} {lo_bound}")
    if hi < lo:
        raise ConfigError(name, "upper bound below lower bound")


def _check_prob(name, p):
    if not 0.0 <= p <= 1.0:
        raise ConfigError(name, f"probability must be in [0, 1], got {p}")


@dataclass(frozen=True)
class VolumeSpec:
    """Cylindrical shell holding camera centers, and the vertical extent of look-at targets."""

    radius_range: tuple = (2500.0, 4500.0)
    height_range: tuple = (0.0, 2000.0)
    center: tuple = (0.0, 0.0, 900.0)

    def __post_init__(self):
        _check_range("volume.radius_range", self.radius_range, 0.0, strict=True)
        _check_range("volume.height_range", self.height_range, -np.inf)
        if self.radius_range[0] >= self.radius_range[1]:
            raise ConfigError("volume.radius_range", "min must be < max")
        if self.height_range[0] >= self.height_range[1]:
            raise ConfigError("volume.height_range", "min must be < max")
        if len(self.center) != 3:
            raise ConfigError("volume.center", "must be a 3-vector")


@dataclass(frozen=True)
class CameraPlacementConfig:
    camera_height_range: tuple = (500.0, 2500.0)
    look_at_jitter_mm: float = 200.0
    focal_range_px: tuple = (800.0, 1500.0)
    image_size: tuple = (1000, 1000)

    def __post_init__(self):
        _check_range("placement.camera_height_range", self.camera_height_range, -np.inf)
        if self.look_at_jitter_mm < 0:
            raise ConfigError("placement.look_at_jitter_mm", "must be >= 0")
        _check_range("placement.focal_range_px", self.focal_range_px, 0.0, strict=True)
        if len(self.image_size) != 2 or min(self.image_size) <= 0:
            raise ConfigError("placement.image_size", "must be two positive integers")


@dataclass(frozen=True)
class CorruptionConfig:
    noise_std_range: tuple = (0.5, 5.0)
    occlusion_prob: float = 0.1
    occlusion_size_range: tuple = (20.0, 80.0)
    flip_prob: float = 0.02
    truncation_prob: float = 0.05

    def __post_init__(self):
        _check_range("corruption.noise_std_range", self.noise_std_range)
        _check_range("corruption.occlusion_size_range", self.occlusion_size_range)
        _check_prob("corruption.occlusion_prob", self.occlusion_prob)
        _check_prob("corruption.flip_prob", self.flip_prob)
        _check_prob("corruption.truncation_prob", self.truncation_prob)

    @classmethod
    def disabled(cls) -> "CorruptionConfig":
        return cls((0.0, 0.0), 0.0, (0.0, 0.0), 0.0, 0.0)


@dataclass(frozen=True)
class SigmaModel:
    """Stand-in for an uncertainty-aware 2D estimator.

    Clean detections report the sequence noise level (floored); detections hit
    by occlusion, flipping or truncation report an inflated scale.
    """

    clean_floor_px: float = 1.0
    corrupted_px: float = 50.0

    def __post_init__(self):
        if self.clean_floor_px <= 0:
            raise ConfigError("sigma.clean_floor_px", "must be > 0")
        if self.corrupted_px <= 0:
            raise ConfigError("sigma.corrupted_px", "must be > 0")

    def __call__(self, labels, noise_std) -> np.ndarray:
        base = max(float(noise_std), self.clean_floor_px)
        bad = (np.asarray(labels) & (OCCLUDED | FLIPPED | TRUNCATED)) != 0
        return np.where(bad, max(self.corrupted_px, base), base)


# -- motion ------------------------------------------------------------------


def procedural_motion(rng, n_frames: int = 10, frame_rate: float = 50.0) -> MotionSequence:
    """Walking stick figure on the H36M 17-joint layout, randomized per call."""
    s = rng.uniform(0.9, 1.1)
    heading = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(0.0, 1500.0)  # mm/s
    freq = rng.uniform(0.6, 1.2)  # strides/s
    phase = rng.uniform(0, 2 * np.pi)
    swing = rng.uniform(0.2, 0.6)
    start = np.array([*rng.uniform(-300, 300, 2), 0.0])
    f = np.array([np.cos(heading), np.sin(heading), 0.0])
    left = np.array([-np.sin(heading), np.cos(heading), 0.0])

    t = np.arange(n_frames) / frame_rate
    out = np.zeros((n_frames, 17, 3))
    for n, tt in enumerate(t):
        w = 2 * np.pi * freq * tt + phase
        pelvis = start + speed * tt * f + UP * (950 * s + 15 * np.sin(2 * w))
        th = np.array([swing * np.sin(w), -swing * np.sin(w)])  # left, right thigh angle
        bend = 0.3 + 0.4 * np.maximum(0, np.sin(w + np.array([0.0, np.pi]) + 1.2))
        arm = -0.6 * th
        j = {}
        j[0] = pelvis
        for side, (hip, knee, ankle), sgn, k in (
            ("l", (4, 5, 6), 1, 0),
            ("r", (1, 2, 3), -1, 1),
        ):
            j[hip] = pelvis + sgn * 120 * s * left
            j[knee] = j[hip] + 450 * s * (np.sin(th[k]) * f - np.cos(th[k]) * UP)
            a = th[k] - bend[k]
            j[ankle] = j[knee] + 430 * s * (np.sin(a) * f - np.cos(a) * UP)
        j[7] = pelvis + 230 * s * UP
        thorax = pelvis + 480 * s * UP + 20 * np.sin(w) * left
        j[8] = thorax
        j[9] = pelvis + 580 * s * UP + 30 * s * f
        j[10] = pelvis + 720 * s * UP + 60 * s * f
        for (sh, el, wr), sgn, k in (((11, 12, 13), 1, 0), ((14, 15, 16), -1, 1)):
            j[sh] = thorax + sgn * 170 * s * left + 60 * s * UP
            j[el] = j[sh] + 280 * s * (np.sin(arm[k]) * f - np.cos(arm[k]) * UP)
            b = arm[k] + 0.5
            j[wr] = j[el] + 250 * s * (np.sin(b) * f - np.cos(b) * UP)
        out[n] = np.array([j[i] for i in range(17)])
    return MotionSequence(out, frame_rate, H36M_SKELETON)


def load_skeleton(path) -> Skeleton:
    try:
        d = json.loads(Path(path).read_text())
        return Skeleton.from_pairs(d["names"], d.get("pairs", []))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: bad skeleton file ({e})") from None


def load_motion(path, skeleton: Skeleton | None = None, frame_rate: float = 50.0) -> MotionSequence:
    """Motion from CSV (one row per frame, 3*J columns) or JSON."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            d = json.loads(path.read_text())
            if isinstance(d, dict):
                frame_rate = float(d.get("frame_rate", frame_rate))
                d = d["joints"]
            joints = np.asarray(d, dtype=float)
            if joints.ndim == 2:
                if joints.shape[1] % 3:
                    raise ValueError("each row needs 3*J values")
                joints = joints.reshape(len(joints), -1, 3)
        else:
            with open(path, newline="") as fh:
                rows = [r for r in csv.reader(fh) if r]
            if rows and not _is_number(rows[0][0]):
                rows = rows[1:]
            flat = np.array([[float(x) for x in r] for r in rows])
            if flat.ndim != 2 or flat.shape[1] % 3:
                raise ValueError("each row needs 3*J values")
            joints = flat.reshape(len(flat), -1, 3)
        return MotionSequence(joints, frame_rate, skeleton)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: {e}") from None


def _is_number(s) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def lateral_axis(seq: MotionSequence) -> np.ndarray:
    """Horizontal unit vector along the left/right joint pairs, averaged over time."""
    fi = np.asarray(seq.skeleton.flip_index)
    a = np.flatnonzero(fi > np.arange(len(fi)))
    if a.size:
        d = (seq.joints[:, a] - seq.joints[:, fi[a]]).sum(axis=(0, 1))
        d[2] = 0.0
        n = np.linalg.norm(d)
        if n > 1e-9:
            return d / n
    return np.array([1.0, 0.0, 0.0])


def mirror_sequence(seq: MotionSequence, normal=None, center=None) -> MotionSequence:
    """Reflect across the vertical plane through ``center`` with ``normal``, swapping left/right."""
    n = lateral_axis(seq) if normal is None else np.asarray(normal, float) / np.linalg.norm(normal)
    c = seq.centroid() if center is None else np.asarray(center, float)
    X = seq.joints - c
    X = X - 2 * (X @ n)[..., None] * n
    X = X + c
    X = X[:, list(seq.skeleton.flip_index)]
    return MotionSequence(X, seq.frame_rate, seq.skeleton)


def rotate_sequence(seq: MotionSequence, yaw: float, center=None) -> MotionSequence:
    c = seq.centroid() if center is None else np.asarray(center, float)
    cz, sz = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return MotionSequence((seq.joints - c) @ Rz.T + c, seq.frame_rate, seq.skeleton)


def augment_motion(seq: MotionSequence, rng) -> MotionSequence:
    """Mirror with probability 0.5, then rotate by a uniform yaw about the centroid."""
    mirror = rng.random() < 0.5
    yaw = rng.uniform(0, 2 * np.pi)
    if mirror:
        seq = mirror_sequence(seq)
    return rotate_sequence(seq, yaw)


# -- cameras -----------------------------------------------------------------


def place_cameras(n: int, volume: VolumeSpec, cfg: CameraPlacementConfig, rng) -> list[Camera]:
    """Cameras on the cylindrical shell, each facing a jittered point near the volume center."""
    return place_cameras_with_targets(n, volume, cfg, rng)[0]


def place_cameras_with_targets(n, volume, cfg, rng):
    if n < 1:
        raise ValueError("need at least one camera")
    center = np.asarray(volume.center, dtype=float)
    w, h = cfg.image_size
    cams, targets = [], []
    for i in range(n):
        ang = rng.uniform(0, 2 * np.pi)
        r = rng.uniform(*volume.radius_range)
        z = rng.uniform(*cfg.camera_height_range)
        pos = np.array([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang), z])
        d = rng.standard_normal(3)
        d *= cfg.look_at_jitter_mm * rng.random() ** (1 / 3) / max(np.linalg.norm(d), 1e-12)
        target = center + d
        target[2] = np.clip(target[2], *volume.height_range)
        R, t = look_at(pos, target, UP)
        f = rng.uniform(*cfg.focal_range_px)
        intr = CameraIntrinsics(f, f, w / 2, h / 2)
        cams.append(Camera(f"cam{i}", intr, CameraExtrinsics(R, t), (w, h)))
        targets.append(target)
    return cams, np.array(targets)


def project_sequence(joints, cameras: Sequence[Camera]):
    """Ground-truth pixels ``(T, V, J, 2)`` and visibility ``(T, V, J)``.

    Points behind a camera get NaN coordinates; visibility additionally
    requires the pixel to lie inside the image.
    """
    X = joints.joints if isinstance(joints, MotionSequence) else np.asarray(joints, dtype=float)
    T, J, _ = X.shape
    uv = np.full((T, len(cameras), J, 2), np.nan)
    vis = np.zeros((T, len(cameras), J), dtype=bool)
    for v, cam in enumerate(cameras):
        Xc = X @ cam.R.T + cam.t
        z = Xc[..., 2]
        front = z > MIN_DEPTH
        zs = np.where(front, z, 1.0)
        k = cam.intrinsics
        x, y = Xc[..., 0] / zs, Xc[..., 1] / zs
        p = np.stack([k.fx * x + k.skew * y + k.cx, k.fy * y + k.cy], axis=-1)
        uv[:, v] = np.where(front[..., None], p, np.nan)
        vis[:, v] = front & cam.in_image(p)
    return uv, vis


# -- corruption --------------------------------------------------------------


class Corrupted(NamedTuple):
    keypoints: np.ndarray  # (T, V, J, 2)
    labels: np.ndarray  # (T, V, J) bit flags
    noise_std: float


def flip_keypoints(kp, flip_index) -> np.ndarray:
    """Swap left/right joint labels of one view-frame ``(J, 2)``."""
    return np.asarray(kp)[list(flip_index)]


def _occlude(kp, size, rng):
    valid = np.all(np.isfinite(kp), axis=1)
    if not valid.any():
        return kp, np.zeros(len(kp), bool)
    anchor = kp[rng.choice(np.flatnonzero(valid))]
    half = np.array([size[0], size[1]]) / 2
    c = anchor + rng.uniform(-half, half)
    lo, hi = c - half, c + half
    inside = valid & np.all((kp >= lo) & (kp <= hi), axis=1)
    out = kp.copy()
    for k in np.flatnonzero(inside):
        d = np.array([kp[k, 0] - lo[0], hi[0] - kp[k, 0], kp[k, 1] - lo[1], hi[1] - kp[k, 1]])
        side = int(np.argmin(d))
        if side == 0:
            out[k, 0] = lo[0]
        elif side == 1:
            out[k, 0] = hi[0]
        elif side == 2:
            out[k, 1] = lo[1]
        else:
            out[k, 1] = hi[1]
    return out, inside


def _truncate(kp, rng):
    valid = np.all(np.isfinite(kp), axis=1)
    if valid.sum() < 2:
        return kp, np.zeros(len(kp), bool)
    axis = int(rng.integers(2))
    upper = bool(rng.integers(2))
    lo, hi = kp[valid, axis].min(), kp[valid, axis].max()
    edge = rng.uniform(lo, hi)
    out = kp.copy()
    hit = valid & ((kp[:, axis] > edge) if upper else (kp[:, axis] < edge))
    out[hit, axis] = edge
    return out, hit


def corrupt_keypoints(mu_g, cfg: CorruptionConfig, rng, flip_index=None) -> Corrupted:
    """Apply flips, occlusions, truncation and Gaussian noise per view-frame."""
    kp = np.array(mu_g, dtype=float, copy=True)
    T, V, J, _ = kp.shape
    labels = np.zeros((T, V, J), dtype=np.uint8)
    std = float(rng.uniform(*cfg.noise_std_range))
    for t in range(T):
        for v in range(V):
            frame = kp[t, v]
            if flip_index is not None and rng.random() < cfg.flip_prob:
                frame = flip_keypoints(frame, flip_index)
                moved = np.asarray(flip_index) != np.arange(J)
                labels[t, v, moved] |= FLIPPED
            if rng.random() < cfg.occlusion_prob:
                size = rng.uniform(*cfg.occlusion_size_range, size=2)
                frame, hit = _occlude(frame, size, rng)
                labels[t, v, hit] |= OCCLUDED
            if rng.random() < cfg.truncation_prob:
                frame, hit = _truncate(frame, rng)
                labels[t, v, hit] |= TRUNCATED
            kp[t, v] = frame
    if std > 0:
        kp = kp + std * rng.standard_normal(kp.shape)
        labels |= np.where(np.all(np.isfinite(kp), axis=-1), NOISE, 0).astype(np.uint8)
    return Corrupted(kp, labels, std)


# -- dataset generation ------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    n_cameras: tuple = (2, 8)
    volume: VolumeSpec = field(default_factory=VolumeSpec)
    placement: CameraPlacementConfig = field(default_factory=CameraPlacementConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    sigma: SigmaModel = field(default_factory=SigmaModel)
    bbox_pad: float = 0.1
    optional_columns: tuple = ()

    def __post_init__(self):
        lo, hi = self.n_cameras
        if lo < 1 or hi < lo:
            raise ConfigError("n_cameras", f"invalid range {self.n_cameras}")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        subs = {
            "volume": VolumeSpec,
            "placement": CameraPlacementConfig,
            "corruption": CorruptionConfig,
            "sigma": SigmaModel,
        }
        kw = {}
        for key, val in d.items():
            if key in subs:
                if not isinstance(val, dict):
                    raise ConfigError(key, "expected an object")
                known = subs[key].__dataclass_fields__
                for k in val:
                    if k not in known:
                        raise ConfigError(f"{key}.{k}", "unknown field")
                kw[key] = subs[key](**{k: tuple(v) if isinstance(v, list) else v for k, v in val.items()})
            elif key in cls.__dataclass_fields__:
                kw[key] = tuple(val) if isinstance(val, list) else val
            else:
                raise ConfigError(key, "unknown field")
        return cls(**kw)


def draw_view_count(rng, n_range) -> int:
    lo, hi = n_range
    return int(rng.integers(lo, hi + 1))


@dataclass
class SyntheticSample:
    """Everything generated for one sequence."""

    motion: MotionSequence
    cameras: list
    gt_2d: np.ndarray
    visible: np.ndarray
    corrupted: Corrupted
    sigma: np.ndarray  # (T, V, J)

    @property
    def observed(self) -> np.ndarray:
        """Corrupted keypoints with invisible ones set to NaN."""
        return np.where(self.visible[..., None], self.corrupted.keypoints, np.nan)


def synthesize(seq: MotionSequence, cfg: GeneratorConfig, rng, n_views: int | None = None) -> SyntheticSample:
    """Augment, place cameras around the subject, project and corrupt."""
    if n_views is None:
        n_views = draw_view_count(rng, cfg.n_cameras)
    motion = augment_motion(seq, rng)
    c = motion.centroid()
    vol = VolumeSpec(cfg.volume.radius_range, cfg.volume.height_range, (c[0], c[1], cfg.volume.center[2]))
    cams = place_cameras(n_views, vol, cfg.placement, rng)
    gt, vis = project_sequence(motion, cams)
    cor = corrupt_keypoints(gt, cfg.corruption, rng, motion.skeleton.flip_index)
    sigma = cfg.sigma(cor.labels, cor.noise_std)
    return SyntheticSample(motion, cams, gt, vis, cor, sigma)


def sample_clouds(sample: SyntheticSample, cfg: GeneratorConfig, sample_id: int, v_max: int) -> list:
    """Cloud records for every (frame, reference view, joint) with a visible reference keypoint."""
    cams = {c.id: c for c in sample.cameras}
    ids = list(cams)
    view_index = {vid: i for i, vid in enumerate(ids)}
    Fs = pairwise_fundamentals(cams)
    obs = sample.observed
    T, V, J, _ = obs.shape
    records = []
    for t in range(T):
        for i, ref in enumerate(ids):
            vis_ref = sample.visible[t, i]
            if not vis_ref.any():
                continue
            bbox = BoundingBox.around(obs[t, i, vis_ref], pad=cfg.bbox_pad)
            for k in range(J):
                if not vis_ref[k]:
                    continue
                kps = {vid: (obs[t, v, k] if sample.visible[t, v, k] else None) for v, vid in enumerate(ids)}
                cloud = build_point_cloud(ref, k, t, kps, cams, bbox, Fs)
                gt_norm = normalize_points(sample.gt_2d[t, i, k], bbox)
                extra = {}
                if "lines" in cfg.optional_columns:
                    extra["lines"] = _line_column(cloud, kps, Fs, view_index, v_max)
                if "cam_pos" in cfg.optional_columns:
                    extra["cam_pos"] = _campos_column(cloud, cams, view_index, v_max)
                if "sigma" in cfg.optional_columns:
                    sig = np.zeros((v_max, 2))
                    for slot, (vid, _) in enumerate(cloud.points):
                        sig[slot] = sample.sigma[t, view_index[vid], k]
                    extra["sigma"] = sig
                records.append(CloudDatasetRecord.from_cloud(cloud, view_index, gt_norm, v_max, sample_id, **extra))
    return records


def _line_column(cloud, kps, Fs, view_index, v_max):
    from .camera import epipolar_line

    out = np.zeros((v_max, 3))
    for slot, (vid, _) in enumerate(cloud.points):
        if vid != cloud.reference_view:
            out[slot] = epipolar_line(Fs[(cloud.reference_view, vid)], kps[vid]).coeffs
    return out


def _campos_column(cloud, cams, view_index, v_max):
    from .crossview import relative_camera_position

    out = np.zeros((v_max, 3))
    ref = cams[cloud.reference_view]
    for slot, (vid, _) in enumerate(cloud.points):
        out[slot] = relative_camera_position(ref, cams[vid])
    return out


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sequence_rngs(seed: int, n: int) -> list:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def generate_dataset(
    seqs: Sequence[MotionSequence],
    cfg: GeneratorConfig,
    out_path,
    seed: int,
    source: dict | None = None,
    write_streams: bool = True,
) -> Path:
    """Write one shard (plus calibration, keypoint stream and ground truth) per sequence and a manifest."""
    from .io import save_keypoint_stream, save_pose_file

    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    v_max = cfg.n_cameras[1]
    files, samples = [], []
    for n, (seq, rng) in enumerate(zip(seqs, sequence_rngs(seed, len(seqs)))):
        sample = synthesize(seq, cfg, rng)
        stem = f"sample_{n:05d}"
        recs = sample_clouds(sample, cfg, n, v_max)
        written = [
            export_cloud_dataset(
                recs, out / f"{stem}{SHARD_SUFFIX}", seq.n_joints, v_max, seq.n_frames, cfg.optional_columns
            )
        ]
        if write_streams:
            calib = out / f"{stem}.calib.json"
            save_calibration(sample.cameras, calib)
            kp = out / f"{stem}.keypoints.jsonl"
            save_keypoint_stream(kp, [c.id for c in sample.cameras], sample.observed, sample.sigma, sample.visible)
            gt = out / f"{stem}.gt.json"
            save_pose_file(gt, sample.motion.joints)
            written += [calib, kp, gt]
        files += [{"path": p.name, "sha256": _sha256(p)} for p in written]
        samples.append(
            {"id": n, "n_views": len(sample.cameras), "frames": seq.n_frames, "joints": seq.n_joints, "records": len(recs)}
        )
    manifest = {
        "seed": seed,
        "config": cfg.to_dict(),
        "source": source,
        "samples": samples,
        "files": files,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path
