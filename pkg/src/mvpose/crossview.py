"""Cross-view point clouds and their on-disk training shards.

For a reference view ``i`` every other view ``j`` contributes the point on the
epipolar line of its keypoint (in view ``i``) closest to view ``i``'s own
keypoint. The reference keypoint itself is part of the cloud. All members
are normalized by the subject's bounding box in the reference view.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import (
    BoundingBox,
    Camera,
    closest_point_on_line,
    epipolar_line,
    fundamental_matrix,
    normalize_points,
)
from .errors import DegenerateLine, MissingReferenceKeypoint, ParseError

SHARD_SUFFIX = ".cloudshard"


@dataclass
class PointCloud2D:
    reference_view: str
    joint: int
    frame: int
    points: list  # (source view id, normalized (2,) array)
    bbox: BoundingBox
    skipped: list = field(default_factory=list)

    @property
    def coords(self) -> np.ndarray:
        return np.array([p for _, p in self.points]).reshape(-1, 2)

    def spread(self) -> float:
        """Largest pairwise distance between members."""
        c = self.coords
        if len(c) < 2:
            return 0.0
        d = c[:, None, :] - c[None, :, :]
        return float(np.sqrt((d * d).sum(-1)).max())


def build_point_cloud(ref, joint, frame, keypoints, cameras, bbox, fundamentals=None) -> PointCloud2D:
    """Cloud for view ``ref`` from ``keypoints`` (view id -> pixel or None).

    ``cameras`` maps view id to :class:`Camera`; ``fundamentals`` optionally
    caches ``F[(ref, j)]``.
    """
    mu_i = keypoints.get(ref)
    if mu_i is None or not np.all(np.isfinite(mu_i)):
        raise MissingReferenceKeypoint(f"view {ref!r} has no keypoint for joint {joint}, frame {frame}")
    mu_i = np.asarray(mu_i, dtype=float)
    raw = [(ref, mu_i)]
    skipped = []
    for j, mu_j in keypoints.items():
        if j == ref or mu_j is None or not np.all(np.isfinite(mu_j)):
            continue
        F = None if fundamentals is None else fundamentals.get((ref, j))
        if F is None:
            F = fundamental_matrix(cameras[ref], cameras[j])
        try:
            line = epipolar_line(F, mu_j)
        except DegenerateLine:
            skipped.append(j)
            continue
        raw.append((j, closest_point_on_line(line, mu_i)))
    pts = normalize_points(np.array([p for _, p in raw]), bbox)
    return PointCloud2D(ref, joint, frame, [(v, p) for (v, _), p in zip(raw, pts)], bbox, skipped)


def pairwise_fundamentals(cameras: dict) -> dict:
    ids = list(cameras)
    return {
        (i, j): fundamental_matrix(cameras[i], cameras[j]) for i in ids for j in ids if i != j
    }


def relative_camera_position(cam_ref: Camera, cam_j: Camera) -> np.ndarray:
    """Center of ``cam_j`` in the reference camera frame (mm)."""
    return cam_ref.R @ cam_j.center + cam_ref.t


# -- shard records -----------------------------------------------------------


BASE_COLUMNS = (
    ("sample", "<i4", ()),
    ("ref_view", "<i4", ()),
    ("joint", "<i4", ()),
    ("frame", "<i4", ()),
    ("bbox", "<f4", (4,)),
    ("gt", "<f4", (2,)),
    ("points", "<f4", ("V", 2)),
    ("source", "<i4", ("V",)),
    ("mask", "u1", ("V",)),
    ("skipped", "u1", ("V",)),
)
OPTIONAL_COLUMNS = {
    "lines": ("<f4", ("V", 3)),
    "cam_pos": ("<f4", ("V", 3)),
    "sigma": ("<f4", ("V", 2)),
}


def shard_columns(optional=()) -> list:
    cols = [list(c) for c in BASE_COLUMNS]
    for name in optional:
        if name not in OPTIONAL_COLUMNS:
            raise ValueError(f"unknown optional column {name!r}")
        dt, shape = OPTIONAL_COLUMNS[name]
        cols.append([name, dt, shape])
    return cols


def _record_dtype(columns, v_max):
    fields = []
    for name, dt, shape in columns:
        shp = tuple(v_max if s == "V" else int(s) for s in shape)
        fields.append((name, dt, shp) if shp else (name, dt))
    return np.dtype(fields)


@dataclass(eq=False)
class CloudDatasetRecord:
    """One padded cloud with its normalized ground-truth keypoint.

    ``source`` holds view indices (``-1`` for padding); ``mask`` marks valid
    members; ``skipped`` marks views dropped for epipolar degeneracy.
    """

    sample: int
    ref_view: int
    joint: int
    frame: int
    bbox: np.ndarray
    gt: np.ndarray
    points: np.ndarray
    source: np.ndarray
    mask: np.ndarray
    skipped: np.ndarray
    lines: np.ndarray | None = None
    cam_pos: np.ndarray | None = None
    sigma: np.ndarray | None = None

    def __post_init__(self):
        self.bbox = np.asarray(self.bbox, dtype="<f4").reshape(4)
        self.gt = np.asarray(self.gt, dtype="<f4").reshape(2)
        self.points = np.asarray(self.points, dtype="<f4").reshape(-1, 2)
        v = self.points.shape[0]
        self.source = np.asarray(self.source, dtype="<i4").reshape(v)
        self.mask = np.asarray(self.mask, dtype="u1").reshape(v)
        self.skipped = np.asarray(self.skipped, dtype="u1").reshape(v)
        for name, (dt, shape) in OPTIONAL_COLUMNS.items():
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, np.asarray(val, dtype=dt).reshape(v, shape[1]))

    @property
    def v_max(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_cloud(cls, cloud: PointCloud2D, view_index: dict, gt_norm, v_max: int, sample: int = 0, **optional):
        points = np.zeros((v_max, 2))
        source = np.full(v_max, -1)
        mask = np.zeros(v_max)
        skipped = np.zeros(v_max)
        for slot, (vid, p) in enumerate(cloud.points):
            points[slot] = p
            source[slot] = view_index[vid]
            mask[slot] = 1
        for vid in cloud.skipped:
            skipped[view_index[vid]] = 1
        b = cloud.bbox
        return cls(
            sample,
            view_index[cloud.reference_view],
            cloud.joint,
            cloud.frame,
            [b.u_min, b.v_min, b.u_max, b.v_max],
            gt_norm,
            points,
            source,
            mask,
            skipped,
            **optional,
        )

    def equals(self, other: "CloudDatasetRecord") -> bool:
        """Bitwise equality of every field."""
        for name in ("sample", "ref_view", "joint", "frame"):
            if getattr(self, name) != getattr(other, name):
                return False
        for name in ("bbox", "gt", "points", "source", "mask", "skipped", *OPTIONAL_COLUMNS):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or a.tobytes() != b.tobytes()):
                return False
        return True


def export_cloud_dataset(records, path, J: int, v_max: int, T: int, optional=()) -> Path:
    """Write a shard: one JSON header line then fixed-width little-endian records."""
    path = Path(path)
    columns = shard_columns(optional)
    dtype = _record_dtype(columns, v_max)
    arr = np.zeros(len(records), dtype=dtype)
    for n, rec in enumerate(records):
        if rec.v_max != v_max:
            raise ValueError(f"record {n} has V_max={rec.v_max}, shard expects {v_max}")
        for name, _, _ in columns:
            val = getattr(rec, name)
            if val is None:
                raise ValueError(f"record {n} lacks column {name!r}")
            arr[n][name] = val
    header = {"J": J, "V_max": v_max, "T": T, "columns": columns, "count": len(records)}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(arr.tobytes())
    return path


def import_cloud_dataset(path):
    """Read a shard; returns ``(header, records)``."""
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: byte 0: missing header line")
    try:
        header = json.loads(data[:nl])
        columns = header["columns"]
        v_max = int(header["V_max"])
        count = int(header["count"])
        for key in ("J", "T"):
            int(header[key])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: byte 0: bad header ({e})") from None
    known = {c[0] for c in BASE_COLUMNS} | set(OPTIONAL_COLUMNS)
    for col in columns:
        if col[0] not in known:
            raise ParseError(f"{path}: byte 0: unknown column {col[0]!r}")
    dtype = _record_dtype(columns, v_max)
    body = data[nl + 1 :]
    n_full = len(body) // dtype.itemsize
    if n_full < count or len(body) != count * dtype.itemsize:
        offset = nl + 1 + min(n_full, count) * dtype.itemsize
        raise ParseError(
            f"{path}: byte {offset}: expected {count} records of {dtype.itemsize} bytes, "
            f"found {len(body)} bytes of record data"
        )
    arr = np.frombuffer(body, dtype=dtype, count=count)
    names = [c[0] for c in columns]
    records = []
    for row in arr:
        kw = {name: row[name] for name in names}
        for key in ("sample", "ref_view", "joint", "frame"):
            kw[key] = int(kw[key])
        records.append(CloudDatasetRecord(**kw))
    return header, records
