"""Geometry primitives, voxel indexing, spherical coordinates and PLY I/O."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import NamedTuple

import numpy as np


class InvalidParameterError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class PlyParseError(ValueError):
    """Raised on malformed PLY content. ``offset`` is the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SemanticLabel(IntEnum):
    GROUND = 0
    PERMANENT = 1
    SHORT_T = 2
    LONG_T = 3
    UNCERTAIN = 4


class GtClass(IntEnum):
    GROUND = 0
    WALL = 1
    DOOR = 2
    TABLE = 3
    CHAIR = 4
    STILL_PERSON = 5
    MOVING_PERSON = 6


class VoxelKey(NamedTuple):
    i: int
    j: int
    k: int


class SphericalCoord(NamedTuple):
    rho: float
    theta: float
    phi: float


# ---------------------------------------------------------------------------
# Rigid transforms


def rotation_from_rotvec(rotvec) -> np.ndarray:
    """Rodrigues formula. Exact orthonormal output for any axis-angle vector."""
    w = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(w)
    if angle < 1e-12:
        K = _skew(w)
        return np.eye(3) + K
    k = w / angle
    K = _skew(k)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in [0, pi]."""
    c = (np.trace(R) - 1.0) / 2.0
    s = np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    return float(np.arctan2(s, np.clip(c, -1.0, 1.0)))


def _skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping sensor coordinates into map coordinates."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidParameterError("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise InvalidParameterError("rotation is not a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=np.float64).reshape(4, 4)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> Pose:
        return cls(rotation_from_rotvec(rotvec), translation)

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, z: float, yaw: float) -> Pose:
        return cls(rotation_from_rotvec((0.0, 0.0, yaw)), (x, y, z))

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: Pose) -> Pose:
        R = _orthonormalize(self.rotation @ other.rotation)
        return Pose(R, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def pose_difference(a: Pose, b: Pose) -> tuple[float, float]:
    """Translation distance and rotation angle between two poses."""
    dt = float(np.linalg.norm(a.translation - b.translation))
    return dt, rotation_angle(a.rotation.T @ b.rotation)


# ---------------------------------------------------------------------------
# Point clouds


@dataclass
class PointCloud:
    """Positions plus optional per-point channels.

    All channels are numpy arrays aligned with ``points`` (N, 3).
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    scores: np.ndarray | None = None
    labels: np.ndarray | None = None
    gt_class: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidParameterError(f"points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("points must be finite")
        self.points = pts
        n = len(pts)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if self.gt_class is not None:
            self.gt_class = np.asarray(self.gt_class, dtype=np.uint8).reshape(-1)
        for name in ("normals", "scores", "labels", "gt_class"):
            ch = getattr(self, name)
            if ch is not None and len(ch) != n:
                raise InvalidParameterError(f"{name} has {len(ch)} entries for {n} points")

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, index) -> PointCloud:
        def take(a):
            return None if a is None else a[index]

        return PointCloud(
            self.points[index],
            take(self.normals),
            take(self.scores),
            take(self.labels),
            take(self.gt_class),
        )

    def transformed(self, pose: Pose) -> PointCloud:
        normals = None if self.normals is None else pose.rotate(self.normals)
        return PointCloud(pose.apply(self.points), normals, self.scores, self.labels, self.gt_class)

    def with_channels(self, **channels) -> PointCloud:
        data = {
            "points": self.points,
            "normals": self.normals,
            "scores": self.scores,
            "labels": self.labels,
            "gt_class": self.gt_class,
        }
        data.update(channels)
        return PointCloud(**data)


def to_sensor_precision(points: np.ndarray) -> np.ndarray:
    """Round to float32 precision while keeping a float64 array."""
    return np.asarray(points, dtype=np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# Voxel grid


_PACK_BITS = 21
_PACK_OFFSET = 1 << (_PACK_BITS - 1)
_PACK_MASK = (1 << _PACK_BITS) - 1


def vox(x, origin=(0.0, 0.0, 0.0), dl: float = 0.03) -> VoxelKey:
    """Voxel index of a single point: floor((x - origin) / dl)."""
    if not dl > 0:
        raise InvalidParameterError(f"voxel size must be positive, got {dl}")
    x = np.asarray(x, dtype=np.float64)
    ijk = np.floor((x - np.asarray(origin, dtype=np.float64)) / dl).astype(np.int64)
    return VoxelKey(int(ijk[0]), int(ijk[1]), int(ijk[2]))


def voxel_indices(points: np.ndarray, dl: float, origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Vectorised ``vox`` returning an (N, 3) int64 array."""
    if not dl > 0:
        raise InvalidParameterError(f"voxel size must be positive, got {dl}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.floor((pts - np.asarray(origin, dtype=np.float64)) / dl).astype(np.int64)


def pack_keys(ijk: np.ndarray) -> np.ndarray:
    """Pack (N, 3) voxel indices into unique int64 scalars (21 bits per axis)."""
    ijk = np.asarray(ijk, dtype=np.int64).reshape(-1, 3)
    if ijk.size and (ijk.min() < -_PACK_OFFSET or ijk.max() >= _PACK_OFFSET):
        raise InvalidParameterError("voxel index outside the packable range")
    u = ijk + _PACK_OFFSET
    return (u[:, 0] << (2 * _PACK_BITS)) | (u[:, 1] << _PACK_BITS) | u[:, 2]


def unpack_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    i = (keys >> (2 * _PACK_BITS)) & _PACK_MASK
    j = (keys >> _PACK_BITS) & _PACK_MASK
    k = keys & _PACK_MASK
    return np.stack([i, j, k], axis=-1) - _PACK_OFFSET


NEIGHBOR_OFFSETS = np.array(
    [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)], dtype=np.int64
)


def grid_subsample(cloud: PointCloud, dl: float, origin=(0.0, 0.0, 0.0)) -> PointCloud:
    """Keep one point per voxel: the barycenter of the points that fall in it.

    Scalar channels are averaged, normals averaged then renormalised, and
    integer channels take the value of the first point in the voxel. Output
    order follows the first occurrence of each voxel in the input.
    """
    if not dl > 0:
        raise InvalidParameterError(f"voxel size must be positive, got {dl}")
    if len(cloud) == 0:
        return cloud.subset(slice(0, 0))
    keys = pack_keys(voxel_indices(cloud.points, dl, origin))
    _, first, inverse, counts = np.unique(
        keys, return_index=True, return_inverse=True, return_counts=True
    )
    # reorder groups by first occurrence for a stable, input-driven ordering
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    group = rank[inverse.reshape(-1)]
    m = len(order)
    counts = counts[order]

    def mean(values):
        acc = np.zeros((m,) + values.shape[1:], dtype=np.float64)
        np.add.at(acc, group, values)
        return acc / counts.reshape((-1,) + (1,) * (values.ndim - 1))

    pts = mean(cloud.points)
    first_idx = first[order]
    normals = scores = None
    if cloud.normals is not None:
        normals = mean(cloud.normals)
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.where(norm > 0, normals / np.where(norm > 0, norm, 1.0), 0.0)
    if cloud.scores is not None:
        scores = mean(cloud.scores)
    labels = None if cloud.labels is None else cloud.labels[first_idx]
    gt = None if cloud.gt_class is None else cloud.gt_class[first_idx]
    return PointCloud(pts, normals, scores, labels, gt)


# ---------------------------------------------------------------------------
# Spherical coordinates


def cart_to_spherical(x) -> SphericalCoord:
    """(rho, theta, phi) with theta the polar angle from +z and phi = atan2(y, x)."""
    x = np.asarray(x, dtype=np.float64)
    rho = float(np.linalg.norm(x))
    if rho == 0.0:
        raise DegenerateInputError("spherical coordinates undefined at the origin")
    theta = float(np.arccos(np.clip(x[2] / rho, -1.0, 1.0)))
    phi = float(np.arctan2(x[1], x[0]))
    if phi >= np.pi:
        phi -= 2 * np.pi
    return SphericalCoord(rho, theta, phi)


def spherical_to_cart(s) -> np.ndarray:
    rho, theta, phi = s
    st = np.sin(theta)
    return np.array([rho * st * np.cos(phi), rho * st * np.sin(phi), rho * np.cos(theta)])


def cart_to_spherical_array(points: np.ndarray) -> np.ndarray:
    """Vectorised conversion; returns (N, 3) columns rho, theta, phi."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rho = np.linalg.norm(pts, axis=1)
    if np.any(rho == 0.0):
        raise DegenerateInputError("spherical coordinates undefined at the origin")
    theta = np.arccos(np.clip(pts[:, 2] / rho, -1.0, 1.0))
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    phi = np.where(phi >= np.pi, phi - 2 * np.pi, phi)
    return np.stack([rho, theta, phi], axis=1)


# ---------------------------------------------------------------------------
# PLY


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_NUMPY_TO_PLY = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
                 "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}

CLOUD_PROPERTIES = {
    "x": "f4", "y": "f4", "z": "f4",
    "nx": "f4", "ny": "f4", "nz": "f4",
    "score": "f4", "label": "u1", "gt_class": "u1",
}


def write_ply(path, fields: dict[str, np.ndarray], binary: bool = True) -> None:
    """Write a vertex-only PLY file. ``fields`` maps property name to a 1-D array."""
    names = list(fields)
    n = len(next(iter(fields.values()))) if fields else 0
    dtype = np.dtype([(k, "<" + np.asarray(fields[k]).dtype.str[1:]) for k in names])
    data = np.empty(n, dtype=dtype)
    for k in names:
        data[k] = fields[k]
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    for k in names:
        header.append(f"property {_NUMPY_TO_PLY[dtype[k].str[1:]]} {k}")
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(data.tobytes())
        else:
            for row in data:
                f.write((" ".join(repr(v.item()) for v in row) + "\n").encode("ascii"))


def read_ply(path) -> dict[str, np.ndarray]:
    """Read a vertex-only PLY (binary little/big endian or ASCII)."""
    raw = Path(path).read_bytes()
    pos = 0
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise PlyParseError("missing 'ply' magic or 'end_header'", 0)
    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    element = None
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise PlyParseError("unterminated header line", pos)
        line = raw[pos:nl].decode("ascii", errors="replace").strip()
        line_start = pos
        pos = nl + 1
        tokens = line.split()
        if not tokens or tokens[0] in ("ply", "comment", "obj_info"):
            continue
        if tokens[0] == "end_header":
            break
        if tokens[0] == "format":
            if len(tokens) != 3 or tokens[1] not in (
                "ascii", "binary_little_endian", "binary_big_endian"
            ):
                raise PlyParseError(f"unsupported format line '{line}'", line_start)
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise PlyParseError(f"malformed element line '{line}'", line_start)
            element = tokens[1]
            try:
                n = int(tokens[2])
            except ValueError:
                raise PlyParseError(f"non-integer element count '{tokens[2]}'", line_start)
            if n < 0:
                raise PlyParseError(f"negative element count {n}", line_start)
            if element == "vertex":
                count = n
            elif n > 0:
                raise PlyParseError(f"unsupported element '{element}'", line_start)
        elif tokens[0] == "property":
            if len(tokens) != 3 or tokens[1] not in _PLY_TYPES:
                raise PlyParseError(f"malformed property line '{line}'", line_start)
            if element == "vertex":
                props.append((tokens[2], _PLY_TYPES[tokens[1]]))
        else:
            raise PlyParseError(f"unexpected header keyword '{tokens[0]}'", line_start)
    if fmt is None or count is None:
        raise PlyParseError("header lacks format or vertex element", pos)
    if fmt == "ascii":
        values = []
        body = raw[pos:].split(b"\n")
        offset = pos
        for line in body:
            if len(values) == count:
                break
            if line.strip():
                toks = line.split()
                if len(toks) != len(props):
                    raise PlyParseError(
                        f"expected {len(props)} values, got {len(toks)}", offset
                    )
                values.append(toks)
            offset += len(line) + 1
        if len(values) < count:
            raise PlyParseError(f"truncated payload: {len(values)} of {count} vertices", offset)
        out = {}
        for c, (name, t) in enumerate(props):
            col = [v[c] for v in values]
            try:
                out[name] = np.array(col, dtype=np.float64).astype(t)
            except ValueError:
                raise PlyParseError(f"bad numeric value in property '{name}'", pos)
        return out
    endian = "<" if fmt == "binary_little_endian" else ">"
    dtype = np.dtype([(name, endian + t) for name, t in props])
    need = dtype.itemsize * count
    if len(raw) - pos < need:
        raise PlyParseError(
            f"truncated payload: need {need} bytes, found {len(raw) - pos}", len(raw)
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    return {name: data[name].astype(data[name].dtype.newbyteorder("=")) for name, _ in props}


def write_cloud(cloud: PointCloud, path, binary: bool = True) -> None:
    pts = cloud.points.astype(np.float32)
    fields = {"x": pts[:, 0], "y": pts[:, 1], "z": pts[:, 2]}
    if cloud.normals is not None:
        nrm = cloud.normals.astype(np.float32)
        fields.update(nx=nrm[:, 0], ny=nrm[:, 1], nz=nrm[:, 2])
    if cloud.scores is not None:
        fields["score"] = cloud.scores.astype(np.float32)
    if cloud.labels is not None:
        fields["label"] = cloud.labels.astype(np.uint8)
    if cloud.gt_class is not None:
        fields["gt_class"] = cloud.gt_class.astype(np.uint8)
    write_ply(path, fields, binary=binary)


def read_cloud(path) -> PointCloud:
    fields = read_ply(path)
    unknown = sorted(set(fields) - set(CLOUD_PROPERTIES))
    if unknown:
        raise PlyParseError(f"unknown vertex property '{unknown[0]}'", 0)
    for axis in ("x", "y", "z"):
        if axis not in fields:
            raise PlyParseError(f"missing vertex property '{axis}'", 0)
    pts = np.stack([fields["x"], fields["y"], fields["z"]], axis=1).astype(np.float64)
    normals = None
    if all(k in fields for k in ("nx", "ny", "nz")):
        normals = np.stack([fields["nx"], fields["ny"], fields["nz"]], axis=1).astype(np.float64)
    scores = fields["score"].astype(np.float64) if "score" in fields else None
    labels = fields.get("label")
    gt = fields.get("gt_class")
    if labels is not None and labels.size and labels.max() > max(SemanticLabel):
        raise PlyParseError(f"label value {int(labels.max())} out of range", 0)
    return PointCloud(pts, normals, scores, labels, gt)


# ---------------------------------------------------------------------------
# Session manifests


@dataclass
class Manifest:
    """Frames of one session in temporal order, with optional poses and map path."""

    frames: list[str]
    poses: list[Pose] | None = None
    times: list[float] | None = None
    map: str | None = None
    base_dir: str = "."

    def frame_paths(self) -> list[Path]:
        return [Path(self.base_dir) / p for p in self.frames]

    def load_frames(self) -> list[PointCloud]:
        return [read_cloud(p) for p in self.frame_paths()]

    def to_dict(self) -> dict:
        d: dict = {"frames": list(self.frames)}
        if self.poses is not None:
            d["poses"] = [[float(v) for v in p.as_matrix().reshape(-1)] for p in self.poses]
        if self.times is not None:
            d["times"] = [float(t) for t in self.times]
        if self.map is not None:
            d["map"] = self.map
        return d


def write_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=1) + "\n")


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InvalidParameterError(f"manifest {path} is not valid JSON: {e}") from e
    if not isinstance(d, dict) or not isinstance(d.get("frames"), list):
        raise InvalidParameterError(f"manifest {path} lacks a 'frames' list")
    poses = None
    if d.get("poses") is not None:
        if len(d["poses"]) != len(d["frames"]):
            raise InvalidParameterError("manifest poses and frames differ in length")
        poses = [Pose.from_matrix(p) for p in d["poses"]]
    return Manifest(
        frames=[str(f) for f in d["frames"]],
        poses=poses,
        times=d.get("times"),
        map=d.get("map"),
        base_dir=str(path.parent),
    )


def write_trajectory(poses: list[Pose | None], path) -> None:
    rows = [None if p is None else [float(v) for v in p.as_matrix().reshape(-1)] for p in poses]
    Path(path).write_text(json.dumps(rows) + "\n")


def read_trajectory(path) -> list[Pose | None]:
    rows = json.loads(Path(path).read_text())
    return [None if r is None else Pose.from_matrix(r) for r in rows]


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
