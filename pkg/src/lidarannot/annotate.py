"""Multi-session annotation: refine, ground split, buffer, labels, back-projection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import NEIGHBOR_OFFSETS, InvalidParameterError, PointCloud, Pose, SemanticLabel, pack_keys, unpack_keys
from .pointmap import IcpConfig, NormalParams, PointMap, map_update, pointmap_slam, slam_steps
from .pointray import RayParams, movable_probabilities, pointray_session

log = logging.getLogger(__name__)


class PipelineStageError(RuntimeError):
    """A pipeline step failed; ``step`` names it."""

    def __init__(self, step: str, message: str):
        super().__init__(f"[{step}] {message}")
        self.step = step


@dataclass(frozen=True)
class AnnotateParams:
    tau_refine: float = 0.9
    tau_short: float = 0.6
    tau_long: float = 0.2
    ransac_dist: float = 0.05
    ransac_iters: int = 500
    backproject_max_dist: float = 0.15
    ransac_max_tilt: float = np.deg2rad(15.0)
    ransac_min_inlier_frac: float = 0.05

    def __post_init__(self):
        if not 0 <= self.tau_long < self.tau_short <= 1:
            raise InvalidParameterError("need 0 <= tau_long < tau_short <= 1")
        if not 0 < self.tau_refine <= 1:
            raise InvalidParameterError("tau_refine must lie in (0, 1]")
        if not (self.ransac_dist > 0 and self.ransac_iters >= 1 and self.backproject_max_dist > 0):
            raise InvalidParameterError("RANSAC and back-projection parameters must be positive")


@dataclass
class RefinedMap:
    """Initial map minus movables, with Ground/Permanent labels per point."""

    map: PointMap
    labels: np.ndarray
    plane: np.ndarray | None = None  # (a, b, c, d) with a*x + b*y + c*z + d = 0


@dataclass
class Buffer:
    map: PointMap
    refined_index: np.ndarray  # index into the refined map, -1 when not from it
    poses: list[Pose | None]
    labels: np.ndarray | None = None

    @property
    def from_refined(self) -> np.ndarray:
        return self.refined_index >= 0

    def as_cloud(self) -> PointCloud:
        return PointCloud(self.map.positions, self.map.normals, self.map.scores, self.labels)


@dataclass
class AnnotatedSession:
    frames: list[PointCloud]
    refined: RefinedMap
    buffer: Buffer
    poses: list[Pose | None]
    counts: dict[str, int] = field(default_factory=dict)


def refine_map(
    initial_map: PointMap,
    frames: Sequence[PointCloud],
    poses: Sequence[Pose | None],
    params: AnnotateParams = AnnotateParams(),
    ray: RayParams = RayParams(),
) -> PointMap:
    """Remove points the session sees through more often than ``tau_refine``.

    Returns a new map; its counters are reset afterwards so every session
    gathers its own evidence.
    """
    refined = initial_map.copy()
    refined.reset_counters()
    pointray_session(refined, frames, poses, ray)
    p_mov = movable_probabilities(refined, ray)
    refined.remove(p_mov > params.tau_refine)
    refined.reset_counters()
    if len(refined) == 0:
        raise PipelineStageError("refine", "refined map is empty")
    log.info("refine: kept %d of %d map points", len(refined), len(initial_map))
    return refined


def fit_plane(points: np.ndarray) -> np.ndarray:
    """Least-squares plane (a, b, c, d), unit normal with c >= 0."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    if n[2] < 0:
        n = -n
    return np.append(n, -n @ c)


def extract_ground_ransac(
    point_map: PointMap, params: AnnotateParams = AnnotateParams(), seed: int = 0
) -> RefinedMap:
    """Split map points into Ground (dominant near-horizontal plane) and Permanent."""
    pts = point_map.positions
    n = len(pts)
    labels = np.full(n, SemanticLabel.PERMANENT, dtype=np.uint8)
    if n < 3:
        log.warning("ground extraction: fewer than 3 map points")
        return RefinedMap(point_map, labels)
    rng = np.random.default_rng(seed)
    cos_gate = np.cos(params.ransac_max_tilt)
    # candidate planes are scored only by points whose own normal is near vertical,
    # so a slanted slice through several walls cannot pass for the floor
    flat = np.abs(point_map.normals[:, 2]) >= cos_gate
    flat_pts = pts[flat]
    best_count, best_plane = 0, None
    samples = rng.integers(0, n, size=(params.ransac_iters, 3))
    for i0, i1, i2 in samples:
        a, b, c = pts[i0], pts[i1], pts[i2]
        nrm = np.cross(b - a, c - a)
        L = np.linalg.norm(nrm)
        if L < 1e-12:
            continue
        nrm /= L
        if abs(nrm[2]) < cos_gate:
            continue
        d = -nrm @ a
        count = int(np.count_nonzero(np.abs(flat_pts @ nrm + d) <= params.ransac_dist))
        if count > best_count:
            best_count, best_plane = count, np.append(nrm, d)
    if best_plane is None or best_count < params.ransac_min_inlier_frac * n:
        log.warning("ground extraction: no horizontal plane with enough inliers")
        return RefinedMap(point_map, labels)
    inliers = np.abs(pts @ best_plane[:3] + best_plane[3]) <= params.ransac_dist
    plane = fit_plane(pts[inliers])
    if abs(plane[2]) >= cos_gate:
        refit = np.abs(pts @ plane[:3] + plane[3]) <= params.ransac_dist
        if refit.sum() >= inliers.sum():
            inliers = refit
        else:
            plane = best_plane
    else:
        plane = best_plane
    labels[inliers] = SemanticLabel.GROUND
    return RefinedMap(point_map, labels, plane)


def match_refined(buffer_map: PointMap, refined_map: PointMap, neighborhood: bool = True) -> np.ndarray:
    """Refined-map index of each buffer point, else -1.

    With ``neighborhood`` a buffer point belongs to the refined map when a
    refined point lies in its voxel or one of the 26 around it (the same
    rule PointRay uses for occupied hits); the nearest such point is
    returned. Without it only the buffer point's own voxel is checked.
    """
    if refined_map.dl != buffer_map.dl or not np.array_equal(refined_map.origin, buffer_map.origin):
        raise InvalidParameterError("buffer and refined map use different voxel grids")
    if not neighborhood:
        return refined_map.lookup(buffer_map.keys)
    ijk = unpack_keys(buffer_map.keys)
    pos = buffer_map.positions
    best = np.full(len(ijk), -1, dtype=np.int64)
    best_d = np.full(len(ijk), np.inf)
    for off in NEIGHBOR_OFFSETS:
        j = refined_map.lookup(pack_keys(ijk + off))
        ok = np.flatnonzero(j >= 0)
        d = np.linalg.norm(refined_map.positions[j[ok]] - pos[ok], axis=1)
        closer = d < best_d[ok]
        best[ok[closer]] = j[ok[closer]]
        best_d[ok[closer]] = d[closer]
    return best


def build_buffer(
    frames: Sequence[PointCloud],
    refined_map: PointMap,
    cfg: IcpConfig = IcpConfig(),
    normal_params: NormalParams = NormalParams(),
    seed: int = 0,
    init_pose: Pose | None = None,
) -> Buffer:
    """Localize each frame on the refined map and aggregate it into a temporary map."""
    if len(frames) == 0:
        raise PipelineStageError("buffer", "session has no frames")
    buffer = PointMap(refined_map.dl, refined_map.origin)
    poses: list[Pose | None] = []
    for step, _ in slam_steps(
        frames, refined_map, cfg, normal_params, seed, init_pose, update_reference=False
    ):
        poses.append(step.pose)
        if step.pose is not None:
            map_update(buffer, step.cloud, step.pose)
    if len(buffer) == 0:
        raise PipelineStageError("buffer", "no frame could be localized")
    return Buffer(buffer, match_refined(buffer, refined_map), poses)


def threshold_labels(p_mov: np.ndarray, n_obs: np.ndarray, params: AnnotateParams, n_min: int = 10) -> np.ndarray:
    labels = np.full(len(p_mov), SemanticLabel.UNCERTAIN, dtype=np.uint8)
    labels[p_mov > params.tau_short] = SemanticLabel.SHORT_T
    labels[(p_mov < params.tau_long) & (n_obs > n_min)] = SemanticLabel.LONG_T
    return labels


def label_buffer(
    buffer: Buffer,
    refined: RefinedMap,
    p_mov: np.ndarray,
    params: AnnotateParams = AnnotateParams(),
    n_min: int = 10,
) -> np.ndarray:
    """Refined-map members inherit Ground/Permanent; others are thresholded on p_mov."""
    labels = threshold_labels(p_mov, buffer.map.n_obs, params, n_min)
    member = buffer.from_refined
    labels[member] = refined.labels[buffer.refined_index[member]]
    buffer.labels = labels
    return labels


def backproject_labels(
    buffer_points: np.ndarray,
    buffer_labels: np.ndarray,
    frames: Sequence[PointCloud],
    poses: Sequence[Pose | None],
    params: AnnotateParams = AnnotateParams(),
) -> list[PointCloud]:
    """Give each frame point the label of its nearest buffer point (gated by distance)."""
    tree = cKDTree(buffer_points) if len(buffer_points) else None
    out = []
    for frame, pose in zip(frames, poses):
        labels = np.full(len(frame), SemanticLabel.UNCERTAIN, dtype=np.uint8)
        if pose is not None and tree is not None and len(frame):
            d, j = tree.query(pose.apply(frame.points), distance_upper_bound=params.backproject_max_dist)
            ok = np.isfinite(d)
            labels[ok] = buffer_labels[j[ok]]
        out.append(frame.with_channels(labels=labels))
    return out


def label_counts(frames: Sequence[PointCloud]) -> dict[str, int]:
    counts = np.zeros(len(SemanticLabel), dtype=np.int64)
    for f in frames:
        if f.labels is not None:
            counts += np.bincount(f.labels, minlength=len(SemanticLabel))[: len(SemanticLabel)]
    return {lab.name: int(c) for lab, c in zip(SemanticLabel, counts)}


def annotate_session(
    initial_map: PointMap,
    frames: Sequence[PointCloud],
    params: AnnotateParams = AnnotateParams(),
    cfg: IcpConfig = IcpConfig(),
    normal_params: NormalParams = NormalParams(),
    ray: RayParams = RayParams(),
    seed: int = 0,
    init_pose: Pose | None = None,
) -> AnnotatedSession:
    """Label every point of a session's frames with one of the five classes.

    The returned refined map becomes the initial map of the next session.
    """
    if len(frames) == 0:
        raise PipelineStageError("localize", "session has no frames")
    if len(initial_map) == 0:
        raise PipelineStageError("localize", "initial map is empty")
    loc = pointmap_slam(frames, initial_map, cfg, normal_params, seed, init_pose, update_map=False)
    if loc.n_failed == len(frames):
        raise PipelineStageError("localize", "no frame could be localized on the initial map")
    refined_map = refine_map(initial_map, frames, loc.trajectory, params, ray)
    refined = extract_ground_ransac(refined_map, params, seed)
    buffer = build_buffer(frames, refined_map, cfg, normal_params, seed, init_pose)
    report = pointray_session(buffer.map, frames, buffer.poses, ray)
    labels = label_buffer(buffer, refined, report.p_mov, params, ray.n_min)
    labeled = backproject_labels(buffer.map.positions, labels, frames, buffer.poses, params)
    return AnnotatedSession(labeled, refined, buffer, buffer.poses, label_counts(labeled))


LOCALIZATION_KEEP = (SemanticLabel.GROUND, SemanticLabel.PERMANENT)
PLANNING_DROP = (SemanticLabel.SHORT_T,)


def filter_frame(frame: PointCloud, mode: str) -> PointCloud:
    """Triage a labeled frame for localization (ground + permanent) or planning (no shortT)."""
    if frame.labels is None:
        raise InvalidParameterError("filter_frame needs a labeled frame")
    if mode == "localization":
        keep = np.isin(frame.labels, LOCALIZATION_KEEP)
    elif mode == "planning":
        keep = ~np.isin(frame.labels, PLANNING_DROP)
    else:
        raise InvalidParameterError(f"unknown filter mode '{mode}'")
    return frame.subset(keep)


GT_TO_LABEL = np.array(
    [
        SemanticLabel.GROUND,  # ground
        SemanticLabel.PERMANENT,  # wall
        SemanticLabel.PERMANENT,  # door
        SemanticLabel.LONG_T,  # table
        SemanticLabel.LONG_T,  # chair
        SemanticLabel.LONG_T,  # still person
        SemanticLabel.SHORT_T,  # moving person
    ],
    dtype=np.uint8,
)


def groundtruth_labels(frame: PointCloud) -> PointCloud:
    """Semantic labels implied by simulator classes (groundtruth filtering round)."""
    if frame.gt_class is None:
        raise InvalidParameterError("frame has no groundtruth classes")
    return frame.with_channels(labels=GT_TO_LABEL[frame.gt_class])
