"""ICP localization and sparse voxel-hash mapping."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    InvalidParameterError,
    PointCloud,
    Pose,
    VoxelKey,
    grid_subsample,
    pack_keys,
    read_ply,
    to_sensor_precision,
    unpack_keys,
    voxel_indices,
    write_ply,
)

log = logging.getLogger(__name__)

HDL32_THETA_RES = np.deg2rad(1.33)


@dataclass(frozen=True)
class IcpConfig:
    subsample_dl: float = 0.10
    n_samples: int = 600
    max_pair_dist: float = 2.0
    max_plane_dist: float = 0.30
    max_iterations: int = 100
    min_motion_trans: float = 0.01
    min_motion_rot: float = 0.001

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise InvalidParameterError(f"IcpConfig.{name} must be positive, got {value}")


@dataclass(frozen=True)
class NormalParams:
    theta_res: float = HDL32_THETA_RES
    radius_factor: float = 1.5
    theta_0: float = 5 * np.pi / 12
    R_0: float = 2.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise InvalidParameterError(f"NormalParams.{name} must be positive, got {value}")
        if not self.theta_0 < np.pi / 2:
            raise InvalidParameterError("NormalParams.theta_0 must be below pi/2")


@dataclass
class IcpResult:
    pose: Pose
    iterations: int
    converged: bool
    final_rms_plane_dist: float
    n_inlier_pairs: int
    failed: bool = False


@dataclass
class MapPoint:
    position: np.ndarray
    normal: np.ndarray
    score: float
    n_obs: int
    movable_hits: int


@dataclass
class MapUpdateStats:
    inserted: int = 0
    normals_replaced: int = 0
    unchanged: int = 0
    skipped_invalid: int = 0


class PointMap:
    """Sparse voxel map holding at most one point per cell of size ``dl``.

    Storage is columnar (numpy arrays indexed by insertion order) with a
    packed-key index for vectorised voxel lookup, plus a lazily rebuilt
    k-d tree over positions for nearest-neighbour queries.
    """

    def __init__(self, dl: float = 0.03, origin=(0.0, 0.0, 0.0)):
        if not dl > 0:
            raise InvalidParameterError(f"map voxel size must be positive, got {dl}")
        self.dl = float(dl)
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.positions = np.zeros((0, 3))
        self.normals = np.zeros((0, 3))
        self.scores = np.zeros(0)
        self.n_obs = np.zeros(0, dtype=np.int64)
        self.movable_hits = np.zeros(0, dtype=np.int64)
        self.keys = np.zeros(0, dtype=np.int64)
        self._sorted_keys = None
        self._sort_idx = None
        self._tree = None
        self._tree_size = 0

    def __len__(self) -> int:
        return len(self.keys)

    def copy(self) -> PointMap:
        m = PointMap(self.dl, self.origin)
        for name in ("positions", "normals", "scores", "n_obs", "movable_hits", "keys"):
            setattr(m, name, getattr(self, name).copy())
        return m

    # -- voxel index ---------------------------------------------------------

    def voxel_keys(self, points: np.ndarray) -> np.ndarray:
        return pack_keys(voxel_indices(points, self.dl, self.origin))

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        """Map packed voxel keys to storage indices, -1 where the voxel is empty."""
        keys = np.asarray(keys, dtype=np.int64)
        if len(self.keys) == 0:
            return np.full(keys.shape, -1, dtype=np.int64)
        if self._sorted_keys is None:
            self._sort_idx = np.argsort(self.keys, kind="stable")
            self._sorted_keys = self.keys[self._sort_idx]
        pos = np.searchsorted(self._sorted_keys, keys)
        pos = np.minimum(pos, len(self._sorted_keys) - 1)
        found = self._sorted_keys[pos] == keys
        return np.where(found, self._sort_idx[pos], -1)

    def __contains__(self, key) -> bool:
        return bool(self.lookup(pack_keys(np.asarray([tuple(key)])))[0] >= 0)

    def __getitem__(self, key) -> MapPoint:
        idx = int(self.lookup(pack_keys(np.asarray([tuple(key)])))[0])
        if idx < 0:
            raise KeyError(key)
        return self.point(idx)

    def point(self, idx: int) -> MapPoint:
        return MapPoint(
            self.positions[idx].copy(),
            self.normals[idx].copy(),
            float(self.scores[idx]),
            int(self.n_obs[idx]),
            int(self.movable_hits[idx]),
        )

    def voxel_key_list(self) -> list[VoxelKey]:
        return [VoxelKey(*map(int, k)) for k in unpack_keys(self.keys)]

    def voxel_set(self) -> set[int]:
        return set(self.keys.tolist())

    # -- mutation --------------------------------------------------------------

    def _append(self, positions, normals, scores, keys):
        self.positions = np.concatenate([self.positions, positions])
        self.normals = np.concatenate([self.normals, normals])
        self.scores = np.concatenate([self.scores, scores])
        self.keys = np.concatenate([self.keys, keys])
        zeros = np.zeros(len(keys), dtype=np.int64)
        self.n_obs = np.concatenate([self.n_obs, zeros])
        self.movable_hits = np.concatenate([self.movable_hits, zeros])
        self._sorted_keys = None

    def remove(self, mask: np.ndarray) -> None:
        """Drop the points selected by a boolean mask."""
        keep = ~np.asarray(mask, dtype=bool)
        for name in ("positions", "normals", "scores", "n_obs", "movable_hits", "keys"):
            setattr(self, name, getattr(self, name)[keep])
        self._sorted_keys = None
        self._tree = None
        self._tree_size = 0

    def reset_counters(self) -> None:
        self.n_obs[:] = 0
        self.movable_hits[:] = 0

    # -- nearest neighbours ----------------------------------------------------

    def kdtree(self) -> tuple[cKDTree, int]:
        """k-d tree over the first ``size`` points; rebuilt once >10% are new."""
        n = len(self)
        if self._tree is None or n > 1.1 * self._tree_size:
            self._tree = cKDTree(self.positions)
            self._tree_size = n
        return self._tree, self._tree_size

    def as_cloud(self) -> PointCloud:
        return PointCloud(self.positions.copy(), self.normals.copy(), self.scores.copy())


def normal_score(alpha, R, params: NormalParams = NormalParams()):
    """Heuristic normal quality in [0, 2] from incidence angle and range."""
    alpha = np.asarray(alpha, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    grazing = (np.pi / 2 - alpha) / (np.pi / 2 - params.theta_0)
    facing = 1.0 + np.exp(-((R - params.R_0) ** 2))
    return np.where(alpha > params.theta_0, grazing, facing)


def valid_normals(cloud: PointCloud) -> np.ndarray:
    if cloud.normals is None:
        return np.zeros(len(cloud), dtype=bool)
    return np.linalg.norm(cloud.normals, axis=1) > 0.5


def compute_normals_spherical(
    frame: PointCloud,
    params: NormalParams = NormalParams(),
    query: PointCloud | None = None,
    planarity_eps: float = 1e-3,
) -> PointCloud:
    """Estimate normals and scores from angular neighbourhoods.

    The frame must be in sensor coordinates. Neighbours of a point are the
    frame points within ``radius_factor * theta_res`` under the metric
    sqrt(dtheta^2 + (dphi * sin(theta))^2). Normals are computed for
    ``query`` points (default: the frame itself) using the full frame as
    support, which lets a subsampled cloud reuse the dense scan lines.

    Points with fewer than 3 neighbours or a collinear neighbourhood get a
    zero normal and a zero score.
    """
    target = frame if query is None else query
    m = len(target)
    normals = np.zeros((m, 3))
    scores = np.zeros(m)
    if m == 0 or len(frame) < 3:
        return target.with_channels(normals=normals, scores=scores)

    pts = frame.points
    rho = np.linalg.norm(pts, axis=1)
    ok = rho > 0
    pts = pts[ok]
    rho = rho[ok]
    theta = np.arccos(np.clip(pts[:, 2] / rho, -1.0, 1.0))
    phi = np.arctan2(pts[:, 1], pts[:, 0])

    q = target.points
    q_rho = np.linalg.norm(q, axis=1)
    q_ok = q_rho > 0
    safe_rho = np.where(q_ok, q_rho, 1.0)
    q_theta = np.arccos(np.clip(q[:, 2] / safe_rho, -1.0, 1.0))
    q_phi = np.arctan2(q[:, 1], q[:, 0])

    radius = params.radius_factor * params.theta_res
    # candidates from a chord-distance ball on the unit sphere, slightly inflated
    chord = 2.0 * np.sin(min(1.2 * radius, np.pi) / 2.0)
    tree = cKDTree(pts / rho[:, None])
    cand = tree.query_ball_point(q / safe_rho[:, None], chord)
    lens = np.fromiter((len(c) for c in cand), dtype=np.int64, count=m)
    if lens.sum() == 0:
        return target.with_channels(normals=normals, scores=scores)
    nbr = np.concatenate([np.asarray(c, dtype=np.int64) for c in cand if len(c)])
    owner = np.repeat(np.arange(m), lens)

    dtheta = theta[nbr] - q_theta[owner]
    dphi = np.angle(np.exp(1j * (phi[nbr] - q_phi[owner])))
    dist = np.sqrt(dtheta**2 + (dphi * np.sin(q_theta[owner])) ** 2)
    keep = dist <= radius
    nbr = nbr[keep]
    owner = owner[keep]

    counts = np.bincount(owner, minlength=m).astype(np.float64)
    safe = np.maximum(counts, 1.0)
    P = pts[nbr]
    mean = np.stack([np.bincount(owner, P[:, c], minlength=m) for c in range(3)], axis=1)
    mean /= safe[:, None]
    D = P - mean[owner]
    cov = np.zeros((m, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            s = np.bincount(owner, D[:, a] * D[:, b], minlength=m) / safe
            cov[:, a, b] = s
            cov[:, b, a] = s

    w, v = np.linalg.eigh(cov)
    n = v[:, :, 0]
    good = (counts >= 3) & q_ok & (w[:, 1] > planarity_eps * np.maximum(w[:, 2], 1e-300))

    to_sensor = -q / safe_rho[:, None]
    dot = np.einsum("ij,ij->i", n, to_sensor)
    n = np.where(dot[:, None] < 0, -n, n)
    cos_a = np.clip(np.abs(dot), 0.0, 1.0)
    alpha = np.arccos(cos_a)
    s = normal_score(alpha, q_rho, params)

    normals[good] = n[good]
    scores[good] = np.clip(s[good], 0.0, 2.0)
    return target.with_channels(normals=normals, scores=scores)


def icp_align(
    frame: PointCloud,
    point_map: PointMap,
    init: Pose = Pose(),
    cfg: IcpConfig = IcpConfig(),
    rng_seed: int = 0,
) -> IcpResult:
    """Point-to-plane ICP of a sensor frame onto the map.

    Returns the pose mapping frame coordinates into map coordinates. The
    frame is grid-subsampled first; each iteration matches a fresh random
    draw of ``n_samples`` points to their single nearest map point.
    """
    if len(point_map) == 0:
        raise InvalidParameterError("cannot align against an empty map")
    if len(frame) == 0:
        raise InvalidParameterError("cannot align an empty frame")
    sub_cloud = grid_subsample(frame, cfg.subsample_dl)
    sub = sub_cloud.points
    if sub_cloud.normals is not None:
        # points without a valid normal sit on edges or alone; their pairs are unreliable
        ok = valid_normals(sub_cloud)
        if ok.sum() >= 6:
            sub = sub[ok]
    tree, size = point_map.kdtree()
    map_pos = point_map.positions[:size]
    map_nrm = point_map.normals[:size]
    rng = np.random.default_rng(rng_seed)
    pose = init
    n = len(sub)
    rms = float("nan")
    n_pairs = 0
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if n > cfg.n_samples:
            idx = rng.choice(n, size=cfg.n_samples, replace=False)
        else:
            idx = np.arange(n)
        p = pose.apply(sub[idx])
        d, j = tree.query(p, distance_upper_bound=cfg.max_pair_dist)
        keep = np.isfinite(d) & (d <= cfg.max_pair_dist)
        j = np.where(keep, j, 0)
        q = map_pos[j]
        nrm = map_nrm[j]
        r = np.einsum("ij,ij->i", p - q, nrm)
        if it > 1:
            keep &= np.abs(r) <= cfg.max_plane_dist
        n_pairs = int(keep.sum())
        if n_pairs < 6:
            log.debug("ICP failed at iteration %d with %d pairs", it, n_pairs)
            return IcpResult(pose, it, False, float("nan"), n_pairs, failed=True)
        p, nrm, r = p[keep], nrm[keep], r[keep]
        rms = float(np.sqrt(np.mean(r**2)))
        c = pose.translation
        A = np.hstack([np.cross(p - c, nrm), nrm])
        H = A.T @ A
        g = A.T @ (-r)
        try:
            delta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(A, -r, rcond=None)[0]
        R_inc = Pose.from_rotvec(delta[:3]).rotation
        inc = Pose(R_inc, c + delta[3:] - R_inc @ c)
        new_pose = inc @ pose
        rel = pose.inverse() @ new_pose
        pose = new_pose
        if (
            np.linalg.norm(rel.translation) < cfg.min_motion_trans
            and np.linalg.norm(delta[:3]) < cfg.min_motion_rot
        ):
            converged = True
            break
    return IcpResult(pose, it, converged, rms, n_pairs)


def map_update(point_map: PointMap, frame: PointCloud, pose: Pose) -> MapUpdateStats:
    """Insert an aligned frame (with normals and scores) into the map in place.

    Empty voxels take the incoming point. Occupied voxels keep their first
    position and only take the incoming normal and score when its score is
    strictly higher. Observation counters are left alone.
    """
    stats = MapUpdateStats()
    if frame.normals is None or frame.scores is None:
        raise InvalidParameterError("map_update needs a frame with normals and scores")
    valid = valid_normals(frame)
    stats.skipped_invalid = int((~valid).sum())
    if not valid.any():
        return stats
    pos = to_sensor_precision(pose.apply(frame.points[valid]))
    nrm = to_sensor_precision(pose.rotate(frame.normals[valid]))
    sc = to_sensor_precision(frame.scores[valid])
    keys = point_map.voxel_keys(pos)

    existing = point_map.lookup(keys)
    old = existing >= 0
    if old.any():
        # highest score per existing voxel among the incoming points
        idx = existing[old]
        inc_sc = sc[old]
        inc_nrm = nrm[old]
        order = np.lexsort((-inc_sc, idx))
        idx_s = idx[order]
        first = np.ones(len(idx_s), dtype=bool)
        first[1:] = idx_s[1:] != idx_s[:-1]
        best_idx = idx_s[first]
        best_sc = inc_sc[order][first]
        best_nrm = inc_nrm[order][first]
        better = best_sc > point_map.scores[best_idx]
        point_map.scores[best_idx[better]] = best_sc[better]
        point_map.normals[best_idx[better]] = best_nrm[better]
        stats.normals_replaced = int(better.sum())
        stats.unchanged = int(old.sum()) - stats.normals_replaced

    new = ~old
    if new.any():
        new_keys = keys[new]
        # within one frame the first point per voxel is inserted; later ones
        # compete on score as they would on a sequential insert
        order = np.argsort(new_keys, kind="stable")
        ks = new_keys[order]
        first = np.ones(len(ks), dtype=bool)
        first[1:] = ks[1:] != ks[:-1]
        group_start = np.cumsum(first) - 1
        src = np.flatnonzero(new)[order]
        first_src = src[first]
        ins_pos = pos[first_src]
        ins_nrm = nrm[first_src].copy()
        ins_sc = sc[first_src].copy()
        grp_sc = sc[src]
        best = np.full(len(first_src), -np.inf)
        np.maximum.at(best, group_start, grp_sc)
        # choose the earliest point reaching the group maximum
        is_best = grp_sc == best[group_start]
        cand = np.where(is_best, np.arange(len(src)), len(src))
        best_member = np.full(len(first_src), len(src))
        np.minimum.at(best_member, group_start, cand)
        improved = best > ins_sc
        ins_sc[improved] = best[improved]
        ins_nrm[improved] = nrm[src[best_member[improved]]]
        # keep insertion order deterministic: by first occurrence in the frame
        ord2 = np.argsort(first_src, kind="stable")
        point_map._append(ins_pos[ord2], ins_nrm[ord2], ins_sc[ord2], ks[first][ord2])
        stats.inserted = len(first_src)
        stats.normals_replaced += int(improved.sum())
    return stats


@dataclass
class FrameStep:
    index: int
    cloud: PointCloud  # subsampled, sensor coordinates, with normals/scores
    pose: Pose | None
    result: IcpResult | None


@dataclass
class SlamResult:
    map: PointMap
    trajectory: list[Pose | None]
    results: list[IcpResult | None] = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return sum(p is None for p in self.trajectory)


def prepare_frame(frame: PointCloud, cfg: IcpConfig, params: NormalParams) -> PointCloud:
    """Subsample a sensor frame and attach normals computed on the full scan."""
    sub = grid_subsample(frame, cfg.subsample_dl)
    return compute_normals_spherical(frame, params, query=sub)


def _predict(trajectory: list[Pose | None], start: Pose) -> Pose:
    valid = [p for p in trajectory if p is not None]
    if not valid:
        return start
    if len(valid) < 2 or trajectory[-1] is None or trajectory[-2] is None:
        return valid[-1]
    prev, last = trajectory[-2], trajectory[-1]
    return last @ (prev.inverse() @ last)


def slam_steps(
    frames: Iterable[PointCloud],
    reference: PointMap | None,
    cfg: IcpConfig = IcpConfig(),
    params: NormalParams = NormalParams(),
    seed: int = 0,
    init_pose: Pose | None = None,
    update_reference: bool = True,
    dl_map: float = 0.03,
) -> Iterator[tuple[FrameStep, PointMap]]:
    """Per-frame PointMap loop shared by mapping, localization and buffering."""
    start = Pose() if init_pose is None else init_pose
    trajectory: list[Pose | None] = []
    ref = reference
    for i, frame in enumerate(frames):
        cloud = prepare_frame(frame, cfg, params)
        if ref is None or len(ref) == 0:
            ref = PointMap(dl_map) if ref is None else ref
            pose = start if not trajectory else _predict(trajectory, start)
            map_update(ref, cloud, pose)
            trajectory.append(pose)
            yield FrameStep(i, cloud, pose, None), ref
            continue
        init = _predict(trajectory, start)
        res = icp_align(cloud, ref, init, cfg, rng_seed=seed + i)
        if res.failed:
            log.warning("frame %d: ICP failed (%d pairs), pose marked invalid", i, res.n_inlier_pairs)
            trajectory.append(None)
            yield FrameStep(i, cloud, None, res), ref
            continue
        trajectory.append(res.pose)
        if update_reference:
            map_update(ref, cloud, res.pose)
        yield FrameStep(i, cloud, res.pose, res), ref


def pointmap_slam(
    frames: Iterable[PointCloud],
    initial_map: PointMap | None = None,
    cfg: IcpConfig = IcpConfig(),
    params: NormalParams = NormalParams(),
    seed: int = 0,
    init_pose: Pose | None = None,
    update_map: bool = True,
    dl_map: float = 0.03,
) -> SlamResult:
    """Align each frame on the map in order and grow the map with it.

    Without an initial map, the first frame seeds the map at ``init_pose``
    (identity by default). With ``update_map=False`` the given map is a
    fixed localization reference.
    """
    point_map = initial_map.copy() if initial_map is not None else None
    trajectory: list[Pose | None] = []
    results: list[IcpResult | None] = []
    for step, point_map in slam_steps(
        frames, point_map, cfg, params, seed, init_pose, update_map, dl_map
    ):
        trajectory.append(step.pose)
        results.append(step.result)
    if point_map is None:
        raise InvalidParameterError("pointmap_slam needs at least one frame")
    return SlamResult(point_map, trajectory, results)


# ---------------------------------------------------------------------------
# Serialization


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".sidecar.json")


def write_map(point_map: PointMap, path) -> None:
    """Map PLY (positions, normals, scores) plus a JSON sidecar with counters."""
    pos = point_map.positions.astype(np.float32)
    nrm = point_map.normals.astype(np.float32)
    write_ply(
        path,
        {
            "x": pos[:, 0], "y": pos[:, 1], "z": pos[:, 2],
            "nx": nrm[:, 0], "ny": nrm[:, 1], "nz": nrm[:, 2],
            "score": point_map.scores.astype(np.float32),
        },
    )
    ijk = unpack_keys(point_map.keys)
    voxels = {
        f"{i},{j},{k}": [int(a), int(b)]
        for (i, j, k), a, b in zip(ijk.tolist(), point_map.n_obs, point_map.movable_hits)
    }
    meta = {"dl_map": point_map.dl, "origin": point_map.origin.tolist(), "voxels": voxels}
    sidecar_path(path).write_text(json.dumps(meta) + "\n")


def read_map(path, dl: float = 0.03) -> PointMap:
    """Load a map written by ``write_map``; a plain PLY is voxelized on load."""
    fields = read_ply(path)
    pos = np.stack([fields["x"], fields["y"], fields["z"]], axis=1).astype(np.float64)
    if all(k in fields for k in ("nx", "ny", "nz")):
        nrm = np.stack([fields["nx"], fields["ny"], fields["nz"]], axis=1).astype(np.float64)
    else:
        nrm = np.zeros_like(pos)
    sc = fields["score"].astype(np.float64) if "score" in fields else np.zeros(len(pos))
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        m = PointMap(meta["dl_map"], meta["origin"])
        entries = meta["voxels"]
        if len(entries) != len(pos):
            raise InvalidParameterError(
                f"sidecar lists {len(entries)} voxels for {len(pos)} map points"
            )
        ijk = np.array([[int(v) for v in k.split(",")] for k in entries], dtype=np.int64)
        counters = np.array(list(entries.values()), dtype=np.int64).reshape(-1, 2)
        m._append(pos, nrm, sc, pack_keys(ijk))
        m.n_obs[:] = counters[:, 0]
        m.movable_hits[:] = counters[:, 1]
        return m
    m = PointMap(dl)
    keys = m.voxel_keys(pos)
    _, first = np.unique(keys, return_index=True)
    first = np.sort(first)
    m._append(pos[first], nrm[first], sc[first], keys[first])
    return m
