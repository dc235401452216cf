"""Ray-traced movable probabilities on a point map."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    NEIGHBOR_OFFSETS,
    InvalidParameterError,
    PointCloud,
    Pose,
    pack_keys,
    unpack_keys,
    voxel_indices,
    write_ply,
)
from .pointmap import PointMap

log = logging.getLogger(__name__)

D_THETA = np.deg2rad(1.33)
D_PHI = np.deg2rad(0.1)


@dataclass(frozen=True)
class RayParams:
    alpha_max: float = 5 * np.pi / 12
    beta_min: float = np.pi / 3
    n_min: int = 10
    d_theta: float = D_THETA
    d_phi: float = D_PHI
    crop_margin: float = 0.5

    def __post_init__(self):
        if not 0 < self.alpha_max < np.pi / 2:
            raise InvalidParameterError("alpha_max must lie in (0, pi/2)")
        if not 0 < self.beta_min < np.pi / 2:
            raise InvalidParameterError("beta_min must lie in (0, pi/2)")
        if not self.n_min >= 1:
            raise InvalidParameterError("n_min must be at least 1")
        if not (self.d_theta > 0 and self.d_phi > 0):
            raise InvalidParameterError("frustum resolutions must be positive")
        if not self.crop_margin >= 0:
            raise InvalidParameterError("crop_margin must be non-negative")


@dataclass
class FrustumGrid:
    """Lidar depth image: minimum range per (theta, phi) cell.

    Cell edges are offset by half a cell from the frame's extreme angles so
    that regularly spaced scan lines fall on cell centres.
    """

    d_theta: float
    d_phi: float
    theta_min: float
    phi_min: float
    cells: np.ndarray  # (n_theta, n_phi), +inf where empty

    def cell_index(self, theta: np.ndarray, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row/column of each direction and a mask of those inside the grid."""
        it = np.floor((theta - self.theta_min) / self.d_theta).astype(np.int64)
        ip = np.floor((phi - self.phi_min) / self.d_phi).astype(np.int64)
        nt, npx = self.cells.shape
        inside = (it >= 0) & (it < nt) & (ip >= 0) & (ip < npx)
        return np.clip(it, 0, max(nt - 1, 0)), np.clip(ip, 0, max(npx - 1, 0)), inside

    def depth(self, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """Cell depth for each direction, NaN outside the grid."""
        it, ip, inside = self.cell_index(theta, phi)
        if self.cells.size == 0:
            return np.full(np.shape(theta), np.nan)
        return np.where(inside, self.cells[it, ip], np.nan)


def _spherical(points: np.ndarray):
    rho = np.linalg.norm(points, axis=1)
    safe = np.where(rho > 0, rho, 1.0)
    theta = np.arccos(np.clip(points[:, 2] / safe, -1.0, 1.0))
    phi = np.arctan2(points[:, 1], points[:, 0])
    return rho, theta, phi


def build_frustum_grid(
    frame: PointCloud, d_theta: float = D_THETA, d_phi: float = D_PHI
) -> FrustumGrid:
    """Project a sensor-frame cloud into a min-range depth image."""
    pts = frame.points
    rho, theta, phi = _spherical(pts)
    ok = rho > 0
    rho, theta, phi = rho[ok], theta[ok], phi[ok]
    if len(rho) == 0:
        return FrustumGrid(d_theta, d_phi, 0.0, -np.pi, np.zeros((0, 0)))
    theta_min = theta.min() - d_theta / 2
    phi_min = phi.min() - d_phi / 2
    nt = int(np.floor((theta.max() - theta_min) / d_theta)) + 1
    npx = int(np.floor((phi.max() - phi_min) / d_phi)) + 1
    cells = np.full((nt, npx), np.inf)
    grid = FrustumGrid(d_theta, d_phi, theta_min, phi_min, cells)
    it, ip, _ = grid.cell_index(theta, phi)
    np.minimum.at(cells, (it, ip), rho)
    return grid


def margin(rho_0, d_theta: float = D_THETA, d_phi: float = D_PHI):
    """Largest half size of a frustum cell at range ``rho_0``."""
    return np.asarray(rho_0, dtype=np.float64) * max(d_theta, d_phi) / 2


def free_space_conditions(rho, rho_0, normal_z, alpha, params: RayParams = RayParams()):
    """Evaluate the depth-gap and incidence conditions for free-space updates.

    Returns a boolean array; both conditions must hold.
    """
    rho = np.asarray(rho, dtype=np.float64)
    rho_0 = np.asarray(rho_0, dtype=np.float64)
    cond_a = rho < rho_0 - margin(rho_0, params.d_theta, params.d_phi)
    cond_b = (np.abs(normal_z) > np.cos(params.beta_min)) | (np.asarray(alpha) < params.alpha_max)
    return cond_a & cond_b


def mark_occupied(point_map: PointMap, frame: PointCloud, pose: Pose, updated: np.ndarray | None = None) -> np.ndarray:
    """Count one occupied observation for every map point hit by the frame.

    A map point is hit when a transformed frame point falls in its voxel or
    in one of the 26 neighbouring voxels. Each map point is updated at most
    once per frame. Returns the boolean mask of map points updated by this
    frame so far (shared with ``raytrace_free``).
    """
    if updated is None:
        updated = np.zeros(len(point_map), dtype=bool)
    if len(frame) == 0 or len(point_map) == 0:
        return updated
    world = pose.apply(frame.points)
    ijk = np.unique(voxel_indices(world, point_map.dl, point_map.origin), axis=0)
    cand = (ijk[:, None, :] + NEIGHBOR_OFFSETS[None, :, :]).reshape(-1, 3)
    keys = np.unique(pack_keys(cand))
    idx = point_map.lookup(keys)
    idx = np.unique(idx[idx >= 0])
    idx = idx[~updated[idx]]
    point_map.n_obs[idx] += 1
    updated[idx] = True
    return updated


def raytrace_free(
    point_map: PointMap,
    frame: PointCloud,
    pose: Pose,
    params: RayParams = RayParams(),
    updated: np.ndarray | None = None,
    grid: FrustumGrid | None = None,
) -> np.ndarray:
    """Count free-space observations for map points seen through by the frame.

    Must run after ``mark_occupied`` for the same frame, passing its mask:
    points already updated by the frame are never marked free.
    """
    if updated is None:
        updated = np.zeros(len(point_map), dtype=bool)
    if len(frame) == 0 or len(point_map) == 0:
        return updated
    if grid is None:
        grid = build_frustum_grid(frame, params.d_theta, params.d_phi)
    world = pose.apply(frame.points)
    # the sensor joins the box: rays start there even when the scan is partial
    lo = np.minimum(world.min(axis=0), pose.translation) - params.crop_margin
    hi = np.maximum(world.max(axis=0), pose.translation) + params.crop_margin
    pos = point_map.positions
    crop = np.all((pos >= lo) & (pos <= hi), axis=1) & ~updated
    idx = np.flatnonzero(crop)
    if len(idx) == 0:
        return updated
    local = pose.inverse().apply(pos[idx])
    rho, theta, phi = _spherical(local)
    rho_0 = grid.depth(theta, phi)
    measured = np.isfinite(rho_0) & (rho > 0)
    idx, rho, rho_0, local = idx[measured], rho[measured], rho_0[measured], local[measured]
    normals = point_map.normals[idx]
    ray = local / rho[:, None]
    n_local = pose.inverse().rotate(normals)
    alpha = np.arccos(np.clip(np.abs(np.einsum("ij,ij->i", n_local, ray)), 0.0, 1.0))
    free = free_space_conditions(rho, rho_0, normals[:, 2], alpha, params)
    hit = idx[free]
    point_map.n_obs[hit] += 1
    point_map.movable_hits[hit] += 1
    updated[hit] = True
    return updated


def movable_probability(n_obs, movable_hits, n_min: int = 10):
    """Fraction of free observations, or 0.5 for points seen ``n_min`` times or fewer."""
    n_obs = np.asarray(n_obs)
    hits = np.asarray(movable_hits)
    seen = n_obs > n_min
    return np.where(seen, hits / np.where(seen, n_obs, 1), 0.5)


def movable_probabilities(point_map: PointMap, params: RayParams = RayParams()) -> np.ndarray:
    """Per-point movable probability, aligned with the map's storage order."""
    return movable_probability(point_map.n_obs, point_map.movable_hits, params.n_min)


@dataclass
class RaySessionReport:
    p_mov: np.ndarray
    frames_used: int
    frames_skipped: int


def pointray_session(
    point_map: PointMap,
    frames: Sequence[PointCloud],
    poses: Sequence[Pose | None],
    params: RayParams = RayParams(),
) -> RaySessionReport:
    """Ray-trace a whole session into the map counters (in place)."""
    if len(frames) != len(poses):
        raise InvalidParameterError("frames and poses differ in length")
    used = skipped = 0
    for frame, pose in zip(frames, poses):
        if pose is None:
            skipped += 1
            continue
        updated = mark_occupied(point_map, frame, pose)
        raytrace_free(point_map, frame, pose, params, updated)
        used += 1
    if skipped:
        log.warning("pointray: skipped %d frames without a valid pose", skipped)
    return RaySessionReport(movable_probabilities(point_map, params), used, skipped)


def write_probability_report(point_map: PointMap, p_mov: np.ndarray, path) -> None:
    ijk = unpack_keys(point_map.keys)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["voxel_i", "voxel_j", "voxel_k", "x", "y", "z", "n_obs", "movable_hits", "p_mov"])
        for (i, j, k), (x, y, z), n, h, p in zip(
            ijk.tolist(), point_map.positions.tolist(), point_map.n_obs.tolist(),
            point_map.movable_hits.tolist(), p_mov.tolist(),
        ):
            w.writerow([i, j, k, repr(x), repr(y), repr(z), n, h, repr(p)])


def write_probability_ply(point_map: PointMap, p_mov: np.ndarray, path) -> None:
    pos = point_map.positions.astype(np.float32)
    write_ply(path, {"x": pos[:, 0], "y": pos[:, 1], "z": pos[:, 2],
                     "p_mov": np.asarray(p_mov, dtype=np.float32)})
