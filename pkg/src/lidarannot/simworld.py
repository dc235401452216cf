"""Deterministic analytic lidar simulator for indoor scenes with people."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import GtClass, InvalidParameterError, PointCloud, Pose, to_sensor_precision

_EPS = 1e-9

CLASS_NAMES = {c.name.lower().replace("_", "-"): c for c in GtClass}


@dataclass(frozen=True)
class Panel:
    """Vertical rectangle over the segment p0-p1, between heights z0 and z1."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    z0: float = 0.0
    z1: float = 2.5
    cls: str = "wall"


@dataclass(frozen=True)
class Furniture:
    """A piece of furniture at a placement slot.

    ``kind`` is table, chair, or box (generic crate, classed as a table).
    ``t_start``/``t_end`` bound its presence in time.
    """

    kind: str
    x: float
    y: float
    yaw: float = 0.0
    size: tuple[float, float, float] | None = None
    t_start: float = -math.inf
    t_end: float = math.inf


@dataclass(frozen=True)
class Actor:
    """A person. ``type`` is sitting, wanderer or follower."""

    type: str
    radius: float = 0.25
    height: float = 1.75
    x: float = 0.0
    y: float = 0.0
    waypoints: tuple[tuple[float, float], ...] = ()
    speed: float = 0.8
    phase: float = 0.0
    distance: float = 2.0
    angular_speed: float = 0.3


@dataclass(frozen=True)
class WorldSpec:
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    walls: tuple[Panel, ...]
    furniture: tuple[Furniture, ...] = ()
    actors: tuple[Actor, ...] = ()
    n_T: float = 0.0
    d_w: float = 0.0
    d_f: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.d_w, self.d_f, self.n_T) < 0:
            raise InvalidParameterError("scenario densities must be non-negative")
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise InvalidParameterError("world bounds are empty")
        for a in self.actors:
            for wx, wy in a.waypoints:
                if not (xmin < wx < xmax and ymin < wy < ymax):
                    raise InvalidParameterError("actor waypoint outside the world boundary")

    @property
    def area(self) -> float:
        xmin, ymin, xmax, ymax = self.bounds
        return (xmax - xmin) * (ymax - ymin)

    def to_dict(self) -> dict:
        d = asdict(self)
        for f in d["furniture"]:
            for k in ("t_start", "t_end"):
                if math.isinf(f[k]):
                    f[k] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> WorldSpec:
        try:
            walls = tuple(
                Panel(tuple(w["p0"]), tuple(w["p1"]), w.get("z0", 0.0), w.get("z1", 2.5), w.get("cls", "wall"))
                for w in d["walls"]
            )
            furniture = []
            for f in d.get("furniture", []):
                f = dict(f)
                f["t_start"] = -math.inf if f.get("t_start") is None else f["t_start"]
                f["t_end"] = math.inf if f.get("t_end") is None else f["t_end"]
                if f.get("size") is not None:
                    f["size"] = tuple(f["size"])
                furniture.append(Furniture(**f))
            actors = []
            for a in d.get("actors", []):
                a = dict(a)
                a["waypoints"] = tuple(tuple(w) for w in a.get("waypoints", ()))
                actors.append(Actor(**a))
            return cls(
                bounds=tuple(d["bounds"]),
                walls=walls,
                furniture=tuple(furniture),
                actors=tuple(actors),
                n_T=d.get("n_T", 0.0),
                d_w=d.get("d_w", 0.0),
                d_f=d.get("d_f", 0.0),
                seed=d.get("seed", 0),
            )
        except (KeyError, TypeError) as e:
            raise InvalidParameterError(f"malformed world description: {e}") from e


def save_world(world: WorldSpec, path) -> None:
    Path(path).write_text(json.dumps(world.to_dict(), indent=1) + "\n")


def load_world(path) -> WorldSpec:
    return WorldSpec.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SensorModel:
    n_beams: int = 32
    vertical_spacing: float = math.radians(1.33)
    top_elevation: float = math.radians(10.67)
    azimuth_step: float = math.radians(0.2)
    max_range: float = 30.0
    mount_height: float = 0.6
    noise_sigma: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        if self.n_beams < 1:
            raise InvalidParameterError("n_beams must be at least 1")
        if not (self.vertical_spacing > 0 and self.azimuth_step > 0 and self.max_range > 0):
            raise InvalidParameterError("sensor spacings and range must be positive")

    def directions(self) -> np.ndarray:
        """Unit beam directions in sensor coordinates, azimuth-major order."""
        elev = self.top_elevation - self.vertical_spacing * np.arange(self.n_beams)
        n_az = int(round(2 * math.pi / self.azimuth_step))
        az = -math.pi + self.azimuth_step * np.arange(n_az)
        A, E = np.meshgrid(az, elev, indexing="ij")
        ce = np.cos(E)
        d = np.stack([ce * np.cos(A), ce * np.sin(A), np.sin(E)], axis=-1)
        return d.reshape(-1, 3)


# ---------------------------------------------------------------------------
# Primitives at time t


@dataclass
class _Scene:
    panels: list[tuple[np.ndarray, np.ndarray, float, float, int]] = field(default_factory=list)
    boxes: list[tuple[np.ndarray, np.ndarray, int]] = field(default_factory=list)
    cylinders: list[tuple[float, float, float, float, float, int]] = field(default_factory=list)


TABLE_SIZE = (1.2, 0.7, 0.75)
CHAIR_SIZE = (0.45, 0.45, 0.9)
BOX_SIZE = (0.6, 0.6, 0.8)


def _rect_box(cx, cy, sx, sy, z0, z1, yaw):
    if abs(math.sin(yaw)) > abs(math.cos(yaw)):
        sx, sy = sy, sx
    lo = np.array([cx - sx / 2, cy - sy / 2, z0])
    hi = np.array([cx + sx / 2, cy + sy / 2, z1])
    return lo, hi


def furniture_boxes(f: Furniture) -> list[tuple[np.ndarray, np.ndarray, int]]:
    """Axis-aligned boxes making up a piece of furniture (yaw snapped to 90 deg)."""
    out = []
    c, s = math.cos(f.yaw), math.sin(f.yaw)

    def local(dx, dy):
        return f.x + c * dx - s * dy, f.y + s * dx + c * dy

    if f.kind == "table":
        sx, sy, h = f.size or TABLE_SIZE
        out.append(_rect_box(f.x, f.y, sx, sy, h - 0.04, h, f.yaw) + (GtClass.TABLE,))
        for ex in (-1, 1):
            for ey in (-1, 1):
                lx, ly = local(ex * (sx / 2 - 0.05), ey * (sy / 2 - 0.05))
                out.append(_rect_box(lx, ly, 0.05, 0.05, 0.0, h - 0.04, 0.0) + (GtClass.TABLE,))
    elif f.kind == "chair":
        sx, sy, h = f.size or CHAIR_SIZE
        seat = 0.46
        out.append(_rect_box(f.x, f.y, sx, sy, seat - 0.04, seat, f.yaw) + (GtClass.CHAIR,))
        bx, by = local(0.0, -(sy / 2 - 0.02))
        out.append(_rect_box(bx, by, sx, 0.04, seat, h, f.yaw) + (GtClass.CHAIR,))
        for ex in (-1, 1):
            for ey in (-1, 1):
                lx, ly = local(ex * (sx / 2 - 0.03), ey * (sy / 2 - 0.03))
                out.append(_rect_box(lx, ly, 0.04, 0.04, 0.0, seat - 0.04, 0.0) + (GtClass.CHAIR,))
    elif f.kind == "box":
        sx, sy, h = f.size or BOX_SIZE
        out.append(_rect_box(f.x, f.y, sx, sy, 0.0, h, f.yaw) + (GtClass.TABLE,))
    else:
        raise InvalidParameterError(f"unknown furniture kind '{f.kind}'")
    return out


def _polyline_point(waypoints, s: float) -> tuple[float, float]:
    pts = np.asarray(waypoints + (waypoints[0],), dtype=np.float64)
    seg = np.diff(pts, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    total = lens.sum()
    if total <= 0:
        return float(pts[0, 0]), float(pts[0, 1])
    s = s % total
    acc = 0.0
    for p, d, L in zip(pts[:-1], seg, lens):
        if s <= acc + L and L > 0:
            u = (s - acc) / L
            return float(p[0] + u * d[0]), float(p[1] + u * d[1])
        acc += L
    return float(pts[-1, 0]), float(pts[-1, 1])


def actor_position(world: WorldSpec, actor: Actor, t: float, sensor_xy) -> tuple[float, float]:
    """Actor centre at time t; followers orbit the sensor, clamped inside the room."""
    if actor.type == "sitting":
        return actor.x, actor.y
    if actor.type == "wanderer":
        return _polyline_point(actor.waypoints, actor.phase + actor.speed * t)
    if actor.type == "follower":
        a = actor.phase + actor.angular_speed * t
        x = sensor_xy[0] + actor.distance * math.cos(a)
        y = sensor_xy[1] + actor.distance * math.sin(a)
        xmin, ymin, xmax, ymax = world.bounds
        m = actor.radius + 0.1
        return min(max(x, xmin + m), xmax - m), min(max(y, ymin + m), ymax - m)
    raise InvalidParameterError(f"unknown actor type '{actor.type}'")


def scene_at(world: WorldSpec, t: float, sensor_xy=(0.0, 0.0)) -> _Scene:
    scene = _Scene()
    for w in world.walls:
        cls = CLASS_NAMES.get(w.cls)
        if cls is None:
            raise InvalidParameterError(f"unknown panel class '{w.cls}'")
        scene.panels.append((np.array(w.p0, float), np.array(w.p1, float), w.z0, w.z1, int(cls)))
    for f in world.furniture:
        if f.t_start <= t < f.t_end:
            scene.boxes.extend((lo, hi, int(c)) for lo, hi, c in furniture_boxes(f))
    for a in world.actors:
        x, y = actor_position(world, a, t, sensor_xy)
        cls = GtClass.STILL_PERSON if a.type == "sitting" else GtClass.MOVING_PERSON
        scene.cylinders.append((x, y, a.radius, 0.0, a.height, int(cls)))
    return scene


# ---------------------------------------------------------------------------
# Ray intersections (vectorised over rays; inf on miss)


def ray_ground(o, D):
    dz = D[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -o[2] / dz
    return np.where((dz < 0) & (t > _EPS), t, np.inf)


def ray_panel(o, D, p0, p1, z0, z1):
    e = p1 - p0
    L2 = float(e @ e)
    n = np.array([-e[1], e[0]])
    denom = D[:, :2] @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((p0 - o[:2]) @ n) / denom
        hit = o[None, :] + t[:, None] * D
        s = ((hit[:, :2] - p0) @ e) / L2
    ok = (np.abs(denom) > _EPS) & (t > _EPS) & (s >= 0) & (s <= 1) & (hit[:, 2] >= z0) & (hit[:, 2] <= z1)
    return np.where(ok, t, np.inf)


def ray_box(o, D, lo, hi):
    if np.all(o >= lo) and np.all(o <= hi):
        return np.full(len(D), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / D
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    ok = (tmax >= tmin) & (tmin > _EPS)
    return np.where(ok, tmin, np.inf)


def ray_cylinder(o, D, cx, cy, r, z0, z1):
    ox, oy = o[0] - cx, o[1] - cy
    if ox * ox + oy * oy <= r * r and z0 <= o[2] <= z1:
        return np.full(len(D), np.inf)
    a = D[:, 0] ** 2 + D[:, 1] ** 2
    b = 2 * (ox * D[:, 0] + oy * D[:, 1])
    c = ox * ox + oy * oy - r * r
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = (-b - np.sqrt(np.maximum(disc, 0))) / (2 * a)
    z = o[2] + t_side * D[:, 2]
    side_ok = (disc >= 0) & (a > _EPS) & (t_side > _EPS) & (z >= z0) & (z <= z1)
    t = np.where(side_ok, t_side, np.inf)
    for zc in (z1, z0):
        if zc == z0 and z0 <= 0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = (zc - o[2]) / D[:, 2]
            px = ox + tc * D[:, 0]
            py = oy + tc * D[:, 1]
            cap_ok = (np.abs(D[:, 2]) > _EPS) & (tc > _EPS) & (px * px + py * py <= r * r)
        t = np.minimum(t, np.where(cap_ok, tc, np.inf))
    return t


def _azimuth_window(o, corners_xy, ray_az):
    """Mask of rays whose azimuth can reach a footprint given by its corners."""
    rel = corners_xy - o[:2]
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    ref = ang[0]
    d = np.angle(np.exp(1j * (ang - ref)))
    lo, hi = d.min(), d.max()
    if hi - lo >= math.pi:
        return np.ones(len(ray_az), dtype=bool)
    pad = 1e-3
    da = np.angle(np.exp(1j * (ray_az - ref)))
    return (da >= lo - pad) & (da <= hi + pad)


def cast_rays(world: WorldSpec, o: np.ndarray, D: np.ndarray, t: float, max_range: float = np.inf):
    """Nearest hit range and class per ray. Misses get range inf and class 255."""
    scene = scene_at(world, t, o[:2])
    best = ray_ground(o, D)
    cls = np.where(np.isfinite(best), int(GtClass.GROUND), 255).astype(np.uint8)
    ray_az = np.arctan2(D[:, 1], D[:, 0])

    def consider(mask, tt, c):
        nonlocal best, cls
        sub_best = best[mask]
        better = tt < sub_best
        if better.any():
            idx = np.flatnonzero(mask)[better]
            best[idx] = tt[better]
            cls[idx] = c

    for p0, p1, z0, z1, c in scene.panels:
        consider(np.ones(len(D), dtype=bool), ray_panel(o, D, p0, p1, z0, z1), c)
    for lo, hi, c in scene.boxes:
        inside_xy = lo[0] - 0.05 <= o[0] <= hi[0] + 0.05 and lo[1] - 0.05 <= o[1] <= hi[1] + 0.05
        if inside_xy:
            m = np.ones(len(D), dtype=bool)
        else:
            corners = np.array([[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]])
            m = _azimuth_window(o, corners, ray_az)
        if m.any():
            consider(m, ray_box(o, D[m], lo, hi), c)
    for cx, cy, r, z0, z1, c in scene.cylinders:
        dx, dy = cx - o[0], cy - o[1]
        dist = math.hypot(dx, dy)
        if dist <= r + 0.05:
            m = np.ones(len(D), dtype=bool)
        else:
            half = math.asin(min(1.0, r / dist)) + 1e-3
            m = np.abs(np.angle(np.exp(1j * (ray_az - math.atan2(dy, dx))))) <= half
        if m.any():
            consider(m, ray_cylinder(o, D[m], cx, cy, r, z0, z1), c)
    miss = best > max_range
    best = np.where(miss, np.inf, best)
    cls = np.where(miss, 255, cls).astype(np.uint8)
    return best, cls


def _inside(world: WorldSpec, xy) -> bool:
    xmin, ymin, xmax, ymax = world.bounds
    return xmin < xy[0] < xmax and ymin < xy[1] < ymax


def simulate_frame(
    world: WorldSpec,
    sensor: SensorModel,
    pose: Pose,
    t: float,
    rng: np.random.Generator | None = None,
) -> PointCloud:
    """One lidar scan in sensor coordinates with groundtruth classes.

    ``pose`` maps sensor coordinates to world coordinates.
    """
    if not _inside(world, pose.translation):
        raise InvalidParameterError(f"sensor position {pose.translation.tolist()} outside the world")
    local = sensor.directions()
    D = pose.rotate(local)
    rng_range, cls = cast_rays(world, pose.translation, D, t, sensor.max_range)
    hit = np.isfinite(rng_range)
    r = rng_range[hit]
    if sensor.noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(sensor.noise_seed)
        r = r + rng.normal(0.0, sensor.noise_sigma, size=len(r))
    pts = to_sensor_precision(local[hit] * r[:, None])
    return PointCloud(pts, gt_class=cls[hit])


@dataclass
class Session:
    frames: list[PointCloud]
    poses: list[Pose]
    times: list[float]


def simulate_session(
    world: WorldSpec, sensor: SensorModel, trajectory: list[tuple[Pose, float]]
) -> Session:
    """Frames along a scripted trajectory; noise draws come from one seeded stream."""
    rng = np.random.default_rng(sensor.noise_seed)
    frames = [simulate_frame(world, sensor, pose, t, rng) for pose, t in trajectory]
    return Session(frames, [p for p, _ in trajectory], [t for _, t in trajectory])


# ---------------------------------------------------------------------------
# Preset room, tours and scenarios

ROOM_BOUNDS = (0.0, 0.0, 12.0, 9.0)
WALL_HEIGHT = 2.5
DOOR_SPAN = (5.0, 6.0)
DOOR_HEIGHT = 2.1


def room_walls() -> tuple[Panel, ...]:
    xmin, ymin, xmax, ymax = ROOM_BOUNDS
    d0, d1 = DOOR_SPAN
    return (
        Panel((xmin, ymin), (xmax, ymin), 0.0, WALL_HEIGHT),
        Panel((xmax, ymin), (xmax, ymax), 0.0, WALL_HEIGHT),
        Panel((xmax, ymax), (d1, ymax), 0.0, WALL_HEIGHT),
        Panel((d1, ymax), (d0, ymax), DOOR_HEIGHT, WALL_HEIGHT),
        Panel((d1, ymax), (d0, ymax), 0.0, DOOR_HEIGHT, cls="door"),
        Panel((d0, ymax), (xmin, ymax), 0.0, WALL_HEIGHT),
        Panel((xmin, ymax), (xmin, ymin), 0.0, WALL_HEIGHT),
    )


TABLE_SLOTS = ((3.75, 3.0), (3.75, 6.0), (8.25, 3.0), (8.25, 6.0))


def furniture_slots() -> list[Furniture]:
    slots = []
    for tx, ty in TABLE_SLOTS:
        slots.append(Furniture("table", tx, ty))
        for dx in (-0.3, 0.3):
            slots.append(Furniture("chair", tx + dx, ty - 0.65, 0.0))
            slots.append(Furniture("chair", tx + dx, ty + 0.65, math.pi))
    return slots


TOURS = {
    "A": ((1.5, 1.5), (10.5, 1.5), (10.5, 7.5), (1.5, 7.5), (1.5, 1.5)),
    "B": ((1.5, 1.5), (1.5, 4.5), (10.5, 4.5), (10.5, 7.5)),
    "C": ((6.0, 1.5), (6.0, 7.5), (10.5, 7.5), (10.5, 1.5), (6.0, 1.5)),
}


@dataclass(frozen=True)
class TourParams:
    step: float = 0.3
    dt: float = 0.5
    max_dyaw: float = 0.2


def tour_trajectory(
    waypoints, mount_height: float = 0.6, params: TourParams = TourParams()
) -> list[tuple[Pose, float]]:
    """Sample poses along a polyline; the sensor turns in place at corners."""
    wps = np.asarray(waypoints, dtype=np.float64)
    if len(wps) < 2:
        return [(Pose.from_xyz_yaw(wps[0, 0], wps[0, 1], mount_height, 0.0), 0.0)]
    out = []
    pos = wps[0].copy()
    seg0 = wps[1] - wps[0]
    yaw = math.atan2(seg0[1], seg0[0])
    t = 0.0

    def emit():
        out.append((Pose.from_xyz_yaw(pos[0], pos[1], mount_height, yaw), t))

    emit()
    for a, b in zip(wps[:-1], wps[1:]):
        seg = b - a
        L = float(np.linalg.norm(seg))
        if L == 0:
            continue
        heading = math.atan2(seg[1], seg[0])
        while True:
            diff = math.remainder(heading - yaw, 2 * math.pi)
            if abs(diff) < 1e-9:
                break
            yaw += max(-params.max_dyaw, min(params.max_dyaw, diff))
            t += params.dt
            emit()
        n = max(1, int(math.ceil(L / params.step)))
        for k in range(1, n + 1):
            pos = a + seg * (k / n)
            t += params.dt
            emit()
    return out


def tour(name: str, mount_height: float = 0.6, params: TourParams = TourParams()):
    if name not in TOURS:
        raise InvalidParameterError(f"unknown tour '{name}' (expected one of {sorted(TOURS)})")
    return tour_trajectory(TOURS[name], mount_height, params)


SCENARIOS = {
    # n_T, d_w, d_f, fraction of present chairs with a sitting person
    "easy": (0.25, 0.0, 0.0, 0.0),
    "medium": (0.5, 0.02, 0.0, 0.2),
    "hard": (0.75, 0.04, 0.01, 0.3),
    "extreme": (1.0, 0.08, 0.02, 0.4),
}


def _free_point(rng, furniture, margin=0.8, clearance=0.6):
    xmin, ymin, xmax, ymax = ROOM_BOUNDS
    boxes = [b for f in furniture for b in furniture_boxes(f)]
    for _ in range(1000):
        x = rng.uniform(xmin + margin, xmax - margin)
        y = rng.uniform(ymin + margin, ymax - margin)
        if all(
            not (lo[0] - clearance < x < hi[0] + clearance and lo[1] - clearance < y < hi[1] + clearance)
            for lo, hi, _ in boxes
        ):
            return x, y
    return x, y


def scenario_presets(name: str, seed: int = 0) -> WorldSpec:
    """Preset world in the standard room. Crowd density and clutter grow with difficulty."""
    if name not in SCENARIOS:
        raise InvalidParameterError(f"unknown scenario '{name}' (expected one of {list(SCENARIOS)})")
    n_T, d_w, d_f, sit = SCENARIOS[name]
    rng = np.random.default_rng(seed)
    slots = furniture_slots()
    k = int(round(n_T * len(slots)))
    chosen = sorted(rng.choice(len(slots), size=k, replace=False).tolist())
    furniture = tuple(slots[i] for i in chosen)
    area = (ROOM_BOUNDS[2] - ROOM_BOUNDS[0]) * (ROOM_BOUNDS[3] - ROOM_BOUNDS[1])
    actors = []
    chairs = [f for f in furniture if f.kind == "chair"]
    n_sit = int(round(sit * len(chairs)))
    for f in chairs[:n_sit]:
        actors.append(Actor("sitting", radius=0.22, height=1.3, x=f.x, y=f.y))
    for _ in range(int(round(d_w * area))):
        wps = tuple(_free_point(rng, furniture) for _ in range(4))
        actors.append(
            Actor("wanderer", waypoints=wps, speed=float(rng.uniform(0.6, 1.0)), phase=float(rng.uniform(0, 20)))
        )
    for _ in range(int(round(d_f * area))):
        actors.append(
            Actor(
                "follower",
                distance=float(rng.uniform(1.5, 2.5)),
                angular_speed=float(rng.uniform(0.2, 0.4)),
                phase=float(rng.uniform(0, 2 * math.pi)),
            )
        )
    return WorldSpec(
        bounds=ROOM_BOUNDS,
        walls=room_walls(),
        furniture=furniture,
        actors=tuple(actors),
        n_T=n_T,
        d_w=d_w,
        d_f=d_f,
        seed=seed,
    )


def empty_room(size=(12.0, 9.0)) -> WorldSpec:
    """Rectangular room without door or furniture, anchored at the origin."""
    w, h = size
    walls = (
        Panel((0, 0), (w, 0), 0.0, WALL_HEIGHT),
        Panel((w, 0), (w, h), 0.0, WALL_HEIGHT),
        Panel((w, h), (0, h), 0.0, WALL_HEIGHT),
        Panel((0, h), (0, 0), 0.0, WALL_HEIGHT),
    )
    return WorldSpec(bounds=(0.0, 0.0, w, h), walls=walls)
