"""Deterministic synthetic labeled LiDAR scenes.

Classes: 0 ground, 1 wall, 2 pole, 3 vehicle, 4 clutter. Ground returns are
log-uniform in horizontal range, which gives the 1/r^2 areal density of a
spinning sensor; objects are sampled uniformly over their surfaces.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidSpecError
from .pointcloud import DEFAULT_IGNORE_LABEL, LabelArray, PointCloud
from .rng import make_rng

CLASS_NAMES = ("ground", "wall", "pole", "vehicle", "clutter")
NUM_CLASSES = len(CLASS_NAMES)
GROUND, WALL, POLE, VEHICLE, CLUTTER = range(NUM_CLASSES)


@dataclass(frozen=True)
class SceneSpec:
    n_ground: int = 4000
    n_wall: int = 1200
    n_pole: int = 400
    n_vehicle: int = 1200
    n_clutter: int = 400
    walls: int = 3
    poles: int = 4
    vehicles: int = 3
    min_range: float = 2.5
    max_range: float = 50.0
    ground_z: float = -1.73
    ground_noise: float = 0.02
    wall_height: float = 3.5
    wall_length: tuple = (8.0, 20.0)
    pole_height: float = 5.0
    pole_radius: float = 0.12
    vehicle_size: tuple = (4.2, 1.8, 1.5)
    clutter_height: float = 3.0
    # class -> (mean, half-width) of uniform intensity
    intensity: dict = field(default_factory=lambda: {
        GROUND: (0.30, 0.12), WALL: (0.45, 0.15), POLE: (0.80, 0.10),
        VEHICLE: (0.70, 0.15), CLUTTER: (0.40, 0.20)})
    ignore_label: int = DEFAULT_IGNORE_LABEL
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_ground, self.n_wall, self.n_pole, self.n_vehicle, self.n_clutter,
                  self.walls, self.poles, self.vehicles)
        if any(int(c) < 0 for c in counts):
            raise InvalidSpecError("scene counts must be non-negative")
        extents = (self.min_range, self.max_range, self.wall_height, self.pole_height,
                   self.pole_radius, self.clutter_height, *self.wall_length, *self.vehicle_size)
        if any(not e > 0 for e in extents) or self.min_range >= self.max_range:
            raise InvalidSpecError("scene extents must be positive with min_range < max_range")
        if self.ground_noise < 0:
            raise InvalidSpecError("ground_noise must be >= 0")
        for objs, pts, name in ((self.walls, self.n_wall, "wall"), (self.poles, self.n_pole, "pole"),
                                (self.vehicles, self.n_vehicle, "vehicle")):
            if pts > 0 and objs == 0:
                raise InvalidSpecError(f"{pts} {name} points but no {name} instances")

    @property
    def counts(self) -> tuple:
        return (self.n_ground, self.n_wall, self.n_pole, self.n_vehicle, self.n_clutter)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intensity"] = {str(k): list(v) for k, v in self.intensity.items()}
        d["wall_length"] = list(self.wall_length)
        d["vehicle_size"] = list(self.vehicle_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "intensity" in d:
            d["intensity"] = {int(k): tuple(v) for k, v in d["intensity"].items()}
        for key in ("wall_length", "vehicle_size"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _split(total: int, parts: int) -> list[int]:
    if parts == 0:
        return []
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _placement(rng, lo, hi):
    """Random (distance, azimuth) of an object's anchor."""
    lo = min(lo, hi)
    return rng.uniform(lo, hi), rng.uniform(-np.pi, np.pi)


def _ground(rng, spec, n, rho_max):
    rho = np.exp(rng.uniform(np.log(spec.min_range), np.log(rho_max), n))
    theta = rng.uniform(-np.pi, np.pi, n)
    z = spec.ground_z + rng.uniform(-spec.ground_noise, spec.ground_noise, n)
    return np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=1)


def _wall(rng, spec, n, rho_max):
    length = rng.uniform(*spec.wall_length)
    d, theta = _placement(rng, 8.0, min(0.8 * rho_max, rho_max - length / 2))
    normal = np.array([np.cos(theta), np.sin(theta)])
    tangent = np.array([-normal[1], normal[0]])
    tilt = rng.uniform(-0.3, 0.3)
    along = np.cos(tilt) * tangent + np.sin(tilt) * normal
    s = rng.uniform(-length / 2, length / 2, n)
    xy = d * normal + s[:, None] * along + rng.normal(0, 0.02, (n, 1)) * normal
    z = spec.ground_z + rng.uniform(0, spec.wall_height, n)
    return np.column_stack([xy, z])


def _pole(rng, spec, n, rho_max):
    d, theta = _placement(rng, 5.0, min(0.7 * rho_max, rho_max - spec.pole_radius))
    ang = rng.uniform(-np.pi, np.pi, n)
    cx, cy = d * np.cos(theta), d * np.sin(theta)
    z = spec.ground_z + rng.uniform(0, spec.pole_height, n)
    return np.column_stack([cx + spec.pole_radius * np.cos(ang),
                            cy + spec.pole_radius * np.sin(ang), z])


def _vehicle(rng, spec, n, rho_max):
    lx, ly, lz = spec.vehicle_size
    d, theta = _placement(rng, 5.0, min(0.6 * rho_max, rho_max - np.hypot(lx, ly) / 2))
    heading = rng.uniform(-np.pi, np.pi)
    # top + four sides, chosen by area
    areas = np.array([lx * ly, lx * lz, lx * lz, ly * lz, ly * lz])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, (n, 3)) * np.array([lx, ly, lz])
    u[face == 0, 2] = lz / 2
    u[face == 1, 1] = ly / 2
    u[face == 2, 1] = -ly / 2
    u[face == 3, 0] = lx / 2
    u[face == 4, 0] = -lx / 2
    c, s = np.cos(heading), np.sin(heading)
    x = c * u[:, 0] - s * u[:, 1] + d * np.cos(theta)
    y = s * u[:, 0] + c * u[:, 1] + d * np.sin(theta)
    z = u[:, 2] + spec.ground_z + lz / 2
    return np.column_stack([x, y, z])


def _clutter(rng, spec, n, rho_max):
    rho = rng.uniform(spec.min_range, rho_max, n)
    theta = rng.uniform(-np.pi, np.pi, n)
    z = spec.ground_z + rng.uniform(0, spec.clutter_height, n)
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])


def generate_scene(spec: SceneSpec) -> tuple[PointCloud, LabelArray]:
    """Build a labeled scene. Pure function of ``spec`` (seed included)."""
    rng = make_rng(spec.seed)
    top = spec.ground_z + max(spec.wall_height, spec.pole_height,
                              spec.clutter_height, spec.vehicle_size[2])
    z_reach = max(abs(spec.ground_z) + spec.ground_noise, abs(top))
    # horizontal reach keeping every point inside max_range in 3D; 0.2 m absorbs wall noise
    rho_max = np.sqrt(max(spec.max_range ** 2 - z_reach ** 2, 0.0)) - 0.2
    if rho_max <= spec.min_range:
        raise InvalidSpecError("max_range too small for the configured object heights")

    xyz, sem, inst = [], [], []
    xyz.append(_ground(rng, spec, spec.n_ground, rho_max))
    sem.append(np.full(spec.n_ground, GROUND))
    inst.append(np.zeros(spec.n_ground))
    next_id = 1
    for cls, total, k, make in ((WALL, spec.n_wall, spec.walls, _wall),
                                (POLE, spec.n_pole, spec.poles, _pole),
                                (VEHICLE, spec.n_vehicle, spec.vehicles, _vehicle)):
        for m in _split(total, k):
            xyz.append(make(rng, spec, m, rho_max).reshape(-1, 3))
            sem.append(np.full(m, cls))
            inst.append(np.full(m, next_id))
            next_id += 1
    xyz.append(_clutter(rng, spec, spec.n_clutter, rho_max))
    sem.append(np.full(spec.n_clutter, CLUTTER))
    inst.append(np.zeros(spec.n_clutter))

    xyz = np.concatenate(xyz).reshape(-1, 3)
    sem = np.concatenate(sem).astype(np.int64)
    inst = np.concatenate(inst).astype(np.uint16)
    intensity = np.empty(len(sem))
    for cls in range(NUM_CLASSES):
        sel = sem == cls
        mean, spread = spec.intensity[cls]
        intensity[sel] = rng.uniform(mean - spread, mean + spread, int(sel.sum()))
    np.clip(intensity, 0.0, 1.0, out=intensity)

    order = rng.permutation(len(sem))
    cloud = PointCloud.from_xyz(xyz[order], intensity[order])
    return cloud, LabelArray(sem[order], inst[order], spec.ignore_label)
