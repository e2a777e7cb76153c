"""Selective Jittering: depth-selective (DSJ), angle-selective (ASJ) and range (RJ) jitter."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidSpecError, ShapeError
from .pointcloud import PointCloud, azimuth_of
from .rng import derive_seed, make_rng

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class DSJConfig:
    enabled: bool = True
    depth_interval: tuple = (10.0, 60.0)


@dataclass(frozen=True)
class ASJConfig:
    enabled: bool = True
    width_interval: tuple = (np.pi / 6, np.pi)


@dataclass(frozen=True)
class RJConfig:
    enabled: bool = True
    sigma: float = 0.01


@dataclass(frozen=True)
class AugmentSpec:
    noise_mean: float = 0.0
    noise_sigma: float = 0.01
    dsj: DSJConfig = field(default_factory=DSJConfig)
    asj: ASJConfig = field(default_factory=ASJConfig)
    rj: RJConfig = field(default_factory=RJConfig)
    seed: int = 0

    def __post_init__(self):
        if not self.noise_sigma >= 0 or not self.rj.sigma >= 0:
            raise InvalidSpecError("jitter sigmas must be >= 0")
        d_min, d_max = self.dsj.depth_interval
        if not 0 <= d_min <= d_max:
            raise InvalidSpecError(f"bad depth interval {self.dsj.depth_interval}")
        w_min, w_max = self.asj.width_interval
        if not 0 <= w_min <= w_max <= TWO_PI:
            raise InvalidSpecError(f"bad angular width interval {self.asj.width_interval}")

    @classmethod
    def disabled(cls, seed: int = 0) -> "AugmentSpec":
        return cls(dsj=DSJConfig(False), asj=ASJConfig(False), rj=RJConfig(False), seed=seed)

    @property
    def any_enabled(self) -> bool:
        return self.dsj.enabled or self.asj.enabled or self.rj.enabled

    def with_seed(self, seed: int) -> "AugmentSpec":
        return AugmentSpec(self.noise_mean, self.noise_sigma, self.dsj, self.asj, self.rj, seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentSpec":
        d = dict(d)
        dsj = dict(d.pop("dsj", {}))
        asj = dict(d.pop("asj", {}))
        if "depth_interval" in dsj:
            dsj["depth_interval"] = tuple(dsj["depth_interval"])
        if "width_interval" in asj:
            asj["width_interval"] = tuple(asj["width_interval"])
        return cls(dsj=DSJConfig(**dsj), asj=ASJConfig(**asj),
                   rj=RJConfig(**d.pop("rj", {})), **d)


# Each stage draws from its own sub-stream so that enabling one stage never
# shifts the random numbers seen by another.
def _stage_rng(seed: int, stage: str):
    return make_rng(derive_seed(seed, 0, stage))


def dsj_mask(cloud: PointCloud, depth_interval, seed: int) -> np.ndarray:
    d_star = _stage_rng(seed, "dsj").uniform(*depth_interval)
    return cloud.ranges < d_star


def asj_mask(cloud: PointCloud, width_interval, seed: int) -> np.ndarray:
    rng = _stage_rng(seed, "asj")
    # uniform on (-pi, pi]
    start = np.pi - rng.uniform(0.0, TWO_PI)
    width = rng.uniform(*width_interval)
    if width >= TWO_PI:
        return np.ones(cloud.n, dtype=bool)
    offset = np.mod(azimuth_of(cloud.x, cloud.y) - start, TWO_PI)
    return offset < width


def jitter_selected(cloud: PointCloud, mask: np.ndarray, sigma: float, seed: int,
                    mean: float = 0.0) -> PointCloud:
    """Add N(mean, sigma^2) to x, y, z and intensity of masked points; intensity clamped."""
    if mask.shape != (cloud.n,):
        raise ShapeError("mask length does not match cloud")
    if (sigma == 0 and mean == 0) or not mask.any():
        return cloud.replace()
    noise = _stage_rng(seed, "jitter").normal(mean, sigma, (4, cloud.n))
    cols = {}
    for k, name in enumerate(("x", "y", "z")):
        col = getattr(cloud, name)
        cols[name] = np.where(mask, col + noise[k], col)
    inten = np.clip(cloud.intensity + noise[3], 0.0, 1.0)
    cols["intensity"] = np.where(mask, inten, cloud.intensity)
    return cloud.replace(**cols)


def dsj(cloud: PointCloud, sigma: float, depth_interval, seed: int,
        mean: float = 0.0) -> tuple[PointCloud, np.ndarray]:
    """Jitter every point closer than a threshold drawn from ``depth_interval``."""
    mask = dsj_mask(cloud, depth_interval, seed)
    return jitter_selected(cloud, mask, sigma, seed, mean), mask


def asj(cloud: PointCloud, sigma: float, width_interval, seed: int,
        mean: float = 0.0) -> tuple[PointCloud, np.ndarray]:
    """Jitter every point inside a random azimuth arc [start, start + width), wrapping at +-pi."""
    mask = asj_mask(cloud, width_interval, seed)
    return jitter_selected(cloud, mask, sigma, seed, mean), mask


def rj(cloud: PointCloud, sigma_r: float, mask: np.ndarray, seed: int) -> PointCloud:
    """Jitter range only, on points *outside* ``mask``. Directions are kept."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (cloud.n,):
        raise ShapeError("mask length does not match cloud")
    target = ~mask
    if sigma_r == 0 or not target.any():
        return cloud.replace()
    r = cloud.ranges
    noise = _stage_rng(seed, "rj").normal(0.0, sigma_r, cloud.n)
    r_new = np.maximum(r + noise, 0.0)
    target &= r > 0
    safe_r = np.where(r > 0, r, 1.0)
    scale = r_new / safe_r
    cols = {name: np.where(target, getattr(cloud, name) * scale, getattr(cloud, name))
            for name in ("x", "y", "z")}
    return cloud.replace(**cols)


def selection_mask(cloud: PointCloud, spec: AugmentSpec) -> np.ndarray:
    """DSJ and ASJ selections on the input geometry, unioned."""
    mask = np.zeros(cloud.n, dtype=bool)
    if spec.dsj.enabled:
        mask |= dsj_mask(cloud, spec.dsj.depth_interval, spec.seed)
    if spec.asj.enabled:
        mask |= asj_mask(cloud, spec.asj.width_interval, spec.seed)
    return mask


def compose_sj(cloud: PointCloud, spec: AugmentSpec) -> PointCloud:
    """Full SJ stage: one 4-channel jitter on the DSJ/ASJ union, RJ on the rest."""
    mask = selection_mask(cloud, spec)
    out = jitter_selected(cloud, mask, spec.noise_sigma, spec.seed, spec.noise_mean)
    if spec.rj.enabled:
        out = rj(out, spec.rj.sigma, mask, spec.seed)
    return out
