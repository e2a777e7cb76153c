"""Adverse-weather distortions: point drop, occlusion, geometric and intensity noise.

The soft/hard severities used in the toy experiments are collected in
``TOY_SEVERITIES``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .errors import InvalidSpecError
from .pointcloud import LabelArray, PointCloud
from .rng import make_rng

OCCLUSION_DEPTH_FACTOR = 0.1


class Kind(str, Enum):
    POINT_DROP = "point_drop"
    OCCLUSION = "occlusion"
    GEOM_PERTURB = "geom_perturb"
    INTENSITY_DISTORT = "intensity_distort"


RATIO_KINDS = (Kind.POINT_DROP, Kind.OCCLUSION)

TOY_SEVERITIES = {
    Kind.POINT_DROP: {"soft": 0.5, "hard": 0.9},
    Kind.OCCLUSION: {"soft": 0.5, "hard": 0.9},
    Kind.GEOM_PERTURB: {"soft": 0.05, "hard": 0.25},
    Kind.INTENSITY_DISTORT: {"soft": 0.05, "hard": 0.25},
}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: Kind
    severity: float
    mode: str | None = None
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", Kind(self.kind))
        except ValueError:
            raise InvalidSpecError(f"unknown corruption kind {self.kind!r}") from None
        sev = float(self.severity)
        if not np.isfinite(sev):
            raise InvalidSpecError("severity must be finite")
        if self.kind in RATIO_KINDS and not 0.0 <= sev <= 1.0:
            raise InvalidSpecError(f"{self.kind.value} ratio must lie in [0, 1], got {sev}")
        if self.kind not in RATIO_KINDS and sev < 0:
            raise InvalidSpecError(f"{self.kind.value} sigma must be >= 0, got {sev}")
        allowed = {Kind.POINT_DROP: ("bernoulli", "exact"),
                   Kind.INTENSITY_DISTORT: ("signed", "attenuate")}.get(self.kind, ())
        if self.mode is not None and self.mode not in allowed:
            raise InvalidSpecError(f"mode {self.mode!r} not valid for {self.kind.value}")
        object.__setattr__(self, "severity", sev)

    @classmethod
    def toy(cls, kind, level: str, seed: int = 0) -> "CorruptionSpec":
        kind = Kind(kind)
        return cls(kind, TOY_SEVERITIES[kind][level], seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


def _exact_selection(n: int, ratio: float, rng) -> np.ndarray:
    """Boolean mask with exactly round(n * ratio) True entries (seeded shuffle-truncate)."""
    k = int(round(n * ratio))
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[:k]] = True
    return mask


def apply_point_drop(cloud: PointCloud, labels: LabelArray, ratio: float,
                     mode: str = "bernoulli", seed: int = 0) -> tuple[PointCloud, LabelArray]:
    if not 0.0 <= ratio <= 1.0:
        raise InvalidSpecError(f"drop ratio must lie in [0, 1], got {ratio}")
    rng = make_rng(seed)
    if mode == "bernoulli":
        drop = rng.random(cloud.n) < ratio
    elif mode == "exact":
        drop = _exact_selection(cloud.n, ratio, rng)
    else:
        raise InvalidSpecError(f"unknown drop mode {mode!r}")
    keep = np.flatnonzero(~drop)
    return cloud.take(keep), labels.take(keep)


def occlusion_mask(n: int, ratio: float, seed: int) -> np.ndarray:
    return _exact_selection(n, ratio, make_rng(seed))


def apply_occlusion(cloud: PointCloud, ratio: float, seed: int = 0) -> PointCloud:
    """Pull a fraction of returns to one tenth of their range along the beam."""
    if not 0.0 <= ratio <= 1.0:
        raise InvalidSpecError(f"occlusion ratio must lie in [0, 1], got {ratio}")
    sel = occlusion_mask(cloud.n, ratio, seed)
    scale = np.where(sel, OCCLUSION_DEPTH_FACTOR, 1.0)
    return cloud.replace(x=cloud.x * scale, y=cloud.y * scale, z=cloud.z * scale)


def apply_geom_perturb(cloud: PointCloud, sigma: float, seed: int = 0) -> PointCloud:
    if sigma < 0:
        raise InvalidSpecError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return cloud.replace()
    noise = make_rng(seed).normal(0.0, sigma, (3, cloud.n))
    return cloud.replace(x=cloud.x + noise[0], y=cloud.y + noise[1], z=cloud.z + noise[2])


def intensity_noise(n: int, sigma: float, signed: bool, seed: int) -> np.ndarray:
    """The amount subtracted from intensity before clamping."""
    noise = make_rng(seed).normal(0.0, sigma, n) if sigma > 0 else np.zeros(n)
    return noise if signed else np.abs(noise)


def apply_intensity_distort(cloud: PointCloud, sigma: float, signed: bool = True,
                            seed: int = 0) -> PointCloud:
    if sigma < 0:
        raise InvalidSpecError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return cloud.replace()
    noise = intensity_noise(cloud.n, sigma, signed, seed)
    return cloud.replace(intensity=np.clip(cloud.intensity - noise, 0.0, 1.0))


def apply_corruption(cloud: PointCloud, labels: LabelArray,
                     spec: CorruptionSpec) -> tuple[PointCloud, LabelArray]:
    if not isinstance(spec, CorruptionSpec):
        raise InvalidSpecError(f"expected CorruptionSpec, got {type(spec).__name__}")
    kind = spec.kind
    if kind is Kind.POINT_DROP:
        return apply_point_drop(cloud, labels, spec.severity, spec.mode or "bernoulli", spec.seed)
    if kind is Kind.OCCLUSION:
        return apply_occlusion(cloud, spec.severity, spec.seed), labels
    if kind is Kind.GEOM_PERTURB:
        return apply_geom_perturb(cloud, spec.severity, spec.seed), labels
    if kind is Kind.INTENSITY_DISTORT:
        signed = (spec.mode or "signed") == "signed"
        return apply_intensity_distort(cloud, spec.severity, signed, spec.seed), labels
    raise InvalidSpecError(f"unknown corruption kind {kind!r}")
