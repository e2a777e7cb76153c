"""Point clouds, labels, SemanticKITTI-style codecs and spherical geometry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptValueError, MalformedLabelError, MalformedScanError, ShapeError

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")
DEFAULT_IGNORE_LABEL = 255


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Columnar point cloud. Columns are float64; scan files store float32."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    intensity: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = []
        for name in ("x", "y", "z", "intensity"):
            col = np.ascontiguousarray(getattr(self, name), dtype=np.float64).reshape(-1)
            object.__setattr__(self, name, col)
            cols.append(col)
        n = cols[0].shape[0]
        if any(c.shape[0] != n for c in cols):
            raise ShapeError("point cloud columns differ in length")
        for c in cols:
            if not np.all(np.isfinite(c)):
                bad = int(np.flatnonzero(~np.isfinite(c))[0])
                raise CorruptValueError(f"non-finite value at point {bad}", bad)

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    def __len__(self) -> int:
        return self.n

    @property
    def xyz(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.z], axis=1)

    @property
    def ranges(self) -> np.ndarray:
        # hypot avoids underflow/overflow in the squares
        return np.hypot(np.hypot(self.x, self.y), self.z)

    @classmethod
    def from_xyz(cls, xyz, intensity=None, meta=None) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if intensity is None:
            intensity = np.zeros(len(xyz))
        return cls(xyz[:, 0], xyz[:, 1], xyz[:, 2], intensity, dict(meta or {}))

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls.from_xyz(np.zeros((0, 3)))

    def take(self, index) -> "PointCloud":
        """Rows selected by an index array or boolean mask, in order."""
        return PointCloud(self.x[index], self.y[index], self.z[index],
                          self.intensity[index], dict(self.meta))

    def replace(self, **cols) -> "PointCloud":
        kw = dict(x=self.x, y=self.y, z=self.z, intensity=self.intensity, meta=dict(self.meta))
        kw.update(cols)
        return PointCloud(**kw)

    def equals(self, other: "PointCloud") -> bool:
        """Bit-exact column equality."""
        return self.n == other.n and all(
            getattr(self, c).tobytes() == getattr(other, c).tobytes()
            for c in ("x", "y", "z", "intensity"))


@dataclass(frozen=True, eq=False)
class LabelArray:
    semantic: np.ndarray
    instance: np.ndarray
    ignore_label: int = DEFAULT_IGNORE_LABEL

    def __post_init__(self):
        sem = np.ascontiguousarray(self.semantic, dtype=np.int64).reshape(-1)
        inst = np.ascontiguousarray(self.instance, dtype=np.uint16).reshape(-1)
        if sem.shape != inst.shape:
            raise ShapeError("semantic and instance arrays differ in length")
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "instance", inst)

    def __len__(self) -> int:
        return int(self.semantic.shape[0])

    @classmethod
    def from_semantic(cls, semantic, ignore_label: int = DEFAULT_IGNORE_LABEL) -> "LabelArray":
        semantic = np.asarray(semantic, dtype=np.int64).reshape(-1)
        return cls(semantic, np.zeros(len(semantic), dtype=np.uint16), ignore_label)

    def take(self, index) -> "LabelArray":
        return LabelArray(self.semantic[index], self.instance[index], self.ignore_label)

    def validate(self, num_classes: int, n_points: int | None = None) -> None:
        if n_points is not None and len(self) != n_points:
            raise ShapeError(f"{len(self)} labels for {n_points} points")
        sem = self.semantic
        bad = np.flatnonzero(((sem < 0) | (sem >= num_classes)) & (sem != self.ignore_label))
        if bad.size:
            i = int(bad[0])
            raise CorruptValueError(f"label {sem[i]} at point {i} outside [0, {num_classes})", i)

    def equals(self, other: "LabelArray") -> bool:
        return (self.ignore_label == other.ignore_label
                and np.array_equal(self.semantic, other.semantic)
                and np.array_equal(self.instance, other.instance))


# -- codecs ------------------------------------------------------------------

def decode_scan(data: bytes) -> PointCloud:
    """Decode raw little-endian float32 (x, y, z, intensity) quadruples."""
    if len(data) % 16:
        raise MalformedScanError(f"scan length {len(data)} is not a multiple of 16")
    raw = np.frombuffer(data, dtype=SCAN_DTYPE).reshape(-1, 4)
    finite = np.isfinite(raw)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.all(axis=1))[0])
        raise CorruptValueError(f"non-finite value at point {bad}", bad)
    raw = raw.astype(np.float64)
    return PointCloud(raw[:, 0], raw[:, 1], raw[:, 2], raw[:, 3])


def encode_scan(cloud: PointCloud) -> bytes:
    """Inverse of decode_scan. Columns are rounded to float32."""
    out = np.empty((cloud.n, 4), dtype=SCAN_DTYPE)
    out[:, 0] = cloud.x
    out[:, 1] = cloud.y
    out[:, 2] = cloud.z
    out[:, 3] = cloud.intensity
    return out.tobytes()


def decode_labels(data: bytes, ignore_label: int = DEFAULT_IGNORE_LABEL) -> LabelArray:
    """Semantic class in the low 16 bits, instance id in the high 16 bits."""
    if len(data) % 4:
        raise MalformedLabelError(f"label length {len(data)} is not a multiple of 4")
    rec = np.frombuffer(data, dtype=LABEL_DTYPE)
    return LabelArray(rec & 0xFFFF, rec >> 16, ignore_label)


def encode_labels(labels: LabelArray) -> bytes:
    sem = labels.semantic
    if sem.size and (sem.min() < 0 or sem.max() > 0xFFFF):
        raise MalformedLabelError("semantic ids must fit in 16 bits")
    rec = sem.astype(np.uint32) | (labels.instance.astype(np.uint32) << 16)
    return rec.astype(LABEL_DTYPE).tobytes()


def normalize_intensity(cloud: PointCloud) -> PointCloud:
    """Rescale intensity into [0, 1] when a scan stores raw reflectance.

    The divisor is recorded as ``meta["intensity_scale"]`` (1.0 if untouched).
    """
    peak = float(cloud.intensity.max()) if cloud.n else 0.0
    scale = peak if peak > 1.0 else 1.0
    meta = dict(cloud.meta, intensity_scale=scale)
    return cloud.replace(intensity=cloud.intensity / scale, meta=meta)


# -- spherical geometry ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SphericalView:
    r: np.ndarray
    azimuth: np.ndarray
    inclination: np.ndarray


def azimuth_of(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """atan2(y, x) folded into (-pi, pi]."""
    theta = np.arctan2(y, x)
    return np.where(theta <= -np.pi, np.pi, theta)


def to_spherical(cloud: PointCloud) -> SphericalView:
    """Range, azimuth and inclination; the origin maps to (0, 0, 0)."""
    r = cloud.ranges
    rho = np.hypot(cloud.x, cloud.y)
    # atan2 form equals asin(z / r) but stays accurate near the poles
    phi = np.arctan2(cloud.z, rho)
    theta = azimuth_of(cloud.x, cloud.y)
    origin = r == 0
    theta = np.where(origin, 0.0, theta)
    phi = np.where(origin, 0.0, phi)
    return SphericalView(r, theta, phi)


def from_spherical(view: SphericalView) -> np.ndarray:
    cos_phi = np.cos(view.inclination)
    return np.stack([view.r * cos_phi * np.cos(view.azimuth),
                     view.r * cos_phi * np.sin(view.azimuth),
                     view.r * np.sin(view.inclination)], axis=1)
