"""Per-point surrogate segmenter: hand-built features into a DenseNet."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import DataError, EmptyInputError
from .pointcloud import DEFAULT_IGNORE_LABEL, LabelArray, PointCloud
from .rng import derive_seed, make_rng
from .scene import NUM_CLASSES

FEATURE_VERSION = 1
FEATURE_WIDTH = 6
# own cell first, then the 13 "forward" neighbours; each unordered pair of
# distinct cells is visited once and credited to both ends
_HALF_OFFSETS = np.array([(0, 0, 0)] + [o for o in
    ((i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1))
    if o > (0, 0, 0)])


@dataclass(frozen=True)
class FeatureConfig:
    """Neighbourhood radius (m), density cap and per-axis input scaling.

    Feature row: [x*xy_scale, y*xy_scale, z*z_scale, r*xy_scale, intensity,
    min(neighbours, cap) / cap].
    """

    radius: float = 1.0
    density_cap: int = 32
    xy_scale: float = 0.05
    z_scale: float = 0.5


def neighbour_counts(xyz: np.ndarray, radius: float, chunk: int = 8192) -> np.ndarray:
    """Number of *other* points within ``radius`` of each point (distance <= radius).

    Points are hashed into cubic cells of side ``radius`` so every neighbour
    lies in one of the 27 cells around a point's own cell.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    n = len(xyz)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    cells = np.floor(xyz / radius).astype(np.int64)
    cells -= cells.min(axis=0) - 1  # pad one cell so neighbour keys never wrap
    dims = cells.max(axis=0) + 2
    strides = np.array([dims[1] * dims[2], dims[2], 1], dtype=np.int64)
    keys = cells @ strides
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    offset_keys = _HALF_OFFSETS @ strides
    r2 = radius * radius
    counts = np.zeros(n, dtype=np.int64)
    for start in range(0, n, chunk):
        q = np.arange(start, min(start + chunk, n))
        nk = (keys[q][:, None] + offset_keys[None, :]).reshape(-1)
        lo = np.searchsorted(sorted_keys, nk, "left")
        sizes = np.searchsorted(sorted_keys, nk, "right") - lo
        total = int(sizes.sum())
        if total == 0:
            continue
        owner = np.repeat(np.repeat(q, len(offset_keys)), sizes)
        own_cell = np.repeat(np.tile(np.arange(len(offset_keys)) == 0, len(q)), sizes)
        first = np.repeat(lo - np.cumsum(sizes) + sizes, sizes)
        cand = order[first + np.arange(total)]
        d = xyz[cand] - xyz[owner]
        d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        hit = d2 <= r2
        # own-cell hits are seen from both ends already (self included)
        counts += np.bincount(owner[hit], minlength=n)
        cross = hit & ~own_cell
        counts += np.bincount(cand[cross], minlength=n)
    return counts - 1  # drop self


def featurize(cloud: PointCloud, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    counts = neighbour_counts(cloud.xyz, cfg.radius)
    density = np.minimum(counts, cfg.density_cap) / cfg.density_cap
    return np.column_stack([cloud.x * cfg.xy_scale, cloud.y * cfg.xy_scale,
                            cloud.z * cfg.z_scale, cloud.ranges * cfg.xy_scale,
                            cloud.intensity, density])


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (64, 64)
    epochs: int = 24
    batch_size: int = 256
    lr: float = 0.1
    # lr decays linearly from lr to lr * lr_final_fraction over the epochs
    lr_final_fraction: float = 0.05
    clip_norm: float = 100.0
    momentum: float = 0.0
    num_classes: int = NUM_CLASSES
    ignore_label: int = DEFAULT_IGNORE_LABEL
    features: FeatureConfig = field(default_factory=FeatureConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        if "features" in d:
            d["features"] = FeatureConfig(**d["features"])
        return cls(**d)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.epochs <= 1:
        return cfg.lr
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr * (1.0 - (1.0 - cfg.lr_final_fraction) * frac)


@dataclass(eq=False)
class SurrogateModel:
    net: nn.DenseNet
    num_classes: int = NUM_CLASSES
    ignore_label: int = DEFAULT_IGNORE_LABEL
    features: FeatureConfig = field(default_factory=FeatureConfig)
    velocity: list | None = None

    def clone(self) -> "SurrogateModel":
        vel = None if self.velocity is None else [v.copy() for v in self.velocity]
        return SurrogateModel(self.net.clone(), self.num_classes, self.ignore_label,
                              self.features, vel)

    def metadata(self) -> dict:
        return {"num_classes": self.num_classes, "ignore_label": self.ignore_label,
                "feature_version": FEATURE_VERSION, "features": asdict(self.features),
                "sizes": list(self.net.sizes)}


def init_surrogate(cfg: TrainConfig) -> SurrogateModel:
    sizes = (FEATURE_WIDTH, *cfg.hidden, cfg.num_classes)
    net = nn.init_net(sizes, derive_seed(cfg.seed, 0, "surrogate-init"))
    vel = nn.zeros_like_params(net) if cfg.momentum else None
    return SurrogateModel(net, cfg.num_classes, cfg.ignore_label, cfg.features, vel)


def predict_logits(model: SurrogateModel, cloud: PointCloud) -> np.ndarray:
    if cloud.n == 0:
        return np.zeros((0, model.num_classes))
    return nn.forward(model.net, featurize(cloud, model.features))


def predict(model: SurrogateModel, cloud: PointCloud) -> np.ndarray:
    return np.argmax(predict_logits(model, cloud), axis=1)


def scene_loss(model: SurrogateModel, cloud: PointCloud, labels: LabelArray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of the whole scene, plus the logits it came from."""
    logits = predict_logits(model, cloud)
    loss, _ = nn.cross_entropy(logits, labels.semantic, model.ignore_label)
    return loss, logits


def sgd_on_scene(model: SurrogateModel, features: np.ndarray, labels: LabelArray,
                 cfg: TrainConfig, seed: int, lr: float | None = None) -> float:
    """One shuffled minibatch pass over a scene's labeled points; returns mean batch loss."""
    rows = np.flatnonzero(labels.semantic != model.ignore_label)
    if rows.size == 0:
        raise EmptyInputError("scene has no labeled points")
    rows = rows[make_rng(seed).permutation(rows.size)]
    targets = labels.semantic
    losses = []
    for start in range(0, rows.size, cfg.batch_size):
        b = rows[start:start + cfg.batch_size]
        loss, grads = nn.loss_and_grad(model.net, features[b], targets[b], model.ignore_label)
        nn.clip_and_step(model.net, grads, cfg.lr if lr is None else lr, cfg.clip_norm,
                         cfg.momentum, model.velocity)
        losses.append(loss)
    return float(np.mean(losses))


def epoch_order(n_scenes: int, seed: int, epoch: int) -> np.ndarray:
    return make_rng(derive_seed(seed, epoch, "scene-order")).permutation(n_scenes)


def step_seed(seed: int, epoch: int, n_scenes: int, scene_index: int) -> int:
    return derive_seed(seed, epoch * n_scenes + scene_index, "surrogate-sgd")


@dataclass
class TrainResult:
    model: SurrogateModel
    loss_trace: list


def train_surrogate(scenes, cfg: TrainConfig = TrainConfig(),
                    model: SurrogateModel | None = None) -> TrainResult:
    """Epochs of per-scene minibatch SGD, scene order reshuffled every epoch."""
    scenes = list(scenes)
    if not scenes:
        raise EmptyInputError("no training scenes")
    model = init_surrogate(cfg) if model is None else model
    feats = [featurize(cloud, model.features) for cloud, _ in scenes]
    for cloud, labels in scenes:
        labels.validate(cfg.num_classes, cloud.n)
    trace = []
    for epoch in range(cfg.epochs):
        losses = []
        for idx in epoch_order(len(scenes), cfg.seed, epoch):
            seed = step_seed(cfg.seed, epoch, len(scenes), int(idx))
            losses.append(sgd_on_scene(model, feats[idx], scenes[idx][1], cfg, seed,
                                       lr_at(cfg, epoch)))
        trace.append(float(np.mean(losses)))
    return TrainResult(model, trace)


def save_model(model: SurrogateModel, path) -> None:
    from .storage import atomic_write_bytes, atomic_write_text
    atomic_write_bytes(path, nn.save_bytes(model.net))
    atomic_write_text(str(path) + ".json", json.dumps(model.metadata(), indent=2, sort_keys=True))


def load_model(path) -> SurrogateModel:
    with open(path, "rb") as fh:
        net = nn.load_bytes(fh.read())
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    if meta.get("feature_version") != FEATURE_VERSION:
        raise DataError(f"unsupported feature version {meta.get('feature_version')}")
    return SurrogateModel(net, meta["num_classes"], meta["ignore_label"],
                          FeatureConfig(**meta["features"]))
