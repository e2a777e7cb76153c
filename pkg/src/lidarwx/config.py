"""Pipeline configuration file (JSON).

Every seed used by a run is derived from ``master_seed``:
``sub_seed = derive_seed(master_seed, scene_index, stage_tag)`` with the
stage tags listed in ``STAGE_TAGS``. Seeds inside the nested sections of a
config file are ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .augment import AugmentSpec
from .corrupt import CorruptionSpec
from .errors import InvalidSpecError
from .lpd import LpdConfig
from .pointcloud import DEFAULT_IGNORE_LABEL
from .rng import derive_seed
from .scene import NUM_CLASSES, SceneSpec
from .surrogate import TrainConfig

STAGE_TAGS = ("scene", "corrupt", "augment", "train", "lpd", "eval")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class PipelineConfig:
    master_seed: int = 0
    num_classes: int = NUM_CLASSES
    ignore_label: int = DEFAULT_IGNORE_LABEL
    workers: int = 1
    paths: dict = field(default_factory=dict)
    scene: SceneSpec = field(default_factory=SceneSpec)
    corruptions: tuple = ()
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    lpd: LpdConfig = field(default_factory=LpdConfig)

    def seed_for(self, index: int, tag: str) -> int:
        if tag not in STAGE_TAGS:
            raise InvalidSpecError(f"unknown stage tag {tag!r}")
        return derive_seed(self.master_seed, index, tag)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {"master_seed", "num_classes", "ignore_label", "workers", "paths", "scene",
                 "corruptions", "augment", "train", "lpd"}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpecError(f"unknown config keys: {sorted(unknown)}")
        master = int(d.get("master_seed", 0))
        num_classes = int(d.get("num_classes", NUM_CLASSES))
        ignore = int(d.get("ignore_label", DEFAULT_IGNORE_LABEL))
        try:
            scene = SceneSpec.from_dict({**d.get("scene", {}), "ignore_label": ignore, "seed": 0})
            corruptions = tuple(CorruptionSpec(**{**c, "seed": 0}) for c in d.get("corruptions", []))
            augment = AugmentSpec.from_dict({**d.get("augment", {}), "seed": 0})
            train = TrainConfig.from_dict({**d.get("train", {}), "num_classes": num_classes,
                                           "ignore_label": ignore,
                                           "seed": derive_seed(master, 0, "train")})
            lpd_d = dict(d.get("lpd", {}))
            lpd_d["sj"] = _merge(augment.to_dict(), lpd_d.get("sj", {}))
            lpd = LpdConfig.from_dict({**lpd_d, "seed": derive_seed(master, 0, "lpd")})
        except TypeError as exc:  # unexpected keyword in a section
            raise InvalidSpecError(str(exc)) from None
        workers = int(d.get("workers", 1))
        if workers < 1:
            raise InvalidSpecError("workers must be >= 1")
        return cls(master, num_classes, ignore, workers, dict(d.get("paths", {})),
                   scene, corruptions, augment, train, lpd)

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "num_classes": self.num_classes,
                "ignore_label": self.ignore_label, "workers": self.workers,
                "paths": dict(self.paths), "scene": self.scene.to_dict(),
                "corruptions": [c.to_dict() for c in self.corruptions],
                "augment": self.augment.to_dict(), "train": self.train.to_dict(),
                "lpd": self.lpd.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    base = {}
    if path is not None:
        with open(path) as fh:
            base = json.load(fh)
        if not isinstance(base, dict):
            raise InvalidSpecError("config file must hold a JSON object")
    return PipelineConfig.from_dict(_merge(base, overrides or {}))
