"""Engine configuration and its JSON form (unknown keys are rejected)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import InvalidConfiguration


@dataclass(frozen=True)
class Seeds:
    detector: int = 0
    structure_encoder: int = 1
    image_encoder: int = 2
    updater: int = 3
    decoder: int = 4
    extractor: int = 5
    transform: int = 6


@dataclass(frozen=True)
class Stubs:
    updater: bool = False  # zero residuals
    image_encoder: bool = False  # resized source image per level
    decoder: bool = False  # resize between levels, no projection, no sigmoid
    full_visibility: bool = False  # occlusion forced to 1 at generation


@dataclass(frozen=True)
class EngineConfig:
    num_keypoints: int = 10
    radius: int = 3
    pyramid_levels: int = 1
    iterations: int | None = None  # None: full schedule (6 levels)
    heatmap_sigma: float = 0.1
    structure_channels: int = 32
    feature_channels: int = 64
    relative_motion: bool = False
    seeds: Seeds = field(default_factory=Seeds)
    stubs: Stubs = field(default_factory=Stubs)

    def __post_init__(self):
        if self.num_keypoints < 1:
            raise InvalidConfiguration("num_keypoints must be >= 1")
        if self.radius < 0:
            raise InvalidConfiguration("radius must be >= 0")
        if self.pyramid_levels < 0:
            raise InvalidConfiguration("pyramid_levels must be >= 0")
        if self.iterations is not None and not 1 <= self.iterations <= 6:
            raise InvalidConfiguration("iterations must be in 1..6")
        if not self.heatmap_sigma > 0:
            raise InvalidConfiguration("heatmap_sigma must be positive")
        if self.structure_channels < 1 or self.feature_channels < 1:
            raise InvalidConfiguration("channel counts must be positive")

    @property
    def corr_channels(self):
        return (self.pyramid_levels + 1) * (2 * self.radius + 1) ** 2

    def check_resolution(self, image_res):
        H, W = image_res
        if H % 32 or W % 32 or H <= 0 or W <= 0:
            raise InvalidConfiguration(f"image resolution {(H, W)} must be a positive multiple of 32")
        step = 2**self.pyramid_levels
        if (H // 4) % step or (W // 4) % step:
            raise InvalidConfiguration(f"quarter resolution {(H // 4, W // 4)} not divisible by 2**{self.pyramid_levels}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        _reject_unknown(cls, data, "config")
        if "seeds" in data:
            _reject_unknown(Seeds, data["seeds"], "config.seeds")
            data["seeds"] = Seeds(**{k: int(v) for k, v in data["seeds"].items()})
        if "stubs" in data:
            _reject_unknown(Stubs, data["stubs"], "config.stubs")
            data["stubs"] = Stubs(**{k: bool(v) for k, v in data["stubs"].items()})
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidConfiguration(str(exc)) from exc


def _reject_unknown(cls, data, where):
    if not isinstance(data, dict):
        raise InvalidConfiguration(f"{where} must be a JSON object")
    unknown = sorted(set(data) - {f.name for f in fields(cls)})
    if unknown:
        raise InvalidConfiguration(f"unknown keys in {where}: {', '.join(unknown)}")


def load_config(path) -> EngineConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfiguration(f"{path}: {exc}") from exc
    return EngineConfig.from_dict(data)


def dump_config(config: EngineConfig, path):
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)
