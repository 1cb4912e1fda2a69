"""Experiment configuration: JSON schema, validation, round-trip.

A configuration is a JSON object with the sections below. Unknown keys
anywhere are rejected (typos must not silently fall back to defaults).
``parse(emit(cfg))`` reproduces the exact same settings because emit
materializes every default.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .exceptions import DataError
from .scenes import SCENE_KINDS

METHODS = ("backprojection", "gap-tv", "srn", "cae-srn", "gap-srn")
KINDS = ("cassi", "cacti")
# Accepted spellings for the two capture regimes.
KIND_ALIASES = {"hsi": "cassi", "video": "cacti"}
MASK_KINDS = ("binary", "gray")


@dataclass
class GeometrySection:
    height: int = 32
    width: int = 32
    channels: int = 4
    shift_step: int | None = None  # defaulted from kind when omitted


@dataclass
class MaskSection:
    kind: str = "binary"
    p: float = 0.5
    gray_low: float = 0.0
    gray_high: float = 1.0


@dataclass
class SceneSection:
    kind: str = "moving-disks"
    num_disks: int = 3
    tile: int | None = None
    path: str | None = None


@dataclass
class NoiseSection:
    std: float = 0.0


@dataclass
class SrnSection:
    width: int = 64
    num_rbs: int = 16
    kernel_size: int = 3
    use_cae: bool = False
    cae_reduction: int = 2
    variant: str = "v1"
    rescale_scale: int = 2
    inner_rbs: int = 8


@dataclass
class GapSection:
    stages: int = 9
    loss_weights: list[float] = field(default_factory=lambda: [1.0, 0.5, 0.5])
    tv_weight: float = 0.08
    iters: int = 60
    tv_iters: int = 8


@dataclass
class TrainSection:
    lr: float = 4e-4
    batch: int = 4
    epochs: int = 1
    steps: int | None = None  # when set, overrides epochs with a step budget
    halve_every: int = 50
    augment_noise: bool = False
    noise_low: float = 0.0
    noise_high: float = 0.05
    num_samples: int = 4
    checkpoint_every: int | None = None


@dataclass
class ExperimentConfig:
    kind: str = "cassi"
    method: str = "gap-tv"
    seed: int = 0
    geometry: GeometrySection = field(default_factory=GeometrySection)
    mask: MaskSection = field(default_factory=MaskSection)
    scene: SceneSection = field(default_factory=SceneSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    srn: SrnSection = field(default_factory=SrnSection)
    gap: GapSection = field(default_factory=GapSection)
    train: TrainSection = field(default_factory=TrainSection)


_SECTIONS = {
    "geometry": GeometrySection,
    "mask": MaskSection,
    "scene": SceneSection,
    "noise": NoiseSection,
    "srn": SrnSection,
    "gap": GapSection,
    "train": TrainSection,
}
_SCALARS = ("kind", "method", "seed")


def _fill_section(cls, payload: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise DataError(
            f"unknown key(s) {sorted(unknown)} in section '{where}'; "
            f"allowed: {sorted(allowed)}")
    try:
        return cls(**payload)
    except TypeError as exc:
        raise DataError(f"bad section '{where}': {exc}") from exc


def parse(payload: dict) -> ExperimentConfig:
    """Build a validated config from a parsed JSON object."""
    if not isinstance(payload, dict):
        raise DataError(f"configuration must be a JSON object, got {type(payload).__name__}")
    allowed = set(_SECTIONS) | set(_SCALARS)
    unknown = set(payload) - allowed
    if unknown:
        raise DataError(
            f"unknown top-level key(s) {sorted(unknown)}; allowed: {sorted(allowed)}")
    cfg = ExperimentConfig()
    for key in _SCALARS:
        if key in payload:
            setattr(cfg, key, payload[key])
    if isinstance(cfg.kind, str):
        cfg.kind = KIND_ALIASES.get(cfg.kind, cfg.kind)
    for name, cls in _SECTIONS.items():
        section = payload.get(name, {})
        if not isinstance(section, dict):
            raise DataError(f"section '{name}' must be an object")
        setattr(cfg, name, _fill_section(cls, section, name))
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.kind not in KINDS:
        raise DataError(f"kind must be one of {KINDS}, got {cfg.kind!r}")
    if cfg.method not in METHODS:
        raise DataError(f"method must be one of {METHODS}, got {cfg.method!r}")
    if not isinstance(cfg.seed, int):
        raise DataError(f"seed must be an integer, got {cfg.seed!r}")
    g = cfg.geometry
    if g.shift_step is None:
        g.shift_step = 1 if cfg.kind == "cassi" else 0
    if min(g.height, g.width, g.channels) < 1:
        raise DataError(f"geometry must be positive, got {asdict(g)}")
    if cfg.kind == "cassi" and g.shift_step < 1:
        raise DataError("cassi geometry requires shift_step >= 1")
    if cfg.kind == "cacti" and g.shift_step != 0:
        raise DataError("cacti geometry requires shift_step == 0")
    if cfg.mask.kind not in MASK_KINDS:
        raise DataError(f"mask kind must be one of {MASK_KINDS}, got {cfg.mask.kind!r}")
    if not 0.0 <= cfg.mask.p <= 1.0:
        raise DataError(f"mask p must be in [0, 1], got {cfg.mask.p}")
    if not cfg.mask.gray_low < cfg.mask.gray_high:
        raise DataError("mask gray_low must be < gray_high")
    if cfg.scene.kind not in SCENE_KINDS:
        raise DataError(f"scene kind must be one of {SCENE_KINDS}, got {cfg.scene.kind!r}")
    if cfg.scene.kind == "file" and not cfg.scene.path:
        raise DataError("scene kind 'file' requires scene.path")
    if cfg.noise.std < 0:
        raise DataError(f"noise std must be >= 0, got {cfg.noise.std}")
    if cfg.gap.stages < 1:
        raise DataError(f"gap stages must be >= 1, got {cfg.gap.stages}")
    if cfg.train.batch < 1 or cfg.train.epochs < 0:
        raise DataError("train.batch must be >= 1 and train.epochs >= 0")
    if cfg.train.steps is not None and cfg.train.steps < 0:
        raise DataError(f"train.steps must be >= 0, got {cfg.train.steps}")
    if not 0.0 <= cfg.train.noise_low <= cfg.train.noise_high:
        raise DataError("train noise range must satisfy 0 <= low <= high")
    if cfg.train.num_samples < 1:
        raise DataError(f"train.num_samples must be >= 1, got {cfg.train.num_samples}")


def emit(cfg: ExperimentConfig) -> dict:
    """Materialize the full configuration, defaults included."""
    out: dict = {key: getattr(cfg, key) for key in _SCALARS}
    for name in _SECTIONS:
        out[name] = asdict(getattr(cfg, name))
    return out


def load(path: str | Path) -> ExperimentConfig:
    from .dataio import load_json
    payload = load_json(path)
    return parse(payload)


def save(path: str | Path, cfg: ExperimentConfig) -> None:
    from .dataio import save_json
    save_json(path, emit(cfg))
