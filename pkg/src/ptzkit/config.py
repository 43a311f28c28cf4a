"""Run configuration: INI-style file with sections, strict key validation.

Every command-line flag overrides its config key; unknown sections or keys
are rejected so a typo cannot silently fall back to a default.  Paths named
under ``[io]`` must exist at load time when marked as inputs.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0


@dataclass
class IntrinsicsSection:
    image_w: int = 1280
    image_h: int = 720
    hfov_base: float = 60.0


@dataclass
class CameraSection:
    pan: float = 0.0
    tilt: float = 0.0
    zoom: float = 0.0
    zoom_max: float = 999.0


@dataclass
class CodecSection:
    vocab_path: str = ""
    levels: int = 3
    strict: bool = True


@dataclass
class PseudolabelSection:
    k: int = 0  # 0 keeps every record
    kind: str = "random_forest"
    n_trees: int = 100
    max_depth: int = 8
    min_samples_leaf: int = 5
    fill_ratio: float = 0.30
    use_zoom_feature: bool = False
    zoom_source: str = "geometry"


@dataclass
class RewardSection:
    angle_tol: float = 1.0
    angle_penalty_span: float = 10.0
    zoom_band: float = 50.0
    zoom_penalty_span: float = 50.0


@dataclass
class GrpoSection:
    clip_eps: float = 0.2
    kl_weight: float = 0.04
    group_size: int = 8
    learning_rate: float = 4.0
    std_guard: float = 1e-8
    steps: int = 200


@dataclass
class SelftrainSection:
    rounds: int = 2
    thresholds: str = "0.7,0.95"
    replace_bbox: bool = True
    refit_each_round: bool = True
    split: float = 0.1
    completion_center_frac: float = 0.1
    completion_min_area: float = 0.25
    label_noise_angle: float = 0.0
    label_noise_zoom: float = 0.0

    def threshold_list(self) -> tuple[float, ...]:
        try:
            return tuple(float(t) for t in self.thresholds.split(",") if t.strip())
        except ValueError:
            raise ConfigError(f"bad thresholds list {self.thresholds!r}") from None


@dataclass
class IoSection:
    out_dir: str = "."
    scene: str = ""
    records: str = ""
    model: str = ""
    policy: str = ""


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    intrinsics: IntrinsicsSection = field(default_factory=IntrinsicsSection)
    camera: CameraSection = field(default_factory=CameraSection)
    codec: CodecSection = field(default_factory=CodecSection)
    pseudolabel: PseudolabelSection = field(default_factory=PseudolabelSection)
    reward: RewardSection = field(default_factory=RewardSection)
    grpo: GrpoSection = field(default_factory=GrpoSection)
    selftrain: SelftrainSection = field(default_factory=SelftrainSection)
    io: IoSection = field(default_factory=IoSection)


_INPUT_PATH_KEYS = ("scene", "records", "model", "policy")


def _coerce(raw: str, target_type: type, where: str):
    raw = raw.strip()
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return target_type(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path) -> RunConfig:
    """Parse and validate a config file; unknown sections/keys are errors."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    cfg = RunConfig()
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for section_name in parser.sections():
        if section_name not in sections:
            raise ConfigError(f"unknown config section [{section_name}]")
        section = sections[section_name]
        allowed = {f.name: f.type for f in fields(section)}
        for key, raw in parser.items(section_name):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
            current = getattr(section, key)
            setattr(section, key, _coerce(raw, type(current), f"[{section_name}] {key}"))
    validate_paths(cfg)
    return cfg


def validate_paths(cfg: RunConfig) -> None:
    for key in _INPUT_PATH_KEYS:
        value = getattr(cfg.io, key)
        if value and not Path(value).exists():
            raise ConfigError(f"[io] {key}: path does not exist: {value}")
    if cfg.codec.vocab_path and not Path(cfg.codec.vocab_path).exists():
        raise ConfigError(f"[codec] vocab_path: path does not exist: {cfg.codec.vocab_path}")
