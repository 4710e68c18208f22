"""Run configuration: dataclasses, profiles, YAML loading and dotted overrides.

Precedence is command line > config file > defaults.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

FRAMEWORKS = ("compact", "dual_symmetric", "dual_asymmetric")
SCM_VARIANTS = ("baseline", "no_queries", "self_attention", "unshared_embedding")
TCM_MODES = ("combined", "h_i_only", "h_f_only", "roi", "query")
SCENARIOS = ("clean", "rgb_advantage", "x_advantage", "modality_missing")
MODALITIES = ("rgb_only", "depth", "thermal", "event")


@dataclass
class ModelConfig:
    d: int = 32
    n_layers: int = 4
    n_heads: int = 4
    n_q: int = 4
    n_m: int = 4
    memory_len: int = 4
    patch: int = 8
    template_size: int = 16
    search_size: int = 32
    ffn_ratio: int = 4
    head_channels: int = 16
    framework: str = "compact"
    scm_variant: str = "baseline"
    tcm_mode: str = "combined"
    use_tcm: bool = True
    query_std: float = 0.02
    init_seed: int = 0

    @property
    def grid(self) -> tuple[int, int]:
        n = self.search_size // self.patch
        return (n, n)

    @property
    def n_s(self) -> int:
        r, c = self.grid
        return r * c

    @property
    def n_z(self) -> int:
        return (self.template_size // self.patch) ** 2

    @property
    def n_zs(self) -> int:
        return 2 * self.n_z + self.n_s

    @property
    def effective_n_q(self) -> int:
        return 0 if self.scm_variant == "no_queries" else self.n_q


@dataclass
class DataConfig:
    frame_size: int = 64
    train_sequences: int = 200
    train_length: int = 20
    eval_sequences: int = 50
    eval_length: int = 30
    scenario_mix: dict = field(default_factory=lambda: {
        "clean": 0.4, "rgb_advantage": 0.2, "x_advantage": 0.2, "modality_missing": 0.2})
    eval_scenarios: list = field(default_factory=lambda: ["clean"])
    modality: str = "thermal"
    distractors: int = 2
    max_speed: float = 2.5
    target_size: list = field(default_factory=lambda: [9.0, 14.0])


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    batch_size: int = 16
    stage1_steps: int = 1500
    stage2_steps: int = 300
    stage2_frames: int = 6
    stage2_batch_size: int = 8
    search_jitter: float = 8.0
    stage2_jitter: float = 2.0
    lr_warmup: int = 50
    log_every: int = 50
    loss_weights: dict = field(default_factory=lambda: {"iou": 2.0, "l1": 5.0})


@dataclass
class TrackConfig:
    update_threshold: float = 0.7
    search_factor: float = 0.0
    heatmap_frames: list = field(default_factory=list)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    track: TrackConfig = field(default_factory=TrackConfig)
    seed: int = 0
    output_dir: str = "runs/default"
    checkpoint: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "RunConfig":
        m = self.model
        checks = [
            ("model.framework", m.framework in FRAMEWORKS, f"one of {FRAMEWORKS}"),
            ("model.scm_variant", m.scm_variant in SCM_VARIANTS, f"one of {SCM_VARIANTS}"),
            ("model.tcm_mode", m.tcm_mode in TCM_MODES, f"one of {TCM_MODES}"),
            ("model.d", m.d > 0 and m.d % m.n_heads == 0, "positive and divisible by n_heads"),
            ("model.patch", m.patch > 0 and m.search_size % m.patch == 0
             and m.template_size % m.patch == 0, "a divisor of template_size and search_size"),
            ("model.n_q", m.n_q >= 0, ">= 0"),
            ("model.n_m", 1 <= m.n_m <= m.n_s, f"in [1, n_s={m.n_s}]"),
            ("model.memory_len", m.memory_len >= 1, ">= 1"),
            ("data.frame_size", self.data.frame_size >= m.search_size, ">= model.search_size"),
            ("data.modality", self.data.modality in MODALITIES, f"one of {MODALITIES}"),
            ("data.scenario_mix", set(self.data.scenario_mix) <= set(SCENARIOS),
             f"keys drawn from {SCENARIOS}"),
            ("track.update_threshold", 0 < self.track.update_threshold < 1, "in (0, 1)"),
            ("train.optimizer", self.train.optimizer in ("sgd", "adamw"), "sgd or adamw"),
            ("train.stage2_frames", self.train.stage2_frames >= 1, ">= 1"),
        ]
        for name, ok, expect in checks:
            if not ok:
                raise ConfigError(f"{name}: must be {expect}")
        return self


def paper_profile() -> RunConfig:
    """Full-scale hyperparameters for reference (not runnable at desk scale)."""
    cfg = RunConfig()
    cfg.model = ModelConfig(d=512, n_heads=8, n_q=4, n_m=16, memory_len=4, patch=16,
                            template_size=128, search_size=256)
    cfg.data.frame_size = 512
    cfg.train.optimizer = "adamw"
    return cfg


PROFILES = {"toy": RunConfig, "paper": paper_profile}


def _coerce(value: Any, current: Any, name: str) -> Any:
    if isinstance(value, str) and not isinstance(current, str):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{name}: cannot parse {value!r}") from exc
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    elif isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
    elif isinstance(current, float):
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms such as 1e-3 as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        value = float(value)
    elif isinstance(current, str):
        value = str(value)
    elif isinstance(current, list) and not isinstance(value, list):
        raise ConfigError(f"{name}: expected a list, got {value!r}")
    elif isinstance(current, dict) and not isinstance(value, dict):
        raise ConfigError(f"{name}: expected a mapping, got {value!r}")
    return value


def _apply(obj: Any, data: dict, prefix: str = "") -> None:
    names = {f.name for f in fields(obj)}
    for key, value in data.items():
        full = f"{prefix}{key}"
        if key not in names:
            raise ConfigError(f"{full}: unknown field")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{full}: expected a mapping")
            _apply(current, value, full + ".")
        else:
            setattr(obj, key, _coerce(value, current, full))


def set_dotted(cfg: RunConfig, key: str, value: Any) -> None:
    parts = key.split(".")
    nested: dict = {}
    cur = nested
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    _apply(cfg, nested)


def from_dict(data: dict, profile: str = "toy") -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"profile: unknown profile {profile!r}")
    cfg = PROFILES[profile]()
    _apply(cfg, data or {})
    return cfg


def load_config(path: str | Path | None = None, overrides: list[str] | None = None,
                profile: str = "toy") -> RunConfig:
    data = {}
    if path:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: invalid YAML in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a mapping")
        profile = data.pop("profile", profile)
    cfg = from_dict(data, profile)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, value = item.split("=", 1)
        set_dotted(cfg, key.strip(), value.strip())
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
