"""Flat key=value run configuration with typed parsing.

Unknown keys are rejected by name so a report's config echo is always
re-runnable. Every tunable of the pipeline lives here.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError

_CHOICES = {
    "fusion": ("static", "moe"),
    "router": ("condition", "random"),
    "gating": ("none", "hard", "soft"),
    "granularity": ("none", "binary", "ternary", "five"),
}


@dataclass
class RunConfig:
    # model
    channels: int = 8  # encoder base width; stages are C, 2C, 4C, 4C
    decoder_channels: int = 16
    embed_channels: int = 32  # condition/scene embedding width
    text_dim: int = 64
    attention_dim: int = 16
    n_experts: int = 5
    topk: int = 2
    topk_renormalize: bool = False
    fusion: str = "moe"
    router: str = "condition"
    attention: bool = True  # coarse-stage point attention block present at all
    gating: str = "soft"  # attention bias mode: none = unbiased attention
    hard_threshold: float = 0.1
    scene_inject: bool = True
    calibrator: bool = True
    granularity: str = "five"
    window: int = 5
    # loss
    beta: float = 0.6
    gamma_focal: float = 2.0
    # data
    size: int = 32
    dataset: str = "synth"
    train_scenes: int = 480
    val_scenes: int = 120
    corruption: float = 0.0
    include_background: bool = True
    # optimization
    lr: float = 0.004
    weight_decay: float = 0.01
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    data_seed: int = -1  # -1 means: follow seed
    out_dir: str = "runs/default"

    def resolved_data_seed(self):
        return self.seed if self.data_seed < 0 else self.data_seed

    def validate(self):
        for key, choices in _CHOICES.items():
            if getattr(self, key) not in choices:
                raise ConfigError(
                    f"config key {key!r} must be one of {choices}, got {getattr(self, key)!r}",
                    key=key,
                )
        if self.topk < 1 or self.topk > self.n_experts:
            raise ConfigError("topk must be in [1, n_experts]", key="topk")
        if self.size not in (32, 64):
            raise ConfigError("size must be 32 or 64", key="size")
        if self.window % 2 != 1 or self.window < 3:
            raise ConfigError("window must be odd and >= 3", key="window")
        if self.embed_channels != 4 * self.channels:
            raise ConfigError(
                "embed_channels must equal 4*channels (context injection "
                "matches the last encoder stage)",
                key="embed_channels",
            )
        return self


_BOOL = {"true": True, "false": False, "on": True, "off": False, "1": True, "0": False}


def _parse_value(key, raw, kind):
    try:
        if kind is bool:
            if raw.lower() not in _BOOL:
                raise ValueError(raw)
            return _BOOL[raw.lower()]
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}", key=key)


def parse_config(text, base=None) -> RunConfig:
    cfg = RunConfig(**asdict(base)) if base is not None else RunConfig()
    kinds = {f.name: f.type if isinstance(f.type, type) else type(getattr(cfg, f.name)) for f in fields(RunConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        setattr(cfg, key, _parse_value(key, raw, kinds[key]))
    return cfg.validate()


def load_config(path, base=None) -> RunConfig:
    return parse_config(Path(path).read_text(), base=base)


def config_text(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = format(value, ".10g")
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_diff(a: RunConfig, b: RunConfig):
    """Names of keys whose values differ."""
    da, db = asdict(a), asdict(b)
    return sorted(k for k in da if da[k] != db[k])
