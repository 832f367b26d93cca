"""Flat ``section.key = value`` configuration files.

Example::

    # comments and blank lines are ignored
    seed = 0
    feature.n_mfcc = 27
    encoder.block_channels = 80, 128, 192
    chunk.chunk_ms = 1000
    refine.mode = light
    train.epochs = 30

``chunk.chunk_ms`` is converted to frames with the feature hop;
``chunk.chunk_len`` sets frames directly. The top-level ``seed`` applies to
training unless ``train.seed`` is given.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .dsp import FeatureConfig
from .encoder import EncoderConfig
from .refine import ChunkConfig, RefinementConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "feature": FeatureConfig,
    "encoder": EncoderConfig,
    "chunk": ChunkConfig,
    "refine": RefinementConfig,
    "train": TrainConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    chunk: ChunkConfig = field(default_factory=ChunkConfig)
    refine: RefinementConfig = field(default_factory=RefinementConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        if self.feature.n_features != self.encoder.in_dim:
            raise ConfigError(
                f"features have {self.feature.n_features} rows but encoder.in_dim is {self.encoder.in_dim}"
            )
        if self.train.chunk_len != self.chunk.chunk_len:
            raise ConfigError(
                f"train.chunk_len ({self.train.chunk_len}) differs from chunk length "
                f"({self.chunk.chunk_len} frames)"
            )


def _convert(raw: str, default, name):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from exc


def parse_config(text: str, source="<config>") -> PipelineConfig:
    values = {s: {} for s in _SECTIONS}
    top = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            if section not in values:
                raise ConfigError(f"{source}:{lineno}: unknown section {section!r}")
            values[section][name] = raw
        else:
            top[key] = raw

    unknown_top = set(top) - {"seed"}
    if unknown_top:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown_top)}")
    seed = int(top.get("seed", 0))

    try:
        feature = _build(FeatureConfig, values["feature"], "feature")
        chunk_vals = dict(values["chunk"])
        if "chunk_ms" in chunk_vals:
            if "chunk_len" in chunk_vals:
                raise ConfigError(f"{source}: give chunk.chunk_ms or chunk.chunk_len, not both")
            chunk = ChunkConfig.from_ms(float(chunk_vals.pop("chunk_ms")), feature)
        else:
            chunk = _build(ChunkConfig, chunk_vals, "chunk")
        train_vals = dict(values["train"])
        train_vals.setdefault("seed", str(seed))
        train_vals.setdefault("chunk_len", str(chunk.chunk_len))
        built = dict(
            feature=feature,
            encoder=_build(EncoderConfig, values["encoder"], "encoder"),
            chunk=chunk,
            refine=_build(RefinementConfig, values["refine"], "refine"),
            train=_build(TrainConfig, train_vals, "train"),
        )
        return PipelineConfig(seed=seed, **built)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def _build(cls, raw_values: dict, section):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for name, raw in raw_values.items():
        if name not in fields:
            raise ConfigError(f"unknown key {section}.{name}")
        f = fields[name]
        default = f.default if f.default is not dataclasses.MISSING else None
        kwargs[name] = _convert(raw, default, f"{section}.{name}")
    return cls(**kwargs)


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text(), str(path))
