"""Experiment configuration: one flat key=value text file plus overrides.

Keys use dots for grouping (model.dim = 64); each maps to a field of
ExperimentConfig with dots replaced by underscores. Unknown keys are
rejected so typos cannot silently fall back to defaults. The resolved
configuration is written next to every checkpoint, sufficient to re-run the
experiment with no external state.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

OUTPUT_ROOT_ENV = "TIMETOK_OUTPUT_ROOT"


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    seed: int = 7
    output_dir: str = "runs/exp"

    # schedule
    mixing: str = "single_task"  # single_task | data_mixing | batch_mixing
    task: str = "tas"  # trained task under single_task
    balance: bool = True
    tad_paradigm: str = "sparse"  # sparse | dense
    epochs: int = 200
    mix_batch_size: int = 16  # batch size under data mixing

    # optimizer
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    checkpoint_every: int = 50

    # model
    model_input_dim: int = 32
    model_dim: int = 64
    model_encoder_layers: int = 2
    model_decoder_layers: int = 2
    model_heads: int = 4
    model_ffn_dim: int = 256
    model_frames: int = 32
    model_max_target_len: int = 0  # 0 -> frames + 1
    model_dropout: float = 0.1
    model_dtype: str = "float32"

    # loss
    loss_smooth_weight: float = 0.15
    loss_tad_distance_weighting: bool = True
    loss_tad_distance_scale: float = 1.0

    # vocabulary / decoding
    time_tokens: int = 150
    nms_threshold: float = 0.5
    infer_stride: float = 2.0  # 0 -> half the window
    infer_batch: int = 32

    # dataset manifests (training split and held-out split)
    data_tad: str = ""
    data_tas: str = ""
    data_gebd: str = ""
    data_tad_eval: str = ""
    data_tas_eval: str = ""
    data_gebd_eval: str = ""

    # synthetic data generation
    gen_feature_dim: int = 32
    gen_noise: float = 0.15
    gen_fps: float = 8.0
    gen_stride: int = 2
    gen_window_seconds: float = 8.0
    gen_tad_videos: int = 288
    gen_tad_eval_videos: int = 24
    gen_tad_classes: int = 6
    gen_tad_duration_min: float = 16.0
    gen_tad_duration_max: float = 24.0
    gen_tad_instances_min: int = 1
    gen_tad_instances_max: int = 4
    gen_tad_length_min: float = 2.0
    gen_tad_length_max: float = 5.0
    gen_tad_batch: int = 8
    gen_tas_videos: int = 160
    gen_tas_eval_videos: int = 16
    gen_tas_classes: int = 8
    gen_tas_duration_min: float = 8.0
    gen_tas_duration_max: float = 12.0
    gen_tas_segments_min: int = 6
    gen_tas_segments_max: int = 10
    gen_tas_batch: int = 8
    gen_gebd_videos: int = 192
    gen_gebd_eval_videos: int = 24
    gen_gebd_units: int = 8
    gen_gebd_duration_min: float = 8.0
    gen_gebd_duration_max: float = 12.0
    gen_gebd_spike: float = 2.0
    gen_gebd_boundaries_min: int = 2
    gen_gebd_boundaries_max: int = 6
    gen_gebd_batch: int = 8
    gen_gebd_share_tas_directions: bool = False

    def resolved_frames(self) -> int:
        return self.model_frames

    def resolved_max_target_len(self) -> int:
        return self.model_max_target_len if self.model_max_target_len > 0 else self.model_frames + 1

    def resolve_output_dir(self) -> str:
        root = os.environ.get(OUTPUT_ROOT_ENV, "")
        if root and not os.path.isabs(self.output_dir):
            return os.path.join(root, self.output_dir)
        return self.output_dir


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {name} = {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as err:
        raise ConfigError(f"cannot parse {name} = {raw!r}: {err}") from None
    return raw


def set_option(config: ExperimentConfig, key: str, value: str):
    name = key.strip().replace(".", "_")
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(config, name, _coerce(name, value))


def load_config(path: str | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    config = ExperimentConfig()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} does not exist")
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, value = stripped.split("=", 1)
                set_option(config, key, value)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        set_option(config, key, value)
    _validate(config)
    return config


def _validate(config: ExperimentConfig):
    if config.mixing not in ("single_task", "data_mixing", "batch_mixing"):
        raise ConfigError(f"unknown mixing mode {config.mixing!r}")
    if config.task not in ("tad", "tas", "gebd"):
        raise ConfigError(f"unknown task {config.task!r}")
    if config.tad_paradigm not in ("sparse", "dense"):
        raise ConfigError(f"unknown detection paradigm {config.tad_paradigm!r}")
    if config.model_dim % config.model_heads != 0:
        raise ConfigError("model.dim must be divisible by model.heads")
    if config.epochs < 1 or config.time_tokens < 1:
        raise ConfigError("epochs and time_tokens must be positive")
    max_len = config.resolved_max_target_len()
    if max_len < config.model_frames + 1:
        raise ConfigError("model.max_target_len must cover a prompt plus one token per frame")


def dump_config(config: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def save_config(config: ExperimentConfig, path: str):
    with open(path, "w") as f:
        f.write(dump_config(config))
