"""Dataclass configuration for every stage, with schema validation and hashing.

A run is described by one nested :class:`RunConfig`, loadable from YAML.
Every artifact written by the pipeline embeds ``config_hash(cfg)`` so reports
can be traced back to the exact configuration that produced them.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields

import yaml

from .errors import ConfigError

ATTRIBUTES = ("shape", "color", "position")


@dataclass(frozen=True)
class EnvConfig:
    """Geometry and appearance of the 2D tabletop world.

    World coordinates are in abstract units, x to the right and y downward,
    centered on the table. The table occupies ``[-table_halfwidth,
    table_halfwidth]^2`` and projects to pixels at ``px_per_unit``.
    """

    image_size: int = 64
    table_halfwidth: float = 6.0
    train_halfwidth: float = 3.0      # object positions in the training split
    goal_margin: float = 0.7          # goal region = table shrunk by this
    px_per_unit: float = 4.5
    n_shapes: int = 4
    n_colors: int = 4
    n_lightings: int = 5
    lighting_lo: float = 0.7
    lighting_hi: float = 1.3
    object_radius: float = 1.4        # world units
    pusher_radius: float = 1.25
    arm_halfwidth_px: float = 1.3
    max_pusher_step: float = 1.0
    episode_len: int = 50
    success_radius: float = 1.0
    background_level: float = 0.08
    texture_seed: int = 0

    def validate(self) -> None:
        if self.n_shapes < 2 or self.n_colors < 2:
            raise ConfigError("need at least 2 shapes and 2 colors for swap pairs")
        if self.episode_len < 1:
            raise ConfigError("episode_len must be >= 1")
        if self.n_lightings < 1:
            raise ConfigError("n_lightings must be >= 1")
        if not 0 < self.train_halfwidth <= self.table_halfwidth:
            raise ConfigError("train region must sit inside the table")
        if self.goal_margin >= self.table_halfwidth:
            raise ConfigError("goal_margin leaves an empty goal region")
        half_px = self.table_halfwidth * self.px_per_unit
        center = (self.image_size - 1) / 2.0
        if half_px >= center:
            raise ConfigError("table projection must be strictly inside the image")

    @property
    def px_center(self) -> float:
        return (self.image_size - 1) / 2.0

    @property
    def goal_halfwidth(self) -> float:
        return self.table_halfwidth - self.goal_margin

    def lighting_multipliers(self) -> list[float]:
        if self.n_lightings == 1:
            return [1.0]
        step = (self.lighting_hi - self.lighting_lo) / (self.n_lightings - 1)
        return [self.lighting_lo + i * step for i in range(self.n_lightings)]

    @property
    def reference_lighting(self) -> int:
        """Lighting id whose multiplier is closest to 1."""
        mults = self.lighting_multipliers()
        return min(range(len(mults)), key=lambda i: abs(mults[i] - 1.0))


@dataclass(frozen=True)
class DataConfig:
    n_singles: int = 900
    n_pairs_per_attr: int = 250
    n_eval_seen: int = 250
    n_eval_unseen: int = 250
    min_position_gap: float = 2.0     # world units between "different" positions
    n_robot_poses: int = 48
    holdout_shapes: tuple[int, ...] = (3,)
    holdout_colors: tuple[int, ...] = (3,)

    def validate(self, env: EnvConfig) -> None:
        if min(self.n_singles, self.n_pairs_per_attr) < 1:
            raise ConfigError("dataset counts must be >= 1")
        if len(self.holdout_shapes) >= env.n_shapes:
            raise ConfigError("cannot hold out every shape")
        if len(self.holdout_colors) >= env.n_colors:
            raise ConfigError("cannot hold out every color")
        if any(s >= env.n_shapes or s < 0 for s in self.holdout_shapes):
            raise ConfigError("holdout shape id out of range")
        if any(c >= env.n_colors or c < 0 for c in self.holdout_colors):
            raise ConfigError("holdout color id out of range")


@dataclass(frozen=True)
class AugmentConfig:
    """Center-crop + resize applied before encoding, and its mixup weight."""

    frame_hw: tuple[int, int] = (64, 64)
    crop_hw: tuple[int, int] = (64, 64)
    resized_hw: tuple[int, int] = (64, 64)
    lambda_fixed: float = 0.8             # deterministic paths
    lambda_range: tuple[float, float] = (0.7, 0.9)  # sampled during training

    def validate(self) -> None:
        if not (0.0 < self.lambda_fixed <= 1.0):
            raise ConfigError("lambda_fixed must lie in (0, 1]")
        lo, hi = self.lambda_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError("lambda_range must lie in (0, 1]")
        ch, cw = self.crop_hw
        fh, fw = self.frame_hw
        if ch > fh or cw > fw or ch < 1 or cw < 1:
            raise ConfigError("crop must fit inside the frame")
        if min(self.resized_hw) < 1:
            raise ConfigError("resized_hw must be positive")


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, ...] = (16, 32, 64, 128)
    z_shape_dim: int = 49
    z_color_dim: int = 49
    z_pos_dim: int = 2
    head_dim: int = 128
    heat_channels: int = 16
    norm_groups: int = 8
    use_spatial_transform: bool = True
    use_attention: bool = False

    def validate(self) -> None:
        if len(self.channels) != 4:
            raise ConfigError("trunk uses exactly 4 downsampling stages")
        if self.z_pos_dim != 2:
            raise ConfigError("position code is 2-dimensional")

    @property
    def latent_dim(self) -> int:
        return self.z_shape_dim + self.z_color_dim + self.z_pos_dim


@dataclass(frozen=True)
class TrainSchedule:
    """Budgets for the three cumulative training stages."""

    steps_plain: int = 700
    steps_swap: int = 1400
    steps_cycle: int = 700
    batch_size: int = 32
    lr: float = 1e-3
    weight_plain: float = 1.0
    weight_swap: float = 1.0
    weight_cycle: float = 1.0
    use_mixup: bool = True
    holdout_batches: int = 6
    log_every: int = 50
    seed: int = 0

    def validate(self) -> None:
        if min(self.steps_plain, self.steps_swap, self.steps_cycle) < 0:
            raise ConfigError("stage step counts must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")


@dataclass(frozen=True)
class AgentConfig:
    episodes: int = 800
    relabel_k: int = 4
    batch_size: int = 256
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    hidden_dim: int = 128
    target_entropy: float = -2.0
    fixed_alpha: float | None = None      # None -> automatic tuning
    init_alpha: float = 0.1
    warmup_steps: int = 500
    buffer_capacity: int = 500_000
    distance_metric: str = "l2"           # or "l1"
    updates_per_step: int = 1
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.distance_metric not in ("l2", "l1"):
            raise ConfigError("distance_metric must be 'l2' or 'l1'")
        if self.relabel_k < 0:
            raise ConfigError("relabel_k must be >= 0")
        if self.buffer_capacity < self.batch_size:
            raise ConfigError("buffer capacity smaller than batch size")


@dataclass(frozen=True)
class CalibConfig:
    n_probes: int = 81
    include_pusher: bool = True
    randomize_lighting: bool = True
    residual_gate_frac: float = 0.2       # of success_radius
    seed: int = 0

    def validate(self) -> None:
        if self.n_probes < 4:
            raise ConfigError("need at least 4 probes for an affine fit")


@dataclass(frozen=True)
class EvalConfig:
    n_goals: int = 30
    n_trials: int = 5
    grid_n: int = 20
    n_recombine: int = 60
    psnr_cap: float = 99.0
    recon_l1_gate: float = 0.03           # training-convergence check, pilot-set
    seed: int = 0

    def validate(self) -> None:
        if self.grid_n < 2:
            raise ConfigError("grid_n must be >= 2")


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    agent: AgentConfig = field(default_factory=AgentConfig)
    calib: CalibConfig = field(default_factory=CalibConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out_dir: str = "runs/out"
    deterministic: bool = False

    def validate(self) -> None:
        self.env.validate()
        self.data.validate(self.env)
        self.augment.validate()
        self.model.validate()
        self.schedule.validate()
        self.agent.validate()
        self.calib.validate()
        self.eval.validate()
        if self.augment.frame_hw != (self.env.image_size, self.env.image_size):
            raise ConfigError("augment frame does not match the rendered image size")


_SECTION_TYPES = {
    "env": EnvConfig,
    "data": DataConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
    "schedule": TrainSchedule,
    "agent": AgentConfig,
    "calib": CalibConfig,
    "eval": EvalConfig,
}


def _coerce(value, target_type):
    # YAML gives lists where the dataclasses use tuples
    if isinstance(value, list):
        return tuple(_coerce(v, None) for v in value)
    return value


def _build_section(cls, raw: dict, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{path}' must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in '{path}': {sorted(unknown)}")
    kwargs = {k: _coerce(v, None) for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad values in '{path}': {exc}") from exc


def run_config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    known = set(_SECTION_TYPES) | {"seed", "out_dir", "deterministic"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTION_TYPES.items():
        if name in raw:
            kwargs[name] = _build_section(cls, raw[name], name)
    for name in ("seed", "out_dir", "deterministic"):
        if name in raw:
            kwargs[name] = raw[name]
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg) -> str:
    """12-hex digest of the canonical JSON form; embedded in all artifacts."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def load_run_config(path: str) -> RunConfig:
    """Load and validate a YAML run config, applying env-var overrides.

    Only the global seed (LATENTPUSH_SEED) and output directory
    (LATENTPUSH_OUT) may be overridden from the environment.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    seed_override = os.environ.get("LATENTPUSH_SEED")
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    out_override = os.environ.get("LATENTPUSH_OUT")
    if out_override is not None:
        raw["out_dir"] = out_override
    return run_config_from_dict(raw)


def save_run_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
