"""Deterministic 2D tabletop pushing world: renderer, dynamics, datasets.

World coordinates are continuous, x to the right and y downward, centered on
the table. One object (a colored glyph) sits on the table; a pusher arm
reaches in from the bottom edge and ends in a round tip. Only the tip
interacts with the object. All functions are pure in their inputs and seeds.
"""
from __future__ import annotations

import dataclasses
import functools
import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter

from .config import ATTRIBUTES, DataConfig, EnvConfig, config_hash
from .errors import ConfigError, InputError

_ANTIALIAS_PX = 1.2

_COLOR_TABLE = np.array(
    [
        [0.85, 0.12, 0.10],  # red
        [0.10, 0.78, 0.15],  # green
        [0.15, 0.30, 0.88],  # blue
        [0.88, 0.78, 0.10],  # yellow
        [0.80, 0.15, 0.80],  # magenta
        [0.10, 0.75, 0.78],  # cyan
        [0.90, 0.50, 0.10],  # orange
        [0.55, 0.20, 0.85],  # purple
    ],
    dtype=np.float32,
)

_TIP_COLOR = np.array([0.80, 0.80, 0.83], dtype=np.float32)
_ARM_COLOR = np.array([0.50, 0.50, 0.55], dtype=np.float32)


@dataclass(frozen=True)
class WorldState:
    """Ground-truth simulator state. ``pusher_pos=None`` means no pusher in frame."""

    object_shape: int
    object_color: int
    object_pos: tuple[float, float]
    pusher_pos: tuple[float, float] | None
    lighting: int
    step_count: int = 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["object_pos"] = list(self.object_pos)
        d["pusher_pos"] = None if self.pusher_pos is None else list(self.pusher_pos)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldState":
        return cls(
            object_shape=int(d["object_shape"]),
            object_color=int(d["object_color"]),
            object_pos=tuple(float(v) for v in d["object_pos"]),
            pusher_pos=None
            if d["pusher_pos"] is None
            else tuple(float(v) for v in d["pusher_pos"]),
            lighting=int(d["lighting"]),
            step_count=int(d.get("step_count", 0)),
        )


@dataclass(frozen=True)
class Action:
    """Relative pusher displacement, each component in [-1, 1]."""

    delta: tuple[float, float]


def _validate_state(state: WorldState, cfg: EnvConfig) -> None:
    t = cfg.table_halfwidth
    ox, oy = state.object_pos
    if abs(ox) > t or abs(oy) > t:
        raise InputError(f"object_pos {state.object_pos} outside table region")
    if state.pusher_pos is not None:
        px, py = state.pusher_pos
        if abs(px) > t or abs(py) > t:
            raise InputError(f"pusher_pos {state.pusher_pos} outside table region")
    if not (0 <= state.object_shape < cfg.n_shapes):
        raise InputError("object_shape id out of range")
    if not (0 <= state.object_color < cfg.n_colors):
        raise InputError("object_color id out of range")
    if not (0 <= state.lighting < cfg.n_lightings):
        raise InputError("lighting id out of range")


def world_to_px(pos, cfg: EnvConfig) -> np.ndarray:
    pos = np.asarray(pos, dtype=np.float64)
    return cfg.px_center + cfg.px_per_unit * pos


def px_to_world(px, cfg: EnvConfig) -> np.ndarray:
    px = np.asarray(px, dtype=np.float64)
    return (px - cfg.px_center) / cfg.px_per_unit


def world_to_norm(pos, cfg: EnvConfig) -> np.ndarray:
    """World units -> the [-1, 1] sampling-grid coordinates of the image."""
    pos = np.asarray(pos, dtype=np.float64)
    return 2.0 * cfg.px_per_unit * pos / cfg.image_size


def norm_to_world(norm, cfg: EnvConfig) -> np.ndarray:
    norm = np.asarray(norm, dtype=np.float64)
    return norm * cfg.image_size / (2.0 * cfg.px_per_unit)


def color_rgb(color_id: int) -> np.ndarray:
    if color_id >= len(_COLOR_TABLE):
        raise ConfigError(f"no palette entry for color id {color_id}")
    return _COLOR_TABLE[color_id]


def _pixel_grid(cfg: EnvConfig):
    s = cfg.image_size
    ys, xs = np.mgrid[0:s, 0:s].astype(np.float32)
    return xs, ys


def _sd_disc(dx, dy, r):
    return np.hypot(dx, dy) - r


def _sd_box(dx, dy, hw, hh):
    qx = np.abs(dx) - hw
    qy = np.abs(dy) - hh
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return outside + inside


def _sd_triangle(dx, dy, half_base):
    # equilateral triangle, apex downward in image coordinates
    k = np.sqrt(3.0)
    px = np.abs(dx) - half_base
    py = dy + half_base / k
    refl = px + k * py > 0.0
    px2 = (px - k * py) * 0.5
    py2 = (-k * px - py) * 0.5
    px = np.where(refl, px2, px)
    py = np.where(refl, py2, py)
    px = px - np.clip(px, -2.0 * half_base, 0.0)
    return -np.hypot(px, py) * np.sign(py + 1e-12)


def glyph_sdf(shape_id: int, dx, dy, r_px: float):
    """Signed distance (pixels) of the glyph for ``shape_id`` at radius scale ``r_px``."""
    if shape_id == 0:
        return _sd_disc(dx, dy, r_px)
    if shape_id == 1:
        a = 0.886 * r_px
        return _sd_box(dx, dy, a, a)
    if shape_id == 2:
        return _sd_triangle(dx, dy, 1.25 * r_px)
    if shape_id == 3:
        long, short = 1.25 * r_px, 0.45 * r_px
        return np.minimum(_sd_box(dx, dy, long, short), _sd_box(dx, dy, short, long))
    if shape_id == 4:  # diamond
        a = 0.886 * r_px
        return _sd_box((dx + dy) * np.sqrt(0.5), (dx - dy) * np.sqrt(0.5), a, a)
    if shape_id == 5:  # ring
        return np.abs(_sd_disc(dx, dy, 0.85 * r_px)) - 0.4 * r_px
    raise ConfigError(f"no glyph for shape id {shape_id}")


def _coverage(sdf):
    return np.clip(0.5 - sdf / _ANTIALIAS_PX, 0.0, 1.0).astype(np.float32)


def _blend(img_hwc, alpha, rgb):
    a = alpha[..., None]
    img_hwc *= 1.0 - a
    img_hwc += a * rgb


@functools.lru_cache(maxsize=16)
def _background_hwc(cfg: EnvConfig) -> np.ndarray:
    """Reference-lighting background (table texture + darker border), HWC."""
    s = cfg.image_size
    rng = np.random.default_rng(cfg.texture_seed)
    noise = gaussian_filter(rng.standard_normal((s, s)), sigma=1.5)
    peak = np.max(np.abs(noise)) + 1e-9
    texture = (noise / peak * 0.015).astype(np.float32)
    base = cfg.background_level * np.array([0.95, 1.0, 1.1], dtype=np.float32)
    img = np.broadcast_to(base, (s, s, 3)).astype(np.float32).copy()
    img += texture[..., None]
    xs, ys = _pixel_grid(cfg)
    half_px = cfg.table_halfwidth * cfg.px_per_unit
    border = np.maximum(np.abs(xs - cfg.px_center), np.abs(ys - cfg.px_center)) > half_px
    img[border] *= 0.55
    return np.clip(img, 0.0, 1.0)


def _apply_lighting(img_hwc: np.ndarray, lighting: int, cfg: EnvConfig) -> np.ndarray:
    mult = cfg.lighting_multipliers()[lighting]
    return np.clip(img_hwc * np.float32(mult), 0.0, 1.0)


def _draw_pusher(img_hwc, pusher_pos, cfg: EnvConfig) -> None:
    xs, ys = _pixel_grid(cfg)
    tip = world_to_px(pusher_pos, cfg)
    # arm: capsule from the tip to an anchor below the bottom image edge
    ax, ay = float(tip[0]), float(cfg.image_size + 4)
    bax, bay = tip[0] - ax, tip[1] - ay
    denom = bax * bax + bay * bay + 1e-12
    h = np.clip(((xs - ax) * bax + (ys - ay) * bay) / denom, 0.0, 1.0)
    arm_d = np.hypot(xs - (ax + bax * h), ys - (ay + bay * h)) - cfg.arm_halfwidth_px
    _blend(img_hwc, _coverage(arm_d), _ARM_COLOR)
    tip_d = _sd_disc(xs - tip[0], ys - tip[1], cfg.pusher_radius * cfg.px_per_unit)
    _blend(img_hwc, _coverage(tip_d), _TIP_COLOR)


def _draw_object(img_hwc, state: WorldState, cfg: EnvConfig) -> None:
    xs, ys = _pixel_grid(cfg)
    c = world_to_px(state.object_pos, cfg)
    sdf = glyph_sdf(state.object_shape, xs - c[0], ys - c[1], cfg.object_radius * cfg.px_per_unit)
    _blend(img_hwc, _coverage(sdf), color_rgb(state.object_color))


def render(state: WorldState, cfg: EnvConfig) -> np.ndarray:
    """Render a state to a C x H x W float image in [0, 1]."""
    _validate_state(state, cfg)
    img = _background_hwc(cfg).copy()
    if state.pusher_pos is not None:
        _draw_pusher(img, state.pusher_pos, cfg)
    _draw_object(img, state, cfg)
    img = _apply_lighting(img, state.lighting, cfg)
    return np.moveaxis(img, -1, 0).copy()


def background_at_lighting(cfg: EnvConfig, lighting: int) -> np.ndarray:
    """Empty table at an arbitrary lighting id (CHW)."""
    img = _apply_lighting(_background_hwc(cfg).copy(), lighting, cfg)
    return np.moveaxis(img, -1, 0).copy()


def capture_background(cfg: EnvConfig) -> np.ndarray:
    """Empty table (no object, no pusher) at the reference lighting."""
    return background_at_lighting(cfg, cfg.reference_lighting)


def robot_pose_position(cfg: EnvConfig, pose_seed: int) -> np.ndarray:
    """Pusher tip position drawn deterministically from ``pose_seed``."""
    rng = np.random.default_rng(pose_seed)
    t = cfg.table_halfwidth
    return rng.uniform(-t, t, size=2)


def render_robot_pose(cfg: EnvConfig, pose_seed: int) -> np.ndarray:
    """Background plus the pusher at a seed-determined pose; no object."""
    img = _background_hwc(cfg).copy()
    _draw_pusher(img, tuple(robot_pose_position(cfg, pose_seed)), cfg)
    img = _apply_lighting(img, cfg.reference_lighting, cfg)
    return np.moveaxis(img, -1, 0).copy()


def object_bbox(state: WorldState, cfg: EnvConfig) -> tuple[int, int, int, int]:
    """Conservative (y0, y1, x0, x1) pixel box containing the object glyph."""
    c = world_to_px(state.object_pos, cfg)
    reach = 1.6 * cfg.object_radius * cfg.px_per_unit + _ANTIALIAS_PX + 1.0
    s = cfg.image_size
    return (
        int(np.clip(np.floor(c[1] - reach), 0, s)),
        int(np.clip(np.ceil(c[1] + reach) + 1, 0, s)),
        int(np.clip(np.floor(c[0] - reach), 0, s)),
        int(np.clip(np.ceil(c[0] + reach) + 1, 0, s)),
    )


def pusher_bbox(state: WorldState, cfg: EnvConfig) -> tuple[int, int, int, int]:
    """Pixel box containing the tip and the arm column down to the image edge."""
    if state.pusher_pos is None:
        return (0, 0, 0, 0)
    tip = world_to_px(state.pusher_pos, cfg)
    reach = max(cfg.pusher_radius * cfg.px_per_unit, cfg.arm_halfwidth_px)
    reach += _ANTIALIAS_PX + 1.0
    s = cfg.image_size
    return (
        int(np.clip(np.floor(tip[1] - reach), 0, s)),
        s,
        int(np.clip(np.floor(tip[0] - reach), 0, s)),
        int(np.clip(np.ceil(tip[0] + reach) + 1, 0, s)),
    )


def step(state: WorldState, action: Action, cfg: EnvConfig) -> tuple[WorldState, bool]:
    """Advance one control step: move the pusher, resolve object overlap.

    The pusher tip translates by ``delta * max_pusher_step`` (clipped to the
    table). If the moved tip overlaps the object's bounding circle, the object
    translates along the tip's actual motion direction by the minimal amount
    removing the overlap (quasi-static push), then is clipped to the table.
    Grazing contact (distance exactly at the contact radius) moves nothing.
    """
    _validate_state(state, cfg)
    if state.pusher_pos is None:
        raise InputError("cannot step a state without a pusher")
    delta = np.asarray(action.delta, dtype=np.float64)
    if delta.shape != (2,) or np.any(np.abs(delta) > 1.0 + 1e-9) or not np.all(np.isfinite(delta)):
        raise InputError(f"action delta {action.delta} outside [-1, 1]^2")

    t = cfg.table_halfwidth
    old_pusher = np.asarray(state.pusher_pos, dtype=np.float64)
    new_pusher = np.clip(old_pusher + delta * cfg.max_pusher_step, -t, t)
    motion = new_pusher - old_pusher
    obj = np.asarray(state.object_pos, dtype=np.float64)

    speed = np.linalg.norm(motion)
    if speed > 1e-12:
        u = motion / speed
        d = obj - new_pusher
        contact_r = cfg.object_radius + cfg.pusher_radius
        dist2 = float(d @ d)
        if dist2 < contact_r**2:
            du = float(d @ u)
            push = -du + np.sqrt(du * du + contact_r**2 - dist2)
            obj = np.clip(obj + push * u, -t, t)

    count = state.step_count + 1
    new_state = dataclasses.replace(
        state,
        pusher_pos=(float(new_pusher[0]), float(new_pusher[1])),
        object_pos=(float(obj[0]), float(obj[1])),
        step_count=count,
    )
    return new_state, count >= cfg.episode_len


def true_object_position(state: WorldState) -> np.ndarray:
    """Ground-truth object coordinates; evaluation/oracle use only."""
    return np.asarray(state.object_pos, dtype=np.float64).copy()


# ---------------------------------------------------------------------------
# dataset generation


@dataclass(frozen=True)
class Record:
    id: int
    file: str
    split: str                      # train / eval_seen / eval_unseen
    state: WorldState


@dataclass(frozen=True)
class PairRecord:
    a: int
    b: int
    shared_attribute: str


@dataclass
class Manifest:
    records: list
    pairs: list
    background_file: str
    robot_pose_files: list
    env: EnvConfig
    data: DataConfig
    seed: int
    cfg_hash: str
    root: str = "."

    def record_path(self, rec: Record) -> str:
        return os.path.join(self.root, rec.file)

    def by_split(self, split: str) -> list:
        return [r for r in self.records if r.split == split]


def save_image(img_chw: np.ndarray, path: str) -> None:
    arr = np.moveaxis(img_chw, 0, -1)
    arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr).save(path)


def load_image(path: str) -> np.ndarray:
    arr = np.asarray(PILImage.open(path), dtype=np.float32) / 255.0
    return np.moveaxis(arr, -1, 0).copy()


def _sample_position(rng, halfwidth: float) -> tuple[float, float]:
    p = rng.uniform(-halfwidth, halfwidth, size=2)
    return (float(p[0]), float(p[1]))


def _sample_distinct(rng, values) -> tuple[int, int]:
    picks = rng.choice(len(values), size=2, replace=False)
    return int(values[picks[0]]), int(values[picks[1]])


def _pair_states(rng, attr: str, env: EnvConfig, data: DataConfig, seen_shapes, seen_colors):
    """Two states agreeing on exactly ``attr`` among shape/color/position."""
    def distinct_positions():
        while True:
            pa = _sample_position(rng, env.train_halfwidth)
            pb = _sample_position(rng, env.train_halfwidth)
            if np.hypot(pa[0] - pb[0], pa[1] - pb[1]) >= data.min_position_gap:
                return pa, pb

    if attr == "shape":
        shape = int(rng.choice(seen_shapes))
        shapes = (shape, shape)
        colors = _sample_distinct(rng, seen_colors)
        positions = distinct_positions()
    elif attr == "color":
        color = int(rng.choice(seen_colors))
        colors = (color, color)
        shapes = _sample_distinct(rng, seen_shapes)
        positions = distinct_positions()
    elif attr == "position":
        pos = _sample_position(rng, env.train_halfwidth)
        positions = (pos, pos)
        shapes = _sample_distinct(rng, seen_shapes)
        colors = _sample_distinct(rng, seen_colors)
    else:
        raise InputError(f"unknown attribute '{attr}'")

    states = []
    for i in range(2):
        states.append(
            WorldState(
                object_shape=shapes[i],
                object_color=colors[i],
                object_pos=positions[i],
                pusher_pos=_sample_position(rng, env.table_halfwidth),
                lighting=int(rng.integers(env.n_lightings)),
            )
        )
    return states


def generate_dataset(env: EnvConfig, data: DataConfig, out_dir: str, seed: int) -> Manifest:
    """Render the full dataset to ``out_dir`` and write ``manifest.json``.

    The training split keeps object positions inside the training sub-region
    and never uses held-out shape/color ids; eval splits spread positions over
    the goal region at the reference lighting. Pair records carry only the
    shared-attribute tag for training; full states are recorded for
    evaluation.
    """
    env.validate()
    data.validate(env)
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    seen_shapes = [s for s in range(env.n_shapes) if s not in data.holdout_shapes]
    seen_colors = [c for c in range(env.n_colors) if c not in data.holdout_colors]

    records: list[Record] = []
    pairs: list[PairRecord] = []

    def add_record(state: WorldState, split: str) -> int:
        rid = len(records)
        records.append(Record(id=rid, file=f"img_{rid:05d}.png", split=split, state=state))
        return rid

    for _ in range(data.n_singles):
        state = WorldState(
            object_shape=int(rng.choice(seen_shapes)),
            object_color=int(rng.choice(seen_colors)),
            object_pos=_sample_position(rng, env.train_halfwidth),
            pusher_pos=_sample_position(rng, env.table_halfwidth),
            lighting=int(rng.integers(env.n_lightings)),
        )
        add_record(state, "train")

    for attr in ATTRIBUTES:
        for _ in range(data.n_pairs_per_attr):
            sa, sb = _pair_states(rng, attr, env, data, seen_shapes, seen_colors)
            pairs.append(
                PairRecord(a=add_record(sa, "train"), b=add_record(sb, "train"), shared_attribute=attr)
            )

    goal_hw = env.goal_halfwidth
    for _ in range(data.n_eval_seen):
        state = WorldState(
            object_shape=int(rng.choice(seen_shapes)),
            object_color=int(rng.choice(seen_colors)),
            object_pos=_sample_position(rng, goal_hw),
            pusher_pos=_sample_position(rng, env.table_halfwidth),
            lighting=env.reference_lighting,
        )
        add_record(state, "eval_seen")

    unseen_modes = ["shape", "color", "both"]
    for i in range(data.n_eval_unseen):
        mode = unseen_modes[i % len(unseen_modes)]
        shape = int(rng.choice(data.holdout_shapes)) if mode in ("shape", "both") else int(
            rng.choice(seen_shapes)
        )
        color = int(rng.choice(data.holdout_colors)) if mode in ("color", "both") else int(
            rng.choice(seen_colors)
        )
        state = WorldState(
            object_shape=shape,
            object_color=color,
            object_pos=_sample_position(rng, goal_hw),
            pusher_pos=_sample_position(rng, env.table_halfwidth),
            lighting=env.reference_lighting,
        )
        add_record(state, "eval_unseen")

    for rec in records:
        save_image(render(rec.state, env), os.path.join(out_dir, rec.file))

    background_file = "background.png"
    save_image(capture_background(env), os.path.join(out_dir, background_file))

    robot_pose_files = []
    for i in range(data.n_robot_poses):
        fname = f"robot_pose_{i:03d}.png"
        save_image(render_robot_pose(env, seed * 10007 + i), os.path.join(out_dir, fname))
        robot_pose_files.append(fname)

    manifest = Manifest(
        records=records,
        pairs=pairs,
        background_file=background_file,
        robot_pose_files=robot_pose_files,
        env=env,
        data=data,
        seed=seed,
        cfg_hash=config_hash(env),
        root=out_dir,
    )
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest


def save_manifest(manifest: Manifest, path: str) -> None:
    payload = {
        "format": "latentpush-dataset",
        "version": 1,
        "cfg_hash": manifest.cfg_hash,
        "seed": manifest.seed,
        "env": dataclasses.asdict(manifest.env),
        "data": dataclasses.asdict(manifest.data),
        "background_file": manifest.background_file,
        "robot_pose_files": manifest.robot_pose_files,
        "records": [
            {"id": r.id, "file": r.file, "split": r.split, "state": r.state.to_dict()}
            for r in manifest.records
        ],
        "pairs": [dataclasses.asdict(p) for p in manifest.pairs],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_manifest(path_or_dir: str) -> Manifest:
    path = path_or_dir
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "latentpush-dataset":
        raise InputError(f"{path} is not a dataset manifest")
    env_raw = payload["env"]
    env_raw = {k: tuple(v) if isinstance(v, list) else v for k, v in env_raw.items()}
    data_raw = {k: tuple(v) if isinstance(v, list) else v for k, v in payload["data"].items()}
    env = EnvConfig(**env_raw)
    data = DataConfig(**data_raw)
    records = [
        Record(id=r["id"], file=r["file"], split=r["split"], state=WorldState.from_dict(r["state"]))
        for r in payload["records"]
    ]
    pairs = [PairRecord(**p) for p in payload["pairs"]]
    return Manifest(
        records=records,
        pairs=pairs,
        background_file=payload["background_file"],
        robot_pose_files=payload["robot_pose_files"],
        env=env,
        data=data,
        seed=payload["seed"],
        cfg_hash=payload["cfg_hash"],
        root=os.path.dirname(os.path.abspath(path)),
    )


class PushEnv:
    """Stateful episode wrapper over the pure ``step``/``render`` functions."""

    def __init__(self, cfg: EnvConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.state: WorldState | None = None

    def reset(
        self,
        shapes=None,
        colors=None,
        object_pos=None,
        pusher_pos=None,
        lighting=None,
    ) -> WorldState:
        cfg = self.cfg
        shapes = list(range(cfg.n_shapes)) if shapes is None else list(shapes)
        colors = list(range(cfg.n_colors)) if colors is None else list(colors)
        if object_pos is None:
            object_pos = _sample_position(self.rng, cfg.goal_halfwidth)
        if pusher_pos is None:
            pusher_pos = _sample_position(self.rng, cfg.table_halfwidth)
        if lighting is None:
            lighting = int(self.rng.integers(cfg.n_lightings))
        self.state = WorldState(
            object_shape=int(self.rng.choice(shapes)),
            object_color=int(self.rng.choice(colors)),
            object_pos=tuple(object_pos),
            pusher_pos=tuple(pusher_pos),
            lighting=lighting,
        )
        return self.state

    def step(self, delta) -> tuple[WorldState, bool]:
        if self.state is None:
            raise InputError("reset the environment before stepping")
        delta = np.clip(np.asarray(delta, dtype=np.float64), -1.0, 1.0)
        self.state, done = step(self.state, Action(delta=(float(delta[0]), float(delta[1]))), self.cfg)
        return self.state, done

    def render(self) -> np.ndarray:
        if self.state is None:
            raise InputError("reset the environment before rendering")
        return render(self.state, self.cfg)
