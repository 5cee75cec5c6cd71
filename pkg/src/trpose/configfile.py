"""Single key=value config file (INI sections) shared by every subcommand.

Sections: [world] picks a preset and overrides scatter/texture; [camera]
sizes the pinhole rig; [traversal] sets spacing and repeat offsets; [runs]
plans the teach and repeat traversals; [conditions.NAME] customizes or adds
an appearance condition; [model] picks the network scale; [train] carries
the optimizer recipe and dataset sizing.
"""

from __future__ import annotations

import configparser
import dataclasses

from .model import NetworkConfig, desk_config, full_config, tiny_config
from .rendering import CameraModel, ConditionParams
from .training import TrainConfig
from .world import CONDITION_PRESETS, TraversalConfig, WorldConfig, world_preset


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = """\
[world]
preset = loop_a

[camera]
width = 128
height = 96
fov_deg = 65.0
baseline = 0.24
mount_height = 0.55

[traversal]
keyframe_spacing_mean = 0.15
keyframe_spacing_jitter = 0.10
lateral_sigma = 0.03
heading_sigma = 0.02

[runs]
teach_condition = day_snow
repeats = day_snow:1 night_snow:1 day_green:1 night_green:1
seed_base = 100
label_noise_sigma = 0.0

[model]
scale = desk

[train]
batch_size = 64
learning_rate = 0.0001
max_epochs = 80
patience = 10
seed = 0
val_fraction = 0.1
samples = 3000
spatial_hops = 0
"""

_ALLOWED_KEYS = {
    "world": {"preset", "landmark_count", "texture_seed"},
    "camera": {"width", "height", "fov_deg", "baseline", "mount_height"},
    "traversal": {"keyframe_spacing_mean", "keyframe_spacing_jitter",
                  "lateral_sigma", "heading_sigma"},
    "runs": {"teach_condition", "repeats", "seed_base", "label_noise_sigma"},
    "model": {"scale"},
    "train": {"batch_size", "learning_rate", "adam_beta1", "adam_beta2",
              "adam_epsilon", "max_epochs", "patience", "seed", "val_fraction",
              "samples", "spatial_hops"},
}
_CONDITION_KEYS = {"illumination", "season", "headlights", "sun_flare", "noise_sigma"}


def load_config(path: str | None = None) -> configparser.ConfigParser:
    """Parse and validate a config file; with no path, the built-in defaults.
    User files only need the keys they change."""
    cfg = configparser.ConfigParser()
    cfg.read_string(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                cfg.read_file(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from None
        except configparser.Error as e:
            raise ConfigError(f"malformed config file {path}: {e}") from None
    _validate_keys(cfg)
    return cfg


def _validate_keys(cfg: configparser.ConfigParser) -> None:
    for section in cfg.sections():
        if section.startswith("conditions."):
            allowed = _CONDITION_KEYS
        elif section in _ALLOWED_KEYS:
            allowed = _ALLOWED_KEYS[section]
        else:
            raise ConfigError(f"unknown config section [{section}]")
        for key in cfg[section]:
            if key not in allowed:
                raise ConfigError(f"invalid config key {key!r} in section [{section}]")


def world_from_config(cfg: configparser.ConfigParser) -> WorldConfig:
    section = cfg["world"]
    world = world_preset(section.get("preset", "loop_a"))
    overrides = {}
    if "landmark_count" in section:
        overrides["landmark_count"] = section.getint("landmark_count")
    if "texture_seed" in section:
        overrides["texture_seed"] = section.getint("texture_seed")
    return dataclasses.replace(world, **overrides) if overrides else world


def camera_from_config(cfg: configparser.ConfigParser) -> CameraModel:
    c = cfg["camera"]
    return CameraModel.sized(width=c.getint("width"), height=c.getint("height"),
                             fov_deg=c.getfloat("fov_deg"),
                             baseline=c.getfloat("baseline"),
                             mount_height=c.getfloat("mount_height"))


def condition_from_config(cfg: configparser.ConfigParser, name: str) -> ConditionParams:
    base = CONDITION_PRESETS.get(name, ConditionParams())
    section_name = f"conditions.{name}"
    if not cfg.has_section(section_name):
        if name not in CONDITION_PRESETS:
            known = ", ".join(sorted(CONDITION_PRESETS))
            raise ConfigError(f"unknown condition {name!r} (presets: {known}; "
                              f"or define [conditions.{name}])")
        return base
    s = cfg[section_name]
    return ConditionParams(
        illumination=s.getfloat("illumination", base.illumination),
        season=s.getfloat("season", base.season),
        headlights=s.getboolean("headlights", base.headlights),
        sun_flare=s.getboolean("sun_flare", base.sun_flare),
        noise_sigma=s.getfloat("noise_sigma", base.noise_sigma),
    )


def _traversal(cfg, condition_name: str, seed: int, repeat: bool) -> TraversalConfig:
    t = cfg["traversal"]
    return TraversalConfig(
        lateral_sigma=t.getfloat("lateral_sigma") if repeat else 0.0,
        heading_sigma=t.getfloat("heading_sigma") if repeat else 0.0,
        keyframe_spacing_mean=t.getfloat("keyframe_spacing_mean"),
        keyframe_spacing_jitter=t.getfloat("keyframe_spacing_jitter") if repeat else 0.0,
        condition=condition_from_config(cfg, condition_name),
        seed=seed,
    )


def run_plan_from_config(cfg: configparser.ConfigParser,
                         seed_base: int | None = None,
                         sweep: list[str] | None = None
                         ) -> list[tuple[str, TraversalConfig]]:
    """The (condition_name, TraversalConfig) list for generate: entry 0 is
    the teach run.  `sweep` replaces the configured repeat plan with exactly
    one repeat per listed condition."""
    runs_section = cfg["runs"]
    if seed_base is None:
        seed_base = runs_section.getint("seed_base")
    teach_condition = runs_section.get("teach_condition")
    plan = [(teach_condition, _traversal(cfg, teach_condition, seed_base, repeat=False))]

    if sweep is not None:
        repeat_conditions = list(sweep)
    else:
        repeat_conditions = []
        for token in runs_section.get("repeats").split():
            name, _, count = token.partition(":")
            try:
                repeat_conditions += [name] * (int(count) if count else 1)
            except ValueError:
                raise ConfigError(f"bad repeats token {token!r} "
                                  f"(expected condition or condition:count)") from None
    for i, name in enumerate(repeat_conditions, start=1):
        plan.append((name, _traversal(cfg, name, seed_base + i, repeat=True)))
    return plan


def model_from_config(cfg: configparser.ConfigParser) -> NetworkConfig:
    scale = cfg["model"].get("scale", "desk")
    factories = {"desk": desk_config, "full": full_config, "tiny": tiny_config}
    if scale not in factories:
        raise ConfigError(f"unknown model scale {scale!r} (have: desk, full, tiny)")
    net = factories[scale]()
    cam_w = cfg["camera"].getint("width")
    cam_h = cfg["camera"].getint("height")
    if (cam_w, cam_h) != (net.input_width, net.input_height):
        raise ConfigError(
            f"model scale {scale!r} expects {net.input_width}x{net.input_height} "
            f"images but [camera] renders {cam_w}x{cam_h}")
    return net


def train_from_config(cfg: configparser.ConfigParser) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        batch_size=t.getint("batch_size"),
        learning_rate=t.getfloat("learning_rate"),
        adam_beta1=t.getfloat("adam_beta1", 0.9),
        adam_beta2=t.getfloat("adam_beta2", 0.999),
        adam_epsilon=t.getfloat("adam_epsilon", 1e-8),
        max_epochs=t.getint("max_epochs"),
        patience=t.getint("patience"),
        seed=t.getint("seed"),
        val_fraction=t.getfloat("val_fraction"),
    )
