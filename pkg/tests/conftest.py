from __future__ import annotations

import numpy as np
import pytest

from trpose import (CONDITION_PRESETS, CameraModel, TraversalConfig,
                    WorldConfig, generate_dataset, world_preset)


def straight_world(length: float = 10.0, landmarks: int = 30) -> WorldConfig:
    return WorldConfig(waypoints=((0.0, 0.0), (length, 0.0)),
                       landmark_count=landmarks, texture_seed=5)


def random_pose_tuple(rng: np.random.Generator) -> tuple[float, float, float]:
    return (float(rng.uniform(-10, 10)), float(rng.uniform(-10, 10)),
            float(rng.uniform(-np.pi, np.pi)))


@pytest.fixture(scope="session")
def mini_gen(tmp_path_factory):
    """A small rendered dataset: teach plus three repeats on the smooth loop
    at coarse spacing, enough for data assembly and model-predictor tests."""
    out = str(tmp_path_factory.mktemp("mini_world"))
    world = world_preset("loop_a")
    camera = CameraModel()
    spacing = 0.45
    runs = [("day_snow", TraversalConfig(
        keyframe_spacing_mean=spacing, seed=21,
        condition=CONDITION_PRESETS["day_snow"]))]
    for i, cond in enumerate(("day_snow", "day_green", "night_green")):
        runs.append((cond, TraversalConfig(
            lateral_sigma=0.03, heading_sigma=0.02, keyframe_spacing_mean=spacing,
            keyframe_spacing_jitter=0.1, seed=22 + i,
            condition=CONDITION_PRESETS[cond])))
    return generate_dataset(world, camera, runs, out)
