"""Synthetic teach-and-repeat world generation.

Builds traversals along a waypoint polyline: a teach run sampled at (jittered)
arclength spacing with headings tangent to the path, and repeat runs that
follow the teach path with smooth correlated lateral and heading offsets.
Renders every keyframe to a stereo pair and assembles the whole thing into a
pose graph whose temporal and spatial edges carry the exact (optionally
noise-corrupted) relative poses, so sampled training labels can be checked
against the generator's ground truth.
"""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, relative_pose
from .pose_graph import GraphStructureError, Keyframe, PoseGraph, VertexId
from .rendering import CameraModel, ConditionParams, Landmark, render_stereo, save_png, stable_seed

# Number of random harmonics summed into each repeat-offset profile.  The
# per-harmonic amplitude sigma*sqrt(2/K) gives the profile variance sigma^2
# and a hard bound of sigma*sqrt(2K) ~ 2.83*sigma on the total offset.
OFFSET_HARMONICS = 4

_LANDMARK_COLORS = (
    (0.85, 0.15, 0.12),
    (0.10, 0.30, 0.85),
    (0.92, 0.65, 0.10),
    (0.55, 0.12, 0.62),
    (0.10, 0.62, 0.55),
    (0.85, 0.35, 0.55),
    (0.95, 0.90, 0.20),
    (0.25, 0.75, 0.20),
)


class Polyline:
    """Piecewise-linear path through 2D points, queried by arclength."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("a polyline needs at least two 2D points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if not (seg_len > 0).any():
            raise ValueError("polyline has zero length")
        # drop degenerate (zero-length) segments so tangents stay defined
        keep = seg_len > 0
        self.points = np.concatenate([pts[:1], pts[1:][keep]], axis=0)
        seg = np.diff(self.points, axis=0)
        self._seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self._heading = np.arctan2(seg[:, 1], seg[:, 0])
        self._cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def _segment(self, s: float) -> tuple[int, float]:
        s = min(max(s, 0.0), self.length)
        idx = int(np.searchsorted(self._cum, s, side="right")) - 1
        idx = min(max(idx, 0), len(self._seg_len) - 1)
        return idx, s - self._cum[idx]

    def point(self, s: float) -> np.ndarray:
        idx, ds = self._segment(s)
        t = ds / self._seg_len[idx]
        return self.points[idx] + t * (self.points[idx + 1] - self.points[idx])

    def tangent_heading(self, s: float) -> float:
        """Heading of the segment containing arclength s; at a vertex the
        outgoing segment wins."""
        idx, _ = self._segment(s)
        return float(self._heading[idx])


@dataclass(frozen=True)
class WorldConfig:
    """Static world: the teach path's waypoints, landmark scatter, terrain."""

    waypoints: tuple[tuple[float, float], ...]
    landmark_count: int = 120
    texture_seed: int = 7
    snow_rgb: tuple[float, float, float] = (0.93, 0.95, 0.99)
    green_rgb: tuple[float, float, float] = (0.22, 0.52, 0.18)
    bare_rgb: tuple[float, float, float] = (0.42, 0.36, 0.28)

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("world needs at least two waypoints")
        if self.landmark_count < 0:
            raise ValueError("landmark_count must be >= 0")
        Polyline(self.waypoints)  # validates positive path length

    def polyline(self) -> Polyline:
        return _polyline_for(self.waypoints)

    def landmarks(self) -> tuple[Landmark, ...]:
        return _landmarks_for(self.waypoints, self.texture_seed, self.landmark_count)


@functools.lru_cache(maxsize=32)
def _polyline_for(waypoints) -> Polyline:
    return Polyline(waypoints)


@functools.lru_cache(maxsize=32)
def _landmarks_for(waypoints, texture_seed, count) -> tuple[Landmark, ...]:
    line = _polyline_for(waypoints)
    rng = np.random.default_rng(stable_seed(texture_seed, "landmarks"))
    out = []
    for _ in range(count):
        s = rng.uniform(0.0, line.length)
        h = line.tangent_heading(s)
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        lateral = side * rng.uniform(0.5, 2.2)
        base = line.point(s)
        color = np.array(_LANDMARK_COLORS[rng.integers(len(_LANDMARK_COLORS))])
        color = np.clip(color + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)
        out.append(Landmark(
            x=float(base[0] - lateral * math.sin(h)),
            y=float(base[1] + lateral * math.cos(h)),
            z=float(rng.uniform(0.15, 0.75)),
            radius=float(rng.uniform(0.07, 0.22)),
            color=tuple(color),
        ))
    return tuple(out)


@dataclass(frozen=True)
class TraversalConfig:
    """One traversal's sampling and appearance parameters."""

    lateral_sigma: float = 0.0
    heading_sigma: float = 0.0
    keyframe_spacing_mean: float = 0.15
    keyframe_spacing_jitter: float = 0.0
    condition: ConditionParams = field(default_factory=ConditionParams)
    seed: int = 0

    def __post_init__(self):
        if self.keyframe_spacing_mean <= 0:
            raise ValueError("keyframe_spacing_mean must be positive")
        if not 0.0 <= self.keyframe_spacing_jitter < 1.0:
            raise ValueError("keyframe_spacing_jitter must be in [0, 1)")
        if self.lateral_sigma < 0 or self.heading_sigma < 0:
            raise ValueError("offset sigmas must be >= 0")


class _OffsetProfile:
    """Smooth zero-mean random profile over arclength: a sum of K sinusoids
    with per-harmonic amplitude sigma*sqrt(2/K), so the profile has variance
    ~sigma^2 and is hard-bounded by sigma*sqrt(2K)."""

    def __init__(self, rng: np.random.Generator, sigma: float, length: float):
        k = OFFSET_HARMONICS
        self._amp = sigma * math.sqrt(2.0 / k)
        self._freq = rng.uniform(0.5, 4.5, size=k)
        self._phase = rng.uniform(0.0, 2.0 * math.pi, size=k)
        self._length = length

    def __call__(self, s: float) -> float:
        arg = 2.0 * math.pi * self._freq * (s / self._length) + self._phase
        return float(self._amp * np.sin(arg).sum())


def _arclengths(length: float, traversal: TraversalConfig,
                rng: np.random.Generator) -> list[float]:
    out = []
    s = 0.0
    eps = 1e-9 * max(length, 1.0)
    while s <= length + eps:
        out.append(min(s, length))
        step = traversal.keyframe_spacing_mean * (
            1.0 + traversal.keyframe_spacing_jitter * rng.uniform(-1.0, 1.0))
        s += step
    return out


def generate_teach(world: WorldConfig, traversal: TraversalConfig) -> list[Pose2]:
    """Keyframe poses along the waypoint polyline at jittered spacing,
    headings tangent to the path."""
    line = world.polyline()
    rng = np.random.default_rng(stable_seed(traversal.seed, "teach"))
    return [Pose2(*line.point(s), line.tangent_heading(s))
            for s in _arclengths(line.length, traversal, rng)]


def generate_repeat(teach_poses: list[Pose2], traversal: TraversalConfig) -> list[Pose2]:
    """Poses following the teach path with smooth correlated lateral and
    heading offsets; keyframe count varies with spacing jitter."""
    if len(teach_poses) < 2:
        raise ValueError("need at least two teach poses to follow")
    line = Polyline([(p.x, p.y) for p in teach_poses])
    rng = np.random.default_rng(stable_seed(traversal.seed, "repeat"))
    lateral = _OffsetProfile(rng, traversal.lateral_sigma, line.length)
    heading = _OffsetProfile(rng, traversal.heading_sigma, line.length)
    poses = []
    for s in _arclengths(line.length, traversal, rng):
        base = line.point(s)
        h = line.tangent_heading(s)
        d = lateral(s)
        poses.append(Pose2(base[0] - d * math.sin(h),
                           base[1] + d * math.cos(h),
                           h + heading(s)))
    return poses


def close_loop(poses: list[Pose2]) -> list[Pose2]:
    """Append a final keyframe coinciding with the first, turning a loop
    traversal into an exactly closed circuit."""
    return list(poses) + [poses[0]]


def _noisy(xi: Pose2, sigma: float, rng: np.random.Generator | None) -> Pose2:
    if sigma <= 0 or rng is None:
        return xi
    n = rng.normal(0.0, sigma, size=3)
    return Pose2(xi.x + n[0], xi.y + n[1], xi.theta + n[2])


def anchor_indices(teach_poses: list[Pose2], repeat_poses: list[Pose2],
                   gate: float = 2.0) -> list[int]:
    """For each repeat keyframe, the nearest teach keyframe by a windowed
    monotone search along the teach run.

    The window ([prev-2, prev+10]) keeps anchoring ordered along the path, so
    on closed loops the start of a repeat cannot grab the spatially adjacent
    end of the teach run.  A repeat keyframe farther than `gate` from every
    candidate marks a degenerate traversal and raises.
    """
    teach_xy = np.array([[p.x, p.y] for p in teach_poses])
    out = []
    prev = 0
    for k, pose in enumerate(repeat_poses):
        lo = max(prev - 2, 0)
        hi = min(prev + 10, len(teach_poses) - 1)
        d = np.hypot(teach_xy[lo:hi + 1, 0] - pose.x, teach_xy[lo:hi + 1, 1] - pose.y)
        best = int(np.argmin(d))
        if d[best] > gate:
            d_all = np.hypot(teach_xy[:, 0] - pose.x, teach_xy[:, 1] - pose.y)
            raise GraphStructureError(
                f"repeat keyframe {k} is {float(d_all.min()):.3f} m from the nearest "
                f"teach keyframe (gate {gate} m): degenerate traversal")
        prev = lo + best
        out.append(prev)
    return out


def build_graph(teach_poses: list[Pose2], repeat_pose_lists: list[list[Pose2]],
                label_noise_sigma: float = 0.0, *, label_seed: int = 0,
                anchor_gate: float = 2.0, conditions: list[str] | None = None,
                image_paths: list[list[tuple[str, str]]] | None = None) -> PoseGraph:
    """Assemble the pose graph: temporal edges between consecutive keyframes
    and one spatial edge per repeat keyframe to its anchored teach keyframe,
    all carrying exact relative poses plus optional zero-mean label noise.
    """
    all_runs = [list(teach_poses)] + [list(r) for r in repeat_pose_lists]
    if conditions is None:
        conditions = ["none"] * len(all_runs)
    if len(conditions) != len(all_runs):
        raise ValueError(f"got {len(conditions)} condition tags for {len(all_runs)} runs")
    rng = np.random.default_rng(stable_seed(label_seed, "labels")) \
        if label_noise_sigma > 0 else None

    graph = PoseGraph()
    for run_idx, poses in enumerate(all_runs):
        kfs = []
        for i in range(len(poses)):
            left, right = ("", "")
            if image_paths is not None:
                left, right = image_paths[run_idx][i]
            kfs.append(Keyframe(id=VertexId(run_idx, i), image_left=left,
                                image_right=right, condition=conditions[run_idx],
                                timestamp=float(i)))
        xis = [_noisy(relative_pose(poses[i + 1], poses[i]), label_noise_sigma, rng)
               for i in range(len(poses) - 1)]
        graph.add_run(kfs, xis)

    for run_idx, poses in enumerate(all_runs[1:], start=1):
        anchors = anchor_indices(teach_poses, poses, gate=anchor_gate)
        for i, (pose, a) in enumerate(zip(poses, anchors)):
            xi = _noisy(relative_pose(pose, teach_poses[a]), label_noise_sigma, rng)
            graph.add_spatial_edge(VertexId(run_idx, i), VertexId(0, a), xi)
    return graph


# -- preset worlds and conditions -------------------------------------------

def rounded_rect_waypoints(width: float, height: float, fillet: float,
                           arc_step: float = 0.2,
                           center: tuple[float, float] = (0.0, 0.0)) -> tuple:
    """Closed rectangular circuit with quarter-circle corner fillets,
    traversed counter-clockwise starting on the bottom edge; the first
    waypoint is repeated at the end to close the loop."""
    if fillet <= 0 or width <= 2 * fillet or height <= 2 * fillet:
        raise ValueError("fillet must be positive and fit inside the rectangle")
    cx, cy = center
    hw, hh = width / 2.0, height / 2.0
    # corner arc centers, counter-clockwise from bottom-right
    arcs = [
        ((cx + hw - fillet, cy - hh + fillet), -90.0),
        ((cx + hw - fillet, cy + hh - fillet), 0.0),
        ((cx - hw + fillet, cy + hh - fillet), 90.0),
        ((cx - hw + fillet, cy - hh + fillet), 180.0),
    ]
    n_arc = max(int(math.ceil((math.pi / 2) * fillet / arc_step)), 3)
    pts: list[tuple[float, float]] = [(cx - hw + fillet, cy - hh)]
    for (ax, ay), start_deg in arcs:
        for j in range(n_arc + 1):
            a = math.radians(start_deg) + (math.pi / 2) * j / n_arc
            pts.append((ax + fillet * math.cos(a), ay + fillet * math.sin(a)))
    pts.append(pts[0])
    return tuple(pts)


def world_preset(name: str) -> WorldConfig:
    """Built-in worlds: `loop_a` is a smooth wide loop, `loop_b` a tighter
    circuit with sharper corners."""
    if name == "loop_a":
        return WorldConfig(waypoints=rounded_rect_waypoints(10.0, 6.0, 2.0),
                           landmark_count=130, texture_seed=71)
    if name == "loop_b":
        return WorldConfig(waypoints=rounded_rect_waypoints(7.0, 5.0, 0.7, arc_step=0.1),
                           landmark_count=110, texture_seed=402,
                           green_rgb=(0.30, 0.48, 0.14), bare_rgb=(0.46, 0.40, 0.30))
    raise ValueError(f"unknown world preset {name!r} (have: loop_a, loop_b)")


CONDITION_PRESETS: dict[str, ConditionParams] = {
    "day_snow": ConditionParams(illumination=0.90, season=0.10, noise_sigma=0.01),
    "night_snow": ConditionParams(illumination=0.25, season=0.10,
                                  headlights=True, noise_sigma=0.02),
    "day_green": ConditionParams(illumination=0.85, season=0.90,
                                 sun_flare=True, noise_sigma=0.01),
    "night_green": ConditionParams(illumination=0.20, season=0.95,
                                   headlights=True, noise_sigma=0.02),
}


# -- rendering orchestration -------------------------------------------------

def render_run(poses: list[Pose2], world: WorldConfig, camera: CameraModel,
               condition: ConditionParams, out_dir: str,
               run_idx: int) -> list[tuple[str, str]]:
    """Render every keyframe of a run to PNG stereo pairs under
    out_dir/images/runNN/; returns (left, right) paths relative to out_dir."""
    rel_dir = os.path.join("images", f"run{run_idx:02d}")
    os.makedirs(os.path.join(out_dir, rel_dir), exist_ok=True)
    paths = []
    for i, pose in enumerate(poses):
        left, right = render_stereo(pose, world, camera, condition)
        lrel = os.path.join(rel_dir, f"kf{i:04d}_L.png")
        rrel = os.path.join(rel_dir, f"kf{i:04d}_R.png")
        save_png(left, os.path.join(out_dir, lrel))
        save_png(right, os.path.join(out_dir, rrel))
        paths.append((lrel, rrel))
    return paths


@dataclass
class GeneratedWorld:
    """A generated dataset: the graph plus the generator's ground truth."""

    graph: PoseGraph
    global_poses: list[list[Pose2]]
    condition_names: list[str]
    out_dir: str


def generate_dataset(world: WorldConfig, camera: CameraModel,
                     runs: list[tuple[str, TraversalConfig]], out_dir: str, *,
                     label_noise_sigma: float = 0.0, label_seed: int = 0,
                     anchor_gate: float = 2.0, render: bool = True) -> GeneratedWorld:
    """Generate and render a full dataset.  runs[0] is the teach traversal;
    every later entry is a repeat.  Each tuple is (condition_name, config);
    the condition name becomes the keyframe tag, the config's ConditionParams
    drive rendering."""
    if not runs:
        raise ValueError("need at least the teach run")
    names = [name for name, _ in runs]
    teach = generate_teach(world, runs[0][1])
    all_poses = [teach] + [generate_repeat(teach, cfg) for _, cfg in runs[1:]]

    image_paths = None
    if render:
        image_paths = [render_run(poses, world, camera, cfg.condition, out_dir, idx)
                       for idx, (poses, (_, cfg)) in enumerate(zip(all_poses, runs))]

    graph = build_graph(teach, all_poses[1:], label_noise_sigma,
                        label_seed=label_seed, anchor_gate=anchor_gate,
                        conditions=names, image_paths=image_paths)
    graph.base_dir = out_dir
    return GeneratedWorld(graph=graph, global_poses=all_poses,
                          condition_names=names, out_dir=out_dir)
