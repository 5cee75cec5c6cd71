"""Procedural stereo rendering for the synthetic teach-and-repeat world.

Each keyframe image is produced by ray-casting a textured ground plane from a
pinhole camera and painting landmark sprites (colored vertical discs placed
near the path) with painter's-algorithm depth ordering.  Appearance is
controlled by a small set of condition parameters: illumination scales scene
brightness, season blends the terrain palette from snow to green, headlights
add a radial beam mask, sun flare adds a saturated bloom, and pixel noise is
drawn from a seed derived deterministically from the pose and world seed.

Frames: the robot x axis points forward, y left, z up.  The camera sits
`mount_height` above the ground at the robot origin, optical axis along +x.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import Pose2


@dataclass(frozen=True)
class CameraModel:
    """Pinhole stereo rig; the right camera is the left one translated by
    `baseline` along the camera's right (robot -y) axis."""

    focal: float = 100.0
    cx: float = 64.0
    cy: float = 48.0
    baseline: float = 0.24
    width: int = 128
    height: int = 96
    mount_height: float = 0.55

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if self.baseline <= 0:
            raise ValueError("stereo baseline must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    @staticmethod
    def sized(width: int, height: int, fov_deg: float = 65.0,
              baseline: float = 0.24, mount_height: float = 0.55) -> "CameraModel":
        focal = width / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
        return CameraModel(focal=focal, cx=width / 2.0, cy=height / 2.0,
                           baseline=baseline, width=width, height=height,
                           mount_height=mount_height)


@dataclass(frozen=True)
class ConditionParams:
    """Appearance knobs for one traversal.

    illumination: 0 = night, 1 = bright day.
    season: 0 = full snow cover, 1 = green growth.
    """

    illumination: float = 0.85
    season: float = 0.5
    headlights: bool = False
    sun_flare: bool = False
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.illumination <= 1.0:
            raise ValueError(f"illumination must be in [0,1], got {self.illumination}")
        if not 0.0 <= self.season <= 1.0:
            raise ValueError(f"season must be in [0,1], got {self.season}")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class Landmark:
    x: float
    y: float
    z: float          # center height above ground
    radius: float     # sprite radius in meters
    color: tuple[float, float, float]


def stable_seed(*parts) -> int:
    """Deterministic 64-bit seed from a mixed tuple of ints/floats/strings.

    Independent of Python hash randomization and platform, so renders are
    bit-identical across processes.
    """
    buf = bytearray()
    for p in parts:
        if isinstance(p, bool):
            buf += b"b" + (b"\x01" if p else b"\x00")
        elif isinstance(p, int):
            buf += b"i" + p.to_bytes(16, "little", signed=True)
        elif isinstance(p, float):
            buf += b"f" + struct.pack("<d", p)
        elif isinstance(p, str):
            buf += b"s" + p.encode()
        else:
            raise TypeError(f"cannot seed from {type(p)}")
    return int.from_bytes(hashlib.blake2b(bytes(buf), digest_size=8).digest(), "little")


def _lattice_hash(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Pseudo-random values in [0,1) on the integer lattice."""
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(x: np.ndarray, y: np.ndarray, seed: int, octaves: int = 3,
                base_freq: float = 2.0) -> np.ndarray:
    """Smooth multi-octave value noise in [0,1] over world coordinates (meters)."""
    out = np.zeros_like(x, dtype=np.float64)
    amp_total = 0.0
    for o in range(octaves):
        freq = base_freq * (2.0**o)
        amp = 0.5**o
        fx = x * freq
        fy = y * freq
        ix = np.floor(fx).astype(np.int64)
        iy = np.floor(fy).astype(np.int64)
        tx = fx - ix
        ty = fy - iy
        # smoothstep for C1 continuity
        tx = tx * tx * (3.0 - 2.0 * tx)
        ty = ty * ty * (3.0 - 2.0 * ty)
        oseed = seed + 101 * o
        v00 = _lattice_hash(ix, iy, oseed)
        v10 = _lattice_hash(ix + 1, iy, oseed)
        v01 = _lattice_hash(ix, iy + 1, oseed)
        v11 = _lattice_hash(ix + 1, iy + 1, oseed)
        out += amp * ((v00 * (1 - tx) + v10 * tx) * (1 - ty)
                      + (v01 * (1 - tx) + v11 * tx) * ty)
        amp_total += amp
    return out / amp_total


def camera_position(pose: Pose2, camera: CameraModel, eye: str) -> np.ndarray:
    """World position of the optical center for eye 'left' or 'right'."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    p = np.array([pose.x, pose.y, camera.mount_height])
    if eye == "right":
        # camera right axis is robot -y
        p[0] += camera.baseline * s
        p[1] += -camera.baseline * c
    elif eye != "left":
        raise ValueError(f"eye must be 'left' or 'right', got {eye!r}")
    return p


def project_point(pose: Pose2, camera: CameraModel, point: np.ndarray,
                  eye: str = "left") -> tuple[float, float, float] | None:
    """Project a world point (x, y, z) into the image; returns (u, v, depth)
    or None when behind the camera."""
    cp = camera_position(pose, camera, eye)
    d = np.asarray(point, dtype=np.float64) - cp
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    forward = d[0] * c + d[1] * s            # camera z
    right = d[0] * s - d[1] * c              # camera x
    down = -d[2]                             # camera y
    if forward <= 1e-6:
        return None
    u = camera.cx + camera.focal * right / forward
    v = camera.cy + camera.focal * down / forward
    return (u, v, forward)


def _terrain_palette(world, season: float) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array(world.snow_rgb) * (1 - season) + np.array(world.bare_rgb) * season
    hi = np.array(world.snow_rgb) * (1 - season) + np.array(world.green_rgb) * season
    return lo, hi


def render_view(pose: Pose2, world, camera: CameraModel,
                condition: ConditionParams, eye: str = "left") -> np.ndarray:
    """Render one eye as float64 HxWx3 in [0,1] before quantization."""
    H, W = camera.height, camera.width
    img = np.zeros((H, W, 3), dtype=np.float64)

    cp = camera_position(pose, camera, eye)
    c, s = math.cos(pose.theta), math.sin(pose.theta)

    # sky: simple vertical gradient
    vv = np.arange(H, dtype=np.float64)
    sky_t = np.clip((camera.cy - vv) / max(camera.cy, 1.0), 0.0, 1.0)
    sky = 0.45 + 0.35 * sky_t
    img[:, :, 0] = sky[:, None] * 0.85
    img[:, :, 1] = sky[:, None] * 0.92
    img[:, :, 2] = sky[:, None] * 1.0

    # ground plane by inverse ray casting (rows strictly below the horizon)
    v0 = int(math.floor(camera.cy)) + 1
    if v0 < H:
        vs = np.arange(v0, H, dtype=np.float64)
        us = np.arange(W, dtype=np.float64)
        uu, vv2 = np.meshgrid(us, vs)
        t = camera.mount_height * camera.focal / (vv2 - camera.cy)  # ray length scale
        rx = (uu - camera.cx) / camera.focal                          # camera-right coefficient
        # world direction: forward + rx * right  (unit forward component)
        wx = cp[0] + t * (c + rx * s)
        wy = cp[1] + t * (s - rx * c)
        tex = value_noise(wx, wy, world.texture_seed, octaves=3, base_freq=1.7)
        # remap texture to sharpen ground contrast
        tex = np.clip(0.5 + 1.4 * (tex - 0.5), 0.0, 1.0)
        lo, hi = _terrain_palette(world, condition.season)
        ground = lo[None, None, :] + tex[:, :, None] * (hi - lo)[None, None, :]
        # mild distance attenuation so the far field stays readable
        fade = 1.0 / (1.0 + 0.02 * t)
        img[v0:, :, :] = ground * fade[:, :, None]

    # landmarks, far to near
    projected = []
    for lm in world.landmarks():
        pr = project_point(pose, camera, np.array([lm.x, lm.y, lm.z]), eye)
        if pr is None:
            continue
        u, v, depth = pr
        r_px = camera.focal * lm.radius / depth
        if u + r_px < 0 or u - r_px >= W or v + r_px < 0 or v - r_px >= H or r_px < 0.3:
            continue
        projected.append((depth, u, v, r_px, lm))
    projected.sort(key=lambda e: -e[0])
    for depth, u, v, r_px, lm in projected:
        x0 = max(int(u - r_px - 1), 0)
        x1 = min(int(u + r_px + 2), W)
        y0 = max(int(v - r_px - 1), 0)
        y1 = min(int(v + r_px + 2), H)
        if x0 >= x1 or y0 >= y1:
            continue
        px, py = np.meshgrid(np.arange(x0, x1, dtype=np.float64),
                             np.arange(y0, y1, dtype=np.float64))
        d2 = (px - u) ** 2 + (py - v) ** 2
        mask = d2 <= r_px**2
        if not mask.any():
            continue
        shade = 1.0 - 0.35 * np.sqrt(np.clip(d2, 0.0, r_px**2)) / max(r_px, 1e-9)
        patch = img[y0:y1, x0:x1, :]
        color = np.array(lm.color)
        for ch in range(3):
            patch[:, :, ch] = np.where(mask, color[ch] * shade, patch[:, :, ch])

    # illumination scaling
    gain = 0.06 + 0.94 * condition.illumination
    img *= gain

    if condition.headlights:
        us = np.arange(W, dtype=np.float64)
        vs = np.arange(H, dtype=np.float64)
        uu, vv2 = np.meshgrid(us, vs)
        r2 = ((uu - camera.cx) / (0.45 * W)) ** 2 + ((vv2 - 0.75 * H) / (0.45 * H)) ** 2
        beam = np.exp(-r2)
        img *= (1.0 + 2.5 * (1.0 - condition.illumination) * beam)[:, :, None]

    if condition.sun_flare:
        us = np.arange(W, dtype=np.float64)
        vs = np.arange(H, dtype=np.float64)
        uu, vv2 = np.meshgrid(us, vs)
        fcx = 0.3 * W + 0.4 * W * ((world.texture_seed * 2654435761) % 1000) / 1000.0
        r2 = ((uu - fcx) / (0.22 * W)) ** 2 + ((vv2 - 0.2 * H) / (0.22 * H)) ** 2
        bloom = np.exp(-r2)
        img += 0.9 * bloom[:, :, None] * np.array([1.0, 0.97, 0.88])[None, None, :]

    if condition.noise_sigma > 0:
        seed = stable_seed(world.texture_seed, pose.x, pose.y, pose.theta,
                           condition.illumination, condition.season,
                           condition.headlights, condition.sun_flare,
                           condition.noise_sigma, eye)
        noise_rng = np.random.default_rng(seed)
        img += noise_rng.normal(0.0, condition.noise_sigma, size=img.shape)

    return np.clip(img, 0.0, 1.0)


def render_stereo(pose: Pose2, world, camera: CameraModel,
                  condition: ConditionParams) -> tuple[np.ndarray, np.ndarray]:
    """Render the stereo pair for a global pose; returns (left, right) as
    uint8 HxWx3 arrays.  Deterministic in all arguments."""
    left = render_view(pose, world, camera, condition, "left")
    right = render_view(pose, world, camera, condition, "right")
    to8 = lambda a: (a * 255.0 + 0.5).astype(np.uint8)
    return to8(left), to8(right)


def save_png(image: np.ndarray, path: str) -> None:
    from PIL import Image

    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def load_png(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))
