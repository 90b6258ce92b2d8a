"""Three-camera software renderer over the voxel scene.

Each pixel ray-marches the grid front-to-back; the first non-removed tissue
voxel shades the pixel from a fixed per-tissue palette (flat shading). The
blade edge is rasterized afterward in a reserved color, depth-tested against
the voxel hits so tissue correctly occludes the tool.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .eye import VoxelGrid
from .kinematics import ToolGeometry, ToolPose, tool_eye_distance

# Flat-shading palette. Grayscale values keep every layer discriminable in
# C=1 mode; the tool color is reserved (never used by tissue).
GRAY_PALETTE = np.array([0.0, 0.55, 0.35, 0.75, 0.90, 0.20, 0.12])
RGB_PALETTE = np.array(
    [
        [0.0, 0.0, 0.0],        # empty / background
        [0.60, 0.75, 0.85],     # cornea
        [0.80, 0.78, 0.72],     # sclera
        [0.35, 0.50, 0.30],     # iris
        [0.90, 0.90, 0.75],     # lens
        [0.70, 0.15, 0.15],     # vessel
        [0.90, 0.75, 0.30],     # optic nerve
    ]
)
TOOL_GRAY = 1.0
TOOL_RGB = np.array([1.0, 0.2, 1.0])

CAMERA_NAMES = ("Top", "UpperSide", "UpperCorner")


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    fov_deg: float = 50.0
    width: int = 32
    height: int = 32

    _rays: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        if self.width < 8 or self.height < 8:
            raise ValueError("camera resolution must be >= 8x8")
        if not 10.0 < self.fov_deg < 120.0:
            raise ValueError("vertical fov must be in (10, 120) degrees")
        self._rays = None

    def basis(self):
        forward = self.look_at - self.position
        forward = forward / np.linalg.norm(forward)
        up_hint = np.array([0.0, 1.0, 0.0])
        if abs(np.dot(forward, up_hint)) > 0.99:
            up_hint = np.array([1.0, 0.0, 0.0])
        right = np.cross(forward, up_hint)
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        return forward, right, up

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions, shape (H*W, 3), row-major from the top row."""
        if self._rays is None:
            forward, right, up = self.basis()
            tan_half = math.tan(math.radians(self.fov_deg) / 2.0)
            aspect = self.width / self.height
            xs = (np.arange(self.width) + 0.5) / self.width * 2.0 - 1.0
            ys = 1.0 - (np.arange(self.height) + 0.5) / self.height * 2.0
            u, v = np.meshgrid(xs * tan_half * aspect, ys * tan_half, indexing="xy")
            dirs = (
                forward[None, None, :]
                + u[..., None] * right[None, None, :]
                + v[..., None] * up[None, None, :]
            )
            dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
            self._rays = dirs.reshape(-1, 3)
        return self._rays

    def project(self, points: np.ndarray):
        """Project world points to (col, row, distance); off-screen rows < 0."""
        forward, right, up = self.basis()
        rel = points - self.position
        depth = rel @ forward
        tan_half = math.tan(math.radians(self.fov_deg) / 2.0)
        aspect = self.width / self.height
        with np.errstate(divide="ignore", invalid="ignore"):
            x_ndc = (rel @ right) / (depth * tan_half * aspect)
            y_ndc = (rel @ up) / (depth * tan_half)
        col = ((x_ndc + 1.0) / 2.0 * self.width).astype(np.int64)
        row = ((1.0 - y_ndc) / 2.0 * self.height).astype(np.int64)
        visible = (
            (depth > 1e-6)
            & (col >= 0)
            & (col < self.width)
            & (row >= 0)
            & (row < self.height)
        )
        dist = np.linalg.norm(rel, axis=-1)
        return col, row, dist, visible


@dataclass
class CameraRig:
    top: Camera
    upper_side: Camera
    upper_corner: Camera

    def cameras(self):
        return (self.top, self.upper_side, self.upper_corner)


def default_rig(
    center: np.ndarray,
    cornea_radius_mm: float,
    width: int = 32,
    height: int = 32,
    fov_deg: float = 50.0,
    distance_factor: float = 3.0,
) -> CameraRig:
    """Top / upper-side / upper-corner viewpoints aimed at the cornea center."""
    center = np.asarray(center, dtype=np.float64)
    d = distance_factor * cornea_radius_mm
    e = math.radians(45.0)
    top = Camera(center + [0, 0, d], center, fov_deg, width, height)
    side = Camera(center + [d * math.cos(e), 0.0, d * math.sin(e)], center, fov_deg, width, height)
    diag = d * math.cos(e) / math.sqrt(2.0)
    corner = Camera(center + [diag, diag, d * math.sin(e)], center, fov_deg, width, height)
    return CameraRig(top=top, upper_side=side, upper_corner=corner)


def render(
    grid: VoxelGrid,
    camera: Camera,
    geom: ToolGeometry | None = None,
    pose: ToolPose | None = None,
    channels: int = 1,
) -> np.ndarray:
    """Render one frame (H, W, C). Values in [0, 1]; deterministic."""
    if channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    dirs = camera.ray_directions()
    # Tissue hits depend only on (grid state, camera); cache them against the
    # grid's mutation counter so steps without removal skip the ray march.
    key = (id(grid), grid.version)
    cached = getattr(camera, "_hit_cache", None)
    if cached is not None and cached[0] == key:
        hit_label, hit_t = cached[1], cached[2]
    else:
        origins = np.broadcast_to(camera.position, dirs.shape)
        hit_label, hit_t = _kernels.trace_rays(
            grid.labels, grid.removed, grid.origin, grid.voxel_size, origins, dirs
        )
        camera._hit_cache = (key, hit_label, hit_t)
    if channels == 1:
        flat = GRAY_PALETTE[hit_label][:, None]
    else:
        flat = RGB_PALETTE[hit_label]
    frame = flat.reshape(camera.height, camera.width, channels).copy()

    if geom is not None and pose is not None:
        pts = geom.world_points(pose, grid.voxel_size / 2.0)
        col, row, dist, visible = camera.project(pts)
        depth = np.where(hit_t < 0, np.inf, hit_t).reshape(camera.height, camera.width)
        col, row, dist = col[visible], row[visible], dist[visible]
        in_front = dist <= depth[row, col]
        frame[row[in_front], col[in_front]] = TOOL_GRAY if channels == 1 else TOOL_RGB
    return frame


@dataclass(frozen=True)
class ObservationConfig:
    width: int = 32
    height: int = 32
    channels: int = 1
    fov_deg: float = 50.0
    camera_distance_factor: float = 3.0

    @property
    def frame_length(self) -> int:
        return self.width * self.height * self.channels

    @property
    def flat_length(self) -> int:
        return 3 * self.frame_length + 7 + 1

    def config_hash(self) -> str:
        payload = json.dumps(
            {
                "width": self.width,
                "height": self.height,
                "channels": self.channels,
                "fov_deg": self.fov_deg,
                "camera_distance_factor": self.camera_distance_factor,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @staticmethod
    def paper_reference() -> "ObservationConfig":
        # full-color mode: three 128x128x3 camera frames
        return ObservationConfig(width=128, height=128, channels=3)


@dataclass
class Observation:
    frames: tuple           # 3 arrays (H, W, C)
    tool_state: np.ndarray  # 7-vector: position + quaternion
    distance: float

    def flatten(self) -> np.ndarray:
        parts = [f.ravel() for f in self.frames]
        parts.append(self.tool_state)
        parts.append(np.array([self.distance]))
        return np.concatenate(parts)


def assemble_observation(
    grid: VoxelGrid,
    geom: ToolGeometry,
    pose: ToolPose,
    rig: CameraRig,
    config: ObservationConfig,
) -> Observation:
    frames = tuple(
        render(grid, cam, geom, pose, channels=config.channels) for cam in rig.cameras()
    )
    distance = tool_eye_distance(grid, geom, pose)
    return Observation(frames=frames, tool_state=pose.as_vector(), distance=distance)
