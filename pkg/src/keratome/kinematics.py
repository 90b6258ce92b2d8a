"""Keratome blade kinematics: bounded 6-DoF deltas, rigid transforms applied
as homogeneous matrix actions, and swept-edge contact detection.

Conventions: quaternions are (w, x, y, z) and unit-norm; the tool frame has
the cutting direction along -z with the blade edge fanning back toward +z.
Pose position is the blade tip in world mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .eye import TissueLabel, VoxelGrid
from . import _kernels

# Default per-step action bounds: translation mm, rotation rad (~2 deg).
DEFAULT_TRANSLATION_BOUND = 0.1
DEFAULT_ROTATION_BOUND = 0.035

ORTHONORMAL_TOL = 1e-6


class TransformError(ValueError):
    """Raised for matrices that are not rigid transforms."""


# Quaternion helpers ---------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    return q / n

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )

def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )

def matrix_to_quat(rot: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a unit (w, x, y, z) quaternion."""
    m = np.asarray(rot, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    return quat_normalize(np.array([w, x, y, z]))


# Poses and deltas ------------------------------------------------------------

@dataclass
class ToolPose:
    position: np.ndarray     # blade tip, mm
    orientation: np.ndarray  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        self.orientation = quat_normalize(self.orientation)

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def as_vector(self) -> np.ndarray:
        """7-vector (position, quaternion) as exposed in observations."""
        return np.concatenate([self.position, self.orientation])

    def copy(self) -> "ToolPose":
        return ToolPose(self.position.copy(), self.orientation.copy())


@dataclass(frozen=True)
class ActionBounds:
    translation_mm: float = DEFAULT_TRANSLATION_BOUND
    rotation_rad: float = DEFAULT_ROTATION_BOUND

    def as_array(self) -> np.ndarray:
        t, r = self.translation_mm, self.rotation_rad
        return np.array([t, t, t, r, r, r])


@dataclass
class ActionDelta:
    """Bounded per-step motion: (dx, dy, dz) mm and (droll, dpitch, dyaw) rad."""

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    droll: float = 0.0
    dpitch: float = 0.0
    dyaw: float = 0.0

    @staticmethod
    def from_array(a) -> "ActionDelta":
        a = np.asarray(a, dtype=np.float64).reshape(6)
        return ActionDelta(*[float(v) for v in a])

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz, self.droll, self.dpitch, self.dyaw])

    def clamped(self, bounds: ActionBounds, mask: np.ndarray | None = None):
        """Returns (clamped delta, True if any component was altered)."""
        raw = self.as_array()
        lim = bounds.as_array()
        out = np.clip(raw, -lim, lim)
        if mask is not None:
            out = out * np.asarray(mask, dtype=np.float64)
        return ActionDelta.from_array(out), bool(np.any(out != raw))


def rotation_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic roll (x) -> pitch (y) -> yaw (z) rotation matrix."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rx @ ry @ rz


def delta_to_transform(delta: ActionDelta) -> np.ndarray:
    """4x4 matrix: rotate by the delta's angles, then translate by (dx,dy,dz)."""
    m = np.eye(4)
    m[:3, :3] = rotation_from_rpy(delta.droll, delta.dpitch, delta.dyaw)
    m[:3, 3] = (delta.dx, delta.dy, delta.dz)
    return m


def delta_to_transform_about(delta: ActionDelta, center: np.ndarray) -> np.ndarray:
    """Same rotation, but taken about ``center`` so a bounded delta moves the
    pivot point by at most the translation bound (no rotation lever arm)."""
    center = np.asarray(center, dtype=np.float64)
    m = delta_to_transform(delta)
    rot = m[:3, :3]
    m[:3, 3] = m[:3, 3] + center - rot @ center
    return m


def validate_transform(m: np.ndarray) -> None:
    m = np.asarray(m)
    if m.shape != (4, 4):
        raise TransformError(f"expected 4x4 matrix, got {m.shape}")
    if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
        raise TransformError("bottom row must be exactly (0,0,0,1)")
    rot = m[:3, :3]
    if not np.allclose(rot.T @ rot, np.eye(3), atol=ORTHONORMAL_TOL):
        raise TransformError("rotation block is not orthonormal")
    if np.linalg.det(rot) < 0:
        raise TransformError("rotation block has negative determinant")


def apply_transform(pose: ToolPose, m: np.ndarray) -> ToolPose:
    """p' = M p (homogeneous); orientation pre-composed with M's rotation."""
    rot = m[:3, :3]
    pos = rot @ pose.position + m[:3, 3]
    q = quat_multiply(matrix_to_quat(rot), pose.orientation)
    return ToolPose(pos, quat_normalize(q))


# Blade geometry ---------------------------------------------------------------

@dataclass
class ToolGeometry:
    """Cutting edge as an ordered polyline in the tool frame.

    Only the edge cuts. ``sample_points(spacing)`` resamples the polyline so
    swept contact checks never skip a voxel (spacing <= voxel_size / 2).
    """

    width_mm: float
    vertices: np.ndarray  # (K, 3) polyline vertices, tip first

    _cache: dict = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3 or len(self.vertices) < 2:
            raise ValueError("edge polyline needs at least two 3d vertices")
        self._cache = {}

    @staticmethod
    def keratome(width_mm: float = 2.75, edge_length_mm: float = 3.0) -> "ToolGeometry":
        """Angled V edge: tip at the origin, wings trailing toward +z."""
        half = width_mm / 2.0
        verts = np.array(
            [
                [-half, 0.0, edge_length_mm],
                [0.0, 0.0, 0.0],
                [half, 0.0, edge_length_mm],
            ]
        )
        return ToolGeometry(width_mm=width_mm, vertices=verts)

    def sample_points(self, spacing: float) -> np.ndarray:
        if spacing <= 0:
            raise ValueError("spacing must be positive")
        key = round(spacing, 12)
        if key not in self._cache:
            pts = [self.vertices[0]]
            for a, b in zip(self.vertices[:-1], self.vertices[1:]):
                seg = b - a
                length = np.linalg.norm(seg)
                n = max(1, int(math.ceil(length / spacing)))
                for i in range(1, n + 1):
                    pts.append(a + seg * (i / n))
            self._cache[key] = np.asarray(pts)
        return self._cache[key]

    def world_points(self, pose: ToolPose, spacing: float) -> np.ndarray:
        local = self.sample_points(spacing)
        return pose.position + local @ pose.rotation().T

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("# keratome edge polyline (tool frame, mm)\n")
            fh.write(f"width {float(self.width_mm)!r}\n")
            for v in self.vertices:
                fh.write(f"point {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")

    @staticmethod
    def load(path) -> "ToolGeometry":
        width = None
        verts = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if parts[0] == "width":
                    width = float(parts[1])
                elif parts[0] == "point":
                    verts.append([float(x) for x in parts[1:4]])
                else:
                    raise ValueError(f"unknown tool geometry directive {parts[0]!r}")
        if width is None or len(verts) < 2:
            raise ValueError("tool geometry file needs a width and >= 2 points")
        return ToolGeometry(width_mm=width, vertices=np.asarray(verts))

    def forward_axis(self, pose: ToolPose) -> np.ndarray:
        """World-frame cutting direction (tool -z)."""
        return pose.rotation() @ np.array([0.0, 0.0, -1.0])


# Contact detection --------------------------------------------------------------

@dataclass
class Contact:
    index: tuple[int, int, int]
    label: TissueLabel
    t: float  # sweep parameter in [0, 1] at voxel entry


@dataclass
class ContactReport:
    contacts: list  # unique Contacts ordered by sweep parameter

    def __bool__(self) -> bool:
        return bool(self.contacts)

    @property
    def indices(self) -> list:
        return [c.index for c in self.contacts]

    @property
    def labels(self) -> list:
        return [c.label for c in self.contacts]

    def first_with_label(self, label: TissueLabel):
        for c in self.contacts:
            if c.label == label:
                return c
        return None

    def any_label_other_than(self, label: TissueLabel) -> bool:
        return any(c.label != label for c in self.contacts)


def detect_contacts(
    grid: VoxelGrid, geom: ToolGeometry, prev: ToolPose, next_: ToolPose
) -> ContactReport:
    """Sweep every edge sample point along its prev->next segment and collect
    all non-removed tissue voxels crossed, ordered by sweep parameter.

    Labels are the grid's current (pre-removal for this step) labels.
    """
    spacing = grid.voxel_size / 2.0
    p0 = geom.world_points(prev, spacing)
    p1 = geom.world_points(next_, spacing)
    idx, ts = _kernels.sweep_segments(
        grid.labels, grid.removed, grid.origin, grid.voxel_size, p0, p1
    )
    if idx.shape[0] == 0:
        return ContactReport(contacts=[])
    order = np.argsort(ts, kind="stable")
    seen = set()
    contacts = []
    for k in order:
        key = (int(idx[k, 0]), int(idx[k, 1]), int(idx[k, 2]))
        if key in seen:
            continue
        seen.add(key)
        contacts.append(Contact(index=key, label=TissueLabel(int(grid.labels[key])), t=float(ts[k])))
    return ContactReport(contacts=contacts)


def tool_eye_distance(grid: VoxelGrid, geom: ToolGeometry, pose: ToolPose) -> float:
    """Min distance (mm) from the blade edge samples to live tissue centers."""
    pts = geom.world_points(pose, grid.voxel_size / 2.0)
    return grid.nearest_tissue_distance(pts)
