"""Voxelized eye model: tissue labels, sector map, incision by voxel removal.

The eye is built as a set of analytic shells/solids sampled onto a dense
voxel grid. The cornea is a spherical cap on the anterior (+z) side whose
rim meets the scleral globe at the limbus circle. Incisions remove voxels;
labels underneath are kept so contact classification can report what was cut.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

EYE_MAGIC = b"KEYE"
EYE_FORMAT_VERSION = 1


class EyeBuildError(ValueError):
    """Raised when an EyeSpec cannot be realized on its grid."""


class TissueLabel(IntEnum):
    EMPTY = 0
    CORNEA = 1
    SCLERA = 2
    IRIS = 3
    LENS = 4
    VESSEL = 5
    OPTIC_NERVE = 6


class Fidelity(IntEnum):
    LOW_POLY = 0
    HIGH_POLY = 1


class SectorId(IntEnum):
    LEFT1 = 0   # upper left band
    LEFT2 = 1   # middle left band
    LEFT3 = 2   # lower left band
    RIGHT1 = 3  # upper right band
    RIGHT2 = 4  # middle right band
    RIGHT3 = 5  # lower right band


LEFT_SECTORS = (SectorId.LEFT1, SectorId.LEFT2, SectorId.LEFT3)
RIGHT_SECTORS = (SectorId.RIGHT1, SectorId.RIGHT2, SectorId.RIGHT3)

NO_SECTOR = 255

# Azimuth wedge boundaries (radians, measured in [0, 2pi) from +x toward +y).
# The left half spans 90 degrees centered on -x; the right half covers the
# remaining 270 degrees, which yields the 1:3 left:right surface ratio.
_TWO_PI = 2.0 * np.pi
_LEFT_LO = 3.0 * np.pi / 4.0
_LEFT_HI = 5.0 * np.pi / 4.0


def sector_of_azimuth(azimuth: np.ndarray | float) -> np.ndarray:
    """Map azimuth angle(s) to SectorId values (vectorized, half-open bands)."""
    phi = np.mod(np.asarray(azimuth, dtype=np.float64), _TWO_PI)
    out = np.empty(phi.shape, dtype=np.uint8)
    left = (phi >= _LEFT_LO) & (phi < _LEFT_HI)
    # Left half: three equal 30-degree bands, upper (toward +y) first.
    band = np.clip(((phi - _LEFT_LO) / ((_LEFT_HI - _LEFT_LO) / 3.0)).astype(np.int64), 0, 2)
    out[left] = band[left].astype(np.uint8)  # LEFT1..LEFT3
    # Right half: three equal 90-degree bands. Upper band is [pi/4, 3pi/4),
    # middle straddles +x, lower is [5pi/4, 7pi/4).
    upper = (phi >= np.pi / 4.0) & (phi < 3.0 * np.pi / 4.0)
    lower = (phi >= _LEFT_HI) & (phi < 7.0 * np.pi / 4.0)
    out[upper] = SectorId.RIGHT1
    out[lower] = SectorId.RIGHT3
    middle = (phi < np.pi / 4.0) | (phi >= 7.0 * np.pi / 4.0)
    out[middle] = SectorId.RIGHT2
    return out


@dataclass(frozen=True)
class EyeSpec:
    """Build parameters for one eye. (fidelity, seed) fully determine the build."""

    fidelity: Fidelity = Fidelity.LOW_POLY
    resolution: int = 64             # voxels per axis
    voxel_size_mm: float = 0.4
    globe_radius_mm: float = 11.0
    cornea_radius_mm: float = 7.8    # curvature radius of the corneal cap
    cornea_offset_mm: float = 5.0    # cornea sphere center height on +z axis
    iris_aperture_mm: float = 2.0    # pupil radius (HighPoly)
    shell_thickness_voxels: int = 3
    vessel_count: int = 12
    seed: int = 0

    @staticmethod
    def low_poly(**overrides) -> "EyeSpec":
        return replace(EyeSpec(), **overrides)

    @staticmethod
    def high_poly(**overrides) -> "EyeSpec":
        base = EyeSpec(fidelity=Fidelity.HIGH_POLY, resolution=128, voxel_size_mm=0.2)
        return replace(base, **overrides)

    # Derived geometry -------------------------------------------------

    @property
    def limbus_z_mm(self) -> float:
        """z of the circle where the corneal cap sphere meets the globe sphere."""
        rg, rc, zc = self.globe_radius_mm, self.cornea_radius_mm, self.cornea_offset_mm
        return (rg * rg - rc * rc + zc * zc) / (2.0 * zc)

    @property
    def cap_half_angle_rad(self) -> float:
        """Polar half-angle of the corneal cap about its own sphere center."""
        return float(np.arccos((self.limbus_z_mm - self.cornea_offset_mm) / self.cornea_radius_mm))

    def validate(self) -> None:
        if self.resolution < 16:
            raise EyeBuildError(f"resolution {self.resolution} < 16")
        if self.voxel_size_mm <= 0:
            raise EyeBuildError("voxel_size_mm must be positive")
        for name in ("globe_radius_mm", "cornea_radius_mm", "cornea_offset_mm", "iris_aperture_mm"):
            if getattr(self, name) <= 0:
                raise EyeBuildError(f"{name} must be positive")
        if self.cornea_offset_mm + self.cornea_radius_mm <= self.globe_radius_mm:
            raise EyeBuildError("cornea cap does not protrude from the globe")
        if self.shell_thickness_voxels < 2:
            raise EyeBuildError("shell thickness must be >= 2 voxels")
        half_extent = self.resolution * self.voxel_size_mm / 2.0
        if self.globe_radius_mm >= half_extent:
            raise EyeBuildError("globe does not fit inside the grid")
        # The shell must be resolvable: at least 2 voxels across.
        if self.shell_thickness_voxels * self.voxel_size_mm < 2 * self.voxel_size_mm:
            raise EyeBuildError("cornea shell thinner than 2 voxels")


class VoxelGrid:
    """Dense labeled voxel grid with monotone removal.

    Axes are (x, y, z); world position of voxel center (i, j, k) is
    ``origin + (i + 0.5, j + 0.5, k + 0.5) * voxel_size``. Removed voxels
    report EMPTY but keep their underlying label for pre-removal queries.
    """

    def __init__(self, dims, voxel_size_mm: float, origin_mm, labels: np.ndarray):
        self.dims = tuple(int(d) for d in dims)
        self.voxel_size = float(voxel_size_mm)
        self.origin = np.asarray(origin_mm, dtype=np.float64).copy()
        if labels.shape != self.dims:
            raise ValueError(f"labels shape {labels.shape} != dims {self.dims}")
        self.labels = np.ascontiguousarray(labels, dtype=np.uint8)
        self.removed = np.zeros(self.dims, dtype=bool)
        self.removed_count = 0
        self.version = 0  # bumped on any mutation; lets renderers cache safely
        self._tissue_tree = None
        self._tissue_index = None

    # Geometry ---------------------------------------------------------

    def voxel_center(self, index) -> np.ndarray:
        return self.origin + (np.asarray(index, dtype=np.float64) + 0.5) * self.voxel_size

    def world_to_index(self, point_mm) -> tuple[int, int, int]:
        idx = np.floor((np.asarray(point_mm, dtype=np.float64) - self.origin) / self.voxel_size)
        return tuple(int(v) for v in idx)

    def in_bounds(self, index) -> bool:
        return all(0 <= index[a] < self.dims[a] for a in range(3))

    @property
    def extent_mm(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=np.float64) * self.voxel_size

    # Labels and removal -----------------------------------------------

    def label_at(self, index) -> TissueLabel:
        if not self.in_bounds(index):
            raise IndexError(f"voxel index {index} out of bounds {self.dims}")
        if self.removed[index]:
            return TissueLabel.EMPTY
        return TissueLabel(int(self.labels[index]))

    def raw_label_at(self, index) -> TissueLabel:
        """Label ignoring removal (the tissue that was there originally)."""
        if not self.in_bounds(index):
            raise IndexError(f"voxel index {index} out of bounds {self.dims}")
        return TissueLabel(int(self.labels[index]))

    def effective_labels(self) -> np.ndarray:
        """Label array with removed voxels reported as EMPTY."""
        out = self.labels.copy()
        out[self.removed] = TissueLabel.EMPTY
        return out

    def remove_voxels(self, indices) -> int:
        """Remove voxels; already-removed or EMPTY indices are no-ops.

        Returns the count of newly removed tissue voxels.
        """
        newly = 0
        for index in indices:
            index = tuple(int(v) for v in index)
            if not self.in_bounds(index):
                raise IndexError(f"voxel index {index} out of bounds {self.dims}")
            if self.labels[index] == TissueLabel.EMPTY or self.removed[index]:
                continue
            self.removed[index] = True
            newly += 1
        if newly:
            self.removed_count += newly
            self.version += 1
        return newly

    def count_label(self, label: TissueLabel, include_removed: bool = False) -> int:
        mask = self.labels == int(label)
        if not include_removed:
            mask &= ~self.removed
        return int(mask.sum())

    def restore_pristine(self) -> None:
        """Reset all removals (episode lifecycle; labels are immutable)."""
        self.removed[...] = False
        self.removed_count = 0
        self.version += 1

    # Spatial queries ----------------------------------------------------

    def _ensure_tree(self):
        if self._tissue_tree is None:
            from scipy.spatial import cKDTree

            occ = np.argwhere(self.labels != TissueLabel.EMPTY)
            if occ.shape[0] == 0:
                raise ValueError("grid has no tissue voxels")
            pts = self.origin + (occ.astype(np.float64) + 0.5) * self.voxel_size
            self._tissue_tree = cKDTree(pts)
            self._tissue_index = occ
        return self._tissue_tree, self._tissue_index

    def nearest_tissue_distance(self, points_mm: np.ndarray) -> float:
        """Min distance from any query point to a non-removed tissue voxel center."""
        tree, occ = self._ensure_tree()
        pts = np.atleast_2d(np.asarray(points_mm, dtype=np.float64))
        n = occ.shape[0]
        # fast path: nearest neighbor, escalating k only where removal interferes
        dist, idx = tree.query(pts, k=1)
        vi = occ[idx]
        alive = ~self.removed[vi[:, 0], vi[:, 1], vi[:, 2]]
        best = dist[alive].min() if alive.any() else np.inf
        stale = np.flatnonzero(~alive)
        if stale.size:
            k = 8
            while True:
                d2, i2 = tree.query(pts[stale], k=min(k, n))
                d2 = np.atleast_2d(d2)
                i2 = np.atleast_2d(i2)
                vi2 = occ[i2.reshape(-1)].reshape(i2.shape + (3,))
                alive2 = ~self.removed[vi2[..., 0], vi2[..., 1], vi2[..., 2]]
                if alive2.any(axis=1).all() or k >= n:
                    if not alive2.any() and np.isinf(best):
                        raise ValueError("all tissue voxels removed")
                    d2 = np.where(alive2, d2, np.inf)
                    best = min(best, float(d2.min()))
                    break
                k *= 4
        return float(best)

    def copy(self) -> "VoxelGrid":
        g = VoxelGrid(self.dims, self.voxel_size, self.origin, self.labels.copy())
        g.removed = self.removed.copy()
        g.removed_count = self.removed_count
        return g


@dataclass
class SectorMap:
    """Per-voxel sector assignment over cornea voxels plus the surface mask.

    ``sector`` holds a SectorId for every cornea voxel and NO_SECTOR (255)
    elsewhere; the left:right ratio invariant is counted over ``surface``.
    """

    sector: np.ndarray          # uint8, NO_SECTOR where not cornea
    surface: np.ndarray         # bool, outermost cornea shell layer
    counts: dict = field(default_factory=dict)

    def classify(self, index) -> SectorId | None:
        if not all(0 <= index[a] < self.sector.shape[a] for a in range(3)):
            raise IndexError(f"voxel index {index} out of bounds {self.sector.shape}")
        value = int(self.sector[tuple(index)])
        return None if value == NO_SECTOR else SectorId(value)

    def surface_counts(self) -> dict:
        out = {}
        for sid in SectorId:
            out[sid] = int(((self.sector == int(sid)) & self.surface).sum())
        return out

    def left_right_surface_fractions(self) -> tuple[float, float]:
        counts = self.surface_counts()
        left = sum(counts[s] for s in LEFT_SECTORS)
        right = sum(counts[s] for s in RIGHT_SECTORS)
        total = left + right
        if total == 0:
            raise ValueError("sector map has no surface voxels")
        return left / total, right / total


def in_half(sector: SectorId, half: str) -> bool:
    if half not in ("Left", "Right"):
        raise ValueError(f"unknown half {half!r}")
    return sector in LEFT_SECTORS if half == "Left" else sector in RIGHT_SECTORS


def sector_center_azimuth(sector: SectorId) -> float:
    """Central azimuth (radians) of a sector's angular band."""
    left_band = (_LEFT_HI - _LEFT_LO) / 3.0
    centers = {
        SectorId.LEFT1: _LEFT_LO + 0.5 * left_band,
        SectorId.LEFT2: _LEFT_LO + 1.5 * left_band,
        SectorId.LEFT3: _LEFT_LO + 2.5 * left_band,
        SectorId.RIGHT1: np.pi / 2.0,
        SectorId.RIGHT2: 0.0,
        SectorId.RIGHT3: 3.0 * np.pi / 2.0,
    }
    return float(centers[sector])


def build_eye(spec: EyeSpec) -> tuple[VoxelGrid, SectorMap]:
    """Construct the labeled voxel eye and its cornea sector map.

    Deterministic for a given (spec, seed): the only randomness is the
    vessel layout, drawn from a generator seeded with spec.seed.
    """
    spec.validate()
    n = spec.resolution
    vs = spec.voxel_size_mm
    origin = np.full(3, -n * vs / 2.0)
    axis = (np.arange(n, dtype=np.float64) + 0.5) * vs + origin[0]
    X, Y, Z = np.meshgrid(axis, axis, axis, indexing="ij")

    rg, rc, zc = spec.globe_radius_mm, spec.cornea_radius_mm, spec.cornea_offset_mm
    thickness = spec.shell_thickness_voxels * vs
    z_l = spec.limbus_z_mm
    cos_cap = np.cos(spec.cap_half_angle_rad)

    r_globe = np.sqrt(X * X + Y * Y + Z * Z)
    r_cap = np.sqrt(X * X + Y * Y + (Z - zc) ** 2)

    labels = np.zeros((n, n, n), dtype=np.uint8)

    sclera = (r_globe <= rg) & (r_globe >= rg - thickness) & (Z <= z_l)
    labels[sclera] = TissueLabel.SCLERA

    with np.errstate(invalid="ignore", divide="ignore"):
        cos_polar = np.where(r_cap > 0, (Z - zc) / np.maximum(r_cap, 1e-12), 1.0)
    cornea = (r_cap <= rc) & (r_cap >= rc - thickness) & (cos_polar >= cos_cap)
    labels[cornea] = TissueLabel.CORNEA

    if spec.fidelity == Fidelity.HIGH_POLY:
        rho = np.sqrt(X * X + Y * Y)
        rho_limbus = float(np.sqrt(max(rg * rg - z_l * z_l, 0.0)))
        iris_top = z_l - 0.5
        iris_thickness = max(2 * vs, 0.4)
        iris = (
            (Z <= iris_top)
            & (Z >= iris_top - iris_thickness)
            & (rho >= spec.iris_aperture_mm)
            & (rho <= rho_limbus)
            & (labels == TissueLabel.EMPTY)
        )
        labels[iris] = TissueLabel.IRIS

        lens_a, lens_c = 4.5, 2.0
        z_lens = iris_top - iris_thickness - lens_c - 0.2
        lens = ((X / lens_a) ** 2 + (Y / lens_a) ** 2 + ((Z - z_lens) / lens_c) ** 2) <= 1.0
        lens &= labels == TissueLabel.EMPTY
        labels[lens] = TissueLabel.LENS

        rng = np.random.default_rng(spec.seed)
        vessel_halfwidth = 1.2 * vs
        for _ in range(spec.vessel_count):
            normal = rng.normal(size=3)
            normal /= np.linalg.norm(normal)
            plane_dist = np.abs(X * normal[0] + Y * normal[1] + Z * normal[2])
            arc = (
                (plane_dist <= vessel_halfwidth)
                & (labels == TissueLabel.SCLERA)
                & (Z <= z_l - 1.0)
            )
            labels[arc] = TissueLabel.VESSEL

        nerve_radius = 1.5
        nerve = (rho <= nerve_radius) & (Z <= -(rg - thickness - 0.5)) & (r_globe <= rg + 2.0)
        nerve &= (labels == TissueLabel.SCLERA) | (labels == TissueLabel.VESSEL) | (
            (labels == TissueLabel.EMPTY) & (r_globe >= rg - thickness)
        )
        labels[nerve] = TissueLabel.OPTIC_NERVE

    cornea_mask = labels == TissueLabel.CORNEA
    if not cornea_mask.any():
        raise EyeBuildError("build produced no cornea voxels")
    if int(cornea_mask.sum()) < 8:
        raise EyeBuildError("resolution too small to resolve the cornea shell")

    sector = np.full((n, n, n), NO_SECTOR, dtype=np.uint8)
    azimuth = np.arctan2(Y[cornea_mask], X[cornea_mask])
    sector[cornea_mask] = sector_of_azimuth(azimuth)

    surface = cornea_mask & (r_cap >= rc - vs)
    if not surface.any():
        raise EyeBuildError("cornea shell has no surface layer")

    grid = VoxelGrid((n, n, n), vs, origin, labels)
    smap = SectorMap(sector=sector, surface=surface)
    smap.counts = smap.surface_counts()
    return grid, smap


def cornea_center(grid: VoxelGrid) -> np.ndarray:
    """Arithmetic mean (mm) of non-removed cornea voxel centers."""
    mask = (grid.labels == TissueLabel.CORNEA) & ~grid.removed
    idx = np.argwhere(mask)
    if idx.shape[0] == 0:
        raise ValueError("no cornea voxels remain")
    centers = grid.origin + (idx.astype(np.float64) + 0.5) * grid.voxel_size
    return centers.mean(axis=0)


# Versioned binary container ------------------------------------------------
# Layout (little-endian): magic 'KEYE', u32 version, u32 dims[3], f64 voxel
# size, f64 origin[3], u8 fidelity, u64 seed, then labels (u8, C order),
# sector (u8, C order), surface (u8, C order). Documented in docs/formats.md.

_HEADER = struct.Struct("<4sI3Id3dBQ")


def save_eye(path, spec: EyeSpec, grid: VoxelGrid, smap: SectorMap) -> None:
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                EYE_MAGIC,
                EYE_FORMAT_VERSION,
                *grid.dims,
                grid.voxel_size,
                *grid.origin,
                int(spec.fidelity),
                spec.seed,
            )
        )
        fh.write(grid.labels.tobytes(order="C"))
        fh.write(smap.sector.tobytes(order="C"))
        fh.write(smap.surface.astype(np.uint8).tobytes(order="C"))


def load_eye(path) -> tuple[VoxelGrid, SectorMap, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    head = _HEADER.unpack(buf.read(_HEADER.size))
    magic, version = head[0], head[1]
    if magic != EYE_MAGIC:
        raise ValueError("not an eye container (bad magic)")
    if version != EYE_FORMAT_VERSION:
        raise ValueError(f"unsupported eye container version {version}")
    dims = head[2:5]
    voxel_size = head[5]
    origin = np.array(head[6:9])
    fidelity = Fidelity(head[9])
    seed = head[10]
    count = dims[0] * dims[1] * dims[2]
    labels = np.frombuffer(buf.read(count), dtype=np.uint8).reshape(dims).copy()
    sector = np.frombuffer(buf.read(count), dtype=np.uint8).reshape(dims).copy()
    surface = np.frombuffer(buf.read(count), dtype=np.uint8).reshape(dims).astype(bool)
    grid = VoxelGrid(dims, voxel_size, origin, labels)
    smap = SectorMap(sector=sector, surface=surface)
    smap.counts = smap.surface_counts()
    meta = {"fidelity": fidelity, "seed": seed}
    return grid, smap, meta
