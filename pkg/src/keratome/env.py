"""Incision-task episode environment.

Implements the partially observable decision process: bounded 6-DoF actions
move the blade, swept contacts are classified against the active fidelity's
rules, and the per-step reward follows the four-case piecewise scheme
(correct-tissue hit, incision completed, forbidden hit, shaping). Only the
rendered Observation is exposed to the agent; grid and counters stay hidden.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict, replace
from enum import IntEnum

import numpy as np

from .eye import (
    EyeSpec,
    Fidelity,
    SectorId,
    SectorMap,
    TissueLabel,
    VoxelGrid,
    build_eye,
    cornea_center,
)
from .kinematics import (
    ActionBounds,
    ActionDelta,
    ToolGeometry,
    ToolPose,
    apply_transform,
    delta_to_transform_about,
    detect_contacts,
    matrix_to_quat,
)
from .rendering import Observation, ObservationConfig, assemble_observation, default_rig


class EnvError(RuntimeError):
    """Contract violations: stepping terminal episodes, invalid configs."""


class StepEvent(IntEnum):
    SHAPING = 0
    CORRECT_HIT = 1
    SUCCESS = 2
    FAIL = 3
    TIMEOUT = 4


class HitClass(IntEnum):
    NONE = 0
    CORRECT = 1
    WRONG = 2


# Axis masks: the simple task restricts rotation to the approach (z) axis.
LOW_POLY_AXIS_MASK = (1, 1, 1, 0, 0, 1)
HIGH_POLY_AXIS_MASK = (1, 1, 1, 1, 1, 1)


@dataclass(frozen=True)
class TechniqueRules:
    """Entry-technique constraints enforced in the complex task only."""

    rim_band_fraction: float = 0.2     # outer fraction of the cap's angular radius
    max_entry_angle_deg: float = 35.0  # blade axis deviation from the tangent plane


@dataclass(frozen=True)
class EnvConfig:
    fidelity: Fidelity = Fidelity.LOW_POLY
    eye: EyeSpec = field(default_factory=EyeSpec.low_poly)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    technique: TechniqueRules = field(default_factory=TechniqueRules)
    bounds: ActionBounds = field(default_factory=ActionBounds)
    reward_correct: float = 0.1
    reward_success: float = 10.0
    reward_fail: float = -10.0
    k_time: float = 0.001
    beta: int = 20
    gamma: float = 0.99
    max_steps: int = 500
    axis_mask: tuple = LOW_POLY_AXIS_MASK
    start_shell: tuple = (2.0, 3.0)    # start radius in multiples of cornea radius

    @staticmethod
    def low_poly(**overrides) -> "EnvConfig":
        return replace(EnvConfig(), **overrides)

    @staticmethod
    def high_poly(**overrides) -> "EnvConfig":
        base = EnvConfig(
            fidelity=Fidelity.HIGH_POLY,
            eye=EyeSpec.high_poly(),
            axis_mask=HIGH_POLY_AXIS_MASK,
        )
        return replace(base, **overrides)

    def validate(self) -> None:
        if not (self.reward_success > self.reward_correct > 0 > self.reward_fail):
            raise EnvError("need reward_success > reward_correct > 0 > reward_fail")
        if self.beta < 1:
            raise EnvError("beta must be >= 1")
        if not 0 < self.gamma <= 1:
            raise EnvError("gamma must be in (0, 1]")
        if self.k_time < 0:
            raise EnvError("k_time must be >= 0")
        if self.max_steps < 1:
            raise EnvError("max_steps must be >= 1")
        if len(self.axis_mask) != 6:
            raise EnvError("axis_mask needs 6 entries")
        if self.eye.fidelity != self.fidelity:
            raise EnvError("eye spec fidelity does not match env fidelity")
        self.eye.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fidelity"] = int(self.fidelity)
        d["eye"]["fidelity"] = int(self.eye.fidelity)
        d["axis_mask"] = list(self.axis_mask)
        d["start_shell"] = list(self.start_shell)
        return d

    @staticmethod
    def from_dict(d: dict) -> "EnvConfig":
        d = dict(d)
        eye = dict(d.pop("eye"))
        eye["fidelity"] = Fidelity(eye["fidelity"])
        obs = ObservationConfig(**d.pop("observation"))
        technique = TechniqueRules(**d.pop("technique"))
        bounds = ActionBounds(**d.pop("bounds"))
        cfg = EnvConfig(
            fidelity=Fidelity(d.pop("fidelity")),
            eye=EyeSpec(**eye),
            observation=obs,
            technique=technique,
            bounds=bounds,
            axis_mask=tuple(d.pop("axis_mask")),
            start_shell=tuple(d.pop("start_shell")),
            **d,
        )
        return cfg

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class EnvState:
    """Ground-truth episode state; never exposed to the agent."""

    grid: VoxelGrid
    sectors: SectorMap
    tool: ToolPose
    hit_c: int = 0
    t: int = 0
    terminal: bool = False
    outcome: StepEvent | None = None
    entry_sector: SectorId | None = None
    entry_seen: bool = False
    center: np.ndarray = None          # pristine cornea center, frozen per episode
    dist_to_center: float = 0.0


@dataclass
class StepResult:
    observation: Observation
    reward: float
    terminal: bool
    event: StepEvent
    entry_sector: SectorId | None
    info: dict


# One pristine build per EyeSpec; label arrays and KD-trees are immutable and
# shared read-only between environment instances.
_BUILD_CACHE: dict = {}


def _cached_build(spec: EyeSpec):
    if spec not in _BUILD_CACHE:
        _BUILD_CACHE[spec] = build_eye(spec)
        _BUILD_CACHE[spec][0]._ensure_tree()
    return _BUILD_CACHE[spec]


class CataractEnv:
    """Single-episode-at-a-time environment; instances are independent."""

    def __init__(
        self,
        config: EnvConfig,
        geometry: ToolGeometry | None = None,
        world: tuple[VoxelGrid, SectorMap] | None = None,
    ):
        config.validate()
        self.config = config
        self.geometry = geometry or ToolGeometry.keratome()
        if world is not None:
            self._pristine_grid, self.sectors = world
        else:
            template, self.sectors = _cached_build(config.eye)
            self._pristine_grid = template
        # Own the mutable removal state; share immutable labels + KD-tree.
        self.grid = VoxelGrid(
            self._pristine_grid.dims,
            self._pristine_grid.voxel_size,
            self._pristine_grid.origin,
            self._pristine_grid.labels,
        )
        self.grid._tissue_tree = self._pristine_grid._tissue_tree
        self.grid._tissue_index = self._pristine_grid._tissue_index
        self._pristine_center = cornea_center(self.grid)
        self.rig = default_rig(
            self._pristine_center,
            config.eye.cornea_radius_mm,
            width=config.observation.width,
            height=config.observation.height,
            fov_deg=config.observation.fov_deg,
            distance_factor=config.observation.camera_distance_factor,
        )
        self.state: EnvState | None = None
        self._mask = np.asarray(config.axis_mask, dtype=np.float64)

    # Episode lifecycle ------------------------------------------------

    @property
    def observation_dim(self) -> int:
        return self.config.observation.flat_length

    @property
    def action_dim(self) -> int:
        return 6

    def reset(self, seed: int) -> Observation:
        self.grid.restore_pristine()
        rng = np.random.default_rng(seed)
        pose = self._sample_start_pose(rng)
        center = self._pristine_center
        self.state = EnvState(
            grid=self.grid,
            sectors=self.sectors,
            tool=pose,
            center=center,
            dist_to_center=float(np.linalg.norm(pose.position - center)),
        )
        return self._observe()

    def _sample_start_pose(self, rng: np.random.Generator) -> ToolPose:
        """Random pose in the start shell: position on the upper cone, blade
        aimed back at the cornea center with a random tilt and roll. The tilt
        spread matters: it makes shallow (technique-compatible) entry
        orientations reachable without re-orientation."""
        lo, hi = self.config.start_shell
        radius = rng.uniform(lo, hi) * self.config.eye.cornea_radius_mm
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        cos_polar = rng.uniform(math.cos(math.radians(60.0)), 1.0)
        sin_polar = math.sqrt(1.0 - cos_polar * cos_polar)
        direction = np.array(
            [sin_polar * math.cos(azimuth), sin_polar * math.sin(azimuth), cos_polar]
        )
        position = self._pristine_center + radius * direction
        forward = -direction  # nominal cutting direction: back at the center
        tilt = rng.uniform(0.0, math.radians(60.0))
        tilt_azimuth = rng.uniform(0.0, 2.0 * math.pi)
        side = np.cross(forward, [0.0, 0.0, 1.0])
        if np.linalg.norm(side) < 1e-9:
            side = np.array([1.0, 0.0, 0.0])
        side /= np.linalg.norm(side)
        up = np.cross(side, forward)
        tilt_axis = math.cos(tilt_azimuth) * side + math.sin(tilt_azimuth) * up
        forward = _rotate_about_axis(forward, tilt_axis, tilt)
        roll = rng.uniform(0.0, 2.0 * math.pi)
        orientation = _orientation_from_forward(forward, roll)
        return ToolPose(position, orientation)

    def _observe(self) -> Observation:
        return assemble_observation(
            self.grid, self.geometry, self.state.tool, self.rig, self.config.observation
        )

    # Stepping -----------------------------------------------------------

    def step(self, action) -> StepResult:
        if self.state is None:
            raise EnvError("reset() must be called before step()")
        if self.state.terminal:
            raise EnvError("step() on a terminal episode")
        state = self.state
        cfg = self.config
        if not isinstance(action, ActionDelta):
            action = ActionDelta.from_array(action)
        delta, clamped = action.clamped(cfg.bounds, self._mask)

        prev = state.tool
        m = delta_to_transform_about(delta, prev.position)
        nxt = apply_transform(prev, m)
        report = detect_contacts(self.grid, self.geometry, prev, nxt)
        hit = self.classify_hit(report, nxt)

        first_cornea = report.first_with_label(TissueLabel.CORNEA)
        if first_cornea is not None and not state.entry_seen:
            state.entry_seen = True
            state.entry_sector = self.sectors.classify(first_cornea.index)

        new_dist = float(np.linalg.norm(nxt.position - state.center))
        if hit == HitClass.CORRECT:
            state.hit_c += 1
            if state.hit_c >= cfg.beta:
                reward = cfg.reward_success
                event = StepEvent.SUCCESS
                state.terminal = True
            else:
                reward = cfg.reward_correct
                event = StepEvent.CORRECT_HIT
        elif hit == HitClass.WRONG:
            reward = cfg.reward_fail
            event = StepEvent.FAIL
            state.terminal = True
        else:
            delta_d = state.dist_to_center - new_dist
            reward = -cfg.k_time + delta_d
            event = StepEvent.SHAPING

        if report:
            self.grid.remove_voxels(report.indices)

        state.tool = nxt
        state.dist_to_center = new_dist
        state.t += 1
        if not state.terminal and state.t >= cfg.max_steps:
            state.terminal = True
            event = StepEvent.TIMEOUT
        if state.terminal:
            state.outcome = event

        obs = self._observe()
        return StepResult(
            observation=obs,
            reward=float(reward),
            terminal=state.terminal,
            event=event,
            entry_sector=state.entry_sector,
            info={
                "clamped": clamped,
                "hit_c": state.hit_c,
                "t": state.t,
                "contacts": len(report.contacts),
                "distance": obs.distance,
                "dist_to_center": new_dist,
            },
        )

    # Hit classification ---------------------------------------------------

    def classify_hit(self, report, pose: ToolPose) -> HitClass:
        """Correct iff every contact is cornea (plus entry technique in the
        complex task); any non-cornea contact is wrong in both fidelities."""
        if not report:
            return HitClass.NONE
        if report.any_label_other_than(TissueLabel.CORNEA):
            return HitClass.WRONG
        if self.config.fidelity == Fidelity.HIGH_POLY and not self.state.entry_seen:
            first = report.first_with_label(TissueLabel.CORNEA)
            if not self._entry_technique_ok(first, pose):
                return HitClass.WRONG
        return HitClass.CORRECT

    def _entry_technique_ok(self, contact, pose: ToolPose) -> bool:
        spec = self.config.eye
        rules = self.config.technique
        center = self.grid.voxel_center(contact.index)
        cap_axis = np.array([0.0, 0.0, spec.cornea_offset_mm])
        radial = center - cap_axis
        r = np.linalg.norm(radial)
        if r == 0:
            return False
        polar = math.acos(np.clip(radial[2] / r, -1.0, 1.0))
        theta_max = spec.cap_half_angle_rad
        if polar < (1.0 - rules.rim_band_fraction) * theta_max or polar > theta_max:
            return False
        normal = radial / r
        forward = self.geometry.forward_axis(pose)
        sin_angle = abs(float(np.dot(forward, normal)))
        angle = math.degrees(math.asin(np.clip(sin_angle, 0.0, 1.0)))
        return angle <= rules.max_entry_angle_deg


def _rotate_about_axis(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1 - c)


def _orientation_from_forward(forward: np.ndarray, roll: float) -> np.ndarray:
    """Quaternion sending the tool's -z axis to ``forward`` with given roll."""
    forward = np.asarray(forward, dtype=np.float64)
    forward = forward / np.linalg.norm(forward)
    up_hint = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(forward, up_hint)) > 0.99:
        up_hint = np.array([1.0, 0.0, 0.0])
    x_axis = np.cross(up_hint, forward)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(forward, x_axis)
    rot = np.column_stack([x_axis, y_axis, -forward])
    cr, sr = math.cos(roll), math.sin(roll)
    roll_m = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return matrix_to_quat(rot @ roll_m)
