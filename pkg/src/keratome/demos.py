"""Demonstration capture, storage, and validation.

A demonstration is a sector- and surgeon-tagged (observation, action, reward)
trajectory replayable through the environment from its recorded seed. The
scripted expert is the privileged planning oracle standing in for a surgeon:
approach above the target sector's rim band, align the blade flat and shallow,
then advance/saw until the incision completes.
"""

from __future__ import annotations

import base64
import json
import math
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .env import CataractEnv, EnvConfig, StepEvent
from .eye import Fidelity, SectorId, sector_center_azimuth
from .kinematics import ActionDelta, ToolGeometry, matrix_to_quat, quat_to_matrix

DEMO_MAGIC = "KDEMO"
DEMO_FORMAT_VERSION = 1


class DemoError(RuntimeError):
    pass


class PlannerError(DemoError):
    """Scripted expert could not complete the incision; carries diagnostics."""


@dataclass
class TrajectoryStep:
    observation: np.ndarray   # flattened, float32
    action: ActionDelta       # the executed physical delta (mm / rad)
    reward: float
    t: int


@dataclass
class Demonstration:
    surgeon_id: str
    sector: SectorId | None
    fidelity: Fidelity
    obs_config_hash: str
    env_config_hash: str
    seed: int
    source: str               # 'Scripted' | 'Human'
    outcome: str              # StepEvent name at termination
    steps: list = field(default_factory=list)
    compressed: bool = True

    def demo_id(self) -> str:
        sector = self.sector.name if self.sector is not None else "None"
        return f"{self.source.lower()}-{self.surgeon_id}-{sector}-s{self.seed}"

    def obs_matrix(self) -> np.ndarray:
        return np.stack([s.observation for s in self.steps]).astype(np.float64)

    def action_matrix(self, bounds) -> np.ndarray:
        """Actions in normalized units (divided by per-axis bounds)."""
        raw = np.stack([s.action.as_array() for s in self.steps])
        return raw / bounds.as_array()

    def validate_structure(self) -> None:
        if not self.steps:
            raise DemoError("demonstration has no steps")
        dim = self.steps[0].observation.shape[0]
        for s in self.steps:
            if s.observation.shape != (dim,):
                raise DemoError("inconsistent observation lengths")


# File format ---------------------------------------------------------------
# Line 1: 'KDEMO <version>'. Line 2: JSON metadata. Then one record per step:
# base64(zlib(float32 obs)) TAB base64(float64 action[6]) TAB repr(reward)
# TAB t. Newline-terminated. See docs/formats.md.

def _encode_obs(obs: np.ndarray, compressed: bool) -> str:
    raw = np.ascontiguousarray(obs, dtype="<f4").tobytes()
    if compressed:
        raw = zlib.compress(raw, level=6)
    return base64.b64encode(raw).decode()

def _decode_obs(text: str, compressed: bool, dim: int) -> np.ndarray:
    raw = base64.b64decode(text)
    if compressed:
        raw = zlib.decompress(raw)
    arr = np.frombuffer(raw, dtype="<f4")
    if arr.shape[0] != dim:
        raise DemoError(f"observation length {arr.shape[0]} != recorded dim {dim}")
    return arr.copy()

def _encode_action(a: ActionDelta) -> str:
    return base64.b64encode(struct.pack("<6d", *a.as_array())).decode()

def _decode_action(text: str) -> ActionDelta:
    return ActionDelta(*struct.unpack("<6d", base64.b64decode(text)))


def dumps_demo(demo: Demonstration) -> bytes:
    demo.validate_structure()
    meta = {
        "surgeon_id": demo.surgeon_id,
        "sector": demo.sector.name if demo.sector is not None else None,
        "fidelity": demo.fidelity.name,
        "obs_config_hash": demo.obs_config_hash,
        "env_config_hash": demo.env_config_hash,
        "seed": demo.seed,
        "source": demo.source,
        "outcome": demo.outcome,
        "n_steps": len(demo.steps),
        "obs_dim": int(demo.steps[0].observation.shape[0]),
        "compressed": demo.compressed,
    }
    lines = [f"{DEMO_MAGIC} {DEMO_FORMAT_VERSION}", json.dumps(meta, sort_keys=True)]
    for s in demo.steps:
        lines.append(
            f"{_encode_obs(s.observation, demo.compressed)}\t"
            f"{_encode_action(s.action)}\t{float(s.reward)!r}\t{s.t}"
        )
    return ("\n".join(lines) + "\n").encode()


def loads_demo(data: bytes) -> Demonstration:
    lines = data.decode().splitlines()
    if len(lines) < 3:
        raise DemoError("demonstration file too short")
    magic = lines[0].split()
    if magic[0] != DEMO_MAGIC:
        raise DemoError("not a demonstration file (bad magic)")
    if int(magic[1]) != DEMO_FORMAT_VERSION:
        raise DemoError(f"unsupported demonstration version {magic[1]}")
    meta = json.loads(lines[1])
    demo = Demonstration(
        surgeon_id=meta["surgeon_id"],
        sector=SectorId[meta["sector"]] if meta["sector"] is not None else None,
        fidelity=Fidelity[meta["fidelity"]],
        obs_config_hash=meta["obs_config_hash"],
        env_config_hash=meta["env_config_hash"],
        seed=meta["seed"],
        source=meta["source"],
        outcome=meta["outcome"],
        compressed=meta["compressed"],
    )
    for line in lines[2:]:
        if not line:
            continue
        obs_s, act_s, rew_s, t_s = line.split("\t")
        demo.steps.append(
            TrajectoryStep(
                observation=_decode_obs(obs_s, demo.compressed, meta["obs_dim"]),
                action=_decode_action(act_s),
                reward=float(rew_s),
                t=int(t_s),
            )
        )
    if len(demo.steps) != meta["n_steps"]:
        raise DemoError("step count does not match header")
    return demo


class DemoStore:
    """One file per demonstration plus an atomic JSON manifest."""

    MANIFEST = "manifest.json"

    def __init__(self, root):
        self.root = str(root)
        os.makedirs(self.root, exist_ok=True)
        self._manifest_path = os.path.join(self.root, self.MANIFEST)

    def manifest(self) -> dict:
        if not os.path.exists(self._manifest_path):
            return {}
        with open(self._manifest_path) as fh:
            return json.load(fh)

    def _write_manifest(self, manifest: dict) -> None:
        tmp = self._manifest_path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
        os.replace(tmp, self._manifest_path)

    def save(self, demo: Demonstration) -> str:
        demo_id = demo.demo_id()
        filename = demo_id + ".kdemo"
        with open(os.path.join(self.root, filename), "wb") as fh:
            fh.write(dumps_demo(demo))
        manifest = self.manifest()
        manifest[demo_id] = {
            "file": filename,
            "surgeon_id": demo.surgeon_id,
            "sector": demo.sector.name if demo.sector is not None else None,
            "fidelity": demo.fidelity.name,
            "source": demo.source,
            "outcome": demo.outcome,
            "n_steps": len(demo.steps),
            "obs_config_hash": demo.obs_config_hash,
            "env_config_hash": demo.env_config_hash,
            "seed": demo.seed,
        }
        self._write_manifest(manifest)
        return demo_id

    def load(self, demo_id: str, expected_obs_hash: str | None = None) -> Demonstration:
        entry = self.manifest().get(demo_id)
        if entry is None:
            raise DemoError(f"unknown demonstration id {demo_id!r}")
        with open(os.path.join(self.root, entry["file"]), "rb") as fh:
            demo = loads_demo(fh.read())
        if expected_obs_hash is not None and demo.obs_config_hash != expected_obs_hash:
            raise DemoError(
                f"observation config mismatch: demo {demo.obs_config_hash} "
                f"vs expected {expected_obs_hash}"
            )
        return demo

    def ids(self, surgeon_id: str | None = None, sector: SectorId | None = None,
            half: str | None = None) -> list:
        out = []
        for demo_id, entry in sorted(self.manifest().items()):
            if surgeon_id is not None and entry["surgeon_id"] != surgeon_id:
                continue
            if sector is not None and entry["sector"] != sector.name:
                continue
            if half is not None:
                name = entry["sector"] or ""
                if not name.lower().startswith(half.lower()):
                    continue
            out.append(demo_id)
        return out

    def sector_counts(self) -> dict:
        counts = {}
        for entry in self.manifest().values():
            counts[entry["sector"]] = counts.get(entry["sector"], 0) + 1
        return counts


# Validation -----------------------------------------------------------------

@dataclass
class ValidationReport:
    valid: bool
    outcome: str
    entry_sector: str | None
    n_steps: int
    reward_mismatches: int


def validate_demo(config: EnvConfig, demo: Demonstration,
                  geometry: ToolGeometry | None = None) -> ValidationReport:
    """Replay the demo's actions in a fresh environment under ``config``."""
    if demo.fidelity != config.fidelity:
        raise DemoError("demo fidelity does not match config")
    env = CataractEnv(config, geometry=geometry)
    env.reset(demo.seed)
    outcome = None
    entry = None
    mismatches = 0
    steps = 0
    for step in demo.steps:
        result = env.step(step.action)
        steps += 1
        if not math.isclose(result.reward, step.reward, rel_tol=1e-9, abs_tol=1e-9):
            mismatches += 1
        entry = result.entry_sector
        if result.terminal:
            outcome = result.event
            break
    valid = outcome == StepEvent.SUCCESS
    return ValidationReport(
        valid=valid,
        outcome=outcome.name if outcome is not None else "Truncated",
        entry_sector=entry.name if entry is not None else None,
        n_steps=steps,
        reward_mismatches=mismatches,
    )


# Scripted expert ----------------------------------------------------------------

def _sector_rim_target(env: CataractEnv, sector: SectorId):
    """Analytic entry point on the cap sphere at the sector's central
    azimuth, plus the outward normal and the inward (apex-bound) tangent.

    High fidelity targets the middle of the rim band (the technique rule
    demands it); the lenient task enters higher on the cap where the wide
    blade edge cannot graze the sclera."""
    spec = env.config.eye
    smap = env.sectors
    if not (smap.surface & (smap.sector == int(sector))).any():
        raise PlannerError(f"sector {sector.name} has no surface voxels")
    theta_max = spec.cap_half_angle_rad
    if env.config.fidelity == Fidelity.HIGH_POLY:
        polar = (1.0 - 0.5 * env.config.technique.rim_band_fraction) * theta_max
    else:
        polar = 0.55 * theta_max
    azimuth = sector_center_azimuth(sector)
    cap_center = np.array([0.0, 0.0, spec.cornea_offset_mm])
    normal = np.array(
        [
            math.sin(polar) * math.cos(azimuth),
            math.sin(polar) * math.sin(azimuth),
            math.cos(polar),
        ]
    )
    entry = cap_center + spec.cornea_radius_mm * normal
    apex = cap_center + np.array([0.0, 0.0, spec.cornea_radius_mm])
    inward = apex - entry
    inward -= normal * np.dot(inward, normal)
    inward /= np.linalg.norm(inward)
    return entry, normal, inward


def _target_orientation(direction: np.ndarray, normal: np.ndarray) -> np.ndarray:
    width_axis = np.cross(normal, direction)
    width_axis /= np.linalg.norm(width_axis)
    y_axis = np.cross(-direction, width_axis)
    rot = np.column_stack([width_axis, y_axis, -direction])
    return matrix_to_quat(rot)


def _rotation_error_vector(q_current: np.ndarray, q_target: np.ndarray) -> np.ndarray:
    """World-frame rotation vector taking current to target orientation."""
    r_err = quat_to_matrix(q_target) @ quat_to_matrix(q_current).T
    cos_angle = np.clip((np.trace(r_err) - 1.0) / 2.0, -1.0, 1.0)
    angle = math.acos(cos_angle)
    if angle < 1e-12:
        return np.zeros(3)
    axis = np.array(
        [r_err[2, 1] - r_err[1, 2], r_err[0, 2] - r_err[2, 0], r_err[1, 0] - r_err[0, 1]]
    )
    norm = np.linalg.norm(axis)
    if norm < 1e-12:
        return np.zeros(3)
    return axis / norm * angle


def scripted_expert(
    config: EnvConfig,
    target_sector: SectorId,
    seed: int,
    surgeon_id: str = "scripted",
    geometry: ToolGeometry | None = None,
    entry_angle_deg: float = 20.0,
    max_plan_steps: int | None = None,
) -> Demonstration:
    """Run the waypoint-planning expert through a real environment and record
    the resulting (observation, action, reward) trajectory.

    Raises PlannerError when the episode does not end in a completed incision.
    """
    env = CataractEnv(config, geometry=geometry)
    obs = env.reset(seed)
    limit = max_plan_steps or config.max_steps

    entry, normal, inward = _sector_rim_target(env, target_sector)
    if config.fidelity != Fidelity.HIGH_POLY:
        # no entry-angle rule in the lenient task: a near-plunge crosses the
        # shell with continuous contact, no sawing needed
        entry_angle_deg = 65.0
    alpha = math.radians(entry_angle_deg)
    cut_dir = math.cos(alpha) * inward - math.sin(alpha) * normal
    cut_dir /= np.linalg.norm(cut_dir)
    standoff = entry - cut_dir * 2.0
    hover = np.array([standoff[0], standoff[1],
                      env.config.eye.cornea_offset_mm + env.config.eye.cornea_radius_mm + 3.0])
    q_target = _target_orientation(cut_dir, normal)
    width_axis = np.cross(normal, cut_dir)
    width_axis /= np.linalg.norm(width_axis)

    bounds = config.bounds
    t_lim = bounds.translation_mm
    r_lim = bounds.rotation_rad
    align = config.fidelity == Fidelity.HIGH_POLY

    demo = Demonstration(
        surgeon_id=surgeon_id,
        sector=target_sector,
        fidelity=config.fidelity,
        obs_config_hash=config.observation.config_hash(),
        env_config_hash=config.config_hash(),
        seed=seed,
        source="Scripted",
        outcome="Truncated",
    )

    phase = "hover"
    saw_count = 0
    stall = 0
    retreat_left = 0.0
    shift_left = 0.0
    shift_sign = 1
    stroke_travel = 0.0
    engaged = False
    outcome = None

    for _ in range(limit):
        pos = env.state.tool.position
        q = env.state.tool.orientation
        move = np.zeros(3)
        rot = np.zeros(3)

        if phase == "hover":
            err = hover - pos
            if align:
                rot = _rotation_error_vector(q, q_target)
            if np.linalg.norm(err) < 0.05:
                phase = "align" if align else "descend"
            else:
                move = err
        if phase == "align":
            w_err = _rotation_error_vector(q, q_target)
            if np.linalg.norm(w_err) < 0.02:
                phase = "descend"
            else:
                rot = w_err
        if phase == "descend":
            err = standoff - pos
            if np.linalg.norm(err) < 0.05:
                phase = "cut"
            else:
                move = err
                if align:
                    rot = _rotation_error_vector(q, q_target)
        if phase == "cut":
            move = cut_dir * t_lim
            stroke_travel += t_lim
        if phase == "retreat":
            move = -cut_dir * min(t_lim, retreat_left)
            retreat_left -= t_lim
            if retreat_left <= 0:
                phase = "shift"
                shift_left = 0.2
        if phase == "shift":
            move = shift_sign * width_axis * min(t_lim, shift_left)
            shift_left -= t_lim
            if shift_left <= 0:
                phase = "cut"
                stall = 0
                stroke_travel = 0.0
                engaged = False

        norm = np.linalg.norm(move)
        if norm > t_lim:
            move = move / norm * t_lim
        rot = np.clip(rot, -r_lim, r_lim)
        delta = ActionDelta(move[0], move[1], move[2], rot[0], rot[1], rot[2])

        prev_obs = obs
        result = env.step(delta)
        demo.steps.append(
            TrajectoryStep(
                observation=prev_obs.flatten().astype(np.float32),
                action=delta,
                reward=result.reward,
                t=len(demo.steps),
            )
        )
        obs = result.observation

        if phase == "cut":
            if result.event == StepEvent.CORRECT_HIT:
                stall = 0
                engaged = True
            elif result.event == StepEvent.SHAPING:
                # only saw once this stroke has actually cut something;
                # the approach segment to the surface is legitimately air
                if engaged:
                    stall += 1
                    if stall >= 3:
                        phase = "retreat"
                        retreat_left = 0.5
                        saw_count += 1
                        shift_sign = 1 if saw_count % 2 else -1
                        stall = 0
                elif stroke_travel > 6.0:
                    raise PlannerError(
                        f"cut stroke for {target_sector.name} seed {seed} "
                        f"never engaged tissue after {stroke_travel:.1f} mm"
                    )
        if result.terminal:
            outcome = result.event
            break

    if outcome != StepEvent.SUCCESS:
        raise PlannerError(
            f"expert failed for sector {target_sector.name} seed {seed}: "
            f"outcome={outcome.name if outcome else 'Truncated'} "
            f"steps={len(demo.steps)} hit_c={env.state.hit_c} phase={phase}"
        )
    demo.outcome = outcome.name
    return demo
