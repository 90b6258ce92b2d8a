"""Shared synthetic worlds and step drivers for environment-level tests."""

import numpy as np

from keratome.env import CataractEnv, EnvConfig, StepEvent
from keratome.eye import NO_SECTOR, SectorMap, TissueLabel, VoxelGrid
from keratome.kinematics import ActionDelta, ToolPose
from keratome.rendering import ObservationConfig

TINY_OBS = ObservationConfig(width=8, height=8, channels=1)


def slab_world(n=48, vs=0.5, cornea_x=(4, 20), wrong_x=(34, 44), wrong_label=TissueLabel.SCLERA):
    """Two tissue slabs at the same height, separated in x by clear air:
    a cornea slab for correct hits and a second slab for wrong hits."""
    labels = np.zeros((n, n, n), dtype=np.uint8)
    z0, z1 = 8, 20
    labels[cornea_x[0]:cornea_x[1], :, z0:z1] = TissueLabel.CORNEA
    labels[wrong_x[0]:wrong_x[1], :, z0:z1] = wrong_label
    origin = np.full(3, -n * vs / 2)
    grid = VoxelGrid((n, n, n), vs, origin, labels)
    sector = np.full((n, n, n), NO_SECTOR, dtype=np.uint8)
    smap = SectorMap(sector=sector, surface=np.zeros((n, n, n), dtype=bool))
    return grid, smap


def make_slab_env(beta=20, wrong_label=TissueLabel.SCLERA, **config_overrides):
    grid, smap = slab_world(wrong_label=wrong_label)
    config_overrides.setdefault("observation", TINY_OBS)
    cfg = EnvConfig.low_poly(beta=beta, **config_overrides)
    env = CataractEnv(cfg, world=(grid, smap))
    return env


def teleport(env, position, orientation=None):
    """Test-only: place the tool without sweeping contacts."""
    st = env.state
    q = st.tool.orientation if orientation is None else orientation
    st.tool = ToolPose(np.asarray(position, dtype=np.float64), q)
    st.dist_to_center = float(np.linalg.norm(st.tool.position - st.center))


def step_delta(env, arr):
    return env.step(ActionDelta.from_array(np.asarray(arr, dtype=np.float64)))


def descend_until_hits(env, n_hits, dz=-0.1, cap=5000):
    """Descend straight down collecting ``n_hits`` correct-hit/success events."""
    results = []
    hits = 0
    for _ in range(cap):
        r = step_delta(env, [0, 0, dz, 0, 0, 0])
        results.append(r)
        if r.event in (StepEvent.CORRECT_HIT, StepEvent.SUCCESS):
            hits += 1
        if hits >= n_hits or r.terminal:
            break
    return results


def translate(env, vector, cap=5000):
    """Move in bounded steps along ``vector`` (expected contact-free)."""
    vector = np.asarray(vector, dtype=np.float64)
    total = np.linalg.norm(vector)
    if total == 0:
        return []
    direction = vector / total
    moved = 0.0
    results = []
    while moved < total - 1e-9 and len(results) < cap:
        step = min(0.1, total - moved)
        r = step_delta(env, list(direction * step) + [0, 0, 0])
        results.append(r)
        moved += step
        if r.terminal:
            break
    return results
