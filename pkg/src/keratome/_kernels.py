"""Compiled voxel-traversal kernels (Amanatides-Woo DDA) for contact sweeps
and per-pixel ray marching. Hot path: called per environment step."""

from __future__ import annotations

import numpy as np
from numba import njit

_INF = np.inf


@njit(cache=True)
def _clip_unit_segment(o, d, n0, n1, n2):
    """Clip param range of g = o + t*d, t in [0,1], against [0,n] per axis."""
    t0 = 0.0
    t1 = 1.0
    dims = (n0, n1, n2)
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < 0.0 or o[a] > dims[a]:
                return 1.0, 0.0
        else:
            ta = (0.0 - o[a]) / d[a]
            tb = (dims[a] - o[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    return t0, t1


@njit(cache=True)
def sweep_segments_kernel(labels, removed, origin, vs, p0s, p1s, out_idx, out_t):
    """Collect tissue voxels crossed by each segment. Returns hit count."""
    n0, n1, n2 = labels.shape
    count = 0
    cap = out_t.shape[0]
    for s in range(p0s.shape[0]):
        o = np.empty(3)
        d = np.empty(3)
        for a in range(3):
            o[a] = (p0s[s, a] - origin[a]) / vs
            d[a] = (p1s[s, a] - origin[a]) / vs - o[a]
        t0, t1 = _clip_unit_segment(o, d, n0, n1, n2)
        if t0 > t1:
            continue
        eps = 1e-12
        gx = o[0] + d[0] * (t0 + eps)
        gy = o[1] + d[1] * (t0 + eps)
        gz = o[2] + d[2] * (t0 + eps)
        vx = int(np.floor(gx))
        vy = int(np.floor(gy))
        vz = int(np.floor(gz))
        if vx < 0:
            vx = 0
        if vy < 0:
            vy = 0
        if vz < 0:
            vz = 0
        if vx > n0 - 1:
            vx = n0 - 1
        if vy > n1 - 1:
            vy = n1 - 1
        if vz > n2 - 1:
            vz = n2 - 1

        stepx = 1 if d[0] > 0 else (-1 if d[0] < 0 else 0)
        stepy = 1 if d[1] > 0 else (-1 if d[1] < 0 else 0)
        stepz = 1 if d[2] > 0 else (-1 if d[2] < 0 else 0)

        tmaxx = _INF if d[0] == 0.0 else ((vx + (1 if stepx > 0 else 0)) - o[0]) / d[0]
        tmaxy = _INF if d[1] == 0.0 else ((vy + (1 if stepy > 0 else 0)) - o[1]) / d[1]
        tmaxz = _INF if d[2] == 0.0 else ((vz + (1 if stepz > 0 else 0)) - o[2]) / d[2]
        tdx = _INF if d[0] == 0.0 else stepx / d[0]
        tdy = _INF if d[1] == 0.0 else stepy / d[1]
        tdz = _INF if d[2] == 0.0 else stepz / d[2]

        t_entry = t0
        while True:
            if labels[vx, vy, vz] != 0 and not removed[vx, vy, vz]:
                if count < cap:
                    out_idx[count, 0] = vx
                    out_idx[count, 1] = vy
                    out_idx[count, 2] = vz
                    out_t[count] = t_entry
                    count += 1
            # advance to next voxel
            if tmaxx <= tmaxy and tmaxx <= tmaxz:
                t_entry = tmaxx
                if t_entry > t1:
                    break
                vx += stepx
                if vx < 0 or vx >= n0:
                    break
                tmaxx += tdx
            elif tmaxy <= tmaxz:
                t_entry = tmaxy
                if t_entry > t1:
                    break
                vy += stepy
                if vy < 0 or vy >= n1:
                    break
                tmaxy += tdy
            else:
                t_entry = tmaxz
                if t_entry > t1:
                    break
                vz += stepz
                if vz < 0 or vz >= n2:
                    break
                tmaxz += tdz
    return count


def sweep_segments(labels, removed, origin, vs, p0s, p1s):
    """Python wrapper: returns (indices (M,3) int64, sweep params (M,))."""
    p0s = np.ascontiguousarray(p0s, dtype=np.float64)
    p1s = np.ascontiguousarray(p1s, dtype=np.float64)
    n = int(max(labels.shape))
    cap = p0s.shape[0] * (3 * n + 6)
    out_idx = np.empty((cap, 3), dtype=np.int64)
    out_t = np.empty(cap, dtype=np.float64)
    count = sweep_segments_kernel(
        labels, removed, np.ascontiguousarray(origin), float(vs), p0s, p1s, out_idx, out_t
    )
    return out_idx[:count].copy(), out_t[:count].copy()


@njit(cache=True)
def trace_rays_kernel(labels, removed, origin, vs, ray_o, ray_d, out_label, out_t):
    """First visible (non-removed tissue) voxel per ray; t in mm, -1 on miss."""
    n0, n1, n2 = labels.shape
    for r in range(ray_o.shape[0]):
        o = np.empty(3)
        d = np.empty(3)
        for a in range(3):
            o[a] = (ray_o[r, a] - origin[a]) / vs
            d[a] = ray_d[r, a] / vs
        # slab clip of t in [0, +inf) against the grid box
        t0 = 0.0
        t1 = _INF
        ok = True
        dims = (n0, n1, n2)
        for a in range(3):
            if d[a] == 0.0:
                if o[a] < 0.0 or o[a] > dims[a]:
                    ok = False
                    break
            else:
                ta = (0.0 - o[a]) / d[a]
                tb = (dims[a] - o[a]) / d[a]
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
        if not ok or t0 > t1:
            out_label[r] = 0
            out_t[r] = -1.0
            continue

        eps = 1e-9
        vx = int(np.floor(o[0] + d[0] * (t0 + eps)))
        vy = int(np.floor(o[1] + d[1] * (t0 + eps)))
        vz = int(np.floor(o[2] + d[2] * (t0 + eps)))
        if vx < 0:
            vx = 0
        if vy < 0:
            vy = 0
        if vz < 0:
            vz = 0
        if vx > n0 - 1:
            vx = n0 - 1
        if vy > n1 - 1:
            vy = n1 - 1
        if vz > n2 - 1:
            vz = n2 - 1

        stepx = 1 if d[0] > 0 else (-1 if d[0] < 0 else 0)
        stepy = 1 if d[1] > 0 else (-1 if d[1] < 0 else 0)
        stepz = 1 if d[2] > 0 else (-1 if d[2] < 0 else 0)
        tmaxx = _INF if d[0] == 0.0 else ((vx + (1 if stepx > 0 else 0)) - o[0]) / d[0]
        tmaxy = _INF if d[1] == 0.0 else ((vy + (1 if stepy > 0 else 0)) - o[1]) / d[1]
        tmaxz = _INF if d[2] == 0.0 else ((vz + (1 if stepz > 0 else 0)) - o[2]) / d[2]
        tdx = _INF if d[0] == 0.0 else stepx / d[0]
        tdy = _INF if d[1] == 0.0 else stepy / d[1]
        tdz = _INF if d[2] == 0.0 else stepz / d[2]

        hit = 0
        t_entry = t0
        t_hit = -1.0
        while True:
            if labels[vx, vy, vz] != 0 and not removed[vx, vy, vz]:
                hit = labels[vx, vy, vz]
                t_hit = t_entry
                break
            if tmaxx <= tmaxy and tmaxx <= tmaxz:
                t_entry = tmaxx
                if t_entry > t1:
                    break
                vx += stepx
                if vx < 0 or vx >= n0:
                    break
                tmaxx += tdx
            elif tmaxy <= tmaxz:
                t_entry = tmaxy
                if t_entry > t1:
                    break
                vy += stepy
                if vy < 0 or vy >= n1:
                    break
                tmaxy += tdy
            else:
                t_entry = tmaxz
                if t_entry > t1:
                    break
                vz += stepz
                if vz < 0 or vz >= n2:
                    break
                tmaxz += tdz
        out_label[r] = hit
        out_t[r] = t_hit


def trace_rays(labels, removed, origin, vs, ray_o, ray_d):
    ray_o = np.ascontiguousarray(ray_o, dtype=np.float64)
    ray_d = np.ascontiguousarray(ray_d, dtype=np.float64)
    m = ray_o.shape[0]
    out_label = np.zeros(m, dtype=np.uint8)
    out_t = np.full(m, -1.0)
    trace_rays_kernel(
        labels, removed, np.ascontiguousarray(origin), float(vs), ray_o, ray_d, out_label, out_t
    )
    return out_label, out_t
