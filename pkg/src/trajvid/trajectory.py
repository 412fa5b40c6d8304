"""Point-trajectory construction: masks and arrows in, colored dot tensor out.

Coordinates are continuous (x, y) pixel positions with x = column and
y = row; masks are indexed ``grid[y, x]``. Rounding to pixel cells happens
only at rasterization time.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, field

import numpy as np

GOLDEN_ANGLE_DEG = 137.508


@dataclass
class ComponentMask:
    """Binary occupancy grid for one component, True = inside."""

    component_id: int
    grid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)

    @property
    def empty(self) -> bool:
        return not self.grid.any()


@dataclass
class ArrowPath:
    """User-drawn motion arrow: ordered waypoints in pixel coordinates."""

    component_id: int
    waypoints: list[tuple[float, float]]


@dataclass
class TrajectorySet:
    """Per-point, per-frame continuous positions.

    ``xy`` has shape (n_points, L, 2); ``component_ids`` maps each point to
    the component it was sampled from.
    """

    xy: np.ndarray
    component_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64)
        if self.xy.ndim != 3 or self.xy.shape[2] != 2:
            raise ValueError(f"trajectory array must be (n, L, 2), got {self.xy.shape}")
        if self.component_ids is None:
            self.component_ids = np.ones(self.xy.shape[0], dtype=np.int64)
        self.component_ids = np.asarray(self.component_ids, dtype=np.int64)

    @property
    def n_points(self) -> int:
        return self.xy.shape[0]

    @property
    def length(self) -> int:
        return self.xy.shape[1]

    def to_json(self) -> str:
        points = [
            {"component": int(c), "xy": [[float(x), float(y)] for x, y in traj]}
            for c, traj in zip(self.component_ids, self.xy)
        ]
        return json.dumps({"L": self.length, "points": points})

    @classmethod
    def from_json(cls, text: str) -> "TrajectorySet":
        doc = json.loads(text)
        xy = np.array([p["xy"] for p in doc["points"]], dtype=np.float64)
        if xy.size == 0:
            xy = xy.reshape(0, doc["L"], 2)
        ids = np.array([p["component"] for p in doc["points"]], dtype=np.int64)
        if xy.shape[1] != doc["L"]:
            raise ValueError("trajectory JSON: stored length disagrees with L")
        return cls(xy, ids)


def concat_trajectories(sets: list[TrajectorySet]) -> TrajectorySet:
    if not sets:
        raise ValueError("no trajectory sets to concatenate")
    return TrajectorySet(
        np.concatenate([s.xy for s in sets], axis=0),
        np.concatenate([s.component_ids for s in sets]),
    )


def arrows_from_json(text: str) -> list[ArrowPath]:
    doc = json.loads(text)
    return [
        ArrowPath(int(a["component"]), [(float(x), float(y)) for x, y in a["waypoints"]])
        for a in doc
    ]


# ---------------------------------------------------------------------------
# point selection


def sample_candidates(mask: ComponentMask, count: int, seed: int) -> np.ndarray:
    """``count`` points drawn uniformly (with replacement) over mask cells."""
    if count < 1:
        raise ValueError(f"candidate count must be >= 1, got {count}")
    ys, xs = np.nonzero(mask.grid)
    if len(xs) == 0:
        raise ValueError(f"component {mask.component_id} has no area")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(xs), size=count)
    return np.stack([xs[idx], ys[idx]], axis=1).astype(np.float64)


def kmeans_reduce(candidates: np.ndarray, k: int, seed: int, max_iter: int = 100) -> np.ndarray:
    """Lloyd's iteration over candidate points, centers snapped back onto
    candidates so they stay inside nonconvex masks.

    Initial centers are ``k`` distinct candidate indices drawn per seed;
    iteration stops at an assignment fixpoint. Empty clusters keep their
    previous center.
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    n = len(candidates)
    if k > n:
        raise ValueError(f"k-means: K={k} exceeds {n} candidates")
    rng = np.random.default_rng(seed)
    centers = candidates[rng.choice(n, size=k, replace=False)].copy()
    assign = np.full(n, -1)
    for _ in range(max_iter):
        d2 = ((candidates[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = candidates[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    # Snap to nearest candidate (lowest index on ties).
    d2 = ((centers[:, None, :] - candidates[None, :, :]) ** 2).sum(axis=2)
    return candidates[np.argmin(d2, axis=1)].copy()


def select_control_points(mask: ComponentMask, k: int, seed: int) -> np.ndarray:
    """3K uniform candidates reduced to K spread-out in-mask points."""
    candidates = sample_candidates(mask, 3 * k, seed)
    return kmeans_reduce(candidates, k, seed)


# ---------------------------------------------------------------------------
# trajectories


def oracle_track(sample, control_points: np.ndarray, length: int) -> TrajectorySet:
    """Ground-truth tracking against a synthetic sample's known motion.

    ``sample`` must expose ``component_at(x, y)`` for frame-1 membership and
    ``track_point(component_id, (x, y), length)`` returning the closed-form
    per-frame positions (see synthetic.SyntheticSample).
    """
    control_points = np.asarray(control_points, dtype=np.float64)
    rows = []
    ids = []
    for x, y in control_points:
        cid = sample.component_at(x, y)
        if cid is None:
            raise ValueError(f"point ({x}, {y}) lies outside every component mask")
        rows.append(sample.track_point(cid, (x, y), length))
        ids.append(cid)
    return TrajectorySet(np.array(rows, dtype=np.float64), np.array(ids))


def resample_polyline(waypoints, length: int) -> np.ndarray:
    """Arc-length resampling of a polyline into ``length`` positions.

    Endpoints are preserved exactly; a single waypoint (or zero total
    length) yields ``length`` copies of the first waypoint.
    """
    pts = np.asarray(waypoints, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("arrow must have at least one waypoint")
    if length == 1 or len(pts) == 1:
        return np.repeat(pts[:1], length, axis=0)
    seg = np.diff(pts, axis=0)
    seglen = np.hypot(seg[:, 0], seg[:, 1])
    total = seglen.sum()
    if total == 0.0:
        return np.repeat(pts[:1], length, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    targets = np.linspace(0.0, total, length)
    out = np.empty((length, 2))
    seg_idx = 0
    for i, s in enumerate(targets):
        while seg_idx < len(seglen) - 1 and s > cum[seg_idx + 1]:
            seg_idx += 1
        if seglen[seg_idx] == 0.0:
            out[i] = pts[seg_idx]
        else:
            frac = (s - cum[seg_idx]) / seglen[seg_idx]
            out[i] = pts[seg_idx] + frac * seg[seg_idx]
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def arrow_to_trajectories(control_points: np.ndarray, arrow: ArrowPath, length: int) -> TrajectorySet:
    """Offsets of the resampled arrow, applied to every control point."""
    if length < 1:
        raise ValueError(f"trajectory length must be >= 1, got {length}")
    if not arrow.waypoints:
        raise ValueError(f"arrow for component {arrow.component_id} has no waypoints")
    control_points = np.asarray(control_points, dtype=np.float64)
    path = resample_polyline(arrow.waypoints, length)
    offsets = path - path[0]
    xy = control_points[:, None, :] + offsets[None, :, :]
    ids = np.full(len(control_points), arrow.component_id, dtype=np.int64)
    return TrajectorySet(xy, ids)


# ---------------------------------------------------------------------------
# rasterization


def component_color(component_id: int) -> tuple[float, float, float]:
    """Fixed palette: golden-angle hue rotation at full saturation/value."""
    if component_id < 1:
        raise ValueError(f"component ids start at 1, got {component_id}")
    hue = ((component_id - 1) * GOLDEN_ANGLE_DEG) % 360.0
    return colorsys.hsv_to_rgb(hue / 360.0, 1.0, 1.0)


def _disc_offsets(radius: int) -> np.ndarray:
    span = np.arange(-radius, radius + 1)
    du, dv = np.meshgrid(span, span)
    keep = du * du + dv * dv <= radius * radius
    return np.stack([du[keep], dv[keep]], axis=1)


def rasterize(trajectories: TrajectorySet, length: int, height: int, width: int,
              radius: int = 1) -> np.ndarray:
    """Plot each point as a colored disc per frame.

    Returns the (L, H, W, 3) float32 conditioning tensor in [0, 1].
    Out-of-frame discs are clipped; overlapping components resolve to the
    lowest component id.
    """
    if trajectories.length != length:
        raise ValueError(f"trajectory length {trajectories.length} != requested {length}")
    out = np.zeros((length, height, width, 3), dtype=np.float32)
    offsets = _disc_offsets(radius)
    # Paint high ids first so low ids overwrite on overlap.
    order = np.argsort(-trajectories.component_ids, kind="stable")
    for idx in order:
        cid = int(trajectories.component_ids[idx])
        color = np.asarray(component_color(cid), dtype=np.float32)
        centers = np.rint(trajectories.xy[idx]).astype(np.int64)  # (L, 2) as (x, y)
        for frame in range(length):
            cx, cy = centers[frame]
            us = cx + offsets[:, 0]
            vs = cy + offsets[:, 1]
            keep = (us >= 0) & (us < width) & (vs >= 0) & (vs < height)
            out[frame, vs[keep], us[keep]] = color
    return out
