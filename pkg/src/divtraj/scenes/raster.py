"""Agent-centered rasterization of road layouts.

The raster covers a square window in the agent frame, nominally 40 m ahead,
10 m behind and 25 m to each side. The agent sits exactly at the center of
a fixed anchor cell; grid x (columns) runs along the heading, grid y (rows)
along agent-left. Channels: 0 drivable mask {0,1}, 1 lane markings [0,1],
2 agent footprint history [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import ConfigError
from .layout import RoadLayout
from .trajectory import AgentPose, Trajectory

DEFAULT_GRID_SIZE = 64
EXTENT_M = 50.0
AHEAD_M = 40.0
BEHIND_M = 10.0

LANE_HALF_WIDTH = 0.5  # metres of soft falloff for the lane channel
FOOTPRINT_RADIUS = 1.2  # metres


@dataclass(frozen=True)
class GridTransform:
    """Affine map between world coordinates and continuous grid coordinates.

    Grid coordinates are (gx, gy) with gx along columns and gy along rows;
    the center of cell (row i, col j) is at (j + 0.5, i + 0.5).
    """

    matrix: np.ndarray  # 2x2, world -> grid
    offset: np.ndarray  # 2
    shape: Tuple[int, int]  # (H, W)
    anchor: Tuple[int, int]  # (row, col) of the agent cell
    cell_m: float

    @classmethod
    def for_pose(cls, pose: AgentPose, grid_size: int = DEFAULT_GRID_SIZE) -> "GridTransform":
        h = w = int(grid_size)
        cell = EXTENT_M / w
        anchor_col = int(round(w * BEHIND_M / EXTENT_M - 0.5))
        anchor_row = h // 2
        rot_inv = pose.rotation().T  # world -> agent frame
        matrix = rot_inv / cell
        agent_grid = np.array([anchor_col + 0.5, anchor_row + 0.5])
        offset = agent_grid - pose.position @ matrix.T
        return cls(matrix=matrix, offset=offset, shape=(h, w), anchor=(anchor_row, anchor_col), cell_m=cell)

    def world_to_grid(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return points @ self.matrix.T + self.offset

    def grid_to_world(self, grid_pts: np.ndarray) -> np.ndarray:
        grid_pts = np.atleast_2d(np.asarray(grid_pts, dtype=np.float64))
        inv = np.linalg.inv(self.matrix)
        return (grid_pts - self.offset) @ inv.T

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        """Integer (row, col) of each world point; may fall outside the grid."""
        g = self.world_to_grid(points)
        cols = np.floor(g[:, 0]).astype(np.int64)
        rows = np.floor(g[:, 1]).astype(np.int64)
        return np.column_stack([rows, cols])

    def in_bounds(self, points: np.ndarray) -> np.ndarray:
        g = self.world_to_grid(points)
        h, w = self.shape
        return (g[:, 0] >= 0) & (g[:, 0] < w) & (g[:, 1] >= 0) & (g[:, 1] < h)

    def cell_centers_world(self) -> np.ndarray:
        """(H, W, 2) world coordinates of all cell centers."""
        h, w = self.shape
        jj, ii = np.meshgrid(np.arange(w), np.arange(h))
        g = np.column_stack([jj.ravel() + 0.5, ii.ravel() + 0.5])
        return self.grid_to_world(g).reshape(h, w, 2)


@dataclass
class SceneMap:
    """Rasterized scene: (H, W, 3) float64 channels plus the transform."""

    grid: np.ndarray
    transform: GridTransform
    pose: AgentPose

    @property
    def drivable(self) -> np.ndarray:
        return self.grid[:, :, 0]

    @property
    def drivable_mask(self) -> np.ndarray:
        return self.grid[:, :, 0] > 0.5


def _polyline_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest segment of the polyline."""
    a = polyline[:-1]
    d = polyline[1:] - a
    seg_len2 = np.maximum((d * d).sum(axis=1), 1e-18)
    diff = points[:, None, :] - a[None, :, :]
    t = np.clip((diff * d[None, :, :]).sum(axis=2) / seg_len2[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * d[None, :, :]
    dist = np.linalg.norm(points[:, None, :] - proj, axis=2)
    return dist.min(axis=1)


def rasterize(
    layout: RoadLayout,
    trajectory: Trajectory,
    grid_size: int = DEFAULT_GRID_SIZE,
) -> SceneMap:
    """Render the agent-centered three-channel raster for one scene."""
    if grid_size < 32:
        raise ConfigError(f"grid_size must be >= 32, got {grid_size}")
    pose = trajectory.pose()
    tf = GridTransform.for_pose(pose, grid_size)
    centers = tf.cell_centers_world().reshape(-1, 2)

    drivable = layout.contains(centers[:, 0], centers[:, 1]).astype(np.float64)

    lane_d = np.full(len(centers), np.inf)
    for cl in layout.centerlines:
        lane_d = np.minimum(lane_d, _polyline_distance(centers, cl))
    lanes = np.clip(1.0 - lane_d / LANE_HALF_WIDTH, 0.0, 1.0)

    footprint = np.zeros(len(centers))
    past = trajectory.past
    for k, p in enumerate(past):
        intensity = (k + 1) / len(past)
        hit = np.linalg.norm(centers - p, axis=1) <= FOOTPRINT_RADIUS
        footprint = np.maximum(footprint, intensity * hit)

    h = w = grid_size
    grid = np.stack(
        [drivable.reshape(h, w), lanes.reshape(h, w), footprint.reshape(h, w)], axis=2
    )
    return SceneMap(grid=np.ascontiguousarray(grid), transform=tf, pose=pose)
