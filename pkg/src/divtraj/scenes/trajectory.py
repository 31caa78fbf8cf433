"""Trajectories and the agent-centered reference frame."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError

DEFAULT_T_PAST = 12
DEFAULT_T_FUTURE = 6
DEFAULT_RATE_HZ = 2.0
DEFAULT_V_MAX = 15.0


@dataclass(frozen=True)
class AgentPose:
    """Agent position and heading (radians, world frame) at the current instant."""

    position: np.ndarray
    heading: float

    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.heading), np.sin(self.heading)
        return np.array([[c, -s], [s, c]])


@dataclass
class Trajectory:
    """A timestamped 2D path split into past (first t_p points) and future.

    ``points[t_p - 1]`` is the current position. Consecutive displacements
    must stay below v_max / rate for kinematic plausibility.
    """

    points: np.ndarray
    t_p: int = DEFAULT_T_PAST
    rate_hz: float = DEFAULT_RATE_HZ

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ShapeError(f"trajectory points must be (T, 2), got {self.points.shape}")
        if not 0 < self.t_p < len(self.points):
            raise ShapeError(f"split index {self.t_p} outside trajectory of length {len(self.points)}")

    @property
    def t_f(self) -> int:
        return len(self.points) - self.t_p

    @property
    def past(self) -> np.ndarray:
        return self.points[: self.t_p]

    @property
    def future(self) -> np.ndarray:
        return self.points[self.t_p :]

    @property
    def current(self) -> np.ndarray:
        return self.points[self.t_p - 1]

    def pose(self) -> AgentPose:
        """Pose at the current instant; heading from the last past displacement."""
        d = self.points[self.t_p - 1] - self.points[self.t_p - 2]
        return AgentPose(position=self.current.copy(), heading=float(np.arctan2(d[1], d[0])))

    def max_step(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).max())

    def is_kinematically_plausible(self, v_max: float = DEFAULT_V_MAX) -> bool:
        return self.max_step() <= v_max / self.rate_hz + 1e-9


def to_agent_frame(points: np.ndarray, pose: AgentPose) -> np.ndarray:
    """World coordinates -> agent frame (origin at agent, heading along +x)."""
    points = np.asarray(points, dtype=np.float64)
    return (points - pose.position) @ pose.rotation()


def to_world_frame(points: np.ndarray, pose: AgentPose) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points @ pose.rotation().T + pose.position
