"""Centerline-following agent simulation.

At a branching layout the agent picks one route uniformly at random, so a
given past admits several plausible futures while each record carries
exactly one. Speeds carry multiplicative Gaussian noise, giving the
generative model genuine longitudinal variance to learn.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import GeometryError
from .layout import RoadLayout
from .trajectory import DEFAULT_RATE_HZ, DEFAULT_T_FUTURE, DEFAULT_T_PAST, Trajectory

SPEED_RANGE = (4.0, 9.0)  # nominal speed draw, m/s
SPEED_NOISE_SIGMA = 0.1  # multiplicative, per step
SPEED_CLIP = (0.5, 13.5)  # keeps steps below v_max / rate
JUNCTION_GAP_RANGE = (2.0, 10.0)  # metres between current position and the feature


def _arclength_param(route: np.ndarray):
    seg = np.linalg.norm(np.diff(route, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return s


def _point_at(route: np.ndarray, s_knots: np.ndarray, s: np.ndarray) -> np.ndarray:
    x = np.interp(s, s_knots, route[:, 0])
    y = np.interp(s, s_knots, route[:, 1])
    return np.column_stack([x, y])


def simulate_agent(
    layout: RoadLayout,
    seed: int,
    t_p: int = DEFAULT_T_PAST,
    t_f: int = DEFAULT_T_FUTURE,
    rate_hz: float = DEFAULT_RATE_HZ,
    speed_noise: float = SPEED_NOISE_SIGMA,
    rng: Optional[np.random.Generator] = None,
) -> Trajectory:
    """Simulate one agent on the layout; deterministic given the seed."""
    if not layout.routes:
        raise GeometryError("layout has no routes through the spawn region")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([97, layout.seed, seed]))

    route = layout.routes[int(rng.integers(len(layout.routes)))]
    s_knots = _arclength_param(route)
    total_len = float(s_knots[-1])

    v_nominal = rng.uniform(*SPEED_RANGE)
    n_steps = t_p + t_f - 1
    factors = 1.0 + speed_noise * rng.standard_normal(n_steps)
    speeds = np.clip(v_nominal * factors, *SPEED_CLIP)
    step_len = speeds / rate_hz

    gap = rng.uniform(*JUNCTION_GAP_RANGE)
    s_current = layout.junction_arclength - gap

    # arclength of every point; index t_p - 1 is the current position
    past_s = s_current - (np.cumsum(step_len[: t_p - 1][::-1])[::-1])
    future_s = s_current + np.cumsum(step_len[t_p - 1 :])
    s_all = np.concatenate([past_s, [s_current], future_s])

    if s_all[0] < 0.0 or s_all[-1] > total_len:
        raise GeometryError(
            f"no feasible path: trajectory spans [{s_all[0]:.1f}, {s_all[-1]:.1f}] m "
            f"on a route of length {total_len:.1f} m"
        )
    points = _point_at(route, s_knots, s_all)
    return Trajectory(points=points, t_p=t_p, rate_hz=rate_hz)
