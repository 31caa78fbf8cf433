"""Procedural road layouts: drivable polygons, lane centerlines, routes.

Every layout is built in a canonical frame (agent approaching the feature
along a known line) and then placed in the world by a random rigid motion,
so downstream code cannot rely on axis alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import shapely
from shapely.geometry import Polygon
from shapely.ops import unary_union

from ..errors import GeometryError

LAYOUT_KINDS = ("straight", "t-intersection", "crossroad", "curve")

MIN_ROAD_WIDTH = 3.0
MAX_ROAD_WIDTH = 8.0
MIN_CURVE_RADIUS = 8.0

ARM_LENGTH = 110.0  # canonical half-extent of every road arm, metres
ARC_STEP_DEG = 2.0


@dataclass(frozen=True)
class LayoutParams:
    """Geometry knobs; documented ranges are enforced."""

    road_width: float = 6.0
    cross_width: float = 6.0
    curve_radius: float = 20.0
    fillet_radius: float = 3.0

    def validate(self):
        for name, w in (("road_width", self.road_width), ("cross_width", self.cross_width)):
            if not MIN_ROAD_WIDTH <= w <= MAX_ROAD_WIDTH:
                raise GeometryError(
                    f"{name}={w:g} outside the allowed range [{MIN_ROAD_WIDTH}, {MAX_ROAD_WIDTH}]"
                )
        if self.curve_radius < MIN_CURVE_RADIUS:
            raise GeometryError(
                f"curve_radius={self.curve_radius:g} below the minimum {MIN_CURVE_RADIUS}"
            )
        if self.fillet_radius <= 0:
            raise GeometryError("fillet_radius must be positive")


@dataclass
class RoadLayout:
    """Drivable area as a polygon union plus centerlines and drivable routes.

    ``routes`` are full agent paths (polylines, canonical spawn first);
    ``junction_arclength`` is the distance along every route at which the
    branching feature sits (route midpoint for non-branching layouts).
    """

    kind: str
    drivable: shapely.Geometry
    centerlines: List[np.ndarray]
    routes: List[np.ndarray]
    junction_arclength: float
    params: LayoutParams
    seed: int

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        # boundary-inclusive: a point on the road edge counts as drivable
        return shapely.intersects_xy(self.drivable, x, y)

    def polygons(self) -> List[np.ndarray]:
        """Closed boundary rings of the drivable area."""
        geoms = getattr(self.drivable, "geoms", [self.drivable])
        return [np.asarray(g.exterior.coords) for g in geoms]


def _rect(x0, x1, y0, y1) -> Polygon:
    return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def _arc(center, radius, a0_deg, a1_deg, step_deg=ARC_STEP_DEG) -> np.ndarray:
    n = max(2, int(abs(a1_deg - a0_deg) / step_deg) + 1)
    ang = np.deg2rad(np.linspace(a0_deg, a1_deg, n))
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


def _annulus_sector(center, r_in, r_out, a0_deg, a1_deg) -> Polygon:
    outer = _arc(center, r_out, a0_deg, a1_deg)
    inner = _arc(center, r_in, a1_deg, a0_deg)
    return Polygon(np.vstack([outer, inner]))


def _polyline(*chunks) -> np.ndarray:
    """Concatenate point chunks dropping duplicated junction points."""
    parts = [np.atleast_2d(np.asarray(c, dtype=np.float64)) for c in chunks]
    out = [parts[0]]
    for p in parts[1:]:
        if np.allclose(out[-1][-1], p[0]):
            p = p[1:]
        out.append(p)
    return np.vstack(out)


def _turn_fillet(r: float, direction: str) -> np.ndarray:
    """Quarter-circle connecting a northbound approach at (0, -r) to an exit.

    ``left`` exits heading west at (-r, 0); ``right`` heading east at (r, 0).
    """
    if direction == "left":
        return _arc((-r, -r), r, 0.0, 90.0)
    return _arc((r, -r), r, 180.0, 90.0)


def _build_straight(params: LayoutParams):
    L, w = ARM_LENGTH, params.road_width
    drivable = _rect(-L, L, -w / 2, w / 2)
    line = np.array([[-L, 0.0], [L, 0.0]])
    return drivable, [line], [line], ARM_LENGTH  # junction analog at the midpoint


def _build_t_intersection(params: LayoutParams):
    L, wb, ws, r = ARM_LENGTH, params.road_width, params.cross_width, params.fillet_radius
    bar = _rect(-L, L, -wb / 2, wb / 2)
    stem = _rect(-ws / 2, ws / 2, -L, 0.0)
    drivable = unary_union([bar, stem])
    approach = np.array([[0.0, -L], [0.0, -r]])
    routes = [
        _polyline(approach, _turn_fillet(r, "left"), [[-L, 0.0]]),
        _polyline(approach, _turn_fillet(r, "right"), [[L, 0.0]]),
    ]
    centerlines = [np.array([[-L, 0.0], [L, 0.0]]), np.array([[0.0, -L], [0.0, 0.0]])]
    return drivable, centerlines, routes, L


def _build_crossroad(params: LayoutParams):
    L, wx, wy, r = ARM_LENGTH, params.road_width, params.cross_width, params.fillet_radius
    horiz = _rect(-L, L, -wx / 2, wx / 2)
    vert = _rect(-wy / 2, wy / 2, -L, L)
    drivable = unary_union([horiz, vert])
    approach = np.array([[0.0, -L], [0.0, -r]])
    routes = [
        _polyline(approach, _turn_fillet(r, "left"), [[-L, 0.0]]),
        _polyline(np.array([[0.0, -L], [0.0, L]])),
        _polyline(approach, _turn_fillet(r, "right"), [[L, 0.0]]),
    ]
    centerlines = [np.array([[-L, 0.0], [L, 0.0]]), np.array([[0.0, -L], [0.0, L]])]
    return drivable, centerlines, routes, L


def _build_curve(params: LayoutParams):
    L, w, R = ARM_LENGTH, params.road_width, params.curve_radius
    lead_in = _rect(-L, 0.0, -w / 2, w / 2)
    band = _annulus_sector((0.0, R), R - w / 2, R + w / 2, -90.0, 0.0)
    lead_out = _rect(R - w / 2, R + w / 2, R, R + L)
    drivable = unary_union([lead_in, band, lead_out])
    route = _polyline(
        np.array([[-L, 0.0], [0.0, 0.0]]),
        _arc((0.0, R), R, -90.0, 0.0),
        np.array([[R, R], [R, R + L]]),
    )
    return drivable, [route], [route], L  # curve starts at arclength L


_BUILDERS = {
    "straight": _build_straight,
    "t-intersection": _build_t_intersection,
    "crossroad": _build_crossroad,
    "curve": _build_curve,
}


def _random_params(kind: str, rng: np.random.Generator) -> LayoutParams:
    return LayoutParams(
        road_width=float(rng.uniform(4.0, 7.0)),
        cross_width=float(rng.uniform(4.0, 7.0)),
        curve_radius=float(rng.uniform(12.0, 28.0)),
    )


def _apply_rigid(points: np.ndarray, rot: np.ndarray, shift: np.ndarray) -> np.ndarray:
    return points @ rot.T + shift


def generate_layout(
    kind: str,
    seed: int,
    params: Optional[LayoutParams] = None,
    randomize_pose: bool = True,
) -> RoadLayout:
    """Build a road layout of the given kind, deterministic in (kind, seed, params)."""
    if kind not in _BUILDERS:
        raise GeometryError(f"unknown layout kind {kind!r}; expected one of {LAYOUT_KINDS}")
    rng = np.random.default_rng(np.random.SeedSequence([hash_kind(kind), seed]))
    if params is None:
        params = _random_params(kind, rng)
    params.validate()

    drivable, centerlines, routes, junction_s = _BUILDERS[kind](params)
    if not drivable.is_valid:
        raise GeometryError(f"layout {kind!r} produced an invalid (self-intersecting) polygon")

    if randomize_pose:
        theta = rng.uniform(0.0, 2.0 * np.pi)
        shift = rng.uniform(-200.0, 200.0, size=2)
    else:
        theta, shift = 0.0, np.zeros(2)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])

    drivable = shapely.transform(
        drivable, lambda pts: pts @ rot.T + shift, include_z=False
    )
    centerlines = [_apply_rigid(cl, rot, shift) for cl in centerlines]
    routes = [_apply_rigid(r, rot, shift) for r in routes]
    return RoadLayout(
        kind=kind,
        drivable=drivable,
        centerlines=centerlines,
        routes=routes,
        junction_arclength=junction_s,
        params=params,
        seed=seed,
    )


def hash_kind(kind: str) -> int:
    """Stable small integer per layout kind (used to decorrelate RNG streams)."""
    return LAYOUT_KINDS.index(kind) + 1
