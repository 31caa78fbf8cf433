"""Layout generation, agent simulation, rasterization, dataset round-trips."""

import numpy as np
import pytest
from shapely.geometry import Polygon

from divtraj.errors import ConfigError, GeometryError
from divtraj.scenes import (
    GridTransform,
    LayoutParams,
    RoadLayout,
    Trajectory,
    generate_dataset,
    generate_layout,
    load_dataset,
    rasterize,
    simulate_agent,
)
from divtraj.scenes.layout import ARM_LENGTH


# ---------------------------------------------------------------------------
# layouts


def test_straight_is_single_strip():
    lay = generate_layout("straight", 0, LayoutParams(road_width=6.0), randomize_pose=False)
    assert lay.drivable.area == pytest.approx(2 * ARM_LENGTH * 6.0)
    minx, miny, maxx, maxy = lay.drivable.bounds
    assert (miny, maxy) == (-3.0, 3.0)


def test_crossroad_is_union_of_two_strips():
    p = LayoutParams(road_width=5.0, cross_width=4.0)
    lay = generate_layout("crossroad", 3, p, randomize_pose=False)
    expect = 2 * ARM_LENGTH * 5.0 + 2 * ARM_LENGTH * 4.0 - 5.0 * 4.0
    assert lay.drivable.area == pytest.approx(expect)


@pytest.mark.parametrize("kind", ["straight", "t-intersection", "crossroad", "curve"])
def test_layout_deterministic_for_seed(kind):
    a = generate_layout(kind, 42)
    b = generate_layout(kind, 42)
    for pa, pb in zip(a.polygons(), b.polygons()):
        np.testing.assert_array_equal(pa, pb)
    for ra, rb in zip(a.routes, b.routes):
        np.testing.assert_array_equal(ra, rb)


def test_layout_rejects_bad_geometry():
    with pytest.raises(GeometryError, match="road_width"):
        generate_layout("straight", 0, LayoutParams(road_width=2.0))
    with pytest.raises(GeometryError, match="curve_radius"):
        generate_layout("curve", 0, LayoutParams(curve_radius=5.0))
    with pytest.raises(GeometryError, match="unknown"):
        generate_layout("roundabout", 0)


@pytest.mark.parametrize("kind", ["t-intersection", "crossroad", "curve"])
def test_routes_stay_on_drivable_area(kind):
    lay = generate_layout(kind, 7, randomize_pose=False)
    for route in lay.routes:
        inside = lay.contains(route[:, 0], route[:, 1])
        assert inside.all()


# ---------------------------------------------------------------------------
# simulation


def test_straight_zero_noise_collinear_equispaced():
    lay = generate_layout("straight", 5, randomize_pose=False)
    traj = simulate_agent(lay, 5, speed_noise=0.0)
    steps = np.diff(traj.points, axis=0)
    np.testing.assert_allclose(steps - steps[0], 0.0, atol=1e-9)


def test_simulation_deterministic():
    lay = generate_layout("crossroad", 9)
    a = simulate_agent(lay, 123)
    b = simulate_agent(lay, 123)
    np.testing.assert_array_equal(a.points, b.points)


def test_kinematic_plausibility():
    for seed in range(20):
        lay = generate_layout("curve", seed)
        traj = simulate_agent(lay, seed)
        assert traj.is_kinematically_plausible()


def test_t_intersection_branches_uniform():
    lay = generate_layout("t-intersection", 11, randomize_pose=False)
    n = 10_000
    left = 0
    for seed in range(n):
        traj = simulate_agent(lay, seed)
        left += traj.future[-1, 0] < 0.0
    assert abs(left / n - 0.5) <= 0.02


@pytest.mark.parametrize("kind", ["straight", "t-intersection", "crossroad", "curve"])
def test_future_always_drivable(kind):
    for seed in range(10):
        lay = generate_layout(kind, seed)
        traj = simulate_agent(lay, seed)
        assert lay.contains(traj.future[:, 0], traj.future[:, 1]).all()


def test_too_short_route_is_rejected():
    short = np.array([[0.0, 0.0], [30.0, 0.0]])
    lay = RoadLayout(
        kind="straight",
        drivable=Polygon([(-1, -3), (31, -3), (31, 3), (-1, 3)]),
        centerlines=[short],
        routes=[short],
        junction_arclength=15.0,
        params=LayoutParams(),
        seed=0,
    )
    with pytest.raises(GeometryError, match="feasible"):
        simulate_agent(lay, 0)


# ---------------------------------------------------------------------------
# rasterization


def _square_layout(half=300.0):
    line = np.array([[-half, 0.0], [half, 0.0]])
    return RoadLayout(
        kind="straight",
        drivable=Polygon([(-half, -half), (half, -half), (half, half), (-half, half)]),
        centerlines=[line],
        routes=[line],
        junction_arclength=half,
        params=LayoutParams(),
        seed=0,
    )


def _straight_trajectory(speed=6.0):
    t = np.arange(18)
    pts = np.column_stack([t * speed / 2.0, np.zeros(18)])
    return Trajectory(points=pts, t_p=12)


def test_all_drivable_layout_gives_all_ones():
    smap = rasterize(_square_layout(), _straight_trajectory())
    assert (smap.drivable == 1.0).all()


def test_grid_size_minimum():
    with pytest.raises(ConfigError):
        rasterize(_square_layout(), _straight_trajectory(), grid_size=16)


def test_anchor_cell_roundtrip():
    lay = generate_layout("t-intersection", 2)
    traj = simulate_agent(lay, 2)
    smap = rasterize(lay, traj)
    tf = smap.transform
    r, c = tf.anchor
    world = tf.grid_to_world(np.array([[c + 0.5, r + 0.5]]))[0]
    err = np.linalg.norm(world - traj.current)
    assert err < 0.5 * tf.cell_m


def test_channels_in_range():
    lay = generate_layout("crossroad", 4)
    traj = simulate_agent(lay, 4)
    smap = rasterize(lay, traj)
    assert set(np.unique(smap.grid[:, :, 0])) <= {0.0, 1.0}
    assert smap.grid.min() >= 0.0 and smap.grid.max() <= 1.0
    # footprint marks the agent's current cell at full intensity
    r, c = smap.transform.anchor
    assert smap.grid[r, c, 2] == 1.0


def _rigid(points, theta, shift):
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T + np.asarray(shift)


def _edge_cells(mask):
    """Cells adjacent (8-neighbourhood) to the opposite value."""
    edge = np.zeros_like(mask, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            shifted = np.roll(np.roll(mask, di, axis=0), dj, axis=1)
            edge |= shifted != mask
    return edge


def test_raster_invariant_to_joint_world_rotation():
    import shapely

    lay = generate_layout("t-intersection", 8, randomize_pose=False)
    traj = simulate_agent(lay, 8)
    theta, shift = 0.7, (40.0, -25.0)

    moved = RoadLayout(
        kind=lay.kind,
        drivable=shapely.transform(lay.drivable, lambda p: _rigid(p, theta, shift)),
        centerlines=[_rigid(cl, theta, shift) for cl in lay.centerlines],
        routes=[_rigid(r, theta, shift) for r in lay.routes],
        junction_arclength=lay.junction_arclength,
        params=lay.params,
        seed=lay.seed,
    )
    moved_traj = Trajectory(points=_rigid(traj.points, theta, shift), t_p=traj.t_p)

    a = rasterize(lay, traj).drivable_mask
    b = rasterize(moved, moved_traj).drivable_mask
    mismatch = a != b
    # rasterization tolerance: disagreements only on boundary-adjacent cells
    assert mismatch.mean() < 0.03
    assert (mismatch & ~(_edge_cells(a) | _edge_cells(b))).sum() == 0


# ---------------------------------------------------------------------------
# dataset round-trip


def test_dataset_roundtrip_and_byte_determinism(tmp_path):
    d1 = generate_dataset(tmp_path / "a", n_scenes=8, master_seed=77)
    d2 = generate_dataset(tmp_path / "b", n_scenes=8, master_seed=77)
    assert (tmp_path / "a/index.json").read_bytes() == (tmp_path / "b/index.json").read_bytes()
    r = d1.records[0]
    assert (tmp_path / f"a/rasters/{r.id}.bin").read_bytes() == (
        tmp_path / f"b/rasters/{r.id}.bin"
    ).read_bytes()

    loaded = load_dataset(tmp_path / "a")
    assert len(loaded) == 8
    for orig, back in zip(d1.records, loaded.records):
        assert orig.id == back.id
        np.testing.assert_array_equal(orig.trajectory.points, back.trajectory.points)
        np.testing.assert_array_equal(orig.scene_map().grid, back.scene_map().grid)


def test_dataset_future_on_drivable_cells(tmp_path):
    ds = generate_dataset(tmp_path / "d", n_scenes=6, master_seed=3)
    for rec in ds.records:
        smap = rec.scene_map()
        cells = smap.transform.cell_of(rec.trajectory.future)
        assert smap.drivable_mask[cells[:, 0], cells[:, 1]].all()


def test_dataset_rejects_bad_mix(tmp_path):
    with pytest.raises(ConfigError):
        generate_dataset(tmp_path / "x", n_scenes=1, master_seed=0, layout_mix={"loop": 1.0})
