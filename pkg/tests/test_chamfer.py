"""Chamfer field correctness and differentiable sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divtraj import autodiff as ad
from divtraj.errors import GeometryError
from divtraj.scenes import chamfer_transform, generate_layout, rasterize, sample_field, simulate_agent
from divtraj.scenes.raster import GridTransform

from helpers import assert_grads_close, flat_transform, numeric_grad


def brute_force_chamfer(mask):
    """Oracle: min over drivable cells of the 3/4 mask metric, in cell units."""
    h, w = mask.shape
    driv = np.argwhere(mask)
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            if mask[i, j]:
                continue
            d = np.abs(driv - np.array([i, j]))
            lo = d.min(axis=1)
            hi = d.max(axis=1)
            out[i, j] = (4.0 * lo + 3.0 * (hi - lo)).min() / 3.0
    peak = out.max()
    return out / peak if peak > 0 else out


def test_all_drivable_mask_is_all_zeros():
    mask = np.ones((6, 6), bool)
    field = chamfer_transform(mask, flat_transform(6, 6))
    np.testing.assert_array_equal(field.values, np.zeros((6, 6)))


def test_empty_drivable_set_rejected():
    with pytest.raises(GeometryError):
        chamfer_transform(np.zeros((4, 4), bool), flat_transform(4, 4))


def test_single_cell_5x5_hand_computed():
    mask = np.zeros((5, 5), bool)
    mask[2, 2] = True
    field = chamfer_transform(mask, flat_transform(5, 5))
    # two-pass 3/4 chamfer distances (weight units), worked by hand:
    raw = np.array(
        [
            [8, 7, 6, 7, 8],
            [7, 4, 3, 4, 7],
            [6, 3, 0, 3, 6],
            [7, 4, 3, 4, 7],
            [8, 7, 6, 7, 8],
        ],
        dtype=np.float64,
    )
    # scaled by 1/3 the orthogonal neighbours are 1.0 and diagonals 4/3;
    # normalization divides by the corner value 8/3
    np.testing.assert_array_equal(field.values, raw / 8.0)
    assert field.values[0, 0] == 1.0
    assert field.values[2, 1] == pytest.approx((3 / 3) / (8 / 3))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_two_pass_matches_brute_force_metric(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((7, 9)) < 0.25
    if not mask.any():
        mask[3, 4] = True
    field = chamfer_transform(mask, flat_transform(7, 9))
    np.testing.assert_allclose(field.values, brute_force_chamfer(mask), atol=1e-12)


@pytest.mark.parametrize("kind", ["straight", "t-intersection", "crossroad", "curve"])
def test_generated_layouts_zero_on_drivable_positive_elsewhere(kind):
    lay = generate_layout(kind, 13)
    traj = simulate_agent(lay, 13)
    smap = rasterize(lay, traj)
    field = chamfer_transform(smap.drivable_mask, smap.transform)
    assert (field.values[smap.drivable_mask] == 0.0).all()
    assert (field.values[~smap.drivable_mask] > 0.0).all()
    assert field.values.max() <= 1.0


# ---------------------------------------------------------------------------
# sampling


def _ramp_field():
    """Column j has value j / (w - 1): a linear ramp from 0 to 1."""
    h, w = 4, 6
    vals = np.tile(np.linspace(0.0, 1.0, w), (h, 1))
    from divtraj.scenes.chamfer import ChamferField

    return ChamferField(values=vals, transform=flat_transform(h, w))


def test_sample_at_drivable_cell_center_is_zero():
    mask = np.zeros((5, 5), bool)
    mask[2, 2] = True
    field = chamfer_transform(mask, flat_transform(5, 5))
    # cell (2,2) center in world coordinates is (2.5, 2.5)
    out = sample_field(field, np.array([[2.5, 2.5]]))
    assert out.data[0] == 0.0


def test_sample_midway_between_zero_and_one_cells():
    field = _ramp_field()
    # halfway between centers of columns 0 (value 0) and 5 (value 1)
    mid_val = sample_field(field, np.array([[3.0, 1.5]])).data[0]
    assert mid_val == pytest.approx(0.5, abs=1e-12)


def test_sample_outside_extent_is_one_with_zero_gradient():
    field = _ramp_field()
    pts = ad.tensor(np.array([[-5.0, 1.0], [100.0, 1.0]]), requires_grad=True)
    out = sample_field(field, pts)
    np.testing.assert_array_equal(out.data, [1.0, 1.0])
    out.sum().backward()
    np.testing.assert_array_equal(pts.grad, np.zeros((2, 2)))


def test_sample_gradient_matches_finite_differences():
    lay = generate_layout("t-intersection", 21)
    traj = simulate_agent(lay, 21)
    smap = rasterize(lay, traj)
    field = chamfer_transform(smap.drivable_mask, smap.transform)

    rng = np.random.default_rng(0)
    # random world points within the raster, away from cell boundaries
    centers = smap.transform.cell_centers_world()
    ii = rng.integers(1, 63, size=12)
    jj = rng.integers(1, 63, size=12)
    pts = centers[ii, jj] + rng.uniform(-0.2, 0.2, size=(12, 2)) * smap.transform.cell_m

    t = ad.tensor(pts, requires_grad=True)
    w = rng.normal(size=12)
    (sample_field(field, t) * ad.tensor(w)).sum().backward()
    (num,) = numeric_grad(
        lambda arrs: float((sample_field(field, ad.tensor(arrs[0])).data * w).sum()),
        [pts],
        step=1e-4,
    )
    assert_grads_close(t.grad, num, rtol=1e-4, atol=1e-6)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_sampling_is_continuous(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((8, 8)) < 0.4
    if not mask.any():
        mask[4, 4] = True
    field = chamfer_transform(mask, flat_transform(8, 8))
    p = rng.uniform(0.6, 7.4, size=2)
    q = p + rng.uniform(-1e-6, 1e-6, size=2)
    a = sample_field(field, p[None, :]).data[0]
    b = sample_field(field, q[None, :]).data[0]
    assert abs(a - b) < 1e-4
