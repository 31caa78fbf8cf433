"""Metric definitions, hand-computed cases, and invariance properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divtraj import metrics
from divtraj.errors import ShapeError

from helpers import flat_transform

RNG = np.random.default_rng(555)
T_F = 6


def straight(offset=(0.0, 0.0), speed=2.0):
    t = np.arange(1, T_F + 1)[:, None]
    return t * np.array([speed, 0.0]) + np.asarray(offset)


def random_set(n, rng, scale=5.0):
    return rng.normal(size=(n, T_F, 2)) * scale


# ---------------------------------------------------------------------------
# mADE / mFDE


def test_exact_prediction_scores_zero():
    gt = straight()
    preds = np.stack([gt, straight(offset=(4.0, 1.0))])
    assert metrics.made_mfde(preds, gt) == (0.0, 0.0)


def test_constant_offset_three_four_five():
    gt = straight()
    preds = (gt + np.array([3.0, 4.0]))[None]
    made, mfde = metrics.made_mfde(preds, gt)
    assert made == pytest.approx(5.0)
    assert mfde == pytest.approx(5.0)


def test_min_over_two_offsets():
    gt = straight()
    preds = np.stack([gt + np.array([5.0, 0.0]), gt + np.array([0.0, 2.0])])
    made, mfde = metrics.made_mfde(preds, gt)
    assert (made, mfde) == (pytest.approx(2.0), pytest.approx(2.0))


def test_empty_prediction_set_rejected():
    with pytest.raises(ShapeError):
        metrics.made_mfde(np.zeros((0, T_F, 2)), straight())


# ---------------------------------------------------------------------------
# rF


def _preds_with_fdes(gt, fdes):
    """Predictions equal to gt except the final point, displaced laterally."""
    out = []
    for d in fdes:
        p = gt.copy()
        p[-1] += np.array([0.0, d])
        out.append(p)
    return np.stack(out)


def test_rf_identical_predictions_is_one():
    gt = straight()
    preds = np.stack([gt + np.array([0.0, 1.5])] * 4)
    val, capped = metrics.rf(preds, gt)
    assert val == pytest.approx(1.0)
    assert not capped


def test_rf_two_fdes():
    gt = straight()
    val, _ = metrics.rf(_preds_with_fdes(gt, [1.0, 3.0]), gt)
    assert val == pytest.approx(2.0)


def test_rf_one_three_nine():
    gt = straight()
    val, _ = metrics.rf(_preds_with_fdes(gt, [1.0, 1.0, 1.0, 9.0]), gt)
    assert val == pytest.approx(3.0)


def test_rf_capped_when_min_fde_zero():
    gt = straight()
    val, capped = metrics.rf(_preds_with_fdes(gt, [0.0, 2.0]), gt)
    assert val == metrics.RF_CAP
    assert capped


# ---------------------------------------------------------------------------
# ASD / FSD


def test_self_distance_identical_set_is_zero():
    preds = np.stack([straight()] * 3)
    assert metrics.asd_fsd(preds) == (0.0, 0.0)


def test_self_distance_parallel_tracks():
    preds = np.stack([straight(), straight(offset=(0.0, 1.0))])
    asd, fsd = metrics.asd_fsd(preds)
    assert asd == pytest.approx(1.0)
    assert fsd == pytest.approx(1.0)


def test_fsd_three_collinear_endpoints():
    gt = straight()
    preds = _preds_with_fdes(gt, [0.0, 1.0, 3.0])
    # nearest-other final distances: {1, 1, 2} -> mean 4/3
    _, fsd = metrics.asd_fsd(preds)
    assert fsd == pytest.approx(4.0 / 3.0)


def test_self_distance_needs_two():
    with pytest.raises(ShapeError):
        metrics.asd_fsd(straight()[None])


# ---------------------------------------------------------------------------
# DAC / DAO


def _strip_mask(h=10, w=10, cols=slice(0, 5)):
    mask = np.zeros((h, w), bool)
    mask[:, cols] = True
    return mask


def _park(points):
    """One trajectory sitting at each given point for all T_F steps."""
    points = np.asarray(points, float)
    return np.tile(points[:, None, :], (1, T_F, 1))


def test_dac_all_drivable():
    tf = flat_transform(10, 10)
    preds = _park([[1.5, 1.5], [2.5, 3.5], [4.4, 8.8]])
    assert metrics.dac(preds, _strip_mask(), tf) == 1.0


def test_dac_one_of_twelve_exits():
    tf = flat_transform(10, 10)
    pts = [[1.5, float(i) + 0.5] for i in range(10)] + [[2.5, 2.5], [7.5, 2.5]]
    preds = _park(pts)  # the last one sits on non-drivable columns
    assert metrics.dac(preds, _strip_mask(), tf) == pytest.approx(11.0 / 12.0)


def test_single_offroad_point_counts_as_exit():
    tf = flat_transform(10, 10)
    traj = np.tile(np.array([1.5, 1.5]), (T_F, 1))
    traj[3] = [8.5, 1.5]  # one off-road sample among six
    assert metrics.dac(traj[None], _strip_mask(), tf) == 0.0


def test_out_of_extent_counts_as_exit():
    tf = flat_transform(10, 10)
    traj = np.tile(np.array([-5.0, 5.0]), (T_F, 1))
    assert metrics.dac(traj[None], _strip_mask(), tf) == 0.0


def test_dao_all_offroad_is_zero():
    tf = flat_transform(10, 10)
    preds = _park([[7.5, 1.5], [8.5, 8.5]])
    assert metrics.dao(preds, _strip_mask(), tf) == 0.0


def test_dao_single_cell():
    tf = flat_transform(10, 10)
    mask = _strip_mask()
    preds = _park([[1.5, 1.5], [1.5, 1.5]])
    assert metrics.dao(preds, mask, tf) == pytest.approx(1e4 / mask.sum())


def test_dao_doubles_with_disjoint_new_cells():
    tf = flat_transform(10, 10)
    mask = _strip_mask()
    cells_a = [[0.5, float(i) + 0.5] for i in range(6)]
    cells_b = [[2.5, float(i) + 0.5] for i in range(6)]
    half = _park(cells_a)
    full = _park(cells_a + cells_b)
    assert metrics.dao(full, mask, tf) == pytest.approx(2 * metrics.dao(half, mask, tf))


# ---------------------------------------------------------------------------
# invariances


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    preds = random_set(6, rng)
    gt = rng.normal(size=(T_F, 2)) * 5
    perm = rng.permutation(6)
    tf = flat_transform(12, 12)
    mask = rng.random((12, 12)) < 0.5
    mask[0, 0] = True
    for fn in (
        lambda p: metrics.made_mfde(p, gt),
        lambda p: metrics.rf(p, gt)[0],
        lambda p: metrics.asd_fsd(p),
        lambda p: metrics.dac(p, mask, tf),
        lambda p: metrics.dao(p, mask, tf),
    ):
        assert np.allclose(np.asarray(fn(preds)), np.asarray(fn(preds[perm])), atol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_rigid_motion_invariance(seed):
    rng = np.random.default_rng(seed)
    preds = random_set(5, rng)
    gt = rng.normal(size=(T_F, 2)) * 4
    ang = rng.uniform(0, 2 * np.pi)
    shift = rng.normal(size=2) * 30
    c, s = np.cos(ang), np.sin(ang)
    rot = np.array([[c, -s], [s, c]])
    tp = preds @ rot.T + shift
    tg = gt @ rot.T + shift

    a = np.array([*metrics.made_mfde(preds, gt), metrics.rf(preds, gt)[0], *metrics.asd_fsd(preds)])
    b = np.array([*metrics.made_mfde(tp, tg), metrics.rf(tp, tg)[0], *metrics.asd_fsd(tp)])
    np.testing.assert_allclose(a, b, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_rf_at_least_one(seed):
    rng = np.random.default_rng(seed)
    preds = random_set(4, rng)
    gt = rng.normal(size=(T_F, 2))
    val, capped = metrics.rf(preds, gt)
    assert capped or val >= 1.0


def test_mfde_never_exceeds_avg_fde():
    for _ in range(30):
        preds = random_set(5, RNG)
        gt = RNG.normal(size=(T_F, 2))
        avg_fde, min_fde = metrics.fde_stats(preds, gt)
        assert min_fde <= avg_fde + 1e-15


# ---------------------------------------------------------------------------
# report plumbing


def test_eval_report_serialization(tmp_path):
    scenes = []
    for i in range(3):
        preds = random_set(4, RNG)
        gt = RNG.normal(size=(T_F, 2))
        mask = np.ones((10, 10), bool)
        scenes.append(
            metrics.evaluate_scene(f"s{i}", preds, gt, mask, flat_transform(10, 10))
        )
    report = metrics.EvalReport.from_scenes(scenes, n_predictions=4)
    assert report.means["mfde"] <= report.means["avg_fde"] + 1e-15
    report.to_json(tmp_path / "r.json")
    report.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.json").exists()
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert len(text) == 4
    assert "mADE" in report.summary_table() or "made" in report.summary_table()
