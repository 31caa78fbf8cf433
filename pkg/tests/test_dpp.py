"""DPP kernels, calibration, the expected-cardinality loss, and its oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divtraj import autodiff as ad
from divtraj import dpp
from divtraj.errors import ConfigError, ShapeError

from helpers import assert_grads_close, numeric_grad

RNG = np.random.default_rng(424242)
ORIGIN = np.zeros(2)


def random_psd(n, rng, rank=None):
    a = rng.normal(size=(n, rank or n + 1))
    return a @ a.T


def random_traj_set(n, t_f, rng, scale=3.0):
    base = rng.normal(size=(n, t_f, 2)) * scale
    return base + rng.normal(size=2) * 2.0


# ---------------------------------------------------------------------------
# angles


def test_angle_identical_endpoints_is_zero():
    assert dpp.angular_deviation(ORIGIN, [2.0, 1.0], [2.0, 1.0]) == 0.0


def test_angle_orthogonal_is_half_pi():
    assert dpp.angular_deviation(ORIGIN, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(np.pi / 2)


def test_angle_opposite_is_pi():
    assert dpp.angular_deviation(ORIGIN, [1.0, 0.0], [-1.0, 0.0]) == pytest.approx(np.pi)


def test_degenerate_endpoint_counts_and_returns_zero():
    before = dpp.DIAGNOSTICS["degenerate_endpoints"]
    assert dpp.angular_deviation(ORIGIN, [0.0, 0.0], [1.0, 0.0]) == 0.0
    assert dpp.DIAGNOSTICS["degenerate_endpoints"] == before + 1


# ---------------------------------------------------------------------------
# kernel construction


def test_kernel_hand_evaluated_entry():
    # endpoints (1,0) and (0,1) from the origin: theta = pi/2, squared dist = 2
    trajs = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    kern = dpp.build_kernel(trajs, ORIGIN, kind="compound", alpha=0.5)
    expected = math.exp(-0.5 * (math.pi / 2 + 2.0))
    assert round(expected, 4) == 0.1677
    off = kern.values()[0, 1]
    assert off == pytest.approx(expected, rel=1e-12)


def test_identical_trajectories_give_unit_offdiagonal():
    traj = RNG.normal(size=(1, 6, 2))
    trajs = np.concatenate([traj, traj], axis=0)
    kern = dpp.build_kernel(trajs, ORIGIN, alpha=1.0)
    assert kern.values()[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_kernel_diagonal_is_one_before_jitter():
    trajs = random_traj_set(6, 6, RNG)
    kern = dpp.build_kernel(trajs, trajs[0, 0], kind="compound")
    np.testing.assert_array_equal(np.diag(kern.values_pre_jitter()), np.ones(6))


@pytest.mark.parametrize("kind", dpp.KERNEL_KINDS)
def test_kernel_symmetric_and_psd(kind):
    for seed in range(30):
        rng = np.random.default_rng(seed)
        trajs = random_traj_set(8, 6, rng, scale=rng.uniform(0.1, 20.0))
        kern = dpp.build_kernel(trajs, rng.normal(size=2), kind=kind)
        v = kern.values()
        np.testing.assert_array_equal(v, v.T)
        assert np.linalg.eigvalsh(v).min() >= -1e-9


def test_kernel_rejects_bad_args():
    trajs = random_traj_set(3, 6, RNG)
    with pytest.raises(ConfigError):
        dpp.build_kernel(trajs, ORIGIN, alpha=-1.0)
    with pytest.raises(ConfigError):
        dpp.build_kernel(trajs, ORIGIN, kind="gaussian")
    with pytest.raises(ShapeError):
        dpp.build_kernel(trajs[:1], ORIGIN)


# ---------------------------------------------------------------------------
# alpha calibration


def test_alpha_matches_brute_force_double_sum():
    trajs = random_traj_set(5, 6, RNG)
    flat = trajs.reshape(5, -1)
    n = 5
    total = 0.0
    for i in range(n):
        for j in range(n):
            d = float(((flat[i] - flat[j]) ** 2).sum())
            th = dpp.angular_deviation(ORIGIN, trajs[i, -1], trajs[j, -1])
            total += th + d
    m = total / n**2
    assert dpp.calibrate_alpha(trajs, ORIGIN) == pytest.approx(1.0 / m, rel=1e-12)
    assert dpp.calibrate_alpha(trajs, ORIGIN, literal=True) == pytest.approx(m, rel=1e-12)


def test_alpha_quarter_from_constructed_set():
    # mean inner value: (theta + dist) / 2 with theta = pi/2 and dist = 2 a^2;
    # choosing a so that theta + dist = 8 gives mean 4 and alpha  0.25
    a = math.sqrt((8.0 - math.pi / 2) / 2.0)
    trajs = np.array([[[a, 0.0]], [[0.0, a]]])
    assert dpp.calibrate_alpha(trajs, ORIGIN) == pytest.approx(0.25, rel=1e-12)


def test_alpha_capped_for_identical_set():
    traj = RNG.normal(size=(1, 6, 2))
    trajs = np.concatenate([traj, traj, traj], axis=0)
    assert dpp.calibrate_alpha(trajs, ORIGIN) == pytest.approx(1.0 / dpp.ALPHA_FLOOR)


def test_distance_only_kernel_scale_invariant_with_calibration():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        trajs = random_traj_set(7, 6, rng)
        for c in (0.1, 3.0, 250.0):
            k1 = dpp.build_kernel(trajs, ORIGIN, kind="distance-only")
            k2 = dpp.build_kernel(trajs * c, ORIGIN * c, kind="distance-only")
            assert np.abs(k1.values() - k2.values()).max() < 1e-12


def test_compound_kernel_exponents_stay_order_one_under_scaling():
    trajs = random_traj_set(8, 6, RNG)
    for c in (0.5, 10.0):
        kern = dpp.build_kernel(trajs * c, ORIGIN, kind="compound")
        off = kern.values_pre_jitter()[~np.eye(8, dtype=bool)]
        exponents = -np.log(np.maximum(off, 1e-300))
        assert exponents.mean() < 10.0  # scale-adapted alpha keeps exp args O(1)


# ---------------------------------------------------------------------------
# the loss (Eq. 3 shape) and its closed-form cases


def _kernel_from_matrix(m):
    return dpp.DppKernel(entries=ad.tensor(m), jitter=0.0, kind="compound", alpha=1.0)


def test_loss_identity_kernel():
    loss = dpp.dpp_loss(_kernel_from_matrix(np.eye(2)))
    assert loss.item() == pytest.approx(-1.0, abs=1e-14)


def test_loss_all_ones_kernel():
    # (L + I) = [[2,1],[1,2]]; inverse has trace 4/3; loss = 4/3 - 2 = -2/3
    loss = dpp.dpp_loss(_kernel_from_matrix(np.ones((2, 2))))
    assert loss.item() == pytest.approx(-2.0 / 3.0, abs=1e-14)


@pytest.mark.parametrize("n", [3, 6, 12])
def test_identical_trajectories_collapse_to_effective_size_one(n):
    # all-ones kernel has eigenvalues {N, 0, ...}: E|A| = N / (N + 1)
    ec = dpp.expected_cardinality(np.ones((n, n)))
    assert ec == pytest.approx(n / (n + 1), abs=1e-12)
    traj = RNG.normal(size=(1, 6, 2))
    trajs = np.repeat(traj, n, axis=0)
    kern = dpp.build_kernel(trajs, ORIGIN, alpha=1.0, jitter=0.0)
    assert -dpp.dpp_loss(kern).item() == pytest.approx(n / (n + 1), abs=1e-9)


def test_loss_gradient_matches_finite_differences():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        trajs = random_traj_set(5, 4, rng)
        flat = trajs.reshape(5, -1)
        past = rng.normal(size=2)
        alpha = dpp.calibrate_alpha(flat, past)

        t = ad.tensor(flat, requires_grad=True)
        dpp.dpp_loss(dpp.build_kernel(t, past, alpha=alpha)).backward()

        def f(arrs):
            kern = dpp.build_kernel(ad.tensor(arrs[0]), past, alpha=alpha)
            return dpp.dpp_loss(kern).item()

        (num,) = numeric_grad(f, [flat])
        assert_grads_close(t.grad, num, rtol=1e-4, atol=1e-7)


def test_loss_monotone_under_repulsion():
    # others clustered near angle 0; moving trajectory 0 farther in angle and
    # distance from every other must not increase the loss
    rng = np.random.default_rng(3)
    n, t_f = 6, 4
    cluster = random_traj_set(n - 1, t_f, rng, scale=0.5) + np.array([8.0, 0.0])
    losses = []
    for radius, ang in [(6.0, 0.9), (9.0, 1.4), (13.0, 2.0), (18.0, 2.6)]:
        endpoint = radius * np.array([np.cos(ang), np.sin(ang)])
        mover = np.linspace(0.2, 1.0, t_f)[:, None] * endpoint
        trajs = np.concatenate([mover[None], cluster], axis=0)
        kern = dpp.build_kernel(trajs, ORIGIN, alpha=0.05)
        losses.append(dpp.dpp_loss(kern).item())
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


# ---------------------------------------------------------------------------
# oracles: subset enumeration against closed forms


def test_identity_kernel_subset_probabilities():
    eye = np.eye(2)
    for subset, p in [((), 0.25), ((0,), 0.25), ((1,), 0.25), ((0, 1), 0.25)]:
        assert dpp.oracle_subset_probability(eye, subset) == pytest.approx(p, abs=1e-14)


def test_all_ones_kernel_never_cooccurs():
    ones = np.ones((2, 2))
    assert dpp.oracle_subset_probability(ones, (0, 1)) == pytest.approx(0.0, abs=1e-14)


def test_subset_probability_index_errors():
    with pytest.raises(ConfigError):
        dpp.oracle_subset_probability(np.eye(3), (0, 5))
    with pytest.raises(ConfigError):
        dpp.oracle_subset_probability(np.eye(3), (1, 1))


@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
@settings(max_examples=40, deadline=None)
def test_subset_probabilities_sum_to_one(seed, n):
    import itertools

    l = random_psd(n, np.random.default_rng(seed))
    total = sum(
        dpp.oracle_subset_probability(l, s)
        for r in range(n + 1)
        for s in itertools.combinations(range(n), r)
    )
    assert abs(total - 1.0) < 1e-10


def test_expected_cardinality_enumeration_equals_trace_formula():
    for seed in range(10):
        l = random_psd(4, np.random.default_rng(seed))
        assert dpp.oracle_expected_cardinality(l) == pytest.approx(
            dpp.expected_cardinality(l), abs=1e-10
        )


def test_eigenvalue_route_diag_kernel():
    # eigenvalues {3, 0}: E|A| = 3/4 + 0 = 3/4
    l = np.diag([3.0, 0.0])
    assert dpp.expected_cardinality(l) == pytest.approx(0.75, abs=1e-14)
    assert dpp.oracle_expected_cardinality(l) == pytest.approx(0.75, abs=1e-12)


# ---------------------------------------------------------------------------
# marginal kernel


def test_marginal_kernel_identity_case():
    k = dpp.marginal_kernel(np.eye(3))
    np.testing.assert_allclose(k, 0.5 * np.eye(3), atol=1e-14)
    assert k[0, 0] == pytest.approx(0.5)  # P[A contains item a]


def test_marginal_kernel_eigenvalues_and_eigenvectors():
    l = random_psd(5, np.random.default_rng(8))
    k = dpp.marginal_kernel(l)
    lam, vecs = np.linalg.eigh(l)
    klam = np.sort(np.linalg.eigvalsh(k))
    np.testing.assert_allclose(klam, np.sort(lam / (1 + lam)), atol=1e-10)
    assert (klam >= 0).all() and (klam < 1).all()
    for i in range(5):
        v = vecs[:, i]
        np.testing.assert_allclose(k @ v, (lam[i] / (1 + lam[i])) * v, atol=1e-10)


def test_pair_inclusion_matches_enumeration():
    for seed in range(8):
        l = random_psd(4, np.random.default_rng(seed))
        k = dpp.marginal_kernel(l)
        for a, b in [(0, 1), (1, 3), (2, 3)]:
            assert dpp.pair_inclusion_probability(k, a, b) == pytest.approx(
                dpp.oracle_pair_inclusion(l, a, b), abs=1e-10
            )


def test_oracle_size_guard():
    with pytest.raises(ShapeError):
        dpp.oracle_expected_cardinality(np.eye(13))
