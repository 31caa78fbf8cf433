"""Determinantal point process machinery over sets of predicted futures.

The L-ensemble kernel combines an angular term (un-oriented angle between
the segments joining the current position to two predicted endpoints) with
a squared trajectory distance. Minimizing the negated expected cardinality
trace[Id - (L + Id)^-1] pushes the predictions apart. Brute-force subset
enumeration routines serve as independent test oracles for the identities
the trace formula relies on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericalError, ShapeError

KERNEL_KINDS = ("compound", "distance-only", "angle-only")

DEFAULT_JITTER = 1e-8
ALPHA_FLOOR = 1e-8
SEGMENT_EPS = 1e-8  # below this endpoint-segment length the angle degenerates
_ORACLE_MAX_N = 12

# running count of degenerate endpoint segments encountered (angle forced to 0)
DIAGNOSTICS = {"degenerate_endpoints": 0}


@dataclass
class DppKernel:
    """Symmetric PSD similarity matrix over N predicted futures."""

    entries: ad.Tensor  # (N, N), jitter already applied, differentiable
    jitter: float
    kind: str
    alpha: float

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def values(self) -> np.ndarray:
        return self.entries.data

    def values_pre_jitter(self) -> np.ndarray:
        # jitter only ever touches the diagonal, which is pinned to 1 + jitter
        out = self.entries.data.copy()
        np.fill_diagonal(out, 1.0)
        return out


def angular_deviation(past_endpoint, endpoint_i, endpoint_j) -> float:
    """Un-oriented angle in [0, pi] between the two endpoint segments.

    A degenerate segment (endpoint at the current position) yields angle 0
    and bumps the diagnostics counter rather than dividing by zero.
    """
    p = np.asarray(past_endpoint, dtype=np.float64)
    u = np.asarray(endpoint_i, dtype=np.float64) - p
    v = np.asarray(endpoint_j, dtype=np.float64) - p
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= SEGMENT_EPS or nv <= SEGMENT_EPS:
        DIAGNOSTICS["degenerate_endpoints"] += 1
        return 0.0
    if np.array_equal(u, v):
        return 0.0
    c = np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0)
    return float(np.arccos(c))


def _pairwise_angles_op(u: ad.Tensor) -> ad.Tensor:
    """(N, N) matrix of un-oriented angles between endpoint segments.

    Input rows are endpoint offsets from the current position. The output
    is exactly symmetric with an exactly zero diagonal. Where the angle
    sits at an extremum (parallel or anti-parallel segments) or a segment
    is degenerate, the gradient is taken as zero.
    """
    U = u.data
    n = U.shape[0]
    norms = np.linalg.norm(U, axis=1)
    degenerate = norms <= SEGMENT_EPS
    if degenerate.any():
        DIAGNOSTICS["degenerate_endpoints"] += int(degenerate.sum())
    safe = np.where(degenerate, 1.0, norms)

    cos = (U @ U.T) / np.outer(safe, safe)
    cos = np.clip(cos, -1.0, 1.0)
    cos = np.triu(cos, 1)
    cos = cos + cos.T  # exact symmetry; diagonal cos forced to 0, masked below
    valid = ~(degenerate[:, None] | degenerate[None, :])
    theta = np.where(valid, np.arccos(cos), 0.0)
    np.fill_diagonal(theta, 0.0)
    # bitwise-equal segments are parallel by construction: angle exactly 0
    theta[np.all(U[:, None, :] == U[None, :, :], axis=2)] = 0.0

    sin2 = 1.0 - cos * cos
    off = ~np.eye(n, dtype=bool)
    usable = valid & off & (sin2 > 1e-16)
    with np.errstate(divide="ignore"):
        w = np.where(usable, -1.0 / np.sqrt(np.where(usable, sin2, 1.0)), 0.0)

    def bw(g):
        s = (g + g.T) * w  # d loss / d theta_ij, symmetrized, guarded
        inv_n = 1.0 / safe
        # d theta_ij / d u_i = w_ij * (u_j/(n_i n_j) - cos_ij * u_i / n_i^2)
        term1 = (s * inv_n[None, :]) @ U * inv_n[:, None]
        term2 = (s * cos).sum(axis=1)[:, None] * U * (inv_n**2)[:, None]
        du = term1 - term2
        du[degenerate] = 0.0
        return (du,)

    return ad.apply_op(theta, (u,), bw, "pairwise_angles")


def _pairwise_sq_distances(x: ad.Tensor) -> ad.Tensor:
    """(N, N) squared Frobenius distances between flattened trajectories."""
    n = x.shape[0]
    s = ad.sum_(ad.square(x), axis=1, keepdims=True)  # (N, 1)
    ones_row = ad.tensor(np.ones((1, n)))
    ones_col = ad.tensor(np.ones((n, 1)))
    d = s @ ones_row + ones_col @ s.T - 2.0 * (x @ x.T)
    return 0.5 * (d + d.T)  # exact symmetry


def _as_traj_tensor(trajectories) -> ad.Tensor:
    if isinstance(trajectories, ad.Tensor):
        t = trajectories
        if t.ndim != 2 or t.shape[1] % 2 != 0:
            raise ShapeError(f"trajectory tensor must be (N, T_f*2), got {t.shape}")
        return t
    arr = np.asarray(trajectories, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 2:
        arr = arr.reshape(arr.shape[0], -1)
    if arr.ndim != 2 or arr.shape[1] % 2 != 0:
        raise ShapeError(f"trajectories must be (N, T_f, 2) or (N, T_f*2), got {arr.shape}")
    return ad.tensor(arr)


def _inner_values(x: np.ndarray, past_endpoint: np.ndarray, kind: str) -> np.ndarray:
    """Plain-numpy matrix of the kernel exponent terms theta_ij + dist_ij."""
    n = x.shape[0]
    total = np.zeros((n, n))
    if kind != "angle-only":
        # direct differences: exact zeros for identical trajectories
        diff = x[:, None, :] - x[None, :, :]
        total += (diff * diff).sum(axis=2)
    if kind != "distance-only":
        u = x[:, -2:] - past_endpoint
        norms = np.linalg.norm(u, axis=1)
        degenerate = norms <= SEGMENT_EPS
        safe = np.where(degenerate, 1.0, norms)
        cos = np.clip((u @ u.T) / np.outer(safe, safe), -1.0, 1.0)
        theta = np.where(degenerate[:, None] | degenerate[None, :], 0.0, np.arccos(cos))
        theta[np.all(u[:, None, :] == u[None, :, :], axis=2)] = 0.0
        total += theta
    np.fill_diagonal(total, 0.0)
    return total


def calibrate_alpha(
    trajectories,
    past_endpoint,
    kind: str = "compound",
    literal: bool = False,
    eps: float = ALPHA_FLOOR,
) -> float:
    """Bandwidth from the mean of the kernel's inner values for this set.

    Returns 1 / max(mean, eps): the reciprocal keeps the exponents O(1)
    regardless of the set's spatial scale. ``literal=True`` instead returns
    the mean itself (the alternative reading of the calibration rule),
    exposed for comparison. Treated as a constant under differentiation.
    """
    x = _as_traj_tensor(trajectories).data
    if x.shape[0] < 2:
        raise ShapeError("alpha calibration needs at least two trajectories")
    p = np.asarray(past_endpoint, dtype=np.float64)
    m = float(_inner_values(x, p, kind).mean())
    if literal:
        return max(m, eps)
    return 1.0 / max(m, eps)


def build_kernel(
    trajectories,
    past_endpoint,
    kind: str = "compound",
    alpha: Optional[float] = None,
    jitter: float = DEFAULT_JITTER,
) -> DppKernel:
    """L(i, j) = exp(-alpha * (theta_ij + ||traj_i - traj_j||^2_F)).

    ``kind`` drops one of the two exponent terms for the ablation variants.
    The diagonal is pinned to exactly 1 (plus jitter); entries are
    differentiable with respect to the trajectory coordinates, with alpha
    held constant.
    """
    if kind not in KERNEL_KINDS:
        raise ConfigError(f"unknown kernel kind {kind!r}; expected one of {KERNEL_KINDS}")
    x = _as_traj_tensor(trajectories)
    n = x.shape[0]
    if n < 2:
        raise ShapeError(f"a kernel needs at least 2 trajectories, got {n}")
    p = np.asarray(past_endpoint, dtype=np.float64).reshape(2)
    if alpha is None:
        alpha = calibrate_alpha(x, p, kind)
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")

    exponent = None
    if kind != "angle-only":
        exponent = _pairwise_sq_distances(x)
    if kind != "distance-only":
        endpoints = x[:, x.shape[1] - 2 :]
        u = endpoints - ad.tensor(p)
        theta = _pairwise_angles_op(u)
        exponent = theta if exponent is None else exponent + theta

    raw = ad.exp(-float(alpha) * exponent)
    off_diag = ad.tensor(1.0 - np.eye(n))
    pinned = raw * off_diag + ad.tensor((1.0 + jitter) * np.eye(n))
    return DppKernel(entries=pinned, jitter=jitter, kind=kind, alpha=float(alpha))


# ---------------------------------------------------------------------------
# losses and derived quantities


def dpp_loss(kernel: DppKernel) -> ad.Tensor:
    """Negated expected cardinality: trace[(L + Id)^-1] - N, to be minimized."""
    n = kernel.n
    l_plus_i = kernel.entries + ad.tensor(np.eye(n))
    try:
        inv = ad.matrix_inverse(l_plus_i)
    except NumericalError as e:
        raise NumericalError(f"dpp loss: inverse of L + Id failed ({e})") from e
    return ad.trace(inv) - float(n)


def expected_cardinality(entries: np.ndarray) -> float:
    """trace[Id - (L + Id)^-1] evaluated in plain numpy."""
    n = entries.shape[0]
    return float(np.trace(np.eye(n) - np.linalg.inv(entries + np.eye(n))))


def marginal_kernel(entries: np.ndarray) -> np.ndarray:
    """K = (L + Id)^-1 L; entries give item/pair inclusion probabilities."""
    n = entries.shape[0]
    return np.linalg.solve(entries + np.eye(n), entries)


def pair_inclusion_probability(k: np.ndarray, a: int, b: int) -> float:
    """P[A includes {a, b}] = K(a,a) K(b,b) - K(a,b)^2."""
    return float(k[a, a] * k[b, b] - k[a, b] ** 2)


# ---------------------------------------------------------------------------
# brute-force oracles (test references; N <= 12)


def _check_oracle_size(n: int):
    if n > _ORACLE_MAX_N:
        raise ShapeError(f"brute-force oracle limited to N <= {_ORACLE_MAX_N}, got {n}")


def oracle_subset_probability(entries: np.ndarray, subset: Sequence[int]) -> float:
    """P[A = B] = det(L_B) / det(L + Id), by direct determinant evaluation."""
    entries = np.asarray(entries, dtype=np.float64)
    n = entries.shape[0]
    _check_oracle_size(n)
    subset = list(subset)
    if len(set(subset)) != len(subset):
        raise ConfigError(f"subset has repeated indices: {subset}")
    for i in subset:
        if not 0 <= i < n:
            raise ConfigError(f"subset index {i} out of range for N={n}")
    if subset:
        sub = entries[np.ix_(subset, subset)]
        num = float(np.linalg.det(sub))
    else:
        num = 1.0  # determinant of the empty matrix
    return num / float(np.linalg.det(entries + np.eye(n)))


def oracle_expected_cardinality(entries: np.ndarray) -> float:
    """Sum of |B| P[A = B] over all 2^N subsets."""
    entries = np.asarray(entries, dtype=np.float64)
    n = entries.shape[0]
    _check_oracle_size(n)
    total = 0.0
    for r in range(1, n + 1):
        for subset in itertools.combinations(range(n), r):
            total += r * oracle_subset_probability(entries, subset)
    return total


def oracle_pair_inclusion(entries: np.ndarray, a: int, b: int) -> float:
    """P[A includes {a, b}] by enumerating every superset."""
    entries = np.asarray(entries, dtype=np.float64)
    n = entries.shape[0]
    _check_oracle_size(n)
    total = 0.0
    rest = [i for i in range(n) if i not in (a, b)]
    for r in range(len(rest) + 1):
        for extra in itertools.combinations(rest, r):
            total += oracle_subset_probability(entries, sorted((a, b) + extra))
    return total
