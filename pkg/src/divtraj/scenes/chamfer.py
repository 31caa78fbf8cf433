"""Chamfer distance field over the drivable mask, and differentiable sampling.

The two-pass 3/4 chamfer transform assigns each cell an approximate
distance to the nearest drivable cell (orthogonal step 3, diagonal 4,
rescaled by 1/3 into cell units), then divides by the maximum so values
land in [0, 1]. An all-drivable mask stays all zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..errors import GeometryError, ShapeError
from .raster import GridTransform

_BIG = 1e18


def _chamfer_pass(dist: np.ndarray, reverse: bool) -> np.ndarray:
    """One raster scan; the in-row dependency is a min-plus prefix scan."""
    h, w = dist.shape
    rows = range(h - 1, -1, -1) if reverse else range(h)
    for i in rows:
        cand = dist[i].copy()
        prev = i + 1 if reverse else i - 1
        if 0 <= prev < h:
            up = dist[prev]
            cand = np.minimum(cand, up + 3.0)
            cand[:-1] = np.minimum(cand[:-1], up[1:] + 4.0)
            cand[1:] = np.minimum(cand[1:], up[:-1] + 4.0)
        # left/right neighbour at weight 3: d[j] = min_k<=j (cand[k] + 3|j-k|)
        idx = np.arange(w, dtype=np.float64)
        if reverse:
            e = cand[::-1] - 3.0 * idx
            dist[i] = (3.0 * idx + np.minimum.accumulate(e))[::-1]
        else:
            e = cand - 3.0 * idx
            dist[i] = 3.0 * idx + np.minimum.accumulate(e)
    return dist


@dataclass
class ChamferField:
    """Normalized distance-to-drivable field sharing its raster's transform."""

    values: np.ndarray  # (H, W) in [0, 1], exactly 0 on drivable cells
    transform: GridTransform


def chamfer_transform(drivable_mask: np.ndarray, transform: GridTransform) -> ChamferField:
    mask = np.asarray(drivable_mask) > 0.5
    if mask.ndim != 2:
        raise ShapeError(f"drivable mask must be 2-d, got shape {mask.shape}")
    if not mask.any():
        raise GeometryError("chamfer transform of an empty drivable set")

    dist = np.where(mask, 0.0, _BIG)
    dist = _chamfer_pass(dist, reverse=False)
    dist = _chamfer_pass(dist, reverse=True)
    # dividing the cell-unit distances (weights / 3) by their maximum is the
    # same real number as dividing the integer weight units directly, and the
    # latter keeps exactly-representable ratios exact
    peak = dist.max()
    field = dist / peak if peak > 0.0 else np.zeros_like(dist)
    return ChamferField(values=np.ascontiguousarray(field), transform=transform)


def _bilinear_with_grads(values: np.ndarray, gx: np.ndarray, gy: np.ndarray):
    """Bilinear sample in cell-center coordinates, with d/dgx and d/dgy.

    The valid interpolation hull is [0, W-1] x [0, H-1] in center
    coordinates; coordinates inside the raster but within the half-cell
    border ring are clamped (zero gradient along the clamped axis).
    """
    h, w = values.shape
    u = np.clip(gx - 0.5, 0.0, w - 1.0)
    v = np.clip(gy - 0.5, 0.0, h - 1.0)
    ix_clamped = (u != gx - 0.5)
    iy_clamped = (v != gy - 0.5)

    j0 = np.minimum(np.floor(u).astype(np.int64), w - 2)
    i0 = np.minimum(np.floor(v).astype(np.int64), h - 2)
    a = u - j0
    b = v - i0

    f00 = values[i0, j0]
    f01 = values[i0, j0 + 1]
    f10 = values[i0 + 1, j0]
    f11 = values[i0 + 1, j0 + 1]

    val = (1 - a) * (1 - b) * f00 + a * (1 - b) * f01 + (1 - a) * b * f10 + a * b * f11
    dv_du = (1 - b) * (f01 - f00) + b * (f11 - f10)
    dv_dv = (1 - a) * (f10 - f00) + a * (f11 - f01)
    dv_du = np.where(ix_clamped, 0.0, dv_du)
    dv_dv = np.where(iy_clamped, 0.0, dv_dv)
    return val, dv_du, dv_dv


def sample_field(field: ChamferField, points: "ad.Tensor | np.ndarray") -> ad.Tensor:
    """Differentiable field evaluation at world points (Tensor of shape (P, 2)).

    Points outside the raster extent are charged the maximal penalty 1.0
    with zero gradient, so the layout loss never rewards escaping the map.
    """
    pts = points if isinstance(points, ad.Tensor) else ad.tensor(points)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError(f"sample_field expects (P, 2) points, got {pts.shape}")

    tf = field.transform
    h, w = field.values.shape
    grid = pts.data @ tf.matrix.T + tf.offset
    gx, gy = grid[:, 0], grid[:, 1]
    outside = (gx < 0) | (gx > w) | (gy < 0) | (gy > h)

    val, dv_du, dv_dv = _bilinear_with_grads(field.values, gx, gy)
    val = np.where(outside, 1.0, val)
    dgrid = np.column_stack([dv_du, dv_dv])
    dgrid[outside] = 0.0
    # chain through the affine transform: d val / d world = (dval/dgrid) @ matrix
    dworld = dgrid @ tf.matrix

    def bw(g):
        return (g[:, None] * dworld,)

    return ad.apply_op(val, (pts,), bw, "sample_field")
