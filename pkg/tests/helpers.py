"""Shared test oracles: finite differences and brute-force references."""

from __future__ import annotations

from typing import Callable, List, Sequence

import numpy as np


def flat_transform(h, w, cell=1.0):
    """World == grid * cell, no rotation; handy for synthetic rasters."""
    from divtraj.scenes.raster import GridTransform

    return GridTransform(
        matrix=np.eye(2) / cell,
        offset=np.zeros(2),
        shape=(h, w),
        anchor=(0, 0),
        cell_m=cell,
    )


def numeric_grad(
    f: Callable[[Sequence[np.ndarray]], float],
    arrays: Sequence[np.ndarray],
    step: float = 1e-5,
) -> List[np.ndarray]:
    """Central finite differences of a scalar function, per input element."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(arrays)
            flat[i] = orig - step
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    """Relative comparison suited to gradient checks (rtol on the larger magnitude)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / rtol)
    err = np.abs(analytic - numeric) / scale
    assert err.max() <= rtol, f"gradient mismatch: max rel err {err.max():.3e}"
