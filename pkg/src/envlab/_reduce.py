"""Deterministic pairwise reductions over grid arrays."""
from __future__ import annotations

import numpy as np


def pairwise_sum(values) -> float:
    """Sum a real array by a fixed binary tree.

    Elements are combined as ``a[0::2] + a[1::2]`` level by level (odd
    lengths padded with a trailing zero), so the rounding pattern depends
    only on the array length and never on thread count or memory layout.
    """
    a = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    while a.size > 1:
        if a.size % 2:
            a = np.append(a, 0.0)
        a = a[0::2] + a[1::2]
    return float(a[0])


def grid_mean(values) -> float:
    """Mean over all grid points (the integral over the unit torus)."""
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        raise ValueError("empty array")
    return pairwise_sum(a) / a.size
