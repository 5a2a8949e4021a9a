"""Batched closed-form linear algebra for the 1x1 and 2x2 matrices on grid nodes.

The flow loop touches every node many times per step; these avoid LAPACK
dispatch overhead and keep reduction order fixed for bit-stable reruns.
"""

from __future__ import annotations

import numpy as np

__all__ = ["bdet", "bsolve", "bmatmul", "sym_eig_range"]


def bdet(m):
    """Determinant over the trailing (n, n) axes, n in {1, 2}."""
    n = m.shape[-1]
    if n == 1:
        return m[..., 0, 0]
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def bsolve(m, v):
    """Solve m @ x = v over the trailing axes, v shape (..., n)."""
    n = m.shape[-1]
    if n == 1:
        return v / m[..., 0, 0:1]
    det = bdet(m)
    x0 = (m[..., 1, 1] * v[..., 0] - m[..., 0, 1] * v[..., 1]) / det
    x1 = (-m[..., 1, 0] * v[..., 0] + m[..., 0, 0] * v[..., 1]) / det
    return np.stack([x0, x1], axis=-1)


def bmatmul(a, b):
    """Product over trailing (n, n) axes without the generic einsum dispatch."""
    n = a.shape[-1]
    if n == 1:
        return a * b
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    for i in range(2):
        for j in range(2):
            out[..., i, j] = a[..., i, 0] * b[..., 0, j] + a[..., i, 1] * b[..., 1, j]
    return out


def sym_eig_range(g):
    """(lambda_min, lambda_max) of symmetric matrices with trailing (n, n), n <= 2."""
    n = g.shape[-1]
    if n == 1:
        lam = g[..., 0, 0]
        return lam, lam
    half_tr = 0.5 * (g[..., 0, 0] + g[..., 1, 1])
    # discriminant of the characteristic polynomial, clipped against round-off
    gap = np.sqrt(np.maximum(0.25 * (g[..., 0, 0] - g[..., 1, 1]) ** 2 + g[..., 0, 1] * g[..., 1, 0], 0.0))
    return half_tr - gap, half_tr + gap
