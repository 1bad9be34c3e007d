"""Tensorized Gauss-Hermite quadrature for standard Gaussian expectations.

Provides deterministic E[f(Z)] for Z ~ N(0, I_r) at small r, independent of
any Monte-Carlo path. Supported up to r = 3 (node grids grow as nodes^r).
"""

from __future__ import annotations

import numpy as np

MAX_DIM = 3
DEFAULT_NODES = 64


def gauss_hermite_grid(r: int, nodes: int = DEFAULT_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature points (N, r) and weights (N,) for N(0, I_r)."""
    if not 1 <= r <= MAX_DIM:
        raise ValueError(f"quadrature supports 1 <= r <= {MAX_DIM}, got {r}")
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / np.sqrt(2.0 * np.pi)
    axes = np.meshgrid(*([x] * r), indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=1)
    wts = np.ones(1)
    for _ in range(r):
        wts = np.multiply.outer(wts, w).ravel()
    return pts, wts


def gaussian_expectation(f, r: int, nodes: int = DEFAULT_NODES):
    """E[f(Z)] for vectorized f taking an (N, r) array of points."""
    pts, wts = gauss_hermite_grid(r, nodes)
    vals = np.asarray(f(pts))
    return np.tensordot(wts, vals, axes=(0, 0))
