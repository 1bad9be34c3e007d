"""Probabilists' Hermite polynomials, multivariate Hermite tensors, and
matricization utilities.

Conventions used throughout the package:

* He_k is the monic probabilists' polynomial (He_0 = 1, He_1 = u,
  He_{k+1} = u He_k - k He_{k-1}); `hermite_value` returns He_k(u)/sqrt(k!),
  which is orthonormal under the standard Gaussian.
* The order-k Hermite tensor over R^d is dense with d^k entries addressed
  by ordered index tuples. The entry at a tuple whose coordinate
  multiplicities are beta equals prod_j He_{beta_j}(x_j) / sqrt(k!).
* Unfolding maps an order-k tensor to a d x d^{k-1} matrix: row i1,
  column (i2, ..., ik) linearized big-endian (C order), 1-based in the
  docs, 0-based in code. This is the single linearization convention used
  repo-wide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .budget import check_budget

# Double-precision recurrence keeps relative error below ~1e-10 up to this
# order; higher orders are refused rather than silently degraded.
MAX_ORDER = 12


def _check_order(k: int) -> None:
    if k < 0:
        raise ValueError(f"Hermite order must be nonnegative, got {k}")
    if k > MAX_ORDER:
        raise ValueError(f"Hermite order {k} exceeds the supported cap {MAX_ORDER}")


def hermite_value(k: int, u: float) -> float:
    """Normalized probabilists' Hermite polynomial He_k(u)/sqrt(k!)."""
    _check_order(k)
    prev, cur = 1.0, float(u)
    if k == 0:
        return 1.0
    for m in range(1, k):
        prev, cur = cur, u * cur - m * prev
    return cur / math.sqrt(math.factorial(k))


def hermite_values(k_max: int, u: np.ndarray) -> np.ndarray:
    """Table of He_m(u)/sqrt(m!) for m = 0..k_max; shape (k_max+1,) + u.shape."""
    _check_order(k_max)
    u = np.asarray(u, dtype=float)
    out = np.empty((k_max + 1,) + u.shape)
    out[0] = 1.0
    if k_max >= 1:
        out[1] = u
    for m in range(1, k_max):
        out[m + 1] = u * out[m] - m * out[m - 1]
    for m in range(2, k_max + 1):
        out[m] /= math.sqrt(math.factorial(m))
    return out


@dataclass
class HermiteTensor:
    """Dense symmetric order-k tensor of normalized Hermite products."""

    order: int
    dim: int
    entries: np.ndarray  # shape (dim,) * order

    def __post_init__(self):
        expected = (self.dim,) * self.order
        if self.entries.shape != expected:
            raise ValueError(f"entries shape {self.entries.shape} != {expected}")


@dataclass
class UnfoldedTensor:
    """d x d^{k-1} matricization of an order-k tensor over R^d."""

    order: int
    dim: int
    data: np.ndarray  # shape (dim, dim ** (order - 1))


@dataclass
class Subspace:
    """A subspace of R^ambient_dim given by an orthonormal column frame.

    `basis` has shape (ambient_dim, s); s may be zero (the empty subspace).
    """

    ambient_dim: int
    basis: np.ndarray = field(default=None)  # type: ignore[assignment]

    ORTHO_TOL = 1e-10

    def __post_init__(self):
        if self.basis is None:
            self.basis = np.zeros((self.ambient_dim, 0))
        self.basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if self.basis.shape[0] != self.ambient_dim:
            raise ValueError(
                f"basis has {self.basis.shape[0]} rows, ambient dim is {self.ambient_dim}"
            )
        s = self.basis.shape[1]
        if s > self.ambient_dim:
            raise ValueError(f"subspace dim {s} exceeds ambient dim {self.ambient_dim}")
        if s:
            gram = self.basis.T @ self.basis
            if not np.allclose(gram, np.eye(s), atol=self.ORTHO_TOL):
                raise ValueError("basis columns are not orthonormal")

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def empty(cls, ambient_dim: int) -> "Subspace":
        return cls(ambient_dim, np.zeros((ambient_dim, 0)))

    @classmethod
    def full(cls, ambient_dim: int) -> "Subspace":
        return cls(ambient_dim, np.eye(ambient_dim))

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def union(self, other: "Subspace") -> "Subspace":
        """Span of the two subspaces, via orthonormalizing the concatenated basis."""
        if other.ambient_dim != self.ambient_dim:
            raise ValueError("ambient dimensions differ")
        stacked = np.hstack([self.basis, other.basis])
        return Subspace(self.ambient_dim, orthonormalize(stacked))

    def complement(self) -> "Subspace":
        """Orthogonal complement within R^ambient_dim."""
        n = self.ambient_dim
        if self.dim == 0:
            return Subspace.full(n)
        if self.dim == n:
            return Subspace.empty(n)
        # Null space of basis^T from the full SVD.
        _, _, vt = np.linalg.svd(self.basis.T, full_matrices=True)
        return Subspace(n, vt[self.dim :].T)

    def coords(self, x: np.ndarray) -> np.ndarray:
        """Coordinates of row vectors x in this subspace's basis."""
        return np.asarray(x) @ self.basis


def orthonormalize(columns: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis for the column span, dropping near-dependent columns."""
    if columns.shape[1] == 0:
        return columns
    q, r = np.linalg.qr(columns)
    diag = np.abs(np.diag(r))
    scale = diag.max() if diag.size else 0.0
    keep = diag > tol * max(scale, 1.0)
    return q[:, keep]


def _monic_tensor_block(x: np.ndarray, k: int) -> np.ndarray:
    """Monic Hermite tensors for a block of points; shape (b,) + (d,)*k.

    Uses the recurrence T_{m+1}[i0, J] = x_{i0} T_m[J] - sum_p 1{i0 = J_p}
    T_{m-1}[J minus p], which reproduces prod_j He_{beta_j}(x_j) entrywise.
    """
    b, d = x.shape
    if k == 0:
        return np.ones(b)
    prev = np.ones(b)
    cur = x.copy()
    idx = np.arange(d)
    for order in range(1, k):
        nxt = x.reshape((b, d) + (1,) * order) * cur[:, None]
        for p in range(1, order + 1):
            view = np.moveaxis(nxt, (1, p + 1), (0, 1))
            # view[idx, idx] has shape (d, b) + remaining axes; prev broadcasts
            # over the leading diagonal axis.
            view[idx, idx] -= prev
        prev, cur = cur, nxt
    return cur


def hermite_tensor_block(x: np.ndarray, k: int) -> np.ndarray:
    """Normalized Hermite tensors for each row of x; shape (b,) + (d,)*k."""
    _check_order(k)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    b, d = x.shape
    check_budget(2 * b * d**k * 8, f"order-{k} Hermite tensors for a block of {b} points")
    return _monic_tensor_block(x, k) / math.sqrt(math.factorial(k))


def hermite_tensor(k: int, x: np.ndarray) -> HermiteTensor:
    """Order-k Hermite tensor at a single point x in R^d."""
    _check_order(k)
    x = np.asarray(x, dtype=float).ravel()
    d = x.shape[0]
    if d < 1:
        raise ValueError("x must have dimension at least 1")
    check_budget(d**k * 8, f"order-{k} Hermite tensor over R^{d}")
    entries = hermite_tensor_block(x[None, :], k)[0]
    return HermiteTensor(order=k, dim=d, entries=np.asarray(entries))


def unfold(t: HermiteTensor) -> UnfoldedTensor:
    """Matricize to d x d^{k-1}; column index is C-order over (i2, ..., ik)."""
    if t.order < 1:
        raise ValueError("unfold requires order >= 1")
    data = np.ascontiguousarray(t.entries).reshape(t.dim, t.dim ** (t.order - 1))
    return UnfoldedTensor(order=t.order, dim=t.dim, data=data)


def fold(u: UnfoldedTensor) -> HermiteTensor:
    """Inverse of unfold (exact on entries)."""
    entries = u.data.reshape((u.dim,) * u.order)
    return HermiteTensor(order=u.order, dim=u.dim, entries=entries)


def tensor_span(t: np.ndarray, tol: float) -> Subspace:
    """Span of the mode-1 matricization of a symmetric tensor.

    Returns the left singular vectors whose singular values exceed
    tol * (largest singular value); the empty subspace for a zero tensor.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t = np.asarray(t, dtype=float)
    r = t.shape[0]
    mat = t.reshape(r, -1)
    if not np.any(mat):
        return Subspace.empty(r)
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    keep = s > tol * s[0]
    return Subspace(r, u[:, keep])
