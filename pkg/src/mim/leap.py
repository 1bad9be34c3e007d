"""Brute-force leap analysis of a link in its intrinsic space R^r.

Everything here conditions Monte-Carlo draws of (z, y) on an augmented
label (the label plus the coordinates of z inside an already-identified
subspace S) and averages Hermite tensors of the remaining coordinates.
The total conditional signal at order k is estimated without plug-in bias
by crossing two half-sample cell means; the span of the conditional
second-moment tensor drives the subspace recursion.

Positivity of the population signal is undecidable from samples, so the
decision rule everywhere is `estimate > tol`, and every report carries the
tolerance it used.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .hermite import MAX_ORDER, Subspace, hermite_tensor_block, orthonormalize, tensor_span
from .models import sample_intrinsic
from .quadrature import gauss_hermite_grid
from .rng import stream

DEFAULT_TOL = 1e-2
DEFAULT_SPAN_TOL = 0.05
MAX_CONTINUOUS_COORDS = 3
BLOCK = 1 << 15
BOOT_CHUNKS = 16
BOOT_RESAMPLES = 64


class LeapEstimationError(RuntimeError):
    """Conditioning produced unusable cells (too much dropped mass)."""


class LeapDetectionError(RuntimeError):
    """No order up to k_max cleared the detection threshold."""


@dataclass(frozen=True)
class LeapBudget:
    """Monte-Carlo budget for conditional-moment estimation."""

    n_mc: int = 1_000_000
    bins: int = 32
    seed: int = 0


@dataclass
class ConditionalMoment:
    """Estimated conditional Hermite moment of one order, given a subspace."""

    k: int
    subspace: Subspace
    cell_weights: np.ndarray  # (C,)
    cell_means: np.ndarray  # (C, m**k) flattened per-cell mean tensors
    lambda_sq: float  # bias-corrected total signal (half-sample cross estimate)
    lambda_sq_plugin: float  # weighted sum of squared cell-mean norms
    lambda_sq_se: float  # block-bootstrap standard error of lambda_sq
    second_moment: np.ndarray  # order-2k tensor over the complement of S
    dropped_mass: float
    diagnostics: dict = field(default_factory=dict)


@dataclass
class LeapDecomposition:
    """Flag of subspaces with the order detected at each step."""

    link_tag: str
    r: int
    flag: list  # Subspace, strictly nested, flag[0] empty
    leaps: list  # int per step
    k_star: int
    lambda_sqs: list  # detected signal per step
    info: bool  # True when built from label-correlation moments
    tol: float
    span_tol: float
    budget: LeapBudget
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "link": self.link_tag,
            "r": self.r,
            "flag_bases": [s.basis.tolist() for s in self.flag],
            "leaps": list(map(int, self.leaps)),
            "k_star": int(self.k_star),
            "lambda_sq": [float(v) for v in self.lambda_sqs],
            "info": self.info,
            "tolerances": {"tol": self.tol, "span_tol": self.span_tol},
            "budget": {"n_mc": self.budget.n_mc, "bins": self.budget.bins},
            "seed": self.budget.seed,
            "diagnostics": self.diagnostics,
        }
        return json.dumps(payload, indent=2)


# ---------------------------------------------------------------------------
# Cell construction
# ---------------------------------------------------------------------------


def _quantile_bins(values: np.ndarray, bins: int) -> np.ndarray:
    """Equal-mass bin index per value (ties can merge bins)."""
    qs = np.quantile(values, np.linspace(0.0, 1.0, bins + 1)[1:-1])
    return np.searchsorted(qs, values, side="right")


def _cell_index(link, z, y, subspace: Subspace, bins: int, condition_on_label: bool):
    """Flat cell id per sample for conditioning on (z_S, y) or on z_S alone."""
    parts = []
    sizes = []
    n_continuous = subspace.dim
    if condition_on_label:
        if link.discrete_values is not None:
            values = np.asarray(link.discrete_values, dtype=float)
            idx = np.searchsorted(values, y)
            idx = np.clip(idx, 0, len(values) - 1)
            parts.append(idx)
            sizes.append(len(values))
        else:
            n_continuous += 1
            parts.append(_quantile_bins(y, bins))
            sizes.append(bins)
    if n_continuous > MAX_CONTINUOUS_COORDS:
        raise LeapEstimationError(
            f"{n_continuous} continuous conditioning coordinates exceed the cap "
            f"{MAX_CONTINUOUS_COORDS}"
        )
    if subspace.dim:
        coords = subspace.coords(z)
        for j in range(subspace.dim):
            parts.append(_quantile_bins(coords[:, j], bins))
            sizes.append(bins)
    if not parts:
        return np.zeros(len(z), dtype=np.int64), 1
    cells = np.zeros(len(z), dtype=np.int64)
    for part, size in zip(parts, sizes):
        cells = cells * size + part
    return cells, int(np.prod(sizes))


def _group_add(acc: np.ndarray, counts: np.ndarray, keys: np.ndarray, values: np.ndarray):
    """acc[key] += values rows grouped by key (sort + reduceat, vectorized)."""
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    sv = values[order]
    starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
    uniq = sk[starts]
    acc[uniq] += np.add.reduceat(sv, starts, axis=0)
    counts[uniq] += np.diff(np.r_[starts, len(sk)])


# ---------------------------------------------------------------------------
# Conditional-moment estimation
# ---------------------------------------------------------------------------


def _conditional_scan(link, orders, subspace: Subspace, budget: LeapBudget,
                      info: bool = False, salt=()):
    """Estimate conditional moments for several orders from one MC draw.

    Generative mode averages h_k of the complement coordinates per cell of
    (z_S, y); information mode conditions on z_S only and averages
    y * h_k. Returns {k: ConditionalMoment}.
    """
    r = link.r
    if subspace.ambient_dim != r:
        raise ValueError("subspace must live in the link's intrinsic space")
    m = r - subspace.dim
    if m <= 0:
        raise ValueError("subspace already spans the intrinsic space")
    for k in orders:
        if not 1 <= k <= MAX_ORDER:
            raise ValueError(f"order {k} outside [1, {MAX_ORDER}]")

    n = budget.n_mc
    z, y = sample_intrinsic(link, n, _salt_seed(budget.seed, salt))
    cells, n_cells = _cell_index(link, z, y, subspace, budget.bins,
                                 condition_on_label=not info)
    perp = subspace.complement()
    zbar = perp.coords(z)

    half = np.zeros(n, dtype=np.int64)
    half[n // 2 :] = 1
    chunk = np.minimum((np.arange(n) * BOOT_CHUNKS) // n, BOOT_CHUNKS - 1)

    out = {}
    for k in orders:
        dim_flat = m**k
        # (chunk, half, cell, entry) partial sums; kept small because large
        # flattened tensors only occur with few cells and vice versa.
        sums = np.zeros((BOOT_CHUNKS, 2, n_cells, dim_flat))
        counts = np.zeros((BOOT_CHUNKS, 2, n_cells), dtype=np.int64)
        for start in range(0, n, BLOCK):
            stop = min(start + BLOCK, n)
            h = hermite_tensor_block(zbar[start:stop], k).reshape(stop - start, dim_flat)
            if info:
                h = h * y[start:stop, None]
            key = (chunk[start:stop] * 2 + half[start:stop]) * n_cells + cells[start:stop]
            _group_add(
                sums.reshape(BOOT_CHUNKS * 2 * n_cells, dim_flat),
                counts.reshape(BOOT_CHUNKS * 2 * n_cells),
                key,
                h,
            )
        out[k] = _finalize_moment(k, subspace, m, sums, counts, n, budget)
    return out


def _salt_seed(seed: int, salt) -> int:
    if not salt:
        return seed
    digest = hashlib.sha256(repr(tuple(salt)).encode("utf-8")).digest()
    mix = int.from_bytes(digest[:4], "little")
    return (int(seed) * 1_000_003 + mix) & (2**63 - 1)


def _lambda_from_sums(sum0, cnt0, sum1, cnt1):
    """Cross inner product of half-sample cell means, weighted by cell mass."""
    keep = (cnt0 > 0) & (cnt1 > 0)
    if not np.any(keep):
        return 0.0, 0.0
    w = (cnt0[keep] + cnt1[keep]).astype(float)
    w /= w.sum()
    m0 = sum0[keep] / cnt0[keep, None]
    m1 = sum1[keep] / cnt1[keep, None]
    cross = float(np.sum(w * np.sum(m0 * m1, axis=1)))
    kept_mass = float((cnt0[keep] + cnt1[keep]).sum())
    return cross, kept_mass


def _finalize_moment(k, subspace, m, sums, counts, n, budget) -> ConditionalMoment:
    dim_flat = m**k
    half_sums = sums.sum(axis=0)  # (2, C, D)
    half_counts = counts.sum(axis=0)  # (2, C)
    cross, kept_mass = _lambda_from_sums(
        half_sums[0], half_counts[0], half_sums[1], half_counts[1]
    )
    dropped = 1.0 - kept_mass / n
    if dropped > 0.2:
        raise LeapEstimationError(
            f"{dropped:.1%} of sample mass fell in unusable cells (order {k})"
        )

    keep = (half_counts[0] > 0) & (half_counts[1] > 0)
    tot = (half_counts[0] + half_counts[1])[keep].astype(float)
    weights = tot / tot.sum()
    means = (half_sums[0] + half_sums[1])[keep] / tot[:, None]
    plugin = float(np.sum(weights * np.sum(means**2, axis=1)))
    second = np.einsum("c,ci,cj->ij", weights, means, means).reshape((m,) * (2 * k))

    # Block bootstrap over contiguous MC chunks for a standard error.
    rng = stream(budget.seed, "lambda-bootstrap", k, subspace.dim)
    lams = np.empty(BOOT_RESAMPLES)
    for b in range(BOOT_RESAMPLES):
        pick = rng.integers(0, BOOT_CHUNKS, size=BOOT_CHUNKS)
        s = sums[pick].sum(axis=0)
        c = counts[pick].sum(axis=0)
        lams[b], _ = _lambda_from_sums(s[0], c[0], s[1], c[1])
    se = float(np.std(lams, ddof=1))

    dropped_cells = int(np.sum(~keep & ((half_counts[0] + half_counts[1]) > 0)))
    return ConditionalMoment(
        k=k,
        subspace=subspace,
        cell_weights=weights,
        cell_means=means,
        lambda_sq=cross,
        lambda_sq_plugin=plugin,
        lambda_sq_se=se,
        second_moment=second,
        dropped_mass=dropped,
        diagnostics={
            "n_mc": n,
            "bins": budget.bins,
            "cells_used": int(keep.sum()),
            "cells_dropped": dropped_cells,
        },
    )


def estimate_zeta(link, k: int, subspace: Subspace, budget: LeapBudget = LeapBudget(),
                  info: bool = False) -> ConditionalMoment:
    """Conditional Hermite moment of order k given the augmented label.

    With ``info=True`` the conditioning drops the label and the average is
    of y * h_k instead (the label-correlation variant).
    """
    return _conditional_scan(link, [k], subspace, budget, info=info)[k]


# ---------------------------------------------------------------------------
# Leap search and decomposition
# ---------------------------------------------------------------------------


def leap_of(link, subspace: Subspace, k_max: int = 6, tol: float = DEFAULT_TOL,
            budget: LeapBudget = LeapBudget(), info: bool = False):
    """Smallest order k <= k_max whose corrected signal exceeds tol, else None."""
    k, _ = _leap_of_detail(link, subspace, k_max, tol, budget, info, salt=())
    return k


def _leap_of_detail(link, subspace, k_max, tol, budget, info, salt):
    if tol <= 0:
        raise ValueError("tol must be positive")
    for k in range(1, k_max + 1):
        est = _conditional_scan(link, [k], subspace, budget, info=info, salt=salt)[k]
        if est.lambda_sq > tol:
            return k, est
    return None, None


def _decompose(link, k_max, tol, span_tol, budget, info) -> LeapDecomposition:
    r = link.r
    current = Subspace.empty(r)
    flag = [current]
    leaps, lambda_sqs, step_diags = [], [], []
    step = 0
    while current.dim < r:
        if len(leaps) >= r:
            raise LeapDetectionError(
                f"leap recursion did not terminate within {r} steps"
            )
        k, est = _leap_of_detail(link, current, k_max, tol, budget, info,
                                 salt=("step", step, info))
        if k is None:
            raise LeapDetectionError(
                f"no detectable signal up to order {k_max} at tol {tol} with "
                f"{r - current.dim} directions still unidentified"
            )
        local = tensor_span(est.second_moment, span_tol)
        if local.dim == 0:
            raise LeapDetectionError(
                f"signal detected at order {k} but its span is empty at "
                f"span tolerance {span_tol}"
            )
        perp = current.complement()
        new_dirs = orthonormalize(perp.basis @ local.basis)
        current = current.union(Subspace(r, new_dirs))
        flag.append(current)
        leaps.append(k)
        lambda_sqs.append(est.lambda_sq)
        step_diags.append(
            {
                "step": step,
                "k": int(k),
                "lambda_sq": float(est.lambda_sq),
                "lambda_sq_se": float(est.lambda_sq_se),
                "span_dim": int(local.dim),
                "cells_used": est.diagnostics["cells_used"],
                "dropped_mass": est.dropped_mass,
            }
        )
        step += 1
    return LeapDecomposition(
        link_tag=link.tag(),
        r=r,
        flag=flag,
        leaps=leaps,
        k_star=max(leaps),
        lambda_sqs=lambda_sqs,
        info=info,
        tol=tol,
        span_tol=span_tol,
        budget=budget,
        diagnostics={"steps": step_diags},
    )


def leap_decomposition(link, k_max: int = 6, tol: float = DEFAULT_TOL,
                       span_tol: float = DEFAULT_SPAN_TOL,
                       budget: LeapBudget = LeapBudget()) -> LeapDecomposition:
    """Iterate leaps of the conditional-expectation moments until R^r is spanned."""
    return _decompose(link, k_max, tol, span_tol, budget, info=False)


def info_leap_decomposition(link, k_max: int = 6, tol: float = DEFAULT_TOL,
                            span_tol: float = DEFAULT_SPAN_TOL,
                            budget: LeapBudget = LeapBudget()) -> LeapDecomposition:
    """Same recursion driven by label-correlation moments E[y h_k | z_S]."""
    return _decompose(link, k_max, tol, span_tol, budget, info=True)


# ---------------------------------------------------------------------------
# Chi-squared identity check (discrete labels)
# ---------------------------------------------------------------------------


def _chi_sq_exact(link, subspace: Subspace, nodes: int = 64) -> float:
    """Quadrature evaluation of the divergence between the joint law and the
    law with the complement coordinates decoupled from the augmented label."""
    r = link.r
    if subspace.dim == 0:
        pts, wts = gauss_hermite_grid(r, nodes)
        probs = link.cond_probs(pts)  # (N, V)
        marg = wts @ probs
        keep = marg > 0
        second = wts @ (probs[:, keep] ** 2)
        return float(np.sum(second / marg[keep]) - 1.0)
    # Tensorize over S coordinates (u) and complement coordinates (v).
    perp = subspace.complement()
    pts_u, wts_u = gauss_hermite_grid(subspace.dim, nodes)
    pts_v, wts_v = gauss_hermite_grid(perp.dim, nodes)
    total = 0.0
    for u, wu in zip(pts_u, wts_u):
        z = u @ subspace.basis.T + pts_v @ perp.basis.T
        probs = link.cond_probs(z)  # (Nv, V)
        marg = wts_v @ probs  # P[y | z_S = u]
        keep = marg > 0
        second = wts_v @ (probs[:, keep] ** 2)
        total += wu * np.sum(second / marg[keep])
    return float(total - 1.0)


def chi_sq_check(link, subspace: Subspace, k_max: int = 6,
                 budget: LeapBudget = LeapBudget(), nodes: int = 64) -> dict:
    """Compare the exact divergence against the partial sum of order signals.

    Only valid for links with finitely many label values; the divergence is
    computed by quadrature from the conditional class probabilities and the
    partial sum accumulates bias-corrected signal estimates for k <= k_max.
    """
    if link.discrete_values is None:
        raise ValueError("chi_sq_check requires a link with discrete labels")
    chi_sq = _chi_sq_exact(link, subspace, nodes)
    moments = _conditional_scan(link, list(range(1, k_max + 1)), subspace, budget,
                                info=False, salt=("chisq",))
    by_order = {k: moments[k].lambda_sq for k in moments}
    partial = float(sum(by_order.values()))
    return {
        "chi_sq": chi_sq,
        "partial_sum": partial,
        "residual": chi_sq - partial,
        "lambda_sq_by_order": by_order,
    }
