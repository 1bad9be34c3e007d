"""Spectral subspace recovery from a label-kernel U-statistic over
unfolded Hermite tensors.

The core object is the d x d matrix

    U = (1 / n(n-1)) * sum over pairs i != j of K(y_i, y_j) phi_i phi_j^T,

where phi_i is the d x d^{k-1} unfolding of the order-k Hermite tensor at
x_i. Excluding the diagonal pairs is what keeps the top eigenspace aligned
with the planted directions at the optimal sample size; the plain average
over all pairs is dominated by its self-terms.

Two evaluation paths:

* exact-pairwise: block-streamed literal sum over pairs, O(n^2 d^k) work,
  intended for n up to a few thousand; serves as the oracle for the other
  path.
* feature-expansion: factor K(y, y') ~= sum_m psi_m(y) psi_m(y'), stream
  per-sample accumulators A_m = sum_i psi_m(y_i) phi_i and the diagonal
  correction D = sum_i K(y_i, y_i) phi_i phi_i^T, and assemble
  (sum_m A_m A_m^T - D) / (n(n-1)). The factorization is exact for
  explicit embeddings and for labels with few distinct values (small-Gram
  eigendecomposition); otherwise random Fourier features are used.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .budget import check_budget
from .hermite import Subspace, hermite_tensor_block, orthonormalize
from .models import Dataset
from .rng import stream

DEFAULT_FEATURES = 2048
EXACT_PATH_MAX_N = 5000
DISCRETE_EMBED_MAX = 64
MEDIAN_HEURISTIC_PAIRS = 1000


# ---------------------------------------------------------------------------
# Label kernels
# ---------------------------------------------------------------------------


@dataclass
class KernelSpec:
    """PSD kernel over (possibly vector-valued) labels with K(y, y) <= 1.

    ``kind`` is "rbf" or "laplacian" with bandwidth ``sigma`` (None means
    the median heuristic at use time), or "embedding" with explicit label
    maps whose squared values must sum to at most 1.
    """

    kind: str = "rbf"
    sigma: float | None = None
    maps: tuple = ()  # for kind="embedding": callables y -> array (n,)

    def __post_init__(self):
        if self.kind not in ("rbf", "laplacian", "embedding"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "embedding" and not self.maps:
            raise ValueError("embedding kernel needs at least one label map")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def describe(self) -> str:
        if self.kind == "embedding":
            return f"embedding:m={len(self.maps)}"
        return f"{self.kind}:sigma={'median' if self.sigma is None else self.sigma}"

    def resolve_sigma(self, labels: np.ndarray, seed: int) -> float:
        """Median heuristic: median |delta| per label coordinate over random
        pairs, averaged into a single isotropic bandwidth."""
        if self.sigma is not None:
            return float(self.sigma)
        labels = _as_2d(labels)
        n = len(labels)
        g = stream(seed, "bandwidth")
        i = g.integers(0, n, size=MEDIAN_HEURISTIC_PAIRS)
        j = g.integers(0, n, size=MEDIAN_HEURISTIC_PAIRS)
        diffs = np.abs(labels[i] - labels[j])
        meds = []
        for c in range(diffs.shape[1]):
            col = diffs[:, c]
            col = col[col > 0]
            if col.size:
                meds.append(float(np.median(col)))
        med = float(np.mean(meds)) if meds else 1.0
        return med if med > 0 else 1.0

    def gram(self, labels: np.ndarray, sigma: float | None = None) -> np.ndarray:
        """Dense kernel matrix; labels is (n, p)."""
        labels = _as_2d(labels)
        if self.kind == "embedding":
            feats = self.feature_values(labels)
            return feats @ feats.T
        diff = labels[:, None, :] - labels[None, :, :]
        if self.kind == "rbf":
            sq = np.sum(diff**2, axis=-1)
            return np.exp(-sq / (2.0 * sigma**2))
        dist1 = np.sum(np.abs(diff), axis=-1)
        return np.exp(-dist1 / sigma)

    def pair_values(self, a: np.ndarray, b: np.ndarray, sigma: float | None = None):
        """K(a_i, b_i) rowwise for two (n, p) label arrays."""
        a, b = _as_2d(a), _as_2d(b)
        if self.kind == "embedding":
            fa, fb = self.feature_values(a), self.feature_values(b)
            return np.sum(fa * fb, axis=1)
        if self.kind == "rbf":
            return np.exp(-np.sum((a - b) ** 2, axis=1) / (2.0 * sigma**2))
        return np.exp(-np.sum(np.abs(a - b), axis=1) / sigma)

    def feature_values(self, labels: np.ndarray) -> np.ndarray:
        if self.kind != "embedding":
            raise ValueError("feature_values is only for explicit embeddings")
        labels = _as_2d(labels)
        y = labels[:, 0] if labels.shape[1] == 1 else labels
        feats = np.column_stack([np.asarray(m(y), dtype=float).ravel() for m in self.maps])
        norms = np.sum(feats**2, axis=1)
        if np.any(norms > 1.0 + 1e-9):
            raise ValueError("embedding maps must satisfy sum_m T_m(y)^2 <= 1")
        return feats

    def diag_values(self, labels: np.ndarray) -> np.ndarray:
        """K(y, y) per sample (1 for rbf/laplacian by normalization)."""
        labels = _as_2d(labels)
        if self.kind == "embedding":
            feats = self.feature_values(labels)
            return np.sum(feats**2, axis=1)
        return np.ones(len(labels))


def _as_2d(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=float)
    if labels.ndim == 1:
        return labels[:, None]
    return labels


def _random_fourier_features(kernel: KernelSpec, labels: np.ndarray, m: int,
                             sigma: float, seed: int):
    """cos-feature factorization of a shift-invariant kernel; (n, m) array."""
    labels = _as_2d(labels)
    p = labels.shape[1]
    g = stream(seed, "rff", m, p)
    if kernel.kind == "rbf":
        freqs = g.standard_normal((p, m)) / sigma
    elif kernel.kind == "laplacian":
        freqs = g.standard_cauchy((p, m)) / sigma
    else:
        raise ValueError("random features require a shift-invariant kernel")
    phases = g.uniform(0.0, 2.0 * np.pi, size=m)
    return np.sqrt(2.0 / m) * np.cos(labels @ freqs + phases)


def _discrete_embedding(kernel: KernelSpec, labels: np.ndarray, sigma: float):
    """Exact factorization when the labels take few distinct values.

    Returns (features (n, m), True) or (None, False) when not applicable.
    """
    labels = _as_2d(labels)
    uniq, inverse = np.unique(labels, axis=0, return_inverse=True)
    if len(uniq) > DISCRETE_EMBED_MAX:
        return None, False
    gram = kernel.gram(uniq, sigma)
    vals, vecs = np.linalg.eigh(gram)
    vals = np.clip(vals, 0.0, None)
    feats_uniq = vecs * np.sqrt(vals)
    return feats_uniq[inverse], True


# ---------------------------------------------------------------------------
# U-statistic construction
# ---------------------------------------------------------------------------


@dataclass
class UStat:
    """Symmetric d x d U-statistic with its eigendecomposition."""

    k: int
    matrix: np.ndarray
    eigvals: np.ndarray  # descending
    eigvecs: np.ndarray  # columns aligned with eigvals
    path: str  # "exact-pairwise" or "feature-expansion:m=..."
    n_used: int
    diagnostics: dict = field(default_factory=dict)


def _unfold_block(x: np.ndarray, k: int) -> np.ndarray:
    b, d = x.shape
    return hermite_tensor_block(x, k).reshape(b, d, d ** (k - 1))


def _block_size(d: int, k: int, floor: int = 16, frac: int = 6) -> int:
    from .budget import mem_cap_bytes

    per_sample = 8 * d**k
    return max(floor, min(4096, mem_cap_bytes() // (frac * per_sample)))


def _eig_sorted(matrix: np.ndarray):
    """Descending eigenpairs with deterministic order and sign convention."""
    vals, vecs = np.linalg.eigh(matrix)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        pivot = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[pivot, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vals, vecs


def _labels_of(dataset, labels):
    if labels is not None:
        return _as_2d(labels)
    return _as_2d(dataset.y)


def _diag_term(x: np.ndarray, k: int, weights: np.ndarray) -> np.ndarray:
    """sum_i w_i phi_i phi_i^T with closed forms for k <= 3.

    phi phi^T contracts all inner indices of the Hermite tensor with
    itself, which collapses to rank-one-plus-identity expressions in x for
    low orders; the generic path materializes phi blockwise.
    """
    n, d = x.shape
    if k == 1:
        return (x * weights[:, None]).T @ x
    s = np.sum(x**2, axis=1)
    if k == 2:
        scaled = weights * (s - 2.0)
        return ((x * scaled[:, None]).T @ x + weights.sum() * np.eye(d)) / 2.0
    if k == 3:
        scaled = weights * (s**2 - 6.0 * s + d + 6.0)
        return ((x * scaled[:, None]).T @ x + 2.0 * np.sum(weights * s) * np.eye(d)) / 6.0
    out = np.zeros((d, d))
    block = _block_size(d, k)
    for start in range(0, n, block):
        stop = min(start + block, n)
        p = _unfold_block(x[start:stop], k)
        out += np.einsum("b,baj,bcj->ac", weights[start:stop], p, p, optimize=True)
    return out


def build_ustat(dataset: Dataset, k: int, kernel: KernelSpec,
                path: str = "auto", labels: np.ndarray | None = None,
                features: int = DEFAULT_FEATURES, seed: int = 0) -> UStat:
    """Assemble the label-kernel U-statistic for Hermite order k.

    ``labels`` overrides dataset.y (used for augmented labels); ``path``
    is "exact", "features", or "auto" (exact only for small n).
    """
    n, d = dataset.n, dataset.d
    if n < 2:
        raise ValueError("need at least 2 samples")
    check_budget(8 * d**k, f"order-{k} unfolding over R^{d}")
    lab = _labels_of(dataset, labels)
    sigma = kernel.resolve_sigma(lab, seed) if kernel.kind != "embedding" else None
    if path == "auto":
        path = "exact" if n <= 2000 else "features"
    if path == "exact":
        matrix, diag = _build_exact(dataset.x, lab, k, kernel, sigma)
        path_tag = "exact-pairwise"
    elif path == "features":
        matrix, diag = _build_features(dataset.x, lab, k, kernel, sigma, features, seed)
        path_tag = f"feature-expansion:m={diag.pop('m')}"
    else:
        raise ValueError(f"unknown path {path!r}")
    matrix = (matrix + matrix.T) / 2.0
    vals, vecs = _eig_sorted(matrix)
    diag["sigma"] = sigma
    return UStat(k=k, matrix=matrix, eigvals=vals, eigvecs=vecs,
                 path=path_tag, n_used=n, diagnostics=diag)


def _build_exact(x, lab, k, kernel, sigma):
    n, d = x.shape
    if n > EXACT_PATH_MAX_N:
        raise ValueError(
            f"exact-pairwise path is quadratic in n; {n} exceeds the cap "
            f"{EXACT_PATH_MAX_N}, use the feature path"
        )
    check_budget(8 * n * n, "dense kernel matrix for the exact path")
    gram = kernel.gram(lab, sigma)
    np.fill_diagonal(gram, 0.0)
    u = np.zeros((d, d))
    block = _block_size(d, k)
    flat = d ** (k - 1) * d
    # Two-pass streaming: per block of rows, re-derive the unfoldings of all
    # column blocks rather than holding all n at once.
    for si in range(0, n, block):
        ei = min(si + block, n)
        pi = _unfold_block(x[si:ei], k).reshape(ei - si, flat)
        w = np.zeros((ei - si, flat))
        for sj in range(0, n, block):
            ej = min(sj + block, n)
            pj = _unfold_block(x[sj:ej], k).reshape(ej - sj, flat)
            w += gram[si:ei, sj:ej] @ pj
        u += (
            pi.reshape(ei - si, d, -1).transpose(1, 0, 2).reshape(d, -1)
            @ w.reshape(ei - si, d, -1).transpose(1, 0, 2).reshape(d, -1).T
        )
    u /= n * (n - 1)
    return u, {"n_pairs": n * (n - 1)}


def _feature_acc_k3(x: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """sum_i psi_m(y_i) phi_i for k = 3 via weighted moment matrices.

    The order-3 tensor is x^(3) minus three symmetrized x-identity terms,
    so the accumulator reduces to per-feature GEMMs on x and avoids
    materializing per-sample d^3 blocks (which is bandwidth-bound).
    """
    n, d = x.shape
    m = feats.shape[1]
    acc = np.zeros((m, d, d, d))
    idx = np.arange(d)
    block = max(256, min(65536, 2**31 // (8 * d * d * 8)))
    for start in range(0, n, block):
        stop = min(start + block, n)
        xb = x[start:stop]
        pairs = (xb[:, :, None] * xb[:, None, :]).reshape(stop - start, d * d)
        for j in range(m):
            w = feats[start:stop, j]
            acc[j] += ((xb * w[:, None]).T @ pairs).reshape(d, d, d)
    mu = x.T @ feats  # (d, m)
    for j in range(m):
        acc[j][:, idx, idx] -= mu[:, j][:, None]
        acc[j][idx, :, idx] -= mu[:, j][None, :]
        acc[j][idx, idx, :] -= mu[:, j][None, :]
    return acc.reshape(m, d, d * d) / math.sqrt(6.0)


def _build_features(x, lab, k, kernel, sigma, m, seed):
    n, d = x.shape
    if kernel.kind == "embedding":
        feats = kernel.feature_values(lab)
        exact = True
    else:
        feats, exact = _discrete_embedding(kernel, lab, sigma)
        if not exact:
            feats = _random_fourier_features(kernel, lab, m, sigma, seed)
    m_used = feats.shape[1]
    check_budget(8 * m_used * d**k, f"feature accumulators ({m_used} x d^{k})")
    flat = d ** (k - 1) * d
    if k == 3 and m_used <= 16:
        acc = _feature_acc_k3(x, feats).reshape(m_used, flat)
    else:
        acc = np.zeros((m_used, flat))
        block = _block_size(d, k)
        for start in range(0, n, block):
            stop = min(start + block, n)
            p = _unfold_block(x[start:stop], k).reshape(stop - start, flat)
            acc += feats[start:stop].T @ p
    acc3 = acc.reshape(m_used, d, -1)
    u = np.einsum("maj,mbj->ab", acc3, acc3, optimize=True)
    u -= _diag_term(x, k, kernel.diag_values(lab))
    u /= n * (n - 1)
    return u, {"m": m_used, "exact_factorization": exact}


# ---------------------------------------------------------------------------
# Recovery
# ---------------------------------------------------------------------------


def top_subspace(u: UStat, s: int) -> Subspace:
    """Span of the s leading eigenvectors (descending eigenvalue order)."""
    d = u.matrix.shape[0]
    if not 1 <= s <= d:
        raise ValueError(f"need 1 <= s <= {d}, got {s}")
    return Subspace(d, u.eigvecs[:, :s])


def recover_single_leap(dataset: Dataset, k: int, s: int, kernel: KernelSpec,
                        path: str = "auto", labels: np.ndarray | None = None,
                        features: int = DEFAULT_FEATURES, seed: int = 0) -> Subspace:
    u = build_ustat(dataset, k, kernel, path=path, labels=labels,
                    features=features, seed=seed)
    return top_subspace(u, s)


@dataclass
class LeapSchedule:
    """Per-step (order, recovered dimension, kernel); folds split evenly."""

    steps: tuple  # of (k, s) pairs
    kernels: tuple = ()  # optional per-step KernelSpec overrides

    def __post_init__(self):
        self.steps = tuple((int(k), int(s)) for k, s in self.steps)
        for k, s in self.steps:
            if k < 1 or s < 1:
                raise ValueError("every step needs k >= 1 and s >= 1")

    @property
    def total_dim(self) -> int:
        return sum(s for _, s in self.steps)

    def kernel_for(self, i: int, default: KernelSpec) -> KernelSpec:
        if self.kernels and i < len(self.kernels) and self.kernels[i] is not None:
            return self.kernels[i]
        return default

    def tag(self) -> str:
        return ";".join(f"k{k}s{s}" for k, s in self.steps)


def _standardize(cols: np.ndarray) -> np.ndarray:
    mean = cols.mean(axis=0)
    sd = cols.std(axis=0)
    sd[sd == 0] = 1.0
    return (cols - mean) / sd


def iterate_leaps(dataset: Dataset, schedule: LeapSchedule, kernel: KernelSpec,
                  path: str = "auto", features: int = DEFAULT_FEATURES,
                  seed: int = 0, diagnostics: dict | None = None) -> Subspace:
    """Sequential recovery: one disjoint fold per step, labels augmented with
    the coordinates along the basis accumulated so far (standardized per
    coordinate before the kernel).

    Each step's spectral problem is posed in the orthocomplement of the
    accumulated subspace: the augmented label determines those coordinates
    exactly, so keeping them in the data would put the largest spikes on
    directions already found and a step asked for s new directions would
    return old ones. Projecting them out leaves the spikes of the next leap
    only; the recovered directions are mapped back and unioned.
    """
    n, d = dataset.n, dataset.d
    steps = schedule.steps
    if schedule.total_dim > d:
        raise ValueError("schedule recovers more dimensions than the ambient space")
    fold = n // len(steps)
    if fold < 2:
        raise ValueError("folds need at least 2 samples each")
    recovered = Subspace.empty(d)
    bounds, spectra = [], []
    for i, (k, s) in enumerate(steps):
        lo, hi = i * fold, (i + 1) * fold
        bounds.append((lo, hi))
        x_fold = dataset.x[lo:hi]
        cols = [dataset.y[lo:hi, None]]
        if recovered.dim:
            cols.append(x_fold @ recovered.basis)
        lab = _standardize(np.hstack(cols))
        comp = recovered.complement()
        sub = Dataset(n=hi - lo, x=x_fold @ comp.basis, y=dataset.y[lo:hi],
                      seed=dataset.seed, model_tag=dataset.model_tag)
        step_kernel = schedule.kernel_for(i, kernel)
        u = build_ustat(sub, k, step_kernel, path=path, labels=lab,
                        features=features, seed=seed + i)
        found = top_subspace(u, s)
        spectra.append(u.eigvals[: min(32, len(u.eigvals))].tolist())
        recovered = recovered.union(Subspace(d, comp.basis @ found.basis))
    if diagnostics is not None:
        diagnostics["fold_bounds"] = bounds
        diagnostics["schedule"] = schedule.tag()
        diagnostics["step_eigvals"] = spectra
    return recovered


def adaptive_recover(dataset: Dataset, k_max: int, s_max: int, kernel: KernelSpec,
                     max_steps: int = 4, path: str = "auto",
                     features: int = DEFAULT_FEATURES, seed: int = 0,
                     bulk_multiplier: float = 10.0):
    """Sequential recovery without a schedule: each fold raises the order
    until outliers appear, takes that many directions, and stops once no
    order up to k_max separates from the bulk.

    Returns (subspace, executed steps as (k, s) pairs).
    """
    n, d = dataset.n, dataset.d
    fold = n // max_steps
    if fold < 2:
        raise ValueError("folds need at least 2 samples each")
    recovered = Subspace.empty(d)
    executed = []
    for i in range(max_steps):
        if recovered.dim >= d:
            break
        lo, hi = i * fold, (i + 1) * fold
        x_fold = dataset.x[lo:hi]
        cols = [dataset.y[lo:hi, None]]
        if recovered.dim:
            cols.append(x_fold @ recovered.basis)
        lab = _standardize(np.hstack(cols))
        comp = recovered.complement()
        sub = Dataset(n=hi - lo, x=x_fold @ comp.basis, y=dataset.y[lo:hi],
                      seed=dataset.seed, model_tag=dataset.model_tag)
        res = adaptive_order(sub, k_max, s_max, kernel, path=path, labels=lab,
                             features=features, seed=seed + i,
                             bulk_multiplier=bulk_multiplier)
        if res is None:
            break
        found = top_subspace(res["ustat"], res["s"])
        recovered = recovered.union(Subspace(d, comp.basis @ found.basis))
        executed.append((res["k"], res["s"]))
    return recovered, executed


def adaptive_order(dataset: Dataset, k_max: int, s_max: int, kernel: KernelSpec,
                   bulk_multiplier: float = 10.0, path: str = "auto",
                   labels: np.ndarray | None = None,
                   features: int = DEFAULT_FEATURES, seed: int = 0):
    """Raise the order until outlier eigenvalues separate from the bulk.

    The bulk scale is the median absolute eigenvalue; eigenvalues whose
    magnitude exceeds bulk_multiplier times it count as outliers. Returns
    {"k", "s", "ustat"} for the first such order, or None.
    """
    if k_max > 12:
        raise ValueError("k_max exceeds the supported Hermite order cap")
    for k in range(1, k_max + 1):
        u = build_ustat(dataset, k, kernel, path=path, labels=labels,
                        features=features, seed=seed)
        bulk = float(np.median(np.abs(u.eigvals)))
        if bulk == 0.0:
            bulk = np.finfo(float).tiny
        outliers = int(np.sum(np.abs(u.eigvals) > bulk_multiplier * bulk))
        if outliers:
            return {"k": k, "s": min(outliers, s_max), "ustat": u}
    return None


def expected_ustat_reference(model, k: int, kernel: KernelSpec,
                             n_ref: int = 100_000, seed: int = 0,
                             cond_basis: np.ndarray | None = None,
                             features: int = DEFAULT_FEATURES,
                             n_blocks: int = 10):
    """High-n estimate of the expected U-statistic with a jackknife error.

    Averages independent block U-statistics; ``cond_basis`` optionally
    augments labels with coordinates along a fixed subspace of R^d.
    Returns (matrix, jackknife standard error of the operator norm).
    """
    from .models import sample

    per = n_ref // n_blocks
    mats = []
    for b in range(n_blocks):
        ds = sample(model, per, seed * n_blocks + b + 1)
        lab = ds.y[:, None]
        if cond_basis is not None:
            lab = np.hstack([lab, ds.x @ cond_basis])
        lab = _standardize(lab)
        u = build_ustat(ds, k, kernel, path="features", labels=lab,
                        features=features, seed=seed)
        mats.append(u.matrix)
    mats = np.array(mats)
    mean = mats.mean(axis=0)
    loo = (mats.sum(axis=0)[None] - mats) / (n_blocks - 1)
    devs = [np.linalg.norm(m - mean, ord=2) for m in loo]
    se = math.sqrt((n_blocks - 1) / n_blocks * float(np.sum(np.square(devs))))
    return mean, se


# ---------------------------------------------------------------------------
# Subspace serialization
# ---------------------------------------------------------------------------


def subspace_to_json(sub: Subspace, provenance: dict | None = None) -> str:
    payload = {
        "d": sub.ambient_dim,
        "s": sub.dim,
        "basis": [format(v, ".17g") for v in sub.basis.ravel(order="C")],
        "provenance": provenance or {},
    }
    return json.dumps(payload, indent=2)


def subspace_from_json(text: str) -> Subspace:
    payload = json.loads(text)
    d, s = int(payload["d"]), int(payload["s"])
    flat = np.array([float(v) for v in payload["basis"]])
    basis = flat.reshape(d, s) if s else np.zeros((d, 0))
    return Subspace(d, orthonormalize(basis))
