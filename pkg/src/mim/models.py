"""Planted multi-index models: link catalog, sampling, persistence, metrics.

A link describes the conditional law of the label y given the intrinsic
coordinates z in R^r. Links expose:

* ``r``: intrinsic dimension,
* ``sample_labels(z, rng)``: draw labels for rows of z,
* ``discrete_values``: tuple of the finitely many label values, or None
  for continuous labels,
* ``cond_probs(z)``: for discrete links, the conditional label
  distribution P[y = v | z] as an (n, len(values)) array.

Planting a model pairs a link with a Haar-random orthonormal r x d frame.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .hermite import Subspace, hermite_values
from .rng import SAMPLE_BLOCK, gaussian_matrix, stream

DATASET_MAGIC = b"MIMDATA1"


class DatasetFormatError(ValueError):
    """Base class for dataset file format problems."""


class CorruptHeaderError(DatasetFormatError):
    pass


class VersionMismatchError(DatasetFormatError):
    pass


class TruncatedPayloadError(DatasetFormatError):
    pass


# ---------------------------------------------------------------------------
# Link catalog
# ---------------------------------------------------------------------------


@dataclass
class Parity:
    """y = xi * sign(z_1 ... z_r), with the sign flipped with probability eta."""

    r: int
    eta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eta < 0.5:
            raise ValueError(f"parity noise must lie in [0, 0.5), got {self.eta}")

    @property
    def discrete_values(self):
        return (-1.0, 1.0)

    def sample_labels(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        y = np.sign(np.prod(z, axis=1))
        y[y == 0] = 1.0  # measure-zero guard
        if self.eta > 0:
            flips = rng.random(len(y)) < self.eta
            y = np.where(flips, -y, y)
        return y

    def cond_probs(self, z: np.ndarray) -> np.ndarray:
        s = np.sign(np.prod(z, axis=1))
        s[s == 0] = 1.0
        p_plus = np.where(s > 0, 1.0 - self.eta, self.eta)
        return np.column_stack([1.0 - p_plus, p_plus])

    def tag(self) -> str:
        return f"parity:r={self.r}:eta={self.eta}"


@dataclass
class Staircase:
    """Sum of polynomial terms over z_1..z_r, plus optional Gaussian noise.

    ``terms`` is a sequence of (coeff, powers) with len(powers) == r; the
    label is sum_t coeff_t * prod_j z_j ** powers_j.
    """

    r: int
    terms: tuple
    noise_std: float = 0.0

    def __post_init__(self):
        for _, powers in self.terms:
            if len(powers) != self.r:
                raise ValueError("every term needs one exponent per coordinate")

    @property
    def discrete_values(self):
        return None

    def _value(self, z: np.ndarray) -> np.ndarray:
        y = np.zeros(len(z))
        for coeff, powers in self.terms:
            term = np.full(len(z), float(coeff))
            for j, p in enumerate(powers):
                if p:
                    term *= z[:, j] ** p
            y += term
        return y

    def sample_labels(self, z, rng):
        y = self._value(z)
        if self.noise_std > 0:
            y = y + self.noise_std * rng.standard_normal(len(y))
        return y

    def tag(self) -> str:
        return f"staircase:r={self.r}:terms={len(self.terms)}:noise={self.noise_std}"


@dataclass
class Halfspaces:
    """y = 2 * prod_j 1(v_j . z > alpha_j) - 1 with unit normals v_j."""

    normals: np.ndarray  # (M, r), unit rows
    offsets: np.ndarray  # (M,)

    def __post_init__(self):
        self.normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        self.offsets = np.asarray(self.offsets, dtype=float).ravel()
        norms = np.linalg.norm(self.normals, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-8):
            raise ValueError("halfspace normals must be unit vectors")
        if len(self.offsets) != len(self.normals):
            raise ValueError("one offset per normal")

    @property
    def r(self) -> int:
        return self.normals.shape[1]

    @property
    def discrete_values(self):
        return (-1.0, 1.0)

    def sample_labels(self, z, rng):
        inside = np.all(z @ self.normals.T > self.offsets, axis=1)
        return np.where(inside, 1.0, -1.0)

    def cond_probs(self, z):
        inside = np.all(z @ self.normals.T > self.offsets, axis=1)
        p_plus = inside.astype(float)
        return np.column_stack([1.0 - p_plus, p_plus])

    def tag(self) -> str:
        return f"halfspaces:r={self.r}:m={len(self.normals)}"


@dataclass
class Polynomial:
    """y = sum over multi-indices beta of coeffs[beta] * z**beta, plus noise."""

    r: int
    coeffs: dict  # multi-index tuple -> float
    noise_std: float = 0.0

    @property
    def discrete_values(self):
        return None

    def sample_labels(self, z, rng):
        y = np.zeros(len(z))
        for powers, coeff in self.coeffs.items():
            term = np.full(len(z), float(coeff))
            for j, p in enumerate(powers):
                if p:
                    term *= z[:, j] ** p
            y += term
        if self.noise_std > 0:
            y = y + self.noise_std * rng.standard_normal(len(y))
        return y

    def tag(self) -> str:
        return f"polynomial:r={self.r}:terms={len(self.coeffs)}:noise={self.noise_std}"


_ACTIVATIONS = {
    "relu": lambda u: np.maximum(u, 0.0),
    "sign": np.sign,
    "tanh": np.tanh,
}


def _resolve_activation(name: str):
    if name in _ACTIVATIONS:
        return _ACTIVATIONS[name]
    if name.startswith("he_"):
        order = int(name[3:])
        return lambda u: hermite_values(order, u)[order]
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class ShallowNN:
    """y = a . act(V^T z) + Gaussian noise; V is r x M."""

    a: np.ndarray
    v: np.ndarray
    activation: str
    noise_std: float = 0.0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).ravel()
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.v.shape[1] != len(self.a):
            raise ValueError("V must have one column per output weight")
        self._act = _resolve_activation(self.activation)

    @property
    def r(self) -> int:
        return self.v.shape[0]

    @property
    def discrete_values(self):
        return None

    def sample_labels(self, z, rng):
        y = self._act(z @ self.v) @ self.a
        if self.noise_std > 0:
            y = y + self.noise_std * rng.standard_normal(len(y))
        return y

    def tag(self) -> str:
        return f"shallownn:r={self.r}:m={len(self.a)}:act={self.activation}:noise={self.noise_std}"


@dataclass
class ReluNet:
    """Fully connected ReLU network with biases; final layer is affine."""

    weights: tuple  # layer weight matrices, first with r rows
    biases: tuple

    def __post_init__(self):
        self.weights = tuple(np.atleast_2d(np.asarray(w, dtype=float)) for w in self.weights)
        self.biases = tuple(np.asarray(b, dtype=float).ravel() for b in self.biases)
        if len(self.weights) != len(self.biases):
            raise ValueError("one bias vector per layer")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("output layer must be scalar")

    @property
    def r(self) -> int:
        return self.weights[0].shape[0]

    @property
    def discrete_values(self):
        return None

    def sample_labels(self, z, rng):
        h = np.asarray(z, dtype=float)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return (h @ self.weights[-1] + self.biases[-1]).ravel()

    def tag(self) -> str:
        widths = "x".join(str(w.shape[1]) for w in self.weights)
        return f"relunet:r={self.r}:widths={widths}"


@dataclass
class Custom:
    """Deterministic map R^r -> R plus optional Gaussian label noise.

    ``values`` may declare that the (noiseless) map takes finitely many
    values, enabling the discrete-label code paths.
    """

    r: int
    fn: callable
    noise_std: float = 0.0
    values: tuple | None = None
    name: str = "custom"

    @property
    def discrete_values(self):
        if self.noise_std > 0:
            return None
        return self.values

    def sample_labels(self, z, rng):
        y = np.asarray(self.fn(z), dtype=float).ravel()
        if self.noise_std > 0:
            y = y + self.noise_std * rng.standard_normal(len(y))
        return y

    def cond_probs(self, z):
        if self.discrete_values is None:
            raise ValueError("cond_probs requires a discrete link")
        y = np.asarray(self.fn(z), dtype=float).ravel()
        values = np.asarray(self.discrete_values, dtype=float)
        probs = np.isclose(y[:, None], values[None, :]).astype(float)
        if not np.all(probs.sum(axis=1) == 1.0):
            raise ValueError("custom map produced a value outside declared values")
        return probs

    def tag(self) -> str:
        return f"{self.name}:r={self.r}:noise={self.noise_std}"


@dataclass
class RotatedLink:
    """Base link precomposed with an orthogonal rotation of R^r."""

    base: object
    rotation: np.ndarray  # (r, r) orthogonal

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float)
        if not np.allclose(q @ q.T, np.eye(q.shape[0]), atol=1e-8):
            raise ValueError("rotation must be orthogonal")
        self.rotation = q

    @property
    def r(self) -> int:
        return self.base.r

    @property
    def discrete_values(self):
        return self.base.discrete_values

    def sample_labels(self, z, rng):
        return self.base.sample_labels(z @ self.rotation, rng)

    def cond_probs(self, z):
        return self.base.cond_probs(z @ self.rotation)

    def tag(self) -> str:
        return f"rotated({self.base.tag()})"


def staircase_terms(r: int) -> tuple:
    """Default staircase: y = z1 + z1 z2 + ... + z1...zr."""
    terms = []
    for depth in range(1, r + 1):
        powers = tuple(1 if j < depth else 0 for j in range(r))
        terms.append((1.0, powers))
    return tuple(terms)


def _default_relunet(r: int) -> ReluNet:
    # Frozen random-ish weights; seeded so the fixture is identical everywhere.
    g = stream(20240317, "relunet-fixture", r)
    w1 = g.standard_normal((r, 4)) / math.sqrt(r)
    b1 = g.standard_normal(4) * 0.5
    w2 = g.standard_normal((4, 1)) / 2.0
    b2 = g.standard_normal(1) * 0.5
    return ReluNet(weights=(w1, w2), biases=(b1, b2))


def make_link(name: str, r: int, noise: float = 0.0):
    """Catalog of named fixtures used by the CLI and the test harness."""
    name = name.lower()
    if name == "parity":
        return Parity(r=r, eta=noise)
    if name == "staircase":
        return Staircase(r=r, terms=staircase_terms(r), noise_std=noise)
    if name == "halfspaces":
        return Halfspaces(normals=np.eye(r), offsets=np.zeros(r))
    if name == "normsq":
        coeffs = {tuple(2 if j == i else 0 for j in range(r)): 1.0 for i in range(r)}
        return Polynomial(r=r, coeffs=coeffs, noise_std=noise)
    if name == "he3nn":
        return ShallowNN(a=np.ones(r), v=np.eye(r), activation="he_3", noise_std=noise)
    if name == "relunet":
        return ReluNet(**_default_relunet(r).__dict__)
    if name == "linear":
        return Staircase(r=r, terms=((1.0, tuple(1 if j == 0 else 0 for j in range(r))),), noise_std=noise)
    if name == "sign":
        if r != 1:
            raise ValueError("sign link is single-index")
        return Custom(r=1, fn=lambda z: np.sign(z[:, 0]), values=(-1.0, 1.0), name="sign")
    raise ValueError(f"unknown link {name!r}")


CATALOG_LINKS = ("parity", "staircase", "halfspaces", "normsq", "he3nn", "relunet", "linear", "sign")


# ---------------------------------------------------------------------------
# Planting and sampling
# ---------------------------------------------------------------------------


@dataclass
class PlantedModel:
    d: int
    r: int
    w_star: np.ndarray  # (r, d), orthonormal rows
    link: object

    def __post_init__(self):
        self.w_star = np.atleast_2d(np.asarray(self.w_star, dtype=float))
        if self.w_star.shape != (self.r, self.d):
            raise ValueError(f"w_star must be {self.r} x {self.d}")
        gram = self.w_star @ self.w_star.T
        if not np.allclose(gram, np.eye(self.r), atol=1e-10):
            raise ValueError("w_star rows must be orthonormal")
        if self.link.r != self.r:
            raise ValueError("link intrinsic dimension must match r")

    def index_space(self) -> Subspace:
        return Subspace(self.d, self.w_star.T)

    def tag(self) -> str:
        return f"{self.link.tag()}:d={self.d}"


@dataclass
class Dataset:
    n: int
    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)
    seed: int
    model_tag: str

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.x.shape[0] != self.n or len(self.y) != self.n:
            raise ValueError("x rows and y length must equal n")

    @property
    def d(self) -> int:
        return self.x.shape[1]


def plant_subspace(d: int, r: int, seed: int) -> np.ndarray:
    """Haar-distributed r x d frame with orthonormal rows.

    QR of a d x r standard Gaussian matrix with the sign of the triangular
    factor's diagonal fixed, which makes the column frame Haar on the
    Stiefel manifold.
    """
    if not 1 <= r <= d:
        raise ValueError(f"need 1 <= r <= d, got r={r}, d={d}")
    g = stream(seed, "plant", d, r).standard_normal((d, r))
    q, rr = np.linalg.qr(g)
    signs = np.sign(np.diag(rr))
    signs[signs == 0] = 1.0
    return (q * signs).T


def plant_model(link, d: int, seed: int) -> PlantedModel:
    w = plant_subspace(d, link.r, seed)
    return PlantedModel(d=d, r=link.r, w_star=w, link=link)


def sample_intrinsic(link, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw (z, y) pairs in the intrinsic space R^r."""
    if n < 1:
        raise ValueError("n must be at least 1")
    z = gaussian_matrix(seed, n, link.r, "z")
    y = np.empty(n)
    for start in range(0, n, SAMPLE_BLOCK):
        stop = min(start + SAMPLE_BLOCK, n)
        g = stream(seed, "labels", "block", start // SAMPLE_BLOCK)
        y[start:stop] = link.sample_labels(z[start:stop], g)
    return z, y


def sample(model: PlantedModel, n: int, seed: int) -> Dataset:
    """Draw n iid samples: x ~ N(0, I_d), y from the link at z = w_star x."""
    if n < 1:
        raise ValueError("n must be at least 1")
    x = gaussian_matrix(seed, n, model.d, "x")
    y = np.empty(n)
    for start in range(0, n, SAMPLE_BLOCK):
        stop = min(start + SAMPLE_BLOCK, n)
        g = stream(seed, "labels", "block", start // SAMPLE_BLOCK)
        z = x[start:stop] @ model.w_star.T
        y[start:stop] = model.link.sample_labels(z, g)
    return Dataset(n=n, x=x, y=y, seed=seed, model_tag=model.tag())


def subspace_distance(t1: Subspace, t2: Subspace) -> float:
    """Operator norm of the difference of orthogonal projectors, in [0, 1]."""
    if t1.ambient_dim != t2.ambient_dim:
        raise ValueError("ambient dimensions differ")
    diff = t1.projector() - t2.projector()
    if not np.any(diff):
        return 0.0
    vals = np.linalg.eigvalsh(diff)
    return float(min(1.0, np.max(np.abs(vals))))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def write_dataset(dataset: Dataset, path: str) -> None:
    """Binary layout: magic, u64 header length, JSON header, x then y (f64le)."""
    if not path:
        raise OSError("empty dataset path")
    header = {
        "n": dataset.n,
        "d": dataset.d,
        "seed": int(dataset.seed),
        "model_tag": dataset.model_tag,
        "dtype": "f64le",
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(dataset.x, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.y, dtype="<f8").tobytes())


def read_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    magic = buf.read(8)
    if len(magic) < 8 or magic[:7] != DATASET_MAGIC[:7]:
        raise CorruptHeaderError(f"bad magic {magic!r}")
    if magic != DATASET_MAGIC:
        raise VersionMismatchError(f"unsupported dataset version marker {magic!r}")
    length_bytes = buf.read(8)
    if len(length_bytes) < 8:
        raise CorruptHeaderError("missing header length")
    header_len = int.from_bytes(length_bytes, "little")
    blob = buf.read(header_len)
    if len(blob) < header_len:
        raise CorruptHeaderError("truncated header")
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeaderError(f"unparseable header: {exc}") from exc
    for key in ("n", "d", "seed", "model_tag", "dtype"):
        if key not in header:
            raise CorruptHeaderError(f"header missing field {key!r}")
    if header["dtype"] != "f64le":
        raise CorruptHeaderError(f"unsupported dtype {header['dtype']!r}")
    n, d = int(header["n"]), int(header["d"])
    payload = buf.read()
    expected = (n * d + n) * 8
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"payload has {len(payload)} bytes, header declares {expected}"
        )
    x = np.frombuffer(payload[: n * d * 8], dtype="<f8").reshape(n, d).copy()
    y = np.frombuffer(payload[n * d * 8 : expected], dtype="<f8").copy()
    return Dataset(n=n, x=x, y=y, seed=int(header["seed"]), model_tag=header["model_tag"])


def export_csv(dataset: Dataset, path: str) -> None:
    """CSV with header row `y,x1,...,xd`; intended for small n."""
    cols = ",".join(["y"] + [f"x{j + 1}" for j in range(dataset.d)])
    table = np.column_stack([dataset.y, dataset.x])
    np.savetxt(path, table, delimiter=",", header=cols, comments="")
