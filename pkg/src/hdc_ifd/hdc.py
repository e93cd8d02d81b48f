"""Hyperdimensional classifier: random-projection encoding, one-pass training,
online retraining and cosine-similarity inference.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._backend import kernels
from .errors import DataError, TrainingError


class Variant(str, enum.Enum):
    PAPER_PRODUCT = "PaperProduct"
    STANDARD_RFF = "StandardRFF"


@dataclass(frozen=True)
class EncoderBasis:
    basis_rows: np.ndarray  # (D, n), standard normal
    offsets: np.ndarray  # (D,), uniform on [0, 2*pi)
    seed: int
    variant: Variant = Variant.PAPER_PRODUCT

    @property
    def n(self) -> int:
        return self.basis_rows.shape[1]

    @property
    def dim(self) -> int:
        return self.basis_rows.shape[0]


@dataclass
class HdcConfig:
    dimension: int = 10000
    learning_rate: float = 0.005
    retrain_epochs: int = 100
    similarity: str = "cosine"
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.retrain_epochs < 0:
            raise ValueError(f"retrain_epochs must be >= 0, got {self.retrain_epochs}")
        if self.similarity != "cosine":
            raise ValueError(f"unsupported similarity {self.similarity!r}")


@dataclass
class HdcModel:
    class_vectors: np.ndarray  # (J, D)
    config: HdcConfig = field(default_factory=HdcConfig)

    def __post_init__(self):
        self.class_vectors = np.asarray(self.class_vectors, dtype=np.float64)
        if self.class_vectors.ndim != 2 or self.class_vectors.shape[0] < 2:
            raise ValueError("an HDC model needs at least 2 class vectors")

    @property
    def num_classes(self) -> int:
        return self.class_vectors.shape[0]

    def copy(self) -> HdcModel:
        return HdcModel(self.class_vectors.copy(), self.config)


def new_basis(n: int, D: int, variant=Variant.PAPER_PRODUCT, seed: int = 0) -> EncoderBasis:
    if n < 1 or D < 1:
        raise ValueError(f"basis needs n >= 1 and D >= 1 (got n={n}, D={D})")
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((D, n))
    offsets = rng.uniform(0.0, 2 * np.pi, size=D)
    return EncoderBasis(rows, offsets, seed, Variant(variant))


def encode_batch(basis: EncoderBasis, X) -> np.ndarray:
    """Encode rows of X, shape (N, n) -> (N, D)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != basis.n:
        raise ValueError(f"input length {X.shape[1]} does not match basis length {basis.n}")
    if not np.isfinite(X).all():
        raise ValueError("input contains non-finite values")
    proj = X @ basis.basis_rows.T
    if basis.variant is Variant.STANDARD_RFF:
        return np.cos(proj + basis.offsets)
    # cos(z + b) sin(z) == (sin(2z + b) - sin(b)) / 2: one transcendental per component
    out = np.sin(2.0 * proj + basis.offsets)
    out -= np.sin(basis.offsets)
    out *= 0.5
    return out


def encode(basis: EncoderBasis, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("encode takes a single 1-D input vector")
    return encode_batch(basis, x)[0]


def cosine_similarity(a, b) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    den = np.linalg.norm(a) * np.linalg.norm(b)
    if den == 0.0:
        return 0.0
    return float(np.clip(a @ b / den, -1.0, 1.0))


def similarities(model: HdcModel, H) -> np.ndarray:
    """Cosine similarity of each row of H against every class vector, (N, J)."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    C = model.class_vectors
    if H.shape[1] != C.shape[1]:
        raise ValueError(f"dimension mismatch: {H.shape[1]} vs {C.shape[1]}")
    den = np.linalg.norm(H, axis=1)[:, None] * np.linalg.norm(C, axis=1)[None, :]
    dots = H @ C.T
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = np.where(den > 0, dots / den, 0.0)
    return sims


def predict_batch(model: HdcModel, H) -> np.ndarray:
    # argmax returns the first maximum, i.e. the lowest class index on ties
    return similarities(model, H).argmax(axis=1)


def predict(model: HdcModel, h) -> int:
    return int(predict_batch(model, h)[0])


def _check_labels(labels, J):
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= J):
        raise ValueError(f"labels must lie in 0..{J - 1}")
    return labels


def train_initial(H, labels, J: int, config: HdcConfig | None = None) -> HdcModel:
    """One-pass training: every class vector is the eta-weighted sum of its samples."""
    config = config or HdcConfig()
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    labels = _check_labels(labels, J)
    counts = np.bincount(labels, minlength=J)
    for j in range(J):
        if counts[j] == 0:
            raise TrainingError(f"empty class {j}")
    C = np.zeros((J, H.shape[1]))
    for j in range(J):
        C[j] = (config.learning_rate * H[labels == j]).sum(axis=0)
    return HdcModel(C, config)


def retrain(model: HdcModel, H, labels, epochs: int | None = None, kernels_=None) -> HdcModel:
    """Online perceptron-style retraining; returns a new model.

    Sample order is one seeded shuffle (``config.shuffle_seed``) reused for
    every epoch. Stops early only if an epoch makes no updates, since a
    further epoch would then be a no-op.
    """
    k = kernels_ or kernels
    H = np.ascontiguousarray(np.atleast_2d(H), dtype=np.float64)
    labels = _check_labels(labels, model.num_classes)
    if H.shape[1] != model.class_vectors.shape[1]:
        raise ValueError("dimension mismatch between samples and model")
    epochs = model.config.retrain_epochs if epochs is None else epochs
    out = model.copy()
    if epochs == 0 or len(labels) == 0:
        return out
    order = np.random.default_rng(model.config.shuffle_seed).permutation(len(labels)).astype(np.int64)
    hnorm = np.linalg.norm(H, axis=1)
    C = np.ascontiguousarray(out.class_vectors)
    for _ in range(epochs):
        if k.hdc_retrain_epoch(C, H, hnorm, labels, order, model.config.learning_rate) == 0:
            break
    out.class_vectors = C
    return out


class HdcClassifier:
    """Encoder basis plus trained model, operating on raw windows."""

    def __init__(self, basis: EncoderBasis, config: HdcConfig | None = None, model: HdcModel | None = None):
        self.basis = basis
        self.config = config or HdcConfig(dimension=basis.dim)
        self.model = model

    @classmethod
    def create(cls, n: int, config: HdcConfig | None = None, variant=Variant.PAPER_PRODUCT, seed: int = 0):
        config = config or HdcConfig()
        return cls(new_basis(n, config.dimension, variant, seed), config)

    def fit(self, X, y, num_classes: int):
        H = encode_batch(self.basis, X)
        self.model = retrain(train_initial(H, y, num_classes, self.config), H, y)
        return self

    def predict(self, X) -> np.ndarray:
        return predict_batch(self.model, encode_batch(self.basis, X))


# -- serialization ----------------------------------------------------------------

_MAGIC = b"HDCM"
_VERSION = 1


def save_model(path, basis: EncoderBasis, model: HdcModel) -> None:
    """Binary file: magic, version, JSON header, then little-endian float64 class vectors.

    The basis is stored by (n, D, variant, seed) and regenerated on load.
    """
    header = {
        "n": basis.n, "D": basis.dim, "variant": basis.variant.value, "seed": basis.seed,
        "eta": model.config.learning_rate, "J": model.num_classes,
        "retrain_epochs": model.config.retrain_epochs, "shuffle_seed": model.config.shuffle_seed,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", _VERSION, len(hb)) + hb)
        fh.write(model.class_vectors.astype("<f8").tobytes())


def load_model(path) -> tuple[EncoderBasis, HdcModel]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise DataError(f"{path}: not an HDC model file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != _VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    h = json.loads(raw[12:12 + hlen])
    C = np.frombuffer(raw[12 + hlen:], dtype="<f8").astype(np.float64).reshape(h["J"], h["D"])
    config = HdcConfig(h["D"], h["eta"], h["retrain_epochs"], shuffle_seed=h["shuffle_seed"])
    basis = new_basis(h["n"], h["D"], Variant(h["variant"]), h["seed"])
    return basis, HdcModel(C, config)
