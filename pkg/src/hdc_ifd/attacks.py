"""Gradient-sign attacks crafted on the substitute: FGSM, BIM, MIM and ROM.

All crafters work on a batch ``X`` of shape (B, n) (or a single window) and
return perturbed copies inside the L-inf ball of radius ``epsilon``. The
sign of a zero gradient component is 0. No clamping to a data range is
applied.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import substitute as sub
from .data import SignalDataset, save_csv

CHUNK = 512
L1_GUARD = 1e-12


class Method(str, enum.Enum):
    FGSM = "fgsm"
    BIM = "bim"
    MIM = "mim"
    ROM = "rom"


@dataclass(frozen=True)
class AttackConfig:
    method: Method = Method.FGSM
    epsilon: float = 0.1
    iterations: int = 100
    decay: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.decay < 0:
            raise ValueError(f"decay must be >= 0, got {self.decay}")

    @property
    def alpha(self) -> float:
        return self.epsilon / self.iterations


@dataclass
class PerturbedDataset:
    windows: np.ndarray
    labels: np.ndarray
    provenance: dict = field(default_factory=dict)

    def as_dataset(self, num_classes: int) -> SignalDataset:
        return SignalDataset(self.windows, self.labels, num_classes)


def _prep(X):
    X = np.asarray(X, dtype=np.float64)
    return (X[None, :], True) if X.ndim == 1 else (X, False)


def _labels(y, B):
    return np.atleast_1d(np.asarray(y, dtype=np.int64)).reshape(B)


def _clip(adv, X, eps):
    return np.minimum(X + eps, np.maximum(X - eps, adv))


def fgsm(net, X, y, epsilon: float):
    """x + eps * sign(grad_x J)."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    Xb, single = _prep(X)
    g = sub.input_gradients(net, Xb, _labels(y, len(Xb)))
    adv = Xb + epsilon * np.sign(g)
    return adv[0] if single else adv


def bim(net, X, y, epsilon: float, iterations: int):
    """Iterated FGSM with step eps/I, clipped to the eps-ball after every step."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    Xb, single = _prep(X)
    yb = _labels(y, len(Xb))
    alpha = epsilon / iterations
    adv = Xb.copy()
    for _ in range(iterations):
        g = sub.input_gradients(net, adv, yb)
        adv = _clip(adv + alpha * np.sign(g), Xb, epsilon)
    return adv[0] if single else adv


def mim(net, X, y, epsilon: float, iterations: int, decay: float):
    """Momentum iterative method; gradients are L1-normalized per sample before accumulation."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if decay < 0:
        raise ValueError(f"decay must be >= 0, got {decay}")
    Xb, single = _prep(X)
    yb = _labels(y, len(Xb))
    alpha = epsilon / iterations
    adv = Xb.copy()
    acc = np.zeros_like(Xb)
    for _ in range(iterations):
        g = sub.input_gradients(net, adv, yb)
        acc = decay * acc + momentum_term(g)
        adv = _clip(adv + alpha * np.sign(acc), Xb, epsilon)
    return adv[0] if single else adv


def momentum_term(g):
    """Row-wise g / ||g||_1, with rows of L1 norm below 1e-12 mapped to zero."""
    g = np.atleast_2d(g)
    l1 = np.abs(g).sum(axis=1, keepdims=True)
    ok = l1 >= L1_GUARD
    return np.where(ok, g / np.where(ok, l1, 1.0), 0.0)


def rom_train(X, y, nc: sub.NetworkConfig, tc: sub.TrainConfig, epsilon: float):
    """Adversarial (min-max) training: each minibatch is replaced by its FGSM
    counterpart under the current parameters before the gradient step."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")

    def inner_max(net, Xb, yb):
        return fgsm(net, Xb, yb, epsilon)

    return sub.train(sub.init_net(nc), X, y, tc, perturb=inner_max)


def perturb(net, X, y, ac: AttackConfig):
    """Apply the configured method to a batch. ROM expects the robust net."""
    if ac.method in (Method.FGSM, Method.ROM):
        return fgsm(net, X, y, ac.epsilon)
    if ac.method is Method.BIM:
        return bim(net, X, y, ac.epsilon, ac.iterations)
    return mim(net, X, y, ac.epsilon, ac.iterations, ac.decay)


def craft(net, X, y, ac: AttackConfig, seed: int | None = None) -> PerturbedDataset:
    """Perturb a whole test set in fixed-size chunks; labels and order are kept."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != net.config.input_length:
        raise ValueError(f"test windows of length {X.shape[-1]} do not fit substitute input "
                         f"{net.config.input_length}")
    out = np.empty_like(X)
    for s in range(0, len(X), CHUNK):
        out[s:s + CHUNK] = perturb(net, X[s:s + CHUNK], y[s:s + CHUNK], ac)
    prov = {"method": ac.method.value, "epsilon": ac.epsilon, "alpha": ac.alpha,
            "iterations": ac.iterations, "decay": ac.decay,
            "substitute_sha256": sub.checkpoint_hash(net), "seed": seed}
    return PerturbedDataset(out, y.copy(), prov)


def write_perturbed(pd: PerturbedDataset, path, num_classes: int | None = None) -> Path:
    """CSV in the dataset layout plus ``<path>.provenance.json``. Returns the sidecar path."""
    path = Path(path)
    J = num_classes if num_classes is not None else int(pd.labels.max()) + 1
    save_csv(pd.as_dataset(J), path)
    side = path.with_name(path.name + ".provenance.json")
    side.write_text(json.dumps(pd.provenance, indent=2, sort_keys=True) + "\n")
    return side


def read_provenance(path) -> dict:
    path = Path(path)
    return json.loads(path.with_name(path.name + ".provenance.json").read_text())


def config_dict(ac: AttackConfig) -> dict:
    d = asdict(ac)
    d["method"] = ac.method.value
    d["alpha"] = ac.alpha
    return d
