"""Differentiable 1-D CNN used by the attacker as a gradient source.

Layer chain (valid padding, stride 1)::

    wide conv -> relu -> maxpool -> small conv -> relu -> maxpool
    -> flatten -> dense -> relu -> dense (logits)

Cost is softmax cross-entropy. Everything is batched over the leading axis
and written directly against numpy plus the conv/pool kernels.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._backend import kernels as _k
from .errors import ConfigError, DataError, TrainingError

PARAM_NAMES = ("conv_wide_w", "conv_wide_b", "conv_small_w", "conv_small_b",
               "dense_hidden_w", "dense_hidden_b", "dense_out_w", "dense_out_b")


@dataclass(frozen=True)
class NetworkConfig:
    input_length: int = 100
    wide_kernel: int = 64
    wide_filters: int = 16
    small_kernel: int = 3
    small_filters: int = 32
    pool_width: int = 2
    dense_units: int = 100
    num_classes: int = 10
    seed: int = 0

    def layer_lengths(self) -> dict[str, int]:
        """Sequence length after each layer; raises ConfigError if the chain collapses."""
        for name in ("input_length", "wide_kernel", "wide_filters", "small_kernel",
                     "small_filters", "pool_width", "dense_units", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.wide_kernel > self.input_length:
            raise ConfigError(f"wide_kernel {self.wide_kernel} exceeds input_length {self.input_length}")
        out = {"conv_wide": self.input_length - self.wide_kernel + 1}
        out["pool_wide"] = out["conv_wide"] // self.pool_width
        out["conv_small"] = out["pool_wide"] - self.small_kernel + 1
        out["pool_small"] = out["conv_small"] // self.pool_width if out["conv_small"] >= 1 else 0
        for name, v in out.items():
            if v < 1:
                raise ConfigError(f"layer {name} has output length {v} < 1")
        out["flatten"] = out["pool_small"] * self.small_filters
        return out


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.patience > self.max_epochs:
            raise ConfigError("patience must not exceed max_epochs")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("batch_size and max_epochs must be >= 1, patience >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")


@dataclass
class SubstituteNet:
    params: dict[str, np.ndarray]
    config: NetworkConfig = field(default_factory=NetworkConfig)

    def copy(self) -> SubstituteNet:
        return SubstituteNet({k: v.copy() for k, v in self.params.items()}, self.config)


@dataclass
class GradientBundle:
    param_grads: dict[str, np.ndarray]
    input_grad: np.ndarray | None


def param_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, ...]]:
    flat = cfg.layer_lengths()["flatten"]
    return {
        "conv_wide_w": (cfg.wide_filters, 1, cfg.wide_kernel),
        "conv_wide_b": (cfg.wide_filters,),
        "conv_small_w": (cfg.small_filters, cfg.wide_filters, cfg.small_kernel),
        "conv_small_b": (cfg.small_filters,),
        "dense_hidden_w": (cfg.dense_units, flat),
        "dense_hidden_b": (cfg.dense_units,),
        "dense_out_w": (cfg.num_classes, cfg.dense_units),
        "dense_out_b": (cfg.num_classes,),
    }


def init_net(config: NetworkConfig | None = None) -> SubstituteNet:
    """He-style init: N(0, 2/fan_in) weights, zero biases, seeded."""
    config = config or NetworkConfig()
    shapes = param_shapes(config)
    rng = np.random.default_rng(config.seed)
    params = {}
    for name in PARAM_NAMES:
        shape = shapes[name]
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return SubstituteNet(params, config)


def _as_batch(net, X):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.config.input_length:
        raise ValueError(f"input length {X.shape[-1]} does not match network input {net.config.input_length}")
    return np.ascontiguousarray(X), single


def _forward(net, X):
    p = net.params
    pw = net.config.pool_width
    cache = {"x0": X[:, None, :]}
    z1 = _k.conv1d_forward(cache["x0"], p["conv_wide_w"], p["conv_wide_b"])
    a1 = np.maximum(z1, 0.0)
    p1, i1 = _k.maxpool_forward(a1, pw)
    z2 = _k.conv1d_forward(p1, p["conv_small_w"], p["conv_small_b"])
    a2 = np.maximum(z2, 0.0)
    p2, i2 = _k.maxpool_forward(a2, pw)
    f = p2.reshape(len(X), -1)
    z3 = f @ p["dense_hidden_w"].T + p["dense_hidden_b"]
    a3 = np.maximum(z3, 0.0)
    logits = a3 @ p["dense_out_w"].T + p["dense_out_b"]
    cache.update(z1=z1, p1=p1, i1=i1, z2=z2, p2=p2, i2=i2, f=f, z3=z3, a3=a3)
    return logits, cache


def forward(net: SubstituteNet, x) -> np.ndarray:
    """Raw logits, (num_classes,) for one window or (B, num_classes) for a batch."""
    X, single = _as_batch(net, x)
    logits, _ = _forward(net, X)
    return logits[0] if single else logits


def _log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def _check_labels(net, y, B):
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if len(y) != B:
        raise ValueError(f"{B} inputs but {len(y)} labels")
    if y.min() < 0 or y.max() >= net.config.num_classes:
        raise ValueError(f"class index must lie in 0..{net.config.num_classes - 1}")
    return y


def losses(net: SubstituteNet, X, y) -> np.ndarray:
    """Per-sample cross-entropy, (B,)."""
    X, _ = _as_batch(net, X)
    y = _check_labels(net, y, len(X))
    logits, _ = _forward(net, X)
    return -_log_softmax(logits)[np.arange(len(X)), y]


def loss(net: SubstituteNet, x, y) -> float:
    """Cross-entropy of one window, or the mean over a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(losses(net, x[None, :], [y])[0])
    return float(losses(net, x, y).mean())


def batch_gradients(net: SubstituteNet, X, y, weights=None, need_params=True, need_input=True):
    """Reverse-mode gradients of ``sum_i weights[i] * loss_i``.

    Returns ``(loss values, param grads or None, input grads (B, n) or None)``.
    With unit weights, row i of the input gradient is d loss_i / d x_i.
    """
    X, _ = _as_batch(net, X)
    y = _check_labels(net, y, len(X))
    B = len(X)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    p = net.params
    logits, c = _forward(net, X)
    logp = _log_softmax(logits)
    vals = -logp[np.arange(B), y]

    dlog = np.exp(logp)
    dlog[np.arange(B), y] -= 1.0
    dlog *= w[:, None]

    g = {}
    g["dense_out_w"] = dlog.T @ c["a3"]
    g["dense_out_b"] = dlog.sum(axis=0)
    dz3 = (dlog @ p["dense_out_w"]) * (c["z3"] > 0)
    g["dense_hidden_w"] = dz3.T @ c["f"]
    g["dense_hidden_b"] = dz3.sum(axis=0)
    dp2 = np.ascontiguousarray((dz3 @ p["dense_hidden_w"]).reshape(c["p2"].shape))
    dz2 = _k.maxpool_backward(dp2, c["i2"], c["z2"].shape[2]) * (c["z2"] > 0)
    dp1, g["conv_small_w"], g["conv_small_b"] = _k.conv1d_backward(c["p1"], p["conv_small_w"], dz2)
    dz1 = _k.maxpool_backward(dp1, c["i1"], c["z1"].shape[2]) * (c["z1"] > 0)
    dx0, g["conv_wide_w"], g["conv_wide_b"] = _k.conv1d_backward(c["x0"], p["conv_wide_w"], dz1,
                                                                  need_input)
    return vals, (g if need_params else None), (dx0[:, 0, :] if need_input else None)


def backward(net: SubstituteNet, x, y) -> GradientBundle:
    """Exact gradients of the single-sample loss w.r.t. parameters and input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("backward takes a single window; use batch_gradients for batches")
    _, g, gx = batch_gradients(net, x[None, :], [y])
    return GradientBundle(g, gx[0])


def input_gradients(net: SubstituteNet, X, y) -> np.ndarray:
    """Per-sample d loss_i / d x_i for a batch, (B, n)."""
    return batch_gradients(net, X, y, need_params=False)[2]


def predict(net: SubstituteNet, X, chunk: int = 1024) -> np.ndarray:
    X, _ = _as_batch(net, X)
    out = [forward(net, X[i:i + chunk]).argmax(axis=1) for i in range(0, len(X), chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(net: SubstituteNet, X, y) -> float:
    """Fraction of windows whose argmax logit equals the label."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float((predict(net, X) == y).mean())


class Adam:
    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in PARAM_NAMES:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def split_validation(N: int, fraction: float, seed: int):
    """Seeded (train_idx, val_idx) split; both parts non-empty."""
    n_val = min(max(1, int(round(N * fraction))), N - 1)
    perm = np.random.default_rng([seed, 17]).permutation(N)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(net: SubstituteNet, X, y, tc: TrainConfig | None = None, perturb=None):
    """Minibatch Adam with early stopping on validation accuracy.

    ``perturb(net, Xb, yb) -> Xb'`` optionally replaces each minibatch before
    its gradient step, using the current parameters (adversarial training).
    Returns ``(best-validation net, history)``.
    """
    tc = tc or TrainConfig()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != net.config.input_length:
        raise DataError("training windows do not match the network input length")
    if len(np.unique(y)) < 2:
        raise TrainingError("training set needs at least 2 classes")
    if len(y) < 2 * tc.batch_size:
        raise TrainingError(f"training set has {len(y)} samples; need at least {2 * tc.batch_size}")
    tr_idx, val_idx = split_validation(len(y), tc.validation_fraction, tc.seed)
    Xtr, ytr, Xval, yval = X[tr_idx], y[tr_idx], X[val_idx], y[val_idx]

    work = net.copy()
    opt = Adam(work.params, tc.learning_rate, tc.beta1, tc.beta2, tc.eps_stab)
    rng = np.random.default_rng([tc.seed, 29])
    best_acc, best, wait = -1.0, work.copy(), 0
    history = []
    for epoch in range(1, tc.max_epochs + 1):
        order = rng.permutation(len(ytr))
        batch_losses = []
        for s in range(0, len(order), tc.batch_size):
            idx = order[s:s + tc.batch_size]
            Xb, yb = Xtr[idx], ytr[idx]
            if perturb is not None:
                Xb = perturb(work, Xb, yb)
            vals, grads, _ = batch_gradients(work, Xb, yb, np.full(len(idx), 1.0 / len(idx)),
                                             need_input=False)
            batch_losses.append(float(vals.mean()))
            opt.step(work.params, grads)
        val_acc = evaluate(work, Xval, yval)
        history.append({"epoch": epoch, "train_loss": float(np.mean(batch_losses)), "val_accuracy": val_acc})
        if val_acc > best_acc:
            best_acc, best, wait = val_acc, work.copy(), 0
        else:
            wait += 1
        if wait >= tc.patience:
            break
    return best, history


# -- checkpoints ----------------------------------------------------------------------

_MAGIC = b"WDCN"
_VERSION = 1


def checkpoint_bytes(net: SubstituteNet) -> bytes:
    """Magic, version, JSON config header, then each parameter as little-endian float64."""
    hb = json.dumps(asdict(net.config), sort_keys=True).encode()
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(hb)), hb]
    parts += [net.params[k].astype("<f8").tobytes() for k in PARAM_NAMES]
    return b"".join(parts)


def checkpoint_hash(net: SubstituteNet) -> str:
    return hashlib.sha256(checkpoint_bytes(net)).hexdigest()


def save_checkpoint(net: SubstituteNet, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(net))


def load_checkpoint(path) -> SubstituteNet:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a substitute checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != _VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    cfg = NetworkConfig(**json.loads(raw[12:12 + hlen]))
    off = 12 + hlen
    params = {}
    for name, shape in param_shapes(cfg).items():
        size = int(np.prod(shape)) * 8
        params[name] = np.frombuffer(raw[off:off + size], dtype="<f8").astype(np.float64).reshape(shape)
        off += size
    if off != len(raw):
        raise DataError(f"{path}: trailing or missing parameter bytes")
    return SubstituteNet(params, cfg)
