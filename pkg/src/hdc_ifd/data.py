"""Dataset ingestion, windowing, normalization, STR subsampling and synthetic signals.

CSV layout (UTF-8, no header): each row holds ``n`` float samples followed by
one integer class label. Datasets come in ``<name>_train.csv`` /
``<name>_test.csv`` pairs.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)


@dataclass
class SignalDataset:
    """Windows of shape (N, n) with integer labels in ``0..num_classes-1``."""

    windows: np.ndarray
    labels: np.ndarray
    num_classes: int
    normalization_stats: tuple[float, float] | None = None

    def __post_init__(self):
        self.windows = np.ascontiguousarray(self.windows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.windows.ndim != 2:
            raise DataError(f"windows must be 2-D, got shape {self.windows.shape}")
        if len(self.windows) != len(self.labels):
            raise DataError(f"{len(self.windows)} windows but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in 0..{self.num_classes - 1}")

    def __len__(self):
        return len(self.labels)

    @property
    def window_length(self) -> int:
        return self.windows.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx) -> SignalDataset:
        return replace(self, windows=self.windows[idx], labels=self.labels[idx])


@dataclass
class StrPlan:
    """Sample-training-ratio sweep: training-set sizes to evaluate."""

    sample_counts: list[int]
    ratios: list[float] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        counts = list(self.sample_counts)
        if not counts or any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError(f"sample counts must be non-empty and strictly increasing: {counts}")


def doubling_plan(train_size: int, start: int = 240, stop: int = 7680, seed: int = 0) -> StrPlan:
    """Counts start, 2*start, ... up to ``stop`` (inclusive), capped at train_size."""
    counts = []
    c = start
    while c <= min(stop, train_size):
        counts.append(c)
        c *= 2
    return StrPlan(counts, [c / train_size for c in counts], seed)


# -- CSV ----------------------------------------------------------------------

def load_csv(path) -> SignalDataset:
    path = Path(path)
    rows, labels = [], []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataError(f"{path}: row {lineno}: need at least one value and a label")
            elif len(row) != width:
                raise DataError(f"{path}: row {lineno}: ragged row ({len(row)} fields, expected {width})")
            try:
                vals = [float(c) for c in row[:-1]]
                lab = int(row[-1])
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: row {lineno}: non-finite value")
            if lab < 0:
                raise DataError(f"{path}: row {lineno}: negative label {lab}")
            rows.append(vals)
            labels.append(lab)
    if not rows:
        raise DataError(f"{path}: no data rows")
    J = max(labels) + 1
    ds = SignalDataset(np.array(rows), np.array(labels), J)
    missing = np.flatnonzero(ds.class_counts() == 0)
    if len(missing):
        log.warning("%s: classes with zero samples: %s", path, missing.tolist())
    return ds


def save_csv(ds: SignalDataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for x, y in zip(ds.windows, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def load_pair(prefix) -> tuple[SignalDataset, SignalDataset]:
    """Load ``<prefix>_train.csv`` and ``<prefix>_test.csv``; J is shared."""
    prefix = str(prefix)
    train = load_csv(prefix + "_train.csv")
    test = load_csv(prefix + "_test.csv")
    if train.window_length != test.window_length:
        raise DataError(f"train/test window lengths differ: {train.window_length} vs {test.window_length}")
    J = max(train.num_classes, test.num_classes)
    return replace(train, num_classes=J), replace(test, num_classes=J)


# -- windowing / normalization --------------------------------------------------

def window(signal, n: int, stride: int | None = None) -> np.ndarray:
    """Cut ``signal`` into length-n windows at offsets 0, stride, 2*stride, ...

    Trailing samples that do not fill a whole window are dropped. Default
    stride is ``n`` (non-overlapping).
    """
    signal = np.asarray(signal, dtype=np.float64)
    stride = n if stride is None else stride
    if n < 1 or stride < 1:
        raise ValueError(f"window length and stride must be >= 1 (got n={n}, stride={stride})")
    if len(signal) < n:
        raise DataError(f"signal of length {len(signal)} is shorter than window {n}: no windows")
    count = (len(signal) - n) // stride + 1
    starts = np.arange(count) * stride
    return signal[starts[:, None] + np.arange(n)]


def normalize(train: SignalDataset, *others: SignalDataset, stats=None):
    """Global z-score using training statistics only.

    Returns ``(normalized datasets as a list, (mean, std))``; the first entry
    is the training set. Pass ``stats`` to reuse previously emitted ones.
    """
    if len(train) == 0:
        raise DataError("cannot normalize an empty training set")
    if stats is None:
        mean = float(train.windows.mean())
        std = float(train.windows.std())
        if std < 1e-12:
            raise DataError(f"degenerate training std {std:g}: constant signal")
        stats = (mean, std)
    mean, std = stats
    out = [replace(d, windows=(d.windows - mean) / std, normalization_stats=stats)
           for d in (train, *others)]
    return out, stats


# -- STR subsampling ------------------------------------------------------------

def stratified_counts(class_counts, count: int) -> np.ndarray:
    """Per-class allocation proportional to frequency, largest-remainder rounding, each >= 1."""
    class_counts = np.asarray(class_counts, dtype=np.int64)
    J = len(class_counts)
    total = int(class_counts.sum())
    if count < J:
        raise ValueError(f"count {count} is smaller than the number of classes {J}")
    if count > total:
        raise ValueError(f"count {count} exceeds dataset size {total}")
    if (class_counts == 0).any():
        raise DataError(f"cannot stratify: empty classes {np.flatnonzero(class_counts == 0).tolist()}")
    quota = class_counts * count / total
    alloc = np.maximum(np.floor(quota).astype(np.int64), 1)
    # remaining deficit: the fractional remainder, negative for classes lifted to the floor
    rem = quota - alloc
    # stable sort keeps the lowest class index first among equal remainders
    by_rem = np.argsort(-rem, kind="stable")
    i = 0
    while alloc.sum() < count:
        j = by_rem[i % J]
        if alloc[j] < class_counts[j]:
            alloc[j] += 1
        i += 1
    while alloc.sum() > count:
        # forced minimums overshot: trim the classes furthest above their quota
        over = np.where(alloc > 1, alloc - quota, -np.inf)
        alloc[int(np.argmax(over))] -= 1
    return alloc


def subsample_str(train: SignalDataset, count: int, seed: int) -> SignalDataset:
    """Stratified subset of ``count`` samples, returned in original order."""
    alloc = stratified_counts(train.class_counts(), count)
    rng = np.random.default_rng(seed)
    picked = []
    for j, k in enumerate(alloc):
        idx = np.flatnonzero(train.labels == j)
        picked.append(rng.permutation(idx)[:k])
    return train.subset(np.sort(np.concatenate(picked)))


# -- synthetic bearing-like signals -----------------------------------------------

TONE_AMPLITUDE = 0.2


def synth_class_params(J: int, n: int):
    """Per-class (tone cycles per window, impulse amplitude, impulse period) table.

    Class j: tone with ``2 + j`` cycles per window, impulse amplitude
    ``0.5 + 0.1 * j`` and impulse period ``max(2, n // (2 + j))`` samples.
    """
    return [(2 + j, 0.5 + 0.1 * j, max(2, n // (2 + j))) for j in range(J)]


def synth_templates(J: int, n: int, seed: int) -> np.ndarray:
    """Noiseless per-class waveforms of length n, (J, n).

    Every class shares a unit carrier of one cycle per window (shaft
    rotation); class j adds a weak tone ``TONE_AMPLITUDE * sin(2 pi k_j t/n + phi_j)``
    and an impulse train of amplitude a_j and period p_j starting at a seeded
    offset. Phases and offsets come from ``seed``. Because the class features
    are small next to the carrier, classes are separable but only by margins
    comparable to a 0.1 perturbation once noise is added.
    """
    rng = np.random.default_rng([seed, 0])
    tau = np.arange(n)
    carrier = np.sin(2 * np.pi * tau / n)
    out = np.empty((J, n))
    for j, (cycles, amp, period) in enumerate(synth_class_params(J, n)):
        phase = rng.uniform(0.0, 2 * np.pi)
        offset = rng.integers(0, period)
        impulses = ((tau - offset) % period == 0).astype(np.float64)
        out[j] = carrier + TONE_AMPLITUDE * np.sin(2 * np.pi * cycles * tau / n + phase) + amp * impulses
    return out


def synth_generate(J: int, per_class: int, n: int = 100, noise_std: float = 0.0,
                   seed: int = 0, noise_stream: int = 1) -> SignalDataset:
    """Synthetic fault dataset: per class a long signal of ``per_class`` periods
    of its template plus Gaussian noise, cut into non-overlapping windows.

    ``noise_stream`` selects an independent noise sequence for the same
    templates (used to draw disjoint train and test sets).
    """
    if J < 2:
        raise ValueError(f"need at least 2 classes, got {J}")
    if per_class < 1 or n < 1:
        raise ValueError("per_class and n must be >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    templates = synth_templates(J, n, seed)
    rng = np.random.default_rng([seed, noise_stream])
    windows, labels = [], []
    for j in range(J):
        signal = np.tile(templates[j], per_class)
        if noise_std > 0:
            signal = signal + rng.normal(0.0, noise_std, size=signal.shape)
        windows.append(window(signal, n))
        labels.append(np.full(per_class, j))
    return SignalDataset(np.concatenate(windows), np.concatenate(labels), J)


def synth_pair(J: int = 10, train_per_class: int = 96, test_per_class: int = 75, n: int = 100,
               noise_std: float = 0.0, seed: int = 0) -> tuple[SignalDataset, SignalDataset]:
    """Train/test sets sharing class templates with independent noise."""
    train = synth_generate(J, train_per_class, n, noise_std, seed, noise_stream=1)
    test = synth_generate(J, test_per_class, n, noise_std, seed, noise_stream=2)
    return train, test
