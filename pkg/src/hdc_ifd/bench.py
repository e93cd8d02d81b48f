"""Black-box transfer benchmark.

For every replicate and STR count: subsample the training pool, normalize,
train the substitute (and its adversarially trained twin for ROM), craft one
perturbed test set per attack, train every target on the same subset, and
score clean vs. perturbed accuracy. Report rows are emitted in canonical
(target, STR, attack, replicate) order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import data as dmod
from . import hdc
from . import substitute as sub
from ._backend import BACKEND
from .errors import DataError, StageError

log = logging.getLogger(__name__)

CAP = 1e6
ATTACKS = ("fgsm", "bim", "mim", "rom")
TARGETS = ("HDC", "NearestCentroid", "SubstituteWhiteBox")
REFERENCE_TARGET = "HDC"


# -- metrics -----------------------------------------------------------------------

def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    if predictions.shape != labels.shape:
        raise ValueError(f"{len(predictions)} predictions for {len(labels)} labels")
    return float(np.count_nonzero(predictions == labels) / len(labels))


def compromise_flagged(acc_normal: float, acc_perturbed: float) -> tuple[float, bool]:
    """Clean / perturbed accuracy ratio and whether the zero-denominator cap was hit."""
    if not 0 < acc_normal <= 1:
        raise ValueError(f"clean accuracy must lie in (0, 1] for a defined baseline, got {acc_normal}")
    if not 0 <= acc_perturbed <= 1:
        raise ValueError(f"perturbed accuracy must lie in [0, 1], got {acc_perturbed}")
    if acc_perturbed == 0:
        return CAP, True
    return acc_normal / acc_perturbed, False


def compromise(acc_normal: float, acc_perturbed: float) -> float:
    return compromise_flagged(acc_normal, acc_perturbed)[0]


def mean_compromise(acc_normal: float, perturbed_accs) -> float:
    perturbed_accs = list(perturbed_accs)
    if not perturbed_accs:
        raise ValueError("need at least one attack for a mean compromise")
    return sum(compromise(acc_normal, a) for a in perturbed_accs) / len(perturbed_accs)


def improvement(comp_dl: float, comp_hdc: float) -> float:
    """Relative compromise reduction in percent; negative when HDC is worse."""
    if comp_dl <= 0:
        raise ValueError(f"comparison compromise must be > 0, got {comp_dl}")
    return 100.0 * (comp_dl - comp_hdc) / comp_dl


# -- targets -------------------------------------------------------------------------

class NearestCentroid:
    """Euclidean nearest class mean in input space; ties go to the lowest class."""

    def fit(self, X, y, num_classes):
        self.centroids = np.stack([X[y == j].mean(axis=0) for j in range(num_classes)])
        return self

    def predict(self, X):
        d = ((X[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return d.argmin(axis=1)


class _NetTarget:
    def __init__(self, net):
        self.net = net

    def predict(self, X):
        return sub.predict(self.net, X)


# -- report ----------------------------------------------------------------------------

@dataclass
class AttackRecord:
    target: str
    str_count: int
    attack: str
    replicate: int
    seed: int
    acc_normal: float
    acc_perturbed: float
    compromise: float
    capped: bool
    train_seconds: float


@dataclass
class MeanRecord:
    target: str
    str_count: int
    replicate: int
    seed: int
    acc_normal: float
    mean_compromise: float
    train_seconds: float


@dataclass
class ImprovementRecord:
    target: str
    reference: str
    str_count: int
    replicate: int
    seed: int
    comp_reference: float
    comp_target: float
    improvement_pct: float


@dataclass
class ResiliencyReport:
    metadata: dict = field(default_factory=dict)
    attacks: list[AttackRecord] = field(default_factory=list)
    means: list[MeanRecord] = field(default_factory=list)
    improvements: list[ImprovementRecord] = field(default_factory=list)
    incomplete: bool = False
    error: str | None = None

    def is_empty(self) -> bool:
        return not (self.attacks or self.means)

    def sort(self):
        order = {t: i for i, t in enumerate(TARGETS)}
        a_order = {a: i for i, a in enumerate((*ATTACKS, "none"))}
        self.attacks.sort(key=lambda r: (order.get(r.target, 99), r.target, r.str_count,
                                         a_order.get(r.attack, 99), r.replicate))
        self.means.sort(key=lambda r: (order.get(r.target, 99), r.target, r.str_count, r.replicate))
        self.improvements.sort(key=lambda r: (order.get(r.reference, 99), r.reference,
                                              r.str_count, r.replicate))
        return self

    def summary(self) -> list[dict]:
        """Means over replicates per (target, STR)."""
        groups: dict[tuple, list[MeanRecord]] = {}
        for m in self.means:
            groups.setdefault((m.target, m.str_count), []).append(m)
        out = []
        for (target, str_count), ms in groups.items():
            row = {"target": target, "str_count": str_count, "replicates": len(ms),
                   "acc_normal": _mean(m.acc_normal for m in ms),
                   "mean_compromise": _mean(m.mean_compromise for m in ms),
                   "train_seconds": _mean(m.train_seconds for m in ms), "attacks": {}}
            for a in self.attacks:
                if a.target == target and a.str_count == str_count:
                    row["attacks"].setdefault(a.attack, []).append(a)
            row["attacks"] = {k: {"acc_perturbed": _mean(r.acc_perturbed for r in v),
                                  "compromise": _mean(r.compromise for r in v)}
                              for k, v in row["attacks"].items()}
            imps = [i for i in self.improvements if i.reference == target and i.str_count == str_count]
            if imps:
                row["improvement_of_" + imps[0].target + "_pct"] = _mean(i.improvement_pct for i in imps)
            out.append(row)
        return out

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "incomplete": self.incomplete,
            "error": self.error,
            "metadata": self.metadata,
            "attacks": [asdict(r) for r in self.attacks],
            "means": [asdict(r) for r in self.means],
            "improvements": [asdict(r) for r in self.improvements],
            "summary": self.summary(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ResiliencyReport:
        if d.get("version") != 1:
            raise DataError(f"unsupported report version {d.get('version')}")
        return cls(d["metadata"], [AttackRecord(**r) for r in d["attacks"]],
                   [MeanRecord(**r) for r in d["means"]],
                   [ImprovementRecord(**r) for r in d["improvements"]],
                   d["incomplete"], d["error"])


def _mean(vals):
    vals = list(vals)
    return sum(vals) / len(vals)


CSV_COLUMNS = ("target", "str", "attack", "acc_normal", "acc_perturbed", "compromise",
               "train_seconds", "seed", "replicate", "capped")
TIME_COLUMNS = ("train_seconds",)


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def report_csv(report: ResiliencyReport) -> str:
    """Flat CSV: one row per target x STR x attack x replicate, then ``attack=mean``
    rows whose compromise column holds the mean compromise."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.attacks:
        w.writerow([_fmt(v) for v in (r.target, r.str_count, r.attack, r.acc_normal, r.acc_perturbed,
                                      r.compromise, r.train_seconds, r.seed, r.replicate, r.capped)])
    for m in report.means:
        w.writerow([_fmt(v) for v in (m.target, m.str_count, "mean", m.acc_normal, None,
                                      m.mean_compromise, m.train_seconds, m.seed, m.replicate, None)])
    return buf.getvalue()


def emit_report(report: ResiliencyReport, fmt: str, path) -> Path:
    if report.is_empty():
        raise ValueError("refusing to write an empty report")
    path = Path(path)
    if fmt == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        text = report_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def load_report(path) -> ResiliencyReport:
    return ResiliencyReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def recompute_check(report: ResiliencyReport, tol: float = 1e-12) -> list[str]:
    """Independently recompute every derived metric from raw accuracies.

    Returns a list of discrepancy messages (empty when consistent).
    """
    problems = []
    by_cell: dict[tuple, list[AttackRecord]] = {}
    for r in report.attacks:
        expect = CAP if r.acc_perturbed == 0 else r.acc_normal / r.acc_perturbed
        if abs(expect - r.compromise) > tol * max(1.0, abs(expect)):
            problems.append(f"compromise {r}")
        by_cell.setdefault((r.target, r.str_count, r.replicate), []).append(r)
    means = {}
    for m in report.means:
        rows = by_cell.get((m.target, m.str_count, m.replicate), [])
        if not rows:
            problems.append(f"mean without attacks {m}")
            continue
        if any(r.acc_normal != m.acc_normal for r in rows):
            problems.append(f"clean accuracy not shared across attacks {m}")
        total = 0.0
        for r in rows:
            total += CAP if r.acc_perturbed == 0 else m.acc_normal / r.acc_perturbed
        expect = total / len(rows)
        if abs(expect - m.mean_compromise) > tol * max(1.0, abs(expect)):
            problems.append(f"mean compromise {m}: expected {expect}")
        means[(m.target, m.str_count, m.replicate)] = m.mean_compromise
    for i in report.improvements:
        cd = means.get((i.reference, i.str_count, i.replicate))
        ch = means.get((i.target, i.str_count, i.replicate))
        if cd is None or ch is None:
            problems.append(f"improvement without means {i}")
            continue
        expect = 100.0 * (cd - ch) / cd
        if abs(expect - i.improvement_pct) > tol * max(1.0, abs(expect)):
            problems.append(f"improvement {i}: expected {expect}")
    return problems


# -- pipeline ----------------------------------------------------------------------------

@dataclass
class RunConfig:
    data: str | None = None  # CSV prefix; None means synthetic
    seed: int = 0
    dim: int = 10000
    hdc_lr: float = 0.005
    hdc_epochs: int = 100
    epsilon: float = 0.1
    iterations: int = 100
    decay: float = 1.0
    attacks: tuple[str, ...] = ATTACKS
    str_counts: tuple[int, ...] = (240, 480, 960, 1920, 3840, 7680)
    replicates: int = 1
    targets: tuple[str, ...] = TARGETS
    # synthetic data
    num_classes: int = 10
    window: int = 100
    train_per_class: int = 1980
    test_per_class: int = 75
    noise_std: float = 0.05
    # substitute
    wide_kernel: int = 64
    wide_filters: int = 16
    small_kernel: int = 3
    small_filters: int = 32
    pool_width: int = 2
    dense_units: int = 100
    sub_lr: float = 0.001
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    validation_fraction: float = 0.2

    def __post_init__(self):
        self.attacks = tuple(a.lower() for a in self.attacks)
        self.str_counts = tuple(int(c) for c in self.str_counts)
        self.targets = tuple(self.targets)
        bad = [a for a in self.attacks if a not in (*ATTACKS, "none")]
        if bad:
            raise ValueError(f"unknown attacks {bad}")
        if not self.attacks:
            raise ValueError("at least one attack (or 'none') is required")
        bad = [t for t in self.targets if t not in TARGETS]
        if bad:
            raise ValueError(f"unknown targets {bad}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.str_counts or any(b <= a for a, b in zip(self.str_counts, self.str_counts[1:])):
            raise ValueError(f"STR counts must be strictly increasing: {self.str_counts}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def network_config(self, num_classes, n, seed) -> sub.NetworkConfig:
        return sub.NetworkConfig(n, self.wide_kernel, self.wide_filters, self.small_kernel,
                                 self.small_filters, self.pool_width, self.dense_units, num_classes, seed)

    def train_config(self, seed) -> sub.TrainConfig:
        return sub.TrainConfig(self.sub_lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                               patience=self.patience, validation_fraction=self.validation_fraction,
                               seed=seed)

    def attack_config(self, method) -> atk.AttackConfig:
        return atk.AttackConfig(method, self.epsilon, self.iterations, self.decay)


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def load_data(cfg: RunConfig):
    if cfg.data:
        return dmod.load_pair(cfg.data)
    return dmod.synth_pair(cfg.num_classes, cfg.train_per_class, cfg.test_per_class, cfg.window,
                           cfg.noise_std, cfg.seed)


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and not isinstance(ev, StageError):
            raise StageError(self.name, ev) from ev
        return False


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def run_cell(cfg: RunConfig, train_pool, test, str_count, replicate, rep_seed, report, meta_cells):
    J = max(train_pool.num_classes, test.num_classes)
    with _Stage(f"subsample str={str_count}"):
        subset = dmod.subsample_str(train_pool, str_count, derive_seed(rep_seed, str_count, 1))
    with _Stage(f"normalize str={str_count}"):
        (subset, test_n), stats = dmod.normalize(subset, test)
    X, y = subset.windows, subset.labels
    Xt, yt = test_n.windows, test_n.labels
    nc = cfg.network_config(J, X.shape[1], derive_seed(rep_seed, str_count, 2))
    tc = cfg.train_config(derive_seed(rep_seed, str_count, 3))

    with _Stage(f"train-substitute str={str_count}"):
        (net, hist), sub_secs = _timed(sub.train, sub.init_net(nc), X, y, tc)
    cell_meta = {"str_count": str_count, "replicate": replicate, "seed": rep_seed,
                 "normalization": list(stats), "substitute_sha256": sub.checkpoint_hash(net),
                 "substitute_epochs": len(hist), "substitute_train_seconds": sub_secs}
    robust = None
    if "rom" in cfg.attacks:
        with _Stage(f"rom-train str={str_count}"):
            rnc = cfg.network_config(J, X.shape[1], derive_seed(rep_seed, str_count, 4))
            (robust, rhist), rsecs = _timed(atk.rom_train, X, y, rnc, tc, cfg.epsilon)
        cell_meta.update(robust_sha256=sub.checkpoint_hash(robust), robust_epochs=len(rhist),
                         robust_train_seconds=rsecs)

    perturbed = {}
    for a in cfg.attacks:
        with _Stage(f"craft {a} str={str_count}"):
            if a == "none":
                perturbed[a] = Xt
            else:
                src = robust if a == "rom" else net
                perturbed[a] = atk.craft(src, Xt, yt, cfg.attack_config(a), seed=rep_seed).windows

    models = {}
    for t in cfg.targets:
        with _Stage(f"train-target {t} str={str_count}"):
            if t == "HDC":
                hc = hdc.HdcConfig(cfg.dim, cfg.hdc_lr, cfg.hdc_epochs,
                                   shuffle_seed=derive_seed(rep_seed, str_count, 5))

                def fit_hdc():
                    return hdc.HdcClassifier.create(X.shape[1], hc, seed=derive_seed(rep_seed, str_count, 6)).fit(X, y, J)
                models[t], secs = _timed(fit_hdc)
            elif t == "NearestCentroid":
                models[t], secs = _timed(lambda: NearestCentroid().fit(X, y, J))
            else:
                models[t], secs = _NetTarget(net), sub_secs
        models[t] = (models[t], secs)

    mean_comp = {}
    for t, (model, secs) in models.items():
        with _Stage(f"evaluate {t} str={str_count}"):
            acc_clean = accuracy(model.predict(Xt), yt)  # single cached clean evaluation
            accs = []
            for a in cfg.attacks:
                acc_p = acc_clean if a == "none" else accuracy(model.predict(perturbed[a]), yt)
                comp, capped = compromise_flagged(acc_clean, acc_p)
                report.attacks.append(AttackRecord(t, str_count, a, replicate, rep_seed, acc_clean,
                                                   acc_p, comp, capped, secs))
                accs.append(acc_p)
            mean_comp[t] = mean_compromise(acc_clean, accs)
            report.means.append(MeanRecord(t, str_count, replicate, rep_seed, acc_clean, mean_comp[t], secs))
    if REFERENCE_TARGET in mean_comp:
        for t, c in mean_comp.items():
            if t != REFERENCE_TARGET:
                report.improvements.append(ImprovementRecord(
                    REFERENCE_TARGET, t, str_count, replicate, rep_seed, c,
                    mean_comp[REFERENCE_TARGET], improvement(c, mean_comp[REFERENCE_TARGET])))
    meta_cells.append(cell_meta)
    log.info("replicate %d str %d done: %s", replicate, str_count,
             {t: round(m, 4) for t, m in mean_comp.items()})


def run_pipeline(cfg: RunConfig, data=None) -> ResiliencyReport:
    """Run the full benchmark. On failure raises StageError with ``.report``
    holding the partial results (flagged incomplete)."""
    report = ResiliencyReport()
    cells: list[dict] = []
    report.metadata = {"config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
                       "backend": BACKEND, "cells": cells}
    try:
        with _Stage("load-data"):
            train_pool, test = data if data is not None else load_data(cfg)
            if max(cfg.str_counts) > len(train_pool):
                raise DataError(f"STR count {max(cfg.str_counts)} exceeds training pool of {len(train_pool)}")
        report.metadata["data"] = {"train_size": len(train_pool), "test_size": len(test),
                                   "num_classes": max(train_pool.num_classes, test.num_classes),
                                   "window": train_pool.window_length,
                                   "str_ratios": [c / len(train_pool) for c in cfg.str_counts]}
        for r in range(cfg.replicates):
            rep_seed = derive_seed(cfg.seed, r)
            for count in cfg.str_counts:
                run_cell(cfg, train_pool, test, count, r, rep_seed, report, cells)
    except StageError as exc:
        report.incomplete = True
        report.error = str(exc)
        report.sort()
        exc.report = report
        raise
    return report.sort()
