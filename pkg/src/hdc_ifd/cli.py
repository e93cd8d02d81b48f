"""Command-line entry point: ``hdc-ifd <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
Flag precedence: built-in defaults < ``--config`` file (key=value lines) < flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import bench
from . import data as dmod
from . import substitute as sub
from .errors import ConfigError, DataError, StageError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("hdc_ifd")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _csv_list(s):
    return [p.strip() for p in s.split(",") if p.strip()]


def _int_list(s):
    try:
        return [int(p) for p in _csv_list(s)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def parse_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Keys use RunConfig field names."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    names = set(bench.RunConfig.field_names())
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, val = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "str":
            key = "str_counts"
        if key not in names:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = val
    return out


def _coerce(key, raw):
    default = getattr(bench.RunConfig, key, None)
    if key == "data":
        return raw or None
    if key in ("attacks", "targets"):
        return tuple(_csv_list(raw)) if isinstance(raw, str) else tuple(raw)
    if key == "str_counts":
        return tuple(_int_list(raw)) if isinstance(raw, str) else tuple(raw)
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def build_run_config(args) -> bench.RunConfig:
    values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    cli = {
        "data": args.data, "seed": args.seed, "dim": args.dim, "epsilon": args.epsilon,
        "iterations": args.iterations, "decay": args.decay, "attacks": args.attacks,
        "str_counts": args.str, "replicates": args.replicates,
        "noise_std": getattr(args, "noise", None), "targets": getattr(args, "targets", None),
    }
    if getattr(args, "synthetic", False):
        cli["data"] = ""
    values.update({k: v for k, v in cli.items() if v is not None})
    try:
        return bench.RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _add_common(p, data=True):
    if data:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--data", help="dataset prefix: reads <prefix>_train.csv and <prefix>_test.csv")
        g.add_argument("--synthetic", action="store_true", help="use the built-in synthetic dataset")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="file of key=value lines overriding defaults")
    p.add_argument("--out", help="output path")


def _add_attack(p):
    p.add_argument("--epsilon", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--decay", type=float)


def make_parser():
    ap = _Parser(prog="hdc-ifd", description="HDC fault classifier vs. transfer adversarial attacks")
    ap.add_argument("-v", "--verbose", action="store_true")
    sp = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sp.add_parser("synth", help="generate a synthetic dataset pair")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="prefix for <out>_train.csv / <out>_test.csv")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--train-per-class", type=int, default=1980)
    p.add_argument("--test-per-class", type=int, default=75)
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.05)

    p = sp.add_parser("train-substitute", help="train the substitute (or its robust twin) on a dataset")
    _add_common(p)
    p.add_argument("--str", type=int, help="train on a stratified subset of this many windows")
    p.add_argument("--rom", action="store_true", help="adversarial (min-max) training for ROM")
    p.add_argument("--epsilon", type=float, default=0.1)

    p = sp.add_parser("craft", help="perturb the test set with a trained substitute")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attack", default="fgsm", choices=[m.value for m in atk.Method])
    _add_attack(p)

    p = sp.add_parser("eval", help="train targets and score them on clean and perturbed test sets")
    _add_common(p)
    p.add_argument("--perturbed", required=True, type=_csv_list, help="comma list of crafted CSVs")
    p.add_argument("--str", type=int)
    p.add_argument("--dim", type=int, default=10000)
    p.add_argument("--targets", type=_csv_list, default=list(bench.TARGETS[:2]))
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sp.add_parser("bench", help="full black-box transfer pipeline")
    _add_common(p)
    p.add_argument("--dim", type=int)
    _add_attack(p)
    p.add_argument("--attacks", type=_csv_list)
    p.add_argument("--str", type=_int_list, help="comma list of STR training counts")
    p.add_argument("--replicates", type=int)
    p.add_argument("--targets", type=_csv_list)
    p.add_argument("--noise", type=float, help="synthetic noise std")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--csv-out", help="also write the flat CSV here")

    p = sp.add_parser("report", help="re-render a JSON report")
    p.add_argument("report")
    p.add_argument("--format", choices=("json", "csv", "table"), default="table")
    p.add_argument("--out")
    p.add_argument("--check", action="store_true", help="recompute derived metrics and verify")
    return ap


# -- staged commands ------------------------------------------------------------------

def _load(args):
    if getattr(args, "data", None):
        return dmod.load_pair(args.data)
    return bench.load_data(bench.RunConfig(seed=args.seed or 0))


def _subset_normalize(args, train, test, count, stats=None):
    seed = args.seed or 0
    if count:
        train = dmod.subsample_str(train, count, bench.derive_seed(seed, count, 1))
    (train, test), stats = dmod.normalize(train, test, stats=stats)
    return train, test, stats


def cmd_synth(args):
    train, test = dmod.synth_pair(args.classes, args.train_per_class, args.test_per_class,
                                  args.window, args.noise, args.seed)
    dmod.save_csv(train, args.out + "_train.csv")
    dmod.save_csv(test, args.out + "_test.csv")
    print(f"wrote {args.out}_train.csv ({len(train)}) and {args.out}_test.csv ({len(test)})")


def cmd_train_substitute(args):
    if not args.out:
        raise ConfigError("--out checkpoint path is required")
    seed = args.seed or 0
    train, test = _load(args)
    train, _, stats = _subset_normalize(args, train, test, args.str)
    J = max(train.num_classes, test.num_classes)
    nc = sub.NetworkConfig(input_length=train.window_length, num_classes=J, seed=seed)
    tc = sub.TrainConfig(seed=seed)
    if args.rom:
        net, hist = atk.rom_train(train.windows, train.labels, nc, tc, args.epsilon)
    else:
        net, hist = sub.train(sub.init_net(nc), train.windows, train.labels, tc)
    sub.save_checkpoint(net, args.out)
    meta = {"normalization": list(stats), "str_count": args.str, "seed": seed, "rom": args.rom,
            "epsilon": args.epsilon if args.rom else None, "history": hist, "data": args.data,
            "sha256": sub.checkpoint_hash(net)}
    Path(args.out + ".json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {args.out}: {len(hist)} epochs, best val acc "
          f"{max(h['val_accuracy'] for h in hist):.4f}")


def cmd_craft(args):
    if not args.out:
        raise ConfigError("--out CSV path is required")
    net = sub.load_checkpoint(args.checkpoint)
    meta_path = Path(args.checkpoint + ".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    _, test = _load(args)
    stats = tuple(meta["normalization"]) if "normalization" in meta else None
    if stats is None:
        raise DataError(f"{meta_path} with normalization stats is missing")
    (test,), _ = dmod.normalize(test, stats=stats)
    ac = atk.AttackConfig(args.attack, args.epsilon if args.epsilon is not None else 0.1,
                          args.iterations or 100, args.decay if args.decay is not None else 1.0)
    pd = atk.craft(net, test.windows, test.labels, ac, seed=args.seed)
    pd.provenance.update(normalization=list(stats), str_count=meta.get("str_count"), data=args.data)
    atk.write_perturbed(pd, args.out, test.num_classes)
    acc_c = sub.evaluate(net, test.windows, test.labels)
    acc_p = sub.evaluate(net, pd.windows, pd.labels)
    print(f"wrote {args.out}: substitute accuracy {acc_c:.4f} clean -> {acc_p:.4f} perturbed")


def cmd_eval(args):
    if not args.out:
        raise ConfigError("--out report path is required")
    from . import hdc
    provs = [atk.read_provenance(p) for p in args.perturbed]
    stats = {tuple(p["normalization"]) for p in provs}
    if len(stats) != 1:
        raise DataError("perturbed sets were normalized with different statistics")
    train, test = _load(args)
    train, test, _ = _subset_normalize(args, train, test, args.str, stats=stats.pop())
    J = max(train.num_classes, test.num_classes)
    seed = args.seed or 0
    sets = []
    for path, prov in zip(args.perturbed, provs):
        ds = dmod.load_csv(path)
        if not np.array_equal(ds.labels, test.labels):
            raise DataError(f"{path}: labels do not match the test set")
        sets.append((prov["method"], ds.windows))
    report = bench.ResiliencyReport(metadata={"perturbed": provs, "command": "eval"})
    count = args.str or len(train)
    for t in args.targets:
        if t == "HDC":
            model, secs = bench._timed(lambda: hdc.HdcClassifier.create(
                train.window_length, hdc.HdcConfig(args.dim), seed=seed).fit(train.windows, train.labels, J))
        elif t == "NearestCentroid":
            model, secs = bench._timed(lambda: bench.NearestCentroid().fit(train.windows, train.labels, J))
        else:
            raise ConfigError(f"target {t} is not available in eval (use bench)")
        acc_c = bench.accuracy(model.predict(test.windows), test.labels)
        accs = []
        for name, X in sets:
            acc_p = bench.accuracy(model.predict(X), test.labels)
            comp, capped = bench.compromise_flagged(acc_c, acc_p)
            report.attacks.append(bench.AttackRecord(t, count, name, 0, seed, acc_c, acc_p, comp, capped, secs))
            accs.append(acc_p)
        report.means.append(bench.MeanRecord(t, count, 0, seed, acc_c, bench.mean_compromise(acc_c, accs), secs))
    report.sort()
    bench.emit_report(report, args.format, args.out)
    _print_table(report)


def cmd_bench(args):
    cfg = build_run_config(args)
    out = args.out or "report." + args.format
    try:
        report = bench.run_pipeline(cfg)
    except StageError as exc:
        partial = getattr(exc, "report", None)
        if partial is not None and not partial.is_empty():
            bench.emit_report(partial, args.format, out)
            log.error("partial report written to %s", out)
        raise
    bench.emit_report(report, args.format, out)
    if args.csv_out:
        bench.emit_report(report, "csv", args.csv_out)
    _print_table(report)
    print(f"wrote {out}")


def _print_table(report):
    rows = report.summary()
    print(f"{'target':<20}{'STR':>6}{'clean':>8}{'mean comp':>11}{'train s':>9}  per-attack accuracy")
    for r in rows:
        per = " ".join(f"{a}={v['acc_perturbed']:.3f}" for a, v in r["attacks"].items())
        print(f"{r['target']:<20}{r['str_count']:>6}{r['acc_normal']:>8.3f}{r['mean_compromise']:>11.4f}"
              f"{r['train_seconds']:>9.3f}  {per}")
    imps = {}
    for i in report.improvements:
        imps.setdefault((i.reference, i.str_count), []).append(i.improvement_pct)
    for (ref, count), v in imps.items():
        print(f"improvement of HDC over {ref} at STR {count}: {sum(v) / len(v):.2f}%")


def cmd_report(args):
    report = bench.load_report(args.report)
    if args.check:
        problems = bench.recompute_check(report)
        for p in problems:
            print("MISMATCH", p)
        if problems:
            raise RuntimeError(f"{len(problems)} derived metrics do not match the raw accuracies")
        print("all derived metrics recompute exactly")
    if args.format == "table":
        _print_table(report)
    elif args.out:
        bench.emit_report(report, args.format, args.out)
    else:
        sys.stdout.write(bench.report_csv(report) if args.format == "csv"
                         else json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


COMMANDS = {"synth": cmd_synth, "train-substitute": cmd_train_substitute, "craft": cmd_craft,
            "eval": cmd_eval, "bench": cmd_bench, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.cmd](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        code = EXIT_DATA if isinstance(exc.cause, (DataError, FileNotFoundError)) else EXIT_RUNTIME
        if isinstance(exc.cause, ConfigError):
            code = EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
