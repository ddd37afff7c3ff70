"""Command-line entry point: ``sgld-privacy <verb> [options]``.

Exit codes: 0 success, 2 usage, 3 configuration error, 4 parse error,
5 numeric error, 1 any other toolkit error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import attacks
from .errors import ConfigError, NumericError, ParseError, SgldPrivacyError
from .experiment import (STRATEGIES, ExperimentConfig, average_records, build_predictor,
                         compare_strategies, emit, evaluate, execute, format_table, prepare_data,
                         run_experiment, seed_bundle, sweep, write_manifest)
from .net_core import LossBound
from .optimizers import StepSchedule, validate_schedule
from .posterior import load_snapshots, save_snapshots
from .privacy import audit_samples, write_mpl_reports

log = logging.getLogger("sgld_privacy")

EXIT_CODES = ((ConfigError, 3), (ParseError, 4), (NumericError, 5), (SgldPrivacyError, 1))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. optimizer.lr=0.002 (repeatable)")
    p.add_argument("--strategy", choices=sorted(STRATEGIES))
    p.add_argument("--seed-bundle", type=int, metavar="MASTER",
                   help="derive split/init/data-order/noise seeds from one master seed")
    p.add_argument("--out", type=Path, help="output directory")


def load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig().validate()
    config = config.with_overrides(args.overrides)
    if getattr(args, "strategy", None):
        config = config.replace(strategy=args.strategy)
    if args.seed_bundle is not None:
        config = config.replace(seeds=seed_bundle(args.seed_bundle))
    return config


def cmd_train(args) -> int:
    config = load_config(args)
    result = execute(config)
    r = result.record
    print(f"{config.strategy}: train acc {r.train_acc:.3f}  test acc {r.test_acc:.3f}  "
          f"gap {r.gap:.3f}  ({len(result.sample_set)} snapshots after burn-in)")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_manifest(config, args.out)
        save_snapshots(result.sample_set, args.out / "snapshots.bin")
        print(f"snapshots written to {args.out / 'snapshots.bin'}")
    return 0


def cmd_attack(args) -> int:
    config = load_config(args)
    if args.snapshots:
        sample_set = load_snapshots(args.snapshots)
        tr, ho, te = prepare_data(config)
        record, report, scores = evaluate(config, build_predictor(config, sample_set), tr, ho, te)
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            attacks.write_scores(scores, args.out / "scores.csv")
            attacks.write_roc(scores, args.out / "roc.csv")
            emit([record], args.out / "metrics.csv")
    else:
        record = run_experiment(config, args.out)
    print(format_table([record]))
    return 0


def cmd_compare(args) -> int:
    config = load_config(args)
    strategies = args.strategies.split(",") if args.strategies else list(STRATEGIES)
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise ConfigError(f"unknown strategies {bad}")
    masters = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    if masters is None:
        rows = compare_strategies([config.replace(strategy=s) for s in strategies])
        per_seed = {s: [r] for s, r in zip(strategies, rows)}
    else:
        per_seed = sweep(config, strategies, masters)
    table = [average_records(per_seed[s]) if masters else per_seed[s][0] for s in strategies]
    print(format_table(table))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_manifest(config, args.out, {"strategies": strategies, "master_seeds": masters})
        emit(table, args.out / "metrics.csv", "delimited")
        configs = [config.replace(strategy=s) for s in strategies]
        emit(table, args.out / "metrics.json", "structured", configs=configs)
        all_rows = [r for s in strategies for r in per_seed[s]]
        emit(all_rows, args.out / "metrics_per_seed.csv", "delimited")
    return 0


def cmd_audit(args) -> int:
    config = load_config(args)
    result = execute(config)
    ensemble = result.predictor if result.predictor.k > 1 else None
    tr, te = result.train, result.test
    X = np.concatenate([tr.X, te.X])
    y = np.concatenate([tr.y, te.y])
    ids = [f"train{i}" for i in range(len(tr))] + [f"test{i}" for i in range(len(te))]
    member = np.r_[np.ones(len(tr), int), np.zeros(len(te), int)]
    reports = audit_samples(result.sample_set, X, y, config.lam, LossBound(config.loss_bound),
                            ensemble=ensemble, ids=ids, membership=member)
    mpl = np.array([r.mpl for r in reports])
    lip = np.array([r.bound for r in reports])
    print(f"{len(reports)} samples  mean Mpl {mpl.mean():.5f}  max Mpl {mpl.max():.5f}  "
          f"mean bound {lip.mean():.5f}  bound violations {int(np.sum(mpl > lip + 1e-12))}")
    print(f"  members mean Mpl {mpl[member == 1].mean():.5f}  "
          f"nonmembers mean Mpl {mpl[member == 0].mean():.5f}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_manifest(config, args.out)
        write_mpl_reports(reports, args.out / "mpl_reports.csv")
    return 0


def cmd_validate_schedule(args) -> int:
    sched = StepSchedule(args.kind, args.lr, args.period, args.steps_per_epoch, args.b, args.gamma)
    report = validate_schedule(sched, args.horizon)
    d = asdict(report)
    d["decreasing"] = report.decreasing
    print(json.dumps(d, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgld-privacy",
                                     description="Train SGD/SGLD-family classifiers and measure membership leakage.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train one strategy and save post-burn-in snapshots")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run the threshold attack (training first unless --snapshots)")
    _add_common(p)
    p.add_argument("--snapshots", type=Path, help="snapshot file written by `train`")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("compare", help="paired comparison table across strategies")
    _add_common(p)
    p.add_argument("--strategies", help="comma-separated strategy names (default: all)")
    p.add_argument("--seeds", help="comma-separated master seeds to average over")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("audit", help="per-sample Mpl reports for train and test samples")
    _add_common(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("validate-schedule", help="check a step-size schedule")
    p.add_argument("--kind", choices=["constant", "halving", "polynomial"], default="polynomial")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--period", type=int, default=5)
    p.add_argument("--steps-per-epoch", type=int, default=1)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.55)
    p.add_argument("--horizon", type=int, default=10_000)
    p.set_defaults(func=cmd_validate_schedule)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except SgldPrivacyError as e:
        for cls, code in EXIT_CODES:
            if isinstance(e, cls):
                print(f"error: {e}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
