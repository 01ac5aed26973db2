"""Command line interface: ``r2n <subcommand>``.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 training failure or failed verification.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import (Schema, dataset_to_csv, export_literals, flip_labels, gen_synthetic,
                   load_csv, RULES)
from .dnf import Dnf, render
from .errors import ConfigError, DataError, KinkError, TrainingError
from .experiment import (ExperimentConfig, load_run, prepare_data, read_sweep_table,
                         reevaluate, resolve_out, run_experiment, run_sweep, verify_sweep)
from .training import HyperParams

log = logging.getLogger("r2n")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON; flags override its fields")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", help=f"output path (else ${'{'}R2N_OUT{'}'} or the config value)")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rule", choices=sorted(RULES), help="synthetic ground-truth rule")
    p.add_argument("--csv", help="CSV input instead of a synthetic rule")
    p.add_argument("--schema", help="schema JSON {label, categorical, numeric}")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--n-train", type=int, help="training-set size (synthetic: total = n/ratio)")
    p.add_argument("--noise", type=float, help="fraction of training labels to flip")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=["desk", "full"], default=None,
                   help="schedule preset: desk (2e4 epochs, restarts every 5e3) or full (2.5e5 epochs, restarts every 1e4)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--restart-period", type=int)
    p.add_argument("--lambda", dest="lam", type=float, help="one penalty for all layers")
    p.add_argument("--m", type=int)
    p.add_argument("--J", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--tau0", type=float, help="initial temperature")
    p.add_argument("--epoch-unit", choices=["pass", "step"])
    p.add_argument("--no-temperature-reset", action="store_true")
    p.add_argument("--threshold", type=float, help="coefficient threshold for simplification")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="r2n", description="Relational Rule Network experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    _common(p)
    p.add_argument("--rule", choices=sorted(RULES), default="ex1")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--noise", type=float, default=0.0)

    p = sub.add_parser("train", help="run one experiment")
    _common(p)
    _data_flags(p)
    _train_flags(p)

    p = sub.add_parser("sweep", help="run a grid of experiments")
    _common(p)
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--axis", choices=["lambda", "noise", "train_size"])
    p.add_argument("--grid", type=_floats)
    p.add_argument("--seeds", type=_ints)
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("export-literals", help="binarized learned-literal table of a run")
    _common(p)
    p.add_argument("--run", required=True, help="run directory written by 'train'")
    p.add_argument("--split", choices=["train", "test"], default="train")

    p = sub.add_parser("render-rules", help="print the rule of a run")
    _common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--raw", action="store_true", help="decoded rule before simplification")
    p.add_argument("--precision", type=int, default=2)

    p = sub.add_parser("eval", help="re-evaluate a run from its checkpoint")
    _common(p)
    p.add_argument("--run", required=True)

    p = sub.add_parser("verify", help="trend checks over a sweep table")
    _common(p)
    p.add_argument("--table", required=True, help="sweep.csv")
    p.add_argument("--nonincreasing", choices=["n_r", "l_r", "accuracy"])
    p.add_argument("--max-inversions", type=int, default=1)
    p.add_argument("--min-accuracy", type=float)
    p.add_argument("--upto", type=float, help="apply --min-accuracy up to this grid value")
    p.add_argument("--at", type=float, help="grid value for --n-r / --accuracy-range")
    p.add_argument("--n-r", type=int)
    p.add_argument("--accuracy-range", type=float, nargs=2)
    return parser


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if getattr(args, "profile", None) == "full":
        cfg.hyperparams = replace(cfg.hyperparams, epochs_total=250_000, restart_period=10_000)
    elif getattr(args, "profile", None) == "desk":
        cfg.hyperparams = replace(cfg.hyperparams, epochs_total=20_000, restart_period=5_000)
    if getattr(args, "csv", None):
        if not args.schema:
            raise UsageError("--csv needs --schema")
        cfg.csv, cfg.rule = args.csv, None
        cfg.schema = Schema.from_json(args.schema).__dict__
    elif getattr(args, "rule", None):
        cfg.rule, cfg.csv, cfg.schema = args.rule, None, None
    for flag, name in [("n_samples", "n_samples"), ("n_train", "n_train"), ("noise", "noise"),
                       ("threshold", "threshold"), ("grid", "grid"), ("seeds", "seeds"),
                       ("jobs", "jobs")]:
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "axis", None):
        cfg.sweep = args.axis
    hp = cfg.hyperparams
    for flag, name in [("epochs", "epochs_total"), ("restart_period", "restart_period"),
                       ("m", "m"), ("J", "J"), ("lr", "learning_rate"), ("tau0", "tau0"),
                       ("epoch_unit", "epoch_unit")]:
        v = getattr(args, flag, None)
        if v is not None:
            hp = replace(hp, **{name: v})
    if getattr(args, "lam", None) is not None:
        hp = hp.set_lambda(args.lam)
    if getattr(args, "no_temperature_reset", False):
        hp = replace(hp, reset_temperature=False)
    cfg.hyperparams = hp
    if args.seed is not None:
        cfg.seeds = [args.seed]
    cfg.out = resolve_out(args.out, cfg.out if args.config else None)
    cfg.validate()
    return cfg


def _cmd_gen_data(args) -> int:
    ds = gen_synthetic(args.rule, args.n, args.seed or 0)
    if args.noise:
        ds = flip_labels(ds, args.noise, (args.seed or 0) + 1)
    out = resolve_out(args.out, None)
    if Path(out).suffix != ".csv":
        out = str(Path(out) / f"{args.rule}.csv")
    dataset_to_csv(ds, out)
    print(out)
    return 0


def _cmd_train(args) -> int:
    cfg = config_from_args(args)
    rec = run_experiment(cfg)
    print(json.dumps({k: v for k, v in rec.to_dict().items() if k != "rule"}, indent=1))
    print(rec.rule)
    return 0


def _cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    rows = run_sweep(cfg)
    for r in rows:
        print(f"{r['axis']}={r['value']:g} seed={r['seed']} acc={r['accuracy']} "
              f"n_r={r['n_r']} l_r={r['l_r']} {r['status']}")
    print(Path(cfg.out) / "sweep.csv")
    return 0 if all(r["status"] == "ok" for r in rows) else 3


def _cmd_export(args) -> int:
    config, ckpt, record = load_run(args.run)
    data = prepare_data(config, record.seed)
    ds = data.train if args.split == "train" else data.test
    out = args.out or str(Path(args.run) / f"literals_{args.split}.csv")
    export_literals(ckpt.params, ds, out)
    print(out)
    return 0


def _cmd_render(args) -> int:
    config, ckpt, _ = load_run(args.run)
    d = json.loads((Path(args.run) / "dnf.json").read_text())
    dnf = Dnf.from_dict(d["raw" if args.raw else "simplified"])
    print(render(dnf, args.precision, ckpt.feature_names or None))
    return 0


def _cmd_eval(args) -> int:
    acc, record = reevaluate(args.run)
    ok = acc == record.accuracy
    print(f"recomputed accuracy {acc} recorded {record.accuracy} {'match' if ok else 'MISMATCH'}")
    return 0 if ok else 3


def _cmd_verify(args) -> int:
    rows = read_sweep_table(args.table)
    checks = verify_sweep(rows, args.nonincreasing, args.max_inversions, args.min_accuracy,
                          args.upto, args.at, args.n_r,
                          tuple(args.accuracy_range) if args.accuracy_range else None)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return 0 if all(c.passed for c in checks) else 3


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "export-literals": _cmd_export,
    "render-rules": _cmd_render,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"r2n: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"r2n: data error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, KinkError) as exc:
        print(f"r2n: training failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
