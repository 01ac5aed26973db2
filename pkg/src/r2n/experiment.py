"""Experiment runner, sweeps and trend verification over sweep tables."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .data import Dataset, Schema, flip_labels, gen_synthetic, load_csv, split
from .dnf import Dnf, decode, metrics, render, simplify
from .errors import ConfigError, DataError
from .model import Checkpoint, model_forward, write_text_atomic
from .training import HyperParams, TrainReport, train

log = logging.getLogger(__name__)

AXES = ("none", "lambda", "noise", "train_size")
OUT_ENV = "R2N_OUT"


@dataclass
class ExperimentConfig:
    rule: str | None = "ex1"
    csv: str | None = None
    schema: dict[str, Any] | None = None
    n_samples: int = 10_000
    train_ratio: float = 0.8
    noise: float = 0.0
    n_train: int | None = None
    hyperparams: HyperParams = field(default_factory=HyperParams.desk_scale)
    sweep: str = "none"
    grid: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "runs"
    threshold: float = 0.025
    precision: int = 2
    jobs: int = 1

    def validate(self) -> None:
        if (self.rule is None) == (self.csv is None):
            raise ConfigError("give exactly one data source: a synthetic rule or a CSV path")
        if self.csv is not None and self.schema is None:
            raise ConfigError("CSV input needs a schema")
        if self.sweep not in AXES:
            raise ConfigError(f"sweep axis must be one of {AXES}")
        if self.sweep != "none" and not self.grid:
            raise ConfigError("a sweep needs a nonempty grid")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError("train_ratio must be in (0, 1)")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError("noise must be in [0, 1]")
        self.hyperparams.validate()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["hyperparams"] = self.hyperparams.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        hp = d.pop("hyperparams", None) or {}
        base = HyperParams.desk_scale() if d.pop("profile", "desk") == "desk" else HyperParams()
        hp = HyperParams.from_dict({**base.to_dict(), **hp})
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "csv" in d and d["csv"] is not None and "rule" not in d:
            d["rule"] = None
        return cls(hyperparams=hp, **d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def fingerprint(self) -> str:
        """Hash of everything that determines a run except seeds and output location."""
        d = self.to_dict()
        for k in ("out", "seeds", "jobs"):
            d.pop(k)
        d["hyperparams"].pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def at_point(self, value: float) -> "ExperimentConfig":
        """The single-run config for one sweep grid value."""
        cfg = replace(self, sweep="none", grid=[])
        if self.sweep == "lambda":
            cfg.hyperparams = self.hyperparams.set_lambda(float(value))
        elif self.sweep == "noise":
            cfg.noise = float(value)
        elif self.sweep == "train_size":
            cfg.n_train = int(value)
        return cfg


@dataclass
class ResultRecord:
    fingerprint: str
    seed: int
    accuracy: float
    n_r: int
    l_r: float
    rule: str
    wall_time: float
    dnf_accuracy: float = math.nan
    agreement: float = math.nan
    agreement_raw: float = math.nan
    train_accuracy: float = math.nan
    best_epoch: int = -1
    best_loss: float = math.nan

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class RunData:
    train: Dataset
    test: Dataset


def prepare_data(config: ExperimentConfig, seed: int) -> RunData:
    """Deterministically rebuild the train/test split for ``(config, seed)``.

    Label noise is applied to the training side only, so test labels are
    the clean ground truth.
    """
    if config.rule is not None:
        n = config.n_samples
        if config.n_train is not None:
            n = int(round(config.n_train / config.train_ratio))
        ds = gen_synthetic(config.rule, n, seed)
        tr, te = split(ds, config.train_ratio, seed)
    else:
        ds = load_csv(config.csv, Schema.from_dict(config.schema))
        tr, te = split(ds, config.train_ratio, seed)
        if config.n_train is not None:
            if config.n_train > len(tr):
                raise DataError(f"only {len(tr)} training rows, asked for {config.n_train}")
            idx = np.random.default_rng(seed).permutation(len(tr))[:config.n_train]
            tr = tr.subset(np.sort(idx)).refit()
            te = te.with_stats(tr)
    if config.noise > 0:
        tr = flip_labels(tr, config.noise, seed + 1)
    return RunData(tr, te)


def _agreement(dnf: Dnf, params, ds: Dataset) -> float:
    net = model_forward(ds.normalized(), ds.P, params, 1.0, "eval") > 0.5
    return float(np.mean(dnf.predict(ds.X, ds.P, ds.predefined) == net))


def run_experiment(config: ExperimentConfig, seed: int | None = None,
                   out_dir=None) -> ResultRecord:
    """Generate or load data, split, train, decode, simplify and write artifacts."""
    config.validate()
    seed = config.seeds[0] if seed is None else seed
    out = Path(out_dir if out_dir is not None else config.out)
    started = time.perf_counter()
    data = prepare_data(config, seed)
    hp = replace(config.hyperparams, seed=seed)
    params, report = train(data.train, hp, data.test)

    meta = data.train.meta()
    raw = decode(params, meta)
    rule = simplify(raw, data.train.bounds, config.threshold)
    rm = metrics(rule)
    text = render(rule, config.precision, data.train.feature_names)
    y_rule = rule.predict(data.test.X, data.test.P, data.test.predefined)
    record = ResultRecord(
        fingerprint=config.fingerprint(),
        seed=seed,
        accuracy=report.test_accuracy,
        n_r=rm.n_r,
        l_r=rm.l_r,
        rule=text,
        wall_time=time.perf_counter() - started,
        dnf_accuracy=float(np.mean(y_rule == data.test.y)),
        agreement=_agreement(rule, params, data.test),
        agreement_raw=_agreement(raw, params, data.test),
        train_accuracy=report.train_accuracy,
        best_epoch=report.best_epoch,
        best_loss=report.best_loss,
    )

    cfg = replace(config, seeds=[seed], out=str(out))
    write_text_atomic(out / "config.json", json.dumps(cfg.to_dict(), indent=1))
    Checkpoint(params, list(meta.feature_names), [d.to_dict() for d in meta.predefined],
               data.train.normalization_stats()).save(out / "checkpoint.json")
    report.to_json(out / "report.json")
    report.write_loss_csv(out / "loss.csv")
    write_text_atomic(out / "rules.txt", text + "\n")
    write_text_atomic(out / "dnf.json", json.dumps(
        {"simplified": rule.to_dict(), "raw": raw.to_dict()}, indent=1))
    write_text_atomic(out / "result.json", json.dumps(record.to_dict(), indent=1))
    log.info("seed %d: accuracy %.4f n_r %d l_r %.2f (%.0fs)", seed, record.accuracy,
             record.n_r, record.l_r, record.wall_time)
    return record


def load_run(run_dir) -> tuple[ExperimentConfig, Checkpoint, ResultRecord]:
    run_dir = Path(run_dir)
    config = ExperimentConfig.from_json(run_dir / "config.json")
    ckpt = Checkpoint.load(run_dir / "checkpoint.json")
    record = ResultRecord(**json.loads((run_dir / "result.json").read_text()))
    return config, ckpt, record


def reevaluate(run_dir) -> tuple[float, ResultRecord]:
    """Test accuracy recomputed from the stored checkpoint and config."""
    config, ckpt, record = load_run(run_dir)
    data = prepare_data(config, record.seed)
    pred = model_forward(data.test.normalized(), data.test.P, ckpt.params, 1.0, "eval")
    return float(np.mean(pred == data.test.y)), record


SWEEP_COLUMNS = ["axis", "value", "seed", "accuracy", "n_r", "l_r", "dnf_accuracy",
                 "agreement", "status", "error"]


def _sweep_point(args) -> dict[str, Any]:
    config, axis, value, seed, out = args
    row = {"axis": axis, "value": value, "seed": seed, "accuracy": "", "n_r": "", "l_r": "",
           "dnf_accuracy": "", "agreement": "", "status": "ok", "error": ""}
    try:
        rec = run_experiment(config.at_point(value), seed, out)
        row.update(accuracy=rec.accuracy, n_r=rec.n_r, l_r=rec.l_r,
                   dnf_accuracy=rec.dnf_accuracy, agreement=rec.agreement)
    except Exception as exc:  # recorded per point, the sweep goes on
        log.exception("sweep point %s=%s seed %s failed", axis, value, seed)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def run_sweep(config: ExperimentConfig, out_dir=None) -> list[dict[str, Any]]:
    """One experiment per grid value and seed; writes ``sweep.csv`` under the output dir."""
    config.validate()
    if config.sweep == "none":
        raise ConfigError("config has no sweep axis")
    out = Path(out_dir if out_dir is not None else config.out)
    tasks = [(config, config.sweep, v, s, out / f"{config.sweep}={v:g}" / f"seed={s}")
             for v in config.grid for s in config.seeds]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    write_sweep_table(rows, out / "sweep.csv")
    return rows


def write_sweep_table(rows, path) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    write_text_atomic(path, buf.getvalue())


def read_sweep_table(path) -> list[dict[str, Any]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["value"] = float(r["value"])
        r["seed"] = int(r["seed"])
        if r["status"] == "ok":
            r["accuracy"] = float(r["accuracy"])
            r["n_r"] = int(r["n_r"])
            r["l_r"] = float(r["l_r"])
    return rows


def nonincreasing_within(values, max_inversions: int = 1, max_rise: float = 1.0) -> bool:
    """Non-increasing sequence up to a few small upward steps."""
    rises = [b - a for a, b in zip(values, values[1:]) if b > a]
    return len(rises) <= max_inversions and all(r <= max_rise for r in rises)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _by_value(rows, key: str) -> dict[float, list[float]]:
    out: dict[float, list[float]] = {}
    for r in rows:
        if r["status"] == "ok":
            out.setdefault(r["value"], []).append(r[key])
    return dict(sorted(out.items()))


def verify_sweep(rows, nonincreasing: str | None = None, max_inversions: int = 1,
                 min_accuracy: float | None = None, upto: float | None = None,
                 at: float | None = None, n_r: int | None = None,
                 accuracy_range: tuple[float, float] | None = None) -> list[Check]:
    """Scripted trend checks; per grid value the median over seeds is used."""
    checks = []
    failed = [r for r in rows if r["status"] != "ok"]
    checks.append(Check("all points ran", not failed, f"{len(failed)} failed points"))
    if nonincreasing:
        med = [float(np.median(v)) for v in _by_value(rows, nonincreasing).values()]
        checks.append(Check(f"{nonincreasing} non-increasing",
                            nonincreasing_within(med, max_inversions), f"medians {med}"))
    if min_accuracy is not None:
        acc = _by_value(rows, "accuracy")
        bad = {v: a for v, a in acc.items() if (upto is None or v <= upto)
               and np.median(a) < min_accuracy}
        checks.append(Check(f"accuracy >= {min_accuracy}", not bad, f"below at {bad}"))
    if at is not None:
        pts = [r for r in rows if r["status"] == "ok" and math.isclose(r["value"], at)]
        if not pts:
            checks.append(Check(f"point {at}", False, "no such grid value"))
        if pts and n_r is not None:
            got = int(np.median([r["n_r"] for r in pts]))
            checks.append(Check(f"n_r at {at} == {n_r}", got == n_r, f"median n_r {got}"))
        if pts and accuracy_range is not None:
            a = float(np.median([r["accuracy"] for r in pts]))
            lo, hi = accuracy_range
            checks.append(Check(f"accuracy at {at} in [{lo}, {hi}]", lo <= a <= hi,
                                f"median accuracy {a:.4f}"))
    return checks


def resolve_out(flag: str | None, config_out: str | None) -> str:
    """Output directory precedence: flag, then environment, then config."""
    return flag or os.environ.get(OUT_ENV) or config_out or "runs"
