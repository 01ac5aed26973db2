"""Loss, hand-derived gradients, Adam, cooling schedule and the training loop."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Literal, Sequence

import numpy as np

from . import _kernels
from .data import Dataset, split
from .dnf import decode, metrics, simplify
from .errors import ConfigError, DataError, KinkError, TrainingError
from .model import ModelParams, model_forward, sigmoid, write_text_atomic

log = logging.getLogger(__name__)

Lambdas = tuple[float, float, float]  # (and, or, literal)


@dataclass
class HyperParams:
    m: int = 10
    J: int = 25
    lambda_and: float = 1e-2
    lambda_or: float = 1e-2
    lambda_p: float = 1e-2
    # initial temperature; 1.0 leaves every AND unit clamped and training collapses to TRUE
    tau0: float = 0.1
    gamma: float = 0.995
    tau_min: float = 1e-4
    epochs_total: int = 250_000
    restart_period: int = 10_000
    batch_size: int = 100
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # "pass": one shuffled sweep over the training set; "step": one minibatch
    epoch_unit: Literal["pass", "step"] = "pass"
    reset_temperature: bool = True

    @classmethod
    def desk_scale(cls, **overrides) -> "HyperParams":
        """Reduced schedule that runs in minutes on one CPU core."""
        return cls(**{"epochs_total": 20_000, "restart_period": 5_000, **overrides})

    @property
    def lambdas(self) -> Lambdas:
        return (self.lambda_and, self.lambda_or, self.lambda_p)

    def set_lambda(self, value: float) -> "HyperParams":
        return HyperParams(**{**asdict(self), "lambda_and": value, "lambda_or": value,
                              "lambda_p": value})

    def validate(self) -> None:
        if self.m < 0 or self.J < 1:
            raise ConfigError("need m >= 0 learned literals and J >= 1 conjunctions")
        if min(self.lambdas) < 0:
            raise ConfigError("sparsity penalties must be nonnegative")
        if not 0 < self.gamma < 1:
            raise ConfigError("cooling factor gamma must be in (0, 1)")
        if not (self.tau_min > 0 and self.tau0 > 0):
            raise ConfigError("temperatures must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs_total < 0 or self.restart_period < 1:
            raise ConfigError("epochs_total must be >= 0 and restart_period >= 1")
        if self.epochs_total and self.restart_period > self.epochs_total:
            raise ConfigError("restart_period cannot exceed epochs_total")
        if self.epoch_unit not in ("pass", "step"):
            raise ConfigError(f"epoch_unit must be 'pass' or 'step', got {self.epoch_unit!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
        hp = cls(**d)
        hp.epochs_total = int(hp.epochs_total)
        hp.restart_period = int(hp.restart_period)
        return hp


def cooling(tau0: float, gamma: float, epoch: int, tau_min: float) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return max(tau0 * gamma ** epoch, tau_min)


def _check_lambdas(lambdas: Sequence[float]) -> Lambdas:
    la, lo, lp = (float(v) for v in lambdas)
    if min(la, lo, lp) < 0:
        raise ConfigError("sparsity penalties must be nonnegative")
    return la, lo, lp


def penalty(params: ModelParams, tau: float, lambdas: Sequence[float]) -> float:
    la, lo, lp = _check_lambdas(lambdas)
    return (la * np.sum(sigmoid(params.and_logits / tau))
            + lo * np.sum(sigmoid(params.or_logits / tau))
            + lp * np.sum(np.abs(params.literal_weights)))


def loss(y_hat, y, params: ModelParams, tau: float, lambdas: Sequence[float]) -> float:
    """Mean squared error plus L1 sparsity on the relaxed AND/OR weights and halfspaces."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean((y_hat - y) ** 2) + penalty(params, tau, lambdas))


def batch_loss(params: ModelParams, tau: float, batch, lambdas: Sequence[float]) -> float:
    X, P, y = batch
    return loss(model_forward(X, P, params, tau, "train"), y, params, tau, lambdas)


@dataclass
class _Cache:
    phi: np.ndarray     # (B, M) literal activations
    wa: np.ndarray      # (M, J) relaxed AND weights
    wd: np.ndarray      # (J,) relaxed OR weights
    s: np.ndarray       # (B, J) pre-clamp sums
    z: np.ndarray       # (B, J)
    t: np.ndarray       # (B, J) gated conjunctions
    arg: np.ndarray     # (B,) winning conjunction per row
    y_hat: np.ndarray   # (B,)


def _forward_cache(X, P, params: ModelParams, tau: float) -> _Cache:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    B = X.shape[0]
    P = np.zeros((B, 0)) if P is None else np.asarray(P, dtype=np.float64).reshape(B, -1)
    phi = np.concatenate(
        [sigmoid((X @ params.literal_weights + params.literal_biases) / tau), P], axis=1)
    wa = sigmoid(params.and_logits / tau)
    wd = sigmoid(params.or_logits / tau)
    s = (1.0 - phi) @ wa
    z = 1.0 - np.minimum(s, 1.0)
    t = wd * z
    arg = np.argmax(t, axis=1)  # first maximizer on ties
    return _Cache(phi, wa, wd, s, z, t, arg, t[np.arange(B), arg])


def backward(batch, params: ModelParams, tau: float, lambdas: Sequence[float]) -> ModelParams:
    """Gradient of :func:`batch_loss` with respect to every parameter.

    Subgradient conventions: ``d min(s, 1)/ds`` is 1 below 1 and 0 from 1 on;
    ``max`` routes to its first maximizer; ``d|w|/dw`` is 0 at 0.
    """
    la, lo, lp = _check_lambdas(lambdas)
    X, P, y = batch
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    B = X.shape[0]
    if B == 0:
        raise DataError("empty batch")
    c = _forward_cache(X, P, params, tau)
    m = params.m
    rows = np.arange(B)

    g_yhat = 2.0 * (c.y_hat - y) / B
    g_t = np.zeros_like(c.t)
    g_t[rows, c.arg] = g_yhat
    g_wd = np.sum(g_t * c.z, axis=0)
    g_z = g_t * c.wd
    g_s = -g_z * (c.s < 1.0)
    g_wa = (1.0 - c.phi).T @ g_s
    g_phi = -(g_s @ c.wa.T)[:, :m]
    learned = c.phi[:, :m]
    g_pre = g_phi * learned * (1.0 - learned) / tau

    return ModelParams(
        literal_weights=X.T @ g_pre + lp * np.sign(params.literal_weights),
        literal_biases=g_pre.sum(axis=0),
        and_logits=(g_wa + la) * c.wa * (1.0 - c.wa) / tau,
        or_logits=(g_wd + lo) * c.wd * (1.0 - c.wd) / tau,
    )


def kink_distance(params: ModelParams, tau: float, batch) -> float:
    """How close the batch sits to a clamp, max-tie or |w| kink."""
    X, P, _ = batch
    c = _forward_cache(X, P, params, tau)
    d = float(np.min(np.abs(c.s - 1.0))) if c.s.size else math.inf
    if params.literal_weights.size:
        d = min(d, float(np.min(np.abs(params.literal_weights))))
    live = np.where(c.z > 0, c.t, -np.inf)
    if live.shape[1] > 1:
        top2 = -np.sort(-live, axis=1)[:, :2]
        active = np.isfinite(top2[:, 1])
        if np.any(active):
            d = min(d, float(np.min(top2[active, 0] - top2[active, 1])))
    return d


def grad_check(params: ModelParams, tau: float, batch, h: float = 1e-5,
               lambdas: Sequence[float] = (0.0, 0.0, 0.0),
               rng: np.random.Generator | None = None, max_retries: int = 0) -> float:
    """Max relative error between :func:`backward` and central differences.

    When the configuration is within ``10 * h`` of a kink and an ``rng`` is
    given, parameters are redrawn up to ``max_retries`` times.
    """
    if tau < 0.5:
        raise ConfigError("grad_check needs tau >= 0.5 to stay away from the step regime")
    margin = 10.0 * h
    tries = 0
    while kink_distance(params, tau, batch) < margin:
        if rng is None or tries >= max_retries:
            raise KinkError(
                f"configuration within {margin:g} of a non-differentiable point "
                f"after {tries} redraws"
            )
        params = ModelParams.initialize(params.n_features, params.m, params.n_predefined,
                                        params.J, rng)
        tries += 1

    analytic = backward(batch, params, tau, lambdas).to_flat()
    theta = params.to_flat()
    shape = (params.n_features, params.m, params.n_literals, params.J)
    numeric = np.empty_like(theta)
    for k in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        f_up = batch_loss(ModelParams.from_flat(up, *shape), tau, batch, lambdas)
        f_down = batch_loss(ModelParams.from_flat(down, *shape), tau, batch, lambdas)
        numeric[k] = (f_up - f_down) / (2.0 * h)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(np.max(rel))


def random_kink_free_config(rng: np.random.Generator, n_features: int = 2, m: int = 2,
                            n_predefined: int = 0, J: int = 2, batch_size: int = 8,
                            tau: float = 1.0, h: float = 1e-5, max_tries: int = 1000):
    """Draw ``(params, batch)`` at least ``10 * h`` away from every kink."""
    for _ in range(max_tries):
        params = ModelParams.initialize(n_features, m, n_predefined, J, rng)
        X = rng.random((batch_size, n_features))
        P = rng.integers(0, 2, size=(batch_size, n_predefined)).astype(np.float64)
        y = rng.integers(0, 2, size=batch_size).astype(np.float64)
        batch = (X, P, y)
        if kink_distance(params, tau, batch) >= 10.0 * h:
            return params, batch
    raise KinkError(f"no kink-free configuration in {max_tries} draws")


@dataclass
class OptimizerState:
    first: ModelParams
    second: ModelParams
    step: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "OptimizerState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_step(params: ModelParams, grads: ModelParams, state: OptimizerState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[ModelParams, OptimizerState]:
    """Bias-corrected Adam; returns fresh params and state."""
    t = state.step + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m1, m2 in zip(params.arrays(), grads.arrays(), state.first.arrays(),
                            state.second.arrays()):
        m1 = beta1 * m1 + (1 - beta1) * g
        m2 = beta2 * m2 + (1 - beta2) * g * g
        m_hat = m1 / (1 - beta1 ** t)
        v_hat = m2 / (1 - beta2 ** t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m1)
        new_v.append(m2)
    return ModelParams(*new_p), OptimizerState(ModelParams(*new_m), ModelParams(*new_v), t)


@dataclass
class TrainReport:
    loss_history: list[float] = field(default_factory=list)
    tau_history: list[float] = field(default_factory=list)
    restart_history: list[int] = field(default_factory=list)
    best_epoch: int = -1
    best_loss: float = math.inf
    final_tau: float = math.nan
    steps: int = 0
    train_accuracy: float = math.nan
    test_accuracy: float = math.nan
    n_r: int = 0
    l_r: float = 0.0
    epoch_unit: str = "pass"
    reset_temperature: bool = True

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self, path) -> None:
        write_text_atomic(path, json.dumps(self.to_dict(), indent=1))

    def write_loss_csv(self, path) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "tau", "restart_index"])
        for e, (l, t, r) in enumerate(zip(self.loss_history, self.tau_history,
                                          self.restart_history)):
            w.writerow([e, repr(l), repr(t), r])
        write_text_atomic(path, buf.getvalue())


def accuracy(params: ModelParams, ds: Dataset) -> float:
    if len(ds) == 0:
        return math.nan
    pred = model_forward(ds.normalized(), ds.P, params, 1.0, "eval")
    return float(np.mean(pred == ds.y))


def _temperature(hp: HyperParams, epoch: int) -> tuple[float, int]:
    segment, local = divmod(epoch, hp.restart_period)
    return cooling(hp.tau0, hp.gamma, local if hp.reset_temperature else epoch,
                   hp.tau_min), segment


def train(dataset: Dataset, hp: HyperParams, test: Dataset | None = None,
          log_every: int = 0) -> tuple[ModelParams, TrainReport]:
    """Train from scratch and return the lowest-training-loss snapshot.

    Without an explicit ``test`` set the dataset is split 80/20 using
    ``hp.seed``. Every ``restart_period`` epochs all parameters are redrawn,
    Adam's moments are cleared and (by default) the temperature restarts
    from ``tau0``.
    """
    hp.validate()
    if len(dataset) == 0:
        raise DataError("empty dataset")
    if test is None:
        dataset, test = split(dataset, 0.8, hp.seed)
    n_pos = int(dataset.y.sum())
    if n_pos < 2 or len(dataset) - n_pos < 2:
        raise DataError("training split needs at least two samples of each class")
    if test.n_predefined != dataset.n_predefined or test.n_features != dataset.n_features:
        raise DataError("train and test sets have different columns")

    rng = np.random.default_rng(hp.seed)
    X = np.ascontiguousarray(dataset.normalized())
    P = np.ascontiguousarray(dataset.P)
    y = dataset.y.astype(np.float64)
    N, m, J = dataset.n_features, hp.m, hp.J
    M = m + dataset.n_predefined
    la, lo, lp = hp.lambdas
    n = len(dataset)

    def fresh() -> np.ndarray:
        return ModelParams.initialize(N, m, dataset.n_predefined, J, rng).to_flat()

    theta = fresh()
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    grad = np.zeros_like(theta)
    t = 0
    steps = 0
    report = TrainReport(epoch_unit=hp.epoch_unit, reset_temperature=hp.reset_temperature)
    best = theta.copy()
    report.final_tau = hp.tau0
    stream = np.empty(0, dtype=np.int64)
    pos = 0

    for epoch in range(hp.epochs_total):
        tau, segment = _temperature(hp, epoch)
        if epoch and epoch % hp.restart_period == 0:
            theta = fresh()
            m1[:] = 0.0
            m2[:] = 0.0
            t = 0
        if hp.epoch_unit == "pass":
            order = rng.permutation(n)
        else:
            if pos + hp.batch_size > stream.size:
                stream, pos = rng.permutation(n), 0
            order = stream[pos:pos + hp.batch_size]
            pos += hp.batch_size
        before = t
        t = _kernels.run_batches(theta, m1, m2, t, N, m, M, J, X, P, y, order,
                                 hp.batch_size, tau, la, lo, lp, hp.learning_rate,
                                 hp.adam_beta1, hp.adam_beta2, hp.adam_eps, grad)
        steps += t - before
        epoch_loss = _kernels.full_loss(theta, N, m, M, J, X, P, y, tau, la, lo, lp)
        if not math.isfinite(epoch_loss) or not np.all(np.isfinite(theta)):
            raise TrainingError(f"non-finite loss or parameters at epoch {epoch}")
        report.loss_history.append(epoch_loss)
        report.tau_history.append(tau)
        report.restart_history.append(segment)
        report.final_tau = tau
        if epoch_loss < report.best_loss:
            report.best_loss = epoch_loss
            report.best_epoch = epoch
            best[:] = theta
        if log_every and epoch % log_every == 0:
            log.info("epoch %d restart %d tau %.3g loss %.5f best %.5f",
                     epoch, segment, tau, epoch_loss, report.best_loss)

    params = ModelParams.from_flat(best, N, m, M, J)
    if report.best_epoch < 0:
        report.best_loss = float(_kernels.full_loss(best, N, m, M, J, X, P, y, hp.tau0,
                                                    la, lo, lp))
    report.steps = steps
    report.train_accuracy = accuracy(params, dataset)
    report.test_accuracy = accuracy(params, test)
    rule = simplify(decode(params, dataset.meta()), dataset.bounds)
    rm = metrics(rule)
    report.n_r, report.l_r = rm.n_r, rm.l_r
    return params, report
