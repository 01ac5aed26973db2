"""Relational Rule Network parameters and forward semantics.

The network has three layers:

* a literal layer, one halfspace ``x @ W + b > 0`` per learned literal,
  relaxed to ``sigmoid((x @ W + b) / tau)`` during training;
* an AND layer, ``z_j = 1 - min(sum_i w_ij (1 - phi_i), 1)`` with
  ``w_ij = sigmoid(u_ij / tau)``;
* an OR layer, ``y = max_j w_j z_j`` with ``w_j = sigmoid(v_j / tau)``.

Predefined literals skip the first layer and are appended to the learned
literal activations before the AND layer. In ``"eval"`` mode every sigmoid is
replaced by the Heaviside step with ``step(t) = 1`` iff ``t > 0`` so that the
network computes a crisp DNF.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ShapeError

Mode = Literal["train", "eval"]


def sigmoid(t):
    return expit(t)


def step(t):
    """Heaviside step with the strict convention ``step(0) == 0``."""
    return (np.asarray(t) > 0).astype(np.float64)


def _activate(t, tau: float, mode: Mode):
    if mode == "train":
        if not tau > 0:
            raise ConfigError(f"temperature must be positive, got {tau}")
        return sigmoid(np.asarray(t, dtype=np.float64) / tau)
    if mode == "eval":
        return step(t)
    raise ConfigError(f"unknown mode {mode!r}")


@dataclass
class ModelParams:
    """All learnable parameters of the network.

    ``literal_weights`` is ``(N, m)``, ``literal_biases`` is ``(m,)``,
    ``and_logits`` is ``(M, J)`` with ``M = m + n_predefined`` and
    ``or_logits`` is ``(J,)``.
    """

    literal_weights: np.ndarray
    literal_biases: np.ndarray
    and_logits: np.ndarray
    or_logits: np.ndarray

    def __post_init__(self):
        self.literal_weights = np.asarray(self.literal_weights, dtype=np.float64)
        self.literal_biases = np.asarray(self.literal_biases, dtype=np.float64)
        self.and_logits = np.asarray(self.and_logits, dtype=np.float64)
        self.or_logits = np.asarray(self.or_logits, dtype=np.float64)
        self.check_shapes()

    @property
    def n_features(self) -> int:
        return self.literal_weights.shape[0]

    @property
    def m(self) -> int:
        return self.literal_weights.shape[1]

    @property
    def n_literals(self) -> int:
        return self.and_logits.shape[0]

    @property
    def n_predefined(self) -> int:
        return self.n_literals - self.m

    @property
    def J(self) -> int:
        return self.or_logits.shape[0]

    def check_shapes(self) -> None:
        if self.literal_weights.ndim != 2:
            raise ShapeError("literal_weights must be a matrix")
        m = self.literal_weights.shape[1]
        if self.literal_biases.shape != (m,):
            raise ShapeError(
                f"literal_biases has shape {self.literal_biases.shape}, expected ({m},)"
            )
        if self.and_logits.ndim != 2 or self.and_logits.shape[0] < m:
            raise ShapeError(
                f"and_logits has shape {self.and_logits.shape}; needs at least {m} rows"
            )
        if self.or_logits.shape != (self.and_logits.shape[1],):
            raise ShapeError(
                f"or_logits has shape {self.or_logits.shape}, "
                f"expected ({self.and_logits.shape[1]},)"
            )
        if self.or_logits.shape[0] == 0:
            raise ConfigError("at least one conjunction node is required")

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.literal_weights, self.literal_biases, self.and_logits, self.or_logits)

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "ModelParams":
        return ModelParams(*(np.zeros_like(a) for a in self.arrays()))

    # Flat layout shared with the compiled training kernels.
    def to_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def load_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for a in self.arrays():
            a[...] = flat[offset:offset + a.size].reshape(a.shape)
            offset += a.size

    @classmethod
    def from_flat(cls, flat, n_features: int, m: int, n_literals: int, J: int) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        shapes = [(n_features, m), (m,), (n_literals, J), (J,)]
        parts, offset = [], 0
        for shape in shapes:
            size = math.prod(shape)
            parts.append(flat[offset:offset + size].reshape(shape).copy())
            offset += size
        if offset != flat.size:
            raise ShapeError(f"flat vector has {flat.size} entries, expected {offset}")
        return cls(*parts)

    @classmethod
    def initialize(cls, n_features: int, m: int, n_predefined: int, J: int,
                   rng: np.random.Generator) -> "ModelParams":
        """Uniform(-1, 1) halfspaces, standard normal AND/OR logits."""
        if J < 1:
            raise ConfigError("at least one conjunction node is required")
        return cls(
            literal_weights=rng.uniform(-1.0, 1.0, size=(n_features, m)),
            literal_biases=rng.uniform(-1.0, 1.0, size=m),
            and_logits=rng.standard_normal(size=(m + n_predefined, J)),
            or_logits=rng.standard_normal(size=J),
        )


def literal_forward(x, params: ModelParams, tau: float, mode: Mode = "train") -> np.ndarray:
    """Learned literal activations for one sample ``(N,)`` or a batch ``(B, N)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n_features:
        raise ShapeError(
            f"input has {x.shape[-1]} features, model expects {params.n_features}"
        )
    pre = x @ params.literal_weights + params.literal_biases
    return _activate(pre, tau, mode)


def and_forward(phi, params: ModelParams, tau: float, mode: Mode = "train") -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape[-1] != params.n_literals:
        raise ShapeError(f"got {phi.shape[-1]} literals, model expects {params.n_literals}")
    w = _activate(params.and_logits, tau, mode)
    s = (1.0 - phi) @ w
    return 1.0 - np.minimum(s, 1.0)


def or_forward(z, params: ModelParams, tau: float, mode: Mode = "train"):
    z = np.asarray(z, dtype=np.float64)
    if params.J == 0:
        raise ConfigError("at least one conjunction node is required")
    if z.shape[-1] != params.J:
        raise ShapeError(f"got {z.shape[-1]} conjunctions, model expects {params.J}")
    w = _activate(params.or_logits, tau, mode)
    return np.max(w * z, axis=-1)


def literal_activations(X, P, params: ModelParams, tau: float, mode: Mode = "train") -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    learned = literal_forward(X, params, tau, mode)
    if P is None:
        P = np.zeros((X.shape[0], 0))
    P = np.asarray(P, dtype=np.float64).reshape(X.shape[0], -1)
    if P.shape[1] != params.n_predefined:
        raise ShapeError(
            f"got {P.shape[1]} predefined literals, model expects {params.n_predefined}"
        )
    return np.concatenate([learned, P], axis=1)


def model_forward(X, P, params: ModelParams, tau: float, mode: Mode = "train") -> np.ndarray:
    """Network output for a batch; ``P`` may be ``None`` without predefined literals."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if P is not None and np.asarray(P).shape[0] != X.shape[0]:
        raise ShapeError("X and P must have the same number of rows")
    phi = literal_activations(X, P, params, tau, mode)
    z = and_forward(phi, params, tau, mode)
    return or_forward(z, params, tau, mode)


def binarize_masks(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Crisp AND and OR membership masks read off the logit signs."""
    return (params.and_logits > 0).astype(np.int8), (params.or_logits > 0).astype(np.int8)


@dataclass
class Checkpoint:
    params: ModelParams
    feature_names: list[str] = field(default_factory=list)
    predefined: list[dict[str, Any]] = field(default_factory=list)
    normalization: dict[str, list[float]] | None = None

    def to_dict(self) -> dict[str, Any]:
        p = self.params
        return {
            "n_features": p.n_features,
            "m": p.m,
            "J": p.J,
            "literal_weights": p.literal_weights.ravel().tolist(),
            "literal_biases": p.literal_biases.tolist(),
            "and_logits": p.and_logits.ravel().tolist(),
            "or_logits": p.or_logits.tolist(),
            "feature_names": list(self.feature_names),
            "predefined_literal_descriptors": list(self.predefined),
            "normalization_stats": self.normalization,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Checkpoint":
        n, m, J = int(d["n_features"]), int(d["m"]), int(d["J"])
        and_logits = np.asarray(d["and_logits"], dtype=np.float64)
        if and_logits.size % J:
            raise ShapeError("and_logits length is not a multiple of J")
        params = ModelParams(
            np.asarray(d["literal_weights"], dtype=np.float64).reshape(n, m),
            d["literal_biases"],
            and_logits.reshape(-1, J),
            d["or_logits"],
        )
        return cls(
            params=params,
            feature_names=list(d.get("feature_names") or []),
            predefined=list(d.get("predefined_literal_descriptors") or []),
            normalization=d.get("normalization_stats"),
        )

    def save(self, path) -> None:
        if not self.params.is_finite():
            raise ValueError("refusing to save non-finite parameters")
        write_text_atomic(path, json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_dict(json.loads(Path(path).read_text()))


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
