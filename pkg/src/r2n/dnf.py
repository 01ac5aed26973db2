"""Crisp rule models read off a trained network.

A :class:`Dnf` is an ordered tuple of conjunctions, each an ordered tuple of
literals. A literal is either a :class:`Halfspace` ``c @ x + bias > 0`` over
raw (de-normalized) features, or a :class:`PredefinedLiteral` such as
``color = red``. There is no negation operator; complements are separate
predefined literals.

The empty disjunction is FALSE and a disjunction containing an empty
conjunction is TRUE, matching the network's arithmetic forms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple, Sequence, Union

import numpy as np

from .errors import DataError, ShapeError
from .model import ModelParams, binarize_masks


@dataclass(frozen=True)
class PredefinedLiteral:
    feature: str
    value: str
    polarity: bool = True
    index: int = field(default=-1, compare=False)

    kind = "predefined"

    @property
    def name(self) -> str:
        op = "=" if self.polarity else "!="
        return f"{self.feature} {op} {self.value}"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "feature": self.feature, "value": self.value,
                "polarity": self.polarity, "index": self.index}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PredefinedLiteral":
        return cls(str(d["feature"]), str(d["value"]), bool(d.get("polarity", True)),
                   int(d.get("index", -1)))


@dataclass(frozen=True)
class Halfspace:
    coefficients: tuple[float, ...]
    bias: float
    index: int = field(default=-1, compare=False)

    kind = "halfspace"

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        object.__setattr__(self, "bias", float(self.bias))

    def value(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ np.asarray(self.coefficients) + self.bias

    def holds(self, X) -> np.ndarray:
        return self.value(X) > 0

    def box_range(self, bounds) -> tuple[float, float]:
        """Min and max of ``c @ x + bias`` over the box ``bounds[:, 0] <= x <= bounds[:, 1]``."""
        c = np.asarray(self.coefficients)
        lo, hi = np.asarray(bounds, dtype=np.float64).T
        low = np.where(c > 0, c * lo, c * hi).sum() + self.bias
        high = np.where(c > 0, c * hi, c * lo).sum() + self.bias
        return float(low), float(high)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "coefficients": list(self.coefficients),
                "bias": self.bias, "index": self.index}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Halfspace":
        return cls(tuple(d["coefficients"]), d["bias"], int(d.get("index", -1)))


Literal = Union[Halfspace, PredefinedLiteral]
Conjunction = tuple  # tuple[Literal, ...]


def literal_from_dict(d: Mapping[str, Any]) -> Literal:
    if d["kind"] == "halfspace":
        return Halfspace.from_dict(d)
    if d["kind"] == "predefined":
        return PredefinedLiteral.from_dict(d)
    raise ValueError(f"unknown literal kind {d['kind']!r}")


class RuleMetrics(NamedTuple):
    n_r: int
    l_r: float


@dataclass(frozen=True)
class Dnf:
    conjunctions: tuple[Conjunction, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "conjunctions",
                           tuple(tuple(c) for c in self.conjunctions))

    @classmethod
    def true(cls) -> "Dnf":
        return cls(((),))

    @classmethod
    def false(cls) -> "Dnf":
        return cls(())

    @property
    def is_true(self) -> bool:
        return any(len(c) == 0 for c in self.conjunctions)

    @property
    def is_false(self) -> bool:
        return not self.conjunctions

    def literals(self):
        for conj in self.conjunctions:
            yield from conj

    def to_dict(self) -> dict[str, Any]:
        return {"conjunctions": [[lit.to_dict() for lit in c] for c in self.conjunctions]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Dnf":
        return cls(tuple(tuple(literal_from_dict(l) for l in c) for c in d["conjunctions"]))

    def predict(self, X, P=None, predefined: Sequence[PredefinedLiteral] = ()) -> np.ndarray:
        """Vectorized truth values; column ``k`` of ``P`` evaluates ``predefined[k]``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        columns = {}
        if P is not None:
            P = np.asarray(P).reshape(X.shape[0], -1)
            if P.shape[1] != len(predefined):
                raise ShapeError("P must have one column per predefined descriptor")
            columns = {d: P[:, k] > 0.5 for k, d in enumerate(predefined)}
        out = np.zeros(X.shape[0], dtype=bool)
        for conj in self.conjunctions:
            acc = np.ones(X.shape[0], dtype=bool)
            for lit in conj:
                if isinstance(lit, Halfspace):
                    if len(lit.coefficients) != X.shape[1]:
                        raise ShapeError(
                            f"literal has {len(lit.coefficients)} coefficients, "
                            f"input has {X.shape[1]} features"
                        )
                    acc &= lit.holds(X)
                else:
                    try:
                        acc &= columns[lit]
                    except KeyError:
                        raise DataError(f"no evaluation supplied for {lit.name!r}") from None
            out |= acc
        return out

    def predict_from_literals(self, L) -> np.ndarray:
        """Evaluate from a precomputed 0/1 table whose column ``i`` is AND-layer row ``i``."""
        L = np.atleast_2d(np.asarray(L)) > 0.5
        out = np.zeros(L.shape[0], dtype=bool)
        for conj in self.conjunctions:
            acc = np.ones(L.shape[0], dtype=bool)
            for lit in conj:
                if not 0 <= lit.index < L.shape[1]:
                    raise DataError(f"literal index {lit.index} not in literal table")
                acc &= L[:, lit.index]
            out |= acc
        return out


@dataclass
class FeatureMeta:
    """What decoding needs to express literals in raw feature units."""

    feature_names: list[str]
    predefined: list[PredefinedLiteral] = field(default_factory=list)
    lo: np.ndarray | None = None
    scale: np.ndarray | None = None

    @classmethod
    def default(cls, params: ModelParams) -> "FeatureMeta":
        return cls(
            [f"x_{i}" for i in range(params.n_features)],
            [PredefinedLiteral(f"p_{k}", "1", True) for k in range(params.n_predefined)],
        )


def evaluate_dnf(dnf: Dnf, x, p: Mapping[Any, Any] | None = None) -> bool:
    """Truth value on one sample; ``p`` maps predefined literals (or their names) to 0/1."""
    x = np.asarray(x, dtype=np.float64)
    p = p or {}
    for conj in dnf.conjunctions:
        ok = True
        for lit in conj:
            if isinstance(lit, Halfspace):
                if len(lit.coefficients) != x.shape[0]:
                    raise ShapeError("sample length does not match literal coefficients")
                truth = bool(lit.value(x) > 0)
            else:
                if lit in p:
                    truth = bool(p[lit])
                elif lit.name in p:
                    truth = bool(p[lit.name])
                else:
                    raise DataError(f"no evaluation supplied for {lit.name!r}")
            if not truth:
                ok = False
                break
        if ok:
            return True
    return False


def halfspace_literals(params: ModelParams, meta: FeatureMeta | None = None) -> list[Halfspace]:
    """The learned literals in raw feature units, in AND-row order."""
    meta = meta or FeatureMeta.default(params)
    W = params.literal_weights
    b = params.literal_biases
    out = []
    for i in range(params.m):
        w = W[:, i]
        if meta.scale is None:
            coef, bias = w, b[i]
        else:
            coef = w / meta.scale
            bias = b[i] - float(np.sum(coef * meta.lo))
        out.append(Halfspace(tuple(coef), bias, index=i))
    return out


def decode(params: ModelParams, meta: FeatureMeta | None = None) -> Dnf:
    meta = meta or FeatureMeta.default(params)
    if len(meta.predefined) != params.n_predefined:
        raise ShapeError(
            f"{len(meta.predefined)} predefined descriptors for "
            f"{params.n_predefined} predefined rows"
        )
    literals: list[Literal] = halfspace_literals(params, meta)
    for k, d in enumerate(meta.predefined):
        literals.append(PredefinedLiteral(d.feature, d.value, d.polarity, index=params.m + k))
    and_mask, or_mask = binarize_masks(params)
    conjunctions = []
    for j in np.flatnonzero(or_mask):
        conjunctions.append(tuple(literals[i] for i in np.flatnonzero(and_mask[:, j])))
    return Dnf(tuple(conjunctions))


def threshold_coefficients(h: Halfspace, threshold: float) -> Halfspace:
    c = np.asarray(h.coefficients)
    if c.size == 0:
        return h
    cutoff = threshold * np.max(np.abs(c))
    c = np.where(np.abs(c) < cutoff, 0.0, c)
    return Halfspace(tuple(c), h.bias, h.index)


def classify(h: Halfspace, bounds) -> bool | None:
    """True if always positive on the box, False if never positive, else None."""
    low, high = h.box_range(bounds)
    if low > 0:
        return True
    if high <= 0:
        return False
    return None


def simplify(dnf: Dnf, bounds, threshold: float = 0.025) -> Dnf:
    """Coefficient thresholding, constant-literal removal, dedup and subsumption.

    ``bounds`` is an ``(N, 2)`` array of per-feature ``[lo, hi]``. Only the
    thresholding step can change the truth value inside the box.
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or np.any(bounds[:, 0] > bounds[:, 1]):
        raise ValueError("bounds must be an (N, 2) array with lo <= hi")
    if not np.all(np.isfinite(bounds)):
        raise ValueError("bounds must be finite")

    kept: list[tuple[Literal, ...]] = []
    for conj in dnf.conjunctions:
        lits: list[Literal] = []
        dead = False
        for lit in conj:
            if isinstance(lit, Halfspace):
                lit = threshold_coefficients(lit, threshold)
                const = classify(lit, bounds)
                if const is True:
                    continue
                if const is False:
                    dead = True
                    break
            if lit not in lits:
                lits.append(lit)
        if dead:
            continue
        if not lits:
            return Dnf.true()
        kept.append(tuple(lits))

    result: list[tuple[Literal, ...]] = []
    for k, conj in enumerate(kept):
        s = set(conj)
        redundant = False
        for other_k, other in enumerate(kept):
            if other_k == k:
                continue
            o = set(other)
            # earlier duplicates win; strict subsets always win
            if o < s or (o == s and other_k < k):
                redundant = True
                break
        if not redundant:
            result.append(conj)
    return Dnf(tuple(result))


def metrics(dnf: Dnf) -> RuleMetrics:
    n_r = len(dnf.conjunctions)
    if n_r == 0:
        return RuleMetrics(0, 0.0)
    return RuleMetrics(n_r, sum(len(c) for c in dnf.conjunctions) / n_r)


def _fmt(v: float, precision: int) -> str:
    s = f"{round(v, precision):.{precision}f}"
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    if s in ("-0", ""):
        s = "0"
    return s


def render_literal(lit: Literal, feature_names: Sequence[str] | None = None,
                   precision: int = 2) -> str:
    if isinstance(lit, PredefinedLiteral):
        return f"({lit.name})"
    c = np.asarray(lit.coefficients)
    names = feature_names or [f"x_{i}" for i in range(c.size)]
    scale = float(np.max(np.abs(c))) if c.size else 0.0
    if scale == 0.0:
        return f"(0 > {_fmt(-lit.bias, precision)})"
    c = c / scale
    rhs = -lit.bias / scale
    terms = [(i, v) for i, v in enumerate(c) if _fmt(abs(v), precision) != "0"]
    if len(terms) == 1:
        i, v = terms[0]
        if v > 0:
            return f"({names[i]} > {_fmt(rhs, precision)})"
        return f"({names[i]} < {_fmt(-rhs, precision)})"
    parts = []
    for k, (i, v) in enumerate(terms):
        mag = _fmt(abs(v), precision)
        term = names[i] if mag == "1" else f"{mag}·{names[i]}"
        if k == 0:
            parts.append(term if v > 0 else f"-{term}")
        else:
            parts.append(f"{'+' if v > 0 else '-'} {term}")
    return f"({' '.join(parts)} > {_fmt(rhs, precision)})"


def render(dnf: Dnf, precision: int = 2, feature_names: Sequence[str] | None = None) -> str:
    if dnf.is_false:
        return "FALSE"
    if dnf.conjunctions == ((),):
        return "TRUE"
    lines = []
    for k, conj in enumerate(dnf.conjunctions):
        body = " ∧ ".join(render_literal(l, feature_names, precision) for l in conj) or "TRUE"
        lines.append(("" if k == 0 else "∨ ") + f"[{body}]")
    return "\n".join(lines)
