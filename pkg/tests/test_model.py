import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from r2n.errors import ConfigError, ShapeError
from r2n.model import (Checkpoint, ModelParams, and_forward, binarize_masks, literal_forward,
                       model_forward, or_forward)


def params_with(W=None, b=None, U=None, V=None, n=5, m=2, M=None, J=2):
    M = m if M is None else M
    return ModelParams(
        np.zeros((n, m)) if W is None else W,
        np.zeros(m) if b is None else b,
        np.zeros((M, J)) if U is None else U,
        np.zeros(J) if V is None else V,
    )


def logits_for(mask):
    """Logits whose sign pattern reproduces a 0/1 mask."""
    return 2.0 * np.asarray(mask, dtype=float) - 1.0


def ex1_model():
    """Hand-set binarized model for (x_0 > 0.25) or (x_1 < 0.5)."""
    W = np.zeros((5, 2))
    W[0, 0], W[1, 1] = 1.0, -1.0
    b = np.array([-0.25, 0.5])
    U = logits_for([[1, 0], [0, 1]])
    V = logits_for([1, 1])
    return ModelParams(W, b, U, V)


class TestLiteralForward:
    def test_zero_input_gives_half(self):
        p = params_with(n=3, m=4)
        np.testing.assert_array_equal(literal_forward(np.zeros(3), p, 1.0, "train"), 0.5)

    def test_threshold_literal(self):
        W = np.zeros((5, 1))
        W[0, 0] = 1.0
        p = params_with(W=W, b=np.array([-0.26]), m=1, J=1)
        assert literal_forward([0.3, 0, 0, 0, 0], p, 1.0, "eval")[0] == 1.0
        # strict inequality: exactly on the boundary is false
        W[0, 0] = 1.0
        p = params_with(W=W, b=np.array([-0.25]), m=1, J=1)
        assert literal_forward([0.25, 0, 0, 0, 0], p, 1.0, "eval")[0] == 0.0

    def test_boundary_value_from_rounded_bias(self):
        # 0.26 - 0.26 is exactly zero in floating point
        W = np.zeros((5, 1))
        W[0, 0] = 1.0
        p = params_with(W=W, b=np.array([-0.26]), m=1, J=1)
        assert literal_forward([0.26, 0, 0, 0, 0], p, 1.0, "eval")[0] == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            literal_forward(np.zeros(4), params_with(n=5), 1.0)

    def test_train_matches_sigmoid(self):
        rng = np.random.default_rng(1)
        p = ModelParams.initialize(3, 4, 0, 2, rng)
        x = rng.random(3)
        expected = 1.0 / (1.0 + np.exp(-(x @ p.literal_weights + p.literal_biases) / 0.3))
        np.testing.assert_allclose(literal_forward(x, p, 0.3), expected, rtol=1e-14)


class TestAndForward:
    def test_truth_table(self):
        p = params_with(U=logits_for([[1], [1]]), J=1)
        assert and_forward([1, 1], p, 1.0, "eval")[0] == 1
        assert and_forward([1, 0], p, 1.0, "eval")[0] == 0

    def test_empty_conjunction_is_true(self):
        p = params_with(U=logits_for([[0], [0]]), J=1)
        for phi in itertools.product([0, 1], repeat=2):
            assert and_forward(phi, p, 1.0, "eval")[0] == 1

    def test_soft_weights(self):
        # u = 0 gives w = 0.5 at any temperature
        p = params_with(U=np.zeros((2, 1)), J=1)
        for tau in (0.1, 1.0, 7.0):
            assert and_forward([0, 0], p, tau, "train")[0] == 0.0


class TestOrForward:
    def test_empty_disjunction_is_false(self):
        p = params_with(V=logits_for([0, 0]))
        for z in itertools.product([0, 1], repeat=2):
            assert or_forward(z, p, 1.0, "eval") == 0

    def test_truth_table(self):
        assert or_forward([0, 1], params_with(V=logits_for([1, 0])), 1.0, "eval") == 0
        assert or_forward([0, 1], params_with(V=logits_for([1, 1])), 1.0, "eval") == 1

    def test_soft_max(self):
        # logits chosen so that sigmoid(v) = (0.8, 0.4)
        v = np.log(np.array([0.8, 0.4]) / (1 - np.array([0.8, 0.4])))
        out = or_forward([0.5, 1.0], params_with(V=v), 1.0, "train")
        assert out == pytest.approx(0.4, abs=1e-15)

    def test_needs_a_conjunction(self):
        with pytest.raises(ConfigError):
            params_with(U=np.zeros((2, 0)), V=np.zeros(0), J=0)


class TestModelForward:
    def test_ex1_points(self):
        p = ex1_model()
        out = model_forward([[0.3, 0.6, 0, 0, 0], [0.1, 0.7, 0, 0, 0]], None, p, 1.0, "eval")
        np.testing.assert_array_equal(out, [1.0, 0.0])

    def test_negative_or_logits_give_zero(self):
        rng = np.random.default_rng(3)
        p = ModelParams.initialize(4, 3, 2, 5, rng)
        p.or_logits[:] = -np.abs(p.or_logits) - 0.1
        X = rng.random((50, 4))
        P = rng.integers(0, 2, (50, 2))
        np.testing.assert_array_equal(model_forward(X, P, p, 1.0, "eval"), 0.0)

    def test_predefined_literals_enter_and_layer(self):
        # single conjunction using only the predefined literal
        p = params_with(n=1, m=1, M=2, J=1, U=logits_for([[0], [1]]), V=[1.0])
        out = model_forward([[0.0], [0.0]], [[1], [0]], p, 1.0, "eval")
        np.testing.assert_array_equal(out, [1.0, 0.0])

    def test_row_mismatch(self):
        with pytest.raises(ShapeError):
            model_forward(np.zeros((3, 5)), np.zeros((2, 0)), ex1_model(), 1.0)

    def test_eval_outputs_binary(self):
        rng = np.random.default_rng(4)
        p = ModelParams.initialize(5, 6, 3, 7, rng)
        out = model_forward(rng.random((200, 5)), rng.integers(0, 2, (200, 3)), p, 1.0, "eval")
        assert set(np.unique(out)) <= {0.0, 1.0}


class TestBinarize:
    def test_sign_inspection(self):
        p = params_with(U=np.array([[3.2, -0.01], [0.0, 1.0]]), V=np.array([0.0, 2.0]))
        and_mask, or_mask = binarize_masks(p)
        np.testing.assert_array_equal(and_mask, [[1, 0], [0, 1]])
        np.testing.assert_array_equal(or_mask, [0, 1])

    def test_masks_match_eval_weights(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            p = ModelParams.initialize(3, 4, 2, 6, rng)
            and_mask, or_mask = binarize_masks(p)
            # an all-false literal vector exposes each AND column's membership
            for i in range(p.n_literals):
                phi = np.ones(p.n_literals)
                phi[i] = 0.0
                np.testing.assert_array_equal(and_forward(phi, p, 1.0, "eval"), 1 - and_mask[i])
            for j in range(p.J):
                z = np.zeros(p.J)
                z[j] = 1.0
                assert or_forward(z, p, 1.0, "eval") == or_mask[j]


# Exhaustive equivalence of the arithmetic forms with the Boolean operators.
@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_conjunction_equivalence_exhaustive(M):
    for w in itertools.product([0, 1], repeat=M):
        p = params_with(n=1, m=0, M=M, J=1, W=np.zeros((1, 0)), b=np.zeros(0),
                        U=logits_for(np.array(w)[:, None]))
        for phi in itertools.product([0, 1], repeat=M):
            expected = all(phi[i] for i in range(M) if w[i] == 1)
            assert and_forward(phi, p, 1.0, "eval")[0] == float(expected)


@pytest.mark.parametrize("J", [1, 2, 3, 4])
def test_disjunction_equivalence_exhaustive(J):
    for w in itertools.product([0, 1], repeat=J):
        p = params_with(J=J, V=logits_for(w))
        for z in itertools.product([0, 1], repeat=J):
            expected = any(z[j] for j in range(J) if w[j] == 1)
            assert or_forward(z, p, 1.0, "eval") == float(expected)


def _away_from_zero(a, rng, gap=1e-2):
    small = np.abs(a) < gap
    a[small] = np.where(rng.random(small.sum()) < 0.5, -gap, gap) * 2
    return a


def test_annealing_limit():
    rng = np.random.default_rng(6)
    for _ in range(50):
        p = ModelParams.initialize(4, 5, 2, 6, rng)
        _away_from_zero(p.and_logits, rng)
        _away_from_zero(p.or_logits, rng)
        X = rng.random((40, 4))
        pre = X @ p.literal_weights + p.literal_biases
        X = X[np.all(np.abs(pre) > 1e-2, axis=1)]
        P = rng.integers(0, 2, (X.shape[0], 2))
        soft = model_forward(X, P, p, 1e-6, "train")
        hard = model_forward(X, P, p, 1.0, "eval")
        assert np.max(np.abs(soft - hard)) < 1e-3


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), tau=st.floats(1e-4, 10.0))
def test_train_outputs_in_unit_interval(seed, tau):
    rng = np.random.default_rng(seed)
    p = ModelParams.initialize(3, 4, 2, 5, rng)
    p.literal_weights *= 100
    X = rng.normal(size=(30, 3)) * 10
    out = model_forward(X, rng.integers(0, 2, (30, 2)), p, tau, "train")
    assert np.all((out >= 0) & (out <= 1))


def test_small_temperature_does_not_overflow():
    p = ex1_model()
    with np.errstate(all="raise"):
        out = model_forward([[0.3, 0.6, 0, 0, 0]], None, p, 1e-12, "train")
    assert out[0] == 1.0


def test_flat_round_trip():
    rng = np.random.default_rng(7)
    p = ModelParams.initialize(3, 4, 2, 5, rng)
    q = ModelParams.from_flat(p.to_flat(), 3, 4, 6, 5)
    for a, b in zip(p.arrays(), q.arrays()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(8)
    p = ModelParams.initialize(3, 4, 2, 5, rng)
    p.literal_weights[0, 0] = 1e-300
    p.literal_biases[0] = -123456789.123456789
    ck = Checkpoint(p, ["a", "b", "c"], [{"feature": "c", "value": "x", "polarity": True}],
                    {"lo": [0.0, 1.0, 2.0], "hi": [1.0, 2.0, 3.0]})
    ck.save(tmp_path / "ck.json")
    back = Checkpoint.load(tmp_path / "ck.json")
    for a, b in zip(p.arrays(), back.params.arrays()):
        np.testing.assert_array_equal(a, b)
    assert back.feature_names == ["a", "b", "c"]
    assert back.normalization == ck.normalization
    fields = json.loads((tmp_path / "ck.json").read_text())
    assert set(fields) == {"n_features", "m", "J", "literal_weights", "literal_biases",
                           "and_logits", "or_logits", "feature_names",
                           "predefined_literal_descriptors", "normalization_stats"}


def test_checkpoint_rejects_non_finite(tmp_path):
    p = ex1_model()
    p.or_logits[0] = np.nan
    with pytest.raises(ValueError):
        Checkpoint(p).save(tmp_path / "bad.json")
