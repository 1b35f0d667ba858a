import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dqhfnn.nn import (
    DenseLayer,
    DropoutSpec,
    FusionLayer,
    confusion_matrix,
    cross_entropy,
    dense_backward,
    dense_forward,
    dense_forward_cached,
    dropout,
    fuse,
    glorot_uniform,
    macro_metrics,
    one_hot,
    prediction_divergence,
    softmax,
)


def test_dense_identity_relu():
    layer = DenseLayer(np.eye(2), np.zeros(2), "relu")
    np.testing.assert_array_equal(dense_forward(layer, [1.0, -1.0]), [1.0, 0.0])


@pytest.mark.parametrize("activation,c,expected", [("none", [-2.0, 3.0], [-2.0, 3.0]), ("relu", [-2.0, 3.0], [0.0, 3.0])])
def test_dense_zero_weights(activation, c, expected, rng):
    layer = DenseLayer(np.zeros((2, 5)), c, activation)
    for _ in range(3):
        np.testing.assert_array_equal(dense_forward(layer, rng.normal(size=5)), expected)


def test_dense_shape_errors():
    with pytest.raises(ValueError):
        DenseLayer(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        DenseLayer(np.zeros((2, 3)), np.zeros(2), "tanh")
    with pytest.raises(ValueError):
        dense_forward(DenseLayer(np.zeros((2, 3)), np.zeros(2)), np.zeros(4))


@pytest.mark.parametrize("activation", ["relu", "none"])
def test_dense_input_gradient_fd(activation, rng):
    for _ in range(10):
        layer = DenseLayer.init(rng, 6, 4, activation)
        layer.b = rng.normal(size=4)
        x = rng.normal(size=(1, 6))
        up = rng.normal(size=(1, 4))
        out, pre = dense_forward_cached(layer, x)
        dx, dW, db = dense_backward(layer, x, pre, up)
        f = lambda z: float(np.sum(dense_forward(layer, z) * up))
        h = 1e-6
        num = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(6)[:, None, :]])
        np.testing.assert_allclose(dx.ravel(), num.ravel(), atol=1e-6)
        np.testing.assert_allclose(db, (up * (pre > 0 if activation == "relu" else 1)).ravel())


def test_glorot_bounds(rng):
    w = glorot_uniform(rng, 30, 20)
    assert w.shape == (20, 30)
    assert np.abs(w).max() <= np.sqrt(6 / 50)


def test_dropout_identity_cases(rng):
    x = rng.normal(size=100)
    np.testing.assert_array_equal(dropout(x, DropoutSpec(0.0), seed=1), x)
    np.testing.assert_array_equal(dropout(x, DropoutSpec(0.9, train_mode=False), seed=1), x)


def test_dropout_statistics():
    x = np.ones(100_000)
    y = dropout(x, DropoutSpec(0.3), seed=5)
    assert abs(np.mean(y > 0) - 0.7) < 0.01
    assert abs(y.mean() - 1.0) < 0.02
    assert set(np.unique(y)) <= {0.0, 1 / 0.7}


def test_dropout_rate_bound():
    with pytest.raises(ValueError):
        DropoutSpec(1.0)


def test_fuse_examples(rng):
    h = rng.normal(size=3)
    a, b = rng.normal(size=4), rng.normal(size=4)
    zero = FusionLayer(np.zeros((4, 3)), np.zeros(4))
    np.testing.assert_array_equal(fuse(a, h, zero), a)
    f = FusionLayer(rng.normal(size=(4, 3)), rng.normal(size=4))
    np.testing.assert_allclose(fuse(np.zeros(4), h, f), f.W_f @ h + f.b_f, atol=1e-15)
    np.testing.assert_allclose(fuse(a, h, f) - fuse(b, h, f), a - b, atol=1e-12)
    with pytest.raises(ValueError):
        fuse(np.zeros(5), h, f)


def test_softmax_examples():
    np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])
    p = softmax([1000.0, 0.0])
    assert p[0] == 1.0 and p[1] < 1e-300 and np.all(np.isfinite(p))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e4), shift=st.floats(-1e3, 1e3))
def test_softmax_properties(seed, scale, shift):
    z = np.random.default_rng(seed).uniform(-1, 1, 7) * scale
    p = softmax(z)
    assert abs(p.sum() - 1) < 1e-9 and p.min() >= 0
    np.testing.assert_allclose(softmax(z + shift), p, atol=1e-12)


@pytest.mark.parametrize("probs,labels,expected", [
    ([[1.0, 0.0]], [0], 0.0),
    ([[0.5, 0.5], [0.5, 0.5]], [0, 1], np.log(2)),
    ([[0.1] * 10], [7], np.log(10)),
])
def test_cross_entropy_examples(probs, labels, expected):
    assert cross_entropy(probs, labels) == pytest.approx(expected, abs=1e-12)


def test_cross_entropy_one_hot_and_clamp():
    p = np.array([[0.2, 0.8], [1.0, 0.0]])
    assert cross_entropy(p, one_hot([1, 1], 2)) == cross_entropy(p, [1, 1])
    assert cross_entropy(p, [1, 1]) == pytest.approx(-(np.log(0.8) + np.log(1e-12)) / 2)
    with pytest.raises(ValueError):
        cross_entropy(p, [0, 1, 1])


def test_cross_entropy_non_negative(rng):
    for _ in range(100):
        p = softmax(rng.normal(size=(5, 4)) * 5)
        assert cross_entropy(p, rng.integers(0, 4, 5)) >= 0


def test_macro_metrics_examples():
    m = macro_metrics([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert m == {"accuracy": 1.0, "macro_precision": 1.0, "macro_recall": 1.0, "macro_f1": 1.0}
    m = macro_metrics([0, 1, 1, 1], [0, 0, 1, 1], 2)
    assert m["accuracy"] == 0.75
    assert m["macro_precision"] == pytest.approx(5 / 6)
    assert m["macro_recall"] == pytest.approx(0.75)
    m = macro_metrics([1, 1, 1, 1], [0, 0, 1, 1], 2)
    assert m["accuracy"] == 0.5 and m["macro_recall"] == 0.5


def test_macro_metrics_absent_class_counts_zero():
    m = macro_metrics([0, 0], [0, 0], 3)
    assert m["macro_precision"] == pytest.approx(1 / 3)


def _brute_force(pred, true, c):
    ps, rs, fs = [], [], []
    for k in range(c):
        tp = sum(1 for p, t in zip(pred, true) if p == k and t == k)
        fp = sum(1 for p, t in zip(pred, true) if p == k and t != k)
        fn = sum(1 for p, t in zip(pred, true) if p != k and t == k)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        ps.append(prec)
        rs.append(rec)
        fs.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    acc = sum(p == t for p, t in zip(pred, true)) / len(pred)
    return acc, np.mean(ps), np.mean(rs), np.mean(fs)


def test_macro_metrics_brute_force(rng):
    for _ in range(1000):
        c = int(rng.integers(2, 6))
        n = int(rng.integers(1, 30))
        pred, true = rng.integers(0, c, n).tolist(), rng.integers(0, c, n).tolist()
        m = macro_metrics(pred, true, c)
        expected = _brute_force(pred, true, c)
        got = (m["accuracy"], m["macro_precision"], m["macro_recall"], m["macro_f1"])
        np.testing.assert_allclose(got, expected, atol=1e-12)


def test_confusion_matrix_orientation():
    cm = confusion_matrix([1, 1, 0], [0, 1, 1], 2)
    np.testing.assert_array_equal(cm, [[0, 1], [1, 1]])


def test_macro_metrics_rejects_empty():
    with pytest.raises(ValueError):
        macro_metrics([], [], 2)


def test_prediction_divergence_examples():
    assert prediction_divergence([0.3, 0.7], [0.3, 0.7]) == pytest.approx(0.0, abs=1e-15)
    assert prediction_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2), abs=1e-9)
    p, q = [0.9, 0.1], [0.5, 0.5]
    assert prediction_divergence(p, q) != pytest.approx(prediction_divergence(q, p), abs=1e-3)


def test_prediction_divergence_batched(rng):
    p = softmax(rng.normal(size=(6, 3)))
    q = softmax(rng.normal(size=(6, 3)))
    d = prediction_divergence(p, q)
    assert d.shape == (6,) and np.all(d >= 0)
    assert d[2] == pytest.approx(prediction_divergence(p[2], q[2]))
