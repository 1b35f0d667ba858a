import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dqhfnn.circuits import REGISTRY, CircuitArchitecture
from dqhfnn.fuzzy import QuantumFuzzyLayer, aggregate, clamp_fraction, direct_product, membership
from dqhfnn.qsim import GateSpec

TRAINABLE = [n for n in sorted(REGISTRY)]
PI = np.pi


@pytest.mark.parametrize("arch,theta,x,expected", [
    ("A", (0, 0), (0, 0), [1.0, 1.0]),
    ("A", (0, 0), (PI, 0), [0.0, 1.0]),
])
def test_membership_examples(arch, theta, x, expected):
    np.testing.assert_allclose(membership(REGISTRY[arch], theta, *x), expected, atol=1e-15)


def test_arch_c_mu1_is_parity():
    mu = membership(REGISTRY["C"], (0, 0), np.array([0, 0, PI, PI]), np.array([0, PI, 0, PI]))
    np.testing.assert_allclose(mu[:, 1], [1, 0, 0, 1], atol=1e-15)


def test_arch_c_parity_probe_features():
    # mu1 carries parity, but mu0 tracks x_i, so the log-product of |01> and
    # |11> coincide: h separates {00} and {10} from the rest, not even from odd.
    layer = QuantumFuzzyLayer(REGISTRY["C"], np.zeros((2, 2)))
    probes = np.array([[[0, 0]], [[0, PI]], [[PI, 0]], [[PI, PI]]])
    h = layer.forward(probes)
    assert h[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert h[1, 0] == pytest.approx(h[3, 0])
    assert h[2, 0] < h[1, 0] < h[0, 0]


def test_membership_bounds(rng):
    for name in TRAINABLE:
        arch = REGISTRY[name]
        theta = rng.uniform(0, 2 * PI, size=(2000, arch.P))
        x = rng.uniform(0, PI, size=(2000, 2))
        mu = membership(arch, theta, x[:, 0], x[:, 1])
        assert mu.min() >= 0.0 and mu.max() <= 1.0


def test_aggregate_examples():
    assert aggregate([[1.0, 1.0], [1.0, 1.0]]) == 0.0
    assert aggregate([[0.5, 0.5], [1.0, 1.0]]) == pytest.approx(-np.log(2))
    assert aggregate([[0.0, 1.0]], clamp_eps=1e-12) == pytest.approx(np.log(1e-12))
    assert aggregate([[0.0, 0.0]], clamp_eps=1e-12) == pytest.approx(2 * np.log(1e-12))


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate(np.zeros((0, 2)))


def test_log_domain_vs_direct_product():
    # 918 membership vectors, i.e. 1836 scalars; 0.5**918 alone is ~1e-277
    values = np.full((918, 2), 0.5)
    assert direct_product(values[:, 0]) > 0.0
    assert direct_product(values) == 0.0
    h = aggregate(values)
    assert np.isfinite(h)
    assert h == pytest.approx(-2 * np.log(2), abs=1e-14)


def test_forward_single_class():
    layer = QuantumFuzzyLayer(REGISTRY["A"], np.zeros((1, 2)))
    assert layer.forward(np.array([[0.0, 0.0]])) == pytest.approx([0.0])


def test_identical_thetas_give_identical_features(rng):
    theta = rng.uniform(0, 2 * PI, size=2)
    layer = QuantumFuzzyLayer(REGISTRY["C"], np.stack([theta, theta]))
    h = layer.forward(rng.uniform(0, PI, size=(10, 6, 2)))
    np.testing.assert_array_equal(h[:, 0], h[:, 1])


def test_features_nonpositive(rng):
    layer = QuantumFuzzyLayer(REGISTRY["D"], rng.uniform(0, 2 * PI, size=(3, 4)))
    assert np.all(layer.forward(rng.uniform(0, PI, size=(20, 5, 2))) <= 0)


def test_thetas_shape_checked():
    with pytest.raises(ValueError):
        QuantumFuzzyLayer(REGISTRY["C"], np.zeros((2, 3)))


def test_single_rx_shift_rule():
    arch = CircuitArchitecture("X", (GateSpec("RX", (0,), param_slot=0),), 1, True)
    layer = QuantumFuzzyLayer(arch, [[PI / 2]])
    mu, dmu = layer.membership_gradients(np.array([[[0.0, 0.0]]]), 0)
    assert dmu[0, 0, 0, 0] == pytest.approx(-0.5, abs=1e-15)
    for th in np.linspace(0, 2 * PI, 9):
        layer.thetas[0, 0] = th
        _, dmu = layer.membership_gradients(np.array([[[0.0, 0.0]]]), 0)
        assert dmu[0, 0, 0, 0] == pytest.approx(-np.sin(th) / 2, abs=1e-14)


@pytest.mark.parametrize("name", ["A", "E", "G"])
def test_cnot_free_q0_params_do_not_reach_mu1(name, rng):
    arch = REGISTRY[name]
    layer = QuantumFuzzyLayer(arch, rng.uniform(0, 2 * PI, size=(1, arch.P)))
    _, dmu = layer.membership_gradients(rng.uniform(0, PI, size=(4, 3, 2)), 0)
    q0_slots = [g.param_slot for g in arch.gates if g.param_slot is not None and g.qubits == (0,)]
    for slot in q0_slots:
        assert np.max(np.abs(dmu[..., 1, slot])) < 1e-15


def _finite_diff(layer, pairs, c, step=1e-4):
    grads = np.zeros((pairs.shape[0], layer.arch.P))
    for i in range(layer.arch.P):
        orig = layer.thetas[c, i]
        layer.thetas[c, i] = orig + step
        up = layer.forward(pairs)[:, c]
        layer.thetas[c, i] = orig - step
        down = layer.forward(pairs)[:, c]
        layer.thetas[c, i] = orig
        grads[:, i] = (up - down) / (2 * step)
    return grads


@pytest.mark.parametrize("name", ["A", "B", "C", "D", "E", "F", "G"])
def test_shift_rule_matches_finite_differences(name):
    arch = REGISTRY[name]
    rng = np.random.default_rng(ord(name))
    worst = 0.0
    for _ in range(20):
        layer = QuantumFuzzyLayer(arch, rng.uniform(0, 2 * PI, size=(2, arch.P)))
        pairs = rng.uniform(0.1, PI - 0.1, size=(3, 4, 2))
        for c in range(2):
            _, dh = layer.feature_jacobian(pairs, c)
            worst = max(worst, np.max(np.abs(dh - _finite_diff(layer, pairs, c))))
    assert worst < 1e-5


def test_backward_contracts_upstream(rng):
    layer = QuantumFuzzyLayer(REGISTRY["D"], rng.uniform(0, 2 * PI, size=(3, 4)))
    pairs = rng.uniform(0, PI, size=(5, 4, 2))
    up = rng.normal(size=(5, 3))
    grad = layer.backward_parameter_shift(pairs, up)
    _, jac = layer.forward_backward(pairs)
    np.testing.assert_allclose(grad, np.einsum("sc,scp->cp", up, jac), atol=1e-14)
    assert grad.shape == (3, 4)


def test_clamped_branch_has_zero_gradient():
    layer = QuantumFuzzyLayer(REGISTRY["A"], np.zeros((1, 2)))
    # input (pi, 0) gives mu0 == 0 exactly, so slot 0 sees no gradient
    _, dh = layer.feature_jacobian(np.array([[[PI, 0.0]]]), 0)
    assert np.all(np.isfinite(dh))
    assert dh[0, 0] == 0.0


def test_class_parallel_results_identical(rng):
    thetas = rng.uniform(0, 2 * PI, size=(4, 2))
    pairs = rng.uniform(0, PI, size=(6, 5, 2))
    serial = QuantumFuzzyLayer(REGISTRY["C"], thetas, workers=1).forward_backward(pairs)
    threaded = QuantumFuzzyLayer(REGISTRY["C"], thetas, workers=4).forward_backward(pairs)
    for a, b in zip(serial, threaded):
        np.testing.assert_array_equal(a, b)


def test_clamp_rarely_active(rng):
    layer = QuantumFuzzyLayer(REGISTRY["C"], rng.uniform(0, 2 * PI, size=(10, 2)))
    frac = clamp_fraction(layer, rng.uniform(0, PI, size=(1000, 10, 2)))
    assert frac < 0.01


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 30), seed=st.integers(0, 1000))
def test_aggregate_matches_log_of_product(n, seed):
    mu = np.random.default_rng(seed).uniform(0.2, 1.0, size=(n, 2))
    assert aggregate(mu) == pytest.approx(np.log(np.prod(mu)) / n, rel=1e-12)
