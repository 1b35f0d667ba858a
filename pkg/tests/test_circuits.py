import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dqhfnn.characterize import meyer_wallach
from dqhfnn.circuits import (
    REGISTRY,
    FeatureRange,
    encode,
    dump_architecture,
    identity_architecture,
    parse_architecture,
    registry_lookup,
    run_circuit,
)
from dqhfnn.qsim import basis_state, expectation_z, probabilities

S = 1 / np.sqrt(2)


@pytest.mark.parametrize("raw,expected", [(-2.0, 0.0), (3.0, np.pi), (0.5, np.pi / 2), (-5.0, 0.0), (9.0, np.pi)])
def test_normalize_feature(raw, expected):
    from dqhfnn.circuits import normalize_feature

    assert normalize_feature(raw, FeatureRange(-2.0, 3.0)) == pytest.approx(expected)


@pytest.mark.parametrize("lo,hi", [(1.0, 1.0), (2.0, 1.0), (0.0, float("inf"))])
def test_degenerate_range(lo, hi):
    with pytest.raises(ValueError):
        FeatureRange(lo, hi)


def test_normalize_rejects_nan():
    from dqhfnn.circuits import normalize_feature

    with pytest.raises(ValueError):
        normalize_feature(float("nan"), FeatureRange(0, 1))


@pytest.mark.parametrize("xi,xj,expected", [
    (0, 0, [1, 0, 0, 0]),
    (np.pi, np.pi, [0, 0, 0, 1]),
    (np.pi / 2, 0, [S, 0, S, 0]),
])
def test_encode(xi, xj, expected):
    np.testing.assert_allclose(encode(xi, xj), expected, atol=1e-15)


def test_encode_is_separable():
    grid = np.linspace(0, np.pi, 10)
    xi, xj = np.meshgrid(grid, grid)
    assert np.max(meyer_wallach(encode(xi, xj))) < 1e-12


@pytest.mark.parametrize("name,P,ent,sym", [
    ("A", 2, False, True), ("B", 2, True, False), ("C", 2, True, False), ("D", 4, True, True),
    ("E", 4, False, True), ("F", 8, True, True), ("G", 3, False, False),
])
def test_registry(name, P, ent, sym):
    arch = registry_lookup(name)
    assert arch.P == P
    assert arch.declared_entangling is ent
    assert arch.declared_symmetric is sym
    assert arch.excluded_from_training is (name == "F")


def test_registry_lookup_errors():
    with pytest.raises(ValueError):
        registry_lookup("Z")
    assert registry_lookup(" c ").name == "C"


def test_slot_invariants():
    from dqhfnn.circuits import CircuitArchitecture
    from dqhfnn.qsim import GateSpec

    with pytest.raises(ValueError):
        CircuitArchitecture("X", (GateSpec("RX", (0,), param_slot=1),), 1, True)
    with pytest.raises(ValueError):
        CircuitArchitecture("X", (GateSpec("RX", (0,), param_slot=0),), 2, True)


def test_arch_a_zero_theta_is_encoding(rng):
    x = rng.uniform(0, np.pi, size=(20, 2))
    np.testing.assert_allclose(run_circuit(REGISTRY["A"], [0, 0], x[:, 0], x[:, 1]), encode(x[:, 0], x[:, 1]))


def test_arch_c_examples():
    out = run_circuit(REGISTRY["C"], [0, 0], np.pi, np.pi)
    np.testing.assert_allclose(probabilities(out), probabilities(basis_state("10")), atol=1e-15)
    out = run_circuit(REGISTRY["C"], [np.pi / 2, 0], 0, 0)
    np.testing.assert_allclose(probabilities(out), [0.5, 0, 0, 0.5], atol=1e-15)


def test_theta_length_checked():
    with pytest.raises(ValueError):
        run_circuit(REGISTRY["D"], [0.1, 0.2], 0.0, 0.0)


@pytest.mark.parametrize("name", ["A", "E", "G"])
def test_cnot_free_locality(name, rng):
    arch = REGISTRY[name]
    theta = rng.uniform(0, 2 * np.pi, arch.P)
    xj = np.linspace(0, np.pi, 10)
    for xi in (0.3, 1.9):
        z0 = expectation_z(run_circuit(arch, theta, xi, xj), 0)
        assert np.ptp(z0) < 1e-12
        z1 = expectation_z(run_circuit(arch, theta, xj, xi), 1)
        assert np.ptp(z1) < 1e-12


def test_entangling_archs_break_locality(rng):
    theta = np.array([0.9, 0.4])
    xj = np.linspace(0, np.pi, 10)
    # C: <Z1> depends on x_i through the CNOT
    z1 = expectation_z(run_circuit(REGISTRY["C"], theta, xj, 0.7), 1)
    assert np.ptp(z1) > 1e-3
    # B: <Z0> is still local (CNOT targets q1), <Z1> is not
    z1 = expectation_z(run_circuit(REGISTRY["B"], theta, xj, 0.7), 1)
    assert np.ptp(z1) > 1e-3


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_two_pi_periodic(name, rng):
    arch = REGISTRY[name]
    theta = rng.uniform(0, 2 * np.pi, arch.P)
    for i in range(arch.P):
        shifted = theta.copy()
        shifted[i] += 2 * np.pi
        a = run_circuit(arch, theta, 0.4, 2.2)
        b = run_circuit(arch, shifted, 0.4, 2.2)
        assert abs(np.vdot(a, b)) ** 2 == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_dump_roundtrip(name):
    arch = REGISTRY[name]
    back = parse_architecture(dump_architecture(arch))
    assert back == arch


def test_dump_format():
    assert dump_architecture(REGISTRY["C"]) == "C;2;RX@0#s0,CNOT@0>1,RZ@1#s1"
    with pytest.raises(ValueError):
        parse_architecture("C;2;RX0")


def test_identity_arch():
    ident = identity_architecture()
    assert ident.P == 0
    np.testing.assert_allclose(run_circuit(ident, np.zeros(0), 1.0, 2.0), encode(1.0, 2.0))


@settings(max_examples=30, deadline=None)
@given(name=st.sampled_from(sorted(REGISTRY)), seed=st.integers(0, 10_000))
def test_batched_theta_broadcast(name, seed):
    arch = REGISTRY[name]
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 2 * np.pi, size=(5, arch.P))
    x = rng.uniform(0, np.pi, size=(5, 2))
    batched = run_circuit(arch, theta, x[:, 0], x[:, 1])
    for k in range(5):
        np.testing.assert_allclose(batched[k], run_circuit(arch, theta[k], x[k, 0], x[k, 1]), atol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(batched, axis=1), 1, atol=1e-12)
