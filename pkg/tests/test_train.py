import numpy as np
import pytest

from dqhfnn.model import DQHFNN, ModelConfig, Preprocessor
from dqhfnn.pairing import PairingConfig, build_plan
from dqhfnn.train import (
    NumericError,
    OptimizerState,
    Schedule,
    TrainConfig,
    adamw_step,
    fit,
    gradient_check,
    kfold_split,
    lr_at,
    sgd_step,
)
from test_model import toy


def test_sgd_examples():
    p = {"w": np.array([1.0, -2.0])}
    state = OptimizerState(lr=0.1)
    out = sgd_step(p, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(out["w"], p["w"])
    g = {"w": np.array([0.5, 1.0])}
    state = OptimizerState(lr=0.1)
    one = sgd_step(p, g, state)
    np.testing.assert_allclose(one["w"], p["w"] - 0.1 * g["w"])
    two = sgd_step(one, g, state)
    np.testing.assert_allclose(p["w"] - two["w"], 0.1 * g["w"] * 2.9, atol=1e-15)


def test_optimizer_shape_errors():
    with pytest.raises(ValueError):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, OptimizerState())
    with pytest.raises(ValueError):
        adamw_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, OptimizerState("adamw"))
    with pytest.raises(ValueError):
        OptimizerState("rmsprop")


def test_adamw_examples():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    state = OptimizerState("adamw", lr=0.01, weight_decay=0.0)
    np.testing.assert_array_equal(adamw_step(p, {"w": np.zeros(3)}, state)["w"], p["w"])
    g = np.array([0.5, -3.0, 1e-3])
    state = OptimizerState("adamw", lr=0.01, weight_decay=0.0)
    out = adamw_step(p, {"w": g}, state)
    np.testing.assert_allclose(out["w"] - p["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-10)
    state = OptimizerState("adamw", lr=0.01, weight_decay=0.1)
    out = adamw_step(p, {"w": np.zeros(3)}, state)
    np.testing.assert_allclose(out["w"], p["w"] * (1 - 0.01 * 0.1), rtol=1e-15)


def test_adamw_never_decays_quantum_angles():
    p = {"quantum.theta": np.array([[1.0, 2.0]]), "fusion.W": np.array([[1.0]])}
    state = OptimizerState("adamw", lr=0.1, weight_decay=0.5)
    out = adamw_step(p, {k: np.zeros_like(v) for k, v in p.items()}, state)
    np.testing.assert_array_equal(out["quantum.theta"], p["quantum.theta"])
    assert out["fusion.W"][0, 0] == pytest.approx(0.95)


@pytest.mark.parametrize("epoch,expected", [(1, 1e-2), (55, 1e-2), (56, 1e-2), (57, 1e-3), (60, 1e-3), (78, 1e-3), (80, 1e-4)])
def test_multistep(epoch, expected):
    assert lr_at(Schedule("multistep", 1e-2, (56, 78), 0.1), epoch) == pytest.approx(expected)


def test_warmup_cosine():
    s = Schedule("warmup_cosine", 1e-3, warmup_epochs=3, total_epochs=60)
    assert lr_at(s, 1.5) == pytest.approx(5e-4)
    assert lr_at(s, 3) == pytest.approx(1e-3)
    assert lr_at(s, 60) == pytest.approx(0.0, abs=1e-15)
    values = [lr_at(s, e) for e in np.arange(3, 61, 0.5)]
    assert np.all(np.diff(values) <= 1e-18)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule("multistep", milestones=(78, 56))
    with pytest.raises(ValueError):
        Schedule("warmup_cosine", warmup_epochs=10, total_epochs=10)
    with pytest.raises(ValueError):
        Schedule("step")


def test_multistep_piecewise_constant():
    s = Schedule("multistep", 1.0, (3, 7), 0.5)
    values = [lr_at(s, e) for e in range(1, 12)]
    assert values == [1, 1, 1, 0.5, 0.5, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25]


def test_train_config_defaults():
    assert TrainConfig().make_optimizer().weight_decay == 0.0
    assert TrainConfig(optimizer="adamw").make_optimizer().weight_decay == 1e-2
    assert TrainConfig(seed=1).digest() != TrainConfig(seed=2).digest()
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_lr_zero_leaves_params_identical():
    model, x, y = toy()
    before = {k: v.copy() for k, v in model.params.items()}
    fit(model, (x, y), TrainConfig(lr=0.0, epochs=3, batch_size=2))
    for k, v in before.items():
        np.testing.assert_array_equal(model.params[k], v)


@pytest.mark.parametrize("mode", ["hybrid", "quantum_only", "classical_only"])
def test_singleton_memorization(mode):
    model, x, y = toy(mode=mode)
    cfg = TrainConfig(optimizer="adamw", lr=0.05, schedule="constant", epochs=200, batch_size=1)
    report = fit(model, (x[:1], y[:1]), cfg)
    assert report.rows[-1]["train_loss"] < 1e-2


def test_report_rows_and_determinism():
    runs = []
    for _ in range(2):
        model, x, y = toy()
        cfg = TrainConfig(epochs=4, batch_size=4, seed=9)
        runs.append(fit(model, (x, y), cfg, val=(x, y), test=(x, y)))
    a, b = runs
    assert [r["epoch"] for r in a.rows] == [1, 2, 3, 4]
    assert a.to_csv("# h") == b.to_csv("# h")
    assert a.summary_json() == b.summary_json()
    assert a.to_csv().splitlines()[0] == "epoch,train_loss,train_acc,val_acc,lr,grad_norm_quantum,grad_norm_classical"
    assert set(a.summary()) == {"accuracy", "macro_precision", "macro_recall", "macro_f1", "seed", "config_hash"}
    assert np.all(a.column("grad_norm_quantum") > 0)


def test_non_finite_loss_aborts():
    model, x, y = toy()
    model.params["classifier.0.W"] = np.full_like(model.params["classifier.0.W"], np.nan)
    with pytest.raises(NumericError):
        fit(model, (x, y), TrainConfig(epochs=1))


def test_gradient_check_negative_control():
    model, x, y = toy()

    def corrupt(grads):
        grads = dict(grads)
        grads["fusion.W"] = grads["fusion.W"] + 0.01
        return grads

    assert gradient_check(model, x, y)[0]
    passed, dev = gradient_check(model, x, y, grad_hook=corrupt)
    assert not passed and dev > 1e-3


@pytest.mark.parametrize("arch", ["A", "C", "G"])
def test_gradient_check_quantum_only(arch):
    model, x, y = toy(arch=arch, mode="quantum_only")
    passed, dev = gradient_check(model, x, y, tolerance=1e-6)
    assert passed, dev


def test_kfold_examples():
    folds = kfold_split(8, 8, seed=1)
    assert all(len(v) == 1 for _, v in folds)
    folds = kfold_split(213, 8, seed=3)
    sizes = {len(v) for _, v in folds}
    assert sizes == {26, 27}
    vals = np.concatenate([v for _, v in folds])
    assert sorted(vals.tolist()) == list(range(213))
    for tr, v in folds:
        assert len(np.intersect1d(tr, v)) == 0 and len(tr) + len(v) == 213
    with pytest.raises(ValueError):
        kfold_split(3, 4)
    with pytest.raises(ValueError):
        kfold_split(10, 1)
