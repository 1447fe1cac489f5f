import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stam import autodiff as ad
from stam.autodiff import Graph, Tensor
from stam.data import SynthSpec, WindowedDataset, _prepare_series, synth_generate, synth_schema
from stam.errors import ConfigError, ContractError, DataError, DivergedError, ShapeError
from stam.models import ModelConfig, build_model
from stam.models.base import is_finite_model
from stam.training import (
    AdamState,
    Metrics,
    TrainConfig,
    adam_step,
    clip_global_norm,
    compute_metrics,
    evaluate,
    fit,
    mse_loss,
)


def synth_data(rows=120, seed=0, tx=4, ty=2, n=3):
    spec = SynthSpec(n_vars=n, length=rows, relevant=(0,), seed=seed)
    return _prepare_series(synth_generate(spec), synth_schema(spec), tx, ty, (0.6, 0.2, 0.2), 1)


def small_model(seed=0, **kw):
    base = dict(n_vars=3, input_len=4, output_len=2, enc_dim=6, dec_dim=6, context_dim=2, seed=seed)
    base.update(kw)
    return build_model(ModelConfig(**base))


# --- config ------------------------------------------------------------------------


def test_train_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.batch_size, cfg.epochs, cfg.beta1, cfg.beta2, cfg.eps) == (
        0.001, 256, 50, 0.9, 0.999, 1e-8)
    assert cfg.shuffle and cfg.clip_norm is None
    with pytest.raises(ConfigError) as exc:
        TrainConfig(learning_rate=0, batch_size=0, epochs=0)
    assert len(exc.value.problems) == 3
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"lr": 0.1})
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# --- loss ----------------------------------------------------------------------------


def test_mse_loss_values():
    assert mse_loss(Tensor([1.0, 2.0]), [1.0, 2.0]).item() == 0.0
    assert mse_loss(Tensor([1.0, 2.0]), [0.0, 0.0]).item() == 2.5
    with pytest.raises(ShapeError):
        mse_loss(Tensor([1.0, 2.0]), [0.0])


def test_mse_loss_gradient():
    pred = Tensor([0.5, -1.0, 2.0], requires_grad=True)
    target = np.array([0.0, 1.0, 1.0])
    with Graph() as g:
        loss = mse_loss(pred, target)
    g.backward(loss)
    np.testing.assert_allclose(pred.grad, 2 * (pred.data - target) / 3, rtol=1e-14)
    assert ad.grad_check(lambda: mse_loss(pred, target), [pred]).passed


def test_batch_loss_is_mean_of_window_losses():
    m = small_model()
    data = synth_data()
    X, y = data.train.X[:7], data.train.y[:7]
    batch = mse_loss(m.forward(X)[0], y).item()
    per = [mse_loss(m.forward(X[k])[0], y[k]).item() for k in range(7)]
    assert abs(batch - np.mean(per)) <= 1e-12


# --- adam ------------------------------------------------------------------------------


def test_adam_zero_grad_is_identity():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = AdamState.init([p])
    adam_step(state, [p], [np.zeros(2)], TrainConfig())
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.t == 1


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
def test_adam_first_step_is_signed_lr(g):
    p = Tensor(np.array([0.0]), requires_grad=True)
    cfg = TrainConfig(learning_rate=0.01)
    adam_step(AdamState.init([p]), [p], [np.array([g])], cfg)
    assert p.data[0] == pytest.approx(-0.01 * math.copysign(1, g), rel=1e-5)


def test_adam_reference_trace_on_quadratic():
    cfg = TrainConfig(learning_rate=0.1)
    p = Tensor(np.array([1.0]), requires_grad=True)
    state = AdamState.init([p])
    w, m, v = 1.0, 0.0, 0.0
    for t in range(1, 101):
        adam_step(state, [p], [2 * p.data.copy()], cfg)
        g = 2 * w
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w -= 0.1 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert p.data[0] == pytest.approx(w, rel=1e-12, abs=1e-15)
    assert abs(p.data[0]) < 0.1


def test_adam_shape_mismatch():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(ShapeError):
        adam_step(AdamState.init([p]), [p], [np.zeros(3)], TrainConfig())
    with pytest.raises(ShapeError):
        adam_step(AdamState.init([p]), [p], [], TrainConfig())


def test_clip_global_norm():
    grads = [np.array([3.0]), np.array([4.0])]
    assert clip_global_norm(grads, 1.0) == 5.0
    np.testing.assert_allclose([grads[0][0], grads[1][0]], [0.6, 0.8])


# --- metrics -----------------------------------------------------------------------------


def test_metrics_perfect_and_mean_predictors():
    y = np.array([1.0, 4.0, 2.0, 7.0])
    assert compute_metrics(y, y) == Metrics(0.0, 0.0, 1.0)
    assert compute_metrics(np.full(4, y.mean()), y).r2 == pytest.approx(0.0, abs=1e-12)


def test_metrics_hand_case():
    m = compute_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 5.0])
    assert m.mae == pytest.approx(2 / 3)
    assert m.rmse == pytest.approx(math.sqrt(4 / 3))


def test_metrics_rmse_squared_is_mse():
    rng = np.random.default_rng(0)
    p, t = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
    assert abs(compute_metrics(p, t).rmse ** 2 - np.mean((p - t) ** 2)) <= 1e-12


def test_metrics_zero_variance_rejected():
    with pytest.raises(DataError):
        compute_metrics([1.0, 2.0], [3.0, 3.0])


def test_evaluate_uses_original_units_and_is_pure():
    data = synth_data()
    m = small_model()
    before = [t.data.copy() for t in m.param_tensors()]
    a, b = evaluate(m, data.test), evaluate(m, data.test)
    assert a == b
    assert all(np.array_equal(x, t.data) for x, t in zip(before, m.param_tensors()))
    pred = data.test.targets_original_units(m.predict(data.test.X))
    raw = data.test.targets_original_units()
    assert a == compute_metrics(pred, raw)
    scaler = data.test.scaler
    assert not np.allclose(raw, data.test.y) or scaler.std[scaler.columns.index("y")] == 1.0


def test_evaluate_empty_dataset():
    data = synth_data()
    empty = WindowedDataset(data.test.X[:0], data.test.y[:0], data.test.input_names, "y", data.test.scaler)
    with pytest.raises(ContractError):
        evaluate(small_model(), empty)


# --- fit ------------------------------------------------------------------------------------


def test_two_epoch_loss_decreases_on_most_seeds():
    wins = 0
    for seed in range(5):
        data = synth_data(rows=64 + 6 + 60, seed=seed)
        train = WindowedDataset(data.train.X[:64], data.train.y[:64], data.train.input_names, "y", data.train.scaler)
        log = fit(small_model(seed), train, data.val, TrainConfig(epochs=2, batch_size=16, learning_rate=0.01, seed=seed))
        wins += log.train_losses[1] < log.train_losses[0]
    assert wins >= 4


def test_fit_is_deterministic_and_logs_fields():
    data = synth_data()
    cfg = TrainConfig(epochs=2, batch_size=32, seed=3)
    logs = [fit(small_model(1), data.train, data.val, cfg) for _ in range(2)]
    assert logs[0].to_jsonl(with_seconds=False) == logs[1].to_jsonl(with_seconds=False)
    rec = json.loads(logs[0].to_jsonl().splitlines()[0])
    assert list(rec) == ["epoch", "train_loss", "val_rmse", "val_mae", "val_r2", "seconds"]
    assert rec["seconds"] > 0


def test_fit_single_oversized_batch_and_finite_params():
    data = synth_data()
    calls = []
    m = small_model()
    fit(m, data.train, None, TrainConfig(epochs=1, batch_size=10_000), on_epoch=calls.append)
    assert len(calls) == 1 and "val_rmse" not in calls[0]
    assert is_finite_model(m)


def test_fit_final_weights_are_kept():
    data = synth_data()
    m = small_model()
    log = fit(m, data.train, data.val, TrainConfig(epochs=2, batch_size=32))
    assert evaluate(m, data.val).rmse == log.records[-1]["val_rmse"]


def test_fit_reports_divergence_epoch():
    data = synth_data()
    m = small_model()
    m.layers["head"].W.data[:] = 1e308
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(DivergedError, match="epoch 1"):
        fit(m, data.train, None, TrainConfig(epochs=1))


def test_fit_rejects_empty_sets():
    data = synth_data()
    empty = WindowedDataset(data.val.X[:0], data.val.y[:0], data.val.input_names, "y")
    with pytest.raises(ContractError):
        fit(small_model(), empty, None, TrainConfig(epochs=1))
    with pytest.raises(ContractError):
        fit(small_model(), data.train, empty, TrainConfig(epochs=1))


def test_same_seed_same_first_epoch_loss():
    data = synth_data()
    cfg = TrainConfig(epochs=1, batch_size=32)
    a = fit(small_model(5), data.train, None, cfg).train_losses
    b = fit(small_model(5), data.train, None, cfg).train_losses
    assert a == b
