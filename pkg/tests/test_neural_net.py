import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cases import gradient_check, random_spec
from rcnn_svr import neural_net as nn
from rcnn_svr.dataio import SplitSpec, generate_synthetic, split
from rcnn_svr.errors import (
    EmptyDatasetError,
    InvalidSpecError,
    LayerOutOfRangeError,
    ShapeMismatchError,
    StaleCacheError,
)
from rcnn_svr.pipeline import build_rcnn_spec, build_rcnn_svr_spec, fit_pipeline
from rcnn_svr.tensor import Shape4, Tensor4


def _same_params(a, b):
    pa, pb = list(a.arrays()), list(b.arrays())
    return len(pa) == len(pb) and all(
        x[0] == y[0] and x[1] == y[1] and x[2].tobytes() == y[2].tobytes() for x, y in zip(pa, pb)
    )


# ---------------------------------------------------------------- init

def test_init_is_deterministic():
    spec = build_rcnn_spec()
    assert _same_params(nn.init_network(spec, 3), nn.init_network(spec, 3))
    assert not _same_params(nn.init_network(spec, 3), nn.init_network(spec, 4))


def test_fc_param_shapes():
    spec = nn.spec_from_layers(50, [nn.fully_connected(1), nn.regression()])
    p = nn.init_network(spec)
    assert p.weights[0].size == 50 and p.biases[0].size == 1
    assert not p.biases[0].any()


def test_rcnn_param_count():
    expected = (25 * 1 * 1 + 25) + (25 * 25 * 1 + 25) + (50 * 1 + 1)
    assert nn.init_network(build_rcnn_spec(), 0).count() == expected == 751


def test_glorot_bounds():
    spec = build_rcnn_spec()
    p = nn.init_network(spec, 1)
    # conv2: fan_in = 25*1, fan_out = 25*1
    assert np.abs(p.weights[4]).max() <= math.sqrt(6 / 50)
    # fc: fan_in = 50, fan_out = 1
    assert np.abs(p.weights[6]).max() <= math.sqrt(6 / 51)


def test_invalid_spec():
    with pytest.raises(InvalidSpecError):
        nn.spec_from_layers(2, [nn.max_pool(2), nn.max_pool(2), nn.max_pool(2)])
    with pytest.raises(InvalidSpecError):
        nn.spec_from_layers(4, [nn.regression(), nn.fully_connected(1)])


def test_spec_dict_round_trip():
    spec = build_rcnn_svr_spec()
    assert nn.NetworkSpec.from_dict(spec.to_dict()) == spec


# ---------------------------------------------------------------- forward

def test_rcnn_forward_batch_50():
    spec = build_rcnn_spec()
    x = Tensor4(Shape4(8, 1, 1, 50), np.random.default_rng(0).normal(size=400))
    out, _ = nn.forward(spec, nn.init_network(spec), x)
    assert out.shape == Shape4(1, 1, 1, 50)


def test_forward_shape_mismatch():
    spec = build_rcnn_spec()
    with pytest.raises(ShapeMismatchError):
        nn.forward(spec, nn.init_network(spec), Tensor4(Shape4(7, 1, 1, 2), np.zeros(14)))


def test_relu_negative_input():
    spec = nn.spec_from_layers(4, [nn.relu()], depth=2)
    x = Tensor4(Shape4(4, 1, 2, 3), -np.arange(1, 25, dtype=float))
    out, _ = nn.forward(spec, nn.init_network(spec), x)
    assert not out.data.any()


def test_norm_single_channel_ones():
    spec = nn.spec_from_layers(3, [nn.cross_channel_norm(5, 2.0, 1e-4, 0.75)])
    out, _ = nn.forward(spec, nn.init_network(spec), Tensor4(Shape4(3, 1, 1, 2), np.ones(6)))
    np.testing.assert_allclose(out.data, 1 / (2 + 1e-4) ** 0.75, rtol=0, atol=1e-15)


def test_norm_across_channels_by_hand():
    # three channels, window 3: channel 1 sees all of them, channel 0 sees 0 and 1
    layer = nn.cross_channel_norm(3, k=1.0, alpha=0.5, beta=1.0)
    spec = nn.spec_from_layers(1, [layer], depth=3)
    x = np.array([1.0, 2.0, 3.0])
    out, _ = nn.forward(spec, nn.init_network(spec), Tensor4(Shape4(1, 1, 3, 1), x))
    expected = [1 / (1 + 0.5 * 5), 2 / (1 + 0.5 * 14), 3 / (1 + 0.5 * 13)]
    np.testing.assert_allclose(out.data, expected, rtol=1e-15)


def test_dropout_infer_identity_and_train_scaling():
    spec = nn.spec_from_layers(6, [nn.dropout(0.5)], depth=2)
    x = Tensor4(Shape4(6, 1, 2, 4), np.random.default_rng(1).normal(size=48))
    out, _ = nn.forward(spec, nn.init_network(spec), x, mode=nn.Mode.INFER)
    assert out == x
    out, _ = nn.forward(spec, nn.init_network(spec), x, mode=nn.Mode.TRAIN, seed=5)
    kept = out.data != 0
    np.testing.assert_allclose(out.data[kept], 2 * x.data[kept])
    again, _ = nn.forward(spec, nn.init_network(spec), x, mode=nn.Mode.TRAIN, seed=5)
    assert again == out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_forward_shapes_and_layer_properties(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng)
    params = nn.init_network(spec, seed)
    length, height, depth = spec.input_shape
    x = rng.normal(size=(2, depth, height, length))
    _, cache = nn.forward_array(spec, params, x, mode=nn.Mode.TRAIN, seed=seed)
    outs = cache.inputs[1:] + [nn.forward_array(spec, params, x, mode=nn.Mode.TRAIN, seed=seed)[0]]
    for i, (layer, inp, out) in enumerate(zip(spec.layers, cache.inputs, outs)):
        l, h, d = spec.shapes[i + 1]
        assert out.shape == (2, d, h, l)
        if layer.kind == nn.LayerKind.RELU:
            assert (out >= 0).all()
        if layer.kind == nn.LayerKind.MAX_POOL:
            usable = inp[..., : l * 2].reshape(2, d, h, l, 2)
            assert (out[..., None] == usable).any(axis=-1).all()


# ---------------------------------------------------------------- backward

def test_fc_gradient_by_hand():
    spec = nn.spec_from_layers(1, [nn.fully_connected(1), nn.regression()])
    params = nn.NetworkParams([np.array([[1.0]]), None], [np.array([0.0]), None])
    out, cache = nn.forward_array(spec, params, np.ones((1, 1, 1, 1)), mode=nn.Mode.TRAIN)
    loss, d = nn.mse_loss(out, [0.0])
    grads = nn.backward(spec, params, cache, d)
    assert loss == 1.0
    assert grads.weights[0][0, 0] == 2.0 and grads.biases[0][0] == 2.0


def test_zero_residual_zero_gradient():
    spec = build_rcnn_spec()
    params = nn.init_network(spec, 2)
    x = np.random.default_rng(2).normal(size=(5, 1, 1, 8))
    out, cache = nn.forward_array(spec, params, x, mode=nn.Mode.TRAIN)
    _, d = nn.mse_loss(out, out.reshape(5, -1))
    grads = nn.backward(spec, params, cache, d)
    assert all(not g.any() for _, _, g in grads.arrays())


def test_stale_cache():
    spec = build_rcnn_spec()
    params = nn.init_network(spec)
    x = np.zeros((2, 1, 1, 8))
    out, cache = nn.forward_array(spec, params, x, stop_after=3)
    with pytest.raises(StaleCacheError):
        nn.backward(spec, params, cache, np.zeros((2, 1)))
    out, cache = nn.forward_array(spec, params, x)
    other = nn.init_network(build_rcnn_svr_spec(), 0)
    with pytest.raises(StaleCacheError):
        nn.backward(spec, other, cache, np.zeros((2, 1)))
    with pytest.raises(StaleCacheError):
        nn.backward(spec, params, cache, np.zeros((3, 1)))


@pytest.mark.parametrize("spec_builder", [build_rcnn_spec, build_rcnn_svr_spec])
def test_gradients_canonical_architectures(spec_builder):
    assert gradient_check(spec_builder(), seed=11, batch=2) < 1e-4


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_gradients_random_specs(seed):
    spec = random_spec(np.random.default_rng(seed))
    assert gradient_check(spec, seed) < 1e-4


# ---------------------------------------------------------------- training

def _toy_data(n=12, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1, 1, 4))
    y = x[:, 0, 0, :] @ np.array([0.5, -1.0, 0.3, 0.2]) + rng.normal(scale=0.1, size=n)
    return x, y


def test_train_infinite_target_stops_after_one_epoch():
    spec = nn.spec_from_layers(4, [nn.fully_connected(1), nn.regression()])
    x, y = _toy_data()
    _, report = nn.train(spec, nn.init_network(spec), x, y,
                         nn.TrainConfig(max_epochs=50, target_mse=math.inf))
    assert report.epochs_run == 1 == len(report.mse_per_epoch)
    assert report.stop_reason == nn.StopReason.TARGET_MSE_REACHED


def test_train_max_epochs():
    spec = nn.spec_from_layers(4, [nn.fully_connected(1), nn.regression()])
    x, y = _toy_data()
    _, report = nn.train(spec, nn.init_network(spec), x, y, nn.TrainConfig(max_epochs=5))
    assert report.epochs_run == 5 == len(report.mse_per_epoch)
    assert report.stop_reason == nn.StopReason.MAX_EPOCHS_REACHED
    assert min(report.mse_per_epoch) >= 0


def test_train_does_not_mutate_and_is_deterministic():
    spec = build_rcnn_svr_spec()
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(15, 1, 1, 8)), rng.normal(size=15)
    params = nn.init_network(spec, 3)
    before = params.copy()
    cfg = nn.TrainConfig(max_epochs=4, seed=3)
    p1, r1 = nn.train(spec, params, x, y, cfg)
    p2, r2 = nn.train(spec, params, x, y, cfg)
    assert _same_params(params, before)
    assert _same_params(p1, p2)
    assert r1.mse_per_epoch == r2.mse_per_epoch and r1.stop_reason == r2.stop_reason


def test_train_empty():
    spec = nn.spec_from_layers(4, [nn.fully_connected(1), nn.regression()])
    with pytest.raises(EmptyDatasetError):
        nn.train(spec, nn.init_network(spec), np.zeros((0, 1, 1, 4)), [])


def test_train_config_validation():
    with pytest.raises(ValueError):
        nn.TrainConfig(target_mse=-1)
    with pytest.raises(ValueError):
        nn.TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        nn.TrainConfig(momentum=1.0)


# Observed curve of the pinned run: RCNN on the synthetic 62-month data,
# seed 7, first 50 months, default optimizer settings.
FROZEN_CURVE = {
    1: 0.9682095098973497,
    2: 0.6563776757314237,
    3: 0.40456724307562086,
    10: 0.08693439906481461,
    100: 0.03245414911929521,
    500: 0.013999619468217483,
}


def test_frozen_rcnn_curve():
    train, _ = split(generate_synthetic(62, seed=7, noise_sd=0.05), SplitSpec(50, 12))
    report = fit_pipeline("rcnn", train, nn.TrainConfig(seed=7)).train_report
    assert report.epochs_run == 500
    for epoch, value in FROZEN_CURVE.items():
        assert report.mse_per_epoch[epoch - 1] == pytest.approx(value, rel=1e-9)
    assert report.mse_per_epoch[-1] <= 0.1 * report.mse_per_epoch[0]


# ---------------------------------------------------------------- extraction

def test_extract_dropout_layer_single_sample():
    spec = build_rcnn_svr_spec()
    feats = nn.extract_features(spec, nn.init_network(spec), np.ones((1, 1, 1, 8)), 8)
    assert spec.layers[8].kind == nn.LayerKind.DROPOUT
    assert feats.shape == (1, 50)


def test_extract_conv1():
    spec = build_rcnn_svr_spec()
    feats = nn.extract_features(spec, nn.init_network(spec), np.ones((1, 1, 1, 8)), 0)
    assert feats.shape == (1, 160)


def test_extract_final_equals_predict():
    spec = build_rcnn_spec()
    params = nn.init_network(spec, 4)
    x = np.random.default_rng(4).normal(size=(6, 1, 1, 8))
    np.testing.assert_array_equal(nn.extract_features(spec, params, x, len(spec) - 1),
                                  nn.predict(spec, params, x))


def test_extract_out_of_range():
    spec = build_rcnn_spec()
    for bad in (-1, len(spec)):
        with pytest.raises(LayerOutOfRangeError):
            nn.extract_features(spec, nn.init_network(spec), np.zeros((1, 1, 1, 8)), bad)
