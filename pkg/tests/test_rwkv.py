"""Recurrent encoder: wkv recurrence against the direct quadratic sum,
the convolution front end against patch loops, and stream-vs-batch."""

import numpy as np
import pytest

import oracles
from vadkit import tensor as tz
from vadkit.config import EncoderConfig
from vadkit.encoders import rwkv
from vadkit.encoders.common import materialize
from vadkit.errors import ContractError, ShapeError
from vadkit.tensor import Tensor


def tiny_encoder_cfg(**overrides) -> EncoderConfig:
    cfg = EncoderConfig(type="rwkv", num_blocks=2, width=12, hidden_dim=20, conv_channels=6, dropout=0.1)
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


# ---------------------------------------------------------------------------
# wkv recurrence
# ---------------------------------------------------------------------------


def test_wkv_matches_direct_sum():
    rng = np.random.default_rng(0)
    for _ in range(40):
        n_frames = int(rng.integers(1, 12))
        dim = int(rng.integers(1, 6))
        k = Tensor(rng.uniform(-2, 2, (n_frames, dim)))
        v = Tensor(rng.uniform(-2, 2, (n_frames, dim)))
        decay = Tensor(rng.uniform(-1, 1, dim))
        bonus = Tensor(rng.uniform(-1, 1, dim))
        got = rwkv.wkv_sequence(k, v, decay, bonus).data
        want = oracles.wkv_direct(k.data, v.data, decay.data, bonus.data)
        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-10)


def test_wkv_single_step_is_exactly_v():
    rng = np.random.default_rng(1)
    k = Tensor(rng.standard_normal((1, 5)))
    v = Tensor(rng.standard_normal((1, 5)))
    out = rwkv.wkv_sequence(k, v, Tensor(np.zeros(5)), Tensor(np.zeros(5))).data
    np.testing.assert_array_equal(out, v.data)


def test_wkv_running_max_survives_extreme_keys():
    # exp(800) overflows float64; the shifted recurrence never takes it
    k = Tensor(np.full((6, 3), 800.0))
    v = Tensor(np.ones((6, 3)))
    out = rwkv.wkv_sequence(k, v, Tensor(np.zeros(3)), Tensor(np.zeros(3))).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, 1.0, rtol=1e-6)


def test_wkv_shape_check():
    with pytest.raises(ShapeError):
        rwkv.wkv_sequence(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 3))), Tensor(np.zeros(2)), Tensor(np.zeros(2)))


def test_wkv_gradients():
    rng = np.random.default_rng(2)
    k = Tensor(rng.uniform(-1, 1, (5, 3)), requires_grad=True)
    v = Tensor(rng.uniform(-1, 1, (5, 3)), requires_grad=True)
    decay = Tensor(rng.uniform(-0.5, 0.5, 3), requires_grad=True)
    bonus = Tensor(rng.uniform(-0.5, 0.5, 3), requires_grad=True)

    def f():
        out = rwkv.wkv_sequence(k, v, decay, bonus)
        return tz.sum_(tz.mul(out, out))

    assert tz.finite_difference_check(f, [k, v, decay, bonus]) < 1e-6


# ---------------------------------------------------------------------------
# convolution front end
# ---------------------------------------------------------------------------


def conv_oracle(feats, w, b, proj_w, proj_b):
    n_time = feats.shape[0]
    t_out = (n_time - 3) // 2 + 1
    rows = []
    for ti in range(t_out):
        per_freq = []
        for fi in range(rwkv.CONV_FREQ_OUT):
            patch = feats[2 * ti : 2 * ti + 3, 2 * fi : 2 * fi + 3].reshape(-1)
            per_freq.append(np.maximum(patch.astype(np.float64) @ w + b, 0))
        rows.append(np.concatenate(per_freq) @ proj_w + proj_b)
    return np.stack(rows)


def test_conv_subsample_matches_patch_loop():
    cfg = tiny_encoder_cfg()
    params = materialize(rwkv.param_specs(cfg), seed=0)
    rng = np.random.default_rng(3)
    feats = rng.standard_normal((9, 80)).astype(np.float32)
    with tz.no_grad():
        got = rwkv.conv_subsample(params, Tensor(feats)).data
    want = conv_oracle(
        feats,
        params["encoder.conv.w"].data.astype(np.float64),
        params["encoder.conv.b"].data.astype(np.float64),
        params["encoder.conv_proj.w"].data.astype(np.float64),
        params["encoder.conv_proj.b"].data.astype(np.float64),
    )
    assert got.shape == (4, cfg.width)
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)


def test_conv_subsample_input_checks():
    cfg = tiny_encoder_cfg()
    params = materialize(rwkv.param_specs(cfg), seed=1)
    with pytest.raises(ShapeError):
        rwkv.conv_subsample(params, Tensor(np.zeros((5, 160), dtype=np.float32)))
    with pytest.raises(ContractError):
        rwkv.conv_subsample(params, Tensor(np.zeros((2, 80), dtype=np.float32)))


# ---------------------------------------------------------------------------
# full stack
# ---------------------------------------------------------------------------


def test_stream_matches_batch_forward():
    cfg = tiny_encoder_cfg()
    params = materialize(rwkv.param_specs(cfg), seed=2)
    rng = np.random.default_rng(4)
    feats = rng.standard_normal((17, 80)).astype(np.float32)
    with tz.no_grad():
        batch = rwkv.forward(params, Tensor(feats), cfg).data
    stream = rwkv.RwkvStream(params, cfg)
    got = []
    for frame in feats:
        got.extend(stream.feed(frame))
    got = np.stack(got)
    assert got.shape == batch.shape  # (17 - 3) // 2 + 1 hidden frames
    np.testing.assert_allclose(got, batch, atol=1e-5)


def test_batch_forward_is_prefix_consistent():
    cfg = tiny_encoder_cfg()
    params = materialize(rwkv.param_specs(cfg), seed=3)
    rng = np.random.default_rng(5)
    feats = rng.standard_normal((11, 80)).astype(np.float32)
    with tz.no_grad():
        full = rwkv.forward(params, Tensor(feats), cfg).data
        head = rwkv.forward(params, Tensor(feats[:5]), cfg).data
    np.testing.assert_allclose(head, full[: head.shape[0]], atol=1e-5)


def test_stream_reset():
    cfg = tiny_encoder_cfg()
    params = materialize(rwkv.param_specs(cfg), seed=4)
    rng = np.random.default_rng(6)
    feats = rng.standard_normal((7, 80)).astype(np.float32)
    stream = rwkv.RwkvStream(params, cfg)
    first = [h for frame in feats for h in stream.feed(frame)]
    stream.reset()
    second = [h for frame in feats for h in stream.feed(frame)]
    np.testing.assert_array_equal(np.stack(first), np.stack(second))


def test_training_dropout_needs_rng():
    cfg = tiny_encoder_cfg()
    params = materialize(rwkv.param_specs(cfg), seed=5)
    feats = Tensor(np.random.default_rng(7).standard_normal((5, 80)).astype(np.float32))
    with pytest.raises(ContractError):
        rwkv.forward(params, feats, cfg, training=True, rng=None)


def test_latency_is_zero():
    assert rwkv.latency_frames(tiny_encoder_cfg()) == 0


def test_block_gradients():
    cfg = tiny_encoder_cfg(num_blocks=1, width=6, hidden_dim=10)
    params = materialize(rwkv.param_specs(cfg), seed=6)
    x = Tensor(np.random.default_rng(8).standard_normal((4, 6)), requires_grad=True)
    block_params = [t for name, t in params.items() if ".block0." in name]

    def f():
        out = rwkv.block(params, 0, x, dropout_rate=0.0)
        return tz.mean_(tz.mul(out, out))

    assert tz.finite_difference_check(f, [x] + block_params, max_coords_per_tensor=6) < 1e-6
