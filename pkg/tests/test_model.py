import math

import numpy as np
import pytest

from imlp.buffer import FeatureBuffer
from imlp.errors import LabelError, ShapeError
from imlp.model import (
    ImlpConfig,
    cross_entropy,
    flops_per_batch,
    forward,
    init_params,
    loss_and_backward,
    penultimate_features,
    predict,
)

from conftest import full_model_grad_check, plain_mlp


def filled_buffer(cfg, n, seed=0):
    rng = np.random.default_rng(seed)
    buf = cfg.new_buffer()
    for _ in range(n):
        buf.push(rng.normal(size=cfg.d_h))
    return buf


def test_param_shapes(small_config):
    p = init_params(small_config, 0)
    for name, shape in small_config.param_shapes().items():
        assert getattr(p, name).shape == shape
    assert p.W_1.shape == (4 + 6, 10)


def test_init_deterministic_and_seed_sensitive(small_config):
    assert init_params(small_config, 7).equal(init_params(small_config, 7))
    assert not init_params(small_config, 7).equal(init_params(small_config, 8))


def test_init_biases_zero(small_config):
    p = init_params(small_config, 3)
    assert not p.b_1.any() and not p.b_2.any() and not p.b_c.any()


def test_init_scale_matches_fan_in_target():
    cfg = ImlpConfig(d_in=60, n_classes=2, d_h=40, d_ff=100)
    W1 = init_params(cfg, 0).W_1
    assert W1.size >= 10_000
    target = math.sqrt(2.0 / W1.shape[0])  # uniform(-b, b) with b = sqrt(6/fan_in)
    assert abs(W1.std() - target) / target < 0.2


def test_single_entry_buffer_gives_unit_alpha(small_config):
    p = init_params(small_config, 0)
    buf = filled_buffer(small_config, 1)
    x = np.random.default_rng(1).normal(size=(3, 4))
    tr = forward(p, x, buf)
    np.testing.assert_array_equal(tr.alpha, np.ones((3, 1, 1)))
    expected = buf.entries[0] @ p.W_k
    for row in tr.context:
        np.testing.assert_allclose(row, expected, rtol=1e-12)


def test_attention_disabled_equals_plain_mlp():
    cfg = ImlpConfig(d_in=4, n_classes=3, d_h=6, d_ff=10, window=3, attention_enabled=False)
    p = init_params(cfg, 2)
    x = np.random.default_rng(4).normal(size=(5, 4))
    tr = forward(p, x, filled_buffer(cfg, 3))
    h, o, probs = plain_mlp(p, x)
    np.testing.assert_allclose(tr.h, h, rtol=1e-13)
    np.testing.assert_allclose(tr.logits, o, rtol=1e-13)
    np.testing.assert_allclose(tr.probs, probs, rtol=1e-13)
    assert tr.alpha is None and not tr.context.any()


def test_empty_buffer_forward_bitwise_equals_disabled_gate(small_config):
    p = init_params(small_config, 5)
    off = ImlpConfig(**{**small_config.to_dict(), "attention_enabled": False})
    p_off = p.copy()
    p_off.config = off
    x = np.random.default_rng(0).normal(size=(4, 4))
    a = forward(p, x, small_config.new_buffer())
    b = forward(p_off, x, None)
    np.testing.assert_array_equal(a.probs, b.probs)
    np.testing.assert_array_equal(a.h, b.h)
    y = np.array([0, 1, 2, 1])
    _, ga = loss_and_backward(a, p, y)
    _, gb = loss_and_backward(b, p_off, y)
    for name in ("W_1", "b_1", "W_2", "b_2", "W_c", "b_c"):
        np.testing.assert_array_equal(getattr(ga, name), getattr(gb, name))
    assert not ga.W_q.any() and not ga.W_k.any()


def test_context_is_convex_combination_of_projected_keys(small_config):
    p = init_params(small_config, 1)
    buf = filled_buffer(small_config, 3, seed=9)
    x = np.random.default_rng(2).normal(size=(2, 4))
    tr = forward(p, x, buf)
    keys = np.stack(buf.entries) @ p.W_k
    for b in range(2):
        w = tr.alpha[b, :, 0]
        assert abs(w.sum() - 1) < 1e-6 and np.all(w >= 0)
        np.testing.assert_allclose(tr.context[b], w @ keys, rtol=1e-12, atol=1e-14)
        # recompute weights from scratch
        s = keys @ (x[b] @ p.W_q) / math.sqrt(small_config.d_h)
        np.testing.assert_allclose(w, np.exp(s - s.max()) / np.exp(s - s.max()).sum(), rtol=1e-12)


def test_buffer_dim_mismatch(small_config):
    p = init_params(small_config, 0)
    with pytest.raises(ShapeError):
        forward(p, np.zeros((1, 4)), FeatureBuffer(3, 7))
    with pytest.raises(ShapeError):
        forward(p, np.zeros((1, 5)), None)


def test_loss_examples():
    assert cross_entropy(np.array([[0.0, 0.0, 0.0, 0.0]]), np.array([2])) == pytest.approx(math.log(4), abs=1e-12)
    assert cross_entropy(np.array([[800.0, 0.0]]), np.array([0])) == pytest.approx(0.0, abs=1e-300)


def test_label_out_of_range(small_config):
    p = init_params(small_config, 0)
    tr = forward(p, np.zeros((2, 4)), None)
    with pytest.raises(LabelError):
        loss_and_backward(tr, p, [0, 3])
    with pytest.raises(LabelError):
        loss_and_backward(tr, p, [-1, 0])


@pytest.mark.parametrize("attention,fc2_bias", [(True, True), (True, False), (False, True)])
def test_full_model_gradient_check(attention, fc2_bias):
    worst = full_model_grad_check(seed=0, attention=attention, fc2_bias=fc2_bias)
    assert max(worst.values()) < 1e-4, worst


def test_gradient_shapes_mirror_params(small_config):
    p = init_params(small_config, 0)
    tr = forward(p, np.ones((2, 4)), filled_buffer(small_config, 2))
    _, g = loss_and_backward(tr, p, [0, 1])
    for name, arr in p.items():
        assert getattr(g, name).shape == arr.shape


def test_predict_argmax_and_ties():
    cfg = ImlpConfig(d_in=2, n_classes=2, d_h=2, d_ff=2, attention_enabled=False)
    p = init_params(cfg, 0)
    p.W_c[:] = 0.0  # logits all equal: tie
    cls, probs = predict(p, np.ones((3, 2)), None)
    assert cls.tolist() == [0, 0, 0]
    np.testing.assert_allclose(probs, 0.5)


def test_predict_agrees_with_forward(small_config):
    p = init_params(small_config, 4)
    buf = filled_buffer(small_config, 2)
    x = np.random.default_rng(8).normal(size=(100, 4))
    cls, _ = predict(p, x, buf)
    probs = forward(p, x, buf).probs
    expected = [max(range(3), key=lambda j: (probs[i, j], -j)) for i in range(100)]
    assert cls.tolist() == expected


def test_penultimate_features_snapshot(small_config):
    p = init_params(small_config, 0)
    x = np.random.default_rng(1).normal(size=(7, 4))
    h = penultimate_features(p, x, None)
    assert h.shape == (7, small_config.d_h)
    np.testing.assert_array_equal(h, forward(p, x, None).h)
    before = h.copy()
    p.W_2 += 1.0
    np.testing.assert_array_equal(h, before)


def test_attention_argmax_stable_under_positive_scaling(small_config):
    p = init_params(small_config, 0)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(1, 4))
    q = (x @ p.W_q)[0]
    # one key strongly aligned with the query, the rest orthogonal-ish noise
    direction = np.linalg.solve(p.W_k.T, q)
    entries = [0.1 * rng.normal(size=6) for _ in range(2)] + [direction]
    for k in (0.5, 1.0, 3.0):
        buf = FeatureBuffer.from_entries(3, 6, [k * e for e in entries])
        alpha = forward(p, x, buf).alpha[0, :, 0]
        assert int(np.argmax(alpha)) == 2


def test_flops_hand_summation():
    cfg = ImlpConfig(d_in=10, n_classes=2, d_h=256, d_ff=512)
    # 327680 query + 41943040 key + 327680 scores/aggregation + 34275328 feed-forward
    assert flops_per_batch(cfg, 64, 5) == 76873728
    assert flops_per_batch(cfg, 64, 5, training=True) == 3 * 76873728


def test_flops_window_zero_and_linearity():
    cfg = ImlpConfig(d_in=10, n_classes=2, d_h=256, d_ff=512)
    query = 2 * 64 * 10 * 256
    mlp = 2 * 64 * (266 * 512 + 512 * 256 + 256 * 2)
    assert flops_per_batch(cfg, 64, 0) == query + mlp
    for b in (1, 7, 64):
        assert flops_per_batch(cfg, 2 * b, 3) == 2 * flops_per_batch(cfg, b, 3)
    off = ImlpConfig(d_in=10, n_classes=2, d_h=256, d_ff=512, attention_enabled=False)
    assert flops_per_batch(off, 64, 8) == mlp


def test_no_gradient_leak_into_buffer(small_config):
    from imlp.trainer import OptimizerState, TrainConfig, TrainData, train_segment

    p = init_params(small_config, 0)
    buf = filled_buffer(small_config, 3)
    before = [e.tobytes() for e in buf.entries]
    rng = np.random.default_rng(0)
    data = TrainData(rng.normal(size=(40, 4)), rng.integers(0, 3, 40))
    tc = TrainConfig(epochs_per_segment=3, batch_size=8)
    train_segment(p, OptimizerState.fresh(p, tc), buf, data, tc)
    assert [e.tobytes() for e in buf.entries] == before
