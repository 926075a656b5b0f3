import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedts.errors import CorruptPayloadError, InvalidArgumentError, NumericOverflowError
from fedts.model import (
    AdamState, ModelConfig, TrainConfig, adam_step, backward, clip_by_global_norm, deserialize,
    forward, init_params, loss, loss_and_gradients, manifest, parameter_count, parameter_shapes,
    payload_size, round_trip_f32, serialize, train_local, zeros_like,
)


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def scalar_forward(params, x):
    """Plain-loop reference: two LSTM layers (gates i, f, g, o), ReLU outputs, dense, softmax."""

    def layer(seq, W_x, W_h, b):
        H = len(W_h)
        h, c = [0.0] * H, [0.0] * H
        out = []
        for xt in seq:
            z = [
                b[j] + sum(xt[d] * W_x[d][j] for d in range(len(xt))) + sum(h[k] * W_h[k][j] for k in range(H))
                for j in range(4 * H)
            ]
            new_h, new_c = [], []
            for u in range(H):
                i, f = _sig(z[u]), _sig(z[H + u])
                g, o = math.tanh(z[2 * H + u]), _sig(z[3 * H + u])
                cu = f * c[u] + i * g
                new_c.append(cu)
                new_h.append(o * math.tanh(cu))
            h, c = new_h, new_c
            out.append([max(v, 0.0) for v in h])
        return out

    p = {k: v.tolist() for k, v in params.items()}
    y1 = layer(x.tolist(), p["lstm1.W_x"], p["lstm1.W_h"], p["lstm1.b"])
    y2 = layer(y1, p["lstm2.W_x"], p["lstm2.W_h"], p["lstm2.b"])
    last = y2[-1]
    C = len(p["dense.b"])
    logits = [p["dense.b"][k] + sum(last[j] * p["dense.W"][j][k] for j in range(len(last))) for k in range(C)]
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    return [v / sum(e) for v in e]


def _perturbed(cfg, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    return {k: v + rng.normal(scale=scale, size=v.shape) for k, v in init_params(cfg, seed).items()}


class TestForward:
    def test_rows_sum_to_one(self, rng):
        cfg = ModelConfig(3, 5, 4, 6, ts=4)
        probs = forward(init_params(cfg, 0), rng.normal(size=(10, 4, 3)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_zero_params_uniform(self, rng):
        cfg = ModelConfig(3, 4, 4, 5, ts=3)
        probs = forward(zeros_like(init_params(cfg, 0)), rng.normal(size=(4, 3, 3)))
        np.testing.assert_allclose(probs, 0.2, atol=1e-15)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_scalar_reference(self, seed):
        cfg = ModelConfig(3, 4, 4, 3, ts=2)
        params = _perturbed(cfg, seed)
        x = np.random.default_rng(100 + seed).normal(size=(4, 2, 3))
        probs = forward(params, x)
        for b in range(4):
            np.testing.assert_allclose(probs[b], scalar_forward(params, x[b]), atol=1e-10)

    def test_wrong_feature_count(self, rng):
        cfg = ModelConfig(3, 4, 4, 3, ts=2)
        with pytest.raises(InvalidArgumentError):
            forward(init_params(cfg, 0), rng.normal(size=(2, 2, 4)))

    def test_overflow_names_layer(self):
        cfg = ModelConfig(2, 3, 3, 2, ts=2)
        params = init_params(cfg, 0)
        params["dense.W"] = np.full_like(params["dense.W"], np.inf)
        with pytest.raises(NumericOverflowError) as exc:
            forward(params, np.ones((1, 2, 2)))
        assert exc.value.layer == "dense"


class TestLoss:
    def test_perfect(self):
        assert loss(np.eye(3), [0, 1, 2]) == pytest.approx(0.0, abs=1e-9)

    def test_uniform(self):
        assert loss(np.full((4, 5), 0.2), [0, 1, 2, 3]) == pytest.approx(math.log(5), abs=1e-9)

    def test_hand_value(self):
        assert loss([[0.7, 0.2, 0.1]], [0]) == pytest.approx(0.356675, abs=1e-6)

    def test_floor(self):
        assert loss([[1.0, 0.0]], [1]) == pytest.approx(-math.log(1e-12))


def numeric_grad(params, x, y, name, eps=1e-5):
    g = np.zeros_like(params[name])
    for idx in np.ndindex(g.shape):
        old = params[name][idx]
        params[name][idx] = old + eps
        up = loss(forward(params, x), y)
        params[name][idx] = old - eps
        down = loss(forward(params, x), y)
        params[name][idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def max_rel_error(analytic, numeric):
    return max(
        float(np.max(np.abs(analytic[k] - numeric[k]) / np.maximum(np.maximum(np.abs(analytic[k]), np.abs(numeric[k])), 1e-8)))
        for k in analytic
    )


class TestGradients:
    @pytest.mark.parametrize("seed", range(4))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        cfg = ModelConfig(*(int(v) for v in rng.integers(1, 4, size=3)), int(rng.integers(2, 4)), ts=int(rng.integers(1, 4)))
        params = _perturbed(cfg, seed)
        x = rng.normal(size=(5, cfg.ts, cfg.input_dim))
        y = rng.integers(0, cfg.num_classes, size=5)
        grads = backward(params, x, y)
        numeric = {k: numeric_grad(params, x, y, k) for k in params}
        assert max_rel_error(grads, numeric) < 1e-4

    def test_saturated_correct_prediction(self):
        cfg = ModelConfig(2, 3, 3, 2, ts=2)
        params = init_params(cfg, 0)
        params["dense.b"] = np.array([60.0, -60.0])
        value, grads = loss_and_gradients(params, np.ones((1, 2, 2)), [0])
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        assert value < 1e-9 and norm < 1e-6

    def test_batch_of_copies(self, rng):
        cfg = ModelConfig(3, 4, 3, 3, ts=3)
        params = _perturbed(cfg, 1)
        x = rng.normal(size=(1, 3, 3))
        single = backward(params, x, [2])
        many = backward(params, np.repeat(x, 7, axis=0), [2] * 7)
        for k in single:
            np.testing.assert_allclose(many[k], single[k], atol=1e-10)


class TestAdam:
    def test_first_step_is_signed_lr(self, rng):
        p = {"w": rng.normal(size=(3, 4))}
        g = {"w": rng.normal(size=(3, 4))}
        new, _ = adam_step(p, g, AdamState.zeros(p), 1)
        np.testing.assert_allclose(new["w"] - p["w"], -0.001 * np.sign(g["w"]), atol=1e-6)

    def test_zero_gradient(self, rng):
        p = {"w": rng.normal(size=5)}
        state = AdamState({"w": np.ones(5)}, {"w": np.ones(5)}, 3)
        new, st2 = adam_step(p, {"w": np.zeros(5)}, state, 4)
        # moments decay, and the update is the decayed first moment, not zero
        np.testing.assert_allclose(st2.m["w"], 0.9)
        np.testing.assert_allclose(st2.v["w"], 0.999)
        zero_state = AdamState.zeros(p)
        new0, _ = adam_step(p, {"w": np.zeros(5)}, zero_state, 1)
        np.testing.assert_array_equal(new0["w"], p["w"])

    def test_deterministic(self, rng):
        p = {"w": rng.normal(size=4)}
        g = {"w": rng.normal(size=4)}
        a, _ = adam_step(p, g, AdamState.zeros(p), 1)
        b, _ = adam_step(p, g, AdamState.zeros(p), 1)
        assert a["w"].tobytes() == b["w"].tobytes()

    def test_bad_step_index(self):
        p = {"w": np.zeros(2)}
        with pytest.raises(InvalidArgumentError):
            adam_step(p, p, AdamState.zeros(p), 0)

    def test_clip(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        c = clip_by_global_norm(g, 1.0)
        assert c["a"][0] == pytest.approx(0.6) and c["b"][0] == pytest.approx(0.8)
        assert clip_by_global_norm(g, 10.0) is g


def _separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 3, size=n)
    x = rng.normal(scale=0.3, size=(n, 4, 2))
    x[:, :, 0] += y[:, None] - 1.0
    return SimpleNamespace(values=x, labels=y)


class TestTrainLocal:
    def test_loss_decreases(self):
        data = _separable()
        cfg = ModelConfig(2, 6, 4, 3, ts=4)
        _, log = train_local(init_params(cfg, 0), data, TrainConfig(batch_size=32, epochs=10, learning_rate=0.01))
        assert log.epoch_losses[-1] < log.epoch_losses[0]
        assert log.steps == 10 * math.ceil(200 / 32)

    def test_zero_epochs(self):
        cfg = ModelConfig(2, 3, 3, 3, ts=4)
        params = init_params(cfg, 0)
        out, log = train_local(params, _separable(), TrainConfig(epochs=0))
        for k in params:
            assert out[k].tobytes() == params[k].tobytes()
        assert log.epoch_losses == []

    def test_same_seed_same_result(self):
        cfg = ModelConfig(2, 4, 3, 3, ts=4)
        tc = TrainConfig(batch_size=16, epochs=2, seed=9)
        a, _ = train_local(init_params(cfg, 0), _separable(), tc)
        b, _ = train_local(init_params(cfg, 0), _separable(), tc)
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_input_not_modified(self):
        cfg = ModelConfig(2, 4, 3, 3, ts=4)
        params = init_params(cfg, 0)
        before = {k: v.copy() for k, v in params.items()}
        train_local(params, _separable(), TrainConfig(batch_size=64, epochs=1))
        assert all(np.array_equal(before[k], params[k]) for k in params)


class TestInit:
    def test_shapes_and_biases(self):
        cfg = ModelConfig(5, 4, 3, 2)
        p = init_params(cfg, 1)
        assert {k: v.shape for k, v in p.items()} == parameter_shapes(cfg)
        np.testing.assert_array_equal(p["lstm1.b"], np.r_[np.zeros(4), np.ones(4), np.zeros(8)])
        np.testing.assert_array_equal(p["dense.b"], 0.0)
        assert np.abs(p["lstm1.W_x"]).max() <= 1 / math.sqrt(5)

    def test_count(self):
        cfg = ModelConfig(52, 128, 64, 21)
        expected = 4 * 128 * (52 + 128 + 1) + 4 * 64 * (128 + 64 + 1) + 64 * 21 + 21
        assert parameter_count(cfg) == expected


class TestSerialization:
    def test_round_trip(self):
        cfg = ModelConfig(3, 4, 2, 3)
        p = round_trip_f32(init_params(cfg, 0))
        back = deserialize(serialize(p), cfg)
        assert all(back[k].tobytes() == p[k].tobytes() for k in p)

    def test_payload_delta(self):
        small, big = ModelConfig(52, 128, 64, 21), ModelConfig(260, 128, 64, 21)
        assert payload_size(big) - payload_size(small) == 4 * (260 - 52) * (4 * 128) == 425_984
        assert len(serialize(init_params(small, 0))) == payload_size(small)

    def test_truncated(self):
        cfg = ModelConfig(3, 4, 2, 3)
        payload = serialize(init_params(cfg, 0))
        with pytest.raises(CorruptPayloadError):
            deserialize(payload[:-4], cfg)
        with pytest.raises(CorruptPayloadError):
            deserialize(payload[:10], cfg)

    def test_wrong_config(self):
        payload = serialize(init_params(ModelConfig(3, 4, 2, 3), 0))
        with pytest.raises(CorruptPayloadError):
            deserialize(payload, ModelConfig(3, 4, 2, 4))

    def test_bad_magic(self):
        cfg = ModelConfig(3, 4, 2, 3)
        payload = bytearray(serialize(init_params(cfg, 0)))
        payload[0:4] = b"XXXX"
        with pytest.raises(CorruptPayloadError):
            deserialize(bytes(payload), cfg)

    def test_manifest(self):
        cfg = ModelConfig(3, 4, 2, 3)
        m = manifest(init_params(cfg, 0))
        assert [e["name"] for e in m] == list(parameter_shapes(cfg))
        assert all(len(e["sha256"]) == 64 for e in m)


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(1, 6), h1=st.integers(1, 6), h2=st.integers(1, 6), c=st.integers(2, 5),
    seed=st.integers(0, 2**32 - 1),
)
def test_serialize_round_trip_property(n, h1, h2, c, seed):
    cfg = ModelConfig(n, h1, h2, c)
    p = round_trip_f32(_perturbed(cfg, seed, scale=3.0))
    payload = serialize(p, cfg)
    assert len(payload) == payload_size(cfg)
    back = deserialize(payload, cfg)
    assert all(back[k].tobytes() == p[k].tobytes() for k in p)
