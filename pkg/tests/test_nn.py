import math

import numpy as np
import pytest

from gazedqn import nn
from gazedqn.errors import ConfigError, DimensionError


def tiny_config(**overrides):
    base = dict(input_height=8, input_width=8, input_channels=3, conv_layers=2,
                kernel_size=3, stride=2, filters=3, hidden_units=6,
                output_units=3, output_activation="linear", dtype="float64")
    base.update(overrides)
    return nn.NetworkConfig(**base)


def finite_difference_grads(params, config, x, dout, step=1e-5):
    """Independent oracle: central differences over every parameter."""
    dout = np.asarray(dout, dtype=np.float64)

    def loss():
        out = nn.forward(params, config, x)
        return float(np.sum(np.atleast_2d(out) * dout))

    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss()
            flat[i] = orig - step
            down = loss()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def max_rel_error(a, b):
    num = np.abs(a - b)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float((num / den).max())


class TestConfig:
    def test_shape_chain_independent_calculator(self):
        # independent shape oracle: repeated ceil division
        config = nn.NetworkConfig(input_height=128, input_width=128)
        expected = []
        n = 128
        for _ in range(4):
            n = math.ceil(n / 2)
            expected.append((n, n))
        assert config.spatial_sizes() == expected == [(64, 64), (32, 32), (16, 16), (8, 8)]
        assert config.flat_size() == 8 * 8 * 32 == 2048

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigError):
            nn.NetworkConfig(input_height=0, input_width=8).validate()
        with pytest.raises(ConfigError):
            tiny_config(output_units=4).validate()
        with pytest.raises(ConfigError):
            tiny_config(output_activation="relu").validate()
        with pytest.raises(ConfigError):
            nn.glorot_init(nn.NetworkConfig(input_height=8, input_width=8, filters=0), 0)

    def test_odd_sizes_round_up(self):
        config = nn.NetworkConfig(input_height=5, input_width=7, conv_layers=2)
        assert config.spatial_sizes() == [(3, 4), (2, 2)]


class TestGlorotInit:
    def test_limit_closed_form(self):
        assert nn.glorot_limit(3, 3) == 1.0

    def test_within_limits_and_biases_zero(self):
        config = tiny_config()
        params = nn.glorot_init(config, 1)
        for name, shape in nn.parameter_shapes(config).items():
            assert params[name].shape == shape
            if name.endswith("_b"):
                assert np.all(params[name] == 0.0)
            else:
                fan_in, fan_out = nn._fans(name, shape)
                limit = nn.glorot_limit(fan_in, fan_out)
                assert np.all(np.abs(params[name]) <= limit)

    def test_deterministic_for_seed(self):
        config = tiny_config()
        a = nn.glorot_init(config, 7)
        b = nn.glorot_init(config, 7)
        c = nn.glorot_init(config, 8)
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert any(not np.array_equal(a[k], c[k]) for k in a)


def reference_forward(params, config, x):
    """Independent forward oracle: explicit loops, no im2col."""
    x = np.asarray(x, dtype=np.float64)
    k, s, f = config.kernel_size, config.stride, config.filters
    h = x
    for layer in range(config.conv_layers):
        hh, ww, cc = h.shape
        ho = math.ceil(hh / s)
        wo = math.ceil(ww / s)
        pad_h = max((ho - 1) * s + k - hh, 0)
        pad_w = max((wo - 1) * s + k - ww, 0)
        hp = np.pad(h, ((pad_h // 2, pad_h - pad_h // 2),
                        (pad_w // 2, pad_w - pad_w // 2), (0, 0)))
        w_arr = params[f"conv{layer}_w"]
        b_arr = params[f"conv{layer}_b"]
        out = np.zeros((ho, wo, f))
        for y in range(ho):
            for xx_ in range(wo):
                patch = hp[y * s:y * s + k, xx_ * s:xx_ * s + k, :]
                for ff in range(f):
                    out[y, xx_, ff] = np.sum(patch * w_arr[:, :, :, ff]) + b_arr[ff]
        h = np.where(out > 0, out, np.expm1(np.minimum(out, 0)))
    flat = h.reshape(-1)
    z1 = flat @ params["fc_w"] + params["fc_b"]
    a1 = np.where(z1 > 0, z1, np.expm1(np.minimum(z1, 0)))
    out = a1 @ params["out_w"] + params["out_b"]
    if config.output_activation == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-out))
    return out


class TestForward:
    def test_zero_network_outputs_zero(self):
        config = tiny_config()
        params = {k: np.zeros(v) for k, v in nn.parameter_shapes(config).items()}
        x = np.random.default_rng(0).random((8, 8, 3))
        assert np.array_equal(nn.forward(params, config, x), np.zeros(3))

    def test_elu_values(self):
        assert nn.elu(np.array([1.0]))[0] == 1.0
        assert nn.elu(np.array([0.0]))[0] == 0.0
        assert nn.elu(np.array([-1.0]))[0] == pytest.approx(math.exp(-1) - 1, abs=1e-12)

    @pytest.mark.parametrize("head", ["linear", "sigmoid"])
    def test_matches_loop_reference(self, head):
        config = tiny_config(output_activation=head,
                             output_units=3 if head == "linear" else 2)
        params = nn.glorot_init(config, 3)
        x = np.random.default_rng(4).random((8, 8, 3))
        got = nn.forward(params, config, x)
        want = reference_forward(params, config, x)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_output_length_equals_output_units(self):
        for units, act in ((3, "linear"), (2, "sigmoid")):
            config = tiny_config(output_units=units, output_activation=act)
            params = nn.glorot_init(config, 0)
            out = nn.forward(params, config, np.zeros((8, 8, 3)))
            assert out.shape == (units,)

    def test_sigmoid_head_strictly_in_unit_interval(self):
        config = tiny_config(output_units=2, output_activation="sigmoid")
        params = nn.glorot_init(config, 5)
        rng = np.random.default_rng(6)
        for _ in range(20):
            out = nn.forward(params, config, rng.random((8, 8, 3)))
            assert np.all(out > 0) and np.all(out < 1)

    def test_batch_matches_single(self):
        config = tiny_config()
        params = nn.glorot_init(config, 9)
        x = np.random.default_rng(10).random((4, 8, 8, 3))
        batched = nn.forward(params, config, x)
        singles = np.stack([nn.forward(params, config, xi) for xi in x])
        # BLAS may pick different kernels per batch size, so only near-exact
        assert np.allclose(batched, singles, rtol=1e-12, atol=1e-14)

    def test_shape_mismatch_raises(self):
        config = tiny_config()
        params = nn.glorot_init(config, 0)
        with pytest.raises(DimensionError):
            nn.forward(params, config, np.zeros((7, 8, 3)))

    def test_deterministic(self):
        config = tiny_config()
        params = nn.glorot_init(config, 2)
        x = np.random.default_rng(1).random((8, 8, 3))
        assert np.array_equal(nn.forward(params, config, x),
                              nn.forward(params, config, x))


class TestBackward:
    def test_zero_loss_grad_gives_zero_grads(self):
        config = tiny_config()
        params = nn.glorot_init(config, 0)
        _, cache = nn.forward(params, config, np.random.default_rng(0).random((8, 8, 3)),
                              return_cache=True)
        grads = nn.backward(params, config, cache, np.zeros(3))
        assert all(np.all(g == 0) for g in grads.values())

    def test_head_weight_grad_is_hidden_activation(self):
        # linear-head chain rule: with dL/dy_j = 1 for one output,
        # dL/d(out_w[:, j]) equals the hidden activation vector exactly
        config = tiny_config()
        params = nn.glorot_init(config, 11)
        x = np.random.default_rng(12).random((8, 8, 3))
        _, cache = nn.forward(params, config, x, return_cache=True)
        dout = np.zeros(3)
        dout[1] = 1.0
        grads = nn.backward(params, config, cache, dout)
        assert np.allclose(grads["out_w"][:, 1], cache["a1"][0], rtol=1e-12)
        assert np.all(grads["out_w"][:, 0] == 0)

    def test_requires_cache(self):
        config = tiny_config()
        params = nn.glorot_init(config, 0)
        with pytest.raises(DimensionError):
            nn.backward(params, config, {"not": "a cache"}, np.zeros(3))

    @pytest.mark.parametrize("seed,head", [(0, "linear"), (1, "sigmoid"), (2, "linear")])
    def test_gradcheck_against_finite_differences(self, seed, head):
        config = tiny_config(output_activation=head,
                             output_units=3 if head == "linear" else 2)
        assert nn.parameter_count(config) <= 2000
        params = nn.glorot_init(config, seed)
        rng = np.random.default_rng(seed + 100)
        x = rng.random((8, 8, 3))
        dout = rng.standard_normal(config.output_units)
        _, cache = nn.forward(params, config, x, return_cache=True)
        analytic = nn.backward(params, config, cache, dout)
        numeric = finite_difference_grads(params, config, x, dout)
        for name in analytic:
            assert max_rel_error(analytic[name], numeric[name]) < 1e-4, name


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        params = {"w": np.array([1.0, -2.0])}
        opt = nn.Adam(0.1)
        assert opt.step(params, {"w": np.zeros(2)})
        assert np.array_equal(params["w"], [1.0, -2.0])

    def test_first_step_magnitude_is_lr_times_sign(self):
        params = {"w": np.array([1.0, 1.0])}
        opt = nn.Adam(1e-3)
        opt.step(params, {"w": np.array([0.5, -3.0])})
        assert np.allclose(params["w"], [1.0 - 1e-3, 1.0 + 1e-3], atol=1e-9)

    def test_nonfinite_gradients_skip_step(self):
        params = {"w": np.array([1.0])}
        opt = nn.Adam(0.1)
        assert not opt.step(params, {"w": np.array([np.nan])})
        assert params["w"][0] == 1.0
        assert opt.t == 0

    def test_identical_runs_identical_trajectories(self):
        def run():
            config = tiny_config(dtype="float32")
            params = nn.glorot_init(config, 3)
            opt = nn.Adam(1e-3)
            rng = np.random.default_rng(5)
            for _ in range(5):
                x = rng.random((8, 8, 3)).astype(np.float32)
                _, cache = nn.forward(params, config, x, return_cache=True)
                grads = nn.backward(params, config, cache, np.ones(3, np.float32))
                opt.step(params, grads)
            return params

        a, b = run(), run()
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestCheckpoint:
    def test_roundtrip_exact(self, tmp_path):
        config = tiny_config(dtype="float32")
        params = nn.glorot_init(config, 42)
        path = tmp_path / "ckpt.npz"
        nn.save_checkpoint(path, params, config, seed=42)
        loaded, loaded_config, seed = nn.load_checkpoint(path)
        assert loaded_config == config
        assert seed == 42
        assert all(np.array_equal(params[k], loaded[k]) for k in params)
        assert all(params[k].dtype == loaded[k].dtype for k in params)
