import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainzrule import polynet as P
from chainzrule.linalg import ShapeError, frobenius_norm_sq
from chainzrule.polynet import (DualState, PolyLayer, PolyNetwork, Regularizer, count_params,
                                dreg_penalty, layer_forward, network_forward, poly_deriv,
                                poly_eval)

from conftest import fd_jacobian, random_net, rel_err


def power_sum(alpha, z):
    return sum(a * z ** (k + 1) for k, a in enumerate(alpha))


class TestScalarPoly:
    def test_examples(self):
        assert poly_eval((1, 0, 0), 0.7) == 0.7
        assert poly_eval((0, 0, 1), 2) == 8
        assert poly_eval((0.5, -0.2, 0.1), 1.5) == pytest.approx(0.6375, abs=1e-12)
        assert poly_deriv((1, 1, 1), 1) == 6
        assert poly_deriv((0, 0, 1), 2) == 12

    @given(st.floats(-50, 50))
    def test_linear_term_only(self, z):
        assert poly_deriv((1, 0, 0), z) == 1

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=5), st.floats(-4, 4))
    def test_horner_matches_power_sum(self, alpha, z):
        assert poly_eval(alpha, z) == pytest.approx(power_sum(alpha, z), rel=1e-9, abs=1e-9)
        h = 1e-6
        fd = (power_sum(alpha, z + h) - power_sum(alpha, z - h)) / (2 * h)
        assert poly_deriv(alpha, z) == pytest.approx(fd, rel=1e-5, abs=1e-5)

    def test_overflow(self):
        with pytest.raises(P.PolyOverflowError):
            poly_eval((0, 0, 1), 1e120)
        with pytest.raises(P.PolyOverflowError):
            poly_deriv((0, 0, 1), 1e200)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(3)
        alpha = rng.normal(size=(4, 3))
        z = rng.normal(size=(5, 4))
        v = P.activation_value("poly", z, alpha)
        d = P.activation_deriv("poly", z, alpha)
        for i in range(5):
            for j in range(4):
                assert v[i, j] == pytest.approx(poly_eval(alpha[j], z[i, j]), rel=1e-12)
                assert d[i, j] == pytest.approx(poly_deriv(alpha[j], z[i, j]), rel=1e-12)

    @pytest.mark.parametrize("kind", ["poly", "gelu", "relu", "linear"])
    def test_second_derivative_by_differences(self, kind):
        rng = np.random.default_rng(4)
        alpha = rng.normal(size=(3, 3))
        z = rng.uniform(0.1, 2.0, size=(6, 3)) * rng.choice([-1, 1], size=(6, 3))
        h = 1e-6
        fd = (P.activation_deriv(kind, z + h, alpha) - P.activation_deriv(kind, z - h, alpha)) / (2 * h)
        assert np.allclose(P.activation_deriv2(kind, z, alpha), fd, atol=1e-6)


class TestLayerForward:
    def test_linear_chain_rule(self):
        layer = PolyLayer(np.array([[2.0]]), np.zeros(1), np.array([[1.0, 0, 0]]), "poly")
        z, h, S = layer_forward(layer, np.array([[3.0]]), np.ones((1, 1, 1)))
        assert h[0, 0] == 6 and S[0, 0, 0] == 2

    def test_square_activation(self):
        layer = PolyLayer(np.array([[2.0]]), np.zeros(1), np.array([[0.0, 1, 0]]), "poly")
        z, h, S = layer_forward(layer, np.array([[3.0]]), np.ones((1, 1, 1)))
        assert (z[0, 0], h[0, 0], S[0, 0, 0]) == (6, 36, 24)
        f = lambda x: (2 * x) ** 2
        assert S[0, 0, 0] == pytest.approx((f(3 + 1e-5) - f(3 - 1e-5)) / 2e-5, abs=1e-6)

    def test_identity_layer(self):
        layer = PolyLayer(np.eye(3), np.zeros(3), np.array([[1.0, 0, 0]] * 3), "poly")
        h_in = np.array([[0.1, -0.4, 2.0]])
        S_in = np.random.default_rng(0).normal(size=(1, 3, 3))
        _, h, S = layer_forward(layer, h_in, S_in)
        assert np.array_equal(h, h_in) and np.array_equal(S, S_in)

    def test_identity_flag_equals_explicit_eye(self):
        net = random_net(5, D=4, widths=[3])
        layer = net.layers[0]
        x = np.random.default_rng(1).uniform(-1, 1, size=(2, 4))
        _, _, S_flag = layer_forward(layer, x, None, input_is_identity=True)
        _, _, S_eye = layer_forward(layer, x, np.broadcast_to(np.eye(4), (2, 4, 4)).copy())
        assert np.allclose(S_flag, S_eye, rtol=0, atol=1e-15)


class TestNetworkForward:
    def test_identity_network(self, identity_net):
        x = np.array([0.3, -0.2, 0.9])
        out, states, _ = network_forward(identity_net, x)
        assert np.array_equal(out, x)
        assert np.array_equal(states[-1].S, np.eye(3))

    def test_small_net_matches_fd(self):
        net = random_net(11, D=4, widths=[5, 3])
        x = np.random.default_rng(2).uniform(-1, 1, size=4)
        _, states, _ = network_forward(net, x)
        assert rel_err(states[-1].S, fd_jacobian(net, x)) < 1e-5

    def test_identical_inputs(self):
        net = random_net(12)
        x = np.random.default_rng(0).uniform(-1, 1, size=net.input_dim)
        out, states, _ = network_forward(net, np.stack([x, x]))
        assert np.array_equal(out[0], out[1])
        assert np.array_equal(states[-1].S[0], states[-1].S[1])

    def test_jacobian_stream_carries_input_dim(self):
        # each layer holds a width x D block per sample, so work grows with D
        net = random_net(3, D=6, widths=[5, 4])
        X = np.random.default_rng(0).uniform(-1, 1, size=(7, 6))
        tape = P.forward(net, X)
        assert [S.shape for S in tape.Ss] == [(7, 5, 6), (7, 4, 6), (7, 1, 6)]

    @given(st.integers(0, 10**6), st.sampled_from(["poly", "gelu"]))
    def test_jacobian_exact_smooth(self, seed, act):
        net = random_net(seed, activation=act)
        x = np.random.default_rng(seed + 1).uniform(-1, 1, size=net.input_dim)
        _, states, _ = network_forward(net, x)
        assert rel_err(states[-1].S, fd_jacobian(net, x)) < 1e-5

    @given(st.integers(0, 10**6))
    def test_jacobian_exact_relu_away_from_kinks(self, seed):
        net = random_net(seed, activation="relu")
        x = np.random.default_rng(seed + 1).uniform(-1, 1, size=net.input_dim)
        _, states, tape = network_forward(net, x)
        if min(np.min(np.abs(z)) for z in tape.zs[:-1]) < 1e-4:
            return
        assert rel_err(states[-1].S, fd_jacobian(net, x)) < 1e-5

    def test_input_range_guard(self):
        net = random_net(1, D=3)
        with pytest.raises(P.InputRangeError):
            P.predict(net, np.full((1, 3), 11.0))
        with pytest.raises(ShapeError):
            P.predict(net, np.zeros((1, 4)))

    def test_final_layer_must_be_linear(self):
        layer = PolyLayer(np.eye(2), np.zeros(2), np.array([[1.0, 0, 0]] * 2), "poly")
        with pytest.raises(ValueError):
            PolyNetwork([layer], 2, Regularizer())


class TestPenalty:
    def test_examples(self):
        assert dreg_penalty([np.array([[1.0, 2], [3, 4]])]) == 30
        assert dreg_penalty([np.zeros((2, 3)), np.zeros((1, 3))]) == 0

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(0)
        S1, S2 = rng.normal(size=(4, 3)), rng.normal(size=(2, 3))
        ref = 0.0
        for S in (S1, S2):
            for v in S.ravel():
                ref += v * v
        assert dreg_penalty([DualState(None, S1), DualState(None, S2)]) == pytest.approx(ref, rel=1e-14)

    def test_batch_mean(self):
        rng = np.random.default_rng(1)
        S = rng.normal(size=(5, 2, 3))
        assert dreg_penalty([S]) == pytest.approx(np.mean([frobenius_norm_sq(s) for s in S]))

    @given(st.integers(0, 10**6))
    def test_final_scope_bounded(self, seed):
        net = random_net(seed)
        X = np.random.default_rng(seed).uniform(-1, 1, size=(4, net.input_dim))
        _, states, _ = network_forward(net, X)
        assert dreg_penalty(states, "final_layer") <= dreg_penalty(states, "all_layers")


class TestParamsAndSerialization:
    def test_hand_count(self):
        assert count_params(4, [3], 1, "poly", 3) == 28
        net = P.build_network(4, [3], 1, "poly")
        assert net.n_params == 28

    @given(st.integers(1, 20), st.integers(1, 40))
    def test_count_matches_built_net(self, D, H):
        for act in ("poly", "relu"):
            assert P.build_network(D, [H, 3], 2, act).n_params == count_params(D, [H, 3], 2, act)

    @pytest.mark.parametrize("act", ["poly", "relu", "gelu"])
    def test_round_trip(self, tmp_path, act):
        net = random_net(7, activation=act, regularizer=Regularizer.dreg(0.01), output_dim=2)
        path = tmp_path / "net.json"
        P.save(net, path)
        back = P.load(path)
        X = np.random.default_rng(0).uniform(-1, 1, size=(6, net.input_dim))
        assert np.array_equal(P.predict(net, X), P.predict(back, X))
        assert back.regularizer == net.regularizer
        doc = json.loads(path.read_text())
        assert doc["format"] == P.SERIAL_FORMAT and doc["version"] == P.SERIAL_VERSION

    def test_params_round_trip(self):
        net = random_net(8)
        flat = [a.copy() for a in net.param_arrays()]
        other = P.build_network(net.input_dim, net.widths(), 1, "poly", seed=99)
        other.set_param_arrays(flat)
        assert all(np.array_equal(a, b) for a, b in zip(other.param_arrays(), flat))

    def test_float32_forward(self):
        net = P.build_network(5, [4], 1, "poly", dtype=np.float32)
        tape = P.forward(net, np.zeros((2, 5)))
        assert tape.output.dtype == np.float32 and tape.Ss[-1].dtype == np.float32
