import math

import numpy as np
import pytest

from synadapt.snn import LayerConfig, NeuronState, lif_step, forward_layer, surrogate_grad

DECAY = math.exp(-1.0 / 10.0)


def cfg(n=1, **kw):
    return LayerConfig(n_in=n, n_out=n, **kw)


class TestLifStep:
    def test_subthreshold_decay(self):
        state = NeuronState(v=np.array([0.5]), s=np.array([0.0]))
        out = lif_step(state, np.array([0.0]), cfg())
        assert out.s[0] == 0.0
        assert abs(out.v[0] - 0.5 * DECAY) < 1e-12
        assert abs(out.v[0] - 0.45241870901797976) < 1e-5

    def test_rest_fixed_point(self):
        out = lif_step(NeuronState.zeros(3), np.zeros(3), cfg(3))
        assert np.all(out.v == 0.0) and np.all(out.s == 0.0)

    def test_spike_and_subtractive_reset(self):
        state = NeuronState(v=np.array([0.9048]), s=np.array([0.0]))
        out = lif_step(state, np.array([0.2]), cfg())
        pre_reset = 0.9048 * DECAY + 0.2
        assert pre_reset >= 1.0
        assert out.s[0] == 1.0
        assert out.v[0] == pre_reset - 1.0  # excess conserved exactly
        assert abs(out.v[0] - 0.0187) < 1e-3

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            lif_step(NeuronState.zeros(3), np.zeros(4), cfg(3))

    def test_nonfinite_current_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            lif_step(NeuronState.zeros(2), np.array([1.0, np.nan]), cfg(2))

    def test_spikes_binary_for_any_input(self):
        rng = np.random.default_rng(0)
        state = NeuronState.zeros(64)
        for _ in range(50):
            state = lif_step(state, rng.normal(0, 3, 64), cfg(64))
            assert set(np.unique(state.s)) <= {0.0, 1.0}

    def test_geometric_decay_closed_form(self):
        v0 = 0.73
        state = NeuronState(v=np.array([v0]), s=np.array([0.0]))
        c = cfg()
        for t in range(1, 1001):
            state = lif_step(state, np.zeros(1), c)
            closed = DECAY ** t * v0
            assert abs(state.v[0] - closed) <= 1e-12 * t * max(1.0, abs(closed))


class TestSurrogate:
    def test_peak_at_threshold(self):
        c = cfg()
        assert surrogate_grad(c.theta, c) == c.surrogate_slope

    def test_support_boundary(self):
        c = cfg()
        assert surrogate_grad(c.theta + c.surrogate_width, c) == 0.0
        assert surrogate_grad(c.theta - c.surrogate_width, c) == 0.0
        assert surrogate_grad(c.theta + 2.5, c) == 0.0

    def test_linear_interpolation(self):
        c = cfg()
        assert abs(surrogate_grad(c.theta + c.surrogate_width / 2, c) - 0.15) < 1e-12

    def test_nonnegative_and_symmetric(self):
        c = cfg()
        v = np.linspace(-3, 5, 2001)
        g = surrogate_grad(v, c)
        assert np.all(g >= 0.0)
        assert np.allclose(surrogate_grad(c.theta + v, c),
                           surrogate_grad(c.theta - v, c))


class TestForwardLayer:
    def test_zero_spikes_equals_zero_current(self):
        rng = np.random.default_rng(1)
        W = rng.normal(size=(4, 6))
        state = NeuronState(v=rng.uniform(0, 0.5, 4), s=np.zeros(4))
        c = cfg(4)
        a = forward_layer(np.zeros(6), W, state, c)
        b = lif_step(state, np.zeros(4), c)
        assert np.array_equal(a.v, b.v) and np.array_equal(a.s, b.s)

    def test_zero_weights_input_independent(self):
        state = NeuronState(v=np.full(4, 0.3), s=np.zeros(4))
        c = cfg(4)
        a = forward_layer(np.ones(6), np.zeros((4, 6)), state, c)
        b = forward_layer(np.zeros(6), np.zeros((4, 6)), state, c)
        assert np.array_equal(a.v, b.v)

    def test_one_hot_selects_column(self):
        rng = np.random.default_rng(2)
        W = rng.normal(size=(4, 6))
        one_hot = np.zeros(6)
        one_hot[2] = 1.0
        state = NeuronState.zeros(4)
        a = forward_layer(one_hot, W, state, cfg(4))
        b = lif_step(state, W[:, 2], cfg(4))
        assert np.array_equal(a.v, b.v)

    def test_incompatible_shapes(self):
        with pytest.raises(ValueError):
            forward_layer(np.zeros(5), np.zeros((4, 6)), NeuronState.zeros(4), cfg(4))


def test_layer_config_validation():
    with pytest.raises(ValueError):
        LayerConfig(n_in=2, n_out=2, lam_v=1.5)
    with pytest.raises(ValueError):
        LayerConfig(n_in=2, n_out=2, theta=-1.0)
    with pytest.raises(ValueError):
        LayerConfig(n_in=2, n_out=2, surrogate_slope=0.0)
