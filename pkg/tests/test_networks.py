"""Layer primitives, initialization, and network forward contracts."""

import numpy as np
import pytest

from alternator import autodiff as ad
from alternator.autodiff import Tensor, finite_difference_check
from alternator.errors import ConfigError, ShapeError
from alternator.networks import (
    MLP,
    SELF_ATTENTION,
    Network,
    NetworkSpec,
    activation_forward,
    attention_matrix,
    init_parameters,
    linear_forward,
    network_forward,
    self_attention_forward,
)


def test_linear_forward_identity_weights():
    out = linear_forward(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor(np.zeros(2)))
    assert np.array_equal(out.data, [[1.0, 2.0]])


def test_linear_forward_hand_matrix_multiply():
    # [[1,1]] @ [[2,0],[0,3]] + [1,1] = [[3,4]]
    out = linear_forward(
        Tensor([[1.0, 1.0]]), Tensor([[2.0, 0.0], [0.0, 3.0]]), Tensor([1.0, 1.0])
    )
    assert np.array_equal(out.data, [[3.0, 4.0]])


def test_linear_forward_dimension_mismatch():
    with pytest.raises(ShapeError):
        linear_forward(Tensor(np.ones((1, 2))), Tensor(np.ones((3, 2))), Tensor(np.ones(2)))


def test_activation_values():
    assert activation_forward(Tensor([0.0]), "tanh").data[0] == 0.0
    assert activation_forward(Tensor([0.0]), "gelu").data[0] == 0.0
    # large inputs stay inside (-1, 1); beyond ~19 float64 tanh saturates to 1.0 exactly
    big = activation_forward(Tensor([15.0, -15.0]), "tanh").data
    assert np.all(np.abs(big) < 1.0)


def test_activation_unknown_kind():
    with pytest.raises(ConfigError):
        activation_forward(Tensor([0.0]), "relu")


def _attention_params(d, seed=0):
    rng = np.random.default_rng(seed)
    return (Tensor(rng.normal(0, 0.5, (d, d))) for _ in range(3))


def test_attention_single_token_is_value_plus_residual():
    d = 3
    wq, wk, wv = _attention_params(d)
    x = Tensor(np.array([[0.3, -0.2, 0.5]]))
    out = self_attention_forward(x, wq, wk, wv)
    assert out.data.shape == (1, d)
    assert np.allclose(out.data, x.data @ wv.data + x.data, atol=1e-12)
    assert np.array_equal(attention_matrix(x, wq, wk), [[1.0]])


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(2)
    d, T = 4, 6
    wq, wk, wv = _attention_params(d, seed=3)
    x = Tensor(rng.normal(size=(T, d)))
    A = attention_matrix(x, wq, wk)
    assert np.allclose(A.sum(axis=1), 1.0, atol=1e-12)


def test_attention_zero_projections_is_identity():
    d, T = 3, 5
    zeros = Tensor(np.zeros((d, d)))
    x = Tensor(np.random.default_rng(4).normal(size=(T, d)))
    out = self_attention_forward(x, zeros, zeros, zeros)
    assert np.array_equal(out.data, x.data)


def test_attention_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    d, T = 3, 4
    wq = Tensor(rng.normal(0, 0.5, (d, d)))
    wk = Tensor(rng.normal(0, 0.5, (d, d)))
    wv = Tensor(rng.normal(0, 0.5, (d, d)))
    x = Tensor(rng.normal(size=(T, d)))

    def loss():
        return ad.total_sum(ad.square(self_attention_forward(x, wq, wk, wv)))

    assert finite_difference_check(loss, [wq, wk, wv, x], h=1e-5) <= 1e-4


def test_init_same_seed_is_bitwise_identical():
    spec = NetworkSpec(input_dim=3, output_dim=2, hidden_dim=5, depth=2)
    p1 = init_parameters(spec, seed=42)
    p2 = init_parameters(spec, seed=42)
    assert p1.names() == p2.names()
    for name in p1.names():
        assert np.array_equal(p1[name].data, p2[name].data)


def test_init_biases_zero():
    spec = NetworkSpec(input_dim=3, output_dim=2, hidden_dim=5, depth=3)
    params = init_parameters(spec, seed=0)
    for name, t in params.items():
        if name.endswith("bias"):
            assert np.array_equal(t.data, np.zeros_like(t.data))


def test_init_weight_variance_tracks_fan_in():
    # 10^4-ish samples from the in_dim=64 layer; variance should be ~1/64
    spec = NetworkSpec(input_dim=64, output_dim=160, hidden_dim=64, depth=1)
    params = init_parameters(spec, seed=7)
    w = params["layer0.weight"].data  # (64, 64) = 4096 draws
    w2 = params["out.weight"].data    # (64, 160) = 10240 draws
    samples = np.concatenate([w.ravel(), w2.ravel()])
    assert samples.size >= 10_000
    var = samples.var()
    assert abs(var - 1.0 / 64) <= 0.2 * (1.0 / 64)


def test_network_forward_zero_params_gives_zero_output():
    for kind in (MLP, SELF_ATTENTION):
        spec = NetworkSpec(input_dim=3, output_dim=2, hidden_dim=4, depth=2, kind=kind)
        params = init_parameters(spec, seed=0)
        for t in params:
            t.data[:] = 0.0
        out = network_forward(spec, params, Tensor(np.ones((2, 3))))
        assert np.array_equal(out.data, np.zeros((2, 2)))


def test_network_forward_shape_contract():
    spec = NetworkSpec(input_dim=3, output_dim=2, hidden_dim=4, depth=2)
    net = Network.build(spec, seed=1)
    assert net(np.ones((5, 3))).data.shape == (5, 2)
    assert net(np.ones(3)).data.shape == (2,)


def test_network_forward_rejects_wrong_input_dim():
    spec = NetworkSpec(input_dim=3, output_dim=2)
    net = Network.build(spec, seed=1)
    with pytest.raises(ShapeError):
        net(np.ones((5, 4)))


def test_mlp_depth_one_is_single_hidden_block_plus_projection():
    spec = NetworkSpec(input_dim=2, output_dim=2, hidden_dim=3, depth=1)
    params = init_parameters(spec, seed=9)
    x = np.array([[0.4, -0.7]])
    manual = np.tanh(x @ params["layer0.weight"].data + params["layer0.bias"].data)
    manual = manual @ params["out.weight"].data + params["out.bias"].data
    out = network_forward(spec, params, Tensor(x))
    assert np.allclose(out.data, manual, atol=1e-15)


def test_attention_network_batched_matches_per_row():
    spec = NetworkSpec(input_dim=3, output_dim=2, hidden_dim=4, depth=2,
                       kind=SELF_ATTENTION)
    net = Network.build(spec, seed=3)
    x = np.random.default_rng(8).normal(size=(4, 3))
    batched = net(x).data
    rows = np.stack([net(x[i]).data for i in range(4)])
    assert np.allclose(batched, rows, atol=1e-12)


def test_mlp_gradients_flow_through_network_forward():
    spec = NetworkSpec(input_dim=3, output_dim=2, hidden_dim=4, depth=2)
    net = Network.build(spec, seed=2)
    x = Tensor(np.random.default_rng(0).uniform(-1, 1, (4, 3)))

    def loss():
        return ad.total_sum(ad.square(net(x)))

    assert finite_difference_check(loss, list(net.params), h=1e-5) <= 1e-4


def test_spec_validation():
    with pytest.raises(ConfigError):
        NetworkSpec(input_dim=0, output_dim=2)
    with pytest.raises(ConfigError):
        NetworkSpec(input_dim=1, output_dim=1, depth=0)
    with pytest.raises(ConfigError):
        NetworkSpec(input_dim=1, output_dim=1, kind="transformer")
