import numpy as np
import pytest
from conftest import fd_probe_errors
from hypothesis import given
from hypothesis import strategies as st

from imle_policy.tensor_nn import (
    AdamState,
    DimensionError,
    GeneratorNet,
    adam_step,
    backward,
    backward_batch,
    forward,
    forward_batch,
    init_net,
)


def test_zero_weight_net_outputs_last_bias():
    sizes = [3, 4, 2]
    net = GeneratorNet(sizes, [np.zeros((3, 4)), np.zeros((4, 2))],
                       [np.array([1.0, -2.0, 0.5, 3.0]), np.array([0.25, -0.75])], (2, 1))
    out = forward(net, [5.0, -1.0], [9.0])
    np.testing.assert_array_equal(out, [[0.25], [-0.75]])


def test_zero_weight_hidden_layer_is_relu_of_bias():
    net = GeneratorNet([2, 3, 1], [np.zeros((2, 3)), np.ones((3, 1))],
                       [np.array([1.0, -2.0, 0.5]), np.zeros(1)], (1, 1))
    # relu([1, -2, 0.5]) summed by the all-ones output layer
    assert forward(net, [3.0], [4.0])[0, 0] == 1.5


def test_identity_net():
    net = GeneratorNet([3, 3], [np.eye(3)], [np.zeros(3)], (3, 1))
    np.testing.assert_array_equal(forward(net, [1.0, 2.0], [3.0]), [[1.0], [2.0], [3.0]])


def test_two_layer_matches_hand_matmul():
    rng = np.random.default_rng(3)
    net = init_net([4, 5, 6], (3, 2), rng)
    net.biases[0][:] = rng.normal(size=5)
    net.biases[1][:] = rng.normal(size=6)
    x = rng.normal(size=4)
    hidden = [max(0.0, sum(x[i] * net.weights[0][i, j] for i in range(4)) + net.biases[0][j]) for j in range(5)]
    expect = [sum(hidden[j] * net.weights[1][j, k] for j in range(5)) + net.biases[1][k] for k in range(6)]
    np.testing.assert_allclose(forward(net, x[:3], x[3:]).ravel(), expect, rtol=1e-13, atol=1e-14)


def test_forward_bit_identical(small_net):
    a = forward(small_net, [0.1, 0.2], [0.3])
    b = forward(small_net, [0.1, 0.2], [0.3])
    assert a.tobytes() == b.tobytes()


def test_forward_shape_error_names_layer(small_net):
    with pytest.raises(DimensionError, match="layer 0"):
        forward(small_net, [0.1, 0.2, 0.3], [0.3])


def test_bad_weight_shape_rejected():
    with pytest.raises(DimensionError, match="layer 1"):
        GeneratorNet([2, 3, 2], [np.zeros((2, 3)), np.zeros((2, 2))], [np.zeros(3), np.zeros(2)], (2, 1))


def test_output_width_must_match_out_shape():
    with pytest.raises(DimensionError):
        GeneratorNet([2, 3], [np.zeros((2, 3))], [np.zeros(3)], (2, 2))


def test_backward_zero_output_grad(small_net):
    grads = backward(small_net, [0.5, -0.5], [1.0], np.zeros((2, 2)))
    assert all(not g.any() for g in grads)


def test_backward_linear_scalar():
    net = GeneratorNet([1, 1], [np.array([[0.7]])], [np.zeros(1)], (1, 1))
    gw, gb = backward(net, [], [2.0], np.ones((1, 1)))
    assert gw[0, 0] == 2.0 and gb[0] == 1.0


def test_backward_shape_error(small_net):
    with pytest.raises(DimensionError):
        backward(small_net, [0.5, -0.5], [1.0], np.zeros(3))


def test_backward_matches_finite_differences(small_net):
    rng = np.random.default_rng(11)
    x = np.array([[0.4, -0.3, 0.8]])
    g = rng.standard_normal((1, 4))
    grads = backward(small_net, x[0, :2], x[0, 2:], g)
    assert max(fd_probe_errors(small_net, x, g, grads, rng)) < 1e-4


@given(
    seed=st.integers(0, 2**32 - 1),
    hidden=st.lists(st.integers(1, 12), min_size=1, max_size=3),
    n_in=st.integers(1, 6),
    n_out=st.integers(1, 6),
    batch=st.integers(1, 4),
)
def test_gradient_property_small_nets(seed, hidden, n_in, n_out, batch):
    sizes = [n_in, *hidden, n_out]
    rng = np.random.default_rng(seed)
    net = init_net(sizes, (n_out, 1), rng)
    if net.num_params() > 500:
        return
    for b in net.biases:
        b[:] = rng.normal(scale=0.2, size=b.shape)
    x = rng.standard_normal((batch, n_in))
    g = rng.standard_normal((batch, n_out))
    _, cache = forward_batch(net, x, keep_cache=True)
    grads = backward_batch(net, cache, g)
    assert max(fd_probe_errors(net, x, g, grads, rng, probes=20)) < 1e-4


def test_adam_zero_grads_leave_fresh_net_unchanged(small_net):
    before = [p.copy() for p in small_net.params()]
    state = AdamState.for_net(small_net)
    adam_step(small_net, [np.zeros_like(p) for p in before], state)
    assert all(np.array_equal(a, b) for a, b in zip(before, small_net.params()))
    assert state.step_count == 1


def test_adam_moments_decay_under_zero_grads(small_net):
    state = AdamState.for_net(small_net)
    adam_step(small_net, [np.ones_like(p) for p in small_net.params()], state)
    m0 = [m.copy() for m in state.first_moment]
    v0 = [v.copy() for v in state.second_moment]
    adam_step(small_net, [np.zeros_like(p) for p in small_net.params()], state)
    for a, b in zip(m0, state.first_moment):
        np.testing.assert_allclose(b, 0.9 * a, rtol=1e-15)
    for a, b in zip(v0, state.second_moment):
        np.testing.assert_allclose(b, 0.999 * a, rtol=1e-15)


def _scalar_net(w: float) -> GeneratorNet:
    return GeneratorNet([1, 1], [np.array([[w]])], [np.zeros(1)], (1, 1))


def test_adam_first_step_is_about_lr():
    net = _scalar_net(1.0)
    state = AdamState.for_net(net, lr=0.1)
    adam_step(net, [np.ones((1, 1)), np.zeros(1)], state)
    assert net.weights[0][0, 0] == pytest.approx(0.9, abs=1e-6)


def test_adam_zero_lr_is_identity(small_net):
    before = [p.copy() for p in small_net.params()]
    state = AdamState.for_net(small_net, lr=0.0)
    rng = np.random.default_rng(0)
    for _ in range(3):
        adam_step(small_net, [rng.standard_normal(p.shape) for p in before], state)
    assert all(np.array_equal(a, b) for a, b in zip(before, small_net.params()))
    assert state.step_count == 3


def test_adam_descends_on_square():
    net = _scalar_net(1.0)
    state = AdamState.for_net(net, lr=0.05)
    prev = 1.0
    for _ in range(10):
        w = net.weights[0][0, 0]
        adam_step(net, [np.array([[2.0 * w]]), np.zeros(1)], state)
        cur = abs(net.weights[0][0, 0])
        assert cur < prev
        prev = cur


def test_adam_rejects_non_finite_gradient(small_net):
    grads = [np.zeros_like(p) for p in small_net.params()]
    grads[3][0] = np.nan
    with pytest.raises(FloatingPointError, match="parameter 3"):
        adam_step(small_net, grads, AdamState.for_net(small_net))


def test_adam_step_count_increments(small_net):
    state = AdamState.for_net(small_net)
    for k in range(1, 4):
        adam_step(small_net, [np.zeros_like(p) for p in small_net.params()], state)
        assert state.step_count == k
