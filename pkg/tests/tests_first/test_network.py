import pytest
import numpy as np

from vflsel.diagnostic import check_gradients
from vflsel.errors import ConsistencyError, DomainError, ShapeError
from vflsel.nn.network import Activation, DenseLayer, DenseNetwork, backward, forward


def test_initialize_shapes_and_glorot_range():
    net = DenseNetwork.initialize([6, 5, 3], activation="tanh", seed=7)
    assert net.layer_sizes() == [6, 5, 3]
    assert net.input_dim == 6
    assert net.output_dim == 3
    assert net.layers[0].activation == Activation.TANH
    assert net.layers[-1].activation == Activation.IDENTITY
    a = np.sqrt(6.0 / (6 + 5))
    assert np.all(np.abs(net.layers[0].weights) <= a)
    assert np.all(np.equal(net.layers[0].bias, 0.0))

    # same seed, same weights
    other = DenseNetwork.initialize([6, 5, 3], activation="tanh", seed=7)
    for p, q in zip(net.parameters(), other.parameters()):
        assert np.all(np.equal(p, q))


def test_forward_single_affine_layer():
    layer = DenseLayer(np.array([[1.0, 2.0], [0.0, -1.0]]), np.array([0.5, 0.0]), "identity")
    net = DenseNetwork([layer])
    out, trace = forward(net, np.array([[1.0, 1.0], [2.0, 0.0]]))
    expected = np.array([[3.5, -1.0], [2.5, 0.0]])
    assert np.allclose(out, expected)
    assert np.all(np.equal(trace.outputs, out))


def test_forward_empty_batch():
    net = DenseNetwork.initialize([3, 2], seed=0)
    out, _ = forward(net, np.zeros((0, 3)))
    assert out.shape == (0, 2)


def test_forward_rejects_wrong_width():
    net = DenseNetwork.initialize([3, 2], seed=0)
    with pytest.raises(ShapeError):
        forward(net, np.zeros((4, 5)))


def test_forward_rejects_non_finite_input():
    net = DenseNetwork.initialize([2, 2], seed=0)
    with pytest.raises(DomainError):
        forward(net, np.array([[np.nan, 1.0]]))


def test_network_rejects_broken_chain():
    with pytest.raises(ShapeError):
        DenseNetwork(
            [
                DenseLayer(np.ones((3, 2)), np.zeros(3), "tanh"),
                DenseLayer(np.ones((1, 4)), np.zeros(1), "identity"),
            ]
        )


def test_network_rejects_non_affine_output():
    with pytest.raises(ShapeError):
        DenseNetwork([DenseLayer(np.ones((1, 2)), np.zeros(1), "relu")])


def test_backward_rejects_mismatched_trace():
    net = DenseNetwork.initialize([3, 4, 2], seed=1)
    other = DenseNetwork.initialize([3, 2], seed=1)
    _, trace = forward(other, np.ones((2, 3)))
    with pytest.raises(ConsistencyError):
        backward(net, trace, np.ones((2, 2)))


def test_backward_rejects_wrong_output_grad():
    net = DenseNetwork.initialize([3, 2], seed=1)
    _, trace = forward(net, np.ones((2, 3)))
    with pytest.raises(ShapeError):
        backward(net, trace, np.ones((2, 3)))


def test_backward_linear_closed_form():
    # f(x) = W x + b, loss = sum(f * g) -> dW = g^T x, db = sum(g), dx = g W
    w = np.array([[1.0, -2.0, 0.5]])
    net = DenseNetwork([DenseLayer(w, np.array([0.1]), "identity")])
    x = np.array([[1.0, 2.0, 3.0], [0.0, -1.0, 1.0]])
    g = np.array([[1.0], [2.0]])
    _, trace = forward(net, x)
    grads = backward(net, trace, g)
    assert np.allclose(grads.weight_grads[0], g.T @ x)
    assert np.allclose(grads.bias_grads[0], [3.0])
    assert np.allclose(grads.input_grad, g @ w)
    assert grads.matches(net)


@pytest.mark.parametrize(
    "sizes, activation, loss_kind",
    [
        ([4, 3], "identity", "squared_error"),
        ([5, 6, 2], "tanh", "squared_error"),
        ([5, 6, 3], "tanh", "softmax_cross_entropy"),
        ([3, 8, 4, 2], "relu", "squared_error"),
        ([3, 8, 4, 3], "relu", "softmax_cross_entropy"),
    ],
    ids=["linear_se", "tanh_se", "tanh_ce", "relu_deep_se", "relu_deep_ce"],
)
def test_gradients_match_finite_differences(sizes, activation, loss_kind):
    rng = np.random.default_rng(11)
    net = DenseNetwork.initialize(sizes, activation=activation, rng=rng)
    for layer in net.layers:
        layer.bias[:] = rng.normal(0.0, 0.1, size=layer.bias.shape)
    batch = rng.normal(size=(5, sizes[0]))
    if loss_kind == "squared_error":
        labels = rng.normal(size=(5, sizes[-1]))
    else:
        labels = rng.integers(0, sizes[-1], size=5)
    assert check_gradients(net, batch, labels, loss_kind) <= 1e-5


@pytest.mark.parametrize(
    "loss_kind", ["squared_error", "softmax_cross_entropy"], ids=["dead_layer_se", "dead_layer_ce"]
)
def test_gradients_through_a_dead_relu_layer(loss_kind):
    rng = np.random.default_rng(82)
    net = DenseNetwork.initialize([6, 4, 5, 11], activation="relu", rng=rng)
    # every first-layer unit is off, so the second layer sees only its bias
    net.layers[0].bias[:] = -100.0
    net.layers[1].bias[:] = [0.5, -0.3, 0.8, -0.7, 0.2]
    net.layers[2].bias[:] = rng.normal(0.0, 0.5, size=11)
    batch = rng.normal(size=(4, 6))
    _, trace = forward(net, batch)
    assert np.all(trace.activations[0] == 0.0)
    if loss_kind == "squared_error":
        labels = rng.normal(size=(4, 11))
    else:
        labels = rng.integers(0, 11, size=4)
    assert check_gradients(net, batch, labels, loss_kind) <= 1e-5


def test_compose_matches_two_stage_forward():
    lower = DenseNetwork.initialize([4, 3, 2], seed=3)
    upper = DenseNetwork.initialize([2, 5, 1], seed=4)
    x = np.random.default_rng(0).normal(size=(7, 4))
    h, _ = forward(lower, x)
    y, _ = forward(upper, h)
    # the lower output layer is affine, so composing keeps the function
    composed = lower.compose(upper)
    y2, _ = forward(composed, x)
    assert np.allclose(y, y2)
    assert composed.layer_sizes() == [4, 3, 2, 5, 1]
