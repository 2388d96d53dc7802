import pytest
import numpy as np
from scipy.special import log_softmax

from vflsel.errors import DomainError, ShapeError
from vflsel.nn.losses import LossKind, loss_and_grad, predict_classes
from vflsel.nn.network import DenseNetwork, GradientSet, backward, forward
from vflsel.nn.optim import OptimizerKind, OptimizerState, optimizer_step


def test_squared_error_value_and_grad():
    out = np.array([[1.0], [3.0]])
    loss, grad = loss_and_grad("squared_error", out, np.array([0.0, 1.0]))
    assert loss == pytest.approx((1.0 + 4.0) / 2)
    assert np.allclose(grad, [[1.0], [2.0]])


def test_cross_entropy_matches_log_softmax():
    rng = np.random.default_rng(0)
    out = rng.normal(size=(6, 3))
    y = np.array([0, 1, 2, 2, 1, 0])
    loss, grad = loss_and_grad(LossKind.SOFTMAX_CROSS_ENTROPY, out, y)
    expected = -np.mean(log_softmax(out, axis=1)[np.arange(6), y])
    assert loss == pytest.approx(expected)
    # each row of the gradient sums to zero
    assert np.allclose(grad.sum(axis=1), 0.0)


def test_empty_batch_is_zero():
    loss, grad = loss_and_grad("squared_error", np.zeros((0, 1)), np.zeros(0))
    assert loss == 0.0
    assert grad.shape == (0, 1)


@pytest.mark.parametrize(
    "labels",
    [np.array([0, 3]), np.array([0, -1]), np.array([0.5, 1.0])],
    ids=["too_large", "negative", "fractional"],
)
def test_cross_entropy_rejects_bad_labels(labels):
    with pytest.raises(DomainError):
        loss_and_grad("softmax_cross_entropy", np.zeros((2, 3)), labels)


def test_label_count_mismatch():
    with pytest.raises(ShapeError):
        loss_and_grad("squared_error", np.zeros((3, 1)), np.zeros(2))


def test_predict_classes():
    assert np.all(np.equal(predict_classes(np.array([[0.1, 0.9], [2.0, -1.0]])), [1, 0]))


def _grads_like(net, value):
    return GradientSet(
        weight_grads=[np.full_like(layer.weights, value) for layer in net.layers],
        bias_grads=[np.full_like(layer.bias, value) for layer in net.layers],
        input_grad=np.zeros((1, net.input_dim)),
    )


def test_sgd_step():
    net = DenseNetwork.initialize([2, 1], seed=0)
    before = [p.copy() for p in net.parameters()]
    state = OptimizerState.create("sgd", net, learning_rate=0.1)
    optimizer_step(state, net, _grads_like(net, 1.0))
    for p, q in zip(net.parameters(), before):
        assert np.allclose(p, q - 0.1)
    assert state.step_count == 1


def test_sgd_zero_learning_rate_is_identity():
    net = DenseNetwork.initialize([3, 2], seed=0)
    before = [p.copy() for p in net.parameters()]
    state = OptimizerState.create(OptimizerKind.SGD, net, learning_rate=0.0)
    optimizer_step(state, net, _grads_like(net, 5.0))
    for p, q in zip(net.parameters(), before):
        assert np.all(np.equal(p, q))


def test_adam_first_step_moves_by_learning_rate():
    # with bias correction the first Adam step is lr * g / (|g| + eps)
    net = DenseNetwork.initialize([2, 1], seed=0)
    before = [p.copy() for p in net.parameters()]
    state = OptimizerState.create("adam", net, learning_rate=0.01)
    optimizer_step(state, net, _grads_like(net, 2.0))
    for p, q in zip(net.parameters(), before):
        assert np.allclose(p, q - 0.01, atol=1e-8)


def test_optimizer_rejects_non_finite_gradient():
    net = DenseNetwork.initialize([2, 1], seed=0)
    before = [p.copy() for p in net.parameters()]
    state = OptimizerState.create("adam", net)
    grads = _grads_like(net, 1.0)
    grads.bias_grads[0][0] = np.inf
    with pytest.raises(DomainError, match="layer 1 bias"):
        optimizer_step(state, net, grads)
    for p, q in zip(net.parameters(), before):
        assert np.all(np.equal(p, q))


def test_optimizer_rejects_shape_mismatch():
    net = DenseNetwork.initialize([2, 1], seed=0)
    other = DenseNetwork.initialize([3, 1], seed=0)
    state = OptimizerState.create("sgd", net)
    with pytest.raises(ShapeError):
        optimizer_step(state, net, _grads_like(other, 1.0))


def test_sgd_descends_regression_loss():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(64, 3))
    y = x @ np.array([1.0, -2.0, 0.5])
    net = DenseNetwork.initialize([3, 1], seed=2)
    state = OptimizerState.create("sgd", net, learning_rate=0.05)
    losses = list()
    for _ in range(50):
        out, trace = forward(net, x)
        loss, g = loss_and_grad("squared_error", out, y)
        losses.append(loss)
        optimizer_step(state, net, backward(net, trace, g))
    assert losses[-1] < 0.1 * losses[0]
