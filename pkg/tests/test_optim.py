import numpy as np
import pytest

from relkd.errors import ConfigError, DimensionError
from relkd.optim import SGD, Adam, OptimizerSpec


def test_spec_validation_and_build():
    assert isinstance(OptimizerSpec("sgd", 0.1).build(), SGD)
    assert isinstance(OptimizerSpec("adam", 0.1).build(), Adam)
    with pytest.raises(ConfigError):
        OptimizerSpec("rmsprop", 0.1)
    with pytest.raises(ConfigError):
        OptimizerSpec("sgd", 0.0)


def test_sgd_plain_step():
    p = np.array([[1.0]])
    opt = SGD(lr=0.1, momentum=0.0)
    opt.step([p], [np.array([[0.5]])])
    assert p[0, 0] == pytest.approx(0.95)


def test_sgd_zero_gradient_keeps_params():
    p = np.array([[2.0, -3.0]])
    opt = SGD(lr=0.1, momentum=0.0)
    opt.step([p], [np.zeros((1, 2))])
    np.testing.assert_array_equal(p, [[2.0, -3.0]])


def test_sgd_momentum_accumulates():
    p = np.array([[0.0]])
    opt = SGD(lr=1.0, momentum=0.5)
    g = np.array([[1.0]])
    opt.step([p], [g])   # v=1, p=-1
    opt.step([p], [g])   # v=1.5, p=-2.5
    assert p[0, 0] == pytest.approx(-2.5)


def test_sgd_weight_decay_pulls_toward_zero():
    p = np.array([[1.0]])
    opt = SGD(lr=0.1, momentum=0.0, weight_decay=0.5)
    opt.step([p], [np.zeros((1, 1))])
    assert p[0, 0] == pytest.approx(1.0 - 0.1 * 0.5)


def test_adam_first_step_scalar_hand_value():
    # m_hat = 1, v_hat = 1 -> update lr / (1 + eps)
    p = np.array([[1.0]])
    lr, eps = 0.1, 1e-8
    opt = Adam(lr=lr, eps=eps)
    opt.step([p], [np.array([[1.0]])])
    assert p[0, 0] == pytest.approx(1.0 - lr / (1.0 + eps), abs=1e-15)


def test_adam_second_step_hand_value():
    p = np.array([[0.0]])
    opt = Adam(lr=1.0, beta1=0.9, beta2=0.999, eps=0.0)
    opt.step([p], [np.array([[1.0]])])
    first = p[0, 0]
    assert first == pytest.approx(-1.0)
    opt.step([p], [np.array([[1.0]])])
    # constant gradient: m_hat = v_hat = 1 at every step
    assert p[0, 0] == pytest.approx(first - 1.0)


def test_step_shape_mismatch():
    opt = SGD(lr=0.1)
    with pytest.raises(DimensionError):
        opt.step([np.zeros((2, 2))], [np.zeros((2, 3))])
    with pytest.raises(DimensionError):
        opt.step([np.zeros((2, 2)), np.zeros((1, 1))], [np.zeros((2, 2))])
