import numpy as np
import pytest

from qpland.nets import Activation, Mlp, param_count


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_net(input_dim, hidden, output_dim, activation, rng, scale=0.6):
    n = param_count(input_dim, hidden, output_dim)
    return Mlp(input_dim, tuple(hidden), output_dim, activation,
               rng.normal(0.0, scale, n))


def tanh_111(weight=1.0, bias=0.0):
    """1-1-1 net (single hidden unit): y = w2 * tanh(w1 x + b1) + b2."""
    return Mlp(1, (1,), 1, Activation.TANH, np.array([weight, bias, weight, bias]))
