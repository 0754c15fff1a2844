import numpy as np
import pytest

from relusat.benchgen import gen_instances
from relusat.network import Network
from relusat.specio import Disjunct, Halfspace, Property, build_problem

CORPUS_SEED = 2024
CORPUS_SIZE = 200


def two_layer_example() -> Network:
    """2-2-2-1 net whose first neuron is relu(0.4 x0 - 0.5 x1 - 0.8)."""
    return Network.from_arrays(
        [
            [[0.4, -0.5], [0.3, 0.3]],
            [[0.5, -0.2], [-0.3, 0.6]],
            [[-0.8, -0.8], [0.4, 0.2]],
        ],
        [[-0.8, 0.3], [0.1, -0.1], [0.1, 0.0]],
    )


EXAMPLE_BOX = (np.array([-2.0, -1.0]), np.array([2.0, 1.0]))


def halfspace(coeffs, rhs):
    return Halfspace(tuple(float(c) for c in coeffs), float(rhs))


def simple_property(lower, upper, coeffs, rhs) -> Property:
    """Output condition ``coeffs . y <= rhs`` over the box."""
    return Property.from_condition(lower, upper, [Disjunct((halfspace(coeffs, rhs),))])


def random_problem(rng, sizes, radius=0.5, gap=0.1):
    from relusat.benchgen import random_network
    from relusat.network import infer

    net = random_network(rng, sizes)
    x0 = rng.uniform(-1, 1, sizes[0])
    y0 = infer(net, x0)
    c = np.zeros(sizes[-1])
    c[0] = 1.0
    return build_problem(net, simple_property(x0 - radius, x0 + radius, c, y0[0] + gap))


@pytest.fixture
def example_net():
    return two_layer_example()


@pytest.fixture(scope="session")
def corpus():
    """The labeled small-network corpus shared by the corpus-level suites."""
    return gen_instances(CORPUS_SEED, CORPUS_SIZE)
