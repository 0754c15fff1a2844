import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relusat.network import AffineLayer, InputShapeError, Network, infer, pre_activations, validate

from conftest import two_layer_example


def test_first_neuron_pre_activation_at_corner():
    net = two_layer_example()
    z = pre_activations(net, np.array([2.0, -1.0]))
    assert z[0] == pytest.approx(0.5, abs=1e-15)


def test_infer_matches_manual_forward_pass():
    net = two_layer_example()
    x = np.array([0.3, -0.7])
    h = x
    for layer in net.hidden_layers:
        h = np.maximum(layer.weights @ h + layer.biases, 0.0)
    y = net.layers[-1].weights @ h + net.layers[-1].biases
    np.testing.assert_allclose(infer(net, x), y, rtol=0, atol=1e-15)


def test_batch_inference_matches_rows():
    net = two_layer_example()
    xs = np.random.default_rng(0).uniform(-2, 2, (17, 2))
    batch = infer(net, xs)
    assert batch.shape == (17, net.output_dim)
    for x, y in zip(xs, batch):
        np.testing.assert_allclose(infer(net, x), y, rtol=0, atol=1e-15)


def test_inference_is_bitwise_repeatable():
    net = two_layer_example()
    x = np.array([0.123, -0.456])
    assert infer(net, x).tobytes() == infer(net, x).tobytes()


def test_zero_weights_propagate_biases():
    net = Network.from_arrays([np.zeros((3, 2)), np.zeros((2, 3))], [[-1.0, 0.5, 2.0], [0.25, -0.75]])
    for x in ([0, 0], [5, -3]):
        np.testing.assert_array_equal(infer(net, np.array(x, dtype=float)), [0.25, -0.75])


def test_random_net_against_straight_line_reference():
    rng = np.random.default_rng(11)
    sizes = [2, 4, 4, 2]
    Ws = [rng.uniform(-1, 1, (b, a)) for a, b in zip(sizes[:-1], sizes[1:])]
    bs = [rng.uniform(-1, 1, b) for b in sizes[1:]]
    net = Network.from_arrays(Ws, bs)
    for x in rng.uniform(-3, 3, (100, 2)):
        h = list(x)
        for li, (W, b) in enumerate(zip(Ws, bs)):
            out = []
            for r in range(len(b)):
                acc = b[r]
                for c in range(len(h)):
                    acc += W[r][c] * h[c]
                out.append(max(acc, 0.0) if li < len(Ws) - 1 else acc)
            h = out
        np.testing.assert_allclose(infer(net, x), h, rtol=0, atol=1e-12)


def test_post_activation_dominates_pre_activation():
    net = two_layer_example()
    xs = np.random.default_rng(3).uniform(-2, 2, (200, 2))
    z = pre_activations(net, xs)
    post = np.maximum(z, 0.0)
    assert np.all(post >= 0) and np.all(post >= z)


def test_wrong_input_dimension_raises():
    with pytest.raises(InputShapeError):
        infer(two_layer_example(), np.zeros(3))


def test_layers_are_read_only():
    net = two_layer_example()
    with pytest.raises(ValueError):
        net.layers[0].weights[0, 0] = 1.0


def test_flat_index_round_trip():
    net = Network.from_arrays([np.ones((3, 2)), np.ones((4, 3)), np.ones((1, 4))], [np.zeros(3), np.zeros(4), np.zeros(1)])
    assert net.hidden_sizes == (3, 4)
    assert net.num_hidden == 7
    for k in range(net.num_hidden):
        assert net.flat_index(net.neuron_id(k)) == k
    assert net.neuron_id(3) == (1, 0)


def test_validate_reports_dimension_mismatch():
    net = Network([AffineLayer(np.ones((3, 2)), np.zeros(3)), AffineLayer(np.ones((1, 4)), np.zeros(1))], input_dim=2)
    problems = validate(net)
    assert any("4 columns" in p and "3 outputs" in p for p in problems)


def test_validate_reports_non_finite_bias():
    net = Network([AffineLayer(np.ones((2, 2)), np.array([0.0, np.nan])), AffineLayer(np.ones((1, 2)), np.zeros(1))], input_dim=2)
    problems = validate(net)
    assert any("layer 0, neuron 1" in p and "bias" in p for p in problems)


def test_validate_accepts_consistent_network():
    assert validate(two_layer_example()) == []


def test_empty_network_is_rejected():
    assert validate(Network([], input_dim=2)) == ["network has no layers"]


def test_validate_reports_empty_layer():
    net = Network([AffineLayer(np.zeros((0, 2)), np.zeros(0)), AffineLayer(np.ones((1, 0)), np.zeros(1))], input_dim=2)
    assert any("empty layer" in p for p in validate(net))


@settings(max_examples=50, deadline=None)
@given(
    sizes=st.lists(st.integers(1, 5), min_size=2, max_size=5),
    seed=st.integers(0, 2**31 - 1),
)
def test_relu_outputs_are_piecewise_affine(sizes, seed):
    # along a segment that keeps the activation pattern, the output is affine
    rng = np.random.default_rng(seed)
    net = Network.from_arrays(
        [rng.normal(size=(b, a)) for a, b in zip(sizes[:-1], sizes[1:])],
        [rng.normal(size=b) for b in sizes[1:]],
    )
    x = rng.normal(size=sizes[0])
    d = rng.normal(size=sizes[0]) * 1e-7
    z0, z1, z2 = (pre_activations(net, x + t * d) for t in (0.0, 1.0, 2.0))
    if net.num_hidden and not np.array_equal(np.sign(z0), np.sign(z2)):
        return
    y0, y1, y2 = (infer(net, x + t * d) for t in (0.0, 1.0, 2.0))
    np.testing.assert_allclose(y1 - y0, y2 - y1, atol=1e-12)
