import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from manifold_relu import (InputShapeError, NumericOverflowError, PreconditionError, ReluNetwork, SparseLayer,
                           build_square, compose_serial, eval_network, from_affine, identity_network,
                           load_network, measure_meta, pad_to_depth, save_network, stack_parallel)
from manifold_relu.network import IDENTITY, RELU


def triangle():
    # g(x) = 2ReLU(x) - 4ReLU(x - 1/2) + 2ReLU(x - 1)
    hidden = SparseLayer([0, 1, 2], [0, 0, 0], [1.0, 1.0, 1.0], [0.0, -0.5, -1.0], (3, 1), RELU)
    out = SparseLayer([0, 0, 0], [0, 1, 2], [2.0, -4.0, 2.0], [0.0], (1, 3), IDENTITY)
    return ReluNetwork([hidden, out])


def test_relu_kills_negatives():
    net = ReluNetwork([SparseLayer([0], [0], [1.0], [0.0], (1, 1), RELU)])
    assert eval_network(net, [-2.0]).tolist() == [0.0]


def test_triangle_peak_and_kappa():
    g = triangle()
    assert eval_network(g, [0.5])[0] == 1.0
    assert measure_meta(g).weight_bound_kappa == 4.0


def test_lane_pair_identity():
    net = pad_to_depth(from_affine([[1.0]], [0.0]), 2)
    assert eval_network(net, [0.3])[0] == 0.3
    assert eval_network(net, [-0.3])[0] == -0.3


def test_compose_triangles_gives_g2():
    g = triangle()
    gg = compose_serial(g, g)
    x = np.linspace(0, 1, 1001)[:, None]
    ref = g(g(x))
    assert np.max(np.abs(gg(x) - ref)) <= 1e-12
    assert gg(np.array([[0.25]]))[0, 0] == 1.0


def test_compose_identity_is_noop():
    sq = build_square(3)
    x = np.random.default_rng(0).random((1000, 1))
    assert np.array_equal(compose_serial(identity_network(1), sq)(x), sq(x))


def test_compose_square_then_scale():
    net = compose_serial(build_square(2), from_affine([[4.0]], [0.0]))
    assert abs(eval_network(net, [0.5])[0] - 1.0) <= 4 * 2.0 ** -6


def test_compose_shape_mismatch():
    with pytest.raises(InputShapeError):
        compose_serial(from_affine(np.eye(2), np.zeros(2)), build_square(2))


def test_compose_relu_last_is_additive():
    hidden = SparseLayer([0, 1], [0, 0], [1.0, -1.0], [0.0, 0.0], (2, 1), RELU)
    a = ReluNetwork([hidden])
    b = from_affine([[1.0, -1.0]], [0.0])
    c = compose_serial(a, b)
    assert c.meta.nonzeros_K == a.meta.nonzeros_K + b.meta.nonzeros_K


def test_stack_single_and_pair():
    sq = build_square(3)
    assert stack_parallel([sq]) is sq
    both = stack_parallel([sq, sq], share_input=False)
    out = eval_network(both, [0.5, 0.25])
    assert out[0] == eval_network(sq, [0.5])[0]
    assert out[1] == eval_network(sq, [0.25])[0]
    assert both.meta.width_p == 2 * sq.meta.width_p


def test_stack_shared_input_shape_check():
    with pytest.raises(InputShapeError):
        stack_parallel([identity_network(1), identity_network(2)])


def test_pad_exact_and_growth():
    sq = build_square(3)
    assert pad_to_depth(sq, sq.depth) is sq
    x = np.linspace(0, 1, 1000)[:, None]
    K = [pad_to_depth(sq, sq.depth + e).meta.nonzeros_K for e in range(1, 5)]
    assert np.diff(K).tolist() == [4, 4, 4]
    assert np.max(np.abs(pad_to_depth(sq, sq.depth + 3)(x) - sq(x))) == 0.0
    with pytest.raises(PreconditionError):
        pad_to_depth(sq, 1)


def test_from_affine_arithmetic():
    net = from_affine([[1.0, 1.0]], [-1.0])
    assert math.isclose(eval_network(net, [0.4, 0.9])[0], 0.3, abs_tol=1e-15)
    assert np.array_equal(identity_network(3)(np.eye(3)), np.eye(3))
    with pytest.raises(NumericOverflowError):
        from_affine([[np.inf]], [0.0])


def test_meta_single_weight():
    m = measure_meta(from_affine([[1.0]], [0.0]))
    assert (m.depth_L, m.nonzeros_K) == (1, 1)


def test_square_meta_per_block():
    for N in range(1, 8):
        m = build_square(N).meta
        assert m.depth_L == N + 1
        assert m.nonzeros_K <= 12 * (N + 1)
        assert m.nonzeros_K <= m.depth_L * m.width_p * (m.width_p + 1)


def test_layer_validation():
    with pytest.raises(Exception):
        SparseLayer([0, 0], [0, 0], [1.0, 2.0], [0.0], (1, 1), RELU)
    with pytest.raises(Exception):
        SparseLayer([3], [0], [1.0], [0.0], (1, 1), RELU)
    with pytest.raises(Exception):
        SparseLayer([0], [0], [np.nan], [0.0], (1, 1), RELU)
    ident = SparseLayer([0], [0], [1.0], [0.0], (1, 1), IDENTITY)
    with pytest.raises(Exception):
        ReluNetwork([ident, ident])


def test_eval_pure_and_shape_error():
    sq = build_square(4)
    x = np.random.default_rng(1).random((500, 1))
    assert np.array_equal(sq(x), sq(x))
    with pytest.raises(InputShapeError):
        sq(np.zeros((3, 2)))


def test_serialization_round_trip(tmp_path):
    net = stack_parallel([build_square(3), compose_serial(triangle(), triangle())], share_input=False)
    path = tmp_path / "net.json"
    save_network(net, path)
    back = load_network(path)
    assert back == net
    for a, b in zip(net.layers, back.layers):
        for u, v in zip(a.triplets(), b.triplets()):
            assert np.array_equal(u, v)
    assert ReluNetwork.from_dict(net.to_dict()) == net


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(-3, 3), st.integers(1, 4))
def test_combinators_exact(w, b, extra):
    rng = np.random.default_rng(0)
    X = rng.uniform(-2, 2, (200, 2))
    aff = from_affine([w], [b])
    ref = triangle()(aff(X))
    comp = compose_serial(aff, triangle())
    assert np.max(np.abs(comp(X) - ref)) <= 1e-12 * max(1.0, np.abs(ref).max())
    padded = pad_to_depth(comp, comp.depth + extra)
    assert np.array_equal(padded(X), comp(X))
