import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_graph
from passgym.ir import (
    OBSERVATION_SIZE,
    BindingError,
    Graph,
    GraphBuilder,
    OpKind,
    ShapeError,
    TensorShape,
    cost_analysis,
    evaluate,
    make_node,
    observation,
    op_count,
    random_bindings,
    structurally_equal,
    validate,
)


def test_opkind_layout():
    assert len(OpKind) == 16
    assert OpKind.PARAMETER == 0 and OpKind.REDUCE_SUM == 15
    assert OpKind.from_text("reduce-sum") is OpKind.REDUCE_SUM
    assert OBSERVATION_SIZE == 17


def test_tensor_shape():
    assert TensorShape(()).element_count == 1
    assert TensorShape((2, 3)).element_count == 6
    assert str(TensorShape((2, 2))) == "f32[2,2]"
    with pytest.raises(ShapeError):
        TensorShape((2, 0))


def test_validate_minimal_graph():
    b = GraphBuilder()
    x = b.parameter((2, 2))
    assert validate(b.build(b.add(x, x))) == []


def test_validate_shape_mismatch_names_node():
    p0 = make_node(0, OpKind.PARAMETER, (), (2, 2))
    p1 = make_node(1, OpKind.PARAMETER, (), (3, 3))
    add = make_node(2, OpKind.ADD, (0, 1), (2, 2))
    problems = validate(Graph((p0, p1, add), 2))
    assert len(problems) == 1
    assert problems[0].startswith("%2 (add)") and "shape" in problems[0]


def test_validate_ordering():
    p0 = make_node(0, OpKind.PARAMETER, (), (2,))
    n1 = make_node(1, OpKind.NEGATE, (2,), (2,))
    p2 = make_node(2, OpKind.PARAMETER, (), (2,))
    problems = validate(Graph((p0, n1, p2), 1))
    assert len(problems) == 1 and "ordering" in problems[0] and problems[0].startswith("%1")


def test_validate_arity_and_root():
    p0 = make_node(0, OpKind.PARAMETER, (), (2,))
    bad = make_node(1, OpKind.ADD, (0,), (2,))
    assert any("arity" in p for p in validate(Graph((p0, bad), 1)))
    assert any("root" in p for p in validate(Graph((p0,), 7)))


def test_evaluate_examples():
    b = GraphBuilder()
    g = b.build(b.add(b.constant([1.0, 2.0]), b.constant([3.0, 4.0])))
    np.testing.assert_array_equal(evaluate(g, {}), [4.0, 6.0])

    b = GraphBuilder()
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    g = b.build(b.dot(b.constant(np.eye(2)), b.constant(m)))
    np.testing.assert_array_equal(evaluate(g, {}), m)

    b = GraphBuilder()
    g = b.build(b.exp(b.log(b.constant([5.0]))))
    np.testing.assert_allclose(evaluate(g, {}), [5.0], rtol=1e-12)


def test_evaluate_index_ops():
    b = GraphBuilder()
    x = b.parameter((2, 3))
    t = b.transpose(x, (1, 0))
    r = b.reshape(t, (6,))
    bc = b.broadcast(b.reduce_sum(x, (1,)), (2, 3), (0,))
    g = b.build(b.add(bc, b.reshape(r, (2, 3))))
    v = np.arange(6.0).reshape(2, 3)
    want = v.sum(axis=1)[:, None] + v.T.reshape(2, 3)
    np.testing.assert_array_equal(evaluate(g, {0: v}), want)


def test_evaluate_binding_errors():
    b = GraphBuilder()
    x = b.parameter((2,))
    g = b.build(b.negate(x))
    with pytest.raises(BindingError):
        evaluate(g, {})
    with pytest.raises(BindingError):
        evaluate(g, {0: np.zeros(3)})


def test_log_of_negative_is_ieee():
    b = GraphBuilder()
    g = b.build(b.log(b.constant([-1.0, 0.0])))
    out = evaluate(g, {})
    assert np.isnan(out[0]) and out[1] == -np.inf


def test_cost_examples():
    b = GraphBuilder()
    g = b.build(b.add(b.parameter((4,)), b.parameter((4,))))
    c = cost_analysis(g)
    assert (c.op_count, c.flop_count, c.transcendental_count) == (1, 4, 0)

    b = GraphBuilder()
    g = b.build(b.dot(b.parameter((2, 3)), b.parameter((3, 4))))
    assert cost_analysis(g).flop_count == 48

    b = GraphBuilder()
    x = b.parameter((8,))
    g = b.build(b.add(b.exp(x), x))
    c = cost_analysis(g)
    assert (c.flop_count, c.transcendental_count) == (16, 8)


def test_cost_reduce_and_index_ops():
    b = GraphBuilder()
    x = b.parameter((2, 3))
    r = b.reduce_sum(b.transpose(x, (1, 0)), (0,))
    g = b.build(b.broadcast(r, (4, 2), (1,)))
    c = cost_analysis(g)
    assert c.flop_count == 6
    assert c.op_count == 3


def test_observation_examples():
    b = GraphBuilder()
    g = b.build(b.parameter((2,)))
    want = np.zeros(17)
    want[1 + OpKind.PARAMETER] = 1
    np.testing.assert_array_equal(observation(g), want)

    b = GraphBuilder()
    xs = [b.parameter((2,)) for _ in range(3)]
    g = b.build(b.add(b.add(xs[0], xs[1]), b.exp(xs[2])))
    obs = observation(g)
    assert obs[0] == 3 and obs[1 + OpKind.ADD] == 2 and obs[1 + OpKind.EXP] == 1
    assert obs[1 + OpKind.PARAMETER] == 3


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_invariants_on_random_graphs(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    assert validate(g) == []
    c = cost_analysis(g)
    assert c.op_count == sum(c.per_kind) - c.per_kind[OpKind.PARAMETER] == op_count(g)
    assert c.flop_count >= c.transcendental_count >= 0
    assert observation(g)[0] == c.op_count
    bindings = random_bindings(g, rng)
    a, b2 = evaluate(g, bindings), evaluate(g, bindings)
    assert a.tobytes() == b2.tobytes()


def test_cost_is_structural():
    g = random_graph(np.random.default_rng(3), 15)
    assert cost_analysis(g) == cost_analysis(g.renamed("other"))
    assert structurally_equal(g, g.renamed("other"))
