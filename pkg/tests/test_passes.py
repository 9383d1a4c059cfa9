import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_graph
from passgym.bench import generate_benchmark, generate_suite
from passgym.ir import GraphBuilder, OpKind, evaluate, op_count, random_bindings, validate
from passgym.passes import (
    DEFAULT_CATALOG,
    CatalogError,
    apply_pass,
    build_catalog,
    default_pipeline_converges,
    run_default_pipeline,
    run_pipeline,
)

CAT = DEFAULT_CATALOG
P = {name: CAT.id_of(name) for name in CAT.names}


def close(a, b, rtol=1e-9):
    return np.allclose(a, b, rtol=rtol, atol=1e-12 * max(1.0, float(np.max(np.abs(b)))))


def test_catalog_shape():
    assert CAT.size == 12
    assert CAT.names[:4] == ["constant-folding", "dce", "cse", "identity-elim"]
    assert [CAT.names[i] for i in CAT.default_pipeline] == [
        "constant-folding", "identity-elim", "zero-elim", "neg-neg-elim", "exp-log-elim", "transpose-folding",
        "reshape-folding", "broadcast-folding", "algebraic-simplify", "strength-reduce-div", "cse", "dce"]
    assert CAT.default_pipeline_rounds == 3
    lines = CAT.listing().splitlines()
    assert len(lines) == 12 and lines[1].split("\t")[:2] == ["1", "dce"]
    assert CAT.fingerprint == build_catalog().fingerprint


def test_unknown_pass():
    b = GraphBuilder()
    g = b.build(b.parameter((2,)))
    with pytest.raises(CatalogError):
        apply_pass(g, 12)
    with pytest.raises(CatalogError):
        apply_pass(g, -1)
    with pytest.raises(CatalogError):
        CAT.id_of("loop-unroll")


def test_constant_folding_example():
    b = GraphBuilder()
    g = b.build(b.add(b.constant([2.0]), b.constant([3.0])))
    out, changed = apply_pass(g, P["constant-folding"])
    assert changed
    root = out.node(out.root)
    assert root.kind is OpKind.CONSTANT
    np.testing.assert_array_equal(evaluate(out, {}), [5.0])


def test_dce_example():
    b = GraphBuilder()
    x = b.parameter((2,))
    for _ in range(3):
        b.add(x, x)
    g = b.build(x)
    out, changed = apply_pass(g, P["dce"])
    assert changed and op_count(g) - op_count(out) == 3
    assert op_count(out) == 0


def test_identity_elim_then_dce():
    # %0 x, %1 Const{1,1}, %2 Multiply(%0, %1)
    b = GraphBuilder()
    x = b.parameter((2,))
    g = b.build(b.multiply(x, b.constant([1.0, 1.0])))
    assert op_count(g) == 2
    after_ie, changed = apply_pass(g, P["identity-elim"])
    assert changed
    assert after_ie.root == x
    assert op_count(after_ie) == 1  # the orphaned constant stays behind
    after_dce, changed = apply_pass(after_ie, P["dce"])
    assert changed and op_count(after_dce) == 0


def test_dce_keeps_parameters():
    b = GraphBuilder()
    x = b.parameter((2,))
    b.parameter((3,))
    g = b.build(b.negate(x))
    out, changed = apply_pass(g, P["dce"])
    assert not changed
    assert sum(n.kind is OpKind.PARAMETER for n in out.nodes) == 2


def _single(pass_name, build):
    b = GraphBuilder()
    root = build(b)
    g = b.build(root)
    return g, *apply_pass(g, P[pass_name])


def test_individual_rewrites():
    g, out, changed = _single("zero-elim", lambda b: b.multiply(b.parameter((2,)), b.constant([0.0, 0.0])))
    assert changed and out.node(out.root).kind is OpKind.CONSTANT

    g, out, changed = _single("neg-neg-elim", lambda b: b.negate(b.negate(b.parameter((2,)))))
    assert changed and out.root == 0

    g, out, changed = _single("exp-log-elim", lambda b: b.log(b.exp(b.parameter((2,)))))
    assert changed and out.root == 0

    g, out, changed = _single("transpose-folding",
                              lambda b: b.transpose(b.transpose(b.parameter((2, 3)), (1, 0)), (1, 0)))
    assert changed and out.root == 0

    def three(b):
        x = b.parameter((2, 3, 4))
        return b.transpose(b.transpose(x, (1, 2, 0)), (1, 2, 0))

    g, out, changed = _single("transpose-folding", three)
    root = out.node(out.root)
    assert changed and root.kind is OpKind.TRANSPOSE and root.operands == (0,)

    g, out, changed = _single("reshape-folding", lambda b: b.reshape(b.reshape(b.parameter((2, 3)), (6,)), (3, 2)))
    root = out.node(out.root)
    assert changed and root.kind is OpKind.RESHAPE and root.operands == (0,)

    g, out, changed = _single("broadcast-folding",
                              lambda b: b.broadcast(b.broadcast(b.parameter((3,)), (2, 3), (1,)), (4, 2, 3), (1, 2)))
    root = out.node(out.root)
    assert changed and root.kind is OpKind.BROADCAST and root.operands == (0,)

    def sub_self(b):
        x = b.parameter((2,))
        return b.subtract(x, x)

    g, out, changed = _single("algebraic-simplify", sub_self)
    assert changed and out.node(out.root).kind is OpKind.CONSTANT

    def max_self(b):
        x = b.parameter((2,))
        return b.maximum(x, x)

    g, out, changed = _single("algebraic-simplify", max_self)
    assert changed and out.root == 0

    g, out, changed = _single("strength-reduce-div", lambda b: b.divide(b.parameter((2,)), b.constant([4.0, 8.0])))
    assert changed and out.node(out.root).kind is OpKind.MULTIPLY

    g, out, changed = _single("strength-reduce-div", lambda b: b.divide(b.parameter((2,)), b.constant([4.0, 0.0])))
    assert not changed


def test_cse_keeps_earliest():
    b = GraphBuilder()
    x = b.parameter((2,))
    e1 = b.exp(x)
    e2 = b.exp(x)
    g = b.build(b.add(e1, e2))
    out, changed = apply_pass(g, P["cse"])
    root = out.node(out.root)
    assert changed and root.operands == (e1, e1)


def test_passes_run_to_fixed_point():
    b = GraphBuilder()
    x = b.parameter((2,))
    g = b.build(b.negate(b.negate(b.negate(b.negate(x)))))
    out, _ = apply_pass(g, P["neg-neg-elim"])
    assert out.root == x
    again, changed = apply_pass(out, P["neg-neg-elim"])
    assert not changed and again is out


def test_run_pipeline_examples():
    b = GraphBuilder()
    g = b.build(b.add(b.constant([1.0]), b.constant([2.0])))
    assert run_pipeline(g, []) is g
    out = run_pipeline(g, [P["constant-folding"], P["dce"]])
    assert len(out.nodes) == 1 and out.nodes[0].kind is OpKind.CONSTANT


def test_default_pipeline_examples():
    b = GraphBuilder()
    x = b.parameter((2,))
    g = b.build(b.exp(b.log(x)))
    out = run_default_pipeline(g)
    assert out.node(out.root).kind is OpKind.PARAMETER and op_count(out) == 0

    b = GraphBuilder()
    x = b.parameter((2,))
    minimal = b.build(b.tanh(x))
    assert run_default_pipeline(minimal) is minimal


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 25), st.integers(0, 11))
def test_pass_preserves_semantics(seed, n, pass_id):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    out, changed = apply_pass(g, pass_id)
    assert validate(out) == []
    if not changed:
        assert out == g
    for _ in range(2):
        bindings = random_bindings(g, rng)
        before = evaluate(g, bindings)
        if not np.all(np.isfinite(before)):
            continue
        assert close(evaluate(out, bindings), before)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 11), max_size=8))
def test_pipeline_composition_agrees_with_stepping(seed, sequence):
    g = random_graph(np.random.default_rng(seed), 15)
    stepped = g
    for pid in sequence:
        stepped, _ = apply_pass(stepped, pid)
    assert op_count(run_pipeline(g, sequence)) == op_count(stepped)
    assert apply_pass(g, sequence[0] if sequence else 0) == apply_pass(g, sequence[0] if sequence else 0)


def test_default_pipeline_never_increases_ops():
    for bench in generate_suite(100, (20, 120), 42):
        assert op_count(run_default_pipeline(bench.graph)) <= op_count(bench.graph)


def test_default_pipeline_idempotent_without_cascades():
    for seed in range(60):
        g = generate_benchmark(seed, cascade_share=0.0).graph
        assert default_pipeline_converges(g)
        once = run_default_pipeline(g)
        assert run_default_pipeline(once) == once


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_default_pipeline_idempotent_on_random_graphs(seed, n):
    g = random_graph(np.random.default_rng(seed), n)
    once = run_default_pipeline(g)
    assert run_default_pipeline(once) == once


def test_round_cap_can_stop_short_of_a_fixed_point():
    # Each cascade level needs a full round (simplify then forward) before the next
    # level becomes visible, so a deep enough cascade outlasts three rounds.
    b = GraphBuilder()
    v = b.parameter((2,))
    t = b.add(v, b.subtract(b.tanh(v), b.tanh(v)))
    for _ in range(4):
        t = b.add(t, b.subtract(t, v))
        t = b.multiply(t, b.divide(t, v))
    g = b.build(b.tanh(t))
    once = run_default_pipeline(g)
    if default_pipeline_converges(g):
        pytest.skip("this cascade converges within the round cap")
    assert run_default_pipeline(once) != once
    assert op_count(run_default_pipeline(once)) <= op_count(once)


def test_generated_graphs_have_headroom():
    for seed in range(40):
        bench = generate_benchmark(seed)
        assert op_count(run_default_pipeline(bench.graph)) < op_count(bench.graph)
