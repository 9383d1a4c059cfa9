"""Build a small graph, look at it, and watch the passes shrink it."""
import numpy as np

from passgym.ir import GraphBuilder, cost_analysis, evaluate, observation, random_bindings
from passgym.passes import DEFAULT_CATALOG, apply_pass, run_default_pipeline
from passgym.text import emit_text, parse_text

## A graph with some obvious waste: x*1, a dead exp, log(exp(.)) and a foldable constant
b = GraphBuilder("demo")
x = b.parameter((2, 3))
w = b.parameter((3, 4))
one = b.constant(np.ones((2, 3)))
xs = b.multiply(x, one)
b.exp(xs)                      # never used
h = b.dot(xs, w)
bias = b.add(b.constant([1.0, 2.0, 3.0, 4.0]), b.constant([0.5, 0.5, 0.5, 0.5]))
y = b.log(b.exp(b.add(h, b.broadcast(bias, (2, 4), (1,)))))
g = b.build(b.tanh(y))

text = emit_text(g)
print(text)
assert parse_text(text) == g
print(cost_analysis(g))
print("observation:", observation(g))

## One pass at a time
for name in ["identity-elim", "exp-log-elim", "constant-folding", "dce"]:
    pid = DEFAULT_CATALOG.id_of(name)
    out, changed = apply_pass(g, pid)
    print(f"{name:18s} changed={changed!s:5s} ops {cost_analysis(g).op_count} -> {cost_analysis(out).op_count}")

## Every pass is applied to a fixed point, so order matters more than repetition
seq = ["dce", "identity-elim"]
g1 = g
for name in seq:
    g1, _ = apply_pass(g1, DEFAULT_CATALOG.id_of(name))
g2 = g
for name in reversed(seq):
    g2, _ = apply_pass(g2, DEFAULT_CATALOG.id_of(name))
print("dce then identity-elim:", cost_analysis(g1).op_count)
print("identity-elim then dce:", cost_analysis(g2).op_count)

## The default pipeline, and a check that meaning survived
opt = run_default_pipeline(g)
print(emit_text(opt))
rng = np.random.default_rng(0)
bind = random_bindings(g, rng)
print("max abs difference:", np.max(np.abs(evaluate(g, bind) - evaluate(opt, bind))))
