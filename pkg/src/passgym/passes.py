"""Catalog of deterministic, semantics-preserving rewrite passes.

Every pass rewrites to a fixed point within one call.  A rewrite either
replaces a node in place (same id, e.g. folding to a Constant) or forwards
all uses of the node to another node and drops it.  Operands orphaned by a
rewrite are left behind; only ``dce`` removes unreachable nodes, which is what
makes pass order matter.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from passgym.ir import Graph, Node, OpKind, TensorShape, apply_op, constant_array, make_node

MAX_SWEEPS = 1000


class CatalogError(KeyError):
    """Unknown pass id or name."""


# A rule looks at one node (operands already remapped) and returns None, an id
# to forward to, or a replacement Node.  It may emit extra nodes via ``emit``.
Rule = Callable[["_Sweep", Node], "int | Node | None"]


class _Sweep:
    """One topological pass over the graph applying a rule to every node."""

    def __init__(self, graph: Graph):
        self.graph = graph
        self.nodes: dict[int, Node] = {}
        self.order: list[int] = []
        self.next_id = max(n.id for n in graph.nodes) + 1
        self.fired = False
        self.memo: dict = {}

    def get(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def emit(self, kind, operands, dims, attrs=None) -> int:
        """Insert a fresh node before the node currently being rewritten."""
        node = make_node(self.next_id, kind, operands, dims, attrs)
        self.next_id += 1
        self.nodes[node.id] = node
        self.order.append(node.id)
        return node.id

    def run(self, rule: Rule) -> Graph:
        remap: dict[int, int] = {}
        for node in self.graph.nodes:
            if node.operands:
                node = Node(node.id, node.kind, tuple(remap[o] for o in node.operands), node.shape, node.attrs)
            result = rule(self, node)
            if result is None:
                remap[node.id] = node.id
                self.nodes[node.id] = node
                self.order.append(node.id)
            elif isinstance(result, Node):
                self.fired = True
                remap[node.id] = result.id
                self.nodes[result.id] = result
                self.order.append(result.id)
            else:
                self.fired = True
                remap[node.id] = result
        if not self.fired:
            return self.graph
        return Graph(tuple(self.nodes[i] for i in self.order), remap[self.graph.root], self.graph.name)


def _fixed_point(graph: Graph, rule: Rule) -> Graph:
    for _ in range(MAX_SWEEPS):
        sweep = _Sweep(graph)
        out = sweep.run(rule)
        if not sweep.fired:
            return out
        graph = out
    raise RuntimeError(f"rewrite did not converge within {MAX_SWEEPS} sweeps")


def _is_const(node: Node) -> bool:
    return node.kind == OpKind.CONSTANT


def _all_equal(node: Node, value: float) -> bool:
    return node.kind == OpKind.CONSTANT and all(v == value for v in node.literal)


def _const_like(node: Node, value: float) -> Node:
    return make_node(node.id, OpKind.CONSTANT, (), node.shape.dims,
                     {"literal": np.full(node.shape.element_count, value)})


def _constant_folding(sw: _Sweep, node: Node):
    if not node.operands or not all(_is_const(sw.get(o)) for o in node.operands):
        return None
    value = apply_op(node, [constant_array(sw.get(o)) for o in node.operands])
    return make_node(node.id, OpKind.CONSTANT, (), node.shape.dims, {"literal": value})


def _cse(sw: _Sweep, node: Node):
    if node.kind == OpKind.PARAMETER:
        return None
    key = (node.kind, node.operands, node.shape, node.attrs)
    earlier = sw.memo.get(key)
    if earlier is not None:
        return earlier
    sw.memo[key] = node.id
    return None


def _identity_elim(sw: _Sweep, node: Node):
    if len(node.operands) != 2:
        return None
    a, b = node.operands
    na, nb = sw.get(a), sw.get(b)
    if node.kind == OpKind.ADD:
        if _all_equal(nb, 0.0):
            return a
        if _all_equal(na, 0.0):
            return b
    elif node.kind == OpKind.MULTIPLY:
        if _all_equal(nb, 1.0):
            return a
        if _all_equal(na, 1.0):
            return b
    elif node.kind == OpKind.SUBTRACT and _all_equal(nb, 0.0):
        return a
    elif node.kind == OpKind.DIVIDE and _all_equal(nb, 1.0):
        return a
    return None


def _zero_elim(sw: _Sweep, node: Node):
    if node.kind == OpKind.MULTIPLY and any(_all_equal(sw.get(o), 0.0) for o in node.operands):
        return _const_like(node, 0.0)
    return None


@dataclass(frozen=True)
class _UnaryPair:
    outer: OpKind
    inner: OpKind

    def __call__(self, sw: _Sweep, node: Node):
        if node.kind == self.outer:
            child = sw.get(node.operands[0])
            if child.kind == self.inner:
                return child.operands[0]
        return None


_neg_neg = _UnaryPair(OpKind.NEGATE, OpKind.NEGATE)
_exp_log = _UnaryPair(OpKind.EXP, OpKind.LOG)
_log_exp = _UnaryPair(OpKind.LOG, OpKind.EXP)


def _exp_log_elim(sw: _Sweep, node: Node):
    return _exp_log(sw, node) if node.kind == OpKind.EXP else _log_exp(sw, node)


def _transpose_folding(sw: _Sweep, node: Node):
    if node.kind != OpKind.TRANSPOSE:
        return None
    child = sw.get(node.operands[0])
    if child.kind != OpKind.TRANSPOSE:
        return None
    inner, outer = child.attr("perm"), node.attr("perm")
    composed = tuple(inner[p] for p in outer)
    source = child.operands[0]
    if composed == tuple(range(len(composed))):
        return source
    return make_node(node.id, OpKind.TRANSPOSE, (source,), node.shape.dims, {"perm": composed})


def _reshape_folding(sw: _Sweep, node: Node):
    if node.kind != OpKind.RESHAPE:
        return None
    child = sw.get(node.operands[0])
    if child.shape == node.shape:
        return child.id
    if child.kind == OpKind.RESHAPE:
        source = sw.get(child.operands[0])
        if source.shape == node.shape:
            return source.id
        return make_node(node.id, OpKind.RESHAPE, (source.id,), node.shape.dims)
    return None


def _broadcast_folding(sw: _Sweep, node: Node):
    if node.kind != OpKind.BROADCAST:
        return None
    child = sw.get(node.operands[0])
    if child.shape == node.shape:
        return child.id
    if child.kind == OpKind.BROADCAST:
        inner, outer = child.attr("dims"), node.attr("dims")
        composed = tuple(outer[d] for d in inner)
        return make_node(node.id, OpKind.BROADCAST, (child.operands[0],), node.shape.dims, {"dims": composed})
    return None


def _algebraic_simplify(sw: _Sweep, node: Node):
    if len(node.operands) != 2 or node.operands[0] != node.operands[1]:
        return None
    if node.kind == OpKind.SUBTRACT:
        return _const_like(node, 0.0)
    if node.kind == OpKind.DIVIDE:
        return _const_like(node, 1.0)
    if node.kind == OpKind.MAXIMUM:
        return node.operands[0]
    return None


def _strength_reduce_div(sw: _Sweep, node: Node):
    if node.kind != OpKind.DIVIDE:
        return None
    divisor = sw.get(node.operands[1])
    if not _is_const(divisor) or any(v == 0.0 for v in divisor.literal):
        return None
    reciprocal = sw.emit(OpKind.CONSTANT, (), divisor.shape.dims,
                         {"literal": 1.0 / np.asarray(divisor.literal, dtype=np.float64)})
    return Node(node.id, OpKind.MULTIPLY, (node.operands[0], reciprocal), node.shape)


def dead_code_elimination(graph: Graph) -> Graph:
    """Drop nodes unreachable from the root.  Parameters are kept: they are the
    graph's interface, not ops, and bindings refer to them by id."""
    live = graph.reachable()
    kept = tuple(n for n in graph.nodes if n.id in live or n.kind == OpKind.PARAMETER)
    if len(kept) == len(graph.nodes):
        return graph
    return Graph(kept, graph.root, graph.name)


@dataclass(frozen=True)
class _RulePass:
    """A rule lifted to a whole-graph transform; a class so catalogs pickle for worker processes."""

    rule: Rule

    def __call__(self, graph: Graph) -> Graph:
        return _fixed_point(graph, self.rule)


@dataclass(frozen=True)
class PassInfo:
    id: int
    name: str
    description: str
    transform: Callable[[Graph], Graph]


_PASS_TABLE = [
    ("constant-folding", "replace ops whose operands are all constants by the folded constant",
     _RulePass(_constant_folding)),
    ("dce", "remove nodes unreachable from the root", dead_code_elimination),
    ("cse", "merge structurally identical nodes, keeping the earliest", _RulePass(_cse)),
    ("identity-elim", "x+0, 0+x, x*1, 1*x, x-0, x/1 -> x", _RulePass(_identity_elim)),
    ("zero-elim", "x*0 -> constant 0", _RulePass(_zero_elim)),
    ("neg-neg-elim", "negate(negate(x)) -> x", _RulePass(_neg_neg)),
    ("exp-log-elim", "exp(log(x)) -> x and log(exp(x)) -> x", _RulePass(_exp_log_elim)),
    ("transpose-folding", "compose nested transposes; drop identity compositions",
     _RulePass(_transpose_folding)),
    ("reshape-folding", "collapse nested reshapes; drop reshapes to the operand's own shape",
     _RulePass(_reshape_folding)),
    ("broadcast-folding", "collapse nested broadcasts; drop broadcasts to the operand's own shape",
     _RulePass(_broadcast_folding)),
    ("algebraic-simplify", "x-x -> 0, x/x -> 1, max(x,x) -> x", _RulePass(_algebraic_simplify)),
    ("strength-reduce-div", "x / c -> x * (1/c) for constants c without zeros",
     _RulePass(_strength_reduce_div)),
]

DEFAULT_PIPELINE_NAMES = (
    "constant-folding", "identity-elim", "zero-elim", "neg-neg-elim", "exp-log-elim",
    "transpose-folding", "reshape-folding", "broadcast-folding", "algebraic-simplify",
    "strength-reduce-div", "cse", "dce",
)


@dataclass(frozen=True)
class Catalog:
    passes: tuple[PassInfo, ...]
    default_pipeline: tuple[int, ...]
    default_pipeline_rounds: int = 3

    def __post_init__(self):
        names = [p.name for p in self.passes]
        if len(set(names)) != len(names):
            raise ValueError("pass names must be unique")
        if [p.id for p in self.passes] != list(range(len(self.passes))):
            raise ValueError("pass ids must be 0..n-1 in order")
        if any(not 0 <= i < len(self.passes) for i in self.default_pipeline):
            raise ValueError("default pipeline references an unknown pass")
        if self.default_pipeline_rounds < 1:
            raise ValueError("default_pipeline_rounds must be positive")

    @property
    def size(self) -> int:
        return len(self.passes)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.passes]

    def __getitem__(self, pass_id: int) -> PassInfo:
        if not isinstance(pass_id, (int, np.integer)) or not 0 <= pass_id < len(self.passes):
            raise CatalogError(f"unknown pass id {pass_id!r} (catalog size {len(self.passes)})")
        return self.passes[int(pass_id)]

    def id_of(self, name: str) -> int:
        for p in self.passes:
            if p.name == name:
                return p.id
        raise CatalogError(f"unknown pass name {name!r}")

    def ids(self, names: Iterable[str]) -> list[int]:
        return [self.id_of(n) for n in names]

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.names).encode()).hexdigest()[:16]

    def listing(self) -> str:
        return "".join(f"{p.id}\t{p.name}\t{p.description}\n" for p in self.passes)


def build_catalog(rounds: int = 3) -> Catalog:
    passes = tuple(PassInfo(i, name, desc, fn) for i, (name, desc, fn) in enumerate(_PASS_TABLE))
    names = [p.name for p in passes]
    return Catalog(passes, tuple(names.index(n) for n in DEFAULT_PIPELINE_NAMES), rounds)


DEFAULT_CATALOG = build_catalog()


@lru_cache(maxsize=1 << 16)
def _cached_transform(catalog: Catalog, pass_id: int, graph: Graph) -> Graph:
    return catalog[pass_id].transform(graph)


def apply_pass(graph: Graph, pass_id: int, catalog: Catalog = DEFAULT_CATALOG) -> tuple[Graph, bool]:
    """Apply one catalog pass; returns ``(new_graph, changed)``.

    Passes are pure, so results are memoised on the (structurally hashed) graph.
    """
    catalog[pass_id]  # validates the id
    out = _cached_transform(catalog, int(pass_id), graph)
    changed = out != graph
    if out.name != graph.name:
        out = out.renamed(graph.name)
    return (out if changed else graph), changed


def run_pipeline(graph: Graph, sequence: Sequence[int], catalog: Catalog = DEFAULT_CATALOG) -> Graph:
    for pass_id in sequence:
        graph, _ = apply_pass(graph, pass_id, catalog)
    return graph


def run_default_pipeline(graph: Graph, catalog: Catalog = DEFAULT_CATALOG) -> Graph:
    """Run the default pipeline until a round changes nothing or the round cap is hit."""
    for _ in range(catalog.default_pipeline_rounds):
        any_changed = False
        for pass_id in catalog.default_pipeline:
            graph, changed = apply_pass(graph, pass_id, catalog)
            any_changed |= changed
        if not any_changed:
            break
    return graph


def default_pipeline_converges(graph: Graph, catalog: Catalog = DEFAULT_CATALOG) -> bool:
    """True when the round-capped default pipeline reaches its fixed point."""
    out = run_default_pipeline(graph, catalog)
    return all(not apply_pass(out, p, catalog)[1] for p in catalog.default_pipeline)
