"""Miniature HLO-like tensor-graph IR.

A :class:`Graph` is an immutable, topologically ordered tuple of :class:`Node`
values with a single root.  The module also provides validation, a float64
reference interpreter, cost analysis and the 17-slot observation vector used
by the environment.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np


class OpKind(enum.IntEnum):
    PARAMETER = 0
    CONSTANT = 1
    ADD = 2
    SUBTRACT = 3
    MULTIPLY = 4
    DIVIDE = 5
    NEGATE = 6
    MAXIMUM = 7
    EXP = 8
    LOG = 9
    TANH = 10
    DOT = 11
    TRANSPOSE = 12
    RESHAPE = 13
    BROADCAST = 14
    REDUCE_SUM = 15

    @property
    def text(self) -> str:
        return _TEXT_NAMES[self]

    @classmethod
    def from_text(cls, name: str) -> "OpKind":
        try:
            return _KIND_BY_TEXT[name]
        except KeyError:
            raise ValueError(f"unknown op kind {name!r}") from None


_TEXT_NAMES = {
    OpKind.PARAMETER: "parameter",
    OpKind.CONSTANT: "constant",
    OpKind.ADD: "add",
    OpKind.SUBTRACT: "subtract",
    OpKind.MULTIPLY: "multiply",
    OpKind.DIVIDE: "divide",
    OpKind.NEGATE: "negate",
    OpKind.MAXIMUM: "maximum",
    OpKind.EXP: "exp",
    OpKind.LOG: "log",
    OpKind.TANH: "tanh",
    OpKind.DOT: "dot",
    OpKind.TRANSPOSE: "transpose",
    OpKind.RESHAPE: "reshape",
    OpKind.BROADCAST: "broadcast",
    OpKind.REDUCE_SUM: "reduce-sum",
}
_KIND_BY_TEXT = {v: k for k, v in _TEXT_NAMES.items()}

NUM_KINDS = len(OpKind)
OBSERVATION_SIZE = NUM_KINDS + 1

TRANSCENDENTAL = frozenset({OpKind.EXP, OpKind.LOG, OpKind.TANH})
ELEMENTWISE_BINARY = frozenset(
    {OpKind.ADD, OpKind.SUBTRACT, OpKind.MULTIPLY, OpKind.DIVIDE, OpKind.MAXIMUM}
)
ELEMENTWISE_UNARY = frozenset({OpKind.NEGATE, OpKind.EXP, OpKind.LOG, OpKind.TANH})

ARITY = {
    OpKind.PARAMETER: 0,
    OpKind.CONSTANT: 0,
    OpKind.DOT: 2,
    OpKind.TRANSPOSE: 1,
    OpKind.RESHAPE: 1,
    OpKind.BROADCAST: 1,
    OpKind.REDUCE_SUM: 1,
    **{k: 2 for k in ELEMENTWISE_BINARY},
    **{k: 1 for k in ELEMENTWISE_UNARY},
}

# The single attribute each kind carries, if any.
ATTR_NAME = {
    OpKind.CONSTANT: "literal",
    OpKind.TRANSPOSE: "perm",
    OpKind.BROADCAST: "dims",
    OpKind.REDUCE_SUM: "reduce",
}


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy a kind's shape rule."""


class ValidationError(ValueError):
    """A graph failed ``validate``."""


class BindingError(ValueError):
    """Raised when interpreter bindings are missing or mis-shaped."""


@dataclass(frozen=True)
class TensorShape:
    dims: tuple[int, ...] = ()
    dtype: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if any(d < 1 for d in self.dims):
            raise ShapeError(f"non-positive dimension in {self.dims}")
        if self.dtype != "f32":
            raise ShapeError(f"unsupported dtype {self.dtype!r}")

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def element_count(self) -> int:
        return math.prod(self.dims)

    def __str__(self) -> str:
        return f"{self.dtype}[{','.join(map(str, self.dims))}]"


@dataclass(frozen=True)
class Node:
    id: int
    kind: OpKind
    operands: tuple[int, ...]
    shape: TensorShape
    # Sorted (name, values) pairs; at most one entry in practice.
    attrs: tuple[tuple[str, tuple], ...] = ()

    def attr(self, name: str) -> tuple:
        for key, value in self.attrs:
            if key == name:
                return value
        raise KeyError(f"node %{self.id} ({self.kind.text}) has no attribute {name!r}")

    @property
    def literal(self) -> tuple[float, ...]:
        return self.attr("literal")


@dataclass(frozen=True)
class Graph:
    nodes: tuple[Node, ...]
    root: int
    name: str = field(default="graph", compare=False)

    @cached_property
    def _hash(self) -> int:
        return hash((self.nodes, self.root))

    def __hash__(self) -> int:
        return self._hash

    @cached_property
    def by_id(self) -> dict[int, Node]:
        return {n.id: n for n in self.nodes}

    def node(self, node_id: int) -> Node:
        return self.by_id[node_id]

    def __len__(self) -> int:
        return len(self.nodes)

    def reachable(self) -> set[int]:
        """Ids of nodes reachable from the root."""
        seen = set()
        stack = [self.root]
        by_id = self.by_id
        while stack:
            nid = stack.pop()
            if nid in seen or nid not in by_id:
                continue
            seen.add(nid)
            stack.extend(by_id[nid].operands)
        return seen

    @property
    def parameters(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == OpKind.PARAMETER]

    def renamed(self, name: str) -> "Graph":
        return Graph(self.nodes, self.root, name)


def make_node(node_id, kind, operands, dims, attrs=None) -> Node:
    """Build a node, normalising attribute payloads into hashable tuples."""
    pairs = []
    for key, value in sorted((attrs or {}).items()):
        if key == "literal":
            value = tuple(float(v) for v in np.asarray(value, dtype=np.float64).ravel())
        else:
            value = tuple(int(v) for v in value)
        pairs.append((key, value))
    return Node(int(node_id), OpKind(kind), tuple(int(o) for o in operands), TensorShape(tuple(dims)), tuple(pairs))


def infer_shape(kind: OpKind, operand_shapes: Sequence[TensorShape], node: Node | None = None,
                attrs: Mapping[str, tuple] | None = None) -> TensorShape | None:
    """Result shape implied by the operands, or ``None`` for leaf kinds.

    ``Reshape`` and ``Broadcast`` take their target from the node's own shape,
    so for those kinds the declared shape is checked for consistency instead.
    """
    if attrs is None:
        attrs = dict(node.attrs) if node is not None else {}
    if kind in (OpKind.PARAMETER, OpKind.CONSTANT):
        return None
    if kind in ELEMENTWISE_BINARY:
        a, b = operand_shapes
        if a.dims != b.dims:
            raise ShapeError(f"elementwise operands differ: {a} vs {b}")
        return a
    if kind in ELEMENTWISE_UNARY:
        return operand_shapes[0]
    if kind == OpKind.DOT:
        a, b = operand_shapes
        if a.rank != 2 or b.rank != 2 or a.dims[1] != b.dims[0]:
            raise ShapeError(f"dot needs [m,k]x[k,n], got {a} and {b}")
        return TensorShape((a.dims[0], b.dims[1]))
    if kind == OpKind.TRANSPOSE:
        (a,) = operand_shapes
        perm = attrs.get("perm")
        if perm is None or sorted(perm) != list(range(a.rank)):
            raise ShapeError(f"perm {perm} is not a permutation of rank {a.rank}")
        return TensorShape(tuple(a.dims[p] for p in perm))
    if kind == OpKind.REDUCE_SUM:
        (a,) = operand_shapes
        dims = attrs.get("reduce")
        if dims is None or list(dims) != sorted(set(dims)) or any(d < 0 or d >= a.rank for d in dims):
            raise ShapeError(f"reduce dims {dims} invalid for rank {a.rank}")
        return TensorShape(tuple(d for i, d in enumerate(a.dims) if i not in dims))
    if kind == OpKind.RESHAPE:
        (a,) = operand_shapes
        if node is None:
            raise ShapeError("reshape target comes from the declared shape")
        if a.element_count != node.shape.element_count:
            raise ShapeError(f"reshape {a} -> {node.shape} changes element count")
        return node.shape
    if kind == OpKind.BROADCAST:
        (a,) = operand_shapes
        if node is None:
            raise ShapeError("broadcast target comes from the declared shape")
        mapped = attrs.get("dims")
        target = node.shape.dims
        if mapped is None or len(mapped) != a.rank:
            raise ShapeError(f"broadcast dims {mapped} do not cover operand rank {a.rank}")
        if list(mapped) != sorted(set(mapped)) or any(m < 0 or m >= len(target) for m in mapped):
            raise ShapeError(f"broadcast dims {mapped} must be increasing indices into {node.shape}")
        if any(a.dims[i] != target[m] for i, m in enumerate(mapped)):
            raise ShapeError(f"broadcast {a} does not embed into {node.shape} via {mapped}")
        return node.shape
    raise ShapeError(f"no shape rule for {kind!r}")


def validate(graph: Graph) -> list[str]:
    """Return every invariant violation as ``"%id: message"``; empty means valid."""
    problems = []
    seen: dict[int, Node] = {}
    for node in graph.nodes:
        prefix = f"%{node.id} ({node.kind.text})"
        if node.id < 0:
            problems.append(f"{prefix}: negative id")
        if node.id in seen:
            problems.append(f"{prefix}: duplicate id")
        arity = ARITY[node.kind]
        if len(node.operands) != arity:
            problems.append(f"{prefix}: arity error, expected {arity} operands, got {len(node.operands)}")
            seen.setdefault(node.id, node)
            continue
        late = [o for o in node.operands if o not in seen]
        if late:
            problems.append(f"{prefix}: ordering error, operands {late} do not precede this node")
            seen.setdefault(node.id, node)
            continue
        name = ATTR_NAME.get(node.kind)
        keys = [k for k, _ in node.attrs]
        if keys != ([name] if name else []):
            problems.append(f"{prefix}: attribute error, expected {[name] if name else []}, got {keys}")
        elif node.kind == OpKind.CONSTANT and len(node.literal) != node.shape.element_count:
            problems.append(f"{prefix}: literal has {len(node.literal)} values for shape {node.shape}")
        else:
            try:
                expected = infer_shape(node.kind, [seen[o].shape for o in node.operands], node)
            except ShapeError as exc:
                problems.append(f"{prefix}: shape error, {exc}")
            else:
                if expected is not None and expected != node.shape:
                    problems.append(f"{prefix}: shape error, declared {node.shape} but rule gives {expected}")
        seen.setdefault(node.id, node)
    if graph.root not in seen:
        problems.append(f"root %{graph.root} is not a node of the graph")
    return problems


def check_valid(graph: Graph) -> Graph:
    problems = validate(graph)
    if problems:
        raise ValidationError(f"invalid graph {graph.name!r}: " + "; ".join(problems))
    return graph


def constant_array(node: Node) -> np.ndarray:
    return np.asarray(node.literal, dtype=np.float64).reshape(node.shape.dims)


def apply_op(node: Node, args: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate one non-leaf node on already-computed operand arrays."""
    kind = node.kind
    with np.errstate(all="ignore"):
        if kind == OpKind.ADD:
            return args[0] + args[1]
        if kind == OpKind.SUBTRACT:
            return args[0] - args[1]
        if kind == OpKind.MULTIPLY:
            return args[0] * args[1]
        if kind == OpKind.DIVIDE:
            return args[0] / args[1]
        if kind == OpKind.MAXIMUM:
            return np.maximum(args[0], args[1])
        if kind == OpKind.NEGATE:
            return -args[0]
        if kind == OpKind.EXP:
            return np.exp(args[0])
        if kind == OpKind.LOG:
            return np.log(args[0])
        if kind == OpKind.TANH:
            return np.tanh(args[0])
        if kind == OpKind.DOT:
            return args[0] @ args[1]
        if kind == OpKind.TRANSPOSE:
            return np.ascontiguousarray(np.transpose(args[0], node.attr("perm")))
        if kind == OpKind.RESHAPE:
            return np.reshape(args[0], node.shape.dims)
        if kind == OpKind.BROADCAST:
            mapped = node.attr("dims")
            target = node.shape.dims
            expanded = np.reshape(args[0], tuple(target[d] if d in mapped else 1 for d in range(len(target))))
            return np.broadcast_to(expanded, target).copy()
        if kind == OpKind.REDUCE_SUM:
            return np.sum(args[0], axis=node.attr("reduce"))
    raise ValueError(f"cannot evaluate {kind!r}")


def evaluate(graph: Graph, bindings: Mapping[int, np.ndarray]) -> np.ndarray:
    """Compute the root value in float64.

    ``bindings`` maps every Parameter id to an array of that parameter's shape.
    """
    values: dict[int, np.ndarray] = {}
    for param in graph.parameters:
        if param.id not in bindings:
            raise BindingError(f"no binding for parameter %{param.id}")
        value = np.asarray(bindings[param.id], dtype=np.float64)
        if value.shape != param.shape.dims:
            raise BindingError(f"binding for %{param.id} has shape {value.shape}, expected {param.shape.dims}")
        values[param.id] = value
    live = graph.reachable()
    for node in graph.nodes:
        if node.id not in live or node.kind == OpKind.PARAMETER:
            continue
        if node.kind == OpKind.CONSTANT:
            values[node.id] = constant_array(node)
        else:
            values[node.id] = apply_op(node, [values[o] for o in node.operands])
    return np.asarray(values[graph.root], dtype=np.float64)


def random_bindings(graph: Graph, rng: np.random.Generator) -> dict[int, np.ndarray]:
    """Positive-ish random inputs so Log/Divide stay mostly finite."""
    return {p.id: rng.uniform(0.5, 2.0, size=p.shape.dims) for p in graph.parameters}


@dataclass(frozen=True)
class CostAnalysis:
    op_count: int
    per_kind: tuple[int, ...]
    flop_count: int
    transcendental_count: int

    def as_dict(self) -> dict:
        return {
            "op_count": self.op_count,
            "flop_count": self.flop_count,
            "transcendental_count": self.transcendental_count,
            "per_kind": {k.text: c for k, c in zip(OpKind, self.per_kind)},
        }


_ELEMENTWISE_FLOPS = frozenset(
    {OpKind.ADD, OpKind.SUBTRACT, OpKind.MULTIPLY, OpKind.DIVIDE, OpKind.NEGATE, OpKind.MAXIMUM}
)


def cost_analysis(graph: Graph) -> CostAnalysis:
    per_kind = [0] * NUM_KINDS
    flops = 0
    transcendental = 0
    by_id = graph.by_id
    for node in graph.nodes:
        per_kind[node.kind] += 1
        n = node.shape.element_count
        if node.kind in _ELEMENTWISE_FLOPS:
            flops += n
        elif node.kind in TRANSCENDENTAL:
            flops += n
            transcendental += n
        elif node.kind == OpKind.DOT:
            m, k = by_id[node.operands[0]].shape.dims
            flops += 2 * m * k * node.shape.dims[1]
        elif node.kind == OpKind.REDUCE_SUM:
            flops += by_id[node.operands[0]].shape.element_count
    op_count = len(graph.nodes) - per_kind[OpKind.PARAMETER]
    return CostAnalysis(op_count, tuple(per_kind), flops, transcendental)


def op_count(graph: Graph) -> int:
    return sum(1 for n in graph.nodes if n.kind != OpKind.PARAMETER)


def observation(graph: Graph) -> np.ndarray:
    """``[op_count, count(kind_0), ..., count(kind_15)]`` as float64."""
    counts = np.zeros(OBSERVATION_SIZE)
    for node in graph.nodes:
        counts[1 + node.kind] += 1
    counts[0] = counts[1:].sum() - counts[1 + OpKind.PARAMETER]
    return counts


def canonicalize(graph: Graph) -> Graph:
    """Renumber node ids to their positions in the node list."""
    remap = {n.id: i for i, n in enumerate(graph.nodes)}
    if all(k == v for k, v in remap.items()):
        return graph
    nodes = tuple(
        Node(remap[n.id], n.kind, tuple(remap[o] for o in n.operands), n.shape, n.attrs) for n in graph.nodes
    )
    return Graph(nodes, remap[graph.root], graph.name)


class GraphBuilder:
    """Append-only helper that infers result shapes.

    >>> b = GraphBuilder("demo")
    >>> x = b.parameter([2, 2])
    >>> g = b.build(b.add(x, x))
    >>> cost_analysis(g).op_count
    1
    """

    def __init__(self, name: str = "graph"):
        self.name = name
        self.nodes: list[Node] = []

    def shape(self, node_id: int) -> tuple[int, ...]:
        return self.nodes[node_id].shape.dims

    def _push(self, kind, operands, dims, attrs=None) -> int:
        node = make_node(len(self.nodes), kind, operands, dims, attrs)
        expected = infer_shape(kind, [self.nodes[o].shape for o in operands], node)
        if expected is not None and expected != node.shape:
            raise ShapeError(f"{kind.text}: declared {node.shape}, rule gives {expected}")
        self.nodes.append(node)
        return node.id

    def parameter(self, dims) -> int:
        return self._push(OpKind.PARAMETER, (), dims)

    def constant(self, values, dims=None) -> int:
        arr = np.asarray(values, dtype=np.float64)
        dims = arr.shape if dims is None else tuple(dims)
        if arr.size == 1 and math.prod(dims) != 1:
            arr = np.full(dims, float(arr.ravel()[0]))
        return self._push(OpKind.CONSTANT, (), dims, {"literal": arr})

    def _binary(self, kind, a, b) -> int:
        return self._push(kind, (a, b), self.shape(a))

    def add(self, a, b):
        return self._binary(OpKind.ADD, a, b)

    def subtract(self, a, b):
        return self._binary(OpKind.SUBTRACT, a, b)

    def multiply(self, a, b):
        return self._binary(OpKind.MULTIPLY, a, b)

    def divide(self, a, b):
        return self._binary(OpKind.DIVIDE, a, b)

    def maximum(self, a, b):
        return self._binary(OpKind.MAXIMUM, a, b)

    def unary(self, kind: OpKind, a) -> int:
        return self._push(kind, (a,), self.shape(a))

    def negate(self, a):
        return self.unary(OpKind.NEGATE, a)

    def exp(self, a):
        return self.unary(OpKind.EXP, a)

    def log(self, a):
        return self.unary(OpKind.LOG, a)

    def tanh(self, a):
        return self.unary(OpKind.TANH, a)

    def dot(self, a, b):
        return self._push(OpKind.DOT, (a, b), (self.shape(a)[0], self.shape(b)[1]))

    def transpose(self, a, perm):
        dims = self.shape(a)
        return self._push(OpKind.TRANSPOSE, (a,), tuple(dims[p] for p in perm), {"perm": perm})

    def reshape(self, a, dims):
        return self._push(OpKind.RESHAPE, (a,), dims)

    def broadcast(self, a, dims, mapped):
        return self._push(OpKind.BROADCAST, (a,), dims, {"dims": mapped})

    def reduce_sum(self, a, reduce):
        reduce = tuple(sorted(reduce))
        dims = tuple(d for i, d in enumerate(self.shape(a)) if i not in reduce)
        return self._push(OpKind.REDUCE_SUM, (a,), dims, {"reduce": reduce})

    def build(self, root: int) -> Graph:
        return Graph(tuple(self.nodes), root, self.name)


def structurally_equal(a: Graph, b: Graph) -> bool:
    return canonicalize(a) == canonicalize(b)

