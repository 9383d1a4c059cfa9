"""Textual ``.mg`` format: one node per line, then ``ROOT %id``.

::

    # graph: demo
    %0 = f32[2,2] parameter()
    %1 = f32[2,2] add(%0, %0)
    ROOT %1

Attributes follow the operand list: ``literal={...}`` (row-major),
``perm={...}``, ``dims={...}`` and ``reduce={...}``.  ``#`` starts a comment;
the special comment ``# graph: <name>`` on any line sets the graph name.
"""

from __future__ import annotations

import re
from pathlib import Path

from passgym.ir import ARITY, ATTR_NAME, Graph, OpKind, ShapeError, infer_shape, make_node


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


_NODE_RE = re.compile(
    r"^%(?P<id>\d+)\s*=\s*(?P<dtype>\w+)\[(?P<dims>[^\]]*)\]\s+(?P<kind>[a-z][a-z\-]*)"
    r"\((?P<operands>[^)]*)\)\s*(?P<attrs>.*)$"
)
_ROOT_RE = re.compile(r"^ROOT\s+%(?P<id>\d+)$")
_ATTR_RE = re.compile(r"(?P<key>[a-z]+)=\{(?P<values>[^}]*)\}")
_NAME_RE = re.compile(r"^#\s*graph:\s*(?P<name>\S+)\s*$")


def _format_number(value: float) -> str:
    return repr(float(value))


def emit_text(graph: Graph) -> str:
    lines = [f"# graph: {graph.name}"]
    for node in graph.nodes:
        operands = ", ".join(f"%{o}" for o in node.operands)
        line = f"%{node.id} = {node.shape} {node.kind.text}({operands})"
        if node.attrs:
            parts = []
            for key, values in node.attrs:
                fmt = _format_number if key == "literal" else str
                parts.append(f"{key}={{{','.join(fmt(v) for v in values)}}}")
            line += " " + ", ".join(parts)
        lines.append(line)
    lines.append(f"ROOT %{graph.root}")
    return "\n".join(lines) + "\n"


def _ints(text: str, line: int, what: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise ParseError(line, f"malformed {what} list {text!r}") from None


def _parse_attrs(text: str, line: int) -> dict:
    attrs = {}
    rest = text.strip()
    while rest:
        m = _ATTR_RE.match(rest)
        if not m:
            raise ParseError(line, f"malformed attribute text {rest!r}")
        key, values = m.group("key"), m.group("values")
        if key in attrs:
            raise ParseError(line, f"duplicate attribute {key!r}")
        if key == "literal":
            try:
                attrs[key] = tuple(float(v) for v in values.split(",")) if values.strip() else ()
            except ValueError:
                raise ParseError(line, f"malformed literal {values!r}") from None
        else:
            attrs[key] = _ints(values, line, key)
        rest = rest[m.end():].lstrip()
        if rest.startswith(","):
            rest = rest[1:].lstrip()
    return attrs


def parse_text(text: str, name: str | None = None) -> Graph:
    """Parse ``.mg`` text; node ids are renumbered to their line order."""
    nodes = []
    remap: dict[int, int] = {}
    root = None
    graph_name = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        m = _NAME_RE.match(stripped)
        if m:
            graph_name = m.group("name")
            continue
        stripped = stripped.split("#", 1)[0].strip()
        if not stripped:
            continue
        if root is not None:
            raise ParseError(lineno, "content after ROOT line")
        m = _ROOT_RE.match(stripped)
        if m:
            rid = int(m.group("id"))
            if rid not in remap:
                raise ParseError(lineno, f"ROOT refers to undefined node %{rid}")
            root = remap[rid]
            continue
        m = _NODE_RE.match(stripped)
        if not m:
            raise ParseError(lineno, f"syntax error in {stripped!r}")
        nid = int(m.group("id"))
        if nid in remap:
            raise ParseError(lineno, f"duplicate node id %{nid}")
        if m.group("dtype") != "f32":
            raise ParseError(lineno, f"unsupported dtype {m.group('dtype')!r}")
        try:
            kind = OpKind.from_text(m.group("kind"))
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        dims = _ints(m.group("dims"), lineno, "dimension")
        operand_text = m.group("operands").strip()
        operands = []
        if operand_text:
            for tok in operand_text.split(","):
                tok = tok.strip()
                if not re.fullmatch(r"%\d+", tok):
                    raise ParseError(lineno, f"malformed operand {tok!r}")
                ref = int(tok[1:])
                if ref not in remap:
                    raise ParseError(lineno, f"operand %{ref} is not defined before use")
                operands.append(remap[ref])
        if len(operands) != ARITY[kind]:
            raise ParseError(lineno, f"arity error: {kind.text} takes {ARITY[kind]} operands, got {len(operands)}")
        attrs = _parse_attrs(m.group("attrs"), lineno)
        expected_attr = ATTR_NAME.get(kind)
        if sorted(attrs) != ([expected_attr] if expected_attr else []):
            raise ParseError(lineno, f"{kind.text} expects attributes {[expected_attr] if expected_attr else []}, got {sorted(attrs)}")
        try:
            node = make_node(len(nodes), kind, operands, dims, attrs)
            if kind == OpKind.CONSTANT and len(node.literal) != node.shape.element_count:
                raise ShapeError(f"literal has {len(node.literal)} values for {node.shape}")
            expected = infer_shape(kind, [nodes[o].shape for o in operands], node)
            if expected is not None and expected != node.shape:
                raise ShapeError(f"declared {node.shape} but operands give {expected}")
        except ShapeError as exc:
            raise ParseError(lineno, f"shape error: {exc}") from None
        remap[nid] = node.id
        nodes.append(node)
    if root is None:
        raise ParseError(len(text.splitlines()) + 1, "missing ROOT line")
    return Graph(tuple(nodes), root, name or graph_name or "graph")


def read_graph(path) -> Graph:
    path = Path(path)
    graph = parse_text(path.read_text(encoding="utf-8"))
    if graph.name == "graph":
        graph = graph.renamed(path.stem)
    return graph


def write_graph(graph: Graph, path) -> None:
    Path(path).write_text(emit_text(graph), encoding="utf-8")


__all__ = ["ParseError", "emit_text", "parse_text", "read_graph", "write_graph"]
