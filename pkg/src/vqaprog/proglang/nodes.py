"""AST node types for the generated-program language.

The grammar is deliberately tiny: straight-line statements, one loop form,
if/elif/else, and expressions over whitelisted calls. Anything else never
gets a node.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Node:
    line: int = field(default=0, kw_only=True)
    col: int = field(default=0, kw_only=True)


# --- expressions ---


@dataclass(frozen=True)
class Literal(Node):
    value: str | int | float


@dataclass(frozen=True)
class Name(Node):
    id: str


@dataclass(frozen=True)
class Call(Node):
    name: str
    args: tuple


@dataclass(frozen=True)
class BinOp(Node):
    op: str  # + - * / %
    lhs: Node
    rhs: Node


@dataclass(frozen=True)
class Compare(Node):
    op: str  # == != < <= > >=
    lhs: Node
    rhs: Node


@dataclass(frozen=True)
class BoolOp(Node):
    op: str  # and | or
    operands: tuple


@dataclass(frozen=True)
class UnaryNot(Node):
    operand: Node


@dataclass(frozen=True)
class TupleExpr(Node):
    items: tuple


# --- statements ---


@dataclass(frozen=True)
class Assign(Node):
    targets: tuple[str, ...]  # one name, or several for coordinate unpacking
    expr: Node


@dataclass(frozen=True)
class AugAssign(Node):
    name: str
    op: str  # += or -=
    expr: Node


@dataclass(frozen=True)
class For(Node):
    loop_var: str
    iterable: Node
    body: "Block"


@dataclass(frozen=True)
class If(Node):
    branches: tuple  # ((condition, Block), ...) for if/elif chain
    else_body: "Block | None"


@dataclass(frozen=True)
class ExprStmt(Node):
    expr: Node


@dataclass(frozen=True)
class Block(Node):
    statements: tuple


def to_json_obj(node: Node):
    """JSON-friendly rendering of an AST, used by the parse CLI command."""
    if isinstance(node, Literal):
        return {"node": "literal", "value": node.value}
    if isinstance(node, Name):
        return {"node": "name", "id": node.id}
    if isinstance(node, Call):
        return {"node": "call", "name": node.name, "args": [to_json_obj(a) for a in node.args]}
    if isinstance(node, BinOp):
        return {"node": "binop", "op": node.op, "lhs": to_json_obj(node.lhs), "rhs": to_json_obj(node.rhs)}
    if isinstance(node, Compare):
        return {"node": "compare", "op": node.op, "lhs": to_json_obj(node.lhs), "rhs": to_json_obj(node.rhs)}
    if isinstance(node, BoolOp):
        return {"node": "boolop", "op": node.op, "operands": [to_json_obj(o) for o in node.operands]}
    if isinstance(node, UnaryNot):
        return {"node": "not", "operand": to_json_obj(node.operand)}
    if isinstance(node, TupleExpr):
        return {"node": "tuple", "items": [to_json_obj(i) for i in node.items]}
    if isinstance(node, Assign):
        return {"node": "assign", "targets": list(node.targets), "expr": to_json_obj(node.expr)}
    if isinstance(node, AugAssign):
        return {"node": "augassign", "name": node.name, "op": node.op, "expr": to_json_obj(node.expr)}
    if isinstance(node, For):
        return {
            "node": "for",
            "loop_var": node.loop_var,
            "iterable": to_json_obj(node.iterable),
            "body": to_json_obj(node.body),
        }
    if isinstance(node, If):
        return {
            "node": "if",
            "branches": [
                {"condition": to_json_obj(cond), "body": to_json_obj(body)} for cond, body in node.branches
            ],
            "else": to_json_obj(node.else_body) if node.else_body is not None else None,
        }
    if isinstance(node, ExprStmt):
        return {"node": "expr_stmt", "expr": to_json_obj(node.expr)}
    if isinstance(node, Block):
        return {"node": "block", "statements": [to_json_obj(s) for s in node.statements]}
    raise TypeError(f"unknown node type: {type(node).__name__}")


def to_text(node: Node, indent: int = 0) -> str:
    """Indented one-node-per-line rendering of an AST."""
    pad = "  " * indent
    if isinstance(node, Literal):
        return f"{pad}Literal {node.value!r}"
    if isinstance(node, Name):
        return f"{pad}Name {node.id}"
    if isinstance(node, Call):
        lines = [f"{pad}Call {node.name}"]
        lines += [to_text(a, indent + 1) for a in node.args]
        return "\n".join(lines)
    if isinstance(node, BinOp):
        return "\n".join([f"{pad}BinOp {node.op}", to_text(node.lhs, indent + 1), to_text(node.rhs, indent + 1)])
    if isinstance(node, Compare):
        return "\n".join([f"{pad}Compare {node.op}", to_text(node.lhs, indent + 1), to_text(node.rhs, indent + 1)])
    if isinstance(node, BoolOp):
        return "\n".join([f"{pad}BoolOp {node.op}"] + [to_text(o, indent + 1) for o in node.operands])
    if isinstance(node, UnaryNot):
        return "\n".join([f"{pad}Not", to_text(node.operand, indent + 1)])
    if isinstance(node, TupleExpr):
        return "\n".join([f"{pad}Tuple"] + [to_text(i, indent + 1) for i in node.items])
    if isinstance(node, Assign):
        return "\n".join([f"{pad}Assign {', '.join(node.targets)}", to_text(node.expr, indent + 1)])
    if isinstance(node, AugAssign):
        return "\n".join([f"{pad}AugAssign {node.name} {node.op}", to_text(node.expr, indent + 1)])
    if isinstance(node, For):
        return "\n".join(
            [f"{pad}For {node.loop_var}", to_text(node.iterable, indent + 1), to_text(node.body, indent + 1)]
        )
    if isinstance(node, If):
        lines = [f"{pad}If"]
        for cond, body in node.branches:
            lines.append(to_text(cond, indent + 1))
            lines.append(to_text(body, indent + 1))
        if node.else_body is not None:
            lines.append(f"{pad}  Else")
            lines.append(to_text(node.else_body, indent + 2))
        return "\n".join(lines)
    if isinstance(node, ExprStmt):
        return "\n".join([f"{pad}ExprStmt", to_text(node.expr, indent + 1)])
    if isinstance(node, Block):
        return "\n".join([f"{pad}Block"] + [to_text(s, indent + 1) for s in node.statements])
    raise TypeError(f"unknown node type: {type(node).__name__}")


__all__ = [
    "Assign",
    "AugAssign",
    "BinOp",
    "Block",
    "BoolOp",
    "Call",
    "Compare",
    "ExprStmt",
    "For",
    "If",
    "Literal",
    "Name",
    "Node",
    "TupleExpr",
    "UnaryNot",
    "to_json_obj",
    "to_text",
]
