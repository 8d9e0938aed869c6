"""Sandboxed tree-walking interpreter for parsed programs.

Execution is total: any program either produces an answer string or a typed
runtime error within the configured limits. Runtime errors are ordinary
results (the caller's fallback trigger), never Python exceptions escaping
to the harness.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple

from .nodes import (
    Assign,
    AugAssign,
    BinOp,
    Block,
    BoolOp,
    Call,
    Compare,
    ExprStmt,
    For,
    If,
    Literal,
    Name,
    Node,
    TupleExpr,
    UnaryNot,
)
from .parser import BUILTIN_FUNCTIONS


@dataclass(frozen=True)
class InterpreterLimits:
    max_steps: int = 10_000
    max_loop_iterations: int = 1_000
    max_primitive_calls: int = 256

    def __post_init__(self):
        if min(self.max_steps, self.max_loop_iterations, self.max_primitive_calls) < 1:
            raise ValueError("interpreter limits must be strictly positive")


class ImageHandle(NamedTuple):
    ref: str


class Pos(NamedTuple):
    x: float
    y: float


class RuntimeErrorKind(Enum):
    UNBOUND_NAME = "UnboundName"
    TYPE_MISMATCH = "TypeMismatch"
    CONVERSION_FAILURE = "ConversionFailure"
    MISSING_ANSWER = "MissingAnswer"
    STEP_BUDGET_EXCEEDED = "StepBudgetExceeded"
    PRIMITIVE_FAILURE = "PrimitiveFailure"
    DIVISION_BY_ZERO = "DivisionByZero"


class ProgRuntimeError(Exception):
    def __init__(self, kind: RuntimeErrorKind, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{kind.value}: {message} (line {line}, column {column})")
        self.kind = kind
        self.message = message
        self.line = line
        self.column = column


class PrimitiveError(Exception):
    """Raised by a primitive dispatcher to signal a backend-level failure."""


@dataclass(frozen=True)
class PrimitiveCall:
    name: str
    args: tuple
    result: object
    ok: bool = True

    def to_json_obj(self) -> dict:
        return {
            "name": self.name,
            "args": [format_value(a) for a in self.args],
            "result": format_value(self.result) if self.ok else None,
            "ok": self.ok,
            "error": None if self.ok else str(self.result),
        }


@dataclass
class ExecutionResult:
    answer: str | None
    error: ProgRuntimeError | None
    trace: list[PrimitiveCall] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.error is None


def type_name(v) -> str:
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    if isinstance(v, float):
        return "float"
    if isinstance(v, str):
        return "str"
    if isinstance(v, ImageHandle):
        return "image"
    if isinstance(v, Pos):
        return "pos"
    if isinstance(v, tuple):
        if all(isinstance(item, ImageHandle) for item in v):
            return "image list"
        return "list"
    if v is None:
        return "none"
    return "opaque"


def format_value(v) -> str:
    """Compact, deterministic rendering of a value for traces."""
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, ImageHandle):
        return f"<image {v.ref}>"
    if isinstance(v, Pos):
        return f"({v.x:g}, {v.y:g})"
    if isinstance(v, tuple):
        return "[" + ", ".join(format_value(item) for item in v) + "]"
    if isinstance(v, (int, float, str)):
        return repr(v)
    if v is None:
        return "none"
    return f"<{type(v).__name__}>"


def stringify_answer(v) -> str:
    """Map a terminal `answer` value to its answer string.

    Int -> decimal, Bool -> yes/no, Str -> itself, Float -> shortest decimal
    without trailing zeros. Anything else is not answer-like.
    """
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return v
    if isinstance(v, float):
        s = repr(v)
        if "e" not in s and "E" not in s and "." in s:
            s = s.rstrip("0").rstrip(".")
            if not s or s == "-":
                s = "0"
        return s
    raise ProgRuntimeError(
        RuntimeErrorKind.TYPE_MISMATCH,
        f"value of type {type_name(v)} cannot be an answer",
    )


class _Interpreter:
    def __init__(self, dispatch, images, limits: InterpreterLimits, env: dict | None, rng):
        self.dispatch = dispatch
        self.images = tuple(images)
        self.limits = limits
        self.env: dict[str, object] = dict(env) if env else {}
        self.rng = rng
        self.steps = 0
        self.primitive_calls = 0
        self.trace: list[PrimitiveCall] = []

    # --- bookkeeping ---

    def tick(self, node: Node) -> None:
        self.steps += 1
        if self.steps > self.limits.max_steps:
            raise ProgRuntimeError(
                RuntimeErrorKind.STEP_BUDGET_EXCEEDED,
                f"exceeded {self.limits.max_steps} evaluation steps",
                node.line,
                node.col,
            )

    def fail(self, kind: RuntimeErrorKind, message: str, node: Node) -> ProgRuntimeError:
        return ProgRuntimeError(kind, message, node.line, node.col)

    # --- statements ---

    def exec_block(self, block: Block) -> None:
        for stmt in block.statements:
            self.exec_stmt(stmt)

    def exec_stmt(self, stmt) -> None:
        self.tick(stmt)
        if isinstance(stmt, Assign):
            value = self.eval(stmt.expr)
            self.bind_targets(stmt, value)
        elif isinstance(stmt, AugAssign):
            if stmt.name not in self.env:
                raise self.fail(RuntimeErrorKind.UNBOUND_NAME, f"name '{stmt.name}' is not bound", stmt)
            current = self.env[stmt.name]
            delta = self.eval(stmt.expr)
            op = "+" if stmt.op == "+=" else "-"
            self.env[stmt.name] = self.apply_binop(op, current, delta, stmt)
        elif isinstance(stmt, For):
            self.exec_for(stmt)
        elif isinstance(stmt, If):
            self.exec_if(stmt)
        elif isinstance(stmt, ExprStmt):
            self.eval(stmt.expr)
        else:
            raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, f"unexpected statement {type(stmt).__name__}", stmt)

    def bind_targets(self, stmt: Assign, value) -> None:
        if len(stmt.targets) == 1:
            self.env[stmt.targets[0]] = value
            return
        if isinstance(value, Pos) and len(stmt.targets) == 2:
            self.env[stmt.targets[0]] = value.x
            self.env[stmt.targets[1]] = value.y
            return
        raise self.fail(
            RuntimeErrorKind.TYPE_MISMATCH,
            f"cannot unpack {type_name(value)} into {len(stmt.targets)} names",
            stmt,
        )

    def exec_for(self, stmt: For) -> None:
        iterable = self.eval(stmt.iterable)
        if not (isinstance(iterable, tuple) and not isinstance(iterable, (Pos, ImageHandle))):
            raise self.fail(
                RuntimeErrorKind.TYPE_MISMATCH, f"cannot iterate over {type_name(iterable)}", stmt
            )
        if not all(isinstance(item, ImageHandle) for item in iterable):
            raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, "loops iterate over image lists only", stmt)
        for i, item in enumerate(iterable):
            if i >= self.limits.max_loop_iterations:
                raise self.fail(
                    RuntimeErrorKind.STEP_BUDGET_EXCEEDED,
                    f"loop exceeded {self.limits.max_loop_iterations} iterations",
                    stmt,
                )
            self.env[stmt.loop_var] = item
            self.exec_block(stmt.body)

    def exec_if(self, stmt: If) -> None:
        for condition, body in stmt.branches:
            value = self.eval(condition)
            if not isinstance(value, bool):
                raise self.fail(
                    RuntimeErrorKind.TYPE_MISMATCH,
                    f"condition must be a bool, got {type_name(value)}",
                    stmt,
                )
            if value:
                self.exec_block(body)
                return
        if stmt.else_body is not None:
            self.exec_block(stmt.else_body)

    # --- expressions ---

    def eval(self, node: Node):
        self.tick(node)
        if isinstance(node, Literal):
            return node.value
        if isinstance(node, Name):
            if node.id not in self.env:
                raise self.fail(RuntimeErrorKind.UNBOUND_NAME, f"name '{node.id}' is not bound", node)
            return self.env[node.id]
        if isinstance(node, Call):
            return self.eval_call(node)
        if isinstance(node, BinOp):
            lhs = self.eval(node.lhs)
            rhs = self.eval(node.rhs)
            return self.apply_binop(node.op, lhs, rhs, node)
        if isinstance(node, Compare):
            lhs = self.eval(node.lhs)
            rhs = self.eval(node.rhs)
            return self.apply_compare(node.op, lhs, rhs, node)
        if isinstance(node, BoolOp):
            return self.eval_boolop(node)
        if isinstance(node, UnaryNot):
            value = self.eval(node.operand)
            if not isinstance(value, bool):
                raise self.fail(
                    RuntimeErrorKind.TYPE_MISMATCH, f"'not' requires a bool, got {type_name(value)}", node
                )
            return not value
        if isinstance(node, TupleExpr):
            items = [self.eval(item) for item in node.items]
            if len(items) == 2 and all(isinstance(i, (int, float)) and not isinstance(i, bool) for i in items):
                return Pos(float(items[0]), float(items[1]))
            raise self.fail(
                RuntimeErrorKind.TYPE_MISMATCH,
                "tuple expressions must be a pair of numbers (a position)",
                node,
            )
        raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, f"unexpected expression {type(node).__name__}", node)

    def eval_boolop(self, node: BoolOp) -> bool:
        # short-circuit left to right; every evaluated operand must be a bool
        for i, operand in enumerate(node.operands):
            value = self.eval(operand)
            if not isinstance(value, bool):
                raise self.fail(
                    RuntimeErrorKind.TYPE_MISMATCH,
                    f"'{node.op}' requires bool operands, got {type_name(value)}",
                    node,
                )
            if node.op == "and" and not value:
                return False
            if node.op == "or" and value:
                return True
        return node.op == "and"

    def is_number(self, v) -> bool:
        return isinstance(v, (int, float)) and not isinstance(v, bool)

    def apply_binop(self, op: str, lhs, rhs, node: Node):
        if isinstance(lhs, str) and isinstance(rhs, str):
            if op == "+":
                return lhs + rhs
            raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, f"'{op}' is not defined on strings", node)
        if not (self.is_number(lhs) and self.is_number(rhs)):
            raise self.fail(
                RuntimeErrorKind.TYPE_MISMATCH,
                f"'{op}' requires numbers, got {type_name(lhs)} and {type_name(rhs)}",
                node,
            )
        if op == "+":
            return lhs + rhs
        if op == "-":
            return lhs - rhs
        if op == "*":
            return lhs * rhs
        if op == "/":
            if rhs == 0:
                raise self.fail(RuntimeErrorKind.DIVISION_BY_ZERO, "division by zero", node)
            return lhs / rhs
        if op == "%":
            if rhs == 0:
                raise self.fail(RuntimeErrorKind.DIVISION_BY_ZERO, "modulo by zero", node)
            return lhs % rhs
        raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, f"unknown operator '{op}'", node)

    def apply_compare(self, op: str, lhs, rhs, node: Node) -> bool:
        if self.is_number(lhs) and self.is_number(rhs):
            pass
        elif isinstance(lhs, str) and isinstance(rhs, str):
            pass
        elif isinstance(lhs, bool) and isinstance(rhs, bool):
            if op not in ("==", "!="):
                raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, "bools only support == and !=", node)
        elif isinstance(lhs, ImageHandle) and isinstance(rhs, ImageHandle):
            if op not in ("==", "!="):
                raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, "images only support == and !=", node)
        else:
            raise self.fail(
                RuntimeErrorKind.TYPE_MISMATCH,
                f"cannot compare {type_name(lhs)} with {type_name(rhs)}",
                node,
            )
        if op == "==":
            return lhs == rhs
        if op == "!=":
            return lhs != rhs
        if op == "<":
            return lhs < rhs
        if op == "<=":
            return lhs <= rhs
        if op == ">":
            return lhs > rhs
        if op == ">=":
            return lhs >= rhs
        raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, f"unknown comparison '{op}'", node)

    # --- calls ---

    def eval_call(self, node: Call):
        args = [self.eval(a) for a in node.args]
        if node.name in BUILTIN_FUNCTIONS:
            return self.call_builtin(node, args)
        if node.name in ("open_image", "open_images"):
            return self.call_open(node, args)
        return self.call_primitive(node, args)

    def call_open(self, node: Call, args):
        if len(args) != 1 or not isinstance(args[0], str):
            raise self.fail(
                RuntimeErrorKind.TYPE_MISMATCH, f"{node.name}() takes one string argument", node
            )
        # the path argument is cosmetic; handles come from the instance
        if node.name == "open_image":
            if not self.images:
                raise self.fail(RuntimeErrorKind.PRIMITIVE_FAILURE, "no images bound", node)
            return self.images[0]
        return self.images

    def call_primitive(self, node: Call, args):
        self.primitive_calls += 1
        if self.primitive_calls > self.limits.max_primitive_calls:
            raise self.fail(
                RuntimeErrorKind.STEP_BUDGET_EXCEEDED,
                f"exceeded {self.limits.max_primitive_calls} primitive calls",
                node,
            )
        try:
            result = self.dispatch(node.name, tuple(args), self.rng)
        except PrimitiveError as exc:
            self.trace.append(PrimitiveCall(node.name, tuple(args), str(exc), ok=False))
            raise self.fail(RuntimeErrorKind.PRIMITIVE_FAILURE, str(exc), node) from exc
        except ProgRuntimeError:
            raise
        except Exception as exc:  # fault-injected backends must not crash the engine
            self.trace.append(PrimitiveCall(node.name, tuple(args), f"{type(exc).__name__}: {exc}", ok=False))
            raise self.fail(
                RuntimeErrorKind.PRIMITIVE_FAILURE, f"{type(exc).__name__}: {exc}", node
            ) from exc
        self.trace.append(PrimitiveCall(node.name, tuple(args), result))
        return result

    def call_builtin(self, node: Call, args):
        name = node.name
        if name in ("int", "float", "str", "len", "abs") and len(args) != 1:
            raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, f"{name}() takes one argument", node)
        if name == "int":
            return self.convert_int(node, args[0])
        if name == "float":
            return self.convert_float(node, args[0])
        if name == "str":
            v = args[0]
            if isinstance(v, (bool, int, float, str)):
                return stringify_answer(v)
            raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, f"str() cannot render {type_name(v)}", node)
        if name == "len":
            v = args[0]
            if isinstance(v, str):
                return len(v)
            if isinstance(v, tuple) and not isinstance(v, (Pos, ImageHandle)):
                return len(v)
            raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, f"len() cannot measure {type_name(v)}", node)
        if name == "abs":
            v = args[0]
            if not self.is_number(v):
                raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, "abs() requires a number", node)
            return abs(v)
        if name in ("min", "max"):
            if len(args) < 2:
                raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, f"{name}() takes at least two arguments", node)
            if not all(self.is_number(a) for a in args):
                raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, f"{name}() requires numbers", node)
            return min(args) if name == "min" else max(args)
        raise self.fail(RuntimeErrorKind.TYPE_MISMATCH, f"unknown builtin '{name}'", node)

    def convert_int(self, node: Call, v):
        if isinstance(v, bool):
            raise self.fail(RuntimeErrorKind.CONVERSION_FAILURE, "int() cannot convert a bool", node)
        if isinstance(v, int):
            return v
        if isinstance(v, float):
            return int(v)  # truncates toward zero
        if isinstance(v, str):
            text = v.strip()
            sign = 1
            if text.startswith(("+", "-")):
                sign = -1 if text[0] == "-" else 1
                text = text[1:]
            if text.isdigit():
                return sign * int(text)
            raise self.fail(RuntimeErrorKind.CONVERSION_FAILURE, f"int() cannot parse {v!r}", node)
        raise self.fail(RuntimeErrorKind.CONVERSION_FAILURE, f"int() cannot convert {type_name(v)}", node)

    def convert_float(self, node: Call, v):
        if isinstance(v, bool):
            raise self.fail(RuntimeErrorKind.CONVERSION_FAILURE, "float() cannot convert a bool", node)
        if isinstance(v, (int, float)):
            return float(v)
        if isinstance(v, str):
            try:
                return float(v.strip())
            except ValueError:
                raise self.fail(RuntimeErrorKind.CONVERSION_FAILURE, f"float() cannot parse {v!r}", node)
        raise self.fail(RuntimeErrorKind.CONVERSION_FAILURE, f"float() cannot convert {type_name(v)}", node)


def execute(
    ast: Block,
    primitives: Callable[[str, tuple, random.Random], object],
    images,
    limits: InterpreterLimits | None = None,
    env: dict | None = None,
    rng: random.Random | None = None,
) -> ExecutionResult:
    """Run a parsed program against a primitive dispatcher and image handles.

    `primitives` is called as primitives(name, args, rng) for query/get_pos/
    find_matching_image/find_object/knowledge_query; open_image/open_images
    bind the provided handles directly. `env` may pre-bind names (the
    LEFT/BOTTOM/RIGHT/TOP constants from the prompt preamble). `rng` is the
    seeded stream the dispatcher draws from (patch sampling); a fresh
    Random(0) if omitted.

    Deterministic given a deterministic dispatcher and seed. Never raises:
    returns ExecutionResult with either an answer or a typed error, plus the
    primitive-call trace either way.
    """
    machine = _Interpreter(primitives, images, limits or InterpreterLimits(), env, rng or random.Random(0))
    try:
        machine.exec_block(ast)
        if "answer" not in machine.env:
            raise ProgRuntimeError(RuntimeErrorKind.MISSING_ANSWER, "program never assigned 'answer'")
        answer = stringify_answer(machine.env["answer"])
        return ExecutionResult(answer=answer, error=None, trace=machine.trace)
    except ProgRuntimeError as err:
        return ExecutionResult(answer=None, error=err, trace=machine.trace)


__all__ = [
    "ExecutionResult",
    "ImageHandle",
    "InterpreterLimits",
    "Pos",
    "PrimitiveCall",
    "PrimitiveError",
    "ProgRuntimeError",
    "RuntimeErrorKind",
    "execute",
    "format_value",
    "stringify_answer",
    "type_name",
]
