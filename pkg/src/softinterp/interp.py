"""Discrete reference interpreters over the CFG.

Two variants share one execution core. Interpreter A has no raise edges: an
exception records the error and the run stops (with a final synthetic step at
``n_exit``). Interpreter B follows the raise edge ``r(n)``: either into an
except handler (execution continues, the error is forgotten) or to ``n_error``
(the run ends with the originally raised kind and line).

Values are native Python ints/floats/strings/bools/lists with a stricter type
discipline than CPython: bools are not numbers, strings only concatenate with
strings, integer results are capped at ``2**63`` (ValueError beyond), floats
must stay finite. stdin is a list of text lines; ``input_int`` parses one line
as an integer, ``input_list`` as a whitespace-separated integer list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .cfg import CfgNode, ControlFlowGraph
from .minilang import (
    BinOp,
    BoolOp,
    Call,
    Compare,
    Expr,
    ListLit,
    Name,
    Num,
    Statement,
    Str,
    Subscript,
    UnaryOp,
)

# Closed error-kind set; ordinal order is frozen (prediction targets depend on it).
ERROR_KINDS = (
    "EOFError",
    "ValueError",
    "ZeroDivisionError",
    "TypeError",
    "IndexError",
    "NameError",
    "Timeout",
)
ERROR_KIND_INDEX = {kind: i for i, kind in enumerate(ERROR_KINDS)}

DEFAULT_STEP_BUDGET = 500
MAX_ABS_INT = 2**63

Value = object  # int | float | str | bool | list, with bools checked before ints


@dataclass(slots=True)
class Environment:
    bindings: dict[str, Value] = field(default_factory=dict)
    stdin: tuple[str, ...] = ()
    cursor: int = 0
    # hidden per-for-loop iterator state (current, stop, step), keyed by the
    # header's line number; kept out of bindings so user variables stay clean
    loops: dict[int, tuple[int, int, int]] = field(default_factory=dict)

    def snapshot(self) -> "Environment":
        return Environment(dict(self.bindings), self.stdin, self.cursor, dict(self.loops))


@dataclass(slots=True)
class TraceStep:
    t: int
    node: int
    env: Environment
    via_raise: bool = False


@dataclass(slots=True)
class Outcome:
    status: str  # "no-error" | "error" | "step-budget-exceeded"
    kind: str | None = None
    line: int | None = None


@dataclass(slots=True)
class DiscreteTrace:
    steps: list[TraceStep]
    outcome: Outcome


class _MiniError(Exception):
    """Internal signal for a mini-language runtime error."""

    def __init__(self, kind: str, message: str) -> None:
        super().__init__(message)
        self.kind = kind


def _type_name(value: Value) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    if isinstance(value, str):
        return "str"
    if isinstance(value, list):
        return "list"
    return "none"


def _is_number(value: Value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_int(value: int) -> int:
    if abs(value) > MAX_ABS_INT:
        raise _MiniError("ValueError", "integer overflow")
    return value


def _check_float(value: float) -> float:
    if not math.isfinite(value):
        raise _MiniError("ValueError", "float overflow")
    return value


def _check_number(value):
    if isinstance(value, int):
        return _check_int(value)
    return _check_float(value)


def _list_depth(value: list) -> int:
    inner = max((_list_depth(v) for v in value if isinstance(v, list)), default=0)
    return 1 + inner


def _parse_int(text: str) -> int:
    try:
        value = int(text.strip())
    except ValueError:
        raise _MiniError("ValueError", f"invalid integer literal {text.strip()!r}") from None
    return _check_int(value)


def _read_line(env: Environment) -> str:
    if env.cursor >= len(env.stdin):
        raise _MiniError("EOFError", "read past end of input")
    line = env.stdin[env.cursor]
    env.cursor += 1
    return line


def _binop(op: str, a: Value, b: Value) -> Value:
    if op == "+":
        if _is_number(a) and _is_number(b):
            return _check_number(a + b)
        if isinstance(a, str) and isinstance(b, str):
            return a + b
        if isinstance(a, list) and isinstance(b, list):
            merged = a + b
            if _list_depth(merged) > 2:
                raise _MiniError("TypeError", "list nesting exceeds depth 2")
            return merged
        raise _MiniError("TypeError", f"cannot add {_type_name(a)} and {_type_name(b)}")
    if not (_is_number(a) and _is_number(b)):
        raise _MiniError(
            "TypeError", f"unsupported operand types for {op}: {_type_name(a)}, {_type_name(b)}"
        )
    if op == "-":
        return _check_number(a - b)
    if op == "*":
        return _check_number(a * b)
    if op in ("/", "//", "%"):
        if b == 0:
            raise _MiniError("ZeroDivisionError", f"division by zero in {op}")
        if op == "/":
            return _check_float(a / b)
        if op == "//":
            return _check_number(a // b)
        return _check_number(a % b)
    raise AssertionError(f"unknown operator {op}")


def _compare(op: str, a: Value, b: Value) -> bool:
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    ordered = (_is_number(a) and _is_number(b)) or (isinstance(a, str) and isinstance(b, str))
    if not ordered:
        raise _MiniError(
            "TypeError", f"cannot order {_type_name(a)} and {_type_name(b)} with {op}"
        )
    if op == "<":
        return a < b
    if op == ">":
        return a > b
    if op == "<=":
        return a <= b
    return a >= b


def _call_builtin(name: str, args: list[Value], env: Environment) -> Value:
    def need(count: int) -> None:
        if len(args) != count:
            raise _MiniError(
                "TypeError", f"{name}() takes {count} argument(s), got {len(args)}"
            )

    if name == "input_int":
        need(0)
        return _parse_int(_read_line(env))
    if name == "input_str":
        need(0)
        return _read_line(env)
    if name == "input_list":
        need(0)
        return [_parse_int(tok) for tok in _read_line(env).split()]
    if name == "len":
        need(1)
        if isinstance(args[0], (str, list)):
            return len(args[0])
        raise _MiniError("TypeError", f"len() of {_type_name(args[0])}")
    if name == "abs":
        need(1)
        if _is_number(args[0]):
            return _check_number(abs(args[0]))
        raise _MiniError("TypeError", f"abs() of {_type_name(args[0])}")
    if name == "sqrt":
        need(1)
        if not _is_number(args[0]):
            raise _MiniError("TypeError", f"sqrt() of {_type_name(args[0])}")
        if args[0] < 0:
            raise _MiniError("ValueError", "sqrt() of a negative number")
        return math.sqrt(args[0])
    if name == "int":
        need(1)
        value = args[0]
        if isinstance(value, bool) or isinstance(value, list) or value is None:
            raise _MiniError("TypeError", f"int() of {_type_name(value)}")
        if isinstance(value, int):
            return value
        if isinstance(value, float):
            return _check_int(int(value))
        return _parse_int(value)
    if name == "str":
        need(1)
        value = args[0]
        if _is_number(value):
            return repr(value)
        if isinstance(value, str):
            return value
        raise _MiniError("TypeError", f"str() of {_type_name(value)}")
    if name == "print":
        return None  # output is discarded; arguments were already evaluated
    if name == "raise_value_error":
        need(0)
        raise _MiniError("ValueError", "raise_value_error()")
    raise AssertionError(f"unknown builtin {name}")


def _evaluate(expr: Expr, env: Environment) -> Value:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Str):
        return expr.value
    if isinstance(expr, Name):
        try:
            return env.bindings[expr.id]
        except KeyError:
            raise _MiniError("NameError", f"name {expr.id!r} is not defined") from None
    if isinstance(expr, ListLit):
        values = [_evaluate(e, env) for e in expr.elements]
        if _list_depth(values) > 2:
            raise _MiniError("TypeError", "list nesting exceeds depth 2")
        return values
    if isinstance(expr, BinOp):
        return _binop(expr.op, _evaluate(expr.left, env), _evaluate(expr.right, env))
    if isinstance(expr, UnaryOp):
        if expr.op == "not":
            return not _truthy(_evaluate(expr.operand, env))
        value = _evaluate(expr.operand, env)
        if not _is_number(value):
            raise _MiniError("TypeError", f"unary - of {_type_name(value)}")
        return _check_number(-value)
    if isinstance(expr, BoolOp):
        left = _evaluate(expr.left, env)
        if expr.op == "and":
            return _evaluate(expr.right, env) if _truthy(left) else left
        return left if _truthy(left) else _evaluate(expr.right, env)
    if isinstance(expr, Compare):
        return _compare(expr.op, _evaluate(expr.left, env), _evaluate(expr.right, env))
    if isinstance(expr, Subscript):
        value = _evaluate(expr.value, env)
        index = _evaluate(expr.index, env)
        if not isinstance(value, (str, list)):
            raise _MiniError("TypeError", f"{_type_name(value)} is not subscriptable")
        if isinstance(index, bool) or not isinstance(index, int):
            raise _MiniError("TypeError", f"indices must be int, not {_type_name(index)}")
        if index < -len(value) or index >= len(value):
            raise _MiniError("IndexError", f"index {index} out of range")
        return value[index]
    if isinstance(expr, Call):
        args = [_evaluate(a, env) for a in expr.args]
        return _call_builtin(expr.func, args, env)
    raise AssertionError(f"unknown expression {expr!r}")


def _truthy(value: Value) -> bool:
    return bool(value)


@dataclass(slots=True)
class _NodeResult:
    raised: tuple[str, int] | None = None
    branch: bool | None = None


def _execute_node(node: CfgNode, st: Statement | None, env: Environment) -> _NodeResult:
    """Evaluate one CFG node in place, returning raise/branch information."""
    try:
        kind = node.kind
        if kind == "assign":
            env.bindings[st.target] = _evaluate(st.expr, env)
        elif kind in ("print", "expr-call"):
            _evaluate(st.expr, env)
        elif kind in ("if-header", "while-header"):
            return _NodeResult(branch=_truthy(_evaluate(st.expr, env)))
        elif kind == "for-iter":
            values = [_evaluate(a, env) for a in st.args]
            for v in values:
                if isinstance(v, bool) or not isinstance(v, int):
                    raise _MiniError("TypeError", f"range() argument of {_type_name(v)}")
            if len(values) == 1:
                start, stop, step = 0, values[0], 1
            elif len(values) == 2:
                start, stop, step = values[0], values[1], 1
            else:
                start, stop, step = values
                if step == 0:
                    raise _MiniError("ValueError", "range() step must not be zero")
            env.loops[st.line] = (start, stop, step)
        elif kind == "for-assign":
            current, stop, step = env.loops[st.line]
            has_next = current < stop if step > 0 else current > stop
            if has_next:
                env.bindings[st.target] = current
                env.loops[st.line] = (_check_int(current + step), stop, step)
            return _NodeResult(branch=has_next)
        else:
            # markers, except-header, docstring, pass, break, continue: no-ops
            pass
    except _MiniError as err:
        return _NodeResult(raised=(err.kind, node.line))
    return _NodeResult()


def evaluate_statement(
    statement: Statement, env: Environment
) -> tuple[Environment, tuple[str, int] | None]:
    """Pure single-statement evaluation: returns (new env, optional raise).

    Headers evaluate their condition (which may raise) without branching;
    for-headers evaluate the iterator-construction half.
    """
    working = env.snapshot()
    fake_kind = "for-iter" if statement.kind == "for-header" else statement.kind
    node = CfgNode(-1, fake_kind, None, statement.line, statement.span)
    result = _execute_node(node, statement, working)
    return working, result.raised


def _normalize_stdin(stdin) -> tuple[str, ...]:
    return tuple(item if isinstance(item, str) else repr(item) for item in stdin)


def _run(
    cfg: ControlFlowGraph, stdin, step_budget: int, exception_edges: bool
) -> DiscreteTrace:
    if step_budget < 1:
        raise ValueError("step budget must be >= 1")
    env = Environment(stdin=_normalize_stdin(stdin))
    statements = cfg.program.statements
    node_id = 0
    t = 0
    steps = [TraceStep(0, 0, env.snapshot())]
    err: tuple[str, int] | None = None
    while True:
        if node_id == cfg.n_exit:
            outcome = Outcome("no-error")
            break
        if node_id == cfg.n_error:
            outcome = Outcome("error", err[0], err[1])
            break
        if t >= step_budget:
            outcome = Outcome("step-budget-exceeded", "Timeout", None)
            break
        node = cfg.nodes[node_id]
        result = _execute_node(node, statements[node.stmt] if node.stmt is not None else None, env)
        t += 1
        if result.raised is not None:
            if not exception_edges:
                steps.append(TraceStep(t, cfg.n_exit, env.snapshot(), via_raise=True))
                outcome = Outcome("error", result.raised[0], result.raised[1])
                return DiscreteTrace(steps, outcome)
            target = node.raise_target
            if target == cfg.n_error:
                err = result.raised
            node_id = target
            steps.append(TraceStep(t, node_id, env.snapshot(), via_raise=True))
        else:
            branch = result.branch
            node_id = node.n1 if branch is None or branch else node.n2
            steps.append(TraceStep(t, node_id, env.snapshot()))
    return DiscreteTrace(steps, outcome)


def run_interpreter_a(
    cfg: ControlFlowGraph, program, stdin, step_budget: int = DEFAULT_STEP_BUDGET
) -> DiscreteTrace:
    """Interpreter A: no raise edges; an exception ends the run at n_exit."""
    assert program is cfg.program
    return _run(cfg, stdin, step_budget, exception_edges=False)


def run_interpreter_b(
    cfg: ControlFlowGraph, program, stdin, step_budget: int = DEFAULT_STEP_BUDGET
) -> DiscreteTrace:
    """Interpreter B: raises move the pointer to r(n); ends at n_exit/n_error."""
    assert program is cfg.program
    return _run(cfg, stdin, step_budget, exception_edges=True)


def dump_trace(cfg: ControlFlowGraph, trace: DiscreteTrace) -> str:
    """One line per step ``t,node,line``; final line ``outcome,kind,line``."""
    lines = []
    for step in trace.steps:
        line = cfg.nodes[step.node].line
        lines.append(f"{step.t},{step.node},{line if line is not None else '-'}")
    out = trace.outcome
    lines.append(
        f"{out.status},{out.kind if out.kind else '-'},{out.line if out.line is not None else '-'}"
    )
    return "\n".join(lines) + "\n"
