"""Lexer, parser and canonical printer for the imperative mini-language.

The language is line oriented: one statement per physical line, blocks opened
by a trailing ``:`` and indented by exactly two spaces per level. Values are
ints, floats (arising from division and ``sqrt``), strings, booleans and lists
(nesting depth at most 2). Statements cover assignment, ``print``, builtin
calls, ``if``/``else``, ``while``, ``for ... in range(...)``,
``try``/``except`` (untyped, nesting depth at most 2), ``break``,
``continue``, ``pass`` and bare string-literal lines (docstrings).

Expression grammar, loosest to tightest binding::

    or  <  and  <  not  <  comparison  <  + -  <  * / // %  <  unary -  <  []

Comparisons do not chain. ``range(...)`` is only legal as the iterable of a
``for`` header. There are no user-defined functions; calls are limited to the
builtin set.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class MiniLangError(Exception):
    """Base class for mini-language front-end errors."""


class ParseError(MiniLangError):
    """Syntax error with a 1-based source line number."""

    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.message = message
        self.line = line


class LimitExceeded(MiniLangError):
    """Raised when a program exceeds the statement or token budget."""


MAX_STATEMENTS = 64
MAX_TOKENS = 512
MAX_INT_LITERAL = 2**31
MAX_TRY_DEPTH = 2
MAX_LIST_DEPTH = 2

KEYWORDS = frozenset(
    {
        "if",
        "else",
        "while",
        "for",
        "in",
        "try",
        "except",
        "break",
        "continue",
        "pass",
        "and",
        "or",
        "not",
    }
)

# Builtins usable inside expressions.
EXPR_BUILTINS = frozenset(
    {"input_int", "input_str", "input_list", "len", "abs", "sqrt", "int", "str"}
)
# Builtins usable only as a whole statement.
STMT_ONLY_BUILTINS = frozenset({"print", "raise_value_error"})
BUILTINS = EXPR_BUILTINS | STMT_ONLY_BUILTINS
RESERVED_NAMES = KEYWORDS | BUILTINS | {"range"}

_TWO_CHAR_OPS = ("//", "<=", ">=", "==", "!=")
_ONE_CHAR_OPS = frozenset("+-*/%<>=()[],:")
_COMPARE_OPS = frozenset({"<", ">", "<=", ">=", "==", "!="})

STATEMENT_KINDS = frozenset(
    {
        "assign",
        "print",
        "expr-call",
        "if-header",
        "else-marker",
        "while-header",
        "for-header",
        "try-marker",
        "except-header",
        "break",
        "continue",
        "pass",
        "docstring",
    }
)


@dataclass(frozen=True, slots=True)
class Token:
    kind: str  # "keyword" | "ident" | "int" | "string" | "op"
    text: str
    line: int
    column: int  # 1-based
    statement_index: int


# --- expression AST ---------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Num:
    value: int


@dataclass(frozen=True, slots=True)
class Str:
    value: str


@dataclass(frozen=True, slots=True)
class Name:
    id: str


@dataclass(frozen=True, slots=True)
class ListLit:
    elements: tuple["Expr", ...]


@dataclass(frozen=True, slots=True)
class BinOp:
    op: str  # + - * / // %
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class UnaryOp:
    op: str  # "-" | "not"
    operand: "Expr"


@dataclass(frozen=True, slots=True)
class BoolOp:
    op: str  # "and" | "or"
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class Call:
    func: str
    args: tuple["Expr", ...]


@dataclass(frozen=True, slots=True)
class Subscript:
    value: "Expr"
    index: "Expr"


Expr = Num | Str | Name | ListLit | BinOp | UnaryOp | BoolOp | Compare | Call | Subscript


@dataclass(slots=True)
class Statement:
    kind: str
    line: int
    indent: int
    span: tuple[int, int]  # [start, end) into Program.tokens
    target: str | None = None  # assign target / for loop variable
    expr: Expr | None = None  # RHS, condition, or call
    args: tuple[Expr, ...] | None = None  # range(...) arguments of a for header
    text: str | None = None  # docstring content

    def signature(self) -> tuple:
        """Structural identity, independent of line numbers and token spans."""
        return (self.kind, self.indent, self.target, self.expr, self.args, self.text)


# --- block tree (derived structure used by the CFG builder) -----------------


@dataclass(slots=True)
class SimpleItem:
    stmt: int


@dataclass(slots=True)
class IfItem:
    header: int
    body: list
    else_marker: int | None = None
    orelse: list | None = None


@dataclass(slots=True)
class WhileItem:
    header: int
    body: list = field(default_factory=list)


@dataclass(slots=True)
class ForItem:
    header: int
    body: list = field(default_factory=list)


@dataclass(slots=True)
class TryItem:
    marker: int
    body: list
    handler_header: int
    handler: list


BlockItem = SimpleItem | IfItem | WhileItem | ForItem | TryItem


@dataclass(slots=True)
class Program:
    statements: list[Statement]
    tokens: list[Token]
    source: str
    docstring: str | None
    tree: list[BlockItem] = field(repr=False, default_factory=list)


def statement_spans(program: Program) -> list[tuple[int, int]]:
    """Per-statement token ranges; contiguous and partitioning the stream."""
    return [st.span for st in program.statements]


def structurally_equal(a: Program, b: Program) -> bool:
    if len(a.statements) != len(b.statements):
        return False
    return all(s.signature() == t.signature() for s, t in zip(a.statements, b.statements))


# --- lexer ------------------------------------------------------------------


def _lex_line(text: str, line_no: int, stmt_index: int, col_offset: int, out: list[Token]) -> None:
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == " ":
            i += 1
            continue
        col = col_offset + i + 1
        if ch == '"':
            j = text.find('"', i + 1)
            if j < 0:
                raise ParseError("unterminated string literal", line_no)
            out.append(Token("string", text[i + 1 : j], line_no, col, stmt_index))
            i = j + 1
        elif ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and (text[j].isalpha() or text[j] == "_" or text[j] == "."):
                raise ParseError(f"malformed number {text[i:j + 1]!r}", line_no)
            if int(text[i:j]) > MAX_INT_LITERAL:
                raise ParseError(f"integer literal exceeds {MAX_INT_LITERAL}", line_no)
            out.append(Token("int", text[i:j], line_no, col, stmt_index))
            i = j
        elif ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "keyword" if word in KEYWORDS else "ident"
            out.append(Token(kind, word, line_no, col, stmt_index))
            i = j
        elif text[i : i + 2] in _TWO_CHAR_OPS:
            out.append(Token("op", text[i : i + 2], line_no, col, stmt_index))
            i += 2
        elif ch in _ONE_CHAR_OPS:
            out.append(Token("op", ch, line_no, col, stmt_index))
            i += 1
        else:
            raise ParseError(f"unexpected character {ch!r}", line_no)


def _lex(source: str) -> tuple[list[tuple[int, int, list[Token]]], list[Token]]:
    """Returns ([(indent level, line number, tokens)], flat token list)."""
    lines_out: list[tuple[int, int, list[Token]]] = []
    tokens_all: list[Token] = []
    stmt_counter = 0
    for idx, raw in enumerate(source.split("\n"), start=1):
        stripped = raw.lstrip(" ")
        if stripped.startswith("\t"):
            raise ParseError("tab in indentation", idx)
        if stripped == "":
            continue
        leading = len(raw) - len(stripped)
        if leading % 2:
            raise ParseError("indentation must be a multiple of 2 spaces", idx)
        toks: list[Token] = []
        _lex_line(stripped, idx, stmt_counter, leading, toks)
        lines_out.append((leading // 2, idx, toks))
        tokens_all.extend(toks)
        stmt_counter += 1
    return lines_out, tokens_all


# --- statement parser -------------------------------------------------------


class _LineParser:
    def __init__(self, tokens: list[Token], line: int) -> None:
        self.toks = tokens
        self.line = line
        self.pos = 0

    def _peek(self) -> Token | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def _advance(self) -> Token:
        tok = self._peek()
        if tok is None:
            raise ParseError("unexpected end of line", self.line)
        self.pos += 1
        return tok

    def _expect(self, kind: str, text: str) -> Token:
        tok = self._peek()
        if tok is None or tok.kind != kind or tok.text != text:
            got = "end of line" if tok is None else repr(tok.text)
            raise ParseError(f"expected {text!r}, got {got}", self.line)
        return self._advance()

    def _at_op(self, text: str) -> bool:
        tok = self._peek()
        return tok is not None and tok.kind == "op" and tok.text == text

    def _at_keyword(self, text: str) -> bool:
        tok = self._peek()
        return tok is not None and tok.kind == "keyword" and tok.text == text

    def _done(self) -> None:
        tok = self._peek()
        if tok is not None:
            raise ParseError(f"unexpected trailing tokens starting at {tok.text!r}", self.line)

    # statements

    def parse_statement(self, indent: int, span: tuple[int, int]) -> Statement:
        tok = self._peek()
        if tok is None:
            raise ParseError("empty statement", self.line)
        if tok.kind == "keyword":
            return self._parse_keyword_statement(tok.text, indent, span)
        if tok.kind == "string" and len(self.toks) == 1:
            self._advance()
            return Statement("docstring", self.line, indent, span, text=tok.text)
        if tok.kind == "ident":
            return self._parse_ident_statement(tok.text, indent, span)
        raise ParseError(f"expected a statement, got {tok.text!r}", self.line)

    def _parse_keyword_statement(self, word: str, indent: int, span: tuple[int, int]) -> Statement:
        self._advance()
        if word in ("if", "while"):
            cond = self.parse_expr()
            self._expect("op", ":")
            self._done()
            return Statement(f"{word}-header", self.line, indent, span, expr=cond)
        if word in ("else", "try", "except"):
            kind = "except-header" if word == "except" else f"{word}-marker"
            self._expect("op", ":")
            self._done()
            return Statement(kind, self.line, indent, span)
        if word in ("break", "continue", "pass"):
            self._done()
            return Statement(word, self.line, indent, span)
        if word == "for":
            var = self._advance()
            if var.kind != "ident":
                raise ParseError("expected a loop variable after 'for'", self.line)
            if var.text in RESERVED_NAMES:
                raise ParseError(f"cannot assign to reserved name {var.text!r}", self.line)
            self._expect("keyword", "in")
            fn = self._advance()
            if fn.kind != "ident" or fn.text != "range":
                raise ParseError("for loops iterate over range(...) only", self.line)
            self._expect("op", "(")
            args = [self.parse_expr()]
            while self._at_op(","):
                self._advance()
                args.append(self.parse_expr())
            if len(args) > 3:
                raise ParseError("range() takes 1 to 3 arguments", self.line)
            self._expect("op", ")")
            self._expect("op", ":")
            self._done()
            return Statement("for-header", self.line, indent, span, target=var.text, args=tuple(args))
        raise ParseError(f"unexpected keyword {word!r}", self.line)

    def _parse_ident_statement(self, word: str, indent: int, span: tuple[int, int]) -> Statement:
        nxt = self.toks[1] if len(self.toks) > 1 else None
        if nxt is not None and nxt.kind == "op" and nxt.text == "(" and word in BUILTINS:
            self._advance()
            self._advance()
            args: list[Expr] = []
            if not self._at_op(")"):
                args.append(self.parse_expr())
                while self._at_op(","):
                    self._advance()
                    args.append(self.parse_expr())
            self._expect("op", ")")
            self._done()
            call = Call(word, tuple(args))
            kind = "print" if word == "print" else "expr-call"
            return Statement(kind, self.line, indent, span, expr=call)
        self._advance()
        if word in RESERVED_NAMES:
            raise ParseError(f"cannot assign to reserved name {word!r}", self.line)
        if not self._at_op("="):
            raise ParseError(f"expected '=' or a builtin call after {word!r}", self.line)
        self._advance()
        value = self.parse_expr()
        self._done()
        return Statement("assign", self.line, indent, span, target=word, expr=value)

    # expressions

    def parse_expr(self) -> Expr:
        return self._parse_or()

    def _parse_or(self) -> Expr:
        left = self._parse_and()
        while self._at_keyword("or"):
            self._advance()
            left = BoolOp("or", left, self._parse_and())
        return left

    def _parse_and(self) -> Expr:
        left = self._parse_not()
        while self._at_keyword("and"):
            self._advance()
            left = BoolOp("and", left, self._parse_not())
        return left

    def _parse_not(self) -> Expr:
        if self._at_keyword("not"):
            self._advance()
            return UnaryOp("not", self._parse_not())
        return self._parse_comparison()

    def _parse_comparison(self) -> Expr:
        left = self._parse_arith()
        tok = self._peek()
        if tok is not None and tok.kind == "op" and tok.text in _COMPARE_OPS:
            self._advance()
            right = self._parse_arith()
            return Compare(tok.text, left, right)
        return left

    def _parse_arith(self) -> Expr:
        left = self._parse_term()
        while True:
            tok = self._peek()
            if tok is not None and tok.kind == "op" and tok.text in ("+", "-"):
                self._advance()
                left = BinOp(tok.text, left, self._parse_term())
            else:
                return left

    def _parse_term(self) -> Expr:
        left = self._parse_factor()
        while True:
            tok = self._peek()
            if tok is not None and tok.kind == "op" and tok.text in ("*", "/", "//", "%"):
                self._advance()
                left = BinOp(tok.text, left, self._parse_factor())
            else:
                return left

    def _parse_factor(self) -> Expr:
        if self._at_op("-"):
            self._advance()
            return UnaryOp("-", self._parse_factor())
        return self._parse_postfix()

    def _parse_postfix(self) -> Expr:
        value = self._parse_atom()
        while self._at_op("["):
            self._advance()
            index = self.parse_expr()
            self._expect("op", "]")
            value = Subscript(value, index)
        return value

    def _parse_atom(self) -> Expr:
        tok = self._advance()
        if tok.kind == "int":
            return Num(int(tok.text))
        if tok.kind == "string":
            return Str(tok.text)
        if tok.kind == "op" and tok.text == "(":
            inner = self.parse_expr()
            self._expect("op", ")")
            return inner
        if tok.kind == "op" and tok.text == "[":
            elements: list[Expr] = []
            if not self._at_op("]"):
                elements.append(self.parse_expr())
                while self._at_op(","):
                    self._advance()
                    elements.append(self.parse_expr())
            self._expect("op", "]")
            lit = ListLit(tuple(elements))
            if _literal_list_depth(lit) > MAX_LIST_DEPTH:
                raise ParseError(f"list literals nest deeper than {MAX_LIST_DEPTH}", self.line)
            return lit
        if tok.kind == "ident":
            if tok.text == "range":
                raise ParseError("range() is only allowed in a for header", self.line)
            if self._at_op("("):
                if tok.text in STMT_ONLY_BUILTINS:
                    raise ParseError(f"{tok.text} is a statement, not an expression", self.line)
                if tok.text not in EXPR_BUILTINS:
                    raise ParseError(f"unknown function {tok.text!r}", self.line)
                self._advance()
                args: list[Expr] = []
                if not self._at_op(")"):
                    args.append(self.parse_expr())
                    while self._at_op(","):
                        self._advance()
                        args.append(self.parse_expr())
                self._expect("op", ")")
                return Call(tok.text, tuple(args))
            return Name(tok.text)
        raise ParseError(f"expected an expression, got {tok.text!r}", self.line)


def _literal_list_depth(expr: Expr) -> int:
    if isinstance(expr, ListLit):
        inner = max((_literal_list_depth(e) for e in expr.elements), default=0)
        return 1 + inner
    return 0


# --- structural parser ------------------------------------------------------


class _StructureParser:
    def __init__(self, lines: list[tuple[int, int, list[Token]]]) -> None:
        self.lines = lines
        self.i = 0
        self.statements: list[Statement] = []
        self.token_cursor = 0

    def _line_starts_with(self, keyword: str) -> bool:
        if self.i >= len(self.lines):
            return False
        _, _, toks = self.lines[self.i]
        return toks[0].kind == "keyword" and toks[0].text == keyword

    def _consume_statement(self, level: int) -> Statement:
        lvl, line_no, toks = self.lines[self.i]
        self.i += 1
        span = (self.token_cursor, self.token_cursor + len(toks))
        self.token_cursor += len(toks)
        stmt = _LineParser(toks, line_no).parse_statement(lvl, span)
        self.statements.append(stmt)
        return stmt

    def parse_block(self, level: int, loop_depth: int, try_depth: int, opener: str) -> list[BlockItem]:
        items: list[BlockItem] = []
        terminated_line: int | None = None
        while self.i < len(self.lines):
            lvl, line_no, toks = self.lines[self.i]
            if lvl < level:
                break
            if lvl > level:
                raise ParseError("unexpected indent", line_no)
            first = toks[0]
            if first.kind == "keyword" and first.text in ("else", "except"):
                break  # handled by the construct that opened this block
            if terminated_line is not None:
                raise ParseError(
                    f"unreachable statement after break/continue on line {terminated_line}", line_no
                )
            stmt = self._consume_statement(level)
            idx = len(self.statements) - 1
            if stmt.kind == "if-header":
                body = self._require_block(level, loop_depth, try_depth, "if", stmt.line)
                item = IfItem(idx, body)
                if self.i < len(self.lines) and self.lines[self.i][0] == level and self._line_starts_with("else"):
                    marker = self._consume_statement(level)
                    item.else_marker = len(self.statements) - 1
                    item.orelse = self._require_block(level, loop_depth, try_depth, "else", marker.line)
                items.append(item)
            elif stmt.kind == "while-header":
                body = self._require_block(level, loop_depth + 1, try_depth, "while", stmt.line)
                items.append(WhileItem(idx, body))
            elif stmt.kind == "for-header":
                body = self._require_block(level, loop_depth + 1, try_depth, "for", stmt.line)
                items.append(ForItem(idx, body))
            elif stmt.kind == "try-marker":
                if try_depth + 1 > MAX_TRY_DEPTH:
                    raise ParseError(f"try blocks nest deeper than {MAX_TRY_DEPTH}", stmt.line)
                body = self._require_block(level, loop_depth, try_depth + 1, "try", stmt.line)
                if not (self.i < len(self.lines) and self.lines[self.i][0] == level and self._line_starts_with("except")):
                    raise ParseError("try block has no except clause", stmt.line)
                handler_stmt = self._consume_statement(level)
                handler_idx = len(self.statements) - 1
                handler = self._require_block(level, loop_depth, try_depth + 1, "except", handler_stmt.line)
                items.append(TryItem(idx, body, handler_idx, handler))
            elif stmt.kind == "else-marker":
                raise ParseError("'else' without a matching 'if'", stmt.line)
            elif stmt.kind == "except-header":
                raise ParseError("'except' without a matching 'try'", stmt.line)
            else:
                if stmt.kind in ("break", "continue"):
                    if loop_depth == 0:
                        raise ParseError(f"'{stmt.kind}' outside a loop", stmt.line)
                    terminated_line = stmt.line
                items.append(SimpleItem(idx))
        return items

    def _require_block(self, level: int, loop_depth: int, try_depth: int, opener: str, opener_line: int) -> list[BlockItem]:
        if self.i >= len(self.lines) or self.lines[self.i][0] <= level:
            raise ParseError(f"expected an indented block after '{opener}'", opener_line)
        return self.parse_block(level + 1, loop_depth, try_depth, opener)


def parse(source: str, *, max_statements: int = MAX_STATEMENTS, max_tokens: int = MAX_TOKENS) -> Program:
    """Parse source text into a Program.

    Raises ParseError for malformed syntax (with a 1-based line number) and
    LimitExceeded when the statement or token budget is blown.
    """
    lines, tokens = _lex(source)
    if not lines:
        raise ParseError("empty program", 1)
    if len(lines) > max_statements:
        raise LimitExceeded(f"program has {len(lines)} statements (limit {max_statements})")
    if len(tokens) > max_tokens:
        raise LimitExceeded(f"program has {len(tokens)} tokens (limit {max_tokens})")
    parser = _StructureParser(lines)
    tree = parser.parse_block(0, 0, 0, "module")
    if parser.i < len(parser.lines):
        _, line_no, _ = parser.lines[parser.i]
        raise ParseError("unexpected indent", line_no)
    statements = parser.statements
    docstring = statements[0].text if statements[0].kind == "docstring" else None
    return Program(statements, tokens, source, docstring, tree)


# --- canonical printer ------------------------------------------------------

_BINOP_PREC = {"+": 5, "-": 5, "*": 6, "/": 6, "//": 6, "%": 6}


def _expr_prec(expr: Expr) -> int:
    if isinstance(expr, BoolOp):
        return 1 if expr.op == "or" else 2
    if isinstance(expr, UnaryOp):
        return 3 if expr.op == "not" else 7
    if isinstance(expr, Compare):
        return 4
    if isinstance(expr, BinOp):
        return _BINOP_PREC[expr.op]
    if isinstance(expr, Subscript):
        return 8
    return 9


def _render(expr: Expr, min_prec: int = 0) -> str:
    prec = _expr_prec(expr)
    if isinstance(expr, Num):
        text = str(expr.value)
    elif isinstance(expr, Str):
        text = f'"{expr.value}"'
    elif isinstance(expr, Name):
        text = expr.id
    elif isinstance(expr, ListLit):
        text = "[" + ", ".join(_render(e) for e in expr.elements) + "]"
    elif isinstance(expr, Call):
        text = expr.func + "(" + ", ".join(_render(a) for a in expr.args) + ")"
    elif isinstance(expr, Subscript):
        text = _render(expr.value, prec) + "[" + _render(expr.index) + "]"
    elif isinstance(expr, UnaryOp):
        if expr.op == "not":
            text = "not " + _render(expr.operand, prec)
        else:
            text = "-" + _render(expr.operand, prec)
    elif isinstance(expr, BoolOp):
        text = _render(expr.left, prec) + f" {expr.op} " + _render(expr.right, prec + 1)
    elif isinstance(expr, Compare):
        text = _render(expr.left, prec + 1) + f" {expr.op} " + _render(expr.right, prec + 1)
    elif isinstance(expr, BinOp):
        text = _render(expr.left, prec) + f" {expr.op} " + _render(expr.right, prec + 1)
    else:  # pragma: no cover - the union above is exhaustive
        raise TypeError(f"unknown expression node {expr!r}")
    if prec < min_prec:
        return f"({text})"
    return text


def _statement_text(st: Statement) -> str:
    if st.kind == "assign":
        return f"{st.target} = {_render(st.expr)}"
    if st.kind in ("print", "expr-call"):
        return _render(st.expr)
    if st.kind == "if-header":
        return f"if {_render(st.expr)}:"
    if st.kind == "while-header":
        return f"while {_render(st.expr)}:"
    if st.kind == "for-header":
        args = ", ".join(_render(a) for a in st.args)
        return f"for {st.target} in range({args}):"
    if st.kind == "else-marker":
        return "else:"
    if st.kind == "try-marker":
        return "try:"
    if st.kind == "except-header":
        return "except:"
    if st.kind in ("break", "continue", "pass"):
        return st.kind
    if st.kind == "docstring":
        return f'"{st.text}"'
    raise ValueError(f"unknown statement kind {st.kind!r}")


def pretty_print(program: Program) -> str:
    """Canonical source text: 2-space indents, single-space token joins, LF."""
    out = ["  " * st.indent + _statement_text(st) for st in program.statements]
    return "\n".join(out) + "\n"


def inject_docstring(source: str, text: str) -> str:
    """Prepend a description as a leading string-literal statement.

    Line numbers of the original statements shift by +1; callers that report
    line numbers must subtract the shift.
    """
    cleaned = " ".join(text.replace('"', " ").split())
    return f'"{cleaned}"\n{source}'
