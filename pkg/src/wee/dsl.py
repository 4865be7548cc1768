"""Workflow DSL: lexer, recursive descent parser, printer, and validation.

A workflow file declares one handler wrapper, optional endpoints and context
variables, then a block of statements. Statement kinds are call, manipulate,
parallel (wait: all | k), parallel_branch, choose/alternative/otherwise,
cycle, and critical. Every activity carries a position label (`:name`) that
is unique within the workflow and addressable by jumps and resume overrides.

Grammar (whitespace-insensitive, `#` line comments):

    workflow   = "workflow" "{" header* block "}"
    header     = "handler" STRING
               | "endpoint" IDENT ":" STRING
               | "context" IDENT ":" expr
    block      = stmt*
    stmt       = "call" ":" IDENT "," "endpoint" ":" IDENT
                     [ "," "parameters" ":" "{" (IDENT ":" expr)* "}" ]
               | "manipulate" ":" IDENT "{" (IDENT "=" expr)* "}"
               | "parallel" "wait" ":" ("all" | INT) "{" block "}"
               | "parallel_branch" "{" block "}"
               | "choose" "{" ("alternative" "(" expr ")" "{" block "}")*
                              [ "otherwise" "{" block "}" ] "}"
               | "cycle" "(" expr ")" "{" block "}"
               | "critical" ":" IDENT "{" block "}"
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Union

from .expressions import Binary, Expr, Literal, Unary, Var


class ParseError(Exception):
    """Syntax or structural error, with source line and column."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass
class CallActivity:
    position: str
    endpoint: str
    parameters: list[tuple[str, Expr]]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass
class ManipulateActivity:
    position: str
    statements: list[tuple[str, Expr]]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class WaitSpec:
    """Join policy of a parallel block: count=None waits for all branches."""

    count: Optional[int] = None

    @property
    def is_all(self) -> bool:
        return self.count is None


@dataclass
class Parallel:
    wait: WaitSpec
    body: "Block"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass
class ParallelBranch:
    body: "Block"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass
class Alternative:
    guard: Expr
    block: "Block"


@dataclass
class Choose:
    alternatives: list[Alternative]
    otherwise: Optional["Block"]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass
class Cycle:
    condition: Expr
    body: "Block"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass
class Critical:
    section: str
    body: "Block"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Node = Union[CallActivity, ManipulateActivity, Parallel, ParallelBranch, Choose, Cycle, Critical]
Activity = (CallActivity, ManipulateActivity)
Block = list  # list[Node]


@dataclass
class WorkflowAst:
    handler_name: str
    endpoints: dict[str, str]
    context_decls: list[tuple[str, Expr]]
    body: Block


@dataclass(frozen=True)
class Diagnostic:
    message: str
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        if self.line:
            return f"line {self.line}, col {self.col}: {self.message}"
        return self.message


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------


class TokenType(Enum):
    IDENT = "identifier"
    INT = "integer"
    STRING = "string"
    KEYWORD = "keyword"
    OP = "operator"
    LBRACE = "{"
    RBRACE = "}"
    LPAREN = "("
    RPAREN = ")"
    COLON = ":"
    COMMA = ","
    ASSIGN = "="
    EOF = "end of input"


KEYWORDS = frozenset(
    {
        "workflow",
        "handler",
        "endpoint",
        "context",
        "call",
        "manipulate",
        "parallel",
        "parallel_branch",
        "wait",
        "parameters",
        "choose",
        "alternative",
        "otherwise",
        "cycle",
        "critical",
        "all",
        "true",
        "false",
        "null",
    }
)

_TWO_CHAR_OPS = ("==", "!=", "<=", ">=", "&&", "||")
_ONE_CHAR_OPS = "+-*/%<>!"
_PUNCT = {
    "{": TokenType.LBRACE,
    "}": TokenType.RBRACE,
    "(": TokenType.LPAREN,
    ")": TokenType.RPAREN,
    ":": TokenType.COLON,
    ",": TokenType.COMMA,
}


@dataclass(frozen=True)
class Token:
    type: TokenType
    value: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    i = 0
    n = len(source)

    def error(msg: str) -> ParseError:
        return ParseError(msg, line, col)

    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue

        start_line, start_col = line, col

        two = source[i : i + 2]
        if two in _TWO_CHAR_OPS:
            tokens.append(Token(TokenType.OP, two, start_line, start_col))
            i += 2
            col += 2
            continue

        if ch in _PUNCT:
            tokens.append(Token(_PUNCT[ch], ch, start_line, start_col))
            i += 1
            col += 1
            continue

        if ch == "=":
            tokens.append(Token(TokenType.ASSIGN, "=", start_line, start_col))
            i += 1
            col += 1
            continue

        if ch in _ONE_CHAR_OPS:
            tokens.append(Token(TokenType.OP, ch, start_line, start_col))
            i += 1
            col += 1
            continue

        if ch == '"':
            i += 1
            col += 1
            buf = []
            while i < n and source[i] != '"':
                c = source[i]
                if c == "\n":
                    raise error("unterminated string literal")
                if c == "\\" and i + 1 < n and source[i + 1] in ('"', "\\"):
                    buf.append(source[i + 1])
                    i += 2
                    col += 2
                    continue
                buf.append(c)
                i += 1
                col += 1
            if i >= n:
                raise error("unterminated string literal")
            i += 1
            col += 1
            tokens.append(Token(TokenType.STRING, "".join(buf), start_line, start_col))
            continue

        if ch.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            tokens.append(Token(TokenType.INT, source[i:j], start_line, start_col))
            col += j - i
            i = j
            continue

        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            ttype = TokenType.KEYWORD if word in KEYWORDS else TokenType.IDENT
            tokens.append(Token(ttype, word, start_line, start_col))
            col += j - i
            i = j
            continue

        raise error(f"unexpected character {ch!r}")

    tokens.append(Token(TokenType.EOF, "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0
        self.positions_seen: dict[str, Token] = {}
        self.parallel_depth = 0

    # -- token helpers ----------------------------------------------------

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.type is not TokenType.EOF:
            self.pos += 1
        return tok

    def error(self, message: str, tok: Optional[Token] = None) -> ParseError:
        tok = tok or self.peek()
        return ParseError(message, tok.line, tok.col)

    def expect(self, ttype: TokenType, what: str = "") -> Token:
        tok = self.peek()
        if tok.type is not ttype:
            expected = what or ttype.value
            raise self.error(f"expected {expected}, got {tok.value!r}")
        return self.advance()

    def expect_keyword(self, word: str) -> Token:
        tok = self.peek()
        if tok.type is not TokenType.KEYWORD or tok.value != word:
            raise self.error(f"expected '{word}', got {tok.value!r}")
        return self.advance()

    def at_keyword(self, *words: str) -> bool:
        tok = self.peek()
        return tok.type is TokenType.KEYWORD and tok.value in words

    def expect_ident(self, what: str) -> Token:
        tok = self.peek()
        if tok.type is not TokenType.IDENT:
            raise self.error(f"expected {what}, got {tok.value!r}")
        return self.advance()

    # -- grammar ----------------------------------------------------------

    def parse_workflow(self) -> WorkflowAst:
        start = self.expect_keyword("workflow")
        self.expect(TokenType.LBRACE)

        handler_name: Optional[str] = None
        endpoints: dict[str, str] = {}
        context_decls: list[tuple[str, Expr]] = []

        while self.at_keyword("handler", "endpoint", "context"):
            kw = self.advance()
            if kw.value == "handler":
                if handler_name is not None:
                    raise self.error("duplicate handler declaration", kw)
                handler_name = self.expect(TokenType.STRING, "handler name string").value
            elif kw.value == "endpoint":
                name_tok = self.expect_ident("endpoint name")
                if name_tok.value in endpoints:
                    raise self.error(f"duplicate endpoint '{name_tok.value}'", name_tok)
                self.expect(TokenType.COLON)
                uri = self.expect(TokenType.STRING, "endpoint URI string").value
                endpoints[name_tok.value] = uri
            else:
                name_tok = self.expect_ident("context variable name")
                if any(name_tok.value == n for n, _ in context_decls):
                    raise self.error(f"duplicate context variable '{name_tok.value}'", name_tok)
                self.expect(TokenType.COLON)
                context_decls.append((name_tok.value, self.parse_expr()))

        if handler_name is None:
            raise self.error("missing handler declaration", start)

        body = self.parse_block()
        self.expect(TokenType.RBRACE)
        self.expect(TokenType.EOF, "end of input")
        return WorkflowAst(handler_name, endpoints, context_decls, body)

    def parse_block(self) -> Block:
        block: Block = []
        while self.at_keyword(
            "call", "manipulate", "parallel", "parallel_branch", "choose", "cycle", "critical"
        ):
            block.append(self.parse_stmt())
        return block

    def parse_stmt(self) -> Node:
        tok = self.peek()
        if tok.value == "call":
            return self.parse_call()
        if tok.value == "manipulate":
            return self.parse_manipulate()
        if tok.value == "parallel":
            return self.parse_parallel()
        if tok.value == "parallel_branch":
            return self.parse_parallel_branch()
        if tok.value == "choose":
            return self.parse_choose()
        if tok.value == "cycle":
            return self.parse_cycle()
        if tok.value == "critical":
            return self.parse_critical()
        raise self.error(f"expected statement, got {tok.value!r}")

    def register_position(self, tok: Token) -> str:
        if tok.value in self.positions_seen:
            raise self.error(f"duplicate position '{tok.value}'", tok)
        self.positions_seen[tok.value] = tok
        return tok.value

    def parse_call(self) -> CallActivity:
        kw = self.advance()
        self.expect(TokenType.COLON)
        position = self.register_position(self.expect_ident("position label"))
        self.expect(TokenType.COMMA)
        self.expect_keyword("endpoint")
        self.expect(TokenType.COLON)
        endpoint = self.expect_ident("endpoint name").value
        parameters: list[tuple[str, Expr]] = []
        if self.peek().type is TokenType.COMMA:
            self.advance()
            self.expect_keyword("parameters")
            self.expect(TokenType.COLON)
            self.expect(TokenType.LBRACE)
            seen: set[str] = set()
            while self.peek().type is TokenType.IDENT:
                name_tok = self.advance()
                if name_tok.value in seen:
                    raise self.error(f"duplicate parameter '{name_tok.value}'", name_tok)
                seen.add(name_tok.value)
                self.expect(TokenType.COLON)
                parameters.append((name_tok.value, self.parse_expr()))
            self.expect(TokenType.RBRACE)
        return CallActivity(position, endpoint, parameters, kw.line, kw.col)

    def parse_manipulate(self) -> ManipulateActivity:
        kw = self.advance()
        self.expect(TokenType.COLON)
        position = self.register_position(self.expect_ident("position label"))
        self.expect(TokenType.LBRACE)
        statements: list[tuple[str, Expr]] = []
        while self.peek().type is TokenType.IDENT:
            name = self.advance().value
            self.expect(TokenType.ASSIGN)
            statements.append((name, self.parse_expr()))
        self.expect(TokenType.RBRACE)
        return ManipulateActivity(position, statements, kw.line, kw.col)

    def parse_parallel(self) -> Parallel:
        kw = self.advance()
        self.expect_keyword("wait")
        self.expect(TokenType.COLON)
        tok = self.peek()
        if self.at_keyword("all"):
            self.advance()
            wait = WaitSpec(None)
        elif tok.type is TokenType.INT:
            self.advance()
            count = int(tok.value)
            if count < 1:
                raise self.error("wait count must be ≥ 1", tok)
            wait = WaitSpec(count)
        else:
            raise self.error(f"expected 'all' or a branch count, got {tok.value!r}")
        self.expect(TokenType.LBRACE)
        self.parallel_depth += 1
        body = self.parse_block()
        self.parallel_depth -= 1
        self.expect(TokenType.RBRACE)
        return Parallel(wait, body, kw.line, kw.col)

    def parse_parallel_branch(self) -> ParallelBranch:
        kw = self.advance()
        if self.parallel_depth == 0:
            raise self.error("parallel_branch outside of a parallel block", kw)
        self.expect(TokenType.LBRACE)
        body = self.parse_block()
        self.expect(TokenType.RBRACE)
        return ParallelBranch(body, kw.line, kw.col)

    def parse_choose(self) -> Choose:
        kw = self.advance()
        self.expect(TokenType.LBRACE)
        alternatives: list[Alternative] = []
        while self.at_keyword("alternative"):
            self.advance()
            self.expect(TokenType.LPAREN)
            guard = self.parse_expr()
            self.expect(TokenType.RPAREN)
            self.expect(TokenType.LBRACE)
            block = self.parse_block()
            self.expect(TokenType.RBRACE)
            alternatives.append(Alternative(guard, block))
        otherwise: Optional[Block] = None
        if self.at_keyword("otherwise"):
            self.advance()
            self.expect(TokenType.LBRACE)
            otherwise = self.parse_block()
            self.expect(TokenType.RBRACE)
        self.expect(TokenType.RBRACE)
        return Choose(alternatives, otherwise, kw.line, kw.col)

    def parse_cycle(self) -> Cycle:
        kw = self.advance()
        self.expect(TokenType.LPAREN)
        condition = self.parse_expr()
        self.expect(TokenType.RPAREN)
        self.expect(TokenType.LBRACE)
        body = self.parse_block()
        self.expect(TokenType.RBRACE)
        return Cycle(condition, body, kw.line, kw.col)

    def parse_critical(self) -> Critical:
        kw = self.advance()
        self.expect(TokenType.COLON)
        section = self.expect_ident("section name").value
        self.expect(TokenType.LBRACE)
        body = self.parse_block()
        self.expect(TokenType.RBRACE)
        return Critical(section, body, kw.line, kw.col)

    # -- expressions (precedence climbing) --------------------------------

    def parse_expr(self) -> Expr:
        return self.parse_or()

    def parse_or(self) -> Expr:
        left = self.parse_and()
        while self.peek().type is TokenType.OP and self.peek().value == "||":
            self.advance()
            left = Binary("||", left, self.parse_and())
        return left

    def parse_and(self) -> Expr:
        left = self.parse_equality()
        while self.peek().type is TokenType.OP and self.peek().value == "&&":
            self.advance()
            left = Binary("&&", left, self.parse_equality())
        return left

    def parse_equality(self) -> Expr:
        left = self.parse_comparison()
        while self.peek().type is TokenType.OP and self.peek().value in ("==", "!="):
            op = self.advance().value
            left = Binary(op, left, self.parse_comparison())
        return left

    def parse_comparison(self) -> Expr:
        left = self.parse_additive()
        while self.peek().type is TokenType.OP and self.peek().value in ("<", "<=", ">", ">="):
            op = self.advance().value
            left = Binary(op, left, self.parse_additive())
        return left

    def parse_additive(self) -> Expr:
        left = self.parse_multiplicative()
        while self.peek().type is TokenType.OP and self.peek().value in ("+", "-"):
            op = self.advance().value
            left = Binary(op, left, self.parse_multiplicative())
        return left

    def parse_multiplicative(self) -> Expr:
        left = self.parse_unary()
        while self.peek().type is TokenType.OP and self.peek().value in ("*", "/", "%"):
            op = self.advance().value
            left = Binary(op, left, self.parse_unary())
        return left

    def parse_unary(self) -> Expr:
        tok = self.peek()
        if tok.type is TokenType.OP and tok.value in ("!", "-"):
            self.advance()
            operand = self.parse_unary()
            # fold minus into integer literals so `-5` has one canonical form
            if tok.value == "-" and isinstance(operand, Literal) and type(operand.value) is int:
                return Literal(-operand.value)
            return Unary(tok.value, operand)
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.peek()
        if tok.type is TokenType.INT:
            self.advance()
            return Literal(int(tok.value))
        if tok.type is TokenType.STRING:
            self.advance()
            return Literal(tok.value)
        if tok.type is TokenType.KEYWORD and tok.value in ("true", "false", "null"):
            self.advance()
            return Literal({"true": True, "false": False, "null": None}[tok.value])
        if tok.type is TokenType.IDENT:
            self.advance()
            return Var(tok.value, tok.line, tok.col)
        if tok.type is TokenType.LPAREN:
            self.advance()
            inner = self.parse_expr()
            self.expect(TokenType.RPAREN)
            return inner
        raise self.error(f"expected expression, got {tok.value!r}")


def parse(source: str) -> WorkflowAst:
    """Parse a workflow source text; raises ParseError with line/column."""
    return _Parser(tokenize(source)).parse_workflow()


def parse_expression(source: str) -> Expr:
    """Parse a standalone expression (used by handler configs and tests)."""
    parser = _Parser(tokenize(source))
    expr = parser.parse_expr()
    parser.expect(TokenType.EOF, "end of expression")
    return expr


# ---------------------------------------------------------------------------
# AST traversal and addressing
# ---------------------------------------------------------------------------

# A path addresses a node inside the workflow body as an alternating list of
# [statement index, child-block selector, statement index, ...] (odd length).
# For parallel/parallel_branch/cycle/critical the selector is always 0; for
# choose it picks an alternative (or len(alternatives) for the otherwise
# block).


def child_blocks(node: Node) -> list[Block]:
    if isinstance(node, (Parallel, ParallelBranch, Cycle, Critical)):
        return [node.body]
    if isinstance(node, Choose):
        blocks = [alt.block for alt in node.alternatives]
        if node.otherwise is not None:
            blocks.append(node.otherwise)
        return blocks
    return []


def node_at(ast: WorkflowAst, path: tuple[int, ...]) -> Node:
    block = ast.body
    node: Optional[Node] = None
    i = 0
    while i < len(path):
        idx = path[i]
        if not 0 <= idx < len(block):
            raise IndexError(f"path {path} leaves the workflow body")
        node = block[idx]
        i += 1
        if i < len(path):
            blocks = child_blocks(node)
            if not 0 <= path[i] < len(blocks):
                raise IndexError(f"path {path} selects a missing child block")
            block = blocks[path[i]]
            i += 1
    if node is None:
        raise IndexError("empty path")
    return node


def nodes_along(ast: WorkflowAst, path: tuple[int, ...]) -> list[Node]:
    """All nodes a path descends through, outermost first."""
    out: list[Node] = []
    block = ast.body
    i = 0
    while i < len(path):
        node = block[path[i]]
        out.append(node)
        i += 1
        if i < len(path):
            block = child_blocks(node)[path[i]]
            i += 1
    return out


def walk(body: Block, prefix: tuple[int, ...] = ()) -> Iterator[tuple[tuple[int, ...], Node]]:
    """Yield (path, node) for every node in source order."""
    for i, node in enumerate(body):
        path = prefix + (i,)
        yield path, node
        for sel, block in enumerate(child_blocks(node)):
            yield from walk(block, path + (sel,))


def positions(ast: WorkflowAst) -> list[str]:
    """All activity positions in source order."""
    return [node.position for _, node in walk(ast.body) if isinstance(node, Activity)]


def position_paths(ast: WorkflowAst) -> dict[str, tuple[int, ...]]:
    return {node.position: path for path, node in walk(ast.body) if isinstance(node, Activity)}


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _expr_vars(expr: Expr) -> Iterator[Var]:
    if isinstance(expr, Var):
        yield expr
    elif isinstance(expr, Unary):
        yield from _expr_vars(expr.operand)
    elif isinstance(expr, Binary):
        yield from _expr_vars(expr.left)
        yield from _expr_vars(expr.right)


def validate(ast: WorkflowAst) -> list[Diagnostic]:
    """Check that every referenced endpoint and context variable is declared."""
    diags: list[Diagnostic] = []
    declared: set[str] = set()

    for name, init in ast.context_decls:
        for var in _expr_vars(init):
            if var.name not in declared:
                diags.append(
                    Diagnostic(
                        f"initializer of '{name}' references undefined variable '{var.name}'",
                        var.line,
                        var.col,
                    )
                )
        declared.add(name)

    def check_expr(expr: Expr) -> None:
        for var in _expr_vars(expr):
            if var.name not in declared:
                diags.append(
                    Diagnostic(f"undefined variable '{var.name}'", var.line, var.col)
                )

    for _, node in walk(ast.body):
        if isinstance(node, CallActivity):
            if node.endpoint not in ast.endpoints:
                diags.append(
                    Diagnostic(f"undefined endpoint '{node.endpoint}'", node.line, node.col)
                )
            for _, expr in node.parameters:
                check_expr(expr)
        elif isinstance(node, ManipulateActivity):
            for name, expr in node.statements:
                if name not in declared:
                    diags.append(
                        Diagnostic(
                            f"assignment to undefined variable '{name}'", node.line, node.col
                        )
                    )
                check_expr(expr)
        elif isinstance(node, Choose):
            for alt in node.alternatives:
                check_expr(alt.guard)
        elif isinstance(node, Cycle):
            check_expr(node.condition)
    return diags


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------

_PRECEDENCE = {
    "||": 1,
    "&&": 2,
    "==": 3,
    "!=": 3,
    "<": 4,
    "<=": 4,
    ">": 4,
    ">=": 4,
    "+": 5,
    "-": 5,
    "*": 6,
    "/": 6,
    "%": 6,
}
_UNARY_PRECEDENCE = 7


def format_value(value) -> str:
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    return str(value)


def format_expr(expr: Expr) -> str:
    return _format_expr(expr, 0)


def _format_expr(expr: Expr, parent_prec: int) -> str:
    if isinstance(expr, Literal):
        return format_value(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Unary):
        text = expr.op + _format_expr(expr.operand, _UNARY_PRECEDENCE)
        return f"({text})" if parent_prec > _UNARY_PRECEDENCE else text
    prec = _PRECEDENCE[expr.op]
    left = _format_expr(expr.left, prec)
    # right operand needs parens at equal precedence: ops are left-associative
    right = _format_expr(expr.right, prec + 1)
    text = f"{left} {expr.op} {right}"
    return f"({text})" if parent_prec > prec else text


def pretty(ast: WorkflowAst) -> str:
    """Render an AST back to canonical source; reparsing yields an equal AST."""
    lines = ["workflow {"]
    indent = "  "
    lines.append(f'{indent}handler "{ast.handler_name}"')
    for name, uri in ast.endpoints.items():
        lines.append(f"{indent}endpoint {name}: {format_value(uri)}")
    for name, init in ast.context_decls:
        lines.append(f"{indent}context {name}: {format_expr(init)}")
    _print_block(ast.body, lines, indent)
    lines.append("}")
    return "\n".join(lines) + "\n"


def _print_block(block: Block, lines: list[str], indent: str) -> None:
    inner = indent + "  "
    for node in block:
        if isinstance(node, CallActivity):
            text = f"{indent}call :{node.position}, endpoint: {node.endpoint}"
            if node.parameters:
                params = " ".join(f"{n}: {format_expr(e)}" for n, e in node.parameters)
                text += f", parameters: {{ {params} }}"
            lines.append(text)
        elif isinstance(node, ManipulateActivity):
            if node.statements:
                lines.append(f"{indent}manipulate :{node.position} {{")
                for name, expr in node.statements:
                    lines.append(f"{inner}{name} = {format_expr(expr)}")
                lines.append(f"{indent}}}")
            else:
                lines.append(f"{indent}manipulate :{node.position} {{ }}")
        elif isinstance(node, Parallel):
            wait = "all" if node.wait.is_all else str(node.wait.count)
            lines.append(f"{indent}parallel wait: {wait} {{")
            _print_block(node.body, lines, inner)
            lines.append(f"{indent}}}")
        elif isinstance(node, ParallelBranch):
            lines.append(f"{indent}parallel_branch {{")
            _print_block(node.body, lines, inner)
            lines.append(f"{indent}}}")
        elif isinstance(node, Choose):
            lines.append(f"{indent}choose {{")
            for alt in node.alternatives:
                lines.append(f"{inner}alternative ({format_expr(alt.guard)}) {{")
                _print_block(alt.block, lines, inner + "  ")
                lines.append(f"{inner}}}")
            if node.otherwise is not None:
                lines.append(f"{inner}otherwise {{")
                _print_block(node.otherwise, lines, inner + "  ")
                lines.append(f"{inner}}}")
            lines.append(f"{indent}}}")
        elif isinstance(node, Cycle):
            lines.append(f"{indent}cycle ({format_expr(node.condition)}) {{")
            _print_block(node.body, lines, inner)
            lines.append(f"{indent}}}")
        elif isinstance(node, Critical):
            lines.append(f"{indent}critical :{node.section} {{")
            _print_block(node.body, lines, inner)
            lines.append(f"{indent}}}")
