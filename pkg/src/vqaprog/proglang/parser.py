"""Recursive-descent parser for the generated-program language.

Accepts exactly the constructs the annotated programs use: assignment
(including tuple targets for coordinate unpacking), `+=`/`-=`, `for ... in`,
`if`/`elif`/`else`, whitelisted calls, arithmetic, comparisons and boolean
logic. Everything else raises UnsupportedSyntax with a location, which the
harness treats as a fallback trigger.
"""

from __future__ import annotations

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
    TupleExpr,
    UnaryNot,
)
from .tokens import LexError, Token, TokenKind, tokenize

PRIMITIVE_FUNCTIONS = frozenset(
    {
        "open_image",
        "open_images",
        "query",
        "get_pos",
        "find_matching_image",
        "find_object",
        "knowledge_query",
    }
)

BUILTIN_FUNCTIONS = frozenset({"int", "float", "str", "len", "abs", "min", "max"})

WHITELISTED_FUNCTIONS = PRIMITIVE_FUNCTIONS | BUILTIN_FUNCTIONS

# Python statement keywords we refuse outright; naming them beats a generic
# "unexpected token" when an LM emits real Python.
_FORBIDDEN_STATEMENTS = frozenset(
    {
        "import",
        "from",
        "def",
        "while",
        "class",
        "return",
        "lambda",
        "with",
        "try",
        "except",
        "finally",
        "raise",
        "global",
        "nonlocal",
        "del",
        "pass",
        "break",
        "continue",
        "assert",
        "yield",
        "async",
        "await",
        "match",
    }
)

_COMPARE_OPS = ("==", "!=", "<", "<=", ">", ">=")


class UnsupportedSyntax(Exception):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    # --- token helpers ---

    def peek(self, offset: int = 0) -> Token:
        i = min(self.pos + offset, len(self.tokens) - 1)
        return self.tokens[i]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if self.pos < len(self.tokens) - 1:
            self.pos += 1
        return tok

    def at(self, kind: TokenKind, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def expect(self, kind: TokenKind, text: str | None = None) -> Token:
        if not self.at(kind, text):
            tok = self.peek()
            want = text if text is not None else kind.value
            raise self.error(f"expected {want!r}, found {self.describe(tok)}", tok)
        return self.advance()

    @staticmethod
    def describe(tok: Token) -> str:
        if tok.kind in (TokenKind.NEWLINE, TokenKind.INDENT, TokenKind.DEDENT, TokenKind.EOF):
            return tok.kind.value
        return repr(tok.text)

    @staticmethod
    def error(message: str, tok: Token) -> UnsupportedSyntax:
        return UnsupportedSyntax(message, tok.line, tok.col)

    # --- statements ---

    def parse_program(self) -> Block:
        first = self.peek()
        if first.kind == TokenKind.INDENT:
            raise self.error("unexpected indent", first)
        statements = []
        while not self.at(TokenKind.EOF):
            statements.append(self.parse_statement())
        return Block(tuple(statements), line=1, col=1)

    def parse_block(self) -> Block:
        start = self.expect(TokenKind.INDENT)
        statements = [self.parse_statement()]
        while not self.at(TokenKind.DEDENT) and not self.at(TokenKind.EOF):
            statements.append(self.parse_statement())
        if self.at(TokenKind.DEDENT):
            self.advance()
        return Block(tuple(statements), line=start.line, col=start.col)

    def parse_statement(self):
        tok = self.peek()
        if tok.kind == TokenKind.KEYWORD:
            if tok.text == "for":
                return self.parse_for()
            if tok.text == "if":
                return self.parse_if()
            if tok.text in ("elif", "else"):
                raise self.error(f"'{tok.text}' without a matching 'if'", tok)
            raise self.error(f"unexpected keyword '{tok.text}'", tok)
        if tok.kind == TokenKind.INDENT:
            raise self.error("unexpected indent", tok)
        if tok.kind == TokenKind.NAME and tok.text in _FORBIDDEN_STATEMENTS:
            raise self.error(f"'{tok.text}' statements are not supported", tok)
        return self.parse_simple_statement()

    def parse_simple_statement(self):
        targets = self.try_parse_assign_targets()
        if targets is not None:
            first = self.peek(-1)  # the '=' token was just consumed
            expr = self.parse_expr_or_tuple()
            self.expect(TokenKind.NEWLINE)
            return Assign(targets, expr, line=first.line, col=first.col)

        tok = self.peek()
        if tok.kind == TokenKind.NAME and self.peek(1).kind == TokenKind.OP and self.peek(1).text in ("+=", "-="):
            name = self.advance()
            op = self.advance()
            expr = self.parse_expr_or_tuple()
            self.expect(TokenKind.NEWLINE)
            return AugAssign(name.text, op.text, expr, line=name.line, col=name.col)

        expr = self.parse_expr_or_tuple()
        self.expect(TokenKind.NEWLINE)
        return ExprStmt(expr, line=tok.line, col=tok.col)

    def try_parse_assign_targets(self) -> tuple[str, ...] | None:
        """Scan ahead for `name (, name)* =` and consume through the '=' if present."""
        i = self.pos
        names = []
        while True:
            if self.tokens[i].kind != TokenKind.NAME:
                return None
            names.append(self.tokens[i].text)
            i += 1
            nxt = self.tokens[i]
            if nxt.kind == TokenKind.OP and nxt.text == ",":
                i += 1
                continue
            if nxt.kind == TokenKind.OP and nxt.text == "=":
                self.pos = i + 1
                return tuple(names)
            return None

    def parse_for(self) -> For:
        kw = self.expect(TokenKind.KEYWORD, "for")
        loop_var = self.expect(TokenKind.NAME)
        self.expect(TokenKind.KEYWORD, "in")
        iterable = self.parse_expr()
        body = self.parse_suite()
        return For(loop_var.text, iterable, body, line=kw.line, col=kw.col)

    def parse_if(self) -> If:
        kw = self.expect(TokenKind.KEYWORD, "if")
        branches = [(self.parse_expr(), self.parse_suite())]
        else_body = None
        while self.at(TokenKind.KEYWORD, "elif"):
            self.advance()
            branches.append((self.parse_expr(), self.parse_suite()))
        if self.at(TokenKind.KEYWORD, "else"):
            self.advance()
            else_body = self.parse_suite()
        return If(tuple(branches), else_body, line=kw.line, col=kw.col)

    def parse_suite(self) -> Block:
        self.expect(TokenKind.OP, ":")
        self.expect(TokenKind.NEWLINE)
        return self.parse_block()

    # --- expressions ---

    def parse_expr_or_tuple(self):
        first = self.parse_expr()
        if not self.at(TokenKind.OP, ","):
            return first
        items = [first]
        while self.at(TokenKind.OP, ","):
            self.advance()
            items.append(self.parse_expr())
        return TupleExpr(tuple(items), line=first.line, col=first.col)

    def parse_expr(self):
        return self.parse_or()

    def parse_or(self):
        first = self.parse_and()
        if not self.at(TokenKind.KEYWORD, "or"):
            return first
        operands = [first]
        while self.at(TokenKind.KEYWORD, "or"):
            self.advance()
            operands.append(self.parse_and())
        return BoolOp("or", tuple(operands), line=first.line, col=first.col)

    def parse_and(self):
        first = self.parse_not()
        if not self.at(TokenKind.KEYWORD, "and"):
            return first
        operands = [first]
        while self.at(TokenKind.KEYWORD, "and"):
            self.advance()
            operands.append(self.parse_not())
        return BoolOp("and", tuple(operands), line=first.line, col=first.col)

    def parse_not(self):
        if self.at(TokenKind.KEYWORD, "not"):
            kw = self.advance()
            return UnaryNot(self.parse_not(), line=kw.line, col=kw.col)
        return self.parse_comparison()

    def parse_comparison(self):
        left = self.parse_arith()
        while self.at_op(_COMPARE_OPS):
            op = self.advance()
            left = Compare(op.text, left, self.parse_arith(), line=op.line, col=op.col)
        return left

    def parse_arith(self):
        left = self.parse_term()
        while self.at_op(("+", "-")):
            op = self.advance()
            left = BinOp(op.text, left, self.parse_term(), line=op.line, col=op.col)
        return left

    def parse_term(self):
        left = self.parse_postfix()
        while self.at_op(("*", "/", "%")):
            op = self.advance()
            left = BinOp(op.text, left, self.parse_postfix(), line=op.line, col=op.col)
        return left

    def at_op(self, texts) -> bool:
        tok = self.peek()
        return tok.kind == TokenKind.OP and tok.text in texts

    def parse_postfix(self):
        atom = self.parse_atom()
        tok = self.peek()
        if self.at(TokenKind.OP, "["):
            raise self.error("indexing is not supported", tok)
        if self.at(TokenKind.OP, "."):
            raise self.error("attribute access is not supported", tok)
        if self.at(TokenKind.OP, "("):
            raise self.error("calling an expression is not supported", tok)
        return atom

    def parse_atom(self):
        tok = self.peek()
        if tok.kind == TokenKind.INT:
            self.advance()
            return Literal(int(tok.text), line=tok.line, col=tok.col)
        if tok.kind == TokenKind.FLOAT:
            self.advance()
            return Literal(float(tok.text), line=tok.line, col=tok.col)
        if tok.kind == TokenKind.STRING:
            self.advance()
            return Literal(tok.text, line=tok.line, col=tok.col)
        if tok.kind == TokenKind.NAME:
            if tok.text in _FORBIDDEN_STATEMENTS:
                raise self.error(f"'{tok.text}' is not supported", tok)
            self.advance()
            if self.at(TokenKind.OP, "("):
                return self.parse_call(tok)
            return Name(tok.text, line=tok.line, col=tok.col)
        if tok.kind == TokenKind.OP and tok.text == "(":
            self.advance()
            if self.at(TokenKind.OP, ")"):
                raise self.error("empty parentheses", tok)
            inner = self.parse_expr_or_tuple()
            self.expect(TokenKind.OP, ")")
            return inner
        if tok.kind == TokenKind.OP and tok.text == "[":
            raise self.error("list literals are not supported", tok)
        if tok.kind == TokenKind.OP and tok.text == "{":
            raise self.error("dict literals are not supported", tok)
        raise self.error(f"expected an expression, found {self.describe(tok)}", tok)

    def parse_call(self, name_tok: Token) -> Call:
        if name_tok.text not in WHITELISTED_FUNCTIONS:
            raise self.error(f"call to non-whitelisted function '{name_tok.text}'", name_tok)
        self.expect(TokenKind.OP, "(")
        args = []
        if not self.at(TokenKind.OP, ")"):
            args.append(self.parse_expr())
            while self.at(TokenKind.OP, ","):
                self.advance()
                args.append(self.parse_expr())
        self.expect(TokenKind.OP, ")")
        return Call(name_tok.text, tuple(args), line=name_tok.line, col=name_tok.col)


def parse(tokens: list[Token]) -> Block:
    """Parse a token stream into a program Block, or raise UnsupportedSyntax."""
    return _Parser(tokens).parse_program()


def parse_source(source: str) -> Block:
    """Tokenize + parse in one step; raises LexError or UnsupportedSyntax."""
    return parse(tokenize(source))


__all__ = [
    "BUILTIN_FUNCTIONS",
    "LexError",
    "PRIMITIVE_FUNCTIONS",
    "UnsupportedSyntax",
    "WHITELISTED_FUNCTIONS",
    "parse",
    "parse_source",
]
