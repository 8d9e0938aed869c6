"""Indentation-sensitive lexer for the generated-program language."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class TokenKind(Enum):
    NAME = "name"
    INT = "int"
    FLOAT = "float"
    STRING = "string"
    OP = "op"
    NEWLINE = "newline"
    INDENT = "indent"
    DEDENT = "dedent"
    KEYWORD = "keyword"
    EOF = "eof"

    def __repr__(self) -> str:
        return self.value.upper()


KEYWORDS = frozenset({"for", "in", "if", "elif", "else", "and", "or", "not"})

# longest first so "==" wins over "="
_MULTI_OPS = ("==", "!=", "<=", ">=", "+=", "-=")
_SINGLE_OPS = "=<>+-*/%(),:[]{}.;"

_ESCAPES = {"\\": "\\", "'": "'", '"': '"', "n": "\n", "t": "\t"}


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    line: int
    col: int

    def __repr__(self) -> str:
        return f"{self.kind!r}({self.text!r})@{self.line}:{self.col}"


class LexError(Exception):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


class _Lexer:
    def __init__(self, source: str):
        self.source = source
        self.pos = 0
        self.line = 1
        self.col = 1
        self.tokens: list[Token] = []
        self.indents = [""]
        self.paren_depth = 0
        self.line_has_content = False

    def error(self, message: str) -> LexError:
        return LexError(message, self.line, self.col)

    def peek(self, offset: int = 0) -> str:
        i = self.pos + offset
        return self.source[i] if i < len(self.source) else ""

    def advance(self) -> str:
        ch = self.source[self.pos]
        self.pos += 1
        if ch == "\n":
            self.line += 1
            self.col = 1
        else:
            self.col += 1
        return ch

    def add(self, kind: TokenKind, text: str, line: int, col: int) -> None:
        self.tokens.append(Token(kind, text, line, col))

    def run(self) -> list[Token]:
        self.handle_line_start()
        while self.pos < len(self.source):
            self.scan_one()
        # close the final logical line and any open blocks
        if self.line_has_content:
            self.add(TokenKind.NEWLINE, "", self.line, self.col)
        while len(self.indents) > 1:
            self.indents.pop()
            self.add(TokenKind.DEDENT, "", self.line, self.col)
        self.add(TokenKind.EOF, "", self.line, self.col)
        return self.tokens

    def handle_line_start(self) -> None:
        """Measure indentation and emit INDENT/DEDENT; skips blank/comment lines."""
        while self.pos < len(self.source):
            indent = ""
            while self.peek() in (" ", "\t"):
                indent += self.advance()
            if self.peek() == "#":
                while self.pos < len(self.source) and self.peek() != "\n":
                    self.advance()
            if self.peek() == "\n":
                self.advance()
                continue
            if self.pos >= len(self.source):
                return
            current = self.indents[-1]
            if indent == current:
                return
            if indent.startswith(current):
                self.indents.append(indent)
                self.add(TokenKind.INDENT, indent, self.line, 1)
                return
            if indent not in self.indents:
                raise self.error("dedent does not match any outer indentation level")
            while self.indents[-1] != indent:
                self.indents.pop()
                self.add(TokenKind.DEDENT, "", self.line, 1)
            return

    def scan_one(self) -> None:
        ch = self.peek()
        line, col = self.line, self.col

        if ch == "\n":
            self.advance()
            if self.paren_depth == 0:
                if self.line_has_content:
                    self.add(TokenKind.NEWLINE, "", line, col)
                    self.line_has_content = False
                self.handle_line_start()
            return

        if ch in (" ", "\t", "\r"):
            self.advance()
            return

        if ch == "#":
            while self.pos < len(self.source) and self.peek() != "\n":
                self.advance()
            return

        self.line_has_content = True

        if ch.isdigit():
            self.scan_number(line, col)
            return

        if ch.isalpha() or ch == "_":
            self.scan_name(line, col)
            return

        if ch in ("'", '"'):
            self.scan_string(line, col)
            return

        two = self.source[self.pos : self.pos + 2]
        if two in _MULTI_OPS:
            self.advance()
            self.advance()
            self.add(TokenKind.OP, two, line, col)
            return

        if ch == "!":
            raise self.error("illegal character '!'")

        if ch in _SINGLE_OPS:
            self.advance()
            if ch == "(":
                self.paren_depth += 1
            elif ch == ")":
                self.paren_depth = max(0, self.paren_depth - 1)
            self.add(TokenKind.OP, ch, line, col)
            return

        raise self.error(f"illegal character {ch!r}")

    def scan_number(self, line: int, col: int) -> None:
        text = ""
        while self.peek().isdigit():
            text += self.advance()
        if self.peek() == "." and self.peek(1).isdigit():
            text += self.advance()
            while self.peek().isdigit():
                text += self.advance()
            self.add(TokenKind.FLOAT, text, line, col)
        else:
            self.add(TokenKind.INT, text, line, col)

    def scan_name(self, line: int, col: int) -> None:
        text = ""
        while self.peek().isalnum() or self.peek() == "_":
            text += self.advance()
        kind = TokenKind.KEYWORD if text in KEYWORDS else TokenKind.NAME
        self.add(kind, text, line, col)

    def scan_string(self, line: int, col: int) -> None:
        quote = self.advance()
        text = ""
        while True:
            if self.pos >= len(self.source) or self.peek() == "\n":
                raise LexError("unterminated string", line, col)
            ch = self.advance()
            if ch == quote:
                break
            if ch == "\\":
                esc = self.peek()
                if esc in _ESCAPES:
                    self.advance()
                    text += _ESCAPES[esc]
                    continue
                raise self.error(f"unknown escape sequence '\\{esc}'")
            text += ch
        self.add(TokenKind.STRING, text, line, col)


def tokenize(source: str) -> list[Token]:
    """Tokenize program source into an indentation-balanced token stream.

    4-space and tab indentation are both accepted (any consistent prefix
    scheme is); comments and blank lines vanish; newlines inside parentheses
    do not end the logical line. Raises LexError on unterminated strings,
    inconsistent dedents and characters outside the language.
    """
    return _Lexer(source).run()


__all__ = ["KEYWORDS", "LexError", "Token", "TokenKind", "tokenize"]
