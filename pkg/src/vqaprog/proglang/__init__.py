"""Restricted program language: lexer, parser, and sandboxed interpreter."""

from .interp import (
    ExecutionResult,
    ImageHandle,
    InterpreterLimits,
    Pos,
    PrimitiveCall,
    PrimitiveError,
    ProgRuntimeError,
    RuntimeErrorKind,
    execute,
    stringify_answer,
)
from .nodes import Block
from .parser import (
    BUILTIN_FUNCTIONS,
    PRIMITIVE_FUNCTIONS,
    WHITELISTED_FUNCTIONS,
    UnsupportedSyntax,
    parse,
    parse_source,
)
from .tokens import LexError, Token, TokenKind, tokenize

__all__ = [
    "BUILTIN_FUNCTIONS",
    "Block",
    "ExecutionResult",
    "ImageHandle",
    "InterpreterLimits",
    "LexError",
    "PRIMITIVE_FUNCTIONS",
    "Pos",
    "PrimitiveCall",
    "PrimitiveError",
    "ProgRuntimeError",
    "RuntimeErrorKind",
    "Token",
    "TokenKind",
    "UnsupportedSyntax",
    "WHITELISTED_FUNCTIONS",
    "execute",
    "parse",
    "parse_source",
    "stringify_answer",
    "tokenize",
]
