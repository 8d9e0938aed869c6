"""Program-synthesis engine for visual question answering.

A question is turned into a short program by a code LM, the program runs in a
sandboxed interpreter whose visual primitives talk to pluggable backends, and
runtime failures fall back to a caption-then-answer procedure.
"""

__version__ = "0.1.0"

from .core import (
    AnswerRecord,
    CoordinateFrame,
    CoreError,
    EngineConfig,
    VQAInstance,
    statement_to_question,
)
from .proglang import InterpreterLimits, execute, parse_source

__all__ = [
    "AnswerRecord",
    "CoordinateFrame",
    "CoreError",
    "EngineConfig",
    "InterpreterLimits",
    "VQAInstance",
    "execute",
    "parse_source",
    "statement_to_question",
    "__version__",
]
