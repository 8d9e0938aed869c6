"""Prompt assembly for program generation and caption QA.

Both builders are pure string renderers: identical inputs give identical
bytes, which the golden tests freeze. The shipped preamble templates
reproduce the published few-shot prompt format, including its quirks (the
single-image import line names open_images and find_matching_image even
though that flavor documents open_image; the multi-image API doc keeps the
open_image name for a list-returning function). Do not "fix" the templates.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources

from .core import CoordinateFrame

SINGLE_IMAGE = "single_image"
MULTI_IMAGE = "multi_image"
FLAVORS = (SINGLE_IMAGE, MULTI_IMAGE)

# function names documented in each flavor's API reference block
FLAVOR_DOC_FUNCTIONS = {
    SINGLE_IMAGE: ("open_image", "query", "get_pos"),
    MULTI_IMAGE: ("open_image", "query", "find_matching_image", "get_pos"),
}

_TEMPLATE_FILES = {
    SINGLE_IMAGE: "preamble_single.txt",
    MULTI_IMAGE: "preamble_multi.txt",
}

_API_LINE = re.compile(r"^([a-z_]+)\(", re.MULTILINE)


class PromptError(ValueError):
    pass


class EmptyProgram(PromptError):
    """A completion contained no program text."""


def _load_template(flavor: str) -> str:
    package = resources.files(__package__) / "templates" / _TEMPLATE_FILES[flavor]
    return package.read_text(encoding="utf-8")


@dataclass(frozen=True)
class Preamble:
    template: str
    flavor: str
    api_doc: tuple

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise PromptError(f"unknown prompt flavor {self.flavor!r}")
        object.__setattr__(self, "api_doc", tuple(self.api_doc))
        if self.api_doc != FLAVOR_DOC_FUNCTIONS[self.flavor]:
            raise PromptError(
                f"api_doc {self.api_doc} does not match the {self.flavor} function set"
            )

    def render(self, frame: CoordinateFrame) -> str:
        def fmt(value):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            return value

        return self.template.format(
            left=fmt(frame.left), bottom=fmt(frame.bottom),
            right=fmt(frame.right), top=fmt(frame.top),
        )


def preamble_for(flavor: str) -> Preamble:
    template = _load_template(flavor)
    documented = tuple(_API_LINE.findall(template.split("API Reference:")[-1]))
    return Preamble(template=template, flavor=flavor, api_doc=documented)


def question_marker(flavor: str, index: int) -> str:
    if flavor == MULTI_IMAGE:
        return f"# Image Set {index}:"
    return f"# Image {index}:"


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    example_ids: tuple
    token_estimate: int

    def __post_init__(self):
        object.__setattr__(self, "example_ids", tuple(self.example_ids))


def _estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


def _finish(text: str, example_ids, max_tokens) -> RenderedPrompt:
    estimate = _estimate_tokens(text)
    if max_tokens is not None and estimate > max_tokens:
        raise PromptError(
            f"prompt estimate {estimate} tokens exceeds the budget of {max_tokens}"
        )
    return RenderedPrompt(text=text, example_ids=tuple(example_ids),
                          token_estimate=estimate)


def build_code_prompt(preamble: Preamble, examples, question: str,
                      frame: CoordinateFrame, max_tokens=None) -> RenderedPrompt:
    """Preamble, then one "# Image N: question" block per example with its
    program, then the test question as a final block the LM completes."""
    if not examples:
        raise PromptError("build_code_prompt needs at least one example")
    if not question.strip():
        raise PromptError("empty question")
    parts = [preamble.render(frame)]
    ids = []
    for n, example in enumerate(examples, start=1):
        program = example.program
        if not program.endswith("\n"):
            program += "\n"
        parts.append(f"{question_marker(preamble.flavor, n)} {example.question}\n{program}")
        ids.append(example.id)
    parts.append(f"{question_marker(preamble.flavor, len(ids) + 1)} {question}\n")
    return _finish("".join(parts), ids, max_tokens)


def _caption_block(lines) -> str:
    return "Image captions:\n" + "".join(f"{line}\n" for line in lines)


def build_qa_prompt(question: str, captions, qa_examples=(), max_tokens=None) -> RenderedPrompt:
    """Each shot renders as its captions (all images of the example), the
    question, and the answer; the test block ends on the answer cue."""
    if not question.strip():
        raise PromptError("empty question")
    if not captions:
        raise PromptError("build_qa_prompt needs captions for the test question")
    parts = []
    ids = []
    for example in qa_examples:
        lines = [line for image_captions in example.captions for line in image_captions]
        parts.append(_caption_block(lines))
        parts.append(f"Question: {example.question}\nAnswer: {example.answer}\n\n")
        ids.append(example.id)
    test_lines = [line for caption_set in captions for line in caption_set.captions]
    parts.append(_caption_block(test_lines))
    parts.append(f"Question: {question}\nAnswer:")
    return _finish("".join(parts), ids, max_tokens)


_FENCE = re.compile(r"^```[a-zA-Z]*\s*$")


def extract_program(completion: str) -> str:
    """Recover the program from an LM completion: drop code fences, drop an
    echoed leading question marker, truncate at the next question marker."""
    lines = completion.split("\n")
    lines = [line for line in lines if not _FENCE.match(line)]
    if lines and lines[0].lstrip().startswith("# Image"):
        lines = lines[1:]
    kept = []
    for line in lines:
        if line.lstrip().startswith("# Image"):
            break
        kept.append(line)
    while kept and not kept[-1].strip():
        kept.pop()
    if not any(line.strip() for line in kept):
        raise EmptyProgram("completion contains no program text")
    return "\n".join(kept) + "\n"


__all__ = [
    "EmptyProgram",
    "FLAVOR_DOC_FUNCTIONS",
    "FLAVORS",
    "MULTI_IMAGE",
    "Preamble",
    "PromptError",
    "RenderedPrompt",
    "SINGLE_IMAGE",
    "build_code_prompt",
    "build_qa_prompt",
    "extract_program",
    "preamble_for",
    "question_marker",
]
