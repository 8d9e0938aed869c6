"""Shared domain types and the normalized instance/answer data model.

Everything here is an immutable value object: instances are loaded once,
then shared freely between workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .proglang.interp import InterpreterLimits

STATEMENT_PREFIX = "Is it true that "


class CoreError(ValueError):
    pass


@dataclass(frozen=True)
class VQAInstance:
    """One question (or statement) with its images, gold answers and grouping tags."""

    id: str
    text: str
    is_statement: bool
    image_refs: tuple[str, ...]
    gold_answers: tuple[str, ...]
    dataset: str = ""
    question_type: str | None = None

    def __post_init__(self):
        if not self.image_refs:
            raise CoreError(f"instance {self.id!r}: image_refs must be non-empty")
        if not self.gold_answers:
            raise CoreError(f"instance {self.id!r}: gold_answers must be non-empty")
        # loaders may hand us lists; normalize to tuples so instances stay hashable
        if not isinstance(self.image_refs, tuple):
            object.__setattr__(self, "image_refs", tuple(self.image_refs))
        if not isinstance(self.gold_answers, tuple):
            object.__setattr__(self, "gold_answers", tuple(self.gold_answers))

    @property
    def num_images(self) -> int:
        return len(self.image_refs)

    @property
    def question(self) -> str:
        """The text in question form (statements get converted)."""
        if self.is_statement:
            return statement_to_question(self.text)
        return self.text

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "is_statement": self.is_statement,
            "image_refs": list(self.image_refs),
            "gold_answers": list(self.gold_answers),
            "dataset": self.dataset,
            "question_type": self.question_type,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "VQAInstance":
        try:
            return cls(
                id=str(obj["id"]),
                text=str(obj["text"]),
                is_statement=bool(obj["is_statement"]),
                image_refs=tuple(str(r) for r in obj["image_refs"]),
                gold_answers=tuple(str(a) for a in obj["gold_answers"]),
                dataset=str(obj.get("dataset", "")),
                question_type=obj.get("question_type"),
            )
        except KeyError as exc:
            raise CoreError(f"instance record missing field {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class CoordinateFrame:
    """Coordinate bounds the generated programs see, plus the backing patch grid."""

    left: float = 0.0
    bottom: float = 0.0
    right: float = 24.0
    top: float = 24.0
    grid_w: int = 24
    grid_h: int = 24

    def __post_init__(self):
        if not self.left < self.right:
            raise CoreError("coordinate frame requires left < right")
        if not self.bottom < self.top:
            raise CoreError("coordinate frame requires bottom < top")
        if self.grid_w < 1 or self.grid_h < 1:
            raise CoreError("grid dimensions must be >= 1")


@dataclass(frozen=True)
class EngineConfig:
    """Knobs for one engine run.

    Defaults are the single-image settings (12 code shots, 7 captions per
    image); `for_multi_image` switches to the multi-image ones (6 and 3).
    """

    num_code_shots: int = 12
    num_qa_shots: int = 12
    captions_per_image: int = 7
    num_patch_samples: int = 20
    gradcam_layer: int = 6
    max_caption_rounds: int = 10
    detection_threshold: float = 0.5
    knowledge_bias_tokens: tuple[str, ...] = ("-", "to", "°")
    knowledge_bias_value: float = -100.0
    prompt_token_budget: int = 100_000
    most_similar_last: bool = True
    rng_seed: int = 0
    coordinate_frame: CoordinateFrame = field(default_factory=CoordinateFrame)
    interpreter_limits: InterpreterLimits = field(default_factory=InterpreterLimits)

    def __post_init__(self):
        counts = (
            self.num_code_shots,
            self.num_qa_shots,
            self.captions_per_image,
            self.num_patch_samples,
            self.max_caption_rounds,
        )
        if min(counts) < 1:
            raise CoreError("all configured counts must be strictly positive")

    @classmethod
    def for_multi_image(cls, **overrides) -> "EngineConfig":
        base = dict(num_code_shots=6, num_qa_shots=6, captions_per_image=3)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class AnswerRecord:
    instance_id: str
    predicted: str
    used_fallback: bool
    trace_ref: str

    def to_json_obj(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "predicted": self.predicted,
            "used_fallback": self.used_fallback,
            "trace_ref": self.trace_ref,
        }


def statement_to_question(text: str) -> str:
    """Rewrite a true/false statement as a question.

    "There are two dogs." -> "Is it true that there are two dogs?"

    Idempotent: text already carrying the prefix is returned unchanged.
    One trailing period is dropped and the result always ends with "?".
    """
    if not text:
        raise CoreError("statement text must be non-empty")
    if text.startswith(STATEMENT_PREFIX):
        return text
    body = text.strip()
    if body.endswith("."):
        body = body[:-1]
    body = body[:1].lower() + body[1:]
    if not body.endswith("?"):
        body += "?"
    return STATEMENT_PREFIX + body


def normalize_bool_answer(gold: str) -> str:
    """Map True/False labels (any casing) to yes/no; leave other answers alone."""
    lowered = gold.strip().lower()
    if lowered == "true":
        return "yes"
    if lowered == "false":
        return "no"
    return gold


def write_instances_jsonl(instances: list[VQAInstance], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json_obj(), ensure_ascii=False) + "\n")


def read_instances_jsonl(path) -> list[VQAInstance]:
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CoreError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                instances.append(VQAInstance.from_json_obj(obj))
            except CoreError as exc:
                raise CoreError(f"{path}: line {lineno}: {exc}") from exc
    return instances


__all__ = [
    "AnswerRecord",
    "CoordinateFrame",
    "CoreError",
    "EngineConfig",
    "InterpreterLimits",
    "STATEMENT_PREFIX",
    "VQAInstance",
    "normalize_bool_answer",
    "read_instances_jsonl",
    "replace",
    "statement_to_question",
    "write_instances_jsonl",
]
