"""End-to-end runner: load instances, generate and execute programs, fall
back to caption QA on failure, score, and persist traces.

Every instance yields exactly one AnswerRecord and one Trace no matter what
goes wrong; failures route to the fallback path and, if that also fails, to
an empty recorded answer. Nothing raises out of answer_instance.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field

from . import __version__
from .backends.base import BackendError, CompletionParams
from .backends.wire import canonical_json
from .core import (
    AnswerRecord,
    CoreError,
    EngineConfig,
    VQAInstance,
    normalize_bool_answer,
    read_instances_jsonl,
)
from .primitives import PrimitiveError, PrimitiveRuntime, make_dispatcher
from .proglang import LexError, UnsupportedSyntax, execute, parse_source
from .prompting import (
    EmptyProgram,
    MULTI_IMAGE,
    PromptError,
    SINGLE_IMAGE,
    build_code_prompt,
    extract_program,
    preamble_for,
)
from .retrieval import RetrievalError, random_k, top_k

MODE_CODEVQA = "codevqa"
MODE_BASELINE = "baseline-always-fallback"
MODES = (MODE_CODEVQA, MODE_BASELINE)

RETRIEVAL_EMBEDDING = "embedding"
RETRIEVAL_RANDOM = "random"
RETRIEVAL_MODES = (RETRIEVAL_EMBEDDING, RETRIEVAL_RANDOM)

DATASET_FORMATS = ("normalized", "gqa", "covr", "nlvr2")

CODE_COMPLETION_PARAMS = CompletionParams(
    max_tokens=512, temperature=0.0, stop=("# Image",)
)


class FormatError(CoreError):
    pass


class MissingRecord(CoreError):
    pass


class UnknownKey(CoreError):
    pass


# -- engine ------------------------------------------------------------------


@dataclass
class Engine:
    """Backends, stores and knobs for one evaluation run."""

    code_lm: object
    vision: object
    answer_lm: object
    config: EngineConfig
    store: object | None = None
    mode: str = MODE_CODEVQA
    retrieval: str = RETRIEVAL_EMBEDDING

    def __post_init__(self):
        if self.mode not in MODES:
            raise CoreError(f"unknown mode {self.mode!r} (expected one of {MODES})")
        if self.retrieval not in RETRIEVAL_MODES:
            raise CoreError(
                f"unknown retrieval mode {self.retrieval!r} (expected one of {RETRIEVAL_MODES})"
            )

    def runtime(self) -> PrimitiveRuntime:
        """A fresh primitive runtime (own caption cache)."""
        return PrimitiveRuntime(self.vision, self.answer_lm, self.config, self.store)


def constants_env(frame) -> dict:
    """The LEFT/BOTTOM/RIGHT/TOP bindings the prompt preamble promises."""

    def scalar(value):
        return int(value) if float(value).is_integer() else float(value)

    return {
        "LEFT": scalar(frame.left),
        "BOTTOM": scalar(frame.bottom),
        "RIGHT": scalar(frame.right),
        "TOP": scalar(frame.top),
    }


# -- traces ------------------------------------------------------------------


@dataclass
class Trace:
    """Everything needed to audit one answered instance.

    Stage wall times live in `timings` and are excluded from the JSON form so
    trace files stay byte-identical across runs; the runner persists timings
    in a separate sidecar.
    """

    instance_id: str
    question: str
    mode: str
    code_prompt: str | None
    completion: str | None
    program: str | None
    parse_outcome: str
    execution: list
    captions: dict
    fallback_used: bool
    fallback_reason: str | None
    answer: str
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.fallback_used and not self.fallback_reason:
            raise CoreError("fallback_used requires a fallback_reason")

    def to_json_obj(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "question": self.question,
            "mode": self.mode,
            "code_prompt": self.code_prompt,
            "completion": self.completion,
            "program": self.program,
            "parse_outcome": self.parse_outcome,
            "execution": self.execution,
            "captions": self.captions,
            "fallback_used": self.fallback_used,
            "fallback_reason": self.fallback_reason,
            "answer": self.answer,
        }


def _caption_snapshot(runtime: PrimitiveRuntime) -> dict:
    return {
        ref: list(caption_set.captions)
        for ref, caption_set in sorted(runtime.cached_captions().items())
    }


# -- per-instance pipeline ---------------------------------------------------


def _code_shots(engine: Engine, question: str, rng: random.Random) -> list:
    if engine.store is None:
        return []
    pool = engine.store.of_kind("code")
    if not pool:
        return []
    k = min(engine.config.num_code_shots, len(pool))
    if engine.retrieval == RETRIEVAL_RANDOM:
        return random_k(engine.store, k, rng, kind="code")
    embedding = engine.vision.embed(question)
    shots = top_k(embedding, engine.store, k, kind="code")
    if engine.config.most_similar_last:
        shots = list(reversed(shots))
    return shots


def answer_instance(
    instance: VQAInstance, engine: Engine, run_seed: int = 0, index: int = 0
) -> tuple:
    """Run the full pipeline on one instance. Returns (AnswerRecord, Trace).

    Never raises: program-generation and execution failures route to the
    caption-QA fallback, and a fallback failure records an empty answer.
    Baseline mode skips generation and runs the fallback path for every
    instance, which is exactly the caption-QA procedure on its own.
    """
    seed = run_seed ^ index
    question = instance.question
    timings: dict = {}

    code_prompt = completion = program = None
    parse_outcome = "skipped"
    execution: list = []
    captions: dict = {}
    predicted = failure = None

    if engine.mode == MODE_CODEVQA:
        cell = _ProgramAttempt(instance, engine, seed)
        predicted, failure = cell.run(timings)
        code_prompt = cell.code_prompt
        completion = cell.completion
        program = cell.program
        parse_outcome = cell.parse_outcome
        execution = cell.execution
        if cell.captions:
            captions["program"] = cell.captions
    else:
        failure = "baseline mode: generation disabled"

    fallback_used = predicted is None
    fallback_reason = failure if fallback_used else None
    if fallback_used:
        start = time.perf_counter()
        runtime = engine.runtime()
        try:
            predicted = runtime.answer_question(
                instance.image_refs, question, random.Random(seed)
            )
        except PrimitiveError as exc:
            predicted = ""
            fallback_reason = f"{fallback_reason}; fallback failed: {exc}"
        except Exception as exc:  # totality net: never raise to the caller
            predicted = ""
            fallback_reason = (
                f"{fallback_reason}; internal error: {type(exc).__name__}: {exc}"
            )
        captions["fallback"] = _caption_snapshot(runtime)
        timings["fallback"] = time.perf_counter() - start

    trace = Trace(
        instance_id=instance.id,
        question=question,
        mode=engine.mode,
        code_prompt=code_prompt,
        completion=completion,
        program=program,
        parse_outcome=parse_outcome,
        execution=execution,
        captions=captions,
        fallback_used=fallback_used,
        fallback_reason=fallback_reason,
        answer=predicted,
        timings=timings,
    )
    record = AnswerRecord(
        instance_id=instance.id,
        predicted=predicted,
        used_fallback=fallback_used,
        trace_ref=f"traces/{_safe_name(instance.id)}.json",
    )
    return record, trace


class _ProgramAttempt:
    """One generate-parse-execute attempt, with artifacts kept for the trace."""

    def __init__(self, instance: VQAInstance, engine: Engine, seed: int):
        self.instance = instance
        self.engine = engine
        self.seed = seed
        self.code_prompt = None
        self.completion = None
        self.program = None
        self.parse_outcome = "skipped"
        self.execution: list = []
        self.captions: dict = {}

    def run(self, timings: dict):
        """Returns (answer or None, failure reason or None)."""
        instance, engine, seed = self.instance, self.engine, self.seed
        flavor = MULTI_IMAGE if instance.num_images > 1 else SINGLE_IMAGE

        start = time.perf_counter()
        try:
            rendered = build_code_prompt(
                preamble_for(flavor),
                _code_shots(engine, instance.question, random.Random(seed)),
                instance.question,
                engine.config.coordinate_frame,
                max_tokens=engine.config.prompt_token_budget,
            )
            self.code_prompt = rendered.text
        except (PromptError, RetrievalError, BackendError) as exc:
            return None, f"prompt: {exc}"
        finally:
            timings["prompt"] = time.perf_counter() - start

        start = time.perf_counter()
        try:
            self.completion = engine.code_lm.complete(
                self.code_prompt, CODE_COMPLETION_PARAMS
            )
        except BackendError as exc:
            return None, f"completion: {exc}"
        finally:
            timings["completion"] = time.perf_counter() - start

        try:
            self.program = extract_program(self.completion)
        except EmptyProgram as exc:
            self.parse_outcome = "empty program"
            return None, f"extraction: {exc}"

        start = time.perf_counter()
        try:
            ast = parse_source(self.program)
            self.parse_outcome = "ok"
        except (LexError, UnsupportedSyntax) as exc:
            self.parse_outcome = str(exc)
            return None, f"parse: {exc}"
        finally:
            timings["parse"] = time.perf_counter() - start

        start = time.perf_counter()
        runtime = engine.runtime()
        try:
            result = execute(
                ast,
                make_dispatcher(runtime),
                tuple(_handles(instance)),
                limits=engine.config.interpreter_limits,
                env=constants_env(engine.config.coordinate_frame),
                rng=random.Random(seed),
            )
        except Exception as exc:  # totality net; execute itself should not raise
            timings["execute"] = time.perf_counter() - start
            return None, f"internal error: {type(exc).__name__}: {exc}"
        timings["execute"] = time.perf_counter() - start
        self.execution = [call.to_json_obj() for call in result.trace]
        self.captions = _caption_snapshot(runtime)
        if result.error is not None:
            return None, f"execute: {result.error}"
        return result.answer, None


def _handles(instance: VQAInstance):
    from .proglang import ImageHandle

    return [ImageHandle(ref) for ref in instance.image_refs]


# -- scoring -----------------------------------------------------------------


def exact_match(predicted: str, golds) -> bool:
    """Lowercased exact match against any gold answer."""
    p = predicted.strip().lower()
    return any(p == g.strip().lower() for g in golds)


def soft_match(predicted: str, golds) -> float:
    """Multi-annotator consensus score: min(matching golds / 3, 1)."""
    p = predicted.strip().lower()
    matches = sum(1 for g in golds if p == g.strip().lower())
    return min(matches / 3.0, 1.0)


@dataclass(frozen=True)
class GroupStats:
    count: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.count

    def to_json_obj(self) -> dict:
        return {"count": self.count, "correct": self.correct, "accuracy": self.accuracy}


@dataclass
class EvalReport:
    total: int
    correct: int
    fallback_count: int
    by_question_type: dict
    by_num_images: dict
    soft_score: float | None = None
    partial: bool = False

    @property
    def accuracy(self) -> float:
        return self.correct / self.total

    @property
    def fallback_rate(self) -> float:
        return self.fallback_count / self.total

    def to_json_obj(self) -> dict:
        obj = {
            "total": self.total,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "fallback_count": self.fallback_count,
            "fallback_rate": self.fallback_rate,
            "by_question_type": [
                {"question_type": key, **stats.to_json_obj()}
                for key, stats in sorted(self.by_question_type.items())
            ],
            "by_num_images": [
                {"num_images": key, **stats.to_json_obj()}
                for key, stats in sorted(self.by_num_images.items())
            ],
            "partial": self.partial,
        }
        if self.soft_score is not None:
            obj["soft_score"] = self.soft_score
        return obj


def evaluate(records, instances, soft: bool = False, partial: bool = False) -> EvalReport:
    """Score one record per instance; groups sum to the total by construction."""
    by_id = {}
    for record in records:
        if record.instance_id in by_id:
            raise MissingRecord(f"duplicate record for instance {record.instance_id!r}")
        by_id[record.instance_id] = record

    total = correct = fallback_count = 0
    soft_total = 0.0
    type_groups: dict = {}
    image_groups: dict = {}
    for instance in instances:
        record = by_id.pop(instance.id, None)
        if record is None:
            raise MissingRecord(f"no record for instance {instance.id!r}")
        golds = [normalize_bool_answer(g) for g in instance.gold_answers]
        hit = exact_match(record.predicted, golds)
        total += 1
        correct += hit
        fallback_count += record.used_fallback
        if soft:
            soft_total += soft_match(record.predicted, golds)
        type_key = instance.question_type or "untagged"
        prev = type_groups.get(type_key, GroupStats(0, 0))
        type_groups[type_key] = GroupStats(prev.count + 1, prev.correct + hit)
        prev = image_groups.get(instance.num_images, GroupStats(0, 0))
        image_groups[instance.num_images] = GroupStats(prev.count + 1, prev.correct + hit)

    if by_id:
        extras = ", ".join(sorted(by_id))
        raise MissingRecord(f"records without instances: {extras}")
    if total == 0:
        raise MissingRecord("nothing to evaluate")

    return EvalReport(
        total=total,
        correct=correct,
        fallback_count=fallback_count,
        by_question_type=type_groups,
        by_num_images=image_groups,
        soft_score=(soft_total / total) if soft else None,
        partial=partial,
    )


def breakdown(report: EvalReport, key: str) -> list:
    """Per-group rows for one of the two reported groupings."""
    if key == "question_type":
        groups = report.by_question_type
        field_name = "question_type"
    elif key == "num_images":
        groups = report.by_num_images
        field_name = "num_images"
    else:
        raise UnknownKey(f"unknown breakdown key {key!r}")
    return [
        {field_name: group, **stats.to_json_obj()}
        for group, stats in sorted(groups.items())
    ]


# -- dataset loading ---------------------------------------------------------


def load_dataset(path, format: str = "normalized") -> list:
    """Read instances in one of the supported on-disk formats."""
    if format == "normalized":
        try:
            return read_instances_jsonl(path)
        except CoreError as exc:
            raise FormatError(str(exc)) from exc
    if format == "gqa":
        return _load_gqa(path)
    if format == "covr":
        return _load_covr(path)
    if format == "nlvr2":
        return _load_nlvr2(path)
    raise FormatError(f"unknown dataset format {format!r} (expected one of {DATASET_FORMATS})")


def _load_gqa(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            table = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(table, dict):
        raise FormatError(f"{path}: expected an object keyed by question id")
    instances = []
    for qid in sorted(table):
        rec = table[qid]
        try:
            qtype = rec.get("types", {}).get("structural")
            instances.append(
                VQAInstance(
                    id=str(qid),
                    text=str(rec["question"]),
                    is_statement=False,
                    image_refs=(str(rec["imageId"]),),
                    gold_answers=(str(rec["answer"]),),
                    dataset="gqa",
                    question_type=qtype,
                )
            )
        except (KeyError, CoreError, AttributeError) as exc:
            raise FormatError(f"{path}: question {qid!r}: {exc}") from exc
    return instances


def _iter_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc


def _load_covr(path) -> list:
    instances = []
    for lineno, rec in _iter_jsonl(path):
        try:
            text = rec["utterance"] if "utterance" in rec else rec["question"]
            answer = rec["answer"]
            gold = normalize_bool_answer(str(answer))
            instances.append(
                VQAInstance(
                    id=str(rec.get("qid", lineno)),
                    text=str(text),
                    is_statement=not str(text).rstrip().endswith("?"),
                    image_refs=tuple(str(s) for s in rec["scenes"]),
                    gold_answers=(gold,),
                    dataset="covr",
                    question_type=rec.get("pattern_name"),
                )
            )
        except (KeyError, CoreError, TypeError) as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return instances


def _load_nlvr2(path) -> list:
    instances = []
    for lineno, rec in _iter_jsonl(path):
        try:
            identifier = str(rec.get("identifier", lineno))
            if "images" in rec:
                refs = tuple(str(r) for r in rec["images"])
            else:
                refs = (f"{identifier}-img0", f"{identifier}-img1")
            instances.append(
                VQAInstance(
                    id=identifier,
                    text=str(rec["sentence"]),
                    is_statement=True,
                    image_refs=refs,
                    gold_answers=(normalize_bool_answer(str(rec["label"])),),
                    dataset="nlvr2",
                )
            )
        except (KeyError, CoreError, TypeError) as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return instances


# -- run persistence ---------------------------------------------------------


def _safe_name(instance_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", instance_id)


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def config_digest(config: EngineConfig) -> str:
    return hashlib.sha256(canonical_json(asdict(config)).encode("utf-8")).hexdigest()


def run_eval(
    engine: Engine,
    instances,
    output_dir,
    run_seed: int = 0,
    workers: int = 1,
    soft: bool = False,
) -> EvalReport:
    """Answer every instance, write report.json, traces/ and manifest.json.

    Worker scheduling cannot affect results: each instance derives its seed
    from (run_seed, index) alone and aggregation is order-independent. Stage
    timings go to timings.json, which is the one file allowed to vary
    between otherwise identical runs. Ctrl-C drains cleanly and writes a
    report flagged partial.
    """
    instances = list(instances)
    os.makedirs(os.path.join(output_dir, "traces"), exist_ok=True)

    started = time.perf_counter()
    results: dict = {}
    partial = False
    if workers <= 1:
        try:
            for i, instance in enumerate(instances):
                results[i] = answer_instance(instance, engine, run_seed, i)
        except KeyboardInterrupt:
            partial = True
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        futures = {
            pool.submit(answer_instance, instance, engine, run_seed, i): i
            for i, instance in enumerate(instances)
        }
        try:
            for future in as_completed(futures):
                results[futures[future]] = future.result()
            pool.shutdown(wait=True)
        except KeyboardInterrupt:
            partial = True
            pool.shutdown(wait=True, cancel_futures=True)
            for future, i in futures.items():
                if future.done() and not future.cancelled():
                    results[i] = future.result()

    answered = [instances[i] for i in sorted(results)]
    records = [results[i][0] for i in sorted(results)]
    traces = [results[i][1] for i in sorted(results)]

    timings = {"total_seconds": time.perf_counter() - started, "instances": {}}
    for trace in traces:
        _dump_json(
            trace.to_json_obj(),
            os.path.join(output_dir, "traces", f"{_safe_name(trace.instance_id)}.json"),
        )
        timings["instances"][trace.instance_id] = trace.timings

    report = evaluate(records, answered, soft=soft, partial=partial)
    _dump_json(report.to_json_obj(), os.path.join(output_dir, "report.json"))
    _dump_json(
        {
            "version": __version__,
            "run_seed": run_seed,
            "mode": engine.mode,
            "retrieval": engine.retrieval,
            "workers": workers,
            "num_instances": len(instances),
            "config_sha256": config_digest(engine.config),
            "partial": partial,
        },
        os.path.join(output_dir, "manifest.json"),
    )
    _dump_json(timings, os.path.join(output_dir, "timings.json"))
    return report


__all__ = [
    "CODE_COMPLETION_PARAMS",
    "DATASET_FORMATS",
    "Engine",
    "EvalReport",
    "FormatError",
    "GroupStats",
    "MODES",
    "MODE_BASELINE",
    "MODE_CODEVQA",
    "MissingRecord",
    "RETRIEVAL_EMBEDDING",
    "RETRIEVAL_MODES",
    "RETRIEVAL_RANDOM",
    "Trace",
    "UnknownKey",
    "answer_instance",
    "breakdown",
    "config_digest",
    "constants_env",
    "evaluate",
    "exact_match",
    "load_dataset",
    "run_eval",
    "soft_match",
]
