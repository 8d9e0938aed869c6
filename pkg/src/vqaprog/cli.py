"""Command-line entry point.

Subcommands: eval (run a dataset), ask (one question), parse (check a
program), fixtures gen (emit a synthetic corpus). Configuration comes from a
TOML file; a handful of flags override it. Secrets never live in the config:
values may reference environment variables as ${ENV:NAME}, and the HTTP
backend reads its bearer token from the environment by name.

Exit codes: 0 success, 2 config error, 3 dataset error, 4 backend
unreachable, 5 parse failure, 130 interrupted.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .backends.base import BackendError
from .backends.cache import cached
from .backends.http import DEFAULT_API_KEY_ENV, HttpBackend
from .backends.mock import (
    OracleAnswerLM,
    SceneOracleBackend,
    ScriptedCodeLM,
    load_scenes,
)
from .core import CoreError, EngineConfig, VQAInstance
from .fixtures import generate_corpus, write_corpus
from .harness import (
    DATASET_FORMATS,
    Engine,
    FormatError,
    MODES,
    MODE_CODEVQA,
    RETRIEVAL_EMBEDDING,
    RETRIEVAL_MODES,
    answer_instance,
    breakdown,
    load_dataset,
    run_eval,
)
from .proglang import LexError, UnsupportedSyntax, parse_source
from .proglang.nodes import to_json_obj as node_to_json_obj, to_text
from .retrieval import ExampleStore, RetrievalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_BACKEND = 4
EXIT_PARSE = 5
EXIT_INTERRUPTED = 130

BACKEND_KINDS = ("oracle", "http")

_ENV_REF = re.compile(r"\$\{ENV:([A-Za-z_][A-Za-z0-9_]*)\}")

# [engine] keys the config file may set; everything else in EngineConfig is
# code-level (coordinate frame, interpreter limits)
_ENGINE_KEYS = frozenset(
    (
        "num_code_shots",
        "num_qa_shots",
        "captions_per_image",
        "num_patch_samples",
        "gradcam_layer",
        "max_caption_rounds",
        "detection_threshold",
        "knowledge_bias_tokens",
        "knowledge_bias_value",
        "prompt_token_budget",
        "most_similar_last",
        "rng_seed",
    )
)

_RUN_DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "mode": MODE_CODEVQA,
    "retrieval": RETRIEVAL_EMBEDDING,
    "output": "out",
}


class ConfigError(CoreError):
    pass


@dataclass
class RunConfig:
    """Validated, path-resolved view of one config file."""

    base_dir: str
    dataset: dict | None
    store_path: str | None
    backends: dict
    engine_overrides: dict
    run: dict = field(default_factory=dict)

    def engine_config(self) -> EngineConfig:
        return EngineConfig(**self.engine_overrides)

    def canonical_toml(self) -> str:
        """Normalized serialization; re-parsing it yields an equal config."""
        sections = []
        if self.dataset is not None:
            sections.append(("dataset", self.dataset))
        if self.store_path is not None:
            sections.append(("store", {"path": self.store_path}))
        sections.append(("backends", self.backends))
        if self.engine_overrides:
            sections.append(("engine", self.engine_overrides))
        sections.append(("run", self.run))
        out = []
        for name, table in sections:
            out.append(f"[{name}]")
            for key in sorted(table):
                out.append(f"{key} = {_toml_value(table[key])}")
            out.append("")
        return "\n".join(out)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value of type {type(value).__name__}")


def _interpolate(value):
    """Replace ${ENV:NAME} references in string values, recursively."""
    if isinstance(value, str):

        def sub(match):
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(
                    f"config references environment variable {name!r}, which is not set"
                )
            return os.environ[name]

        return _ENV_REF.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def _resolve(base_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def _require_path(base_dir: str, table: dict, section: str, key: str) -> str:
    if key not in table:
        raise ConfigError(f"[{section}] is missing required key {key!r}")
    resolved = _resolve(base_dir, str(table[key]))
    if not os.path.exists(resolved):
        raise ConfigError(f"[{section}] {key} = {table[key]!r}: no such path")
    return resolved


def load_config(path, require_dataset: bool = True) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raw = _interpolate(raw)
    base_dir = os.path.dirname(os.path.abspath(path))

    unknown = set(raw) - {"dataset", "store", "backends", "engine", "run"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")

    dataset = raw.get("dataset")
    if dataset is None and require_dataset:
        raise ConfigError("[dataset] section is required")
    if dataset is not None:
        fmt = dataset.get("format", "normalized")
        if fmt not in DATASET_FORMATS:
            raise ConfigError(
                f"[dataset] format {fmt!r} not one of {', '.join(DATASET_FORMATS)}"
            )
        dataset = {
            "path": _require_path(base_dir, dataset, "dataset", "path"),
            "format": fmt,
        }

    store_path = None
    if "store" in raw:
        store_path = _require_path(base_dir, raw["store"], "store", "path")

    backends = dict(raw.get("backends") or {})
    kind = backends.get("kind")
    if kind not in BACKEND_KINDS:
        raise ConfigError(
            f"[backends] kind {kind!r} not one of {', '.join(BACKEND_KINDS)}"
        )
    if kind == "oracle":
        backends["scenes"] = _require_path(base_dir, backends, "backends", "scenes")
        if "programs" in backends:
            backends["programs"] = _require_path(base_dir, backends, "backends", "programs")
    else:
        for key in ("code_lm", "vision", "answer_lm"):
            if key not in backends:
                raise ConfigError(f"[backends] is missing required key {key!r}")
    if "cache_dir" in backends:
        backends["cache_dir"] = _resolve(base_dir, str(backends["cache_dir"]))

    engine_overrides = dict(raw.get("engine") or {})
    bad = set(engine_overrides) - _ENGINE_KEYS
    if bad:
        raise ConfigError(f"[engine] unknown key(s): {', '.join(sorted(bad))}")
    if "knowledge_bias_tokens" in engine_overrides:
        engine_overrides["knowledge_bias_tokens"] = tuple(
            engine_overrides["knowledge_bias_tokens"]
        )

    run = dict(_RUN_DEFAULTS)
    extra = set(raw.get("run") or {}) - set(_RUN_DEFAULTS)
    if extra:
        raise ConfigError(f"[run] unknown key(s): {', '.join(sorted(extra))}")
    run.update(raw.get("run") or {})
    if run["mode"] not in MODES:
        raise ConfigError(f"[run] mode {run['mode']!r} not one of {', '.join(MODES)}")
    if run["retrieval"] not in RETRIEVAL_MODES:
        raise ConfigError(
            f"[run] retrieval {run['retrieval']!r} not one of {', '.join(RETRIEVAL_MODES)}"
        )

    config = RunConfig(
        base_dir=base_dir,
        dataset=dataset,
        store_path=store_path,
        backends=backends,
        engine_overrides=engine_overrides,
        run=run,
    )
    try:
        config.engine_config()
    except (CoreError, TypeError) as exc:
        raise ConfigError(f"[engine]: {exc}") from exc
    return config


def build_backends(config: RunConfig):
    """Returns (code_lm, vision, answer_lm) per the [backends] section."""
    spec = config.backends
    if spec["kind"] == "oracle":
        scenes = load_scenes(spec["scenes"])
        table = {}
        if "programs" in spec:
            with open(spec["programs"], "r", encoding="utf-8") as fh:
                table = json.load(fh)
        code_lm = ScriptedCodeLM(table, default_to_query=True)
        vision = SceneOracleBackend(scenes)
        answer_lm = OracleAnswerLM(scenes)
    else:
        api_key_env = spec.get("api_key_env", DEFAULT_API_KEY_ENV)
        code_lm = HttpBackend(spec["code_lm"], api_key_env=api_key_env)
        vision = HttpBackend(spec["vision"], api_key_env=api_key_env)
        answer_lm = HttpBackend(spec["answer_lm"], api_key_env=api_key_env)
    if "cache_dir" in spec:
        code_lm = cached(code_lm, spec["cache_dir"])
        vision = cached(vision, spec["cache_dir"])
        answer_lm = cached(answer_lm, spec["cache_dir"])
    return code_lm, vision, answer_lm


def _probe(vision) -> None:
    """Reach the vision backend once so unreachable endpoints fail fast."""
    vision.describe()


def build_engine(config: RunConfig, mode: str, retrieval: str) -> Engine:
    code_lm, vision, answer_lm = build_backends(config)
    _probe(vision)
    store = None
    if config.store_path is not None:
        store = ExampleStore.load(config.store_path)
    return Engine(
        code_lm=code_lm,
        vision=vision,
        answer_lm=answer_lm,
        config=config.engine_config(),
        store=store,
        mode=mode,
        retrieval=retrieval,
    )


def _print_report(report) -> None:
    print(f"accuracy {report.accuracy:.3f} ({report.correct}/{report.total})")
    print(f"fallback rate {report.fallback_rate:.3f} ({report.fallback_count}/{report.total})")
    if report.soft_score is not None:
        print(f"soft score {report.soft_score:.3f}")
    print()
    print("by question type")
    for row in breakdown(report, "question_type"):
        print(f"  {row['question_type']:<12} {row['accuracy']:.3f}  ({row['count']})")
    print()
    print("by number of images")
    for row in breakdown(report, "num_images"):
        print(f"  {row['num_images']:<3} {row['accuracy']:.3f}  ({row['count']})")


def cmd_eval(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    run = config.run
    seed = args.seed if args.seed is not None else int(run["seed"])
    workers = args.workers if args.workers is not None else int(run["workers"])
    mode = args.mode or run["mode"]
    retrieval = args.retrieval or run["retrieval"]
    output = args.output or _resolve(config.base_dir, str(run["output"]))

    try:
        engine = build_engine(config, mode, retrieval)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, RetrievalError, CoreError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        instances = load_dataset(config.dataset["path"], config.dataset["format"])
        if not instances:
            raise FormatError(f"{config.dataset['path']}: no instances")
    except (FormatError, OSError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET

    report = run_eval(
        engine, instances, output, run_seed=seed, workers=workers, soft=args.soft
    )
    _print_report(report)
    print(f"\nreport written to {os.path.join(output, 'report.json')}")
    if report.partial:
        print("interrupted: report is partial", file=sys.stderr)
        return EXIT_INTERRUPTED
    return EXIT_OK


def cmd_ask(args) -> int:
    try:
        config = load_config(args.config, require_dataset=False)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    mode = args.mode or config.run["mode"]
    retrieval = args.retrieval or config.run["retrieval"]
    try:
        engine = build_engine(config, mode, retrieval)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, RetrievalError, CoreError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    seed = args.seed if args.seed is not None else int(config.run["seed"])
    instance = VQAInstance(
        id="ask-0",
        text=args.question,
        is_statement=args.statement,
        image_refs=tuple(args.images),
        gold_answers=("?",),
    )
    record, trace = answer_instance(instance, engine, run_seed=seed)

    output = args.output or _resolve(config.base_dir, str(config.run["output"]))
    os.makedirs(os.path.join(output, "traces"), exist_ok=True)
    trace_path = os.path.join(output, record.trace_ref)
    with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(trace.to_json_obj(), fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"answer: {record.predicted}")
    if trace.program:
        print("\nprogram:")
        print(trace.program.rstrip("\n"))
    if record.used_fallback:
        print(f"\nfallback used: {trace.fallback_reason}")
    print(f"\ntrace: {trace_path}")
    return EXIT_OK


def cmd_parse(args) -> int:
    try:
        with open(args.source, "r", encoding="utf-8") as fh:
            source = fh.read()
    except OSError as exc:
        print(f"cannot read {args.source}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        ast = parse_source(source)
    except (LexError, UnsupportedSyntax) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_PARSE
    if args.json:
        print(json.dumps(node_to_json_obj(ast), ensure_ascii=False, indent=2))
    else:
        print(to_text(ast))
    return EXIT_OK


def cmd_fixtures_gen(args) -> int:
    corpus = generate_corpus(args.seed, args.n)
    write_corpus(corpus, args.output, seed=args.seed)
    print(
        f"wrote {len(corpus.instances)} instances, {len(corpus.scenes)} scenes, "
        f"{len(corpus.store.examples)} store examples to {args.output}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vqaprog",
        description="Answer visual questions by generating and executing small programs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="TOML run configuration")
    shared.add_argument("--seed", type=int, default=None, help="override [run] seed")
    shared.add_argument("--mode", choices=MODES, default=None, help="override [run] mode")
    shared.add_argument(
        "--retrieval", choices=RETRIEVAL_MODES, default=None,
        help="override [run] retrieval",
    )
    shared.add_argument("--output", default=None, help="override [run] output directory")

    p_eval = sub.add_parser("eval", parents=[shared], help="evaluate a dataset")
    p_eval.add_argument("--workers", type=int, default=None, help="override [run] workers")
    p_eval.add_argument(
        "--soft", action="store_true",
        help="also report the multi-annotator consensus score",
    )
    p_eval.set_defaults(func=cmd_eval)

    p_ask = sub.add_parser("ask", parents=[shared], help="answer one question")
    p_ask.add_argument("question")
    p_ask.add_argument("images", nargs="+", help="image reference(s)")
    p_ask.add_argument(
        "--statement", action="store_true",
        help="treat the text as a statement to verify",
    )
    p_ask.set_defaults(func=cmd_ask)

    p_parse = sub.add_parser("parse", help="parse a program and print its tree")
    p_parse.add_argument("source", help="program source file")
    p_parse.add_argument("--json", action="store_true", help="emit the tree as JSON")
    p_parse.set_defaults(func=cmd_parse)

    p_fixtures = sub.add_parser("fixtures", help="synthetic corpus tools")
    fixtures_sub = p_fixtures.add_subparsers(dest="fixtures_command", required=True)
    p_gen = fixtures_sub.add_parser("gen", help="generate a corpus")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--n", type=int, default=50, help="number of instances")
    p_gen.add_argument("--output", required=True, help="directory to write into")
    p_gen.set_defaults(func=cmd_fixtures_gen)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
