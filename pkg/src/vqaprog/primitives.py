"""The callable primitives exposed to generated programs.

PrimitiveRuntime owns the per-run state (caption cache, backend handles)
and implements the five operations; make_dispatcher adapts a runtime to the
interpreter's (name, args, rng) calling convention. All failures surface as
PrimitiveError so the interpreter can convert them into a fallback.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from .backends.base import BackendCapability, BackendError, CompletionParams
from .backends.wire import Detection
from .core import EngineConfig
from .gradcam import argmax_position, averaged_gradcam, sample_patches
from .proglang import ImageHandle, Pos, PrimitiveError
from .prompting import build_qa_prompt
from .retrieval import ExampleStore, top_k

PRIMITIVE_NAMES = (
    "query",
    "get_pos",
    "find_matching_image",
    "find_object",
    "knowledge_query",
)


@dataclass(frozen=True)
class CaptionSet:
    image_ref: str
    captions: tuple

    def __post_init__(self):
        object.__setattr__(self, "captions", tuple(self.captions))
        trimmed = [c.strip() for c in self.captions]
        if len(set(trimmed)) != len(trimmed):
            raise ValueError(f"captions for {self.image_ref} are not pairwise distinct")


def _first_line(text: str) -> str:
    return text.split("\n", 1)[0].strip().lower()


class PrimitiveRuntime:
    """Backend-facing implementation of the program primitives.

    vision serves attention/caption/itc/detect/embed; answer_lm serves
    completions for caption QA and knowledge questions. The caption cache
    is per-runtime: one runtime per answering phase keeps program and
    fallback caption state independent.
    """

    def __init__(self, vision: BackendCapability, answer_lm: BackendCapability,
                 config: EngineConfig, qa_store: ExampleStore | None = None):
        self.vision = vision
        self.answer_lm = answer_lm
        self.config = config
        self.qa_store = qa_store
        self._caption_cache = {}
        self._cache_lock = threading.Lock()
        self._info = None

    # -- shared plumbing -----------------------------------------------------

    def info(self):
        if self._info is None:
            self._info = self._backend_call(self.vision.describe)
        return self._info

    def _backend_call(self, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except BackendError as exc:
            raise PrimitiveError(f"{type(exc).__name__}: {exc}") from exc

    def _attention_map(self, image_ref: str, text: str):
        ca = self._backend_call(
            self.vision.attention_with_grad, image_ref, text, self.config.gradcam_layer
        )
        content = self.info().content_token_indices(len(ca.token_texts))
        return averaged_gradcam(ca, content)

    def captions_for(self, image_ref: str, question: str, rng) -> CaptionSet:
        """Steps 1-4: attention map for the question, patch sampling, and
        captioning rounds until captions_per_image unique captions exist.

        Cached per image_ref for the life of this runtime; the first
        question asked about an image fixes its captions.
        """
        with self._cache_lock:
            cached = self._caption_cache.get(image_ref)
        if cached is not None:
            return cached
        gmap = self._attention_map(image_ref, question)
        needed = self.config.captions_per_image
        collected = []
        seen = set()
        for round_index in range(self.config.max_caption_rounds):
            patches = sample_patches(gmap, self.config.num_patch_samples, rng)
            caption = self._backend_call(
                self.vision.caption, image_ref, tuple(patches), round_index
            )
            key = caption.strip()
            if key and key not in seen:
                seen.add(key)
                collected.append(caption)
            if len(collected) == needed:
                break
        if len(collected) < needed:
            raise PrimitiveError(
                f"only {len(collected)} unique captions for {image_ref} after "
                f"{self.config.max_caption_rounds} rounds (need {needed})"
            )
        caption_set = CaptionSet(image_ref=image_ref, captions=tuple(collected))
        with self._cache_lock:
            return self._caption_cache.setdefault(image_ref, caption_set)

    def cached_captions(self) -> dict:
        """Snapshot of the per-image caption cache, for trace persistence."""
        with self._cache_lock:
            return dict(self._caption_cache)

    def _qa_shots(self, question: str):
        if self.qa_store is None:
            return ()
        pool = self.qa_store.of_kind("qa")
        if not pool:
            return ()
        embedding = self._backend_call(self.vision.embed, question)
        k = min(self.config.num_qa_shots, len(pool))
        shots = top_k(embedding, self.qa_store, k, kind="qa")
        if self.config.most_similar_last:
            shots = list(reversed(shots))
        return tuple(shots)

    def answer_from_captions(self, question: str, caption_sets, rng) -> str:
        """Step 5: QA prompt over the caption sets, answered by the LM."""
        shots = self._qa_shots(question)
        prompt = build_qa_prompt(
            question, caption_sets, shots, max_tokens=self.config.prompt_token_budget
        )
        params = CompletionParams(max_tokens=32, temperature=0.0, stop=("\n",))
        completion = self._backend_call(self.answer_lm.complete, prompt.text, params)
        return _first_line(completion)

    def answer_question(self, image_refs, question: str, rng) -> str:
        """The full caption-then-answer procedure over one or more images.

        This is both the body of query() and, applied to all of an
        instance's images, the fallback/baseline answering path.
        """
        caption_sets = [self.captions_for(ref, question, rng) for ref in image_refs]
        return self.answer_from_captions(question, caption_sets, rng)

    # -- the five primitives -------------------------------------------------

    def query(self, image: ImageHandle, question: str, rng) -> str:
        if not question.strip():
            raise PrimitiveError("query() needs a non-empty question")
        return self.answer_question((image.ref,), question, rng)

    def get_pos(self, image: ImageHandle, text: str, rng) -> Pos:
        if not text.strip():
            raise PrimitiveError("get_pos() needs a non-empty text")
        gmap = self._attention_map(image.ref, text)
        return argmax_position(gmap, self.config.coordinate_frame)

    def find_matching_image(self, images, text: str, rng) -> ImageHandle:
        if not images:
            raise PrimitiveError("find_matching_image() needs at least one image")
        if not text.strip():
            raise PrimitiveError("find_matching_image() needs a non-empty text")
        best = None
        best_score = None
        for handle in images:
            score = self._backend_call(self.vision.itc_score, handle.ref, text)
            if best_score is None or score > best_score:
                best = handle
                best_score = score
        return best

    def find_object(self, image: ImageHandle, description: str, rng):
        if not description.strip():
            raise PrimitiveError("find_object() needs a non-empty description")
        detections = self._backend_call(self.vision.detect, image.ref, description)
        kept = [d for d in detections if d.score >= self.config.detection_threshold]
        kept.sort(key=lambda d: -d.score)
        return tuple(kept)

    def knowledge_query(self, question: str, rng) -> str:
        if not question.strip():
            raise PrimitiveError("knowledge_query() needs a non-empty question")
        bias = None
        if self.config.knowledge_bias_tokens:
            bias = {
                token: self.config.knowledge_bias_value
                for token in self.config.knowledge_bias_tokens
            }
        params = CompletionParams(
            max_tokens=32, temperature=0.0, stop=("\n",), logit_bias=bias
        )
        prompt = f"Question: {question}\nAnswer:"
        completion = self._backend_call(self.answer_lm.complete, prompt, params)
        return _first_line(completion)


def _expect_image(name, args, position):
    value = args[position]
    if not isinstance(value, ImageHandle):
        raise PrimitiveError(
            f"{name}() argument {position + 1} must be an image, got {type(value).__name__}"
        )
    return value


def _expect_text(name, args, position):
    value = args[position]
    if not isinstance(value, str):
        raise PrimitiveError(
            f"{name}() argument {position + 1} must be a string, got {type(value).__name__}"
        )
    return value


def _expect_arity(name, args, n):
    if len(args) != n:
        raise PrimitiveError(f"{name}() takes {n} arguments, got {len(args)}")


def make_dispatcher(runtime: PrimitiveRuntime):
    """Adapt a runtime to the interpreter's primitives(name, args, rng)."""

    def dispatch(name, args, rng):
        if name == "query":
            _expect_arity(name, args, 2)
            return runtime.query(_expect_image(name, args, 0),
                                 _expect_text(name, args, 1), rng)
        if name == "get_pos":
            _expect_arity(name, args, 2)
            return runtime.get_pos(_expect_image(name, args, 0),
                                   _expect_text(name, args, 1), rng)
        if name == "find_matching_image":
            _expect_arity(name, args, 2)
            images = args[0]
            if not (isinstance(images, tuple) and not isinstance(images, (Pos, ImageHandle))
                    and all(isinstance(h, ImageHandle) for h in images)):
                raise PrimitiveError(
                    "find_matching_image() argument 1 must be a list of images"
                )
            return runtime.find_matching_image(images, _expect_text(name, args, 1), rng)
        if name == "find_object":
            _expect_arity(name, args, 2)
            return runtime.find_object(_expect_image(name, args, 0),
                                       _expect_text(name, args, 1), rng)
        if name == "knowledge_query":
            _expect_arity(name, args, 1)
            return runtime.knowledge_query(_expect_text(name, args, 0), rng)
        raise PrimitiveError(f"unknown primitive '{name}'")

    return dispatch


__all__ = [
    "CaptionSet",
    "Detection",
    "PRIMITIVE_NAMES",
    "PrimitiveRuntime",
    "make_dispatcher",
]
