"""Deterministic offline backends: a scene-graph oracle for the vision
capabilities and scripted stand-ins for the two LM roles.

The oracle answers by rule from annotated scene graphs, so end-to-end runs
against it have a known ground truth. Captions embed the image reference
(e.g. "a red chair in image img3"), which is how the caption-QA stand-in
recovers the scene a prompt is about.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

import numpy as np

from ..gradcam import CrossAttention
from .base import BackendCapability, BackendInfo, CompletionParams, RemoteError
from .wire import Detection


class UnsupportedTemplate(RemoteError):
    """The question matches none of the oracle's rule templates."""


# -- tokenization helpers ----------------------------------------------------

_WORD = re.compile(r"[a-z0-9]+")

_IRREGULAR_SINGULAR = {
    "men": "man",
    "women": "woman",
    "children": "child",
    "people": "person",
    "shelves": "shelf",
    "knives": "knife",
}

_COLORS = {
    "red", "blue", "green", "yellow", "black", "white", "brown", "pink",
    "orange", "purple", "gray", "grey", "silver", "gold", "beige", "tan",
}

_STOPWORDS = {
    "a", "an", "the", "is", "are", "there", "in", "on", "of", "any",
    "image", "images", "it", "that", "to", "and", "or", "look", "looks",
    "does", "do", "true", "visible",
}


def words_of(text: str) -> list:
    return _WORD.findall(text.lower())


def singular(word: str) -> str:
    if word in _IRREGULAR_SINGULAR:
        return _IRREGULAR_SINGULAR[word]
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith(("sses", "xes", "shes", "ches")):
        return word[:-2]
    if word.endswith("s") and not word.endswith("ss") and len(word) > 3:
        return word[:-1]
    return word


def mock_tokenize(text: str) -> list:
    return ["[CLS]"] + words_of(text) + ["[SEP]"]


def bag_of_words_embedding(text: str, dim: int = 16) -> tuple:
    """Hash each word into a bucket and count. Deterministic across processes."""
    vec = [0.0] * dim
    for word in words_of(text):
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        index = int.from_bytes(digest[:8], "big") % dim
        vec[index] += 1.0
    return tuple(vec)


# -- scene graphs ------------------------------------------------------------


@dataclass(frozen=True)
class SceneObject:
    name: str
    attributes: tuple = ()
    grid_cell: tuple = (0, 0)  # (row, col)
    relations: tuple = ()  # ((predicate, target object index), ...)

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "grid_cell", tuple(int(v) for v in self.grid_cell))
        object.__setattr__(
            self, "relations", tuple((str(p), int(t)) for p, t in self.relations)
        )


@dataclass(frozen=True)
class SceneGraph:
    image_ref: str
    objects: tuple

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        for obj in self.objects:
            for _, target in obj.relations:
                if not 0 <= target < len(self.objects):
                    raise ValueError(
                        f"scene {self.image_ref}: relation target {target} out of range"
                    )

    def matching(self, name: str, attributes=()) -> list:
        """Objects whose name matches (singular-normalized) and that carry
        every requested attribute."""
        want = singular(name.lower())
        out = []
        for obj in self.objects:
            if singular(obj.name.lower()) != want:
                continue
            have = {a.lower() for a in obj.attributes}
            if all(a.lower() in have for a in attributes):
                out.append(obj)
        return out

    def vocabulary(self) -> set:
        vocab = set()
        for obj in self.objects:
            vocab.add(singular(obj.name.lower()))
            vocab.update(a.lower() for a in obj.attributes)
        return vocab

    def to_json_obj(self) -> dict:
        return {
            "image_ref": self.image_ref,
            "objects": [
                {
                    "name": o.name,
                    "attributes": list(o.attributes),
                    "grid_cell": list(o.grid_cell),
                    "relations": [[p, t] for p, t in o.relations],
                }
                for o in self.objects
            ],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "SceneGraph":
        return cls(
            image_ref=obj["image_ref"],
            objects=tuple(
                SceneObject(
                    name=o["name"],
                    attributes=tuple(o.get("attributes", ())),
                    grid_cell=tuple(o.get("grid_cell", (0, 0))),
                    relations=tuple((p, t) for p, t in o.get("relations", ())),
                )
                for o in obj["objects"]
            ),
        )


def save_scenes(scenes, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([s.to_json_obj() for s in scenes], fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def load_scenes(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return [SceneGraph.from_json_obj(obj) for obj in json.load(fh)]


# -- rule-template answering -------------------------------------------------

_NUMBER_WORDS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}


def _parse_count(token: str):
    if token.isdigit():
        return int(token)
    return _NUMBER_WORDS.get(token)


def _noun_phrase(fragment: str) -> tuple:
    """Split "pink shoes" into (name, attributes): last word is the noun."""
    tokens = [w for w in words_of(fragment) if w not in _STOPWORDS]
    if not tokens:
        raise UnsupportedTemplate(f"no noun in {fragment!r}")
    return tokens[-1], tuple(tokens[:-1])


def _yesno(flag: bool) -> str:
    return "yes" if flag else "no"


_PAT_EXACTLY = re.compile(r"^(?:are|is) there exactly (\w+) (.+)$")
_PAT_EXIST = re.compile(r"^(?:is|are) there (?:a |an |any )?(.+)$")
_PAT_COUNT_REL = re.compile(r"^how many (.+?) (?:is|are) (\w+ing) (.+)$")
_PAT_COUNT = re.compile(r"^how many (.+?)(?: are there| are in the image| are visible)?$")
_PAT_COLOR = re.compile(r"^what color (?:is|are) the (.+)$|^what is the color of the (.+)$")
_PAT_LOOK = re.compile(r"^(?:does|do) the (\w+) look (.+)$")
_PAT_IS_ATTR = re.compile(r"^(?:is|are) the (\w+) (.+)$")
_PAT_SIDE = re.compile(r"^(?:is|are) the (\w+) to the (left|right) of (?:a |an |the )?(\w+)$")
_PAT_VERT = re.compile(r"^(?:is|are) the (\w+) (above|below) (?:a |an |the )?(\w+)$")
_PAT_REL = re.compile(r"^(?:is|are) the (\w+) (\w+) (?:a |an |the )?(\w+)$")
_PAT_IMAGES = re.compile(r"^how many images (?:contain|have|show) (.+)$")
_PAT_ANY_IMAGE = re.compile(r"^(?:does|do) (?:any|one) (?:of the )?images? (?:contain|have|show) (.+)$")


def _strip_question(question: str) -> str:
    q = question.strip().lower()
    q = q.rstrip("?.! ")
    if q.startswith("is it true that "):
        q = q[len("is it true that "):].strip()
        # statements arrive in declarative order; flip to interrogative
        if q.startswith("there are "):
            q = "are there " + q[len("there are "):]
        elif q.startswith("there is "):
            q = "is there " + q[len("there is "):]
        elif q.startswith("the "):
            # "the chair is red" -> "is the chair red"
            m = re.match(r"^the (\w+) (?:is|are) (.+)$", q)
            if m:
                q = f"is the {m.group(1)} {m.group(2)}"
    return q.strip()


def _single_object(scene: SceneGraph, name: str):
    matches = scene.matching(name)
    if not matches:
        raise UnsupportedTemplate(f"no {name!r} in scene {scene.image_ref}")
    return matches[0]


def answer_from_scene(scene: SceneGraph, question: str) -> str:
    """Answer one question about one scene by rule.

    Supported templates: existence, exactly-N, counting, color, attribute
    checks (plain and "look X and Y"), left/right and above/below spatial
    comparisons, and annotated relations. Anything else raises
    UnsupportedTemplate, which callers surface as a backend failure.
    """
    q = _strip_question(question)

    m = _PAT_EXACTLY.match(q)
    if m:
        want = _parse_count(m.group(1))
        if want is None:
            raise UnsupportedTemplate(f"bad count in {question!r}")
        name, attrs = _noun_phrase(m.group(2))
        return _yesno(len(scene.matching(name, attrs)) == want)

    m = _PAT_SIDE.match(q)
    if m:
        a = _single_object(scene, m.group(1))
        b = _single_object(scene, m.group(3))
        a_col, b_col = a.grid_cell[1], b.grid_cell[1]
        return _yesno(a_col < b_col if m.group(2) == "left" else a_col > b_col)

    m = _PAT_VERT.match(q)
    if m:
        a = _single_object(scene, m.group(1))
        b = _single_object(scene, m.group(3))
        a_row, b_row = a.grid_cell[0], b.grid_cell[0]
        # row 0 is the top of the image
        return _yesno(a_row < b_row if m.group(2) == "above" else a_row > b_row)

    m = _PAT_COLOR.match(q)
    if m:
        obj = _single_object(scene, m.group(1) or m.group(2))
        for attr in obj.attributes:
            if attr.lower() in _COLORS:
                return attr.lower()
        if obj.attributes:
            return obj.attributes[0].lower()
        raise UnsupportedTemplate(f"{obj.name} has no attributes")

    m = _PAT_LOOK.match(q)
    if m:
        obj = _single_object(scene, m.group(1))
        wanted = [w for w in words_of(m.group(2)) if w not in _STOPWORDS]
        have = {a.lower() for a in obj.attributes}
        return _yesno(all(w in have for w in wanted))

    m = _PAT_COUNT_REL.match(q)
    if m:
        name, attrs = _noun_phrase(m.group(1))
        predicate = m.group(2)
        target_name, target_attrs = _noun_phrase(m.group(3))
        count = 0
        for obj in scene.matching(name, attrs):
            for pred, idx in obj.relations:
                target = scene.objects[idx]
                if (
                    pred.lower() == predicate
                    and singular(target.name.lower()) == singular(target_name)
                    and all(a in {t.lower() for t in target.attributes} for a in target_attrs)
                ):
                    count += 1
                    break
        return str(count)

    m = _PAT_COUNT.match(q)
    if m:
        name, attrs = _noun_phrase(m.group(1))
        return str(len(scene.matching(name, attrs)))

    m = _PAT_IS_ATTR.match(q)
    if m and not m.group(2).startswith(("to the", "above", "below")):
        obj_matches = scene.matching(m.group(1))
        rel = _PAT_REL.match(q)
        wanted = [w for w in words_of(m.group(2)) if w not in _STOPWORDS]
        if obj_matches:
            have = {a.lower() for a in obj_matches[0].attributes}
            if all(w in have for w in wanted):
                return "yes"
            # maybe a relation check: "is the man holding the cup"
        if rel and obj_matches:
            subject = obj_matches[0]
            predicate, target_name = rel.group(2), singular(rel.group(3))
            for pred, idx in subject.relations:
                if pred.lower() == predicate and singular(scene.objects[idx].name.lower()) == target_name:
                    return "yes"
        if obj_matches:
            return "no"
        raise UnsupportedTemplate(f"no {m.group(1)!r} in scene {scene.image_ref}")

    m = _PAT_EXIST.match(q)
    if m:
        name, attrs = _noun_phrase(m.group(1))
        return _yesno(len(scene.matching(name, attrs)) > 0)

    raise UnsupportedTemplate(f"no rule template matches {question!r}")


def _merge_scenes(scenes) -> SceneGraph:
    merged = []
    offset = 0
    for scene in scenes:
        for obj in scene.objects:
            merged.append(
                SceneObject(
                    name=obj.name,
                    attributes=obj.attributes,
                    grid_cell=obj.grid_cell,
                    relations=tuple((p, t + offset) for p, t in obj.relations),
                )
            )
        offset += len(scene.objects)
    return SceneGraph(image_ref="+".join(s.image_ref for s in scenes), objects=tuple(merged))


def answer_over_scenes(scenes, question: str) -> str:
    """Answer over an ordered scene set: per-image-set templates first, then
    the single-scene rules against the union of objects."""
    if not scenes:
        raise UnsupportedTemplate("no scenes to answer from")
    q = _strip_question(question)

    m = _PAT_IMAGES.match(q)
    if m:
        inner = f"are there {m.group(1)}?"
        return str(sum(1 for s in scenes if answer_from_scene(s, inner) == "yes"))

    m = _PAT_ANY_IMAGE.match(q)
    if m:
        inner = f"are there {m.group(1)}?"
        return _yesno(any(answer_from_scene(s, inner) == "yes" for s in scenes))

    if len(scenes) == 1:
        return answer_from_scene(scenes[0], question)
    return answer_from_scene(_merge_scenes(scenes), question)


# -- the vision oracle -------------------------------------------------------

_CAPTION_TEMPLATES = (
    "a {attrs}{name} in image {ref}",
    "there is a {attrs}{name} in image {ref}",
    "image {ref} shows a {attrs}{name}",
    "a photo of a {attrs}{name} in image {ref}",
    "you can see a {attrs}{name} in image {ref}",
    "the {name} in image {ref} looks {first_attr}",
    "a {attrs}{name} near the {position} of image {ref}",
    "the {position} of image {ref} has a {attrs}{name}",
)


def _position_phrase(grid_cell, grid) -> str:
    row, col = grid_cell
    grid_h, grid_w = grid
    vertical = ("top", "middle", "bottom")[min(2, row * 3 // max(1, grid_h))]
    horizontal = ("left", "center", "right")[min(2, col * 3 // max(1, grid_w))]
    return f"{vertical} {horizontal}"


class SceneOracleBackend(BackendCapability):
    """Vision capabilities computed from scene-graph fixtures.

    Attention plants point masses at the grid cells of objects named in the
    text; captions cycle deterministically through (template, object) pairs
    keyed by rng_token; ITC is a token-overlap ratio against the scene
    vocabulary.
    """

    def __init__(self, scenes, grid=(24, 24), embed_dim=16, model="scene-oracle"):
        self.scenes = {s.image_ref: s for s in scenes}
        self.grid = (int(grid[0]), int(grid[1]))
        self.info = BackendInfo(
            grid_h=self.grid[0],
            grid_w=self.grid[1],
            embed_dim=int(embed_dim),
            special_token_positions=(0, -1),
            model=model,
        )
        grid_h, grid_w = self.grid
        for scene in self.scenes.values():
            for obj in scene.objects:
                row, col = obj.grid_cell
                if not (0 <= row < grid_h and 0 <= col < grid_w):
                    raise ValueError(
                        f"scene {scene.image_ref}: {obj.name} cell {obj.grid_cell} "
                        f"outside {grid_h}x{grid_w} grid"
                    )

    def _scene(self, image_ref: str) -> SceneGraph:
        if image_ref not in self.scenes:
            raise RemoteError(f"unknown image {image_ref!r}")
        return self.scenes[image_ref]

    def describe(self) -> BackendInfo:
        return self.info

    def attention_with_grad(self, image_ref: str, text: str, layer: int) -> CrossAttention:
        scene = self._scene(image_ref)
        tokens = mock_tokenize(text)
        grid_h, grid_w = self.grid
        patches = grid_h * grid_w
        attention = np.zeros((len(tokens), patches))
        by_name = {}
        for obj in scene.objects:
            by_name.setdefault(singular(obj.name.lower()), []).append(obj)
        for i, token in enumerate(tokens):
            for obj in by_name.get(singular(token.lower()), ()):
                row, col = obj.grid_cell
                attention[i, row * grid_w + col] = 1.0
        gradient = np.ones_like(attention)
        return CrossAttention(
            attention=attention,
            gradient=gradient,
            token_texts=tuple(tokens),
            grid=self.grid,
            layer=layer,
        )

    def caption(self, image_ref: str, patch_indices, rng_token: int) -> str:
        scene = self._scene(image_ref)
        if not scene.objects:
            return f"an empty scene in image {image_ref}"
        t = len(_CAPTION_TEMPLATES)
        template = _CAPTION_TEMPLATES[rng_token % t]
        obj = scene.objects[(rng_token // t) % len(scene.objects)]
        attrs = " ".join(a.lower() for a in obj.attributes)
        return template.format(
            name=obj.name.lower(),
            attrs=attrs + " " if attrs else "",
            first_attr=obj.attributes[0].lower() if obj.attributes else "plain",
            position=_position_phrase(obj.grid_cell, self.grid),
            ref=image_ref,
        )

    def itc_score(self, image_ref: str, text: str) -> float:
        scene = self._scene(image_ref)
        tokens = [singular(w) for w in words_of(text) if w not in _STOPWORDS]
        if not tokens:
            return 0.0
        vocab = scene.vocabulary()
        hits = sum(1 for tok in tokens if tok in vocab)
        return hits / len(tokens)

    def detect(self, image_ref: str, text: str):
        scene = self._scene(image_ref)
        grid_h, grid_w = self.grid
        wanted = {singular(w) for w in words_of(text) if w not in _STOPWORDS}
        out = []
        # boxes come back in the canonical 24-unit frame, bottom-origin
        for obj in scene.objects:
            if singular(obj.name.lower()) not in wanted:
                continue
            row, col = obj.grid_cell
            x0 = col * 24.0 / grid_w
            y0 = (grid_h - row - 1) * 24.0 / grid_h
            out.append(
                Detection(
                    label=obj.name.lower(),
                    box=(x0, y0, x0 + 24.0 / grid_w, y0 + 24.0 / grid_h),
                    score=1.0,
                )
            )
        return out

    def embed(self, text: str):
        return bag_of_words_embedding(text, self.info.embed_dim)


# -- scripted LM stand-ins ---------------------------------------------------

_QUESTION_LINE = re.compile(r"^# Image(?: Set)? \d+: (.+)$", re.MULTILINE)
_QA_BLOCK = re.compile(r"Question: (.+)\nAnswer:", re.MULTILINE)
_CAPTION_REF = re.compile(r"image ([A-Za-z0-9_.:-]+)")


def default_query_program(question: str) -> str:
    return f'img = open_image("Image1.jpg")\nanswer = query(img, {json.dumps(question)})\n'


class ScriptedCodeLM(BackendCapability):
    """Code-generation stand-in: maps the prompt's final question line to a
    canned program; unmapped questions get a bare query() wrapper (or an
    error when the default is disabled)."""

    def __init__(self, programs: dict | None = None, default_to_query: bool = True,
                 model: str = "scripted-code-lm"):
        self.programs = dict(programs or {})
        self.default_to_query = default_to_query
        self.model = model

    def describe(self) -> BackendInfo:
        return BackendInfo(grid_h=1, grid_w=1, embed_dim=1, model=self.model)

    def last_question(self, prompt: str) -> str:
        matches = _QUESTION_LINE.findall(prompt)
        if not matches:
            raise RemoteError("prompt contains no question line")
        return matches[-1].strip()

    def complete(self, prompt: str, params: CompletionParams) -> str:
        question = self.last_question(prompt)
        if question in self.programs:
            return self.programs[question]
        if self.default_to_query:
            return default_query_program(question)
        raise RemoteError(f"no scripted program for {question!r}")


class ScriptedAnswerLM(BackendCapability):
    """Caption-QA stand-in keyed on the prompt's final Question line."""

    def __init__(self, answers: dict, model: str = "scripted-answer-lm"):
        self.answers = dict(answers)
        self.model = model

    def describe(self) -> BackendInfo:
        return BackendInfo(grid_h=1, grid_w=1, embed_dim=1, model=self.model)

    def complete(self, prompt: str, params: CompletionParams) -> str:
        matches = _QA_BLOCK.findall(prompt)
        if not matches:
            raise RemoteError("prompt contains no question/answer block")
        question = matches[-1].strip()
        if question not in self.answers:
            raise RemoteError(f"no scripted answer for {question!r}")
        return self.answers[question]


class OracleAnswerLM(BackendCapability):
    """Caption-QA stand-in that recovers the scene(s) from the image
    references inside the prompt's captions, then answers by rule."""

    def __init__(self, scenes, model: str = "oracle-answer-lm"):
        self.scenes = {s.image_ref: s for s in scenes}
        self.model = model

    def describe(self) -> BackendInfo:
        return BackendInfo(grid_h=1, grid_w=1, embed_dim=1, model=self.model)

    def complete(self, prompt: str, params: CompletionParams) -> str:
        questions = _QA_BLOCK.findall(prompt)
        if not questions:
            raise RemoteError("prompt contains no question/answer block")
        question = questions[-1].strip()
        block_start = prompt.rfind("Question: " + question)
        caption_text = prompt[:block_start]
        # captions for the final block sit after the last answered block
        previous_answer = caption_text.rfind("\nAnswer: ")
        if previous_answer != -1:
            caption_text = caption_text[previous_answer:]
        refs = []
        for ref in _CAPTION_REF.findall(caption_text):
            if ref not in refs:
                refs.append(ref)
        scenes = [self.scenes[r] for r in refs if r in self.scenes]
        if not scenes:
            raise RemoteError("no known image references in the caption block")
        return answer_over_scenes(scenes, question)


__all__ = [
    "OracleAnswerLM",
    "SceneGraph",
    "SceneObject",
    "SceneOracleBackend",
    "ScriptedAnswerLM",
    "ScriptedCodeLM",
    "UnsupportedTemplate",
    "answer_from_scene",
    "answer_over_scenes",
    "default_query_program",
    "load_scenes",
    "mock_tokenize",
    "save_scenes",
    "singular",
    "words_of",
]
