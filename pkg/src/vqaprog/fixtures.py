"""Deterministic synthetic corpus generator.

Produces scene graphs, matched instances, programs that are correct by
construction, and an annotated-example store, so the whole pipeline can run
end to end against the scene oracle with a known right answer for every
instance. Also provides the fault injector that turns a fraction of the
programs into runtime-erroring variants.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass

from .backends.mock import (
    SceneGraph,
    SceneObject,
    bag_of_words_embedding,
    save_scenes,
)
from .core import VQAInstance, write_instances_jsonl
from .retrieval import Example, ExampleStore

EMBED_DIM = 16
GRID = (24, 24)

_NOUNS = (
    "dog", "cat", "chair", "car", "shoe", "cup", "tree", "bench",
    "ball", "book", "horse", "lamp",
)
_COLOR_POOL = (
    "red", "blue", "green", "black", "white", "brown", "pink",
    "yellow", "purple", "orange",
)
_EXTRA_ATTRS = ("small", "large", "wooden", "metallic", "striped", "shiny")

# one of each question family per cycle keeps the type mix even at any n
_TEMPLATE_CYCLE = (
    "count_single", "exist_single", "attribute", "spatial",
    "count_multi", "verify_multi",
)

# multi-image instances cycle their image count so every group 2..5 appears
_MULTI_IMAGE_COUNTS = (2, 3, 4, 5)


def _plural(noun: str) -> str:
    if noun.endswith(("ch", "sh", "s", "x")):
        return noun + "es"
    return noun + "s"


@dataclass(frozen=True)
class Corpus:
    """Everything one oracle evaluation run needs, in memory."""

    instances: tuple
    scenes: tuple
    programs: dict  # question text -> correct program source
    store: ExampleStore


def _sample_cells(rng: random.Random, count: int):
    """Cells with pairwise distinct rows and columns, so left/right and
    above/below questions always have a strict answer."""
    rows = rng.sample(range(GRID[0]), count)
    cols = rng.sample(range(GRID[1]), count)
    return list(zip(rows, cols))


def _gen_scene(rng: random.Random, ref: str) -> SceneGraph:
    names = rng.sample(_NOUNS, rng.randint(2, 4))
    spec = []
    for name in names:
        color = rng.choice(_COLOR_POOL)
        copies = rng.randint(2, 3) if rng.random() < 0.3 else 1
        for _ in range(copies):
            attrs = [color]
            if rng.random() < 0.4:
                attrs.append(rng.choice(_EXTRA_ATTRS))
            spec.append((name, tuple(attrs)))
    cells = _sample_cells(rng, len(spec))
    objects = tuple(
        SceneObject(name=name, attributes=attrs, grid_cell=cell)
        for (name, attrs), cell in zip(spec, cells)
    )
    return SceneGraph(image_ref=ref, objects=objects)


def _unique_names(scene: SceneGraph):
    """Names occurring exactly once in the scene."""
    counts = {}
    for obj in scene.objects:
        counts[obj.name] = counts.get(obj.name, 0) + 1
    return [obj.name for obj in scene.objects if counts[obj.name] == 1]


def _count_matching(scene: SceneGraph, name: str, attrs=()) -> int:
    return len(scene.matching(name, attrs))


def _absent_pair(rng: random.Random, scene: SceneGraph):
    """A (color, name) pair with no matching object, for "no" answers."""
    for _ in range(64):
        color = rng.choice(_COLOR_POOL)
        name = rng.choice(_NOUNS)
        if not scene.matching(name, (color,)):
            return color, name
    raise RuntimeError("scene unexpectedly saturates the attribute space")


_FIND_OBJECT_PROGRAM = """\
img = open_image("Image1.jpg")
objects = find_object(img, {noun!r})
answer = len(objects)
"""

_QUERY_PROGRAM = """\
img = open_image("Image1.jpg")
answer = query(img, {question!r})
"""

_SPATIAL_PROGRAM = """\
img = open_image("Image1.jpg")
first_x, first_y = get_pos(img, {first!r})
second_x, second_y = get_pos(img, {second!r})
if first_x {op} second_x:
    answer = "yes"
else:
    answer = "no"
"""

_COUNT_IMAGES_PROGRAM = """\
images = open_images("ImageSet1.jpg")
count = 0
for image in images:
    has_object = query(image, {subquestion!r})
    if has_object == "yes":
        count += 1
answer = count
"""

_ANY_IMAGE_PROGRAM = """\
images = open_images("ImageSet1.jpg")
answer = "no"
for image in images:
    has_object = query(image, {subquestion!r})
    if has_object == "yes":
        answer = "yes"
"""


class _Generator:
    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.scenes = []
        self.used_questions = set()
        self.multi_count_cursor = 0

    def scene(self, ref: str) -> SceneGraph:
        scene = _gen_scene(self.rng, ref)
        self.scenes.append(scene)
        return scene

    def next_image_count(self) -> int:
        count = _MULTI_IMAGE_COUNTS[self.multi_count_cursor % len(_MULTI_IMAGE_COUNTS)]
        self.multi_count_cursor += 1
        return count

    def build(self, kind: str, index: int, ref_prefix: str):
        """One (instance, program, scenes) triple; retries until the question
        text is unique across the corpus so the program table stays 1:1."""
        for _ in range(64):
            made = self._build_once(kind, index, ref_prefix)
            if made is None:
                continue
            instance, program = made
            if instance.question not in self.used_questions:
                self.used_questions.add(instance.question)
                return instance, program
            # duplicate question: drop the scenes this attempt added
            del self.scenes[len(self.scenes) - instance.num_images:]
        raise RuntimeError(f"could not generate a fresh {kind} question")

    def _build_once(self, kind: str, index: int, ref_prefix: str):
        rng = self.rng
        instance_id = f"{ref_prefix}-{index:03d}"
        ref = f"{instance_id}-0"

        if kind == "count_single":
            scene = _gen_scene(rng, ref)
            if rng.random() < 0.5:
                # bare-noun count through the detector
                name = rng.choice([obj.name for obj in scene.objects])
                question = f"How many {_plural(name)} are there?"
                gold = str(_count_matching(scene, name))
                program = _FIND_OBJECT_PROGRAM.format(noun=name)
            else:
                # color-qualified count through caption QA
                obj = rng.choice(scene.objects)
                color = obj.attributes[0]
                question = f"How many {color} {_plural(obj.name)} are there?"
                gold = str(_count_matching(scene, obj.name, (color,)))
                program = _QUERY_PROGRAM.format(question=question)
            self.scenes.append(scene)
            return (
                VQAInstance(
                    id=instance_id, text=question, is_statement=False,
                    image_refs=(ref,), gold_answers=(gold,),
                    dataset="fixtures", question_type="counting",
                ),
                program,
            )

        if kind == "exist_single":
            scene = _gen_scene(rng, ref)
            if rng.random() < 0.5:
                obj = rng.choice(scene.objects)
                color, name = obj.attributes[0], obj.name
                gold = "yes"
            else:
                color, name = _absent_pair(rng, scene)
                gold = "no"
            question = f"Is there a {color} {name}?"
            program = _QUERY_PROGRAM.format(question=question)
            self.scenes.append(scene)
            return (
                VQAInstance(
                    id=instance_id, text=question, is_statement=False,
                    image_refs=(ref,), gold_answers=(gold,),
                    dataset="fixtures", question_type="existence",
                ),
                program,
            )

        if kind == "attribute":
            scene = _gen_scene(rng, ref)
            singles = _unique_names(scene)
            if not singles:
                return None
            name = rng.choice(singles)
            obj = scene.matching(name)[0]
            question = f"What color is the {name}?"
            gold = obj.attributes[0]
            program = _QUERY_PROGRAM.format(question=question)
            self.scenes.append(scene)
            return (
                VQAInstance(
                    id=instance_id, text=question, is_statement=False,
                    image_refs=(ref,), gold_answers=(gold,),
                    dataset="fixtures", question_type="attribute",
                ),
                program,
            )

        if kind == "spatial":
            scene = _gen_scene(rng, ref)
            singles = _unique_names(scene)
            if len(singles) < 2:
                return None
            first, second = rng.sample(singles, 2)
            direction = rng.choice(("left", "right"))
            first_col = scene.matching(first)[0].grid_cell[1]
            second_col = scene.matching(second)[0].grid_cell[1]
            if direction == "left":
                gold = "yes" if first_col < second_col else "no"
                op = "<"
            else:
                gold = "yes" if first_col > second_col else "no"
                op = ">"
            question = f"Is the {first} to the {direction} of the {second}?"
            program = _SPATIAL_PROGRAM.format(first=first, second=second, op=op)
            self.scenes.append(scene)
            return (
                VQAInstance(
                    id=instance_id, text=question, is_statement=False,
                    image_refs=(ref,), gold_answers=(gold,),
                    dataset="fixtures", question_type="spatial",
                ),
                program,
            )

        if kind == "count_multi":
            num_images = self.next_image_count()
            refs = tuple(f"{instance_id}-{j}" for j in range(num_images))
            scenes = [_gen_scene(rng, r) for r in refs]
            anchor = rng.choice(scenes[0].objects)
            color, name = anchor.attributes[0], anchor.name
            question = f"How many images contain a {color} {name}?"
            gold = str(sum(1 for s in scenes if s.matching(name, (color,))))
            subquestion = f"Is there a {color} {name}?"
            program = _COUNT_IMAGES_PROGRAM.format(subquestion=subquestion)
            self.scenes.extend(scenes)
            return (
                VQAInstance(
                    id=instance_id, text=question, is_statement=False,
                    image_refs=refs, gold_answers=(gold,),
                    dataset="fixtures", question_type="counting",
                ),
                program,
            )

        if kind == "verify_multi":
            num_images = self.next_image_count()
            refs = tuple(f"{instance_id}-{j}" for j in range(num_images))
            scenes = [_gen_scene(rng, r) for r in refs]
            if rng.random() < 0.5:
                anchor = rng.choice(scenes[-1].objects)
                color, name = anchor.attributes[0], anchor.name
            else:
                color = rng.choice(_COLOR_POOL)
                name = rng.choice(_NOUNS)
            present = any(s.matching(name, (color,)) for s in scenes)
            statement = f"There is a {color} {name}."
            subquestion = f"Is there a {color} {name}?"
            program = _ANY_IMAGE_PROGRAM.format(subquestion=subquestion)
            self.scenes.extend(scenes)
            return (
                VQAInstance(
                    id=instance_id, text=statement, is_statement=True,
                    image_refs=refs, gold_answers=("yes" if present else "no",),
                    dataset="fixtures", question_type="existence",
                ),
                program,
            )

        raise ValueError(f"unknown template kind {kind!r}")


def _shot_captions(scenes) -> tuple:
    """Plausible shot captions naming the scene's objects, one group per image."""
    groups = []
    for scene in scenes:
        lines = tuple(
            f"a photo of a {' '.join(obj.attributes)} {obj.name} in image {scene.image_ref}".replace("  ", " ")
            for obj in scene.objects[:3]
        )
        groups.append(lines)
    return tuple(groups)


def generate_corpus(seed: int, n: int, num_shot_examples: int = 25) -> Corpus:
    """n evaluation instances plus num_shot_examples annotated examples.

    Every program in the returned table produces its instance's gold answer
    when run against the scene oracle. Shot examples are disjoint from the
    evaluation instances and enter the store twice, once as a code example
    and once as a caption-QA example, sharing one question embedding.
    """
    if n < 1:
        raise ValueError("need at least one instance")
    gen = _Generator(seed)

    instances = []
    programs = {}
    for i in range(n):
        kind = _TEMPLATE_CYCLE[i % len(_TEMPLATE_CYCLE)]
        instance, program = gen.build(kind, i, "fx")
        instances.append(instance)
        programs[instance.question] = program

    examples = []
    for i in range(num_shot_examples):
        kind = _TEMPLATE_CYCLE[i % len(_TEMPLATE_CYCLE)]
        scenes_before = len(gen.scenes)
        instance, program = gen.build(kind, i, "shot")
        shot_scenes = gen.scenes[scenes_before:]
        embedding = bag_of_words_embedding(instance.question, EMBED_DIM)
        examples.append(
            Example(
                id=f"{instance.id}-code", question=instance.question,
                kind="code", embedding=embedding, program=program,
            )
        )
        examples.append(
            Example(
                id=f"{instance.id}-qa", question=instance.question,
                kind="qa", embedding=embedding,
                captions=_shot_captions(shot_scenes),
                answer=instance.gold_answers[0],
            )
        )

    return Corpus(
        instances=tuple(instances),
        scenes=tuple(gen.scenes),
        programs=programs,
        store=ExampleStore(tuple(examples)),
    )


# cycled over the corrupted subset; each fails at runtime on any backend
_BROKEN_PROGRAMS = (
    'answer = int("two")\n',
    "answer = result\n",
    'img = open_image("Image1.jpg")\ncount = 3 / 0\nanswer = count\n',
)


def corrupt_programs(programs: dict, fraction: float, seed: int):
    """Replace round(fraction * n) programs with runtime-erroring variants.

    Returns (corrupted table, frozenset of affected questions). Selection is
    deterministic in the seed and independent of dict insertion order.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be within [0, 1]")
    questions = sorted(programs)
    count = round(fraction * len(questions))
    chosen = random.Random(seed).sample(questions, count)
    table = dict(programs)
    for i, question in enumerate(sorted(chosen)):
        table[question] = _BROKEN_PROGRAMS[i % len(_BROKEN_PROGRAMS)]
    return table, frozenset(chosen)


_RUN_TOML = """\
# Evaluation run over the generated corpus, against the scene oracle.
[dataset]
path = "instances.jsonl"
format = "normalized"

[store]
path = "examples.jsonl"

[backends]
kind = "oracle"
scenes = "scenes.json"
programs = "programs.json"

[engine]
num_code_shots = 6
num_qa_shots = 6
captions_per_image = 3

[run]
seed = {seed}
workers = 2
mode = "codevqa"
retrieval = "embedding"
output = "out"
"""


def write_corpus(corpus: Corpus, out_dir, seed: int = 0) -> None:
    """Materialize the corpus as the file tree the CLI consumes.

    Writes scenes.json, instances.jsonl, programs.json, examples.jsonl and a
    ready-to-run run.toml. Identical corpus and seed give identical bytes.
    """
    os.makedirs(out_dir, exist_ok=True)
    save_scenes(list(corpus.scenes), os.path.join(out_dir, "scenes.json"))
    write_instances_jsonl(list(corpus.instances), os.path.join(out_dir, "instances.jsonl"))
    with open(os.path.join(out_dir, "programs.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(corpus.programs, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    corpus.store.save(os.path.join(out_dir, "examples.jsonl"))
    with open(os.path.join(out_dir, "run.toml"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_RUN_TOML.format(seed=seed))


__all__ = [
    "Corpus",
    "EMBED_DIM",
    "corrupt_programs",
    "generate_corpus",
    "write_corpus",
]
