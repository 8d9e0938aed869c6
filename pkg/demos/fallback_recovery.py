"""
Runtime errors fall back to the caption pipeline
================================================

Generated programs are untrusted: they can divide by zero, read unbound
names, or mis-type an argument. The interpreter turns all of that into a
typed error, and the engine then answers the original question with its
five-step caption procedure instead of crashing. Running that procedure
unconditionally is exactly the "baseline-always-fallback" mode.
"""

from vqaprog.backends.mock import (
    OracleAnswerLM,
    SceneGraph,
    SceneObject,
    SceneOracleBackend,
    ScriptedCodeLM,
)
from vqaprog.core import EngineConfig, VQAInstance
from vqaprog.harness import Engine, answer_instance
from vqaprog.retrieval import Example, ExampleStore

scenes = (
    SceneGraph(
        image_ref="kitchen",
        objects=(
            SceneObject(name="mug", attributes=("yellow",), grid_cell=(8, 6)),
            SceneObject(name="mug", attributes=("yellow",), grid_cell=(9, 15)),
        ),
    ),
)

question = "How many mugs are in the image?"

# This program parses fine but blows up at runtime: int("two") is a
# conversion failure.
broken_program = """\
img = open_image("Image1.jpg")
count = int("two")
answer = count
"""

store = ExampleStore(
    (
        Example(
            id="shot-0",
            question="How many dogs are there?",
            kind="code",
            embedding=(0.0,) * 16,
            program='img = open_image("Image1.jpg")\nanswer = query(img, "How many dogs are there?")\n',
        ),
    )
)


def build_engine(mode):
    return Engine(
        code_lm=ScriptedCodeLM({question: broken_program}),
        vision=SceneOracleBackend(scenes),
        answer_lm=OracleAnswerLM(scenes),
        config=EngineConfig(),
        store=store,
        mode=mode,
        retrieval="embedding",
    )


instance = VQAInstance(
    id="demo-1",
    text=question,
    is_statement=False,
    image_refs=("kitchen",),
    gold_answers=("2",),
)

record, trace = answer_instance(instance, build_engine("codevqa"), run_seed=0)
print(f"answer via fallback: {record.predicted}")
print(f"why: {trace.fallback_reason}")
print()
print("captions sampled during the fallback:")
for caption in trace.captions["fallback"]["kitchen"]:
    print(f"  {caption}")

# The baseline mode never asks for a program; with the same seed it walks
# the identical caption path and lands on the identical answer.
baseline_record, _ = answer_instance(instance, build_engine("baseline-always-fallback"), run_seed=0)
print()
print(f"baseline mode answer:  {baseline_record.predicted}")
print(f"answers agree: {record.predicted == baseline_record.predicted}")
