"""
Answering one visual question with a generated program
======================================================

The engine asks a code model for a small program, runs it in the sandboxed
interpreter, and lets the program's primitive calls (query, get_pos, ...)
hit the vision backends. Everything below runs offline against the
scene-graph oracle backends, so the output is fully deterministic.
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

# Two synthetic images, described as scene graphs. grid_cell is (row, col)
# on the 24x24 patch grid, row 0 at the top.
scenes = (
    SceneGraph(
        image_ref="street",
        objects=(
            SceneObject(name="car", attributes=("red",), grid_cell=(14, 4)),
            SceneObject(name="bicycle", attributes=("blue",), grid_cell=(15, 19)),
        ),
    ),
    SceneGraph(
        image_ref="park",
        objects=(SceneObject(name="dog", attributes=("small",), grid_cell=(10, 10)),),
    ),
)

# The code model is scripted: it returns this program for our question. A
# real deployment points the engine at a completion endpoint instead.
question = "Is the car to the left of the bicycle?"
program = """\
img = open_image("Image1.jpg")
car_x, car_y = get_pos(img, "car")
bicycle_x, bicycle_y = get_pos(img, "bicycle")
if car_x < bicycle_x:
    answer = "yes"
else:
    answer = "no"
"""

# Retrieval needs at least one in-context example to build the prompt.
store = ExampleStore(
    (
        Example(
            id="shot-0",
            question="What color is the couch?",
            kind="code",
            embedding=(0.0,) * 16,
            program='img = open_image("Image1.jpg")\nanswer = query(img, "What color is the couch?")\n',
        ),
    )
)

engine = Engine(
    code_lm=ScriptedCodeLM({question: program}),
    vision=SceneOracleBackend(scenes),
    answer_lm=OracleAnswerLM(scenes),
    config=EngineConfig(),
    store=store,
    mode="codevqa",
    retrieval="embedding",
)

instance = VQAInstance(
    id="demo-0",
    text=question,
    is_statement=False,
    image_refs=("street",),
    gold_answers=("yes",),
)

record, trace = answer_instance(instance, engine, run_seed=0)

print(f"question:  {question}")
print(f"answer:    {record.predicted}")
print(f"fallback:  {record.used_fallback}")
print()
print("generated program:")
print(trace.program)
print("primitive calls:")
for call in trace.execution:
    print(f"  {call['name']}({', '.join(call['args'])}) -> {call['result']}")
