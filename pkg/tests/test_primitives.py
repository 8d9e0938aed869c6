"""Primitive runtime: the five operations against oracle and stub backends."""

import random

import pytest

from vqaprog.backends.base import BackendCapability, BackendInfo, RemoteError
from vqaprog.backends.mock import (
    OracleAnswerLM,
    SceneGraph,
    SceneObject,
    SceneOracleBackend,
    ScriptedAnswerLM,
)
from vqaprog.backends.wire import Detection
from vqaprog.core import EngineConfig
from vqaprog.gradcam import CrossAttention
from vqaprog.primitives import CaptionSet, PrimitiveRuntime, make_dispatcher
from vqaprog.proglang import ImageHandle, Pos, PrimitiveError, RuntimeErrorKind, execute, parse_source
from vqaprog.retrieval import Example, ExampleStore

from tests.programs import BENCH_PROGRAM, COUNT_PROGRAM

CHAIR_SCENE = SceneGraph(
    image_ref="img_chair",
    objects=(SceneObject(name="chair", attributes=("red",), grid_cell=(3, 4)),),
)

DOG_SCENE = SceneGraph(
    image_ref="img_dog",
    objects=(SceneObject(name="dog", attributes=("small",), grid_cell=(2, 20)),),
)

BENCH_SCENE = SceneGraph(
    image_ref="img_bench",
    objects=(
        SceneObject(name="bench", attributes=("silver", "metallic"), grid_cell=(12, 12)),
        SceneObject(name="tree", attributes=("green",), grid_cell=(2, 2)),
    ),
)


def oracle_runtime(scenes, config=None, qa_store=None):
    return PrimitiveRuntime(
        vision=SceneOracleBackend(scenes),
        answer_lm=OracleAnswerLM(scenes),
        config=config or EngineConfig(),
        qa_store=qa_store,
    )


def rng():
    return random.Random(0)


class RecordingLM(BackendCapability):
    def __init__(self, reply="ok"):
        self.reply = reply
        self.prompts = []
        self.params = []

    def describe(self):
        return BackendInfo(grid_h=1, grid_w=1, embed_dim=1, model="recording")

    def complete(self, prompt, params):
        self.prompts.append(prompt)
        self.params.append(params)
        return self.reply


class TestQuery:
    def test_oracle_answers_from_scene(self):
        runtime = oracle_runtime([CHAIR_SCENE])
        answer = runtime.query(ImageHandle("img_chair"), "What color is the chair?", rng())
        assert answer == "red"

    def test_scripted_answer_lm_passthrough(self):
        runtime = PrimitiveRuntime(
            vision=SceneOracleBackend([CHAIR_SCENE]),
            answer_lm=ScriptedAnswerLM({"Is the moon full?": "Yes"}),
            config=EngineConfig(),
        )
        assert runtime.query(ImageHandle("img_chair"), "Is the moon full?", rng()) == "yes"

    def test_repeated_caption_rounds_exhaust(self):
        class RepeatingCaptioner(SceneOracleBackend):
            def caption(self, image_ref, patch_indices, rng_token):
                return "always the same caption"

        runtime = PrimitiveRuntime(
            vision=RepeatingCaptioner([CHAIR_SCENE]),
            answer_lm=OracleAnswerLM([CHAIR_SCENE]),
            config=EngineConfig(),
        )
        with pytest.raises(PrimitiveError, match="unique captions"):
            runtime.query(ImageHandle("img_chair"), "What color is the chair?", rng())

    def test_caption_cache_reused_across_queries(self):
        class CountingVision(SceneOracleBackend):
            attention_calls = 0
            caption_calls = 0

            def attention_with_grad(self, *args):
                CountingVision.attention_calls += 1
                return super().attention_with_grad(*args)

            def caption(self, *args):
                CountingVision.caption_calls += 1
                return super().caption(*args)

        CountingVision.attention_calls = 0
        CountingVision.caption_calls = 0
        runtime = PrimitiveRuntime(
            vision=CountingVision([CHAIR_SCENE]),
            answer_lm=OracleAnswerLM([CHAIR_SCENE]),
            config=EngineConfig(),
        )
        handle = ImageHandle("img_chair")
        runtime.query(handle, "What color is the chair?", rng())
        first_captions = CountingVision.caption_calls
        assert CountingVision.attention_calls == 1
        runtime.query(handle, "Is there a chair?", rng())
        assert CountingVision.attention_calls == 1
        assert CountingVision.caption_calls == first_captions

    def test_fixed_seed_reproduces_captions_and_answer(self):
        def run_once():
            runtime = oracle_runtime([CHAIR_SCENE])
            r = random.Random(42)
            answer = runtime.query(ImageHandle("img_chair"), "What color is the chair?", r)
            captions = runtime.captions_for("img_chair", "unused", r)
            return answer, captions

        first = run_once()
        second = run_once()
        assert first == second

    def test_flaky_captioner_still_yields_distinct_sets(self):
        class FlakyCaptioner(SceneOracleBackend):
            """Repeats the previous round's caption with probability 0.5."""

            def caption(self, image_ref, patch_indices, rng_token):
                local = random.Random((image_ref, rng_token).__hash__())
                if rng_token > 0 and local.random() < 0.5:
                    return f"caption {rng_token - 1} of {image_ref}"
                return f"caption {rng_token} of {image_ref}"

        config = EngineConfig(captions_per_image=3)
        for i in range(25):
            scenes = [SceneGraph(f"s{i}", (SceneObject(name="dog", grid_cell=(1, 1)),))]
            runtime = PrimitiveRuntime(
                vision=FlakyCaptioner(scenes),
                answer_lm=OracleAnswerLM(scenes),
                config=config,
            )
            caption_set = runtime.captions_for(f"s{i}", "Is there a dog?", rng())
            trimmed = [c.strip() for c in caption_set.captions]
            assert len(set(trimmed)) == len(trimmed) == 3

    def test_empty_question_rejected(self):
        runtime = oracle_runtime([CHAIR_SCENE])
        with pytest.raises(PrimitiveError, match="non-empty"):
            runtime.query(ImageHandle("img_chair"), "  ", rng())

    def test_backend_error_becomes_primitive_error(self):
        runtime = oracle_runtime([CHAIR_SCENE])
        with pytest.raises(PrimitiveError, match="unknown image"):
            runtime.query(ImageHandle("missing"), "Is there a chair?", rng())


class TestQaShots:
    def make_store(self):
        return ExampleStore(
            [
                Example(id="far", question="Is there snow?", kind="qa",
                        embedding=(0.0, 1.0), captions=(("snow in image s",),),
                        answer="yes"),
                Example(id="mid", question="Is there rain?", kind="qa",
                        embedding=(0.7, 0.7), captions=(("rain in image r",),),
                        answer="no"),
                Example(id="near", question="Is there sun?", kind="qa",
                        embedding=(1.0, 0.0), captions=(("sun in image u",),),
                        answer="yes"),
            ]
        )

    def runtime_with_store(self, config=None):
        class TwoDimVision(SceneOracleBackend):
            def embed(self, text):
                return (1.0, 0.0)

        lm = RecordingLM(reply="yes")
        runtime = PrimitiveRuntime(
            vision=TwoDimVision([CHAIR_SCENE], embed_dim=2),
            answer_lm=lm,
            config=config or EngineConfig(num_qa_shots=2),
            qa_store=self.make_store(),
        )
        return runtime, lm

    def test_most_similar_shot_rendered_last(self):
        runtime, lm = self.runtime_with_store()
        runtime.query(ImageHandle("img_chair"), "Is there light?", rng())
        (prompt,) = lm.prompts
        assert "Is there sun?" in prompt and "Is there rain?" in prompt
        assert "Is there snow?" not in prompt
        assert prompt.index("Is there rain?") < prompt.index("Is there sun?")

    def test_most_similar_first_when_configured(self):
        runtime, lm = self.runtime_with_store(
            EngineConfig(num_qa_shots=2, most_similar_last=False)
        )
        runtime.query(ImageHandle("img_chair"), "Is there light?", rng())
        (prompt,) = lm.prompts
        assert prompt.index("Is there sun?") < prompt.index("Is there rain?")

    def test_shot_count_clamped_to_store(self):
        runtime, lm = self.runtime_with_store(EngineConfig(num_qa_shots=12))
        runtime.query(ImageHandle("img_chair"), "Is there light?", rng())
        (prompt,) = lm.prompts
        assert prompt.count("Question:") == 4  # 3 shots + the test block


class TestGetPos:
    def test_planted_object_position(self):
        runtime = oracle_runtime([DOG_SCENE])
        pos = runtime.get_pos(ImageHandle("img_dog"), "dog", rng())
        assert pos == Pos(20.5, 21.5)

    def test_repeated_tokens_average_to_the_same_map(self):
        runtime = oracle_runtime([DOG_SCENE])
        once = runtime.get_pos(ImageHandle("img_dog"), "dog", rng())
        twice = runtime.get_pos(ImageHandle("img_dog"), "dog dog", rng())
        assert once == twice

    def test_uniform_attention_degenerates_to_first_cell(self):
        class UniformVision(BackendCapability):
            def describe(self):
                return BackendInfo(grid_h=24, grid_w=24, embed_dim=4, model="uniform")

            def attention_with_grad(self, image_ref, text, layer):
                tokens = ("[CLS]", "x", "[SEP]")
                ones = [[1.0] * (24 * 24) for _ in tokens]
                return CrossAttention(
                    attention=ones, gradient=ones, token_texts=tokens,
                    grid=(24, 24), layer=layer,
                )

        runtime = PrimitiveRuntime(
            vision=UniformVision(), answer_lm=RecordingLM(), config=EngineConfig()
        )
        pos = runtime.get_pos(ImageHandle("any"), "x", rng())
        assert pos == Pos(0.5, 23.5)


class TestFindMatchingImage:
    class ScoreTable(BackendCapability):
        def __init__(self, scores):
            self.scores = scores
            self.calls = 0

        def describe(self):
            return BackendInfo(grid_h=1, grid_w=1, embed_dim=1, model="scores")

        def itc_score(self, image_ref, text):
            self.calls += 1
            return self.scores[image_ref]

    def test_argmax_of_scores(self):
        vision = self.ScoreTable({"a": 0.2, "b": 0.9, "c": 0.5})
        runtime = PrimitiveRuntime(vision=vision, answer_lm=RecordingLM(),
                                   config=EngineConfig())
        images = (ImageHandle("a"), ImageHandle("b"), ImageHandle("c"))
        assert runtime.find_matching_image(images, "text", rng()) == ImageHandle("b")

    def test_singleton_still_scored(self):
        vision = self.ScoreTable({"only": 0.1})
        runtime = PrimitiveRuntime(vision=vision, answer_lm=RecordingLM(),
                                   config=EngineConfig())
        result = runtime.find_matching_image((ImageHandle("only"),), "text", rng())
        assert result == ImageHandle("only")
        assert vision.calls == 1

    def test_ties_pick_earliest(self):
        vision = self.ScoreTable({"a": 0.5, "b": 0.5})
        runtime = PrimitiveRuntime(vision=vision, answer_lm=RecordingLM(),
                                   config=EngineConfig())
        images = (ImageHandle("a"), ImageHandle("b"))
        assert runtime.find_matching_image(images, "text", rng()) == ImageHandle("a")

    def test_lower_scored_suffix_never_changes_the_result(self):
        scores = {"a": 0.4, "b": 0.8, "c": 0.3, "d": 0.1}
        vision = self.ScoreTable(scores)
        runtime = PrimitiveRuntime(vision=vision, answer_lm=RecordingLM(),
                                   config=EngineConfig())
        base = (ImageHandle("a"), ImageHandle("b"))
        extended = base + (ImageHandle("c"), ImageHandle("d"))
        assert runtime.find_matching_image(base, "t", rng()) == runtime.find_matching_image(extended, "t", rng())

    def test_oracle_overlap_selects_the_right_scene(self):
        scenes = [
            SceneGraph("s1", (SceneObject(name="woman", grid_cell=(1, 1)),)),
            SceneGraph("s2", (
                SceneObject(name="woman", grid_cell=(1, 1)),
                SceneObject(name="umbrella", grid_cell=(2, 2)),
            )),
            SceneGraph("s3", (SceneObject(name="truck", grid_cell=(3, 3)),)),
        ]
        runtime = oracle_runtime(scenes)
        images = tuple(ImageHandle(s.image_ref) for s in scenes)
        best = runtime.find_matching_image(images, "woman holding umbrella", rng())
        assert best == ImageHandle("s2")

    def test_empty_image_list_rejected(self):
        runtime = oracle_runtime([CHAIR_SCENE])
        with pytest.raises(PrimitiveError, match="at least one image"):
            runtime.find_matching_image((), "text", rng())


class TestFindObject:
    def test_counts_planted_objects(self):
        scene = SceneGraph(
            "shoes",
            tuple(
                SceneObject(name="shoe", attributes=("pink",), grid_cell=(5, c))
                for c in (2, 9, 16)
            ),
        )
        runtime = oracle_runtime([scene])
        detections = runtime.find_object(ImageHandle("shoes"), "pink shoe", rng())
        assert len(detections) == 3
        assert all(d.label == "shoe" for d in detections)

    def test_no_match_is_empty(self):
        runtime = oracle_runtime([CHAIR_SCENE])
        assert runtime.find_object(ImageHandle("img_chair"), "zebra", rng()) == ()

    class PlantedDetector(BackendCapability):
        def __init__(self, scores):
            self.scores = scores

        def describe(self):
            return BackendInfo(grid_h=1, grid_w=1, embed_dim=1, model="planted")

        def detect(self, image_ref, text):
            return [
                Detection(label=f"obj{i}", box=(0.0, 0.0, 1.0, 1.0), score=s)
                for i, s in enumerate(self.scores)
            ]

    def test_threshold_filters(self):
        runtime = PrimitiveRuntime(
            vision=self.PlantedDetector([0.9, 0.4]),
            answer_lm=RecordingLM(),
            config=EngineConfig(detection_threshold=0.5),
        )
        detections = runtime.find_object(ImageHandle("x"), "obj", rng())
        assert len(detections) == 1
        assert detections[0].score == 0.9

    def test_raising_threshold_never_adds_detections(self):
        vision = self.PlantedDetector([0.95, 0.72, 0.5, 0.31, 0.11])
        counts = []
        for threshold in (0.0, 0.3, 0.5, 0.8, 1.0):
            runtime = PrimitiveRuntime(
                vision=vision, answer_lm=RecordingLM(),
                config=EngineConfig(detection_threshold=threshold),
            )
            counts.append(len(runtime.find_object(ImageHandle("x"), "obj", rng())))
        assert counts == sorted(counts, reverse=True)

    def test_sorted_by_descending_score(self):
        runtime = PrimitiveRuntime(
            vision=self.PlantedDetector([0.6, 0.9, 0.7]),
            answer_lm=RecordingLM(),
            config=EngineConfig(),
        )
        detections = runtime.find_object(ImageHandle("x"), "obj", rng())
        assert [d.score for d in detections] == [0.9, 0.7, 0.6]


class TestKnowledgeQuery:
    def test_scripted_reply(self):
        lm = ScriptedAnswerLM(
            {"Which football team has won the most Super Bowls?": "The Steelers"}
        )
        runtime = PrimitiveRuntime(
            vision=SceneOracleBackend([CHAIR_SCENE]), answer_lm=lm,
            config=EngineConfig(),
        )
        answer = runtime.knowledge_query(
            "Which football team has won the most Super Bowls?", rng()
        )
        assert answer == "the steelers"

    def test_default_bias_tokens_sent(self):
        lm = RecordingLM(reply="paris")
        runtime = PrimitiveRuntime(
            vision=SceneOracleBackend([CHAIR_SCENE]), answer_lm=lm,
            config=EngineConfig(),
        )
        runtime.knowledge_query("What is the capital of France?", rng())
        (params,) = lm.params
        assert params.logit_bias == {"-": -100.0, "to": -100.0, "°": -100.0}
        assert lm.prompts == ["Question: What is the capital of France?\nAnswer:"]

    def test_empty_bias_list_sends_no_bias(self):
        lm = RecordingLM(reply="x")
        runtime = PrimitiveRuntime(
            vision=SceneOracleBackend([CHAIR_SCENE]), answer_lm=lm,
            config=EngineConfig(knowledge_bias_tokens=()),
        )
        runtime.knowledge_query("Q?", rng())
        (params,) = lm.params
        assert params.logit_bias is None

    def test_first_line_lowercased(self):
        lm = RecordingLM(reply="  The Answer  \nsecond line")
        runtime = PrimitiveRuntime(
            vision=SceneOracleBackend([CHAIR_SCENE]), answer_lm=lm,
            config=EngineConfig(),
        )
        assert runtime.knowledge_query("Q?", rng()) == "the answer"


class TestDispatcher:
    def test_unknown_primitive(self):
        dispatch = make_dispatcher(oracle_runtime([CHAIR_SCENE]))
        with pytest.raises(PrimitiveError, match="unknown primitive"):
            dispatch("summon", (), rng())

    def test_wrong_arity(self):
        dispatch = make_dispatcher(oracle_runtime([CHAIR_SCENE]))
        with pytest.raises(PrimitiveError, match="takes 2 arguments"):
            dispatch("query", (ImageHandle("img_chair"),), rng())

    def test_wrong_argument_type(self):
        dispatch = make_dispatcher(oracle_runtime([CHAIR_SCENE]))
        with pytest.raises(PrimitiveError, match="must be an image"):
            dispatch("query", ("not an image", "Q?"), rng())
        with pytest.raises(PrimitiveError, match="list of images"):
            dispatch("find_matching_image", (ImageHandle("img_chair"), "t"), rng())

    def test_bench_program_end_to_end(self):
        runtime = oracle_runtime([BENCH_SCENE])
        result = execute(
            parse_source(BENCH_PROGRAM),
            make_dispatcher(runtime),
            images=(ImageHandle("img_bench"),),
            rng=rng(),
        )
        assert result.error is None
        assert result.answer == "yes"

    def test_count_program_end_to_end(self):
        scenes = [
            SceneGraph("set_a", (
                SceneObject(name="shoe", attributes=("pink",), grid_cell=(5, 2)),
                SceneObject(name="shoe", attributes=("pink",), grid_cell=(5, 9)),
            )),
            SceneGraph("set_b", (
                SceneObject(name="shoe", attributes=("pink",), grid_cell=(5, 2)),
                SceneObject(name="tree", attributes=("green",), grid_cell=(1, 1)),
            )),
        ]
        runtime = oracle_runtime(scenes, config=EngineConfig.for_multi_image())
        result = execute(
            parse_source(COUNT_PROGRAM),
            make_dispatcher(runtime),
            images=tuple(ImageHandle(s.image_ref) for s in scenes),
            rng=rng(),
        )
        assert result.error is None
        assert result.answer == "1"

    def test_primitive_failure_flows_to_runtime_error(self):
        runtime = oracle_runtime([CHAIR_SCENE])
        source = 'img = open_image("Image1.jpg")\nanswer = query(img, "Why is anything?")\n'
        result = execute(
            parse_source(source),
            make_dispatcher(runtime),
            images=(ImageHandle("img_chair"),),
            rng=rng(),
        )
        assert result.error is not None
        assert result.error.kind is RuntimeErrorKind.PRIMITIVE_FAILURE


class TestAnswerQuestion:
    def test_multi_image_fallback_path(self):
        scenes = [
            SceneGraph("f1", (SceneObject(name="dog", grid_cell=(1, 1)),)),
            SceneGraph("f2", (SceneObject(name="cup", grid_cell=(2, 2)),)),
            SceneGraph("f3", (SceneObject(name="dog", grid_cell=(3, 3)),)),
        ]
        runtime = oracle_runtime(scenes, config=EngineConfig.for_multi_image())
        answer = runtime.answer_question(
            ("f1", "f2", "f3"), "How many images contain a dog?", rng()
        )
        assert answer == "2"

    def test_unsupported_question_is_primitive_error(self):
        runtime = oracle_runtime([CHAIR_SCENE])
        with pytest.raises(PrimitiveError):
            runtime.answer_question(("img_chair",), "Why is the sky blue?", rng())
