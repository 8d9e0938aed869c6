"""Recorder for the wire-protocol golden fixtures.

Runs each sample request against the scene-oracle mocks and freezes the
request/response pairs under tests/goldens/protocol/. The conformance test
(and any other server implementing the protocol) replays the same files:
responses must use exactly these field names and shapes; values are pinned
only for the recording backend.

Regenerate after intentional protocol changes with:

    python3 tests/protocol_cases.py
"""

import json
import os

from vqaprog.backends.base import CompletionParams
from vqaprog.backends.mock import (
    OracleAnswerLM,
    SceneGraph,
    SceneObject,
    SceneOracleBackend,
    ScriptedCodeLM,
    save_scenes,
)
from vqaprog.backends.wire import (
    AttentionRequest,
    AttentionResponse,
    CaptionRequest,
    CaptionResponse,
    CompleteRequest,
    CompleteResponse,
    DescribeResponse,
    DetectResponse,
    EmbedRequest,
    EmbedResponse,
    ItcResponse,
    ROUTES,
    TextOnImageRequest,
)

GOLDENS_DIR = os.path.join(os.path.dirname(__file__), "goldens", "protocol")
SCENES_FILE = "scenes.json"
CASES_FILE = "cases.json"

SCENES = (
    SceneGraph(
        image_ref="proto-0",
        objects=(
            SceneObject(name="chair", attributes=("red",), grid_cell=(3, 4)),
            SceneObject(name="tree", attributes=("green",), grid_cell=(20, 18)),
        ),
    ),
    SceneGraph(
        image_ref="proto-1",
        objects=(
            SceneObject(name="dog", attributes=("small",), grid_cell=(2, 20)),
            SceneObject(name="ball", attributes=("blue",), grid_cell=(10, 10)),
            SceneObject(name="ball", attributes=("blue",), grid_cell=(11, 9)),
        ),
    ),
)

QA_PROMPT = (
    "a photo of a red chair in image proto-0\n"
    "Question: What color is the chair?\nAnswer:"
)

CODE_PROMPT = "# Image 1: How many dogs are there?\n"


def _attention_case(backend, name, image_ref, text):
    ca = backend.attention_with_grad(image_ref, text, layer=6)
    response = AttentionResponse(
        attention=ca.attention, gradient=ca.gradient, tokens=ca.token_texts
    )
    return {
        "name": name,
        "request": AttentionRequest(image_ref=image_ref, text=text, layer=6).to_json_obj(),
        "response": response.to_json_obj(),
    }


def build_cases() -> dict:
    vision = SceneOracleBackend(SCENES)
    code_lm = ScriptedCodeLM({}, default_to_query=True)
    answer_lm = OracleAnswerLM(SCENES)

    qa_params = CompletionParams(max_tokens=32, temperature=0.0, stop=("\n",))
    biased_params = CompletionParams(
        max_tokens=32,
        temperature=0.0,
        stop=("\n",),
        logit_bias={"-": -100.0, "to": -100.0, "°": -100.0},
    )
    code_params = CompletionParams(max_tokens=512, temperature=0.0, stop=("# Image",))

    routes = [
        {
            "route": ROUTES["describe"],
            "method": "GET",
            "cases": [
                {
                    "name": "vision-info",
                    "request": None,
                    "response": DescribeResponse(info=vision.describe()).to_json_obj(),
                }
            ],
            "invalid": [],
        },
        {
            "route": ROUTES["complete"],
            "method": "POST",
            "cases": [
                {
                    "name": "caption-qa",
                    "request": CompleteRequest.from_params(QA_PROMPT, qa_params).to_json_obj(),
                    "response": CompleteResponse(
                        text=answer_lm.complete(QA_PROMPT, qa_params)
                    ).to_json_obj(),
                },
                {
                    "name": "biased-qa",
                    "request": CompleteRequest.from_params(QA_PROMPT, biased_params).to_json_obj(),
                    "response": CompleteResponse(
                        text=answer_lm.complete(QA_PROMPT, biased_params)
                    ).to_json_obj(),
                },
                {
                    "name": "code-generation",
                    "request": CompleteRequest.from_params(CODE_PROMPT, code_params).to_json_obj(),
                    "response": CompleteResponse(
                        text=code_lm.complete(CODE_PROMPT, code_params)
                    ).to_json_obj(),
                },
            ],
            "invalid": [
                {"name": "missing-prompt", "request": {"max_tokens": 8, "temperature": 0.0}},
                {
                    "name": "bias-not-a-number",
                    "request": {
                        "prompt": "Question: hi\nAnswer:",
                        "max_tokens": 8,
                        "temperature": 0.0,
                        "stop": None,
                        "logit_bias": {"-": "minus"},
                    },
                },
            ],
        },
        {
            "route": ROUTES["attention"],
            "method": "POST",
            "cases": [
                _attention_case(vision, "chair", "proto-0", "Is there a red chair?"),
                _attention_case(vision, "dog", "proto-1", "where is the dog"),
                _attention_case(vision, "two-balls", "proto-1", "How many balls are there?"),
            ],
            "invalid": [
                {"name": "missing-layer", "request": {"image_ref": "proto-0", "text": "hi"}},
                {
                    "name": "layer-not-int",
                    "request": {"image_ref": "proto-0", "text": "hi", "layer": "six"},
                },
            ],
        },
        {
            "route": ROUTES["caption"],
            "method": "POST",
            "cases": [
                {
                    "name": "chair-patches",
                    "request": CaptionRequest(
                        image_ref="proto-0", patch_indices=(0, 1, 2), rng_token=0
                    ).to_json_obj(),
                    "response": CaptionResponse(
                        caption=vision.caption("proto-0", (0, 1, 2), 0)
                    ).to_json_obj(),
                },
                {
                    "name": "dog-second-round",
                    "request": CaptionRequest(
                        image_ref="proto-1", patch_indices=(5, 6), rng_token=1
                    ).to_json_obj(),
                    "response": CaptionResponse(
                        caption=vision.caption("proto-1", (5, 6), 1)
                    ).to_json_obj(),
                },
            ],
            "invalid": [
                {
                    "name": "negative-patch",
                    "request": {"image_ref": "proto-0", "patch_indices": [-1], "rng_token": 0},
                },
            ],
        },
        {
            "route": ROUTES["itc"],
            "method": "POST",
            "cases": [
                {
                    "name": "matching-text",
                    "request": TextOnImageRequest(
                        image_ref="proto-0", text="a red chair"
                    ).to_json_obj(),
                    "response": ItcResponse(
                        score=vision.itc_score("proto-0", "a red chair")
                    ).to_json_obj(),
                },
                {
                    "name": "unrelated-text",
                    "request": TextOnImageRequest(
                        image_ref="proto-1", text="a purple submarine"
                    ).to_json_obj(),
                    "response": ItcResponse(
                        score=vision.itc_score("proto-1", "a purple submarine")
                    ).to_json_obj(),
                },
            ],
            "invalid": [
                {"name": "missing-text", "request": {"image_ref": "proto-0"}},
            ],
        },
        {
            "route": ROUTES["detect"],
            "method": "POST",
            "cases": [
                {
                    "name": "two-balls",
                    "request": TextOnImageRequest(
                        image_ref="proto-1", text="ball"
                    ).to_json_obj(),
                    "response": DetectResponse(
                        detections=vision.detect("proto-1", "ball")
                    ).to_json_obj(),
                },
                {
                    "name": "absent-object",
                    "request": TextOnImageRequest(
                        image_ref="proto-0", text="zebra"
                    ).to_json_obj(),
                    "response": DetectResponse(
                        detections=vision.detect("proto-0", "zebra")
                    ).to_json_obj(),
                },
            ],
            "invalid": [
                {"name": "missing-image", "request": {"text": "ball"}},
            ],
        },
        {
            "route": ROUTES["embed"],
            "method": "POST",
            "cases": [
                {
                    "name": "question-text",
                    "request": EmbedRequest(text="how many dogs are there").to_json_obj(),
                    "response": EmbedResponse(
                        embedding=vision.embed("how many dogs are there")
                    ).to_json_obj(),
                },
            ],
            "invalid": [
                {"name": "numeric-text", "request": {"text": 5}},
            ],
        },
    ]
    return {
        "scenes_file": SCENES_FILE,
        "error_body": {"error": {"type": "protocol", "message": "<human-readable>"}},
        "invalid_status": 400,
        "routes": routes,
    }


def main() -> None:
    os.makedirs(GOLDENS_DIR, exist_ok=True)
    save_scenes(SCENES, os.path.join(GOLDENS_DIR, SCENES_FILE))
    cases = build_cases()
    with open(os.path.join(GOLDENS_DIR, CASES_FILE), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cases, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    total = sum(len(r["cases"]) for r in cases["routes"])
    print(f"wrote {CASES_FILE} with {total} cases across {len(cases['routes'])} routes")


if __name__ == "__main__":
    main()
