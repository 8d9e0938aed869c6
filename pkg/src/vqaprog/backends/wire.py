"""JSON wire protocol for the backend capabilities.

One POST route per capability; matrices travel as row-major nested arrays.
Everything here is shape-checked on decode: a malformed body becomes a
ProtocolError, never a partially-populated value. protocol.md in the repo
root documents the exact field names for other implementations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .base import BackendInfo, CompletionParams, ProtocolError

ROUTES = {
    "describe": "/v1/describe",
    "complete": "/v1/complete",
    "attention": "/v1/attention",
    "caption": "/v1/caption",
    "itc": "/v1/itc",
    "detect": "/v1/detect",
    "embed": "/v1/embed",
}


def canonical_json(obj) -> str:
    """Field-order-insensitive serialization, used for cache keys."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _require(obj: dict, key: str, kinds, what: str):
    if key not in obj:
        raise ProtocolError(f"{what}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kinds):
        raise ProtocolError(f"{what}: field {key!r} has type {type(value).__name__}")
    if isinstance(value, bool) and bool not in (kinds if isinstance(kinds, tuple) else (kinds,)):
        raise ProtocolError(f"{what}: field {key!r} has type bool")
    return value


def _number(obj: dict, key: str, what: str) -> float:
    return float(_require(obj, key, (int, float), what))


def _matrix(obj: dict, key: str, what: str) -> tuple:
    raw = _require(obj, key, list, what)
    rows = []
    width = None
    for r, row in enumerate(raw):
        if not isinstance(row, list):
            raise ProtocolError(f"{what}: {key}[{r}] is not a list")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ProtocolError(f"{what}: {key} is ragged at row {r}")
        for v in row:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ProtocolError(f"{what}: {key}[{r}] holds a non-number")
        rows.append(tuple(float(v) for v in row))
    return tuple(rows)


@dataclass(frozen=True)
class Detection:
    label: str
    box: tuple  # (x0, y0, x1, y1) in frame coordinates
    score: float

    def __post_init__(self):
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise ProtocolError(f"degenerate detection box {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ProtocolError(f"detection score {self.score} outside [0, 1]")

    def to_json_obj(self) -> dict:
        return {"label": self.label, "box": list(self.box), "score": self.score}

    @classmethod
    def from_json_obj(cls, obj) -> "Detection":
        if not isinstance(obj, dict):
            raise ProtocolError("detection entry is not an object")
        label = _require(obj, "label", str, "detection")
        box = _require(obj, "box", list, "detection")
        if len(box) != 4:
            raise ProtocolError(f"detection box has {len(box)} entries")
        score = _number(obj, "score", "detection")
        return cls(label=label, box=tuple(box), score=score)


# -- requests ----------------------------------------------------------------


@dataclass(frozen=True)
class CompleteRequest:
    prompt: str
    max_tokens: int = 256
    temperature: float = 0.0
    stop: tuple | None = None
    logit_bias: tuple | None = None  # sorted ((token, bias), ...) pairs

    @classmethod
    def from_params(cls, prompt: str, params: CompletionParams) -> "CompleteRequest":
        bias = None
        if params.logit_bias is not None:
            bias = tuple(sorted((str(k), float(v)) for k, v in params.logit_bias.items()))
        return cls(
            prompt=prompt,
            max_tokens=params.max_tokens,
            temperature=params.temperature,
            stop=params.stop,
            logit_bias=bias,
        )

    def to_json_obj(self) -> dict:
        return {
            "prompt": self.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "stop": list(self.stop) if self.stop is not None else None,
            "logit_bias": dict(self.logit_bias) if self.logit_bias is not None else None,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CompleteRequest":
        prompt = _require(obj, "prompt", str, "complete request")
        max_tokens = int(_require(obj, "max_tokens", int, "complete request"))
        temperature = _number(obj, "temperature", "complete request")
        stop = obj.get("stop")
        if stop is not None:
            if not isinstance(stop, list) or not all(isinstance(s, str) for s in stop):
                raise ProtocolError("complete request: stop must be a list of strings")
            stop = tuple(stop)
        bias = obj.get("logit_bias")
        if bias is not None:
            if not isinstance(bias, dict):
                raise ProtocolError("complete request: logit_bias must be an object")
            for k, v in bias.items():
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ProtocolError(f"complete request: bias for {k!r} is not a number")
            bias = tuple(sorted((str(k), float(v)) for k, v in bias.items()))
        return cls(prompt=prompt, max_tokens=max_tokens, temperature=temperature,
                   stop=stop, logit_bias=bias)


@dataclass(frozen=True)
class AttentionRequest:
    image_ref: str
    text: str
    layer: int

    def to_json_obj(self) -> dict:
        return {"image_ref": self.image_ref, "text": self.text, "layer": self.layer}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AttentionRequest":
        return cls(
            image_ref=_require(obj, "image_ref", str, "attention request"),
            text=_require(obj, "text", str, "attention request"),
            layer=int(_require(obj, "layer", int, "attention request")),
        )


@dataclass(frozen=True)
class CaptionRequest:
    image_ref: str
    patch_indices: tuple
    rng_token: int

    def __post_init__(self):
        object.__setattr__(self, "patch_indices", tuple(int(i) for i in self.patch_indices))

    def to_json_obj(self) -> dict:
        return {
            "image_ref": self.image_ref,
            "patch_indices": list(self.patch_indices),
            "rng_token": self.rng_token,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CaptionRequest":
        indices = _require(obj, "patch_indices", list, "caption request")
        for i in indices:
            if isinstance(i, bool) or not isinstance(i, int) or i < 0:
                raise ProtocolError("caption request: patch_indices must be nonnegative ints")
        return cls(
            image_ref=_require(obj, "image_ref", str, "caption request"),
            patch_indices=tuple(indices),
            rng_token=int(_require(obj, "rng_token", int, "caption request")),
        )


@dataclass(frozen=True)
class TextOnImageRequest:
    """Shared request shape for /v1/itc and /v1/detect."""

    image_ref: str
    text: str

    def to_json_obj(self) -> dict:
        return {"image_ref": self.image_ref, "text": self.text}

    @classmethod
    def from_json_obj(cls, obj: dict, what: str = "request") -> "TextOnImageRequest":
        return cls(
            image_ref=_require(obj, "image_ref", str, what),
            text=_require(obj, "text", str, what),
        )


@dataclass(frozen=True)
class EmbedRequest:
    text: str

    def to_json_obj(self) -> dict:
        return {"text": self.text}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "EmbedRequest":
        return cls(text=_require(obj, "text", str, "embed request"))


# -- responses ---------------------------------------------------------------


@dataclass(frozen=True)
class CompleteResponse:
    text: str

    def to_json_obj(self) -> dict:
        return {"text": self.text}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CompleteResponse":
        return cls(text=_require(obj, "text", str, "complete response"))


@dataclass(frozen=True)
class AttentionResponse:
    attention: tuple  # T rows of P floats
    gradient: tuple
    tokens: tuple

    def __post_init__(self):
        if len(self.attention) != len(self.tokens):
            raise ProtocolError(
                f"attention response: {len(self.attention)} rows for {len(self.tokens)} tokens"
            )
        if len(self.attention) != len(self.gradient):
            raise ProtocolError("attention response: attention/gradient row mismatch")
        widths = {len(r) for r in self.attention} | {len(r) for r in self.gradient}
        if len(widths) > 1:
            raise ProtocolError(f"attention response: mixed matrix widths {sorted(widths)}")
        for row in self.attention:
            for v in row:
                if v < 0:
                    raise ProtocolError("attention response: negative attention entry")

    @property
    def width(self) -> int:
        return len(self.attention[0]) if self.attention else 0

    def to_json_obj(self) -> dict:
        return {
            "attention": [list(r) for r in self.attention],
            "gradient": [list(r) for r in self.gradient],
            "tokens": list(self.tokens),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AttentionResponse":
        tokens = _require(obj, "tokens", list, "attention response")
        if not all(isinstance(t, str) for t in tokens):
            raise ProtocolError("attention response: tokens must be strings")
        return cls(
            attention=_matrix(obj, "attention", "attention response"),
            gradient=_matrix(obj, "gradient", "attention response"),
            tokens=tuple(tokens),
        )


@dataclass(frozen=True)
class CaptionResponse:
    caption: str

    def to_json_obj(self) -> dict:
        return {"caption": self.caption}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CaptionResponse":
        return cls(caption=_require(obj, "caption", str, "caption response"))


@dataclass(frozen=True)
class ItcResponse:
    score: float

    def to_json_obj(self) -> dict:
        return {"score": self.score}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ItcResponse":
        return cls(score=_number(obj, "score", "itc response"))


@dataclass(frozen=True)
class DetectResponse:
    detections: tuple

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))

    def to_json_obj(self) -> dict:
        return {"detections": [d.to_json_obj() for d in self.detections]}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "DetectResponse":
        raw = _require(obj, "detections", list, "detect response")
        return cls(detections=tuple(Detection.from_json_obj(d) for d in raw))


@dataclass(frozen=True)
class EmbedResponse:
    embedding: tuple

    def __post_init__(self):
        object.__setattr__(self, "embedding", tuple(float(v) for v in self.embedding))

    def to_json_obj(self) -> dict:
        return {"embedding": list(self.embedding)}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "EmbedResponse":
        raw = _require(obj, "embedding", list, "embed response")
        if not raw:
            raise ProtocolError("embed response: empty embedding")
        for v in raw:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ProtocolError("embed response: embedding holds a non-number")
        return cls(embedding=tuple(raw))


@dataclass(frozen=True)
class DescribeResponse:
    info: BackendInfo

    def to_json_obj(self) -> dict:
        return {
            "grid_h": self.info.grid_h,
            "grid_w": self.info.grid_w,
            "embed_dim": self.info.embed_dim,
            "special_token_positions": list(self.info.special_token_positions),
            "model": self.info.model,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "DescribeResponse":
        positions = _require(obj, "special_token_positions", list, "describe response")
        for p in positions:
            if isinstance(p, bool) or not isinstance(p, int):
                raise ProtocolError("describe response: special positions must be ints")
        try:
            info = BackendInfo(
                grid_h=int(_require(obj, "grid_h", int, "describe response")),
                grid_w=int(_require(obj, "grid_w", int, "describe response")),
                embed_dim=int(_require(obj, "embed_dim", int, "describe response")),
                special_token_positions=tuple(positions),
                model=_require(obj, "model", str, "describe response"),
            )
        except ValueError as exc:
            raise ProtocolError(f"describe response: {exc}") from exc
        return cls(info=info)


def error_body(kind: str, message: str) -> dict:
    return {"error": {"type": kind, "message": message}}


def parse_error_body(obj) -> tuple:
    """Extract (type, message) from an error body, tolerating junk."""
    if isinstance(obj, dict) and isinstance(obj.get("error"), dict):
        err = obj["error"]
        return str(err.get("type", "unknown")), str(err.get("message", ""))
    return "unknown", canonical_json(obj) if isinstance(obj, (dict, list)) else str(obj)


__all__ = [
    "ROUTES",
    "AttentionRequest",
    "AttentionResponse",
    "CaptionRequest",
    "CaptionResponse",
    "CompleteRequest",
    "CompleteResponse",
    "DescribeResponse",
    "DetectResponse",
    "Detection",
    "EmbedRequest",
    "EmbedResponse",
    "ItcResponse",
    "TextOnImageRequest",
    "canonical_json",
    "error_body",
    "parse_error_body",
]
