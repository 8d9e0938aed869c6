"""Abstract model-capability interface and its error taxonomy.

One backend object may provide any subset of the capability operations:
completion (code generation and caption QA), cross-attention with gradients
(ITM), captioning (IC), image-text contrastive scoring (ITC), detection,
and text embedding. Unsupported operations raise RemoteError so callers
handle a thin backend the same way as a failing one.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class BackendError(Exception):
    """Base class for everything a backend call can raise."""


class TransportError(BackendError):
    """The request never produced a usable HTTP response."""


class BackendTimeout(TransportError):
    pass


class ProtocolError(BackendError):
    """The response arrived but failed shape validation."""


class RemoteError(BackendError):
    """The backend itself reported failure (or lacks the capability)."""


@dataclass(frozen=True)
class BackendInfo:
    """Static facts a backend declares about itself.

    special_token_positions uses Python indexing against each tokenization
    (negative values count from the end), so (0, -1) marks the usual
    start/end markers regardless of text length.
    """

    grid_h: int
    grid_w: int
    embed_dim: int
    special_token_positions: tuple = (0, -1)
    model: str = "unknown"

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1 or self.embed_dim < 1:
            raise ValueError("grid and embedding dimensions must be positive")
        object.__setattr__(
            self, "special_token_positions", tuple(self.special_token_positions)
        )

    def content_token_indices(self, num_tokens: int) -> list:
        """Token positions that are not special, for averaging."""
        special = {p % num_tokens for p in self.special_token_positions if -num_tokens <= p < num_tokens}
        kept = [i for i in range(num_tokens) if i not in special]
        return kept or list(range(num_tokens))


@dataclass(frozen=True)
class CompletionParams:
    max_tokens: int = 256
    temperature: float = 0.0
    stop: tuple | None = None
    logit_bias: dict | None = None

    def __post_init__(self):
        if self.stop is not None:
            object.__setattr__(self, "stop", tuple(self.stop))
        if self.logit_bias is not None:
            object.__setattr__(self, "logit_bias", dict(self.logit_bias))


class BackendCapability:
    """Interface all backends implement; the default for every operation is
    "not supported" so partial backends stay honest."""

    def describe(self) -> BackendInfo:
        raise RemoteError("describe is not supported by this backend")

    def complete(self, prompt: str, params: CompletionParams) -> str:
        raise RemoteError("complete is not supported by this backend")

    def attention_with_grad(self, image_ref: str, text: str, layer: int):
        raise RemoteError("attention_with_grad is not supported by this backend")

    def caption(self, image_ref: str, patch_indices, rng_token: int) -> str:
        raise RemoteError("caption is not supported by this backend")

    def itc_score(self, image_ref: str, text: str) -> float:
        raise RemoteError("itc_score is not supported by this backend")

    def detect(self, image_ref: str, text: str):
        raise RemoteError("detect is not supported by this backend")

    def embed(self, text: str):
        raise RemoteError("embed is not supported by this backend")


__all__ = [
    "BackendCapability",
    "BackendError",
    "BackendInfo",
    "BackendTimeout",
    "CompletionParams",
    "ProtocolError",
    "RemoteError",
    "TransportError",
]
