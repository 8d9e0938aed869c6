"""Model-capability interface, wire protocol, mocks, caching, HTTP client."""

from .base import (
    BackendCapability,
    BackendError,
    BackendInfo,
    BackendTimeout,
    CompletionParams,
    ProtocolError,
    RemoteError,
    TransportError,
)
from .cache import CacheCorrupt, CacheEntry, CachedBackend, cached
from .http import DEFAULT_API_KEY_ENV, HttpBackend
from .mock import (
    OracleAnswerLM,
    SceneGraph,
    SceneObject,
    SceneOracleBackend,
    ScriptedAnswerLM,
    ScriptedCodeLM,
    UnsupportedTemplate,
    answer_from_scene,
    answer_over_scenes,
    load_scenes,
    save_scenes,
)
from .wire import ROUTES, Detection, canonical_json

__all__ = [
    "DEFAULT_API_KEY_ENV",
    "ROUTES",
    "BackendCapability",
    "BackendError",
    "BackendInfo",
    "BackendTimeout",
    "CacheCorrupt",
    "CacheEntry",
    "CachedBackend",
    "CompletionParams",
    "Detection",
    "HttpBackend",
    "OracleAnswerLM",
    "ProtocolError",
    "RemoteError",
    "SceneGraph",
    "SceneObject",
    "SceneOracleBackend",
    "ScriptedAnswerLM",
    "ScriptedCodeLM",
    "TransportError",
    "UnsupportedTemplate",
    "answer_from_scene",
    "answer_over_scenes",
    "cached",
    "canonical_json",
    "load_scenes",
    "save_scenes",
]
