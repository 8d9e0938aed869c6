"""Write-through disk cache for backend calls.

Entries are one JSON file per request, keyed by a sha256 over the canonical
serialization of (operation, model, engine version, request). Corrupt files
log a warning, count as a miss, and are replaced by the fresh result.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from ..gradcam import CrossAttention
from .base import BackendCapability, BackendInfo, CompletionParams
from .wire import (
    AttentionRequest,
    AttentionResponse,
    CaptionRequest,
    CaptionResponse,
    CompleteRequest,
    CompleteResponse,
    DetectResponse,
    EmbedRequest,
    EmbedResponse,
    ItcResponse,
    TextOnImageRequest,
    canonical_json,
)

log = logging.getLogger(__name__)


class CacheCorrupt(Exception):
    """A cache file exists but cannot be decoded as a valid entry."""


@dataclass(frozen=True)
class CacheEntry:
    op: str
    model: str
    version: str
    request: dict
    response: dict
    created_at: float = 0.0

    def key(self) -> str:
        """Content hash of the request identity; created_at stays out so
        replays of the same request always land on the same file."""
        payload = canonical_json(
            {
                "op": self.op,
                "model": self.model,
                "version": self.version,
                "request": self.request,
            }
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_json_obj(self) -> dict:
        return {
            "op": self.op,
            "model": self.model,
            "version": self.version,
            "request": self.request,
            "response": self.response,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json_obj(cls, obj) -> "CacheEntry":
        if not isinstance(obj, dict):
            raise CacheCorrupt("cache entry is not an object")
        try:
            return cls(
                op=obj["op"],
                model=obj["model"],
                version=obj["version"],
                request=obj["request"],
                response=obj["response"],
                created_at=float(obj.get("created_at", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CacheCorrupt(f"cache entry missing field: {exc}") from exc


class CachedBackend(BackendCapability):
    """Wraps another backend; repeated identical requests hit the disk."""

    def __init__(self, inner: BackendCapability, cache_dir, version: str | None = None):
        from .. import __version__

        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.version = version if version is not None else __version__
        self._info = None
        self._write_lock = threading.Lock()

    def describe(self) -> BackendInfo:
        if self._info is None:
            self._info = self.inner.describe()
        return self._info

    # -- entry plumbing ------------------------------------------------------

    def _path_for(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def _load(self, op: str, request_obj: dict):
        """Return the cached response dict, or None on miss (corrupt counts
        as a miss)."""
        probe = CacheEntry(op=op, model=self.describe().model,
                           version=self.version, request=request_obj, response={})
        key = probe.key()
        path = self._path_for(key)
        try:
            raw = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return key, None
        except OSError as exc:
            log.warning("cache read failed for %s: %s", path.name, exc)
            return key, None
        try:
            entry = CacheEntry.from_json_obj(json.loads(raw))
            if not isinstance(entry.response, dict):
                raise CacheCorrupt("response is not an object")
        except (json.JSONDecodeError, CacheCorrupt) as exc:
            log.warning("corrupt cache entry %s (%s); recomputing", path.name, exc)
            return key, None
        return key, entry.response

    def _store(self, op: str, request_obj: dict, key: str, response_obj: dict) -> None:
        entry = CacheEntry(op=op, model=self.describe().model,
                           version=self.version, request=request_obj,
                           response=response_obj, created_at=time.time())
        path = self._path_for(key)
        with self._write_lock:
            fd, tmp_name = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                    json.dump(entry.to_json_obj(), fh, ensure_ascii=False,
                              sort_keys=True, indent=2)
                    fh.write("\n")
                os.replace(tmp_name, path)
            except BaseException:
                try:
                    os.unlink(tmp_name)
                except OSError:
                    pass
                raise

    # -- cached operations ---------------------------------------------------

    def complete(self, prompt: str, params: CompletionParams) -> str:
        request = CompleteRequest.from_params(prompt, params)
        key, hit = self._load("complete", request.to_json_obj())
        if hit is not None:
            return CompleteResponse.from_json_obj(hit).text
        text = self.inner.complete(prompt, params)
        response = CompleteResponse(text=text)
        self._store("complete", request.to_json_obj(), key, response.to_json_obj())
        return text

    def attention_with_grad(self, image_ref: str, text: str, layer: int) -> CrossAttention:
        request = AttentionRequest(image_ref=image_ref, text=text, layer=layer)
        info = self.describe()
        key, hit = self._load("attention", request.to_json_obj())
        if hit is not None:
            decoded = AttentionResponse.from_json_obj(hit)
            return CrossAttention(
                attention=decoded.attention,
                gradient=decoded.gradient,
                token_texts=decoded.tokens,
                grid=(info.grid_h, info.grid_w),
                layer=layer,
            )
        ca = self.inner.attention_with_grad(image_ref, text, layer)
        response = AttentionResponse(
            attention=tuple(tuple(float(v) for v in row) for row in ca.attention),
            gradient=tuple(tuple(float(v) for v in row) for row in ca.gradient),
            tokens=tuple(ca.token_texts),
        )
        self._store("attention", request.to_json_obj(), key, response.to_json_obj())
        return ca

    def caption(self, image_ref: str, patch_indices, rng_token: int) -> str:
        request = CaptionRequest(
            image_ref=image_ref,
            patch_indices=tuple(patch_indices),
            rng_token=rng_token,
        )
        key, hit = self._load("caption", request.to_json_obj())
        if hit is not None:
            return CaptionResponse.from_json_obj(hit).caption
        caption = self.inner.caption(image_ref, patch_indices, rng_token)
        self._store("caption", request.to_json_obj(), key,
                    CaptionResponse(caption=caption).to_json_obj())
        return caption

    def itc_score(self, image_ref: str, text: str) -> float:
        request = TextOnImageRequest(image_ref=image_ref, text=text)
        key, hit = self._load("itc", request.to_json_obj())
        if hit is not None:
            return ItcResponse.from_json_obj(hit).score
        score = float(self.inner.itc_score(image_ref, text))
        self._store("itc", request.to_json_obj(), key,
                    ItcResponse(score=score).to_json_obj())
        return score

    def detect(self, image_ref: str, text: str):
        request = TextOnImageRequest(image_ref=image_ref, text=text)
        key, hit = self._load("detect", request.to_json_obj())
        if hit is not None:
            return list(DetectResponse.from_json_obj(hit).detections)
        detections = list(self.inner.detect(image_ref, text))
        self._store("detect", request.to_json_obj(), key,
                    DetectResponse(detections=tuple(detections)).to_json_obj())
        return detections

    def embed(self, text: str):
        request = EmbedRequest(text=text)
        key, hit = self._load("embed", request.to_json_obj())
        if hit is not None:
            return EmbedResponse.from_json_obj(hit).embedding
        embedding = tuple(float(v) for v in self.inner.embed(text))
        self._store("embed", request.to_json_obj(), key,
                    EmbedResponse(embedding=embedding).to_json_obj())
        return embedding


def cached(backend: BackendCapability, cache_dir, version: str | None = None) -> CachedBackend:
    return CachedBackend(backend, cache_dir, version=version)


__all__ = ["CacheCorrupt", "CacheEntry", "CachedBackend", "cached"]
