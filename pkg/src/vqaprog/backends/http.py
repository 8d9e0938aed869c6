"""HTTP client for a remote backend speaking the JSON wire protocol.

The bearer token is read from an environment variable at call time and is
never logged or echoed back in errors. Transport failures retry with
exponential backoff; protocol violations do not.
"""

from __future__ import annotations

import os
import time

import requests

from ..gradcam import CrossAttention
from .base import (
    BackendCapability,
    BackendInfo,
    BackendTimeout,
    CompletionParams,
    ProtocolError,
    RemoteError,
    TransportError,
)
from .wire import (
    ROUTES,
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
    TextOnImageRequest,
    parse_error_body,
)

DEFAULT_API_KEY_ENV = "VQAPROG_API_KEY"


class HttpBackend(BackendCapability):
    """Talks to a backend server over JSON-over-HTTP.

    api_key_env names the environment variable holding the bearer token;
    the token itself is never accepted directly and never written anywhere.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 10.0,
        retries: int = 2,
        backoff: float = 0.25,
        session: requests.Session | None = None,
    ):
        if retries < 0:
            raise ValueError("retries must be >= 0")
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = float(timeout)
        self.retries = int(retries)
        self.backoff = float(backoff)
        self.session = session if session is not None else requests.Session()
        self._info = None

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _sleep(self, attempt: int) -> None:
        time.sleep(self.backoff * (2 ** attempt))

    def _request(self, op: str, body: dict | None) -> dict:
        url = self.base_url + ROUTES[op]
        last_error = None
        for attempt in range(self.retries + 1):
            try:
                if body is None:
                    resp = self.session.get(
                        url, headers=self._headers(), timeout=self.timeout
                    )
                else:
                    resp = self.session.post(
                        url, json=body, headers=self._headers(), timeout=self.timeout
                    )
            except requests.Timeout as exc:
                last_error = BackendTimeout(f"{op}: request timed out")
                if attempt < self.retries:
                    self._sleep(attempt)
                    continue
                raise last_error from exc
            except requests.RequestException as exc:
                last_error = TransportError(f"{op}: {exc.__class__.__name__}")
                if attempt < self.retries:
                    self._sleep(attempt)
                    continue
                raise last_error from exc

            if resp.status_code >= 500:
                last_error = RemoteError(self._error_message(op, resp))
                if attempt < self.retries:
                    self._sleep(attempt)
                    continue
                raise last_error
            if resp.status_code >= 400:
                raise RemoteError(self._error_message(op, resp))
            try:
                payload = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{op}: response body is not JSON") from exc
            if not isinstance(payload, dict):
                raise ProtocolError(f"{op}: response body is not an object")
            return payload
        raise last_error  # pragma: no cover - loop always raises or returns

    @staticmethod
    def _error_message(op: str, resp) -> str:
        try:
            parsed = parse_error_body(resp.json())
        except ValueError:
            parsed = None
        if parsed is not None:
            kind, message = parsed
            return f"{op}: {kind}: {message}"
        return f"{op}: server returned status {resp.status_code}"

    # -- capability operations ----------------------------------------------

    def describe(self) -> BackendInfo:
        if self._info is None:
            payload = self._request("describe", None)
            self._info = DescribeResponse.from_json_obj(payload).info
        return self._info

    def complete(self, prompt: str, params: CompletionParams) -> str:
        request = CompleteRequest.from_params(prompt, params)
        payload = self._request("complete", request.to_json_obj())
        return CompleteResponse.from_json_obj(payload).text

    def attention_with_grad(self, image_ref: str, text: str, layer: int) -> CrossAttention:
        request = AttentionRequest(image_ref=image_ref, text=text, layer=layer)
        payload = self._request("attention", request.to_json_obj())
        decoded = AttentionResponse.from_json_obj(payload)
        info = self.describe()
        return CrossAttention(
            attention=decoded.attention,
            gradient=decoded.gradient,
            token_texts=decoded.tokens,
            grid=(info.grid_h, info.grid_w),
            layer=layer,
        )

    def caption(self, image_ref: str, patch_indices, rng_token: int) -> str:
        request = CaptionRequest(
            image_ref=image_ref,
            patch_indices=tuple(patch_indices),
            rng_token=rng_token,
        )
        payload = self._request("caption", request.to_json_obj())
        return CaptionResponse.from_json_obj(payload).caption

    def itc_score(self, image_ref: str, text: str) -> float:
        request = TextOnImageRequest(image_ref=image_ref, text=text)
        payload = self._request("itc", request.to_json_obj())
        return ItcResponse.from_json_obj(payload).score

    def detect(self, image_ref: str, text: str):
        request = TextOnImageRequest(image_ref=image_ref, text=text)
        payload = self._request("detect", request.to_json_obj())
        return list(DetectResponse.from_json_obj(payload).detections)

    def embed(self, text: str):
        request = EmbedRequest(text=text)
        payload = self._request("embed", request.to_json_obj())
        return EmbedResponse.from_json_obj(payload).embedding


__all__ = ["DEFAULT_API_KEY_ENV", "HttpBackend"]
