"""Model backends: vision-language experts, text/image embedders, and the
extractor/answerer LLM.

Two transports share one surface:

* ``remote`` speaks an OpenAI-compatible wire protocol (chat completions
  for experts and the extractor, an embeddings endpoint for the embedder)
  with exponential-backoff retries.
* ``stub`` is a deterministic, seed-parameterized stand-in so the whole
  pipeline runs bit-identically without any model. Stub behavior is
  selected through ``model_name`` (see ``_stub_expert_reply`` /
  ``_stub_complete``).

Stub embedding construction: whitespace-tokenize, hash each token with the
seed into a signed bucket of a fixed-dimension vector, sum, L2-normalize.
"""
from __future__ import annotations

import base64
import hashlib
import json
import mimetypes
import os
import random
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx

from .corpus import ImageRecord
from .errors import (
    CorpusError,
    DegenerateEmbedding,
    InvalidInput,
    ProtocolError,
    RetriableBackendError,
)

BACKEND_KINDS = ("expert", "embedder", "extractor")
TRANSPORTS = ("remote", "stub")

BACKOFF_BASE_SECONDS = 0.5

# Test hook: replaces the HTTP transport for remote calls.
_http_transport: httpx.BaseTransport | None = None
# Test hook: replaces time.sleep in the retry loop.
_sleep: Callable[[float], None] = time.sleep


def set_http_transport(transport: httpx.BaseTransport | None) -> None:
    global _http_transport
    _http_transport = transport


def set_sleep(fn: Callable[[float], None]) -> None:
    global _sleep
    _sleep = fn


@dataclass
class BackendSpec:
    """Configuration of one model backend."""

    kind: str
    transport: str
    model_name: str = "stub"
    endpoint_url: str = ""
    timeout_ms: int = 30000
    max_retries: int = 3
    stub_seed: int = 0
    dimension: int = 64
    api_key_env: str = ""
    stub_replies: dict[str, str] = field(default_factory=dict)
    deterministic: bool = True

    def validate(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise InvalidInput(f"unknown backend kind {self.kind!r}")
        if self.transport not in TRANSPORTS:
            raise InvalidInput(f"unknown transport {self.transport!r}")
        if self.transport == "remote" and not self.endpoint_url:
            raise InvalidInput("remote transport requires a non-empty endpoint_url")
        if self.max_retries < 0:
            raise InvalidInput("max_retries must be >= 0")
        if self.timeout_ms <= 0:
            raise InvalidInput("timeout_ms must be > 0")
        if self.dimension <= 0:
            raise InvalidInput("embedding dimension must be > 0")


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length real vector."""

    values: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.values)

    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)


@dataclass
class ProvenanceEntry:
    stage_index: int
    step_index: int
    model_name: str


@dataclass
class Description:
    """Text produced by the expert chain, with per-invocation provenance."""

    text: str
    provenance: list[ProvenanceEntry] = field(default_factory=list)
    verified: bool = False
    source_image: ImageRecord | None = None


# ---------------------------------------------------------------------------
# Public operations


def describe_image(
    image: ImageRecord,
    prior: Description | str,
    backend: BackendSpec,
    prompt: str | None = None,
    stage_index: int = 0,
    step_index: int = 0,
) -> Description:
    """One expert invocation conditioned on the image and the prior text.

    ``prompt`` is the fully rendered instruction for remote experts; stub
    experts act on the prior text directly.
    """
    backend.validate()
    if backend.kind != "expert":
        raise InvalidInput(f"describe_image needs an expert backend, got {backend.kind}")
    prior_text = prior.text if isinstance(prior, Description) else prior
    if backend.transport == "stub":
        text = _stub_expert_reply(image, prior_text, backend)
    else:
        text = _remote_describe(image, prior_text, backend, prompt)
    prov = list(prior.provenance) if isinstance(prior, Description) else []
    prov.append(ProvenanceEntry(stage_index, step_index, backend.model_name))
    return Description(text=text, provenance=prov, verified=False, source_image=image)


def embed_text(text: str, backend: BackendSpec) -> EmbeddingVector:
    backend.validate()
    if backend.kind != "embedder":
        raise InvalidInput(f"embed_text needs an embedder backend, got {backend.kind}")
    if not text:
        raise InvalidInput("cannot embed empty text")
    if backend.transport == "stub":
        return stub_text_embedding(text, backend.stub_seed, backend.dimension)
    return _remote_embed(text, backend)


def embed_image(image: ImageRecord, backend: BackendSpec) -> EmbeddingVector:
    backend.validate()
    if backend.kind != "embedder":
        raise InvalidInput(f"embed_image needs an embedder backend, got {backend.kind}")
    if backend.transport == "stub":
        if image.stub_tags:
            return stub_text_embedding(" ".join(image.stub_tags), backend.stub_seed,
                                       backend.dimension)
        if Path(image.image_path).is_file():
            # No tags declared: fall back to a stable token for the file.
            token = hashlib.sha256(image.image_path.encode("utf-8")).hexdigest()
            return stub_text_embedding(token, backend.stub_seed, backend.dimension)
        raise CorpusError(f"image not resolvable: {image.image_path}")
    data_url = _load_image_data_url(image)
    return _remote_embed(data_url, backend)


def complete(prompt: str, backend: BackendSpec) -> str:
    """Raw text completion from the extractor/answerer backend."""
    backend.validate()
    if backend.kind != "extractor":
        raise InvalidInput(f"complete needs an extractor backend, got {backend.kind}")
    if backend.transport == "stub":
        return _stub_complete(prompt, backend)
    return _remote_complete(prompt, backend)


# ---------------------------------------------------------------------------
# Stub transport

_WORD_RE = re.compile(r"[a-z0-9]+")


def stub_text_embedding(text: str, seed: int, dimension: int) -> EmbeddingVector:
    """Seeded hash of whitespace tokens projected onto the unit sphere."""
    vec = [0.0] * dimension
    for token in text.split():
        digest = hashlib.sha256(f"{seed}|{token}".encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:4], "big") % dimension
        sign = 1.0 if digest[4] & 1 else -1.0
        vec[bucket] += sign
    norm = sum(v * v for v in vec) ** 0.5
    if norm == 0.0:
        raise DegenerateEmbedding(f"stub embedding collapsed to zero for {text!r}")
    return EmbeddingVector(values=tuple(v / norm for v in vec))


def _stub_expert_reply(image: ImageRecord, prior: str, backend: BackendSpec) -> str:
    if not image.is_resolvable():
        raise CorpusError(f"image not resolvable: {image.image_path}")
    name = backend.model_name
    if name.startswith("fixed:"):
        return name[len("fixed:"):]
    if name.startswith("echo-append:"):
        marker = name[len("echo-append:"):]
        return f"{prior} {marker}".strip() if prior else marker
    if name == "identity":
        return prior
    if name == "describe-tags":
        sentence = (" ".join(image.stub_tags) + ".") if image.stub_tags else "unknown."
        return f"{prior} {sentence}".strip() if prior else sentence
    if name == "fail":
        raise RetriableBackendError("stub expert configured to fail")
    raise InvalidInput(f"unknown stub expert behavior {backend.model_name!r}")


def prompt_key(prompt: str) -> str:
    """Key used by canned stub reply tables."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]


def _stub_complete(prompt: str, backend: BackendSpec) -> str:
    name = backend.model_name
    if name.startswith("fixed:"):
        return name[len("fixed:"):]
    if name == "first-line":
        return prompt.splitlines()[0] if prompt else ""
    if name == "canned":
        key = prompt_key(prompt)
        if key in backend.stub_replies:
            return backend.stub_replies[key]
        return backend.stub_replies.get("default", "")
    if name == "synth-kg":
        return _synthesize_extraction(prompt)
    if name == "fail":
        raise RetriableBackendError("stub extractor configured to fail")
    raise InvalidInput(f"unknown stub extractor behavior {backend.model_name!r}")


def _synthesize_extraction(prompt: str) -> str:
    """Deterministically invent a small record stream from the chunk text
    embedded in an extraction prompt, for end-to-end stub runs."""
    from .extract import CHUNK_BEGIN, CHUNK_END  # local import to avoid a cycle

    text = prompt
    if CHUNK_BEGIN in prompt and CHUNK_END in prompt:
        text = prompt.split(CHUNK_BEGIN, 1)[1].split(CHUNK_END, 1)[0]
    words: list[str] = []
    for tok in _WORD_RE.findall(text.casefold()):
        if len(tok) > 2 and tok not in words:
            words.append(tok)
        if len(words) >= 6:
            break
    records = [f'("entity"<|>{w}<|>thing<|>mentioned as {w})' for w in words]
    for a, b in zip(words, words[1:]):
        records.append(f'("relationship"<|>{a}<|>{b}<|>near<|>{a},{b}<|>1.0)')
    records.append("<|COMPLETE|>")
    return "##".join(records)


# ---------------------------------------------------------------------------
# Remote transport (OpenAI-compatible)


def backoff_delays(max_retries: int, base: float = BACKOFF_BASE_SECONDS) -> list[float]:
    """Delay before each retry: base, 2x base, 4x base, ..."""
    return [base * (2 ** i) for i in range(max_retries)]


def _with_retries(fn: Callable[[], str | list[float]], backend: BackendSpec):
    delays = backoff_delays(backend.max_retries)
    last: Exception | None = None
    for attempt in range(backend.max_retries + 1):
        try:
            return fn()
        except (httpx.TransportError, RetriableBackendError) as exc:
            last = exc
            if attempt < backend.max_retries:
                delay = delays[attempt]
                if not backend.deterministic:
                    delay *= random.random()  # full jitter
                _sleep(delay)
    raise RetriableBackendError(
        f"backend {backend.model_name!r} failed after {backend.max_retries} retries: {last}"
    ) from last


def _client(backend: BackendSpec) -> httpx.Client:
    headers = {}
    if backend.api_key_env:
        key = os.environ.get(backend.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
    return httpx.Client(
        base_url=backend.endpoint_url.rstrip("/"),
        timeout=backend.timeout_ms / 1000.0,
        headers=headers,
        transport=_http_transport,
    )


def _post(backend: BackendSpec, path: str, payload: dict) -> dict:
    with _client(backend) as client:
        resp = client.post(path, json=payload)
    if resp.status_code == 429 or resp.status_code >= 500:
        raise RetriableBackendError(f"HTTP {resp.status_code} from {path}")
    if resp.status_code != 200:
        raise ProtocolError(f"HTTP {resp.status_code} from {path}: {resp.text[:200]}")
    try:
        body = resp.json()
    except (json.JSONDecodeError, ValueError) as exc:
        raise ProtocolError(f"non-JSON body from {path}") from exc
    if not isinstance(body, dict):
        raise ProtocolError(f"unexpected body shape from {path}")
    return body


def _load_image_data_url(image: ImageRecord) -> str:
    path = Path(image.image_path)
    if not path.is_file():
        raise CorpusError(f"image not resolvable: {image.image_path}")
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    payload = base64.b64encode(path.read_bytes()).decode("ascii")
    return f"data:{mime};base64,{payload}"


def _chat_text(body: dict) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError("chat completion body missing choices[0].message.content") from exc
    if not isinstance(content, str):
        raise ProtocolError("chat completion content is not a string")
    return content


def _remote_describe(image: ImageRecord, prior: str, backend: BackendSpec,
                     prompt: str | None) -> str:
    data_url = _load_image_data_url(image)
    instruction = prompt if prompt is not None else (
        f"Image description so far: {prior}. Refine and extend it with details you observe."
    )
    payload = {
        "model": backend.model_name,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": instruction},
                    {"type": "image_url", "image_url": {"url": data_url}},
                ],
            }
        ],
    }

    def call() -> str:
        return _chat_text(_post(backend, "/chat/completions", payload))

    return _with_retries(call, backend)


def _remote_embed(text: str, backend: BackendSpec) -> EmbeddingVector:
    payload = {"model": backend.model_name, "input": text}

    def call() -> list[float]:
        body = _post(backend, "/embeddings", payload)
        try:
            values = body["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError("embeddings body missing data[0].embedding") from exc
        if not isinstance(values, list) or not all(
            isinstance(v, (int, float)) for v in values
        ):
            raise ProtocolError("embedding is not a list of numbers")
        return [float(v) for v in values]

    values = _with_retries(call, backend)
    return EmbeddingVector(values=tuple(values))


def _remote_complete(prompt: str, backend: BackendSpec) -> str:
    payload = {
        "model": backend.model_name,
        "messages": [{"role": "user", "content": prompt}],
    }

    def call() -> str:
        return _chat_text(_post(backend, "/chat/completions", payload))

    return _with_retries(call, backend)
