"""Backend clients: one handle abstraction over HTTP and in-process models.

Every role is called through a handle exposing ``request(body) -> body``
with wire-shaped dicts on both sides, so in-process stand-ins and HTTP
services are interchangeable. Responses are schema-validated before use.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass, field
from urllib.parse import parse_qsl

import requests

from . import wire
from .errors import BackendMalformed, BackendTimeout, BackendUnavailable
from .wire import ImagePayload, Prediction

RETRY_BASE_SECONDS = 0.1
RETRY_FACTOR = 2.0
DEFAULT_CONCURRENCY = 4

# indirection so tests can observe backoff without stalling real sleeps
_sleep = time.sleep

INPROCESS_PREFIX = "inprocess:"


@dataclass(frozen=True)
class BackendEndpoint:
    """Where one backend role lives and how patiently to call it."""

    role: str
    base_url: str
    timeout_ms: int = 10_000
    retries: int = 2

    def __post_init__(self):
        if self.role not in wire.ROLES:
            raise ValueError(f"unknown backend role: {self.role!r}")
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


class Handle:
    """Minimal backend handle: a role plus a request/response callable."""

    role: str

    def request(self, body: dict) -> dict:
        raise NotImplementedError


class InProcessHandle(Handle):
    """Wraps a pure function taking and returning wire-shaped dicts."""

    def __init__(self, role: str, fn):
        self.role = role
        self._fn = fn

    def request(self, body: dict) -> dict:
        return self._fn(body)


class HttpHandle(Handle):
    """POSTs wire dicts to ``<base_url>/v1/<role>`` with retry + backoff."""

    def __init__(self, endpoint: BackendEndpoint, concurrency: int = DEFAULT_CONCURRENCY):
        self.role = endpoint.role
        self.endpoint = endpoint
        self._local = threading.local()
        self._semaphore = threading.BoundedSemaphore(concurrency)

    def _session(self) -> requests.Session:
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def request(self, body: dict) -> dict:
        url = self.endpoint.base_url.rstrip("/") + wire.ENDPOINT_PATHS[self.role]
        timeout = self.endpoint.timeout_ms / 1000.0
        attempts = self.endpoint.retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                _sleep(RETRY_BASE_SECONDS * RETRY_FACTOR ** (attempt - 1))
            try:
                with self._semaphore:
                    resp = self._session().post(url, json=body, timeout=timeout)
            except requests.Timeout as e:
                last_error = BackendTimeout(f"{self.role} backend timed out at {url}")
                last_error.__cause__ = e
                continue
            except requests.RequestException as e:
                last_error = BackendUnavailable(f"{self.role} backend unreachable at {url}: {e}")
                continue
            if resp.status_code >= 500:
                last_error = BackendUnavailable(
                    f"{self.role} backend error {resp.status_code} at {url}"
                )
                continue
            if resp.status_code != 200:
                raise BackendMalformed(
                    f"{self.role} backend rejected the request ({resp.status_code}): {resp.text[:200]}"
                )
            try:
                return resp.json()
            except ValueError as e:
                raise BackendMalformed(f"{self.role} backend returned non-JSON body") from e
        raise last_error  # type: ignore[misc]


_REGISTRY: dict[str, object] = {}
_REGISTRY_LOCK = threading.Lock()


def register_inprocess(name: str, factory) -> None:
    """Register a factory(options: dict) -> {role: callable} under a name."""
    with _REGISTRY_LOCK:
        _REGISTRY[name] = factory


def resolve_endpoint(endpoint: BackendEndpoint, concurrency: int = DEFAULT_CONCURRENCY) -> Handle:
    """Build the handle for an endpoint; understands inprocess:<name>?opts."""
    if endpoint.base_url.startswith(INPROCESS_PREFIX):
        spec = endpoint.base_url[len(INPROCESS_PREFIX):]
        name, _, query = spec.partition("?")
        options = dict(parse_qsl(query))
        with _REGISTRY_LOCK:
            factory = _REGISTRY.get(name)
        if factory is None:
            raise BackendUnavailable(f"no in-process backend registered as {name!r}")
        functions = factory(options)
        if endpoint.role not in functions:
            raise BackendUnavailable(
                f"in-process backend {name!r} does not serve role {endpoint.role!r}"
            )
        return InProcessHandle(endpoint.role, functions[endpoint.role])
    return HttpHandle(endpoint, concurrency)


def check_health(base_url: str, timeout_s: float = 3.0) -> dict:
    resp = requests.get(base_url.rstrip("/") + "/v1/health", timeout=timeout_s)
    resp.raise_for_status()
    return resp.json()


def _roundtrip(handle: Handle, body: dict) -> dict:
    wire.validate_request(handle.role, body)
    response = handle.request(body)
    if not isinstance(response, dict):
        raise BackendMalformed(f"{handle.role} backend returned {type(response).__name__}")
    wire.validate_response(handle.role, response)
    return response


def call_extract(handle: Handle, prompt: str) -> str:
    return _roundtrip(handle, {"prompt": prompt})["response"]


def call_detect(handle: Handle, image: ImagePayload, encoding: str = wire.PNG_BASE64) -> list[dict]:
    return _roundtrip(handle, {"image": image.to_wire(encoding)})["boxes"]


def call_ground(
    handle: Handle,
    image: ImagePayload,
    text: str,
    encoding: str = wire.PNG_BASE64,
) -> tuple[dict, float | None]:
    body = _roundtrip(handle, {"image": image.to_wire(encoding), "text": text})
    return body["box"], body.get("confidence")


def call_inpaint(
    handle: Handle,
    image: ImagePayload,
    mask: ImagePayload,
    encoding: str = wire.PNG_BASE64,
) -> ImagePayload:
    body = _roundtrip(handle, {"image": image.to_wire(encoding), "mask": mask.to_wire(encoding)})
    return ImagePayload.from_wire(body["image"])


def call_synonym(handle: Handle, text: str) -> tuple[str, list[dict]]:
    body = _roundtrip(handle, {"text": text})
    return body["text"], body["substitutions"]


def call_predict(
    handle: Handle,
    image: ImagePayload,
    hypothesis: str,
    encoding: str = wire.PNG_BASE64,
) -> Prediction:
    body = _roundtrip(handle, {"image": image.to_wire(encoding), "hypothesis": hypothesis})
    return Prediction.from_json(body)


# Substitution lexicon applied to at most one content word per hypothesis;
# nouns take precedence over modifiers so the object word gets swapped.
NOUN_SYNONYMS = {
    "boys": "lads",
    "boy": "lad",
    "girls": "lasses",
    "girl": "lass",
    "man": "gentleman",
    "men": "gentlemen",
    "woman": "lady",
    "women": "ladies",
    "kid": "child",
    "kids": "children",
    "dog": "hound",
    "dogs": "hounds",
}

MODIFIER_SYNONYMS = {
    "big": "large",
    "small": "little",
    "young": "youthful",
    "old": "elderly",
}


def identity_synonym_fn(body: dict) -> dict:
    return {"text": body["text"], "substitutions": []}


def make_lexicon_synonym_fn(
    nouns: dict[str, str] | None = None,
    modifiers: dict[str, str] | None = None,
):
    """Substitute the first noun hit, else the first modifier hit."""
    tiers = (
        NOUN_SYNONYMS if nouns is None else nouns,
        MODIFIER_SYNONYMS if modifiers is None else modifiers,
    )

    def synonym_fn(body: dict) -> dict:
        words = body["text"].split(" ")
        for table in tiers:
            for i, word in enumerate(words):
                replacement = table.get(word.lower())
                if replacement is None:
                    continue
                if word[:1].isupper():
                    replacement = replacement[:1].upper() + replacement[1:]
                substituted = words[:i] + [replacement] + words[i + 1:]
                return {
                    "text": " ".join(substituted),
                    "substitutions": [{"from": word, "to": replacement}],
                }
        return {"text": body["text"], "substitutions": []}

    return synonym_fn


register_inprocess("identity-synonym", lambda options: {"synonym": identity_synonym_fn})
register_inprocess(
    "lexicon-synonym", lambda options: {"synonym": make_lexicon_synonym_fn()}
)


@dataclass
class GroundingCache:
    """Thread-safe (image hash, text) -> grounding result cache."""

    enabled: bool = True
    _store: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)
    hits: int = 0
    misses: int = 0

    def lookup_or_call(self, handle: Handle, image: ImagePayload, text: str):
        if not self.enabled:
            return call_ground(handle, image, text)
        key = (hashlib.sha256(image.png).hexdigest(), text)
        with self._lock:
            if key in self._store:
                self.hits += 1
                return self._store[key]
        result = call_ground(handle, image, text)
        with self._lock:
            self.misses += 1
            self._store[key] = result
        return result
