"""Per-interaction attribute extraction through a chat-completion service.

A live extractor renders one prompt per interaction, POSTs it to an
OpenAI-compatible ``/v1/chat/completions`` endpoint and parses a JSON array of
attribute strings out of the reply. :func:`mock_extract` is a deterministic
offline stand-in.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attributes import RawAttributeRecord, normalize_attribute
from .exceptions import ConfigError, ResponseParseError, TransportError

logger = logging.getLogger(__name__)

API_KEY_ENV = "TAGCF_LLM_API_KEY"
MAX_ATTRIBUTES = 16

OUTPUT_SCHEMA = (
    "Answer with a JSON array of short attribute strings (1-4 words each), for example "
    '["teaching", "whiteboard use"]. Output nothing except the array.'
)


class TemplateError(ConfigError):
    pass


@dataclass
class PromptTemplate:
    system_role: str
    scenario: str
    topic_guidance: list[str]
    expert_examples: list[tuple[str, str]]
    output_schema: str = OUTPUT_SCHEMA

    def validate(self):
        missing = [name for name in ("system_role", "scenario", "output_schema")
                   if not str(getattr(self, name)).strip()]
        if not self.topic_guidance:
            missing.append("topic_guidance")
        if not self.expert_examples:
            missing.append("expert_examples")
        if missing:
            raise TemplateError(f"prompt template is missing: {', '.join(missing)}")


@dataclass
class ExtractionRequest:
    user: int
    item: int
    review: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.review.strip() and not self.metadata:
            raise ValueError("an extraction request needs a review or item metadata")


@dataclass
class ChatClientConfig:
    base_url: str
    model_name: str
    max_concurrent_requests: int = 8
    max_attempts: int = 3
    backoff_base: float = 1.0
    timeout: float = 60.0
    temperature: float = 0.0
    max_attributes: int = MAX_ATTRIBUTES

    def __post_init__(self):
        if self.max_concurrent_requests < 1:
            raise ConfigError("max_concurrent_requests must be >= 1")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")


SECTION_HEADERS = ("## Task", "## Attribute topics", "## Examples", "## Interaction")


def default_template(domain: str = "office products") -> PromptTemplate:
    return PromptTemplate(
        system_role="You are an analyst who explains why people interact with products.",
        scenario=(f"Each input is one user's review of one {domain} item together with the "
                  "item's metadata. Infer the latent reasons behind the interaction."),
        topic_guidance=["usage scenario or intent (e.g. teaching, home office)",
                        "functional need (e.g. durability, portability)",
                        "user role or audience (e.g. student, small business)"],
        expert_examples=[
            ("Review: Great easel for my classroom, markers wipe clean.\n"
             "Metadata: category=Whiteboards",
             '["teaching", "classroom use", "easy cleaning"]'),
        ],
    )


def build_prompt(tmpl: PromptTemplate, req: ExtractionRequest) -> list[dict]:
    """Chat messages for one interaction: role + scenario as system, the rest as user."""
    tmpl.validate()
    system = f"{tmpl.system_role.strip()}\n\n{SECTION_HEADERS[0]}\n{tmpl.scenario.strip()}"
    parts = [SECTION_HEADERS[1]]
    parts += [f"- {t}" for t in tmpl.topic_guidance]
    parts.append("")
    parts.append(SECTION_HEADERS[2])
    for k, (inp, out) in enumerate(tmpl.expert_examples, start=1):
        parts.append(f"Example {k} input:\n{inp}\nExample {k} output:\n{out}")
    parts.append("")
    parts.append(SECTION_HEADERS[3])
    if req.review.strip():
        parts.append(f"Review: {req.review.strip()}")
    if req.metadata:
        meta = "; ".join(f"{k}={req.metadata[k]}" for k in sorted(req.metadata))
        parts.append(f"Metadata: {meta}")
    parts.append("")
    parts.append(tmpl.output_schema.strip())
    return [{"role": "system", "content": system},
            {"role": "user", "content": "\n".join(parts)}]


def render_prompt(tmpl, req) -> str:
    return "\n\n".join(m["content"] for m in build_prompt(tmpl, req))


def _balanced_arrays(text):
    """Yield the balanced ``[...]`` span opening at each ``[``, honouring JSON string quoting.

    Every opening bracket is tried so a stray bracket or quote in surrounding
    prose cannot hide a later array.
    """
    for start in (m.start() for m in re.finditer(r"\[", text)):
        depth = 0
        in_str = False
        escape = False
        for pos in range(start, len(text)):
            ch = text[pos]
            if in_str:
                if escape:
                    escape = False
                elif ch == "\\":
                    escape = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
                if depth == 0:
                    yield text[start:pos + 1]
                    break


def parse_attribute_response(text: str, max_attributes: int = MAX_ATTRIBUTES) -> list[str]:
    """Extract the first JSON array of strings from a model reply.

    Surrounding prose and code fences are tolerated. Entries are trimmed and
    whitespace-collapsed; empty entries and duplicates are dropped and the
    list is capped at ``max_attributes``.
    """
    for candidate in _balanced_arrays(text):
        try:
            arr = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(arr, list) and all(isinstance(a, str) for a in arr):
            out = []
            seen = set()
            for a in arr:
                a = re.sub(r"\s+", " ", a).strip()
                key = normalize_attribute(a)
                if a and key not in seen:
                    seen.add(key)
                    out.append(a)
            return out[:max_attributes]
    raise ResponseParseError("no JSON array of strings found in model output", text)


class ChatClient:
    """Minimal chat-completion client with retries and a concurrency cap."""

    def __init__(self, cfg: ChatClientConfig, api_key: str | None = None, transport=None,
                 sleep=time.sleep, log_path=None):
        import httpx

        self.cfg = cfg
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise ConfigError(f"set {API_KEY_ENV} or pass api_key to use the live extractor")
        self._http = httpx.Client(timeout=cfg.timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(cfg.max_concurrent_requests)
        self._sleep = sleep
        self._lock = threading.Lock()
        self._log = open(log_path, "a", encoding="utf-8") if log_path else None
        self.in_flight = 0
        self.max_in_flight = 0
        self.request_count = 0
        self.delays: list[float] = []

    def close(self):
        self._http.close()
        if self._log:
            self._log.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _audit(self, entry):
        if self._log is None:
            return
        with self._lock:
            self._log.write(json.dumps(entry, ensure_ascii=False) + "\n")
            self._log.flush()

    def complete(self, messages) -> str:
        import httpx

        body = {"model": self.cfg.model_name, "messages": messages,
                "temperature": self.cfg.temperature}
        url = self.cfg.base_url.rstrip("/") + "/v1/chat/completions"
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last = None
        for attempt in range(1, self.cfg.max_attempts + 1):
            if attempt > 1:
                delay = self.cfg.backoff_base * 2 ** (attempt - 2)
                with self._lock:
                    self.delays.append(delay)
                self._sleep(delay)
            with self._slots:
                with self._lock:
                    self.in_flight += 1
                    self.max_in_flight = max(self.max_in_flight, self.in_flight)
                    self.request_count += 1
                try:
                    resp = self._http.post(url, json=body, headers=headers)
                    status = resp.status_code
                    text = resp.text
                except httpx.HTTPError as exc:
                    status, text = None, str(exc)
                finally:
                    with self._lock:
                        self.in_flight -= 1
            self._audit({"time": time.time(), "attempt": attempt, "request": body,
                         "status": status, "response": text})
            if status == 200:
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError):
                    raise ResponseParseError("malformed chat-completion payload", text) from None
            last = f"HTTP {status}: {text[:200]}" if status is not None else text
            if status is not None and 400 <= status < 500 and status not in (408, 429):
                break
        raise TransportError(f"request failed after {attempt} attempt(s): {last}")


@dataclass
class ExtractionLedger:
    succeeded: int = 0
    skipped: int = 0
    failed: int = 0
    requests: int = 0
    errors: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.succeeded + self.skipped + self.failed

    def summary(self) -> str:
        return (f"extracted {self.succeeded}, skipped {self.skipped} (unparseable), "
                f"failed {self.failed} (transport), requests {self.requests}")


def extract_attributes(client: ChatClient, tmpl: PromptTemplate, req: ExtractionRequest) -> list[str]:
    text = client.complete(build_prompt(tmpl, req))
    return parse_attribute_response(text, client.cfg.max_attributes)


def run_extraction(requests, extractor, max_workers=1):
    """Apply ``extractor(req)`` to every request; failures are skipped, never guessed.

    Returns ``(records, ledger)`` with records in input order.
    """
    requests = list(requests)
    ledger = ExtractionLedger()
    lock = threading.Lock()

    def work(req):
        try:
            attrs = extractor(req)
        except ResponseParseError as exc:
            with lock:
                ledger.skipped += 1
                ledger.errors.append({"user": req.user, "item": req.item, "kind": "parse",
                                      "detail": str(exc), "raw": exc.raw[:500]})
            return None
        except TransportError as exc:
            with lock:
                ledger.failed += 1
                ledger.errors.append({"user": req.user, "item": req.item, "kind": "transport",
                                      "detail": str(exc)})
            return None
        with lock:
            ledger.succeeded += 1
        return RawAttributeRecord(req.user, req.item, attrs)

    if max_workers <= 1:
        results = [work(r) for r in requests]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(work, requests))
    ledger.requests = len(requests)
    return [r for r in results if r is not None and r.attributes], ledger


_SPLIT = re.compile(r"[.;,!?\n]+")
_STOP = {"a", "an", "the", "and", "for", "of", "with", "very", "it", "this", "is", "i", "my",
         "great", "also", "really", "to", "was"}


def mock_extract(req: ExtractionRequest, seed: int = 0, max_keywords: int = 8) -> list[str]:
    """Offline extractor: metadata category plus seeded phrase sampling from the review.

    Review sentences are split on punctuation, stripped of filler words and
    kept if at most four words remain; ``max_keywords`` of them are sampled
    (order preserved) with an RNG seeded by ``(seed, user, item)``.
    """
    out = []
    for key in ("category", "categories"):
        val = req.metadata.get(key)
        if isinstance(val, str):
            val = [val]
        for v in val or ():
            v = normalize_attribute(str(v))
            if v and v not in out:
                out.append(v)
    phrases = []
    for chunk in _SPLIT.split(req.review):
        words = [w for w in normalize_attribute(chunk).split() if w not in _STOP]
        if 0 < len(words) <= 4:
            p = " ".join(words)
            if p not in out and p not in phrases:
                phrases.append(p)
    if len(phrases) > max_keywords:
        rng = np.random.default_rng([seed, max(req.user, 0), max(req.item, 0)])
        keep = np.sort(rng.choice(len(phrases), max_keywords, replace=False))
        phrases = [phrases[k] for k in keep]
    return (out + phrases)[:MAX_ATTRIBUTES]
