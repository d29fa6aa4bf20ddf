"""Chat-completion client for remote generation and caption summarization, plus an offline summarizer."""

from __future__ import annotations

import logging
import os
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import requests

from .datagen import CaptionedPair, GenerationQuery
from .errors import ParameterError, ParseError, ProtocolError, TransportError, TSLMError
from .textrep import phase_tag

log = logging.getLogger(__name__)

ENDPOINT_ENV = "TSLM_LLM_ENDPOINT"
MODEL_ENV = "TSLM_LLM_MODEL"
TOKEN_ENV = "TSLM_LLM_TOKEN"

SUMMARY_OPENING = "You are given these captions that describe multiple characteristics of a time series"
SUMMARY_CLOSING = "Please summarize these captions by highlighting the important aspects in a single sentence"

GENERATION_INSTRUCTION = (
    "Each example below is a time series written as values between 0 and 100, split into "
    "<start>, <middle> and <end> thirds, followed by a one-line caption of at most 9 words. "
    "Write {s} new examples in exactly the same format, each with a different series."
)


@dataclass
class ChatRequest:
    endpoint: str
    model: str
    messages: list[dict] = field(default_factory=list)
    temperature: float = 0.7
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5

    def __post_init__(self):
        if self.temperature < 0:
            raise ParameterError("temperature must be >= 0")
        if self.retries < 0:
            raise ParameterError("retries must be >= 0")

    def payload(self) -> dict:
        return {"model": self.model, "messages": self.messages, "temperature": self.temperature}


def chat_complete(req: ChatRequest, session=None, token: str | None = None) -> str:
    """POST the request, retrying transport failures and 5xx/429 replies with exponential backoff."""
    http = session or requests
    headers = {"Content-Type": "application/json"}
    token = token if token is not None else os.environ.get(TOKEN_ENV)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    last = None
    for attempt in range(req.retries + 1):
        if attempt:
            time.sleep(req.backoff * 2 ** (attempt - 1))
        try:
            resp = http.post(req.endpoint, json=req.payload(), headers=headers, timeout=req.timeout)
        except requests.RequestException as exc:
            last = f"{type(exc).__name__}: {exc}"
            log.warning("chat request attempt %d failed: %s", attempt + 1, last)
            continue
        if resp.status_code >= 500 or resp.status_code == 429:
            last = f"HTTP {resp.status_code}"
            log.warning("chat request attempt %d got %s", attempt + 1, last)
            continue
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {req.endpoint}")
        try:
            body = resp.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat response: {exc!r}") from exc
        if not isinstance(content, str):
            raise ProtocolError("message content is not a string")
        return content
    raise TransportError(f"chat request failed after {req.retries + 1} attempts ({last})")


_BLOCK = re.compile(r"<start>.*?</end>", re.S)
_VALUE = re.compile(r"^-?\d+(\.\d+)?$")


def _parse_block(block: str) -> list[float]:
    values, inside = [], False
    for tok in block.replace(",", " ").split():
        if tok in ("<start>", "<middle>", "<end>"):
            inside = True
        elif tok in ("</start>", "</middle>", "</end>"):
            inside = False
        elif inside:
            if not _VALUE.match(tok):
                raise ParseError(f"non-numeric value {tok!r}")
            values.append(float(tok))
        else:
            raise ParseError(f"stray token {tok!r} between tags")
    return values


def _caption_after(text: str) -> str:
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        line = re.sub(r"^(caption\s*:\s*|[-*]\s+|\d+[.)]\s+)", "", line, flags=re.I).strip()
        return line.strip('"')
    return ""


def parse_generated_pairs(llm_text: str) -> list[CaptionedPair]:
    """Tagged ``<start> ... </end>`` blocks, each followed by its caption line."""
    pairs = []
    matches = list(_BLOCK.finditer(llm_text))
    for i, m in enumerate(matches):
        tail_end = matches[i + 1].start() if i + 1 < len(matches) else len(llm_text)
        caption = _caption_after(llm_text[m.end() : tail_end])
        try:
            series = _parse_block(m.group(0))
            pairs.append(CaptionedPair(tuple(series), caption, "generated"))
        except (ParseError, ParameterError) as exc:
            log.info("skipping generated block %d: %s", i, exc)
    if not pairs:
        raise ParseError("no valid tagged series/caption pairs in the reply")
    return pairs


def format_demonstration(pair: CaptionedPair) -> str:
    return f"{phase_tag(pair.series)}\nCaption: {pair.caption}"


def generation_messages(query: GenerationQuery) -> list[dict]:
    demos = "\n\n".join(format_demonstration(p) for p in query.demonstrations)
    prompt = GENERATION_INSTRUCTION.format(s=query.samples_per_query) + "\n\n" + demos + "\n\n"
    return [{"role": "user", "content": prompt}]


def summary_prompt(captions: Sequence[str]) -> str:
    body = "\n".join(f"- {c}" for c in captions)
    return f"{SUMMARY_OPENING}:\n{body}\n{SUMMARY_CLOSING}."


def fallback_summary(captions: Sequence[str]) -> str:
    """Distinct captions ordered by frequency (ties: first appearance), joined with "and"."""
    if not captions:
        raise ParameterError("need at least one caption")
    clauses = [" ".join(c.split()).rstrip(".").strip() for c in captions]
    clauses = [c for c in clauses if c]
    if not clauses:
        raise ParameterError("all captions are empty")
    counts = Counter(clauses)
    first = {c: i for i, c in reversed(list(enumerate(clauses)))}
    ordered = sorted(counts, key=lambda c: (-counts[c], first[c]))
    return " and ".join(ordered)


@dataclass
class LLMClient:
    endpoint: str
    model: str
    timeout: float = 30.0
    retries: int = 3
    generation_temperature: float = 0.7
    summary_temperature: float = 0.3
    session: object = None

    @classmethod
    def from_env(cls, endpoint: str | None = None, model: str | None = None, **kw) -> "LLMClient":
        endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        model = model or os.environ.get(MODEL_ENV)
        if not endpoint or not model:
            raise ParameterError(f"set {ENDPOINT_ENV} and {MODEL_ENV} (or pass endpoint/model)")
        return cls(endpoint, model, **kw)

    def complete(self, messages: list[dict], temperature: float) -> str:
        req = ChatRequest(self.endpoint, self.model, messages, temperature, self.timeout, self.retries)
        return chat_complete(req, self.session)

    def generation_backend(self):
        """Callable ``(query, index) -> pairs`` for :func:`tslm.datagen.generate_dataset`."""

        def backend(query: GenerationQuery, index: int) -> list[CaptionedPair]:
            reply = self.complete(generation_messages(query), self.generation_temperature)
            pairs = parse_generated_pairs(reply)
            return pairs[: query.samples_per_query]

        return backend

    def summarize(self, captions: Sequence[str]) -> str:
        msgs = [{"role": "user", "content": summary_prompt(captions)}]
        return self.complete(msgs, self.summary_temperature).strip()


def summarize_captions(captions: Sequence[str], backend: str = "fallback", client: LLMClient | None = None) -> str:
    """Merge K captions into one; the remote path falls back locally on any failure."""
    if not captions:
        raise ParameterError("need at least one caption")
    if backend == "fallback":
        return fallback_summary(captions)
    if backend != "remote":
        raise ParameterError(f"unknown summarization backend {backend!r}")
    try:
        client = client or LLMClient.from_env()
        return client.summarize(captions)
    except TSLMError as exc:
        log.warning("remote summarization failed (%s); using the fallback", exc)
        return fallback_summary(captions)


__all__ = [
    "ChatRequest",
    "LLMClient",
    "chat_complete",
    "fallback_summary",
    "generation_messages",
    "parse_generated_pairs",
    "summarize_captions",
    "summary_prompt",
]
