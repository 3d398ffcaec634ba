"""Caption cleaning through a pluggable text-cleaning client.

Artwork metadata routinely mixes scene descriptions with auction-house
boilerplate (condition, size, provenance) that is useless for grounding.
Cleaning is delegated to a client: either a remote chat-completion-style
HTTP service or a deterministic offline mock, so tests never touch the
network. Whatever the client returns is validated; a bad or failed
response falls back to the raw caption with a logged warning.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

from .core import GroundkitError, ValidationError

__all__ = [
    "CleaningTransportError",
    "CaptionCleaner",
    "MockCleaner",
    "HttpCleaner",
    "clean_caption",
    "DEFAULT_BOILERPLATE_PATTERNS",
]

log = logging.getLogger(__name__)

TOKEN_ENV_VAR = "CLEANER_API_TOKEN"

# Sentences matching any of these are dropped by the mock cleaner.
DEFAULT_BOILERPLATE_PATTERNS = (
    r"\bcondition\b",
    r"\bauction\b",
    r"\bprovenance\b",
    r"\b\d+\s*[x×]\s*\d+\s*(?:cm|mm|in|inches)?\b",
)

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


class CleaningTransportError(GroundkitError):
    """The cleaning backend could not be reached; safe to retry."""

    def __init__(self, message: str, attempt: int = 0):
        super().__init__(message)
        self.attempt = attempt


class CaptionCleaner(Protocol):
    def clean(self, text: str) -> str: ...


@dataclass(frozen=True)
class MockCleaner:
    """Offline cleaner: drops whole sentences matching boilerplate patterns."""

    patterns: tuple[str, ...] = DEFAULT_BOILERPLATE_PATTERNS

    def clean(self, text: str) -> str:
        compiled = [re.compile(p, re.IGNORECASE) for p in self.patterns]
        sentences = _SENTENCE_SPLIT.split(text.strip())
        kept = [s for s in sentences if s and not any(c.search(s) for c in compiled)]
        return " ".join(kept)


class HttpCleaner:
    """Chat-completion-style HTTP cleaner.

    The prompt template file must contain a `{caption}` placeholder; the
    auth token is read from the CLEANER_API_TOKEN environment variable.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        prompt_template_path: str | Path,
        timeout: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.prompt_template = Path(prompt_template_path).read_text(encoding="utf-8")
        if "{caption}" not in self.prompt_template:
            raise ValidationError("prompt template has no {caption} placeholder")
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def clean(self, text: str) -> str:
        headers = {}
        token = os.environ.get(TOKEN_ENV_VAR)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": self.prompt_template.format(caption=text)}],
        }
        try:
            response = self._client.post(
                f"{self.base_url}/chat/completions", json=payload, headers=headers
            )
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise CleaningTransportError(str(exc)) from exc

    def close(self) -> None:
        self._client.close()


def clean_caption(raw: str, client: CaptionCleaner, max_attempts: int = 3) -> str:
    """Clean one caption, falling back to the raw text when anything goes wrong.

    The result must be non-empty and no more than 10% longer than the
    input; violations and exhausted transport retries both fall back to
    the raw caption with a warning.
    """
    if not raw.strip():
        raise ValidationError("cannot clean an empty caption")
    cleaned = None
    for attempt in range(1, max_attempts + 1):
        try:
            cleaned = client.clean(raw)
            break
        except CleaningTransportError as exc:
            exc.attempt = attempt
            log.warning("cleaning attempt %d/%d failed: %s", attempt, max_attempts, exc)
    if cleaned is None:
        log.warning("cleaning failed after %d attempts; keeping raw caption", max_attempts)
        return raw
    cleaned = cleaned.strip()
    if not cleaned:
        log.warning("cleaner returned empty output; keeping raw caption")
        return raw
    if len(cleaned) > len(raw) * 1.1:
        log.warning(
            "cleaner output grew the caption (%d -> %d chars); keeping raw caption",
            len(raw),
            len(cleaned),
        )
        return raw
    return cleaned
