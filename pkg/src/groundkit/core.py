"""Core data types and geometry shared by every pipeline stage.

Boxes live in normalized corner coordinates (x_min, y_min, x_max, y_max),
all in [0, 1]. Prompts carry explicit token spans so phrase slices can
always be mapped back to the original text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Literal

__all__ = [
    "GroundkitError",
    "ValidationError",
    "AlignmentError",
    "Box",
    "Token",
    "TokenizedPrompt",
    "Proposal",
    "Region",
    "AnnotationRecord",
    "iou",
    "containment",
    "tokenize",
    "box_from_center_format",
    "box_to_center_format",
]

_BOUND_EPS = 1e-9


class GroundkitError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(GroundkitError):
    """A value violates a type invariant."""


class AlignmentError(GroundkitError):
    """A proposal's token scores do not line up with its prompt."""


@dataclass(frozen=True, order=True)
class Box:
    """Axis-aligned box in normalized corner format.

    Coordinates must be inside [0, 1] and the box must have positive area;
    degenerate boxes signal upstream corruption and are rejected outright.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"box coordinate {name}={v} outside [0, 1]")
        if not self.x_min < self.x_max:
            raise ValidationError(f"zero-area box: x_min={self.x_min} >= x_max={self.x_max}")
        if not self.y_min < self.y_max:
            raise ValidationError(f"zero-area box: y_min={self.y_min} >= y_max={self.y_max}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def _intersection_area(a: Box, b: Box) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    inter = _intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def containment(inner: Box, outer: Box) -> float:
    """Fraction of `inner`'s area that lies within `outer`."""
    return _intersection_area(inner, outer) / inner.area


def box_from_center_format(cx: float, cy: float, w: float, h: float) -> Box:
    """Convert a (center_x, center_y, width, height) box to corner format.

    Raises ValidationError when the resulting corners leave [0, 1] or the
    size is not positive.
    """
    if w <= 0 or h <= 0:
        raise ValidationError(f"non-positive box size: w={w}, h={h}")
    corners = [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
    # Snap float noise (e.g. 0.3 - 0.6/2) onto the exact bounds; anything
    # further out than the epsilon is a genuine out-of-range detection.
    snapped = []
    for v in corners:
        if -_BOUND_EPS <= v < 0.0:
            v = 0.0
        elif 1.0 < v <= 1.0 + _BOUND_EPS:
            v = 1.0
        if not 0.0 <= v <= 1.0:
            raise ValidationError(
                f"center-format box (cx={cx}, cy={cy}, w={w}, h={h}) "
                f"leaves the unit square at {v}"
            )
        snapped.append(v)
    return Box(*snapped)


def box_to_center_format(box: Box) -> tuple[float, float, float, float]:
    """Inverse of box_from_center_format."""
    return (
        (box.x_min + box.x_max) / 2.0,
        (box.y_min + box.y_max) / 2.0,
        box.x_max - box.x_min,
        box.y_max - box.y_min,
    )


TokenKind = Literal["word", "punctuation"]

# A word is a maximal run of letters, digits, or apostrophes; any other
# non-space character is a single-character punctuation token.
_TOKEN_RE = re.compile(r"(?:[^\W_]|['’])+|\S")
_WORD_RE = re.compile(r"(?:[^\W_]|['’])+\Z")


@dataclass(frozen=True)
class Token:
    surface: str
    char_start: int
    char_end: int
    kind: TokenKind

    def __post_init__(self):
        if self.char_start >= self.char_end:
            raise ValidationError(f"token span empty: [{self.char_start}, {self.char_end})")
        if self.kind not in ("word", "punctuation"):
            raise ValidationError(f"unknown token kind {self.kind!r}")


@dataclass(frozen=True)
class TokenizedPrompt:
    """Prompt text plus its token spans; the coordinate system for phrases."""

    text: str
    tokens: tuple[Token, ...]

    def __post_init__(self):
        prev_end = -1
        for tok in self.tokens:
            if tok.char_start < prev_end:
                raise ValidationError(f"overlapping tokens at char {tok.char_start}")
            if self.text[tok.char_start : tok.char_end] != tok.surface:
                raise ValidationError(
                    f"token surface {tok.surface!r} does not match text span "
                    f"[{tok.char_start}, {tok.char_end})"
                )
            prev_end = tok.char_end

    def __len__(self) -> int:
        return len(self.tokens)

    def slice(self, token_start: int, token_end: int) -> str:
        """Original text spanned by tokens [token_start, token_end)."""
        if not 0 <= token_start < token_end <= len(self.tokens):
            raise ValidationError(f"token range [{token_start}, {token_end}) out of bounds")
        return self.text[self.tokens[token_start].char_start : self.tokens[token_end - 1].char_end]


def tokenize(text: str) -> TokenizedPrompt:
    """Split text into word and punctuation tokens, preserving spans.

    Word tokens are maximal runs of letters/digits/apostrophes; every other
    non-whitespace character becomes a single-character punctuation token.
    No lowercasing is applied so spans always map back to the input.
    """
    if not text or not text.strip():
        raise ValidationError("prompt text is empty or whitespace-only")
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        kind: TokenKind = "word" if _WORD_RE.match(m.group()) else "punctuation"
        tokens.append(Token(m.group(), m.start(), m.end(), kind))
    return TokenizedPrompt(text=text, tokens=tuple(tokens))


@dataclass(frozen=True)
class Proposal:
    """One upstream detection: a box plus per-token confidences over the prompt."""

    box: Box
    token_scores: tuple[float, ...]
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for s in self.token_scores:
            if not 0.0 <= s <= 1.0:
                raise ValidationError(f"token score {s} outside [0, 1]")

    def check_alignment(self, prompt: TokenizedPrompt, context: str = "") -> None:
        """Raise AlignmentError unless the score vector matches the prompt."""
        if len(self.token_scores) != len(prompt.tokens):
            where = f" ({context})" if context else ""
            raise AlignmentError(
                f"proposal has {len(self.token_scores)} token scores but the "
                f"prompt has {len(prompt.tokens)} tokens{where}"
            )


@dataclass(frozen=True)
class Region:
    """A box-phrase annotation; confidence is absent on manually authored truth."""

    box: Box
    phrase: str
    confidence: float | None = None
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.phrase.strip():
            raise ValidationError("region phrase is empty")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"region confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class AnnotationRecord:
    """An image's caption and regions, versioned for optimistic editing."""

    image_id: str
    caption: str
    regions: tuple[Region, ...]
    version: int = 0
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id is empty")
        if self.version < 0:
            raise ValidationError(f"version {self.version} is negative")
