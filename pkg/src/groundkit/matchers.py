"""Phrase normalization, exact/fuzzy phrase matching, and class prompts.

Normalization strips articles and quantity descriptors so that phrases
referring to the same object ("a child" vs "child") compare equal. Fuzzy
matching accepts phrases whose normalized token sets overlap past a
threshold, biased towards containment so "child" matches "small child".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

from .core import TokenizedPrompt, ValidationError, tokenize

__all__ = [
    "ARTICLES",
    "QUANTITY_WORDS",
    "MatchPolicy",
    "ClassSpan",
    "normalize_phrase",
    "normalization_name",
    "phrases_match",
    "build_class_prompt",
]

ARTICLES = frozenset({"a", "an", "the"})

# Closed set of quantity descriptors; digit-only tokens are also treated as
# quantities. No numeral parsing beyond that.
QUANTITY_WORDS = frozenset(
    {
        "one",
        "two",
        "three",
        "four",
        "five",
        "six",
        "seven",
        "eight",
        "nine",
        "ten",
        "several",
        "many",
        "few",
    }
)


@dataclass(frozen=True)
class MatchPolicy:
    """How predicted phrases are compared against ground-truth phrases."""

    mode: Literal["exact", "fuzzy"] = "exact"
    fuzzy_threshold: float = 0.5
    strip_articles: bool = True
    strip_quantities: bool = True

    def __post_init__(self):
        if self.mode not in ("exact", "fuzzy"):
            raise ValidationError(f"unknown match mode {self.mode!r}")
        if not 0.0 < self.fuzzy_threshold <= 1.0:
            raise ValidationError(f"fuzzy_threshold {self.fuzzy_threshold} outside (0, 1]")


def _is_quantity(token: str, quantity_words: frozenset[str]) -> bool:
    return token in quantity_words or token.isdigit()


def normalize_phrase(
    phrase: str,
    policy: MatchPolicy = MatchPolicy(),
    *,
    articles: frozenset[str] | None = None,
    quantity_words: frozenset[str] | None = None,
) -> str:
    """Lowercase, collapse whitespace, and drop article/quantity tokens.

    The final remaining token is never removed, so a phrase never
    normalizes to the empty string. Idempotent.
    """
    if not phrase.strip():
        raise ValidationError("cannot normalize an empty phrase")
    articles = ARTICLES if articles is None else articles
    quantity_words = QUANTITY_WORDS if quantity_words is None else quantity_words
    tokens = phrase.lower().split()
    kept = []
    for tok in tokens:
        if policy.strip_articles and tok in articles:
            continue
        if policy.strip_quantities and _is_quantity(tok, quantity_words):
            continue
        kept.append(tok)
    if not kept:
        kept = [tokens[-1]]
    return " ".join(kept)


def normalization_name(policy: MatchPolicy = MatchPolicy()) -> str:
    """Short label naming the normalization variant, for report headers."""
    parts = ["lowercase", "collapse-whitespace"]
    if policy.strip_articles:
        parts.append("strip-articles")
    if policy.strip_quantities:
        parts.append("strip-quantities")
    return "+".join(parts)


def phrases_match(a: str, b: str, policy: MatchPolicy = MatchPolicy()) -> bool:
    """True when two phrases refer to the same thing under the policy.

    Exact mode compares normalized strings. Fuzzy mode compares normalized
    token sets with overlap |A∩B| / min(|A|, |B|) against the threshold, so
    an exact match always implies a fuzzy match.
    """
    na = normalize_phrase(a, policy)
    nb = normalize_phrase(b, policy)
    if policy.mode == "exact":
        return na == nb
    set_a = set(na.split())
    set_b = set(nb.split())
    overlap = len(set_a & set_b) / min(len(set_a), len(set_b))
    return overlap >= policy.fuzzy_threshold


@dataclass(frozen=True)
class ClassSpan:
    """Token range of one class name inside a class prompt."""

    name: str
    token_start: int
    token_end: int


def build_class_prompt(classes: Sequence[str] | Iterable[str]) -> tuple[TokenizedPrompt, list[ClassSpan]]:
    """Join class names into a dot-separated detection prompt.

    Returns the tokenized prompt ("angel. mary.") plus the token span of
    each class, in input order, so per-class scores can be read back out.
    """
    classes = [name.strip() for name in classes]
    if not classes:
        raise ValidationError("class list is empty")
    seen = set()
    for name in classes:
        if not name:
            raise ValidationError("class name is empty")
        if name in seen:
            raise ValidationError(f"duplicate class name {name!r}")
        seen.add(name)

    text = ". ".join(classes) + "."
    prompt = tokenize(text)

    spans = []
    cursor = 0
    token_idx = 0
    for name in classes:
        start_char = cursor
        end_char = cursor + len(name)
        start_tok = token_idx
        while token_idx < len(prompt.tokens) and prompt.tokens[token_idx].char_end <= end_char:
            token_idx += 1
        spans.append(ClassSpan(name=name, token_start=start_tok, token_end=token_idx))
        token_idx += 1  # skip the separator dot
        cursor = end_char + 2  # ". "
    return prompt, spans
