import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundkit.core import ValidationError
from groundkit.matchers import (
    ClassSpan,
    MatchPolicy,
    build_class_prompt,
    normalization_name,
    normalize_phrase,
    phrases_match,
)

EXACT = MatchPolicy(mode="exact")
FUZZY = MatchPolicy(mode="fuzzy", fuzzy_threshold=0.5)

phrase_words = st.sampled_from(
    ["a", "an", "the", "two", "women", "boy", "child", "temple", "courtesan", "fan", "7"]
)
phrases = st.lists(phrase_words, min_size=1, max_size=5).map(" ".join)


class TestNormalize:
    def test_strips_article(self):
        assert normalize_phrase("a child") == "child"

    def test_strips_quantity_and_case(self):
        assert normalize_phrase("Two Women") == "women"

    def test_last_token_protected(self):
        assert normalize_phrase("the") == "the"
        assert normalize_phrase("a the") == "the"
        assert normalize_phrase("two") == "two"

    def test_digits_are_quantities(self):
        assert normalize_phrase("3 boys") == "boys"

    def test_collapses_whitespace(self):
        assert normalize_phrase("  small   boy ") == "small boy"

    def test_policy_flags(self):
        keep_all = MatchPolicy(strip_articles=False, strip_quantities=False)
        assert normalize_phrase("Two Women", keep_all) == "two women"
        keep_articles = MatchPolicy(strip_articles=False)
        assert normalize_phrase("the two women", keep_articles) == "the women"

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            normalize_phrase("   ")

    @settings(max_examples=300)
    @given(phrases)
    def test_idempotent(self, phrase):
        once = normalize_phrase(phrase)
        assert normalize_phrase(once) == once


class TestPhrasesMatch:
    def test_exact_after_normalization(self):
        assert phrases_match("child", "a child", EXACT)

    def test_fuzzy_containment(self):
        # overlap 2 / min(2, 3) = 1.0
        assert phrases_match("courtesan katsuragi", "the courtesan katsuragi nagoya", FUZZY)

    def test_fuzzy_disjoint(self):
        assert not phrases_match("boy", "temple", FUZZY)

    def test_exact_mismatch(self):
        assert not phrases_match("small boy", "boy", EXACT)
        assert phrases_match("small boy", "boy", FUZZY)

    @settings(max_examples=300)
    @given(phrases, phrases)
    def test_symmetric(self, a, b):
        assert phrases_match(a, b, EXACT) == phrases_match(b, a, EXACT)
        assert phrases_match(a, b, FUZZY) == phrases_match(b, a, FUZZY)

    @settings(max_examples=300)
    @given(phrases, phrases, st.floats(min_value=0.05, max_value=1.0))
    def test_exact_implies_fuzzy(self, a, b, threshold):
        if phrases_match(a, b, EXACT):
            assert phrases_match(a, b, MatchPolicy(mode="fuzzy", fuzzy_threshold=threshold))

    def test_policy_validation(self):
        with pytest.raises(ValidationError):
            MatchPolicy(mode="approximate")
        with pytest.raises(ValidationError):
            MatchPolicy(fuzzy_threshold=0.0)


class TestClassPrompt:
    def test_two_classes(self):
        prompt, spans = build_class_prompt(["angel", "mary"])
        assert prompt.text == "angel. mary."
        assert [s.name for s in spans] == ["angel", "mary"]

    def test_singleton(self):
        prompt, spans = build_class_prompt(["nudity"])
        assert prompt.text == "nudity."
        assert spans == [ClassSpan(name="nudity", token_start=0, token_end=1)]

    def test_three_classes_three_spans(self):
        prompt, spans = build_class_prompt(["beard", "turban", "capital"])
        assert prompt.text == "beard. turban. capital."
        assert len(spans) == 3

    def test_spans_recover_classes(self):
        classes = ["angel", "child jesus", "crucifixion of jesus", "mary", "nudity", "ruins"]
        prompt, spans = build_class_prompt(classes)
        for name, span in zip(classes, spans):
            assert prompt.slice(span.token_start, span.token_end) == name

    def test_duplicate_rejected(self):
        with pytest.raises(ValidationError) as err:
            build_class_prompt(["mary", "angel", "mary"])
        assert "mary" in str(err.value)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            build_class_prompt([])
        with pytest.raises(ValidationError):
            build_class_prompt(["angel", "  "])


def test_normalization_name_labels_variant():
    assert normalization_name(MatchPolicy()) == (
        "lowercase+collapse-whitespace+strip-articles+strip-quantities"
    )
    assert normalization_name(MatchPolicy(strip_articles=False, strip_quantities=False)) == (
        "lowercase+collapse-whitespace"
    )
