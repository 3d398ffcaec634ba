import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundkit.core import (
    AlignmentError,
    AnnotationRecord,
    Box,
    Proposal,
    Region,
    ValidationError,
    box_from_center_format,
    box_to_center_format,
    containment,
    iou,
    tokenize,
)

GRID = 1000


def _axis_mask(lo: float, hi: float) -> np.ndarray:
    centers = (np.arange(GRID) + 0.5) / GRID
    return (centers > lo) & (centers < hi)


def grid_iou(a: Box, b: Box) -> float:
    """Rasterization oracle: count grid-cell centers inside each box."""
    ax, ay = _axis_mask(a.x_min, a.x_max), _axis_mask(a.y_min, a.y_max)
    bx, by = _axis_mask(b.x_min, b.x_max), _axis_mask(b.y_min, b.y_max)
    count_a = int(ax.sum()) * int(ay.sum())
    count_b = int(bx.sum()) * int(by.sum())
    count_inter = int((ax & bx).sum()) * int((ay & by).sum())
    union = count_a + count_b - count_inter
    return count_inter / union if union else 0.0


def grid_containment(inner: Box, outer: Box) -> float:
    ix, iy = _axis_mask(inner.x_min, inner.x_max), _axis_mask(inner.y_min, inner.y_max)
    ox, oy = _axis_mask(outer.x_min, outer.x_max), _axis_mask(outer.y_min, outer.y_max)
    count_inner = int(ix.sum()) * int(iy.sum())
    count_inter = int((ix & ox).sum()) * int((iy & oy).sum())
    return count_inter / count_inner


def random_lattice_box(rng: random.Random, steps: int = 100) -> Box:
    """Box whose corners sit on the 1/steps lattice, so the grid oracle is exact."""
    x0, x1 = sorted(rng.sample(range(steps + 1), 2))
    y0, y1 = sorted(rng.sample(range(steps + 1), 2))
    return Box(x0 / steps, y0 / steps, x1 / steps, y1 / steps)


class TestBox:
    def test_valid(self):
        box = Box(0.1, 0.2, 0.3, 0.4)
        assert box.area == pytest.approx(0.04)

    @pytest.mark.parametrize(
        "coords",
        [
            (0.5, 0.5, 0.5, 0.9),  # zero width
            (0.1, 0.5, 0.4, 0.5),  # zero height
            (0.4, 0.1, 0.2, 0.5),  # inverted x
            (-0.1, 0.1, 0.4, 0.5),  # below range
            (0.1, 0.1, 1.2, 0.5),  # above range
        ],
    )
    def test_rejects_degenerate(self, coords):
        with pytest.raises(ValidationError):
            Box(*coords)


class TestIou:
    def test_identity(self):
        box = Box(0.1, 0.2, 0.5, 0.8)
        assert iou(box, box) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 0.4, 0.4), Box(0.5, 0.5, 1, 1)) == 0.0

    def test_partial_overlap(self):
        # grid-count oracle gives 10000/70000; analytic check 0.01/0.07
        a, b = Box(0, 0, 0.2, 0.2), Box(0.1, 0.1, 0.3, 0.3)
        assert grid_iou(a, b) == pytest.approx(1 / 7, abs=1e-12)
        assert iou(a, b) == pytest.approx(1 / 7, abs=1e-9)

    def test_against_grid_oracle(self):
        rng = random.Random(20240811)
        for _ in range(1000):
            a, b = random_lattice_box(rng), random_lattice_box(rng)
            value = iou(a, b)
            assert value == pytest.approx(grid_iou(a, b), abs=2e-3)
            assert value == iou(b, a)
            assert 0.0 <= value <= 1.0


class TestContainment:
    def test_identity(self):
        box = Box(0.1, 0.2, 0.5, 0.8)
        assert containment(box, box) == pytest.approx(1.0)

    def test_full_enclosure(self):
        assert containment(Box(0.1, 0.1, 0.2, 0.2), Box(0, 0, 1, 1)) == pytest.approx(1.0)

    def test_half_overlap(self):
        inner, outer = Box(0, 0, 0.2, 0.2), Box(0.1, 0, 0.3, 0.2)
        assert grid_containment(inner, outer) == pytest.approx(0.5, abs=1e-12)
        assert containment(inner, outer) == pytest.approx(0.5, abs=1e-9)

    def test_against_grid_oracle(self):
        rng = random.Random(7)
        for _ in range(300):
            inner, outer = random_lattice_box(rng), random_lattice_box(rng)
            assert containment(inner, outer) == pytest.approx(
                grid_containment(inner, outer), abs=2e-3
            )

    def test_inside_implies_one(self):
        rng = random.Random(13)
        for _ in range(200):
            outer = random_lattice_box(rng)
            inner_x = sorted(rng.uniform(outer.x_min, outer.x_max) for _ in range(2))
            inner_y = sorted(rng.uniform(outer.y_min, outer.y_max) for _ in range(2))
            if inner_x[0] == inner_x[1] or inner_y[0] == inner_y[1]:
                continue
            inner = Box(inner_x[0], inner_y[0], inner_x[1], inner_y[1])
            assert containment(inner, outer) == pytest.approx(1.0)


class TestTokenize:
    def test_word_and_punctuation(self):
        prompt = tokenize("a boy.")
        assert [(t.surface, t.kind) for t in prompt.tokens] == [
            ("a", "word"),
            ("boy", "word"),
            (".", "punctuation"),
        ]

    def test_caption_word_count(self):
        prompt = tokenize("nagoya sanza and the courtesan katsuragi nagoya")
        words = [t for t in prompt.tokens if t.kind == "word"]
        assert len(words) == 7

    def test_apostrophe_stays_in_word(self):
        prompt = tokenize("woman's fan")
        assert [t.surface for t in prompt.tokens] == ["woman's", "fan"]
        assert all(t.kind == "word" for t in prompt.tokens)

    @pytest.mark.parametrize("text", ["", "   ", "\n\t"])
    def test_rejects_empty(self, text):
        with pytest.raises(ValidationError):
            tokenize(text)

    def test_slice_maps_back(self):
        prompt = tokenize("two women, a boy.")
        assert prompt.slice(0, 2) == "two women"
        assert prompt.slice(3, 5) == "a boy"

    @settings(max_examples=300)
    @given(st.text(min_size=1).filter(lambda s: s.strip()))
    def test_round_trip(self, text):
        prompt = tokenize(text)
        # Tokens plus the original inter-token gaps reproduce the input.
        rebuilt = []
        cursor = 0
        for tok in prompt.tokens:
            gap = text[cursor : tok.char_start]
            assert gap.strip() == ""  # whitespace is never a token
            rebuilt.append(gap)
            rebuilt.append(tok.surface)
            cursor = tok.char_end
        rebuilt.append(text[cursor:])
        assert "".join(rebuilt) == text
        for tok in prompt.tokens:
            assert not any(c.isspace() for c in tok.surface)
            if tok.kind == "punctuation":
                assert len(tok.surface) == 1


class TestCenterFormat:
    def test_full_image(self):
        assert box_from_center_format(0.5, 0.5, 1, 1) == Box(0, 0, 1, 1)

    def test_arithmetic(self):
        box = box_from_center_format(0.5, 0.5, 0.2, 0.4)
        assert box.as_tuple() == pytest.approx((0.4, 0.3, 0.6, 0.7))

    def test_out_of_range(self):
        with pytest.raises(ValidationError) as err:
            box_from_center_format(0.05, 0.5, 0.2, 0.2)
        assert "0.05" in str(err.value)

    def test_rejects_non_positive_size(self):
        with pytest.raises(ValidationError):
            box_from_center_format(0.5, 0.5, 0.0, 0.2)

    def test_round_trip(self):
        rng = random.Random(99)
        for _ in range(500):
            box = random_lattice_box(rng)
            cx, cy, w, h = box_to_center_format(box)
            back = box_from_center_format(cx, cy, w, h)
            for got, want in zip(back.as_tuple(), box.as_tuple()):
                assert abs(got - want) < 1e-9


class TestProposal:
    def test_score_range(self):
        with pytest.raises(ValidationError):
            Proposal(box=Box(0, 0, 1, 1), token_scores=(0.5, 1.2))

    def test_alignment_is_checked(self):
        prompt = tokenize("a boy.")
        proposal = Proposal(box=Box(0, 0, 1, 1), token_scores=(0.5, 0.5))
        with pytest.raises(AlignmentError) as err:
            proposal.check_alignment(prompt, context="img-1")
        assert "img-1" in str(err.value)
        Proposal(box=Box(0, 0, 1, 1), token_scores=(0.5, 0.5, 0.1)).check_alignment(prompt)


class TestRegionAndRecord:
    def test_empty_phrase_rejected(self):
        with pytest.raises(ValidationError):
            Region(box=Box(0, 0, 1, 1), phrase="   ")

    def test_confidence_optional(self):
        region = Region(box=Box(0, 0, 1, 1), phrase="boy")
        assert region.confidence is None

    def test_record_invariants(self):
        region = Region(box=Box(0, 0, 1, 1), phrase="boy", confidence=0.5)
        record = AnnotationRecord(image_id="img", caption="a boy.", regions=(region,))
        assert record.version == 0
        with pytest.raises(ValidationError):
            AnnotationRecord(image_id="", caption="x", regions=())
        with pytest.raises(ValidationError):
            AnnotationRecord(image_id="img", caption="x", regions=(), version=-1)
