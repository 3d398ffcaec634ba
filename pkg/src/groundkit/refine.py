"""Multi-stage refinement of raw box-phrase proposals into clean regions.

Raw zero-shot grounding output overpredicts: one box may carry several
phrase groups, several near-identical boxes may carry the same object, and
generic non-object phrases ("print", "scene") show up as detections. The
pipeline here filters on both the phrase level and the box level:

  1. drop proposals whose best token score is below the box threshold
  2. extract phrase groups from the token-score distribution
  3. un-group multi-phrase boxes down to their best group
  4. drop stoplisted non-object phrases
  5. collapse near-identical boxes, merging "[subject] of/as [role]" pairs
  6. normalize phrases (articles and quantity descriptors removed)
  7. drop same-phrase boxes contained inside a higher-confidence box
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import AlignmentError, Box, Proposal, Region, TokenizedPrompt, ValidationError, containment, iou
from .matchers import ARTICLES, QUANTITY_WORDS, MatchPolicy, normalize_phrase

__all__ = [
    "PhraseGroup",
    "RefineConfig",
    "SpannedRegion",
    "StageCounts",
    "RefineOutcome",
    "extract_phrase_groups",
    "stage1_stoplist_filter",
    "stage2_ungroup",
    "stage2_dedup",
    "stage3_containment_filter",
    "refine_image",
    "refine_pipeline",
]

DEFAULT_STOPLIST = frozenset({"print", "scene", "image"})
DEFAULT_CONNECTORS = frozenset({"of", "as"})


@dataclass(frozen=True)
class PhraseGroup:
    """A maximal run of word tokens whose scores all clear the threshold."""

    token_start: int
    token_end: int
    surface: str
    mean_score: float

    def __post_init__(self):
        if self.token_start >= self.token_end:
            raise ValidationError(f"empty group span [{self.token_start}, {self.token_end})")
        if not 0.0 <= self.mean_score <= 1.0:
            raise ValidationError(f"group mean score {self.mean_score} outside [0, 1]")


@dataclass(frozen=True)
class RefineConfig:
    """Thresholds and word lists steering the refinement stages."""

    text_threshold: float = 0.20
    box_threshold: float = 0.20
    stoplist: frozenset[str] = DEFAULT_STOPLIST
    identical_iou: float = 0.95
    containment_threshold: float = 0.90
    connectors: frozenset[str] = DEFAULT_CONNECTORS
    quantity_words: frozenset[str] = QUANTITY_WORDS
    articles: frozenset[str] = ARTICLES
    merge_confidence: str = "mean"  # or "max": confidence of an of/as merge

    def __post_init__(self):
        for name in ("text_threshold", "box_threshold", "identical_iou", "containment_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")
        for name in ("stoplist", "connectors", "quantity_words", "articles"):
            for word in getattr(self, name):
                if word != word.lower():
                    raise ValidationError(f"{name} entry {word!r} is not lowercase")
        if self.merge_confidence not in ("mean", "max"):
            raise ValidationError(f"merge_confidence must be 'mean' or 'max', got {self.merge_confidence!r}")

    def normalize(self, phrase: str) -> str:
        return normalize_phrase(
            phrase,
            MatchPolicy(),
            articles=self.articles,
            quantity_words=self.quantity_words,
        )


@dataclass(frozen=True)
class SpannedRegion:
    """Pipeline intermediate: a box with a phrase that is a prompt slice."""

    box: Box
    token_start: int
    token_end: int
    phrase: str
    confidence: float


def extract_phrase_groups(
    prompt: TokenizedPrompt, proposal: Proposal, cfg: RefineConfig
) -> list[PhraseGroup]:
    """Find every maximal run of word tokens scoring >= the text threshold.

    Punctuation always terminates a run, regardless of its own score, so
    groups never cross phrase boundaries. Groups come back in prompt order.
    """
    proposal.check_alignment(prompt)
    groups: list[PhraseGroup] = []
    run_start = None
    for idx, token in enumerate(prompt.tokens):
        in_run = token.kind == "word" and proposal.token_scores[idx] >= cfg.text_threshold
        if in_run and run_start is None:
            run_start = idx
        elif not in_run and run_start is not None:
            groups.append(_make_group(prompt, proposal, run_start, idx))
            run_start = None
    if run_start is not None:
        groups.append(_make_group(prompt, proposal, run_start, len(prompt.tokens)))
    return groups


def _make_group(prompt: TokenizedPrompt, proposal: Proposal, start: int, end: int) -> PhraseGroup:
    scores = proposal.token_scores[start:end]
    return PhraseGroup(
        token_start=start,
        token_end=end,
        surface=prompt.slice(start, end),
        mean_score=sum(scores) / len(scores),
    )


def stage2_ungroup(groups: Sequence[PhraseGroup]) -> PhraseGroup | None:
    """Reduce a multi-group prediction to its most confident group.

    Ties go to the earliest group. Returns None when there is nothing to
    keep, which drops the proposal (a filtered-out outcome, not an error).
    """
    best = None
    for group in groups:
        if best is None or group.mean_score > best.mean_score:
            best = group
    return best


def stage1_stoplist_filter(
    regions: Sequence[SpannedRegion], cfg: RefineConfig
) -> list[SpannedRegion]:
    """Drop regions whose normalized phrase names a non-object."""
    return [r for r in regions if cfg.normalize(r.phrase) not in cfg.stoplist]


def _identity_clusters(boxes: Sequence[Box], threshold: float) -> list[list[int]]:
    """Connected components of the 'near-identical box' relation."""
    n = len(boxes)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if iou(boxes[i], boxes[j]) >= threshold:
                parent[find(i)] = find(j)
    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)
    return [sorted(members) for _, members in sorted(clusters.items())]


def _connector_gap(prompt: TokenizedPrompt, first: SpannedRegion, second: SpannedRegion, cfg: RefineConfig) -> bool:
    """True when only connector words (optionally flanked by articles) sit between the spans."""
    gap = prompt.tokens[first.token_end : second.token_start]
    if not gap:
        return False
    saw_connector = False
    for token in gap:
        if token.kind != "word":
            return False
        word = token.surface.lower()
        if word in cfg.connectors:
            saw_connector = True
        elif word not in cfg.articles:
            return False
    return saw_connector


def _merge_pair(prompt: TokenizedPrompt, a: SpannedRegion, b: SpannedRegion, cfg: RefineConfig) -> SpannedRegion:
    first, second = sorted((a, b), key=lambda r: r.token_start)
    if cfg.merge_confidence == "mean":
        conf = (a.confidence + b.confidence) / 2.0
    else:
        conf = max(a.confidence, b.confidence)
    keeper = max((a, b), key=lambda r: (r.confidence, -r.token_start))
    return SpannedRegion(
        box=keeper.box,
        token_start=first.token_start,
        token_end=second.token_end,
        phrase=prompt.slice(first.token_start, second.token_end),
        confidence=conf,
    )


def stage2_dedup(
    regions: Sequence[SpannedRegion], prompt: TokenizedPrompt, cfg: RefineConfig
) -> list[SpannedRegion]:
    """Collapse clusters of near-identical boxes down to one region each.

    A two-member cluster whose phrases are separated in the prompt by only
    of/as connectors is merged into a single region spanning both phrases;
    any other cluster keeps its highest-confidence member.
    """
    regions = list(regions)
    out: list[SpannedRegion] = []
    for cluster in _identity_clusters([r.box for r in regions], cfg.identical_iou):
        members = [regions[i] for i in cluster]
        if len(members) == 1:
            out.append(members[0])
            continue
        if len(members) == 2:
            first, second = sorted(members, key=lambda r: r.token_start)
            if first.token_end <= second.token_start and _connector_gap(prompt, first, second, cfg):
                out.append(_merge_pair(prompt, first, second, cfg))
                continue
        out.append(max(members, key=lambda r: (r.confidence, -r.token_start, _box_sort_key(r.box, reverse=True))))
    return out


def _box_sort_key(box: Box, reverse: bool = False):
    key = box.as_tuple()
    return tuple(-v for v in key) if reverse else key


def _beats(a: Region, b: Region) -> bool:
    """Total order used by the containment filter: a survives over b."""
    ca = a.confidence if a.confidence is not None else 0.0
    cb = b.confidence if b.confidence is not None else 0.0
    if ca != cb:
        return ca > cb
    if a.box.area != b.box.area:
        return a.box.area > b.box.area
    return a.box.as_tuple() < b.box.as_tuple()


def stage3_containment_filter(regions: Sequence[Region], cfg: RefineConfig) -> list[Region]:
    """Remove same-phrase boxes nested inside a stronger box, to fixed point.

    Whenever two regions share a phrase and one sits inside the other past
    the containment threshold, the lower-confidence member goes (ties keep
    the larger box). The weakest conflicting region is removed first, and
    removal repeats until no conflicting pair remains.
    """
    alive = list(regions)
    while True:
        removable = []
        for i, r in enumerate(alive):
            for j, other in enumerate(alive):
                if i == j or r.phrase != other.phrase:
                    continue
                nested = (
                    containment(r.box, other.box) >= cfg.containment_threshold
                    or containment(other.box, r.box) >= cfg.containment_threshold
                )
                if nested and _beats(other, r):
                    removable.append(i)
                    break
        if not removable:
            return alive
        weakest = min(
            removable,
            key=lambda i: (
                alive[i].confidence if alive[i].confidence is not None else 0.0,
                alive[i].box.area,
                alive[i].box.as_tuple(),
            ),
        )
        del alive[weakest]


@dataclass
class StageCounts:
    """Per-stage accounting: how many proposals each stage dropped."""

    input: int = 0
    below_box_threshold: int = 0
    no_phrase_group: int = 0
    stoplisted: int = 0
    deduplicated: int = 0
    contained: int = 0
    output: int = 0

    def dropped_total(self) -> int:
        return (
            self.below_box_threshold
            + self.no_phrase_group
            + self.stoplisted
            + self.deduplicated
            + self.contained
        )

    def __iadd__(self, other: "StageCounts") -> "StageCounts":
        for name in vars(self):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self


@dataclass(frozen=True)
class RefineOutcome:
    regions: tuple[Region, ...]
    counts: StageCounts


def refine_image(
    prompt: TokenizedPrompt,
    proposals: Sequence[Proposal],
    cfg: RefineConfig = RefineConfig(),
    image_id: str = "",
) -> RefineOutcome:
    """Run the full refinement pipeline for one image, with stage accounting."""
    counts = StageCounts(input=len(proposals))
    for proposal in proposals:
        proposal.check_alignment(prompt, context=image_id or "unidentified image")

    survivors = [p for p in proposals if p.token_scores and max(p.token_scores) >= cfg.box_threshold]
    counts.below_box_threshold = len(proposals) - len(survivors)

    spanned: list[SpannedRegion] = []
    for proposal in survivors:
        best = stage2_ungroup(extract_phrase_groups(prompt, proposal, cfg))
        if best is None:
            counts.no_phrase_group += 1
            continue
        spanned.append(
            SpannedRegion(
                box=proposal.box,
                token_start=best.token_start,
                token_end=best.token_end,
                phrase=best.surface,
                confidence=best.mean_score,
            )
        )

    kept = stage1_stoplist_filter(spanned, cfg)
    counts.stoplisted = len(spanned) - len(kept)

    deduped = stage2_dedup(kept, prompt, cfg)
    counts.deduplicated = len(kept) - len(deduped)

    normalized = [
        Region(box=r.box, phrase=cfg.normalize(r.phrase), confidence=r.confidence)
        for r in deduped
    ]

    final = stage3_containment_filter(normalized, cfg)
    counts.contained = len(normalized) - len(final)
    counts.output = len(final)

    final.sort(key=lambda r: (-(r.confidence or 0.0), r.box.as_tuple(), r.phrase))
    return RefineOutcome(regions=tuple(final), counts=counts)


def refine_pipeline(
    prompt: TokenizedPrompt,
    proposals: Sequence[Proposal],
    cfg: RefineConfig = RefineConfig(),
    image_id: str = "",
) -> list[Region]:
    """Refined regions for one image, sorted by confidence descending."""
    return list(refine_image(prompt, proposals, cfg, image_id).regions)
