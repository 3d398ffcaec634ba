"""Dataset construction: keyword filtering, grouped splits, files, stats.

All on-disk collections are line-delimited JSON, one image per line, with
an explicit schema_version. Loaders validate every type invariant and
point at the offending line; unknown fields are warned about and carried
through rewrites untouched.
"""

from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .cleaning import CaptionCleaner, clean_caption
from .core import (
    AnnotationRecord,
    Box,
    GroundkitError,
    Proposal,
    Region,
    Token,
    TokenizedPrompt,
    ValidationError,
)
from .matchers import MatchPolicy, normalization_name, normalize_phrase

__all__ = [
    "SCHEMA_VERSION",
    "SPLITS",
    "SchemaError",
    "SchemaErrorGroup",
    "ManifestEntry",
    "SplitSpec",
    "ProposalDocument",
    "DatasetStats",
    "keyword_filter",
    "assign_splits",
    "clean_entries",
    "load_proposals",
    "save_proposals",
    "load_regions",
    "save_regions",
    "load_manifest",
    "save_manifest",
    "dataset_stats",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test", "unassigned")

_KIND_TO_FILE = {"word": "word", "punctuation": "punct"}
_KIND_FROM_FILE = {"word": "word", "punct": "punctuation"}


class SchemaError(GroundkitError):
    """A file record violates the schema; carries the line number."""

    def __init__(self, path: str | Path, line: int, message: str):
        super().__init__(f"{path}, line {line}: {message}")
        self.path = str(path)
        self.line = line


class SchemaErrorGroup(GroundkitError):
    """Several records in one file are bad; lists every line error."""

    def __init__(self, errors: list[SchemaError]):
        super().__init__("\n".join(str(e) for e in errors))
        self.errors = errors


@dataclass(frozen=True)
class ManifestEntry:
    """One dataset image with its raw metadata and split assignment."""

    image_id: str
    image_path: str
    title: str | None = None
    description: str | None = None
    caption: str | None = None
    group_key: str = ""
    split: str = "unassigned"
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id is empty")
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r}")
        if not self.group_key:
            # Duplicate-caption entries of one image share the image file,
            # so the path stands in for content identity.
            object.__setattr__(self, "group_key", self.image_path or self.image_id)


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test ratios plus the shuffle seed."""

    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if any(r < 0 for r in self.ratios):
            raise ValidationError(f"negative split ratio in {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValidationError(f"split ratios {self.ratios} do not sum to 1.0")


@dataclass(frozen=True)
class ProposalDocument:
    """One image's prompt plus its raw box-phrase proposals."""

    image_id: str
    prompt: TokenizedPrompt
    proposals: tuple[Proposal, ...]
    extras: dict = field(default_factory=dict, compare=False)


def keyword_filter(
    entries: Sequence[ManifestEntry],
    keywords: Iterable[str],
    delimiter: str = ". ",
) -> list[ManifestEntry]:
    """Keep entries whose title or description contains a keyword.

    Matching is case-insensitive on whole words. Kept entries get their
    caption set to the title and description joined by the delimiter.
    """
    keywords = sorted(set(keywords))
    if not keywords:
        raise ValidationError("keyword set is empty")
    for kw in keywords:
        if not kw or kw != kw.lower():
            raise ValidationError(f"keywords must be non-empty and lowercase, got {kw!r}")
    pattern = re.compile(
        r"\b(?:" + "|".join(re.escape(kw) for kw in keywords) + r")\b", re.IGNORECASE
    )

    kept = []
    for entry in entries:
        searchable = [t for t in (entry.title, entry.description) if t]
        if not any(pattern.search(text) for text in searchable):
            continue
        caption = delimiter.join(searchable) if searchable else None
        kept.append(replace(entry, caption=caption))
    return kept


def assign_splits(entries: Sequence[ManifestEntry], spec: SplitSpec) -> list[ManifestEntry]:
    """Assign every group of entries to train/val/test per the spec ratios.

    Groups are shuffled with the seed and apportioned by largest
    remainder, so per-split group counts land within one group of the
    ratios and all entries of a group share a split.
    """
    groups: dict[str, list[ManifestEntry]] = {}
    for entry in entries:
        groups.setdefault(entry.group_key, []).append(entry)

    nonzero = sum(1 for r in spec.ratios if r > 0)
    if len(groups) < nonzero:
        raise ValidationError(
            f"{len(groups)} groups cannot cover {nonzero} splits with nonzero ratios"
        )

    keys = sorted(groups)
    random.Random(spec.seed).shuffle(keys)

    total = len(keys)
    targets = [r * total for r in spec.ratios]
    counts = [int(t) for t in targets]
    leftovers = sorted(
        range(3), key=lambda i: (-(targets[i] - counts[i]), i)
    )
    for i in leftovers[: total - sum(counts)]:
        counts[i] += 1

    assignment: dict[str, str] = {}
    cursor = 0
    for split_name, count in zip(("train", "val", "test"), counts):
        for key in keys[cursor : cursor + count]:
            assignment[key] = split_name
        cursor += count

    return [replace(entry, split=assignment[entry.group_key]) for entry in entries]


def clean_entries(
    entries: Sequence[ManifestEntry],
    client: CaptionCleaner,
    jobs: int = 4,
    max_attempts: int = 3,
) -> list[ManifestEntry]:
    """Clean every entry's caption concurrently; entries without one pass through."""

    def work(entry: ManifestEntry) -> ManifestEntry:
        if not entry.caption:
            return entry
        return replace(entry, caption=clean_caption(entry.caption, client, max_attempts))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(work, entries))


# --- line-delimited JSON files -------------------------------------------

def _pop_extras(payload: dict, known: tuple[str, ...], path, line: int, where: str) -> dict:
    extras = {k: payload[k] for k in payload if k not in known}
    if extras:
        log.warning(
            "%s, line %d: unknown %s field(s) %s preserved",
            path,
            line,
            where,
            ", ".join(sorted(extras)),
        )
    return extras


def _expect(payload: dict, key: str, kinds, path, line: int, optional: bool = False):
    if key not in payload or payload[key] is None:
        if optional:
            return None
        raise SchemaError(path, line, f"missing field {key!r}")
    value = payload[key]
    if not isinstance(value, kinds):
        raise SchemaError(path, line, f"field {key!r} has wrong type {type(value).__name__}")
    return value


def _parse_box(values, path, line: int) -> Box:
    if not isinstance(values, list) or len(values) != 4:
        raise SchemaError(path, line, "box must be a list of four numbers")
    try:
        return Box(*(float(v) for v in values))
    except (TypeError, ValueError, ValidationError) as exc:
        raise SchemaError(path, line, f"box: {exc}") from exc


def _parse_payload_line(payload, parse_line: Callable, path: Path, lineno: int):
    if not isinstance(payload, dict):
        raise SchemaError(path, lineno, "record is not a JSON object")
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(path, lineno, f"unsupported schema_version {version!r}")
    return parse_line(payload, path, lineno)


def _load_jsonl(path: str | Path, parse_line: Callable) -> list:
    """Parse every line, then report all schema violations at once."""
    path = Path(path)
    records = []
    errors: list[SchemaError] = []
    seen_ids: set[str] = set()
    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                try:
                    payload = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise SchemaError(path, lineno, f"invalid JSON: {exc}") from exc
                record = _parse_payload_line(payload, parse_line, path, lineno)
                if record.image_id in seen_ids:
                    raise SchemaError(path, lineno, f"duplicate image_id {record.image_id!r}")
            except SchemaError as exc:
                errors.append(exc)
                continue
            seen_ids.add(record.image_id)
            records.append(record)
    if len(errors) == 1:
        raise errors[0]
    if errors:
        raise SchemaErrorGroup(errors)
    return records


def _write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")


def _parse_proposal_line(payload: dict, path, lineno: int) -> ProposalDocument:
    image_id = _expect(payload, "image_id", str, path, lineno)
    prompt_text = _expect(payload, "prompt", str, path, lineno)
    raw_tokens = _expect(payload, "tokens", list, path, lineno)
    tokens = []
    for t in raw_tokens:
        if not isinstance(t, dict):
            raise SchemaError(path, lineno, "token entry is not an object")
        kind = _expect(t, "kind", str, path, lineno)
        if kind not in _KIND_FROM_FILE:
            raise SchemaError(path, lineno, f"unknown token kind {kind!r}")
        try:
            tokens.append(
                Token(
                    surface=_expect(t, "text", str, path, lineno),
                    char_start=_expect(t, "start", int, path, lineno),
                    char_end=_expect(t, "end", int, path, lineno),
                    kind=_KIND_FROM_FILE[kind],
                )
            )
        except ValidationError as exc:
            raise SchemaError(path, lineno, f"tokens: {exc}") from exc
    try:
        prompt = TokenizedPrompt(text=prompt_text, tokens=tuple(tokens))
    except ValidationError as exc:
        raise SchemaError(path, lineno, f"tokens: {exc}") from exc

    proposals = []
    for idx, p in enumerate(_expect(payload, "proposals", list, path, lineno)):
        if not isinstance(p, dict):
            raise SchemaError(path, lineno, "proposal entry is not an object")
        box = _parse_box(_expect(p, "box", list, path, lineno), path, lineno)
        scores = _expect(p, "token_scores", list, path, lineno)
        if len(scores) != len(tokens):
            raise SchemaError(
                path,
                lineno,
                f"token_scores: proposal {idx} has {len(scores)} scores "
                f"for {len(tokens)} prompt tokens",
            )
        try:
            proposal = Proposal(
                box=box,
                token_scores=tuple(float(s) for s in scores),
                extras=_pop_extras(p, ("box", "token_scores"), path, lineno, "proposal"),
            )
        except (TypeError, ValueError, ValidationError) as exc:
            raise SchemaError(path, lineno, f"token_scores: {exc}") from exc
        proposals.append(proposal)

    return ProposalDocument(
        image_id=image_id,
        prompt=prompt,
        proposals=tuple(proposals),
        extras=_pop_extras(
            payload,
            ("schema_version", "image_id", "prompt", "tokens", "proposals"),
            path,
            lineno,
            "record",
        ),
    )


def load_proposals(path: str | Path) -> list[ProposalDocument]:
    return _load_jsonl(path, _parse_proposal_line)


def save_proposals(path: str | Path, documents: Sequence[ProposalDocument]) -> None:
    rows = []
    for doc in documents:
        rows.append(
            {
                "schema_version": SCHEMA_VERSION,
                "image_id": doc.image_id,
                "prompt": doc.prompt.text,
                "tokens": [
                    {
                        "text": t.surface,
                        "start": t.char_start,
                        "end": t.char_end,
                        "kind": _KIND_TO_FILE[t.kind],
                    }
                    for t in doc.prompt.tokens
                ],
                "proposals": [
                    {
                        "box": list(p.box.as_tuple()),
                        "token_scores": list(p.token_scores),
                        **p.extras,
                    }
                    for p in doc.proposals
                ],
                **doc.extras,
            }
        )
    _write_jsonl(path, rows)


def _parse_region_line(payload: dict, path, lineno: int) -> AnnotationRecord:
    regions = []
    for r in _expect(payload, "regions", list, path, lineno):
        if not isinstance(r, dict):
            raise SchemaError(path, lineno, "region entry is not an object")
        confidence = r.get("confidence")
        if confidence is not None and not isinstance(confidence, (int, float)):
            raise SchemaError(path, lineno, "field 'confidence' has wrong type")
        try:
            regions.append(
                Region(
                    box=_parse_box(_expect(r, "box", list, path, lineno), path, lineno),
                    phrase=_expect(r, "phrase", str, path, lineno),
                    confidence=None if confidence is None else float(confidence),
                    extras=_pop_extras(r, ("box", "phrase", "confidence"), path, lineno, "region"),
                )
            )
        except ValidationError as exc:
            raise SchemaError(path, lineno, f"regions: {exc}") from exc
    try:
        return AnnotationRecord(
            image_id=_expect(payload, "image_id", str, path, lineno),
            caption=_expect(payload, "caption", str, path, lineno),
            regions=tuple(regions),
            version=_expect(payload, "version", int, path, lineno),
            extras=_pop_extras(
                payload,
                ("schema_version", "image_id", "caption", "regions", "version"),
                path,
                lineno,
                "record",
            ),
        )
    except ValidationError as exc:
        raise SchemaError(path, lineno, str(exc)) from exc


def load_regions(path: str | Path) -> list[AnnotationRecord]:
    return _load_jsonl(path, _parse_region_line)


def region_to_payload(region: Region) -> dict:
    return {
        "box": list(region.box.as_tuple()),
        "phrase": region.phrase,
        "confidence": region.confidence,
        **region.extras,
    }


def record_to_payload(record: AnnotationRecord) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "image_id": record.image_id,
        "caption": record.caption,
        "regions": [region_to_payload(r) for r in record.regions],
        "version": record.version,
        **record.extras,
    }


def save_regions(path: str | Path, records: Sequence[AnnotationRecord]) -> None:
    _write_jsonl(path, (record_to_payload(rec) for rec in records))


def _parse_manifest_line(payload: dict, path, lineno: int) -> ManifestEntry:
    try:
        return ManifestEntry(
            image_id=_expect(payload, "image_id", str, path, lineno),
            image_path=_expect(payload, "image_path", str, path, lineno),
            title=_expect(payload, "title", str, path, lineno, optional=True),
            description=_expect(payload, "description", str, path, lineno, optional=True),
            caption=_expect(payload, "caption", str, path, lineno, optional=True),
            group_key=_expect(payload, "group_key", str, path, lineno),
            split=_expect(payload, "split", str, path, lineno),
            extras=_pop_extras(
                payload,
                (
                    "schema_version",
                    "image_id",
                    "image_path",
                    "title",
                    "description",
                    "caption",
                    "group_key",
                    "split",
                ),
                path,
                lineno,
                "record",
            ),
        )
    except ValidationError as exc:
        raise SchemaError(path, lineno, str(exc)) from exc


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    return _load_jsonl(path, _parse_manifest_line)


def save_manifest(path: str | Path, entries: Sequence[ManifestEntry]) -> None:
    rows = []
    for e in entries:
        rows.append(
            {
                "schema_version": SCHEMA_VERSION,
                "image_id": e.image_id,
                "image_path": e.image_path,
                "title": e.title,
                "description": e.description,
                "caption": e.caption,
                "group_key": e.group_key,
                "split": e.split,
                **e.extras,
            }
        )
    _write_jsonl(path, rows)


# --- statistics ------------------------------------------------------------

@dataclass(frozen=True)
class DatasetStats:
    images: int
    annotated_images: int
    regions: int
    unique_phrases_raw: int
    unique_phrases_normalized: int
    normalization: str
    per_split: dict[str, dict[str, int]]
    regions_per_image: dict[int, int]
    dangling_image_ids: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "images": self.images,
            "annotated_images": self.annotated_images,
            "regions": self.regions,
            "unique_phrases_raw": self.unique_phrases_raw,
            "unique_phrases_normalized": self.unique_phrases_normalized,
            "normalization": self.normalization,
            "per_split": self.per_split,
            "regions_per_image": {str(k): v for k, v in sorted(self.regions_per_image.items())},
            "dangling_image_ids": list(self.dangling_image_ids),
        }

    def format_text(self) -> str:
        lines = [
            f"images:             {self.images}",
            f"annotated images:   {self.annotated_images}",
            f"regions:            {self.regions}",
            f"unique phrases:     {self.unique_phrases_raw} raw, "
            f"{self.unique_phrases_normalized} normalized ({self.normalization})",
        ]
        for split in SPLITS:
            if split in self.per_split:
                counts = self.per_split[split]
                lines.append(
                    f"  {split:<11} {counts['images']} images, {counts['regions']} regions"
                )
        if self.dangling_image_ids:
            lines.append(
                f"dangling image ids: {', '.join(self.dangling_image_ids)}"
            )
        return "\n".join(lines)


def dataset_stats(
    manifest: Sequence[ManifestEntry] | None,
    records: Sequence[AnnotationRecord],
    policy: MatchPolicy = MatchPolicy(),
) -> DatasetStats:
    """Corpus statistics over a manifest and its annotation records.

    Records that reference images missing from the manifest are listed as
    dangling, not fatal.
    """
    split_of = {e.image_id: e.split for e in manifest} if manifest is not None else {}
    raw_phrases = set()
    normalized_phrases = set()
    regions_total = 0
    regions_per_image: dict[int, int] = {}
    per_split: dict[str, dict[str, int]] = {}
    dangling = []

    for entry in manifest or []:
        per_split.setdefault(entry.split, {"images": 0, "regions": 0})["images"] += 1

    for record in records:
        regions_total += len(record.regions)
        regions_per_image[len(record.regions)] = regions_per_image.get(len(record.regions), 0) + 1
        for region in record.regions:
            raw_phrases.add(region.phrase)
            normalized_phrases.add(normalize_phrase(region.phrase, policy))
        if manifest is not None and record.image_id not in split_of:
            dangling.append(record.image_id)
        split = split_of.get(record.image_id, "unassigned")
        bucket = per_split.setdefault(split, {"images": 0, "regions": 0})
        bucket["regions"] += len(record.regions)
        if manifest is None:
            bucket["images"] += 1

    return DatasetStats(
        images=len(manifest) if manifest is not None else len(records),
        annotated_images=len(records),
        regions=regions_total,
        unique_phrases_raw=len(raw_phrases),
        unique_phrases_normalized=len(normalized_phrases),
        normalization=normalization_name(policy),
        per_split=per_split,
        regions_per_image=regions_per_image,
        dangling_image_ids=tuple(sorted(dangling)),
    )
