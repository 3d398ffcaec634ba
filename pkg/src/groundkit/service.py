"""HTTP backend for the annotation-correction workflow.

State lives on disk as one JSON document per image plus an append-only
edit log, written with atomic renames so a crash never leaves a torn
record. Writes use optimistic concurrency: clients send the version they
edited, stale versions are rejected with a conflict and must refetch.
"""

from __future__ import annotations

import datetime
import json
import logging
import mimetypes
import os
import tempfile
import threading
from collections import Counter
from pathlib import Path
from typing import Sequence
from urllib.parse import quote, unquote

from fastapi import FastAPI, Query, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from . import __version__
from .core import AnnotationRecord, Box, GroundkitError, Region, ValidationError
from .dataset import (
    ManifestEntry,
    SPLITS,
    load_manifest,
    record_to_payload,
)

__all__ = [
    "NotFoundError",
    "VersionConflictError",
    "AnnotationStore",
    "create_app",
]

log = logging.getLogger(__name__)


class NotFoundError(GroundkitError):
    pass


class VersionConflictError(GroundkitError):
    def __init__(self, image_id: str, expected: int, current: int):
        super().__init__(
            f"{image_id}: expected version {expected} but the record is at {current}"
        )
        self.current = current


def _record_filename(image_id: str) -> str:
    # Percent-encode so arbitrary ids become flat, traversal-proof names.
    return quote(image_id, safe="") + ".json"


def _atomic_write(path: Path, data: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _region_key(region: Region):
    return (region.box.as_tuple(), region.phrase, region.confidence)


def _diff_summary(old: AnnotationRecord, new: AnnotationRecord) -> dict:
    before = Counter(_region_key(r) for r in old.regions)
    after = Counter(_region_key(r) for r in new.regions)
    removed_raw = sum((before - after).values())
    added_raw = sum((after - before).values())
    modified = min(removed_raw, added_raw)
    return {
        "regions_added": added_raw - modified,
        "regions_removed": removed_raw - modified,
        "regions_modified": modified,
        "caption_changed": old.caption != new.caption,
    }


class AnnotationStore:
    """Versioned record store: JSON document per image + append-only edit log."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.records_dir = self.data_dir / "records"
        self.records_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / "edits.log.jsonl"

        self._records: dict[str, AnnotationRecord] = {}
        self._edited: set[str] = set()
        self._manifest: dict[str, ManifestEntry] = {}
        self._mutex = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

        manifest_path = self.data_dir / "manifest.jsonl"
        if manifest_path.exists():
            self._manifest = {e.image_id: e for e in load_manifest(manifest_path)}

        for path in sorted(self.records_dir.glob("*.json")):
            record = self._read_record_file(path)
            self._records[record.image_id] = record
        self._replay_log()

    def _read_record_file(self, path: Path) -> AnnotationRecord:
        payload = json.loads(path.read_text(encoding="utf-8"))
        record = parse_record_payload(payload, image_id=unquote(path.stem))
        return record

    def _replay_log(self) -> None:
        if not self.log_path.exists():
            return
        last_version: dict[str, int] = {}
        with self.log_path.open(encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                self._edited.add(entry["image_id"])
                last_version[entry["image_id"]] = entry["new_version"]
        for image_id, version in last_version.items():
            record = self._records.get(image_id)
            if record is None or record.version < version:
                log.warning(
                    "edit log names %s at version %d but the record is behind; "
                    "the last write may not have completed",
                    image_id,
                    version,
                )

    def _lock_for(self, image_id: str) -> threading.Lock:
        with self._mutex:
            return self._locks.setdefault(image_id, threading.Lock())

    def ingest(self, records: Sequence[AnnotationRecord]) -> int:
        """Seed records that are not in the store yet; returns how many were added."""
        added = 0
        for record in records:
            with self._lock_for(record.image_id):
                if record.image_id in self._records:
                    continue
                self._persist(record)
                with self._mutex:
                    self._records[record.image_id] = record
                added += 1
        return added

    def _persist(self, record: AnnotationRecord) -> None:
        path = self.records_dir / _record_filename(record.image_id)
        _atomic_write(path, json.dumps(record_to_payload(record), ensure_ascii=False))

    def image_ids(self, split: str | None = None) -> list[str]:
        with self._mutex:
            ids = sorted(self._records)
        if split is None:
            return ids
        if split not in SPLITS:
            raise ValidationError(f"unknown split {split!r}")
        return [i for i in ids if self.split_of(i) == split]

    def split_of(self, image_id: str) -> str:
        entry = self._manifest.get(image_id)
        return entry.split if entry else "unassigned"

    def image_path(self, image_id: str) -> str | None:
        entry = self._manifest.get(image_id)
        return entry.image_path if entry else None

    def get(self, image_id: str) -> AnnotationRecord:
        record = self._records.get(image_id)
        if record is None:
            raise NotFoundError(f"no record for image {image_id!r}")
        return record

    def is_annotated(self, image_id: str) -> bool:
        return image_id in self._edited

    def put(
        self,
        image_id: str,
        caption: str,
        regions: Sequence[Region],
        expected_version: int,
    ) -> int:
        """Replace a record atomically; returns the new version."""
        with self._lock_for(image_id):
            current = self._records.get(image_id)
            if current is None:
                raise NotFoundError(f"no record for image {image_id!r}")
            if current.version != expected_version:
                raise VersionConflictError(image_id, expected_version, current.version)
            new_record = AnnotationRecord(
                image_id=image_id,
                caption=caption,
                regions=tuple(regions),
                version=current.version + 1,
                extras=dict(current.extras),
            )
            self._persist(new_record)
            self._append_log(current, new_record)
            with self._mutex:
                self._records[image_id] = new_record
                self._edited.add(image_id)
            return new_record.version

    def _append_log(self, old: AnnotationRecord, new: AnnotationRecord) -> None:
        entry = {
            "image_id": new.image_id,
            "prior_version": old.version,
            "new_version": new.version,
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            **_diff_summary(old, new),
        }
        with self.log_path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, ensure_ascii=False) + "\n")
            handle.flush()
            os.fsync(handle.fileno())

    def progress(self) -> dict:
        with self._mutex:
            ids = list(self._records)
            per_split: dict[str, dict[str, int]] = {}
            for image_id in ids:
                split = self.split_of(image_id)
                bucket = per_split.setdefault(split, {"total": 0, "annotated": 0})
                bucket["total"] += 1
                if image_id in self._edited:
                    bucket["annotated"] += 1
        return {
            "total": len(ids),
            "human_annotated": sum(b["annotated"] for b in per_split.values()),
            "per_split": per_split,
        }


def parse_record_payload(payload: dict, image_id: str) -> AnnotationRecord:
    """Build an AnnotationRecord from a JSON body mirroring regions.jsonl."""
    if not isinstance(payload, dict):
        raise ValidationError("body is not a JSON object")
    body_id = payload.get("image_id", image_id)
    if body_id != image_id:
        raise ValidationError(f"image_id: body says {body_id!r}, path says {image_id!r}")
    caption = payload.get("caption")
    if not isinstance(caption, str):
        raise ValidationError("caption: must be a string")
    raw_regions = payload.get("regions")
    if not isinstance(raw_regions, list):
        raise ValidationError("regions: must be a list")
    regions = []
    for idx, raw in enumerate(raw_regions):
        if not isinstance(raw, dict):
            raise ValidationError(f"regions[{idx}]: not an object")
        box = raw.get("box")
        if not isinstance(box, list) or len(box) != 4:
            raise ValidationError(f"regions[{idx}].box: must be a list of four numbers")
        phrase = raw.get("phrase")
        if not isinstance(phrase, str):
            raise ValidationError(f"regions[{idx}].phrase: must be a string")
        confidence = raw.get("confidence")
        if confidence is not None and not isinstance(confidence, (int, float)):
            raise ValidationError(f"regions[{idx}].confidence: must be a number or null")
        try:
            regions.append(
                Region(
                    box=Box(*(float(v) for v in box)),
                    phrase=phrase,
                    confidence=None if confidence is None else float(confidence),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"regions[{idx}].box: {exc}") from exc
        except ValidationError as exc:
            raise ValidationError(f"regions[{idx}]: {exc}") from exc
    version = payload.get("version", 0)
    if not isinstance(version, int) or version < 0:
        raise ValidationError("version: must be a non-negative integer")
    return AnnotationRecord(
        image_id=image_id, caption=caption, regions=tuple(regions), version=version
    )


def create_app(
    data_dir: str | Path,
    images_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    """Wire an AnnotationStore into the REST API."""
    store = AnnotationStore(data_dir)
    images_root = Path(images_dir).resolve() if images_dir else None

    app = FastAPI(title="groundkit annotation service", version=__version__)
    app.state.store = store

    @app.exception_handler(ValidationError)
    async def _validation(request: Request, exc: ValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(NotFoundError)
    async def _not_found(request: Request, exc: NotFoundError):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(VersionConflictError)
    async def _conflict(request: Request, exc: VersionConflictError):
        return JSONResponse(
            status_code=409, content={"error": str(exc), "current_version": exc.current}
        )

    @app.get("/api/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/api/images")
    def list_images(
        split: str | None = None,
        offset: int = Query(0, ge=0),
        limit: int = Query(50, ge=1, le=500),
    ):
        ids = store.image_ids(split)
        page = ids[offset : offset + limit]
        return {
            "total": len(ids),
            "offset": offset,
            "limit": limit,
            "items": [
                {
                    "image_id": image_id,
                    "region_count": len(store.get(image_id).regions),
                    "annotated": store.is_annotated(image_id),
                    "split": store.split_of(image_id),
                }
                for image_id in page
            ],
        }

    @app.api_route("/api/images/{image_id:path}/file", methods=["GET", "HEAD"])
    def image_file(image_id: str):
        relative = store.image_path(image_id)
        if images_root is None or relative is None:
            raise NotFoundError(f"no image file for {image_id!r}")
        candidate = (images_root / relative).resolve()
        if not candidate.is_relative_to(images_root) or not candidate.is_file():
            raise NotFoundError(f"no image file for {image_id!r}")
        media_type = mimetypes.guess_type(candidate.name)[0] or "application/octet-stream"
        return FileResponse(candidate, media_type=media_type)

    @app.get("/api/images/{image_id:path}")
    def get_record(image_id: str):
        return record_to_payload(store.get(image_id))

    @app.put("/api/images/{image_id:path}")
    async def put_record(image_id: str, request: Request):
        try:
            payload = await request.json()
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON body: {exc}") from exc
        if not isinstance(payload, dict) or not isinstance(payload.get("expected_version"), int):
            raise ValidationError("expected_version: must be an integer")
        expected = payload["expected_version"]
        record = parse_record_payload(
            {**payload, "version": expected}, image_id=image_id
        )
        new_version = store.put(image_id, record.caption, record.regions, expected)
        return {"image_id": image_id, "version": new_version}

    @app.get("/api/progress")
    def progress():
        return store.progress()

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
