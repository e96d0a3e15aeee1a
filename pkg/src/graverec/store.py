"""Single-file sqlite persistence: documents, pages, detections, records,
append-only edit log and background jobs.

Writes are serialized through one connection guarded by a lock; record
updates are optimistic (version check inside the transaction).
"""

from __future__ import annotations

import json
import sqlite3
import threading
import uuid
from collections import OrderedDict
from datetime import datetime, timezone

import numpy as np

from . import ingest
from .detect import ClassLabel, Detection, Origin
from .errors import (
    StaleVersion,
    StorageFailure,
    UnknownDocument,
    UnknownPage,
    UnknownRecord,
)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS documents (
    id TEXT PRIMARY KEY,
    title TEXT NOT NULL,
    source_ref TEXT NOT NULL,
    page_count INTEGER NOT NULL,
    scale_mode TEXT NOT NULL,
    fixed_ratio REAL,
    page_height_cm REAL
);
CREATE TABLE IF NOT EXISTS pages (
    pk INTEGER PRIMARY KEY AUTOINCREMENT,
    document_id TEXT NOT NULL REFERENCES documents(id),
    page_id TEXT NOT NULL,
    idx INTEGER NOT NULL,
    width_px INTEGER NOT NULL,
    height_px INTEGER NOT NULL,
    dpi REAL,
    png BLOB NOT NULL,
    UNIQUE (document_id, page_id),
    UNIQUE (document_id, idx)
);
CREATE TABLE IF NOT EXISTS detections (
    id TEXT PRIMARY KEY,
    document_id TEXT NOT NULL,
    page_id TEXT NOT NULL,
    label TEXT NOT NULL,
    x_min REAL NOT NULL, y_min REAL NOT NULL,
    x_max REAL NOT NULL, y_max REAL NOT NULL,
    confidence REAL NOT NULL,
    origin TEXT NOT NULL,
    seq INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS records (
    record_id TEXT PRIMARY KEY,
    document_id TEXT NOT NULL,
    page_id TEXT NOT NULL,
    page_index INTEGER NOT NULL,
    publication_grave_id TEXT,
    status TEXT NOT NULL,
    version INTEGER NOT NULL,
    pos_y REAL NOT NULL DEFAULT 0,
    pos_x REAL NOT NULL DEFAULT 0,
    data TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_records_queue
    ON records (document_id, status, page_index, pos_y, pos_x);
CREATE TABLE IF NOT EXISTS edit_log (
    record_id TEXT NOT NULL,
    seq INTEGER NOT NULL,
    ts TEXT NOT NULL,
    step TEXT NOT NULL,
    change TEXT NOT NULL,
    PRIMARY KEY (record_id, seq)
);
CREATE TABLE IF NOT EXISTS jobs (
    job_id TEXT PRIMARY KEY,
    document_id TEXT NOT NULL,
    kind TEXT NOT NULL,
    status TEXT NOT NULL,
    detail TEXT,
    created_at TEXT NOT NULL
);
"""


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


class Store:
    def __init__(self, path: str = ":memory:"):
        self._path = path
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._conn.execute("PRAGMA foreign_keys = ON")
        with self._lock, self._conn:
            self._conn.executescript(_SCHEMA)
        self._raster_cache: OrderedDict[tuple[str, str], np.ndarray] = OrderedDict()
        self._raster_cache_size = 16

    def close(self):
        with self._lock:
            self._conn.close()

    # -- documents and pages --------------------------------------------------

    def create_document(
        self,
        title: str,
        source_ref: str,
        scale_mode: ingest.ScaleMode,
        fixed_ratio: float | None,
        page_height_cm: float | None,
        pages: list[tuple[str, bytes, int, int, float | None]],
        document_id: str | None = None,
    ) -> ingest.Document:
        doc_id = document_id or uuid.uuid4().hex
        with self._lock:
            try:
                with self._conn:
                    self._conn.execute(
                        "INSERT INTO documents VALUES (?,?,?,?,?,?,?)",
                        (doc_id, title, source_ref, len(pages), scale_mode.value, fixed_ratio, page_height_cm),
                    )
                    for idx, (page_id, png, width, height, dpi) in enumerate(pages):
                        self._conn.execute(
                            "INSERT INTO pages (document_id, page_id, idx, width_px, height_px, dpi, png)"
                            " VALUES (?,?,?,?,?,?,?)",
                            (doc_id, page_id, idx, width, height, dpi, png),
                        )
            except sqlite3.IntegrityError as exc:
                raise StorageFailure(str(exc)) from None
        return ingest.Document(
            id=doc_id,
            title=title,
            source_ref=source_ref,
            page_count=len(pages),
            scale_mode=scale_mode,
            fixed_ratio=fixed_ratio,
            page_height_cm=page_height_cm,
        )

    def get_document(self, document_id: str) -> ingest.Document:
        with self._lock:
            row = self._conn.execute(
                "SELECT id, title, source_ref, page_count, scale_mode, fixed_ratio, page_height_cm"
                " FROM documents WHERE id = ?",
                (document_id,),
            ).fetchone()
        if row is None:
            raise UnknownDocument(document_id)
        return ingest.Document(
            id=row[0],
            title=row[1],
            source_ref=row[2],
            page_count=row[3],
            scale_mode=ingest.ScaleMode(row[4]),
            fixed_ratio=row[5],
            page_height_cm=row[6],
        )

    def list_documents(self) -> list[ingest.Document]:
        with self._lock:
            ids = [r[0] for r in self._conn.execute("SELECT id FROM documents ORDER BY rowid")]
        return [self.get_document(i) for i in ids]

    def list_pages(self, document_id: str) -> list[ingest.Page]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT page_id, idx, width_px, height_px, dpi FROM pages"
                " WHERE document_id = ? ORDER BY idx",
                (document_id,),
            ).fetchall()
        if not rows:
            self.get_document(document_id)  # raises UnknownDocument when absent
        return [
            ingest.Page(
                id=r[0], document_id=document_id, index=r[1],
                width_px=r[2], height_px=r[3], dpi=r[4],
            )
            for r in rows
        ]

    def get_page(self, document_id: str, page_id: str) -> ingest.Page:
        with self._lock:
            row = self._conn.execute(
                "SELECT page_id, idx, width_px, height_px, dpi FROM pages"
                " WHERE document_id = ? AND page_id = ?",
                (document_id, page_id),
            ).fetchone()
        if row is None:
            raise UnknownPage(f"{document_id}/{page_id}")
        return ingest.Page(
            id=row[0], document_id=document_id, index=row[1],
            width_px=row[2], height_px=row[3], dpi=row[4],
        )

    def page_png(self, document_id: str, page_id: str) -> bytes:
        with self._lock:
            row = self._conn.execute(
                "SELECT png FROM pages WHERE document_id = ? AND page_id = ?",
                (document_id, page_id),
            ).fetchone()
        if row is None:
            raise UnknownPage(f"{document_id}/{page_id}")
        return row[0]

    def page_raster(self, document_id: str, page_id: str) -> np.ndarray:
        key = (document_id, page_id)
        with self._lock:
            cached = self._raster_cache.get(key)
            if cached is not None:
                self._raster_cache.move_to_end(key)
                return cached
        raster = ingest.to_grayscale(self.page_png(document_id, page_id))
        raster.setflags(write=False)
        with self._lock:
            self._raster_cache[key] = raster
            while len(self._raster_cache) > self._raster_cache_size:
                self._raster_cache.popitem(last=False)
        return raster

    # -- detections ------------------------------------------------------------

    def put_detections(self, document_id: str, detections: list[Detection], replace: bool = False):
        self.get_document(document_id)
        with self._lock, self._conn:
            if replace:
                self._conn.execute("DELETE FROM detections WHERE document_id = ?", (document_id,))
            start = self._conn.execute(
                "SELECT COALESCE(MAX(seq), -1) + 1 FROM detections WHERE document_id = ?",
                (document_id,),
            ).fetchone()[0]
            for offset, d in enumerate(detections):
                self._conn.execute(
                    "INSERT OR REPLACE INTO detections VALUES (?,?,?,?,?,?,?,?,?,?,?)",
                    (
                        d.id, document_id, d.page_id, d.label.value,
                        d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3],
                        d.confidence, d.origin.value, start + offset,
                    ),
                )

    def detections_for_page(self, document_id: str, page_id: str) -> list[Detection]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT id, page_id, label, x_min, y_min, x_max, y_max, confidence, origin"
                " FROM detections WHERE document_id = ? AND page_id = ? ORDER BY seq",
                (document_id, page_id),
            ).fetchall()
        return [
            Detection(
                id=r[0], page_id=r[1], label=ClassLabel(r[2]),
                bbox=(r[3], r[4], r[5], r[6]), confidence=r[7], origin=Origin(r[8]),
            )
            for r in rows
        ]

    # -- records ---------------------------------------------------------------

    def insert_record(self, record_id: str, document_id: str, page_id: str,
                      page_index: int, status: str, data: dict,
                      pos: tuple[float, float] = (0.0, 0.0)):
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO records VALUES (?,?,?,?,?,?,?,?,?,?)",
                (record_id, document_id, page_id, page_index, None, status, 1,
                 pos[0], pos[1], json.dumps(data)),
            )

    def get_record_row(self, record_id: str) -> dict:
        with self._lock:
            row = self._conn.execute(
                "SELECT record_id, document_id, page_id, page_index, publication_grave_id,"
                " status, version, data FROM records WHERE record_id = ?",
                (record_id,),
            ).fetchone()
        if row is None:
            raise UnknownRecord(record_id)
        return self._row_to_dict(row)

    @staticmethod
    def _row_to_dict(row) -> dict:
        return {
            "record_id": row[0],
            "document_id": row[1],
            "page_id": row[2],
            "page_index": row[3],
            "publication_grave_id": row[4],
            "status": row[5],
            "version": row[6],
            "data": json.loads(row[7]),
        }

    def list_record_rows(self, document_id: str) -> list[dict]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT record_id, document_id, page_id, page_index, publication_grave_id,"
                " status, version, data FROM records WHERE document_id = ?",
                (document_id,),
            ).fetchall()
        return [self._row_to_dict(r) for r in rows]

    def next_in_queue(self, document_id: str, excluded_statuses: tuple[str, ...]) -> dict | None:
        placeholders = ",".join("?" for _ in excluded_statuses)
        with self._lock:
            row = self._conn.execute(
                "SELECT record_id, document_id, page_id, page_index, publication_grave_id,"
                f" status, version, data FROM records WHERE document_id = ? AND status NOT IN ({placeholders})"
                " ORDER BY page_index, pos_y, pos_x, record_id LIMIT 1",
                (document_id, *excluded_statuses),
            ).fetchone()
        return None if row is None else self._row_to_dict(row)

    def update_record(self, record_id: str, expect_version: int, *,
                      status: str, publication_grave_id: str | None, data: dict,
                      log_step: str, log_change: str,
                      pos: tuple[float, float] | None = None) -> int:
        """Optimistic update; appends to the edit log in the same transaction."""
        with self._lock, self._conn:
            if pos is None:
                cur = self._conn.execute(
                    "UPDATE records SET status = ?, publication_grave_id = ?, data = ?,"
                    " version = version + 1 WHERE record_id = ? AND version = ?",
                    (status, publication_grave_id, json.dumps(data), record_id, expect_version),
                )
            else:
                cur = self._conn.execute(
                    "UPDATE records SET status = ?, publication_grave_id = ?, data = ?,"
                    " pos_y = ?, pos_x = ?, version = version + 1"
                    " WHERE record_id = ? AND version = ?",
                    (status, publication_grave_id, json.dumps(data), pos[0], pos[1],
                     record_id, expect_version),
                )
            if cur.rowcount == 0:
                exists = self._conn.execute(
                    "SELECT version FROM records WHERE record_id = ?", (record_id,)
                ).fetchone()
                if exists is None:
                    raise UnknownRecord(record_id)
                raise StaleVersion(
                    f"record {record_id}: expected version {expect_version}, stored {exists[0]}"
                )
            seq = self._conn.execute(
                "SELECT COALESCE(MAX(seq), -1) + 1 FROM edit_log WHERE record_id = ?",
                (record_id,),
            ).fetchone()[0]
            self._conn.execute(
                "INSERT INTO edit_log VALUES (?,?,?,?,?)",
                (record_id, seq, _utcnow(), log_step, log_change),
            )
        return expect_version + 1

    def edit_log(self, record_id: str) -> list[tuple[str, str, str]]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT ts, step, change FROM edit_log WHERE record_id = ? ORDER BY seq",
                (record_id,),
            ).fetchall()
        return [(r[0], r[1], r[2]) for r in rows]

    # -- jobs --------------------------------------------------------------------

    def create_job(self, document_id: str, kind: str) -> str:
        job_id = uuid.uuid4().hex
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO jobs VALUES (?,?,?,?,?,?)",
                (job_id, document_id, kind, "running", None, _utcnow()),
            )
        return job_id

    def running_job(self, document_id: str, kind: str) -> str | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT job_id FROM jobs WHERE document_id = ? AND kind = ? AND status = 'running'",
                (document_id, kind),
            ).fetchone()
        return row[0] if row else None

    def finish_job(self, job_id: str, status: str, detail: str | None = None):
        with self._lock, self._conn:
            self._conn.execute(
                "UPDATE jobs SET status = ?, detail = ? WHERE job_id = ?",
                (status, detail, job_id),
            )

    def get_job(self, job_id: str) -> dict:
        with self._lock:
            row = self._conn.execute(
                "SELECT job_id, document_id, kind, status, detail, created_at FROM jobs WHERE job_id = ?",
                (job_id,),
            ).fetchone()
        if row is None:
            raise StorageFailure(f"unknown job {job_id}")
        return {
            "job_id": row[0], "document_id": row[1], "kind": row[2],
            "status": row[3], "detail": row[4], "created_at": row[5],
        }
