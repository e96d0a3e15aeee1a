"""Facade over the store and the measurement pipeline.

Everything the HTTP API and the CLI expose goes through this class, so batch
scripts and the UI share one code path.
"""

from __future__ import annotations

import json
import threading

import numpy as np

from . import assemble, detect, ingest, morpho, orient, records
from .errors import QueueEmpty, StaleVersion, StorageFailure, TooFewSamples
from .records import GraveRecord, PipelineContext, ValidationStatus
from .store import Store


class Engine:
    def __init__(
        self,
        store: Store,
        ocr=None,
        arrow_classifier=None,
        confidence_threshold: float = detect.DEFAULT_CONFIDENCE_THRESHOLD,
    ):
        self.store = store
        self.ocr = ocr
        self.arrow_classifier = arrow_classifier
        self.confidence_threshold = confidence_threshold
        self._job_threads: dict[str, threading.Thread] = {}

    # -- ingest -----------------------------------------------------------------

    def import_document(self, pages, scale_config=None, title="", source_ref="", document_id=None):
        return ingest.import_document(
            self.store, pages, scale_config, title=title, source_ref=source_ref, document_id=document_id
        )

    def import_manifest(self, manifest: dict, base_dir=None) -> ingest.Document:
        """Register a document from a JSON manifest with page file references
        or embedded base64 PNG data."""
        import base64
        from pathlib import Path

        pages = []
        for p in manifest.get("pages", []):
            if "png_base64" in p:
                image = base64.b64decode(p["png_base64"])
            elif "png_path" in p:
                path = Path(p["png_path"])
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                image = path
            else:
                raise StorageFailure("page entry needs png_base64 or png_path")
            pages.append(ingest.PageSource(image=image, id=p.get("id"), dpi=p.get("dpi")))
        mode = ingest.ScaleMode(manifest.get("scale_mode", "per_drawing"))
        config = ingest.ScaleConfig(
            mode=mode,
            fixed_ratio=manifest.get("fixed_ratio"),
            page_height_cm=manifest.get("page_height_cm"),
        )
        return self.import_document(
            pages,
            config,
            title=manifest.get("title", ""),
            source_ref=manifest.get("source_ref", ""),
            document_id=manifest.get("id"),
        )

    def ingest_detections(self, document_id: str, jsonl: str) -> int:
        pages = {p.id: (p.width_px, p.height_px) for p in self.store.list_pages(document_id)}
        parsed = detect.parse_detections(jsonl, pages)
        self.store.put_detections(document_id, parsed)
        return len(parsed)

    # -- pipeline ----------------------------------------------------------------

    def _context(self, document: ingest.Document, page: ingest.Page) -> PipelineContext:
        return PipelineContext(
            document=document,
            page=page,
            raster=self.store.page_raster(document.id, page.id),
            page_detections=self.store.detections_for_page(document.id, page.id),
            ocr=self.ocr,
            arrow_classifier=self.arrow_classifier,
            confidence_threshold=self.confidence_threshold,
        )

    def assemble_document(self, document_id: str) -> int:
        """Assemble trees and create one record per grave detection."""
        if self.store.list_record_rows(document_id):
            raise StorageFailure(f"document {document_id} already has records")
        document = self.store.get_document(document_id)
        created = 0
        for page in self.store.list_pages(document_id):
            detections = detect.filter_by_confidence(
                self.store.detections_for_page(document_id, page.id), self.confidence_threshold
            )
            trees = assemble.assemble_graves(detections)
            if not trees:
                continue
            ctx = self._context(document, page)
            for tree in trees:
                record = records.create_record(tree, ctx)
                self.store.insert_record(
                    record.record_id,
                    document_id,
                    page.id,
                    page.index,
                    record.status.value,
                    records.record_to_json(record),
                )
                created += 1
        return created

    def assemble_job(self, document_id: str) -> str:
        """Single-flight background assembly; poll with job_status()."""
        running = self.store.running_job(document_id, "assemble")
        if running:
            return running
        job_id = self.store.create_job(document_id, "assemble")

        def work():
            try:
                created = self.assemble_document(document_id)
                self.store.finish_job(job_id, "done", json.dumps({"records": created}))
            except Exception as exc:  # surface the failure through the job row
                self.store.finish_job(job_id, "error", str(exc))

        thread = threading.Thread(target=work, daemon=True)
        self._job_threads[job_id] = thread
        thread.start()
        return job_id

    def job_status(self, job_id: str) -> dict:
        thread = self._job_threads.get(job_id)
        if thread is not None and not thread.is_alive():
            self._job_threads.pop(job_id, None)
        return self.store.get_job(job_id)

    def wait_for_job(self, job_id: str, timeout: float = 60.0) -> dict:
        thread = self._job_threads.get(job_id)
        if thread is not None:
            thread.join(timeout)
        return self.job_status(job_id)

    # -- records -----------------------------------------------------------------

    def load_record(self, record_id: str) -> GraveRecord:
        row = self.store.get_record_row(record_id)
        record = records.record_from_json(row["data"])
        record.version = row["version"]
        record.status = ValidationStatus(row["status"])
        record.publication_grave_id = row["publication_grave_id"]
        return record

    def list_records(self, document_id: str) -> list[GraveRecord]:
        out = []
        for row in self.store.list_record_rows(document_id):
            record = records.record_from_json(row["data"])
            record.version = row["version"]
            record.status = ValidationStatus(row["status"])
            record.publication_grave_id = row["publication_grave_id"]
            out.append(record)
        return out

    def queue_next(self, document_id: str) -> GraveRecord:
        """Lowest (page, y_min, x_min) record still needing validation."""
        self.store.get_document(document_id)
        pending = [
            r
            for r in self.list_records(document_id)
            if r.status not in (ValidationStatus.VALIDATED, ValidationStatus.DISCARDED)
        ]
        if not pending:
            raise QueueEmpty(document_id)
        pending.sort(key=lambda r: (r.page_index, r.tree.grave.bbox[1], r.tree.grave.bbox[0], r.record_id))
        return pending[0]

    def taken_grave_ids(self, document_id: str, exclude_record: str) -> set[str]:
        taken = set()
        for row in self.store.list_record_rows(document_id):
            if row["record_id"] == exclude_record:
                continue
            if row["status"] == ValidationStatus.DISCARDED.value:
                continue
            if row["publication_grave_id"]:
                taken.add(row["publication_grave_id"])
        return taken

    def apply_step(self, record_id: str, version: int, action: str, payload: dict | None) -> GraveRecord:
        """One wizard transition with optimistic concurrency."""
        record = self.load_record(record_id)
        if record.version != version:
            raise StaleVersion(f"record {record_id}: expected version {version}, stored {record.version}")
        document = self.store.get_document(record.document_id)
        page = self.store.get_page(record.document_id, record.page_id)
        ctx = self._context(document, page)
        taken = self.taken_grave_ids(record.document_id, record_id)
        before = record.status.value
        records.transition(record, action, payload, ctx, taken)
        record.version = self.store.update_record(
            record_id,
            version,
            status=record.status.value,
            publication_grave_id=record.publication_grave_id,
            data=records.record_to_json(record),
            log_step=f"{before}->{record.status.value}",
            log_change=json.dumps({"action": action, "payload": payload or {}}, sort_keys=True),
        )
        return record

    def recompute_record(self, record_id: str) -> GraveRecord:
        record = self.load_record(record_id)
        document = self.store.get_document(record.document_id)
        page = self.store.get_page(record.document_id, record.page_id)
        records.recompute(record, self._context(document, page))
        record.version = self.store.update_record(
            record_id,
            record.version,
            status=record.status.value,
            publication_grave_id=record.publication_grave_id,
            data=records.record_to_json(record),
            log_step="recompute",
            log_change="{}",
        )
        return record

    # -- export and stats ----------------------------------------------------------

    def export_document(self, document_id: str, fmt: str = "csv", include_all: bool = False) -> str:
        self.store.get_document(document_id)
        recs = self.list_records(document_id)
        if fmt == "csv":
            return records.export_csv(recs, include_all)
        if fmt == "json":
            return records.export_json(recs, include_all)
        raise ValueError(f"unknown export format {fmt!r}")

    def _validated(self, document_id: str) -> list[GraveRecord]:
        return [r for r in self.list_records(document_id) if r.status is ValidationStatus.VALIDATED]

    def stats_rose(self, document_id: str, sector_deg: int = 10) -> dict:
        self.store.get_document(document_id)
        bearings = []
        for record in self._validated(document_id):
            for entry in record.skeletons:
                if entry.bearing_deg is not None:
                    bearings.append(entry.bearing_deg)
        counts = orient.rose_histogram(bearings, sector_deg)
        return {"sector_deg": sector_deg, "counts": counts, "n": len(bearings)}

    def stats_outlines(self, document_id: str) -> dict:
        self.store.get_document(document_id)
        outlines = []
        for record in self._validated(document_id):
            if record.outline is None:
                continue
            outlines.append(
                {
                    "record_id": record.record_id,
                    "grave_id": record.publication_grave_id,
                    "points": [[float(x), float(y)] for x, y in record.outline],
                }
            )
        return {"outlines": outlines, "n": len(outlines)}

    def stats_pca(self, document_id: str, k: int = 2, harmonics: int = morpho.DEFAULT_HARMONICS) -> dict:
        self.store.get_document(document_id)
        ids = []
        features = []
        for record in self._validated(document_id):
            if record.outline is None:
                continue
            coeffs = morpho.efd(record.outline, harmonics)
            ids.append(record.record_id)
            features.append(coeffs.flatten())
        if len(features) < 2:
            raise TooFewSamples(f"{len(features)} outlines available, need at least 2")
        model, proj = morpho.pca_project(np.asarray(features), k)
        return {
            "explained_variance": [float(v) for v in model.explained_variance],
            "projections": [
                {"record_id": rid, "pc": [float(v) for v in row]} for rid, row in zip(ids, proj)
            ],
        }
