"""HTTP API over the engine: document ingest, validation queue, wizard steps,
exports and stats. Responses reference rasters by URL, never inline."""

from __future__ import annotations

import io

from fastapi import Body, FastAPI, Query, Response
from fastapi.responses import JSONResponse, PlainTextResponse

from . import records
from .engine import Engine
from .errors import (
    DuplicateGraveId,
    GraverecError,
    IllegalTransition,
    InvalidSector,
    QueueEmpty,
    StaleVersion,
    StorageFailure,
    TooFewSamples,
    UnknownDocument,
    UnknownPage,
    UnknownRecord,
    ValidationPayloadError,
)

_STATUS_CODES = [
    ((UnknownDocument, UnknownPage, UnknownRecord), 404),
    ((StaleVersion,), 409),
    ((StorageFailure, QueueEmpty, TooFewSamples), 409),
    ((DuplicateGraveId, IllegalTransition, ValidationPayloadError, InvalidSector), 422),
]


def _error_response(exc: GraverecError) -> JSONResponse:
    for types, code in _STATUS_CODES:
        if isinstance(exc, types):
            return JSONResponse(
                status_code=code,
                content={"error": type(exc).__name__, "detail": str(exc)},
            )
    return JSONResponse(status_code=400, content={"error": type(exc).__name__, "detail": str(exc)})


def _record_summary(engine: Engine, record: records.GraveRecord) -> dict:
    data = records.record_to_json(record)
    data["page_image_url"] = f"/documents/{record.document_id}/pages/{record.page_id}/image"
    crops = {}
    for role in ("scale", "north_arrow", "cross_section"):
        if getattr(record.tree, role) is not None:
            crops[role] = f"/records/{record.record_id}/crop/{role}"
    data["crop_urls"] = crops
    return data


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="graverec", version="0.1.0")

    @app.exception_handler(GraverecError)
    async def handle_graverec_error(request, exc: GraverecError):
        return _error_response(exc)

    @app.post("/documents")
    def create_document(manifest: dict = Body(...)):
        document = engine.import_manifest(manifest)
        return {"id": document.id, "page_count": document.page_count}

    @app.get("/documents/{document_id}")
    def get_document(document_id: str):
        document = engine.store.get_document(document_id)
        pages = engine.store.list_pages(document_id)
        return {
            "id": document.id,
            "title": document.title,
            "source_ref": document.source_ref,
            "page_count": document.page_count,
            "scale_mode": document.scale_mode.value,
            "fixed_ratio": document.fixed_ratio,
            "page_height_cm": document.page_height_cm,
            "pages": [
                {
                    "id": p.id,
                    "index": p.index,
                    "width_px": p.width_px,
                    "height_px": p.height_px,
                    "dpi": p.dpi,
                    "image_url": f"/documents/{document.id}/pages/{p.id}/image",
                }
                for p in pages
            ],
        }

    @app.get("/documents/{document_id}/pages/{page_id}/image")
    def page_image(document_id: str, page_id: str):
        return Response(content=engine.store.page_png(document_id, page_id), media_type="image/png")

    @app.post("/documents/{document_id}/detections")
    async def post_detections(document_id: str, request_body: str = Body(..., media_type="text/plain")):
        count = engine.ingest_detections(document_id, request_body)
        return {"ingested": count}

    @app.post("/documents/{document_id}/assemble")
    def assemble(document_id: str):
        engine.store.get_document(document_id)
        job_id = engine.assemble_job(document_id)
        return {"job_id": job_id}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        return engine.job_status(job_id)

    @app.get("/documents/{document_id}/queue/next")
    def queue_next(document_id: str):
        record = engine.queue_next(document_id)
        return _record_summary(engine, record)

    @app.get("/records/{record_id}")
    def get_record(record_id: str):
        return _record_summary(engine, engine.load_record(record_id))

    @app.get("/records/{record_id}/crop/{role}")
    def record_crop(record_id: str, role: str):
        record = engine.load_record(record_id)
        det = getattr(record.tree, role, None)
        if det is None:
            return JSONResponse(status_code=404, content={"error": "NoSuchCrop", "detail": role})
        import numpy as np
        from PIL import Image

        raster = engine.store.page_raster(record.document_id, record.page_id)
        x0, y0, x1, y1 = (int(v) for v in det.bbox)
        crop = raster[max(0, y0):y1, max(0, x0):x1]
        buf = io.BytesIO()
        Image.fromarray(np.asarray(crop)).save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/records/{record_id}/step")
    def apply_step(record_id: str, body: dict = Body(...)):
        if "version" not in body or "action" not in body:
            raise ValidationPayloadError("body needs version and action")
        record = engine.apply_step(
            record_id, int(body["version"]), str(body["action"]), body.get("payload") or {}
        )
        return _record_summary(engine, record)

    @app.get("/documents/{document_id}/export")
    def export(document_id: str, format: str = Query("csv"), include_all: bool = Query(False)):
        text = engine.export_document(document_id, format, include_all)
        media = "text/csv" if format == "csv" else "application/json"
        return PlainTextResponse(content=text, media_type=media)

    @app.get("/documents/{document_id}/stats/rose")
    def stats_rose(document_id: str, sector: int = Query(10)):
        return engine.stats_rose(document_id, sector)

    @app.get("/documents/{document_id}/stats/outlines")
    def stats_outlines(document_id: str):
        return engine.stats_outlines(document_id)

    @app.get("/documents/{document_id}/stats/pca")
    def stats_pca(document_id: str):
        return engine.stats_pca(document_id)

    return app
