"""Documents and rasterized pages.

Pages arrive pre-rasterized as PNG (external tools own PDF rendering; 150 dpi
or better recommended). Rasters are stored immutably; reads always go through
the deterministic grayscale conversion.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyDocument, InvalidScaleConfig, UndecodableRaster


class ScaleMode(Enum):
    PER_DRAWING = "per_drawing"
    FIXED_RATIO = "fixed_ratio"


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    source_ref: str
    page_count: int
    scale_mode: ScaleMode
    fixed_ratio: float | None = None
    page_height_cm: float | None = None

    def __post_init__(self):
        if self.scale_mode is ScaleMode.FIXED_RATIO:
            if not (self.fixed_ratio and self.fixed_ratio > 0):
                raise InvalidScaleConfig("fixed-ratio documents need a positive ratio")
            if not (self.page_height_cm and self.page_height_cm > 0):
                raise InvalidScaleConfig("fixed-ratio documents need the page height in cm")
        if self.page_count <= 0:
            raise EmptyDocument(f"document {self.id} has no pages")


@dataclass(frozen=True)
class Page:
    id: str
    document_id: str
    index: int
    width_px: int
    height_px: int
    dpi: float | None = None
    image_ref: str | None = None


@dataclass(frozen=True)
class PageSource:
    """One page handed to import: PNG bytes, a file path or a raster array."""

    image: bytes | str | Path | np.ndarray
    id: str | None = None
    dpi: float | None = None


@dataclass(frozen=True)
class ScaleConfig:
    mode: ScaleMode = ScaleMode.PER_DRAWING
    fixed_ratio: float | None = None
    page_height_cm: float | None = None


def _ensure_png(source: PageSource, index: int) -> tuple[bytes, int, int]:
    """Normalize a page source to PNG bytes plus pixel dimensions."""
    image = source.image
    if isinstance(image, np.ndarray):
        if image.ndim not in (2, 3) or image.size == 0:
            raise UndecodableRaster(index, "expected a 2D or 3D uint8 array")
        pil = Image.fromarray(image.astype(np.uint8))
        buf = io.BytesIO()
        pil.save(buf, format="PNG")
        return buf.getvalue(), pil.width, pil.height
    if isinstance(image, (str, Path)):
        try:
            data = Path(image).read_bytes()
        except OSError as exc:
            raise UndecodableRaster(index, str(exc)) from None
    else:
        data = bytes(image)
    try:
        with Image.open(io.BytesIO(data)) as pil:
            pil.load()
            return data, pil.width, pil.height
    except Exception as exc:
        raise UndecodableRaster(index, str(exc)) from None


def to_grayscale(png_bytes: bytes) -> np.ndarray:
    """Decode PNG to an 8-bit luminance raster (BT.601 weights)."""
    with Image.open(io.BytesIO(png_bytes)) as pil:
        if pil.mode == "L":
            return np.asarray(pil, dtype=np.uint8).copy()
        rgb = np.asarray(pil.convert("RGB"), dtype=np.float64)
    y = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return np.clip(np.round(y), 0, 255).astype(np.uint8)


def import_document(
    store,
    pages: list[PageSource],
    scale_config: ScaleConfig | None = None,
    title: str = "",
    source_ref: str = "",
    document_id: str | None = None,
) -> Document:
    """Register already-rasterized pages as a new document (atomic)."""
    if not pages:
        raise EmptyDocument("a document needs at least one page")
    config = scale_config or ScaleConfig()
    if config.mode is ScaleMode.FIXED_RATIO:
        if not (config.fixed_ratio and config.fixed_ratio > 0):
            raise InvalidScaleConfig("fixed-ratio import needs a positive ratio")
        if not (config.page_height_cm and config.page_height_cm > 0):
            raise InvalidScaleConfig("fixed-ratio import needs the page height in cm")

    prepared = []
    for index, source in enumerate(pages):
        png, width, height = _ensure_png(source, index)
        prepared.append((source.id or f"p{index:03d}", png, width, height, source.dpi))

    return store.create_document(
        title=title,
        source_ref=source_ref,
        scale_mode=config.mode,
        fixed_ratio=config.fixed_ratio,
        page_height_cm=config.page_height_cm,
        pages=prepared,
        document_id=document_id,
    )


def get_page_raster(store, document_id: str, page_id: str) -> np.ndarray:
    """Grayscale raster of a stored page; deterministic for a stored image."""
    return store.page_raster(document_id, page_id)
